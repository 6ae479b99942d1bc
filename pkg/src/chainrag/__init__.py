"""Retrieve, rerank into reasoning order, template a reasoning chain, generate."""

from .chain import ReasoningChain, answer, build_generation_prompt, construct_chain
from .corpus import ContextChunk, Corpus, Document, QaInstance, chunk_document, ingest_dataset
from .gateway import ChatRequest, ChatResponse, MockGateway, OpenAIGateway, PseudoEmbedder, estimate_tokens
from .metrics import exact_match, f1_score, normalize_answer
from .rerank import RerankedEvidence, parse_rerank_response, rerank
from .retrieval import Retriever, ScoredContextList, build_sparse_index, score_bm25

__version__ = "0.1.0"
