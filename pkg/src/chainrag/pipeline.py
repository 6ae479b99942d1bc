"""One question through one mode: direct, vanilla RAG or the full rerank-and-chain pipeline."""

from __future__ import annotations

import json
import logging
import random
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

from . import chain as chain_mod
from .config import Gateways, PipelineConfig
from .corpus import Corpus, QaInstance, load_corpus, read_manifest
from .gateway import ChatResponse, ConfigError, GatewayError
from .metrics import exact_match, f1_score
from .rerank import RerankedEvidence, _minmax, rerank
from .retrieval import EmbeddingStore, Retriever, ScoredContextList, SparseIndexStats

logger = logging.getLogger(__name__)

MODES = ("direct", "vanilla_rag", "lir3ag")
MODULES = ("retriever", "reranker", "constructor")

SPARSE_INDEX_FILE = "sparse_index.json"
EMBEDDINGS_FILE = "embeddings.jsonl"


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


@contextmanager
def _stage(name: str):
    """Re-raise recoverable failures as PipelineError tagged with the stage name."""
    try:
        yield
    except (ConfigError, PipelineError):
        raise
    except (GatewayError, ValueError, RuntimeError) as e:
        raise PipelineError(name, str(e)) from e


@dataclass
class RunRecord:
    question_id: str
    mode: str
    question: str
    gold_answers: list[str]
    answer: str = ""
    trace: str = ""
    retrieved: list[dict] | None = None
    evidence: list[dict] | None = None
    rerank_status: str | None = None
    chain: str | None = None
    generator_prompt: str = ""
    calls: list[dict] = field(default_factory=list)
    usage_total: dict = field(default_factory=lambda: {"input_tokens": 0, "output_tokens": 0})
    latency_ms_total: float = 0.0
    flags: list[str] = field(default_factory=list)
    em: float = 0.0
    f1: float = 0.0
    gold_recall: float | None = None
    error: str | None = None
    strategy: dict | None = None

    def add_call(self, stage: str, resp: ChatResponse) -> None:
        self.calls.append({
            "stage": stage,
            "input_tokens": resp.usage.input_tokens,
            "output_tokens": resp.usage.output_tokens,
            "latency_ms": resp.latency_ms,
            "provider_reported": resp.provider_reported,
        })
        self.usage_total = {
            "input_tokens": sum(c["input_tokens"] for c in self.calls),
            "output_tokens": sum(c["output_tokens"] for c in self.calls),
        }
        self.latency_ms_total = sum(c["latency_ms"] for c in self.calls)

    def stage_tokens(self, *stages: str, kind: str = "input_tokens") -> int:
        return sum(c[kind] for c in self.calls if c["stage"] in stages)

    def contexts(self) -> list[str]:
        """Texts the generator actually saw."""
        if self.retrieved is None:
            return []
        by_id = {r["chunk_id"]: r["text"] for r in self.retrieved}
        if self.evidence is not None:
            return [by_id[e["chunk_id"]] for e in self.evidence]
        return [r["text"] for r in self.retrieved]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunRecord":
        return cls(**data)


@dataclass
class Dataset:
    name: str
    corpus: Corpus
    questions: list[QaInstance]
    retriever: Retriever
    content_hash: str = ""


def open_dataset(config: PipelineConfig, embedder=None) -> Dataset:
    """Load an indexed corpus directory (written by ``index``)."""
    root = config.resolved_corpus_dir()
    manifest = read_manifest(root)
    corpus, questions = load_corpus(root)
    if not corpus.chunks:
        raise ValueError(f"corpus at {root} is empty")
    sparse_path = root / SPARSE_INDEX_FILE
    sparse = None
    if sparse_path.exists():
        sparse = SparseIndexStats.from_json(json.loads(sparse_path.read_text()))
    emb_path = root / EMBEDDINGS_FILE
    embeddings = EmbeddingStore.load(emb_path) if emb_path.exists() else None
    if config.retrieval.method != "sparse" and embeddings is None:
        raise FileNotFoundError(f"no embedding store at {emb_path}; rerun `index` with --method {config.retrieval.method}")
    retriever = Retriever(corpus.chunks, sparse=sparse, embedder=embedder, embeddings=embeddings,
                          k1=config.retrieval.k1, b=config.retrieval.b)
    return Dataset(manifest.get("source", ""), corpus, questions, retriever, manifest["content_hash"])


def _scored_dicts(contexts: ScoredContextList) -> list[dict]:
    return [{"chunk_id": c.chunk_id, "doc_id": c.doc_id, "score": s, "text": c.text} for c, s in contexts.entries]


def _gold_recall(q: QaInstance, contexts: ScoredContextList) -> float | None:
    if not q.gold_support_ids:
        return None
    got = {c.doc_id for c in contexts.chunks} | set(contexts.chunk_ids)
    return sum(g in got for g in q.gold_support_ids) / len(q.gold_support_ids)


def passthrough_evidence(contexts: ScoredContextList) -> RerankedEvidence:
    scores = _minmax([s for _, s in contexts.entries]) if len(contexts) else []
    return RerankedEvidence(tuple(zip(contexts.chunks, scores)), len(contexts), parse_status="skipped")


class Pipeline:
    def __init__(self, dataset: Dataset, gateways: Gateways, config: PipelineConfig):
        self.dataset = dataset
        self.gateways = gateways
        self.config = config

    def _retriever_for(self, q: QaInstance) -> Retriever:
        if self.config.retrieval.scope == "local" and q.pool:
            return self.dataset.retriever.subset(q.pool)
        return self.dataset.retriever

    def retrieve(self, q: QaInstance, k: int | None = None) -> ScoredContextList:
        r = self.config.retrieval
        return self._retriever_for(q).retrieve(
            q.question, k or r.k, r.method, {"c": r.rrf_c} if r.method == "hybrid" else None
        )

    def random_contexts(self, q: QaInstance, k: int | None = None) -> ScoredContextList:
        """Stand-in for retrieval when the retriever is ablated: a seeded sample of the pool."""
        k = k or self.config.retrieval.k
        chunks = sorted(self._retriever_for(q).chunks.values(), key=lambda c: c.chunk_id)
        rng = random.Random(f"{self.config.seed}:{q.question_id}")
        sample = rng.sample(chunks, min(k, len(chunks)))
        return ScoredContextList(tuple((c, 0.0) for c in sample), k, "random")

    def run(self, q: QaInstance, mode: str = "lir3ag", disable: frozenset[str] = frozenset(),
            k: int | None = None) -> RunRecord:
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
        unknown = set(disable) - set(MODULES)
        if unknown:
            raise ValueError(f"cannot disable {sorted(unknown)}; modules are {MODULES}")
        rec = RunRecord(q.question_id, mode, q.question, list(q.gold_answers))
        try:
            prompt = self._build_prompt(q, mode, set(disable), k, rec)
            rec.generator_prompt = prompt.user
            with _stage("generate"):
                ans = chain_mod.ask(prompt, self.gateways.generator)
            rec.add_call("generate", ans.response)
            rec.answer, rec.trace = ans.text, ans.trace
        except PipelineError as e:
            rec.error = str(e)
            rec.flags.append("failed")
            logger.warning("question %s failed at %s", q.question_id, e)
            return rec
        rec.em = float(exact_match(rec.answer, q.gold_answers))
        rec.f1 = f1_score(rec.answer, q.gold_answers)
        return rec

    def _build_prompt(self, q, mode, disable, k, rec: RunRecord) -> chain_mod.GenerationPrompt:
        think = self.config.think_mode
        if mode == "direct" or (mode == "lir3ag" and disable == set(MODULES)):
            return chain_mod.build_direct_prompt(q.question, think)

        if mode == "lir3ag" and "retriever" in disable:
            contexts = self.random_contexts(q, k)
            rec.flags.append("retriever_ablated")
        else:
            with _stage("retrieve"):
                contexts = self.retrieve(q, k)
        rec.retrieved = _scored_dicts(contexts)
        rec.gold_recall = _gold_recall(q, contexts)

        if mode == "vanilla_rag":
            return chain_mod.build_context_prompt(q.question, [c.text for c in contexts.chunks], think)

        if "reranker" in disable:
            evidence = passthrough_evidence(contexts)
        else:
            with _stage("rerank"):
                evidence = rerank(q.question, contexts, self.gateways.reranker, self.config.rerank_reprompts)
            for resp in evidence.responses:
                rec.add_call("rerank", resp)
            if evidence.fallback:
                rec.flags.append("rerank_fallback")
        rec.rerank_status = evidence.parse_status
        rec.evidence = [{"chunk_id": c.chunk_id, "relevance": s} for c, s in evidence.entries]
        if not len(evidence):
            rec.flags.append("no_evidence")

        if "constructor" in disable:
            return chain_mod.build_context_prompt(q.question, [c.text for c in evidence.chunks], think)

        step_texts = None
        if self.config.summarize_steps and len(evidence):
            with _stage("construct"):
                step_texts, responses = chain_mod.summarize_steps(q.question, evidence, self.gateways.reranker)
            for resp in responses:
                rec.add_call("summarize", resp)
        chain = chain_mod.construct_chain(evidence, step_texts)
        rec.chain = chain.rendered
        return chain_mod.build_generation_prompt(q.question, chain, think)

    def query(self, question: str, mode: str = "lir3ag", question_id: str = "adhoc") -> RunRecord:
        """Run a free-text question (no gold answer, global scope)."""
        q = QaInstance(question_id, question, ("",))
        rec = self.run(q, mode)
        rec.em = rec.f1 = 0.0
        rec.gold_answers = []
        return rec
