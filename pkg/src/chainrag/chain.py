"""Turn reranked evidence into a step-by-step reasoning chain and ask the generator."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .gateway import ChatResponse, Gateway, apply_think_mode
from .rerank import RerankedEvidence
from .templates import render

CHAIN_HEADER = "Reasoning Steps:"
EMPTY_CHAIN = f"{CHAIN_HEADER} (no relevant evidence retrieved)"
THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"


@dataclass(frozen=True)
class ReasoningStep:
    step_index: int
    text: str
    relevance: float


@dataclass(frozen=True)
class ReasoningChain:
    steps: tuple[ReasoningStep, ...]
    rendered: str

    def __post_init__(self):
        if [s.step_index for s in self.steps] != list(range(1, len(self.steps) + 1)):
            raise ValueError("step indices must run 1..m")
        if render_chain(self.steps) != self.rendered:
            raise ValueError("rendered text does not match the steps")


def render_chain(steps: Sequence[ReasoningStep]) -> str:
    if not steps:
        return EMPTY_CHAIN
    return "\n".join([CHAIN_HEADER] + [f"Step {s.step_index}: {s.text}" for s in steps])


def construct_chain(evidence: RerankedEvidence, step_texts: Sequence[str] | None = None) -> ReasoningChain:
    """Template the evidence as ``Step j: <text>`` lines under a ``Reasoning Steps:`` header.

    ``step_texts`` replaces the chunk texts (used by step summarization);
    relevance scores are kept on the steps but not rendered.
    """
    texts = [c.text for c in evidence.chunks] if step_texts is None else list(step_texts)
    if len(texts) != len(evidence):
        raise ValueError("one step text per evidence entry required")
    steps = tuple(
        ReasoningStep(j, text, score)
        for j, (text, (_, score)) in enumerate(zip(texts, evidence.entries), start=1)
    )
    return ReasoningChain(steps, render_chain(steps))


def summarize_steps(query: str, evidence: RerankedEvidence, gateway: Gateway) -> tuple[list[str], list[ChatResponse]]:
    """Compress each evidence chunk to one sentence with the reranker model (experimental)."""
    texts, responses = [], []
    for chunk in evidence.chunks:
        resp = gateway.chat("", render("generate", "summarize", question=query, body=chunk.text))
        responses.append(resp)
        texts.append(" ".join(resp.text.split()) or chunk.text)
    return texts, responses


@dataclass(frozen=True)
class GenerationPrompt:
    system: str
    user: str
    think_mode: str


def _prompt(section: str, query: str, think_mode: str, body: str = "") -> GenerationPrompt:
    user = render("generate", section, question=query, body=body)
    return GenerationPrompt(render("generate", "system"), apply_think_mode(user, think_mode), think_mode)


def build_generation_prompt(query: str, chain: ReasoningChain, think_mode: str = "no_think") -> GenerationPrompt:
    return _prompt("chain", query, think_mode, chain.rendered)


def build_context_prompt(query: str, texts: Sequence[str], think_mode: str = "no_think") -> GenerationPrompt:
    """Question plus plain concatenated contexts (vanilla RAG, or no chain template)."""
    if not texts:
        return build_direct_prompt(query, think_mode)
    return _prompt("contexts", query, think_mode, "\n\n".join(texts))


def build_direct_prompt(query: str, think_mode: str = "no_think") -> GenerationPrompt:
    return _prompt("direct", query, think_mode)


def split_think(raw: str, open_tag: str = THINK_OPEN, close_tag: str = THINK_CLOSE) -> tuple[str, str]:
    """Split a completion into (trace, answer).

    Handles a leading ``<think>...</think>`` block, an unterminated one (all
    trace, empty answer) and a bare closing tag with no opener.
    """
    body = raw.lstrip()
    if body.startswith(open_tag):
        rest = body[len(open_tag):]
        trace, sep, answer = rest.partition(close_tag)
        if not sep:
            return rest.strip(), ""
        return trace.strip(), answer.strip()
    if close_tag in raw:
        trace, _, answer = raw.partition(close_tag)
        return trace.strip(), answer.strip()
    return "", raw.strip()


@dataclass(frozen=True)
class Answer:
    text: str
    trace: str
    response: ChatResponse

    @property
    def usage(self):
        return self.response.usage


def ask(prompt: GenerationPrompt, gateway: Gateway, open_tag: str = THINK_OPEN, close_tag: str = THINK_CLOSE) -> Answer:
    resp = gateway.chat(prompt.system, prompt.user, prompt.think_mode)
    trace, text = split_think(resp.text, open_tag, close_tag)
    return Answer(text, trace, resp)


def answer(query: str, chain: ReasoningChain, gateway: Gateway, think_mode: str = "no_think") -> Answer:
    return ask(build_generation_prompt(query, chain, think_mode), gateway)
