"""Listwise LLM reranking: keep the relevant contexts and put them in reasoning order.

One call covers the whole retrieved list. The model answers with a JSON
array of ``{"index", "relevance"}`` objects; the array order is the
reasoning order and is kept as is (never re-sorted by relevance).
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field

from .corpus import ContextChunk
from .gateway import ChatResponse, Gateway
from .retrieval import ScoredContextList
from .templates import render

logger = logging.getLogger(__name__)

MAX_CONTEXT_CHARS = 1500
TRUNCATION_MARK = "…"
PARSE_STATUSES = ("clean", "repaired", "failed")

# bounds the work spent on adversarial replies full of '['
_MAX_LIST_CANDIDATES = 64
# a directive is a flat list, so skip any '[' whose first element is another list
_LIST_START = re.compile(r"\[(?!\s*\[)")


@dataclass(frozen=True)
class RerankDirective:
    items: tuple[tuple[int, float], ...]
    parse_status: str

    def __post_init__(self):
        idx = [i for i, _ in self.items]
        if len(set(idx)) != len(idx):
            raise ValueError("directive indices must be distinct")


@dataclass(frozen=True)
class RerankedEvidence:
    entries: tuple[tuple[ContextChunk, float], ...]
    source_n: int
    rationale: str | None = None
    parse_status: str = "clean"
    responses: tuple[ChatResponse, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if len(self.entries) > self.source_n:
            raise ValueError("reranked evidence longer than its input")
        ids = [c.chunk_id for c, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate chunk ids in reranked evidence")
        if any(not 0.0 <= s <= 1.0 for _, s in self.entries):
            raise ValueError("reranked scores must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def chunks(self) -> list[ContextChunk]:
        return [c for c, _ in self.entries]

    @property
    def fallback(self) -> bool:
        return self.parse_status == "failed"


def _context_block(i: int, chunk: ContextChunk) -> str:
    text = chunk.text
    if len(text) > MAX_CONTEXT_CHARS:
        text = text[:MAX_CONTEXT_CHARS] + TRUNCATION_MARK
    head = f"[{i}] {chunk.title}: " if chunk.title else f"[{i}] "
    return head + text


def build_rerank_prompt(query: str, contexts: ScoredContextList) -> str:
    if not len(contexts):
        raise ValueError("nothing to rerank")
    blocks = "\n".join(_context_block(i, c) for i, c in enumerate(contexts.chunks))
    return render("rerank", "user", question=query, contexts=blocks)


def _find_list(text: str):
    """Return (list, start, end) for the first JSON array that looks like a directive."""
    decoder = json.JSONDecoder()
    for tried, m in enumerate(_LIST_START.finditer(text)):
        if tried >= _MAX_LIST_CANDIDATES:
            break
        pos = m.start()
        try:
            value, end = decoder.raw_decode(text, pos)
        except (ValueError, RecursionError):
            continue
        if isinstance(value, list) and _looks_like_directive(value):
            return value, pos, end
    return None


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _looks_like_directive(items: list) -> bool:
    if not items:
        return True
    return any((isinstance(x, dict) and "index" in x) or _is_int(x) for x in items)


def parse_rerank_response(text: str, n_inputs: int) -> RerankDirective:
    """Extract a directive from a model reply. Never raises.

    Bad, out-of-range or duplicate entries are dropped and relevance is
    clamped to [0, 1]; either makes the status ``repaired``. A bare integer
    list is accepted with relevance 1.0 (also ``repaired``). No usable array
    at all gives ``failed`` and an empty directive.
    """
    found = _find_list(text) if isinstance(text, str) else None
    if found is None:
        return RerankDirective((), "failed")
    items, _, _ = found
    status = "clean"
    out: list[tuple[int, float]] = []
    seen = set()
    for item in items:
        if _is_int(item):
            index, relevance = item, 1.0
            status = "repaired"
        elif isinstance(item, dict) and _is_int(item.get("index")):
            index = item["index"]
            relevance = item.get("relevance", 1.0)
            if "relevance" not in item:
                status = "repaired"
        else:
            status = "repaired"
            continue
        if not 0 <= index < n_inputs or index in seen:
            status = "repaired"
            continue
        try:
            relevance = float(relevance) if _is_int(relevance) or isinstance(relevance, float) else math.nan
        except OverflowError:
            relevance = math.inf if relevance > 0 else -math.inf
        if math.isnan(relevance):
            relevance, status = 0.0, "repaired"
        elif not 0.0 <= relevance <= 1.0:
            relevance, status = min(1.0, max(0.0, relevance)), "repaired"
        seen.add(index)
        out.append((index, relevance))
    return RerankDirective(tuple(out), status)


def _minmax(scores: list[float]) -> list[float]:
    lo, hi = min(scores), max(scores)
    if not hi > lo:
        return [1.0] * len(scores)
    return [min(1.0, max(0.0, (s - lo) / (hi - lo))) for s in scores]


def fallback_evidence(contexts: ScoredContextList, **kwargs) -> RerankedEvidence:
    """Retriever order, scores min-max normalized into [0, 1]."""
    scores = _minmax([s for _, s in contexts.entries]) if len(contexts) else []
    return RerankedEvidence(
        entries=tuple((c, s) for c, s in zip(contexts.chunks, scores)),
        source_n=len(contexts),
        parse_status="failed",
        **kwargs,
    )


def apply_directive(contexts: ScoredContextList, directive: RerankDirective, **kwargs) -> RerankedEvidence:
    chunks = contexts.chunks
    return RerankedEvidence(
        entries=tuple((chunks[i], rel) for i, rel in directive.items),
        source_n=len(chunks),
        parse_status=directive.parse_status,
        **kwargs,
    )


def rerank(query: str, contexts: ScoredContextList, gateway: Gateway, reprompts: int = 1) -> RerankedEvidence:
    """Filter and order ``contexts`` with one listwise model call.

    An unreadable reply is re-asked ``reprompts`` times before falling back to
    the retriever order. Transport errors propagate to the caller.
    """
    if not len(contexts):
        return RerankedEvidence((), 0, parse_status="clean")
    system = render("rerank", "system")
    user = build_rerank_prompt(query, contexts)
    responses = []
    for attempt in range(reprompts + 1):
        prompt = user if attempt == 0 else user + "\n\n" + render("rerank", "retry")
        resp = gateway.chat(system, prompt)
        responses.append(resp)
        directive = parse_rerank_response(resp.text, len(contexts))
        if directive.parse_status != "failed":
            found = _find_list(resp.text)
            rationale = (resp.text[:found[1]] + resp.text[found[2]:]).strip() if found else ""
            return apply_directive(contexts, directive, rationale=rationale or None, responses=tuple(responses))
        logger.debug("unparseable rerank reply (attempt %d): %.80r", attempt + 1, resp.text)
    return fallback_evidence(contexts, responses=tuple(responses))
