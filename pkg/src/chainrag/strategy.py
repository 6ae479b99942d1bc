"""Label reasoning traces as context-grounded, knowledge-reconciled or ambiguous.

Two annotators: an LLM judge (forced three-way choice) and a deterministic
cue/overlap heuristic. The heuristic checks irrelevance cues first, because
a trace that reconciles knowledge usually opens by noting the contexts do
not cover the question; only then does it look for verbatim context spans.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from typing import Sequence

from .gateway import Gateway
from .retrieval import tokenize
from .templates import render

LABELS = ("context_grounded", "knowledge_reconciled", "ambiguous")
IRRELEVANCE_CUES = ("doesn't mention", "not mentioned", "no information", "based on my knowledge", "i know that")
SPAN_TOKENS = 5


class MissingTraceError(ValueError):
    pass


@dataclass(frozen=True)
class StrategyLabel:
    label: str
    evidence_cues: tuple[str, ...] = ()
    annotator: str = "heuristic"

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}")

    def to_dict(self) -> dict:
        return {"label": self.label, "evidence_cues": list(self.evidence_cues), "annotator": self.annotator}


def _fold(text: str) -> str:
    return text.lower().replace("’", "'").replace("‘", "'")


def annotate_trace_heuristic(contexts: Sequence[str], trace: str) -> StrategyLabel:
    folded = _fold(trace)
    cues = tuple(c for c in IRRELEVANCE_CUES if c in folded)
    if cues:
        return StrategyLabel("knowledge_reconciled", cues)
    trace_tokens = tokenize(trace)
    trace_spans = {tuple(trace_tokens[i:i + SPAN_TOKENS]) for i in range(len(trace_tokens) - SPAN_TOKENS + 1)}
    if trace_spans:
        for ctx in contexts:
            toks = tokenize(ctx)
            for i in range(len(toks) - SPAN_TOKENS + 1):
                span = tuple(toks[i:i + SPAN_TOKENS])
                if span in trace_spans:
                    return StrategyLabel("context_grounded", (" ".join(span),))
    return StrategyLabel("ambiguous", ())


_LABEL_TOKEN = re.compile(r"\b(context[_\- ]grounded|knowledge[_\- ]reconciled|ambiguous)\b", re.IGNORECASE)


def parse_label(text: str) -> str:
    """The single label named in a judge reply; anything else is ambiguous."""
    found = {re.sub(r"[\- ]", "_", m.lower()) for m in _LABEL_TOKEN.findall(text)}
    return found.pop() if len(found) == 1 else "ambiguous"


def annotate_trace_llm(question: str, contexts: Sequence[str], trace: str, gateway: Gateway) -> StrategyLabel:
    if not trace.strip():
        raise MissingTraceError("cannot annotate an empty trace")
    blocks = "\n".join(f"[{i}] {c}" for i, c in enumerate(contexts)) or "(none)"
    user = render("annotate", "user", question=question, contexts=blocks, trace=trace)
    resp = gateway.chat(render("annotate", "system"), user)
    return StrategyLabel(parse_label(resp.text), annotator="llm")


@dataclass
class StrategyReport:
    counts: dict[str, int]
    fractions: dict[str, float]
    run_fingerprint: str
    skipped: int = 0
    labels: dict[str, dict] = field(default_factory=dict)
    agreement: float | None = None

    def to_dict(self) -> dict:
        return {
            "counts": self.counts,
            "fractions": self.fractions,
            "run_fingerprint": self.run_fingerprint,
            "skipped": self.skipped,
            "agreement": self.agreement,
            "labels": self.labels,
        }


def _run_fingerprint(records) -> str:
    h = hashlib.sha256()
    for r in records:
        h.update(json.dumps([r.question_id, r.mode, r.trace], ensure_ascii=False).encode() + b"\n")
    return h.hexdigest()[:16]


def strategy_report(records, annotator: str = "heuristic", gateway: Gateway | None = None) -> StrategyReport:
    """Label every record that carries a trace and tally the distribution.

    ``annotator`` is ``heuristic``, ``llm`` or ``both``; with ``both`` the
    LLM label is counted and heuristic agreement is reported.
    """
    if annotator not in ("heuristic", "llm", "both"):
        raise ValueError("annotator must be heuristic, llm or both")
    if annotator != "heuristic" and gateway is None:
        raise ValueError("the llm annotator needs a gateway")
    records = list(records)
    if not records:
        raise ValueError("empty run")
    traced = [r for r in records if r.trace and r.trace.strip()]
    if not traced:
        raise MissingTraceError("think-mode traces required: rerun eval with --think-mode think")
    counts = {label: 0 for label in LABELS}
    labels: dict[str, dict] = {}
    agree = 0
    for r in traced:
        ctx = r.contexts()
        entry = {}
        if annotator in ("heuristic", "both"):
            entry["heuristic"] = annotate_trace_heuristic(ctx, r.trace).to_dict()
        if annotator in ("llm", "both"):
            entry["llm"] = annotate_trace_llm(r.question, ctx, r.trace, gateway).to_dict()
        chosen = entry["llm" if annotator != "heuristic" else "heuristic"]["label"]
        if annotator == "both":
            agree += entry["heuristic"]["label"] == entry["llm"]["label"]
        counts[chosen] += 1
        labels[r.question_id] = entry
    total = len(traced)
    return StrategyReport(
        counts=counts,
        fractions={k: v / total for k, v in counts.items()},
        run_fingerprint=_run_fingerprint(records),
        skipped=len(records) - total,
        labels=labels,
        agreement=agree / total if annotator == "both" else None,
    )
