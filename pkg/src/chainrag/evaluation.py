"""Batch evaluation: modes, ablations, top-k sweeps and cost tables.

Reports are written as ``records.jsonl`` plus ``report.json`` and a text
summary. Everything in those files is a deterministic function of the
config, corpus and gateway behaviour; measured wall-clock time goes to a
separate ``wallclock.json`` so reruns can be compared byte for byte.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .config import Gateways, PipelineConfig, config_to_dict
from .pipeline import MODES, MODULES, Dataset, Pipeline, RunRecord

logger = logging.getLogger(__name__)


def _mean(values: Sequence[float]) -> float | None:
    return sum(values) / len(values) if values else None


@dataclass
class EvalReport:
    dataset: str
    mode: str
    config_fingerprint: str
    records: list[RunRecord]
    disabled: list[str] = field(default_factory=list)
    k: int | None = None
    think_mode: str = ""
    config: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.records)

    @property
    def em(self) -> float | None:
        return _mean([r.em for r in self.records])

    @property
    def f1(self) -> float | None:
        return _mean([r.f1 for r in self.records])

    @property
    def mean_input_tokens(self) -> float | None:
        return _mean([r.usage_total["input_tokens"] for r in self.records])

    @property
    def mean_output_tokens(self) -> float | None:
        return _mean([r.usage_total["output_tokens"] for r in self.records])

    @property
    def mean_latency_ms(self) -> float | None:
        return _mean([r.latency_ms_total for r in self.records])

    @property
    def failures(self) -> int:
        return sum("failed" in r.flags for r in self.records)

    @property
    def label(self) -> str:
        parts = [self.mode]
        if self.mode != "lir3ag" or self.think_mode == "think":
            parts.append(self.think_mode)
        if self.disabled:
            parts.append("w/o " + "+".join(self.disabled))
        return " ".join(p for p in parts if p)

    def summary(self) -> dict:
        return {
            "dataset": self.dataset,
            "mode": self.mode,
            "think_mode": self.think_mode,
            "disabled": self.disabled,
            "k": self.k,
            "config_fingerprint": self.config_fingerprint,
            "config": self.config,
            "n": self.n,
            "failures": self.failures,
            "em": self.em,
            "f1": self.f1,
            "mean_input_tokens": self.mean_input_tokens,
            "mean_output_tokens": self.mean_output_tokens,
            "mean_latency_ms": self.mean_latency_ms,
            "flags": _flag_counts(self.records),
        }

    def record_lines(self) -> list[str]:
        return [json.dumps(r.to_dict(), sort_keys=True, ensure_ascii=False) for r in self.records]

    @property
    def fingerprint(self) -> str:
        h = hashlib.sha256(json.dumps(self.summary(), sort_keys=True).encode())
        for line in self.record_lines():
            h.update(line.encode("utf-8") + b"\n")
        return h.hexdigest()[:16]

    def save(self, out_dir: str | Path) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "records.jsonl").write_text("".join(line + "\n" for line in self.record_lines()), encoding="utf-8")
        report = dict(self.summary(), report_fingerprint=self.fingerprint)
        (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        (out / "summary.txt").write_text(format_table(
            ["label", "n", "EM", "F1", "in tok", "out tok", "latency ms", "failures"],
            [[self.label, self.n, self.em, self.f1, self.mean_input_tokens, self.mean_output_tokens,
              self.mean_latency_ms, self.failures]],
        ) + f"\nconfig {self.config_fingerprint}  report {self.fingerprint}\n")
        return out

    @classmethod
    def load(cls, run_dir: str | Path) -> "EvalReport":
        run_dir = Path(run_dir)
        if not (run_dir / "report.json").exists():
            raise FileNotFoundError(f"{run_dir} has no report.json; is it an eval output directory?")
        meta = json.loads((run_dir / "report.json").read_text())
        records = [RunRecord.from_dict(json.loads(line))
                   for line in (run_dir / "records.jsonl").read_text(encoding="utf-8").splitlines() if line]
        return cls(meta["dataset"], meta["mode"], meta["config_fingerprint"], records,
                   disabled=meta.get("disabled", []), k=meta.get("k"), think_mode=meta.get("think_mode", ""),
                   config=meta.get("config", {}))


def _flag_counts(records: Iterable[RunRecord]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for r in records:
        for f in r.flags:
            counts[f] = counts.get(f, 0) + 1
    return dict(sorted(counts.items()))


def _fmt(v) -> str:
    if v is None:
        return "null"
    if isinstance(v, float):
        return f"{v:.3f}" if abs(v) < 10 else f"{v:.1f}"
    return str(v)


def format_table(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    cells = [list(header)] + [[_fmt(v) for v in row] for row in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def select_questions(dataset: Dataset, config: PipelineConfig):
    qs = dataset.questions
    if config.sample_size is not None and len(qs) > config.sample_size:
        keep = sorted(random.Random(config.seed).sample(range(len(qs)), config.sample_size))
        qs = [qs[i] for i in keep]
    return qs


def run_mode(dataset: Dataset, mode: str, config: PipelineConfig, gateways: Gateways,
             disable: Iterable[str] = (), out_dir: str | Path | None = None, k: int | None = None) -> EvalReport:
    """Evaluate every (sampled) question in one mode; per-question failures score zero."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    disable = frozenset(disable)
    if k is not None:
        config = dataclasses.replace(config, retrieval=dataclasses.replace(config.retrieval, k=k))
    pipeline = Pipeline(dataset, gateways, config)
    questions = select_questions(dataset, config)
    t0 = time.perf_counter()
    with ThreadPoolExecutor(max_workers=max(1, config.concurrency)) as pool:
        records = list(pool.map(lambda q: pipeline.run(q, mode, disable), questions))
    wall_ms = (time.perf_counter() - t0) * 1000.0
    report = EvalReport(
        dataset=dataset.name,
        mode=mode,
        config_fingerprint=config.fingerprint(dataset.content_hash),
        records=records,
        disabled=sorted(disable, key=MODULES.index),
        k=None if mode == "direct" else config.retrieval.k,
        think_mode=config.think_mode,
        config=_public_config(config),
    )
    if out_dir is not None:
        report.save(out_dir)
        (Path(out_dir) / "wallclock.json").write_text(json.dumps({
            "aggregate_wall_ms": wall_ms,
            "questions": len(records),
            "concurrency": config.concurrency,
        }, indent=2) + "\n")
    logger.info("%s: n=%d EM=%s F1=%s (%.0f ms wall)", report.label, report.n, _fmt(report.em), _fmt(report.f1), wall_ms)
    return report


def _public_config(config: PipelineConfig) -> dict:
    data = config_to_dict(config)
    for key in ("output_dir", "corpus_dir", "concurrency"):
        data.pop(key)
    data["dataset"].pop("path")
    return data


def ablation_run(dataset: Dataset, disable: Iterable[str], config: PipelineConfig, gateways: Gateways,
                 out_dir: str | Path | None = None) -> EvalReport:
    disable = set(disable)
    unknown = disable - set(MODULES)
    if unknown:
        raise ValueError(f"unknown module(s) {sorted(unknown)}; choose from {', '.join(MODULES)}")
    return run_mode(dataset, "lir3ag", config, gateways, disable=disable, out_dir=out_dir)


@dataclass(frozen=True)
class SweepRow:
    k: int
    em: float | None
    f1: float | None
    constructor_input_tokens: float | None
    generator_input_tokens: float | None
    gold_recall: float | None


SWEEP_HEADER = ["k", "EM", "F1", "constructor_input_tokens", "generator_input_tokens", "gold_recall"]


def sweep_row(report: EvalReport) -> SweepRow:
    recs = report.records
    recalls = [r.gold_recall for r in recs if r.gold_recall is not None]
    return SweepRow(
        k=report.k,
        em=report.em,
        f1=report.f1,
        constructor_input_tokens=_mean([r.stage_tokens("rerank", "summarize") for r in recs]),
        generator_input_tokens=_mean([r.stage_tokens("generate") for r in recs]),
        gold_recall=_mean(recalls),
    )


def topk_sweep(dataset: Dataset, ks: Sequence[int], config: PipelineConfig, gateways: Gateways,
               mode: str = "lir3ag", out_dir: str | Path | None = None) -> list[SweepRow]:
    if not ks:
        raise ValueError("ks must be non-empty")
    if any(k < 1 for k in ks):
        raise ValueError("every k must be >= 1")
    rows = []
    for k in ks:
        sub = Path(out_dir) / f"k{k}" if out_dir is not None else None
        rows.append(sweep_row(run_mode(dataset, mode, config, gateways, out_dir=sub, k=k)))
    if out_dir is not None:
        out = Path(out_dir)
        table = [[getattr(r, f.name) for f in dataclasses.fields(SweepRow)] for r in rows]
        write_tsv(out / "sweep.tsv", SWEEP_HEADER, table)
        (out / "sweep.txt").write_text(format_table(SWEEP_HEADER, table) + "\n")
    return rows


COST_HEADER = ["label", "n", "mean_input_tokens", "mean_output_tokens", "mean_total_tokens", "mean_latency_ms"]


def cost_rows(reports: Sequence[EvalReport]) -> list[list]:
    rows = []
    for rep in reports:
        total = None
        if rep.mean_input_tokens is not None:
            total = rep.mean_input_tokens + rep.mean_output_tokens
        rows.append([rep.label, rep.n, rep.mean_input_tokens, rep.mean_output_tokens, total, rep.mean_latency_ms])
    return rows


def write_tsv(path: str | Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    lines = ["\t".join(header)] + ["\t".join("" if v is None else str(v) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_plot_data(out_dir: str | Path, reports: Sequence[EvalReport]) -> None:
    """Columnar bar-chart data: token cost and time cost per method."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_tsv(out / "plot_tokens.tsv", ["label", "input_tokens", "output_tokens"],
              [[r.label, r.mean_input_tokens, r.mean_output_tokens] for r in reports])
    write_tsv(out / "plot_latency.tsv", ["label", "latency_ms"], [[r.label, r.mean_latency_ms] for r in reports])


def cost_report(reports: Sequence[EvalReport], out_dir: str | Path | None = None, emit_plots: bool = False) -> str:
    rows = cost_rows(reports)
    text = format_table(COST_HEADER, rows)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_tsv(out / "cost.tsv", COST_HEADER, rows)
        (out / "cost.txt").write_text(text + "\n")
        if emit_plots:
            write_plot_data(out, reports)
    return text
