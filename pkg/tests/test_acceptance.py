"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line.

The lines are printed during the test and again in the terminal summary.
"""

import json
import random
import re
import socket
import string
import subprocess
import sys
import time

import pytest

from chainrag.chain import EMPTY_CHAIN, construct_chain
from chainrag.cli import main
from chainrag.corpus import ContextChunk, ingest_dataset
from chainrag.evaluation import EvalReport
from chainrag.gateway import MockGateway
from chainrag.metrics import exact_match, f1_score
from chainrag.pipeline import RunRecord
from chainrag.rerank import RerankedEvidence, rerank
from chainrag.retrieval import Retriever, ScoredContextList
from chainrag.strategy import annotate_trace_heuristic, strategy_report
from chainrag.synthetic import make_suite, write_suite

from conftest import mock_config
from oracles import ref_bm25_rank, ref_em, ref_f1

RESULTS = []


def verdict(number, name, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {name}" + (f" ({detail})" if detail else "")
    RESULTS.append(line)
    print(line)
    assert ok, line


@pytest.fixture(autouse=True)
def no_network(monkeypatch):
    def refuse(*args, **kwargs):
        raise OSError("network access is disabled in acceptance tests")
    monkeypatch.setattr(socket.socket, "connect", refuse)
    monkeypatch.setattr(socket, "create_connection", refuse)


def cli(*argv):
    return main([str(a) for a in argv])


def eval_dir(out, prefix):
    (path,) = out.glob(prefix + "-*")
    return path


# 1 -------------------------------------------------------------------------

METRIC_CASES = [
    ("alpha beta", ["beta gamma"]),
    ("Paris", ["Paris"]),
    ("paris", ["Paris"]),
    ("Paris.", ["Paris"]),
    ("The Paris", ["Paris"]),
    ("a Paris", ["an paris"]),
    ("London", ["Paris"]),
    ("", ["Paris"]),
    ("", [""]),
    ("the", ["a"]),
    ("Paris", [""]),
    ("New York City", ["New York"]),
    ("New York", ["New York City"]),
    ("York New", ["New York"]),
    ("b b", ["b"]),
    ("b", ["b b"]),
    ("b b c", ["b c c"]),
    ("x y z", ["z y x"]),
    ("United States of America", ["USA", "United States"]),
    ("USA", ["USA", "United States"]),
    ("u.s.a.", ["USA"]),
    ("U.S.", ["US"]),
    ("1,000", ["1000"]),
    ("1 000", ["1000"]),
    ("3.14", ["314"]),
    ("rock-n-roll", ["rocknroll"]),
    ("rock n roll", ["rocknroll"]),
    ("  spaced   out  ", ["spaced out"]),
    ("Tab\tseparated", ["tab separated"]),
    ("line\nbreak", ["line break"]),
    ("yes", ["yes", "no"]),
    ("no", ["yes"]),
    ("The answer is yes", ["yes"]),
    ("Andoria", ["Belvania", "Andoria"]),
    ("Andoria Belvania", ["Belvania", "Andoria"]),
    ("an apple a day", ["apple day"]),
    ("theory", ["the ory"]),
    ("another", ["other"]),
    ("Anne", ["an ne"]),
    ("café", ["cafe"]),
    ("Café", ["café"]),
    ("O'Brien", ["OBrien"]),
    ("O'Brien", ["O Brien"]),
    ("(1999)", ["1999"]),
    ("$5", ["5"]),
    ("alpha, beta, gamma", ["gamma beta alpha"]),
    ("alpha alpha beta", ["alpha beta beta"]),
    ("one two three four", ["one two"]),
    ("one", ["one two three four"]),
    ("!!!", ["?"]),
]


def test_01_metric_oracle():
    assert len(METRIC_CASES) == 50
    t0 = time.perf_counter()
    mismatches = [
        (p, g) for p, g in METRIC_CASES
        if exact_match(p, g) != ref_em(p, g) or f1_score(p, g) != ref_f1(p, g)
    ]
    elapsed = time.perf_counter() - t0
    half = f1_score("alpha beta", ["beta gamma"])
    ok = not mismatches and half == 0.5 and elapsed < 1.0
    verdict(1, "metric oracle suite", ok, f"50 cases, {len(mismatches)} mismatches, [a,b] vs [b,c] F1={half}, {elapsed:.3f}s")


# 2 -------------------------------------------------------------------------

def random_corpus(rng, max_chunks=200, vocab_size=30):
    vocab = [f"w{i}" for i in range(vocab_size)]
    n = rng.randint(1, max_chunks)
    texts = [" ".join(rng.choices(vocab, k=rng.randint(0, 25))) for _ in range(n)]
    chunks = [ContextChunk(f"c{i:03d}", f"d{i}", t, (0, len(t))) for i, t in enumerate(texts)]
    query = " ".join(rng.choices(vocab + ["unseen"], k=rng.randint(1, 8)))
    return chunks, query


def test_02_bm25_equivalence():
    rng = random.Random(2)
    t0 = time.perf_counter()
    bad = 0
    worst = 0.0
    for _ in range(100):
        chunks, query = random_corpus(rng)
        got = Retriever(chunks).retrieve(query, len(chunks), "sparse")
        want = ref_bm25_rank([(c.chunk_id, c.text) for c in chunks], query)
        diffs = [abs(s - w) for (_, s), (_, w) in zip(got.entries, want)]
        worst = max([worst] + diffs)
        if got.chunk_ids != [cid for cid, _ in want] or any(d > 1e-9 for d in diffs):
            bad += 1
    elapsed = time.perf_counter() - t0
    verdict(2, "BM25 equivalence", bad == 0 and elapsed < 30, f"100 corpora, {bad} mismatched, max |diff| {worst:.1e}, {elapsed:.1f}s")


# 3 -------------------------------------------------------------------------

def test_03_retriever_properties():
    rng = random.Random(3)
    failures = 0
    for _ in range(1000):
        # tiny vocabulary so score ties are frequent
        chunks, query = random_corpus(rng, max_chunks=30, vocab_size=4)
        rng.shuffle(chunks)
        r = Retriever(chunks)
        k = rng.randint(1, len(chunks))
        j = rng.randint(k, len(chunks) + 3)
        short, deep = r.retrieve(query, k), r.retrieve(query, j)
        prefix_ok = deep.chunk_ids[:len(short)] == short.chunk_ids
        ties_ok = all(
            (a[1] > b[1]) or (a[1] == b[1] and a[0].chunk_id < b[0].chunk_id)
            for a, b in zip(deep.entries, deep.entries[1:])
        )
        rng.shuffle(chunks)
        stable = Retriever(chunks).retrieve(query, k).entries == short.entries
        failures += not (prefix_ok and ties_ok and stable)
    verdict(3, "retriever prefix and tie-breaking", failures == 0, f"1000 trials, {failures} failures")


# 4 -------------------------------------------------------------------------

def adversarial_replies(rng, n):
    fragments = ['[', ']', '{', '}', '"index"', '"relevance"', ':', ',', '0', '1', '-1', '99', '0.5', '1e309',
                 'NaN', 'Infinity', 'null', 'true', '"x"', ' ', '\n', '```json', '```', '[[', ']]', '9' * 50]
    out = []
    for i in range(n):
        kind = i % 5
        if kind == 0:
            out.append("".join(rng.choices(string.printable + "…é中", k=rng.randint(0, 80))))
        elif kind == 1:
            out.append("".join(rng.choices(fragments, k=rng.randint(1, 30))))
        elif kind == 2:
            items = [{"index": rng.choice([rng.randint(-3, 8), "1", None, 1.5, True]),
                      "relevance": rng.choice([rng.uniform(-2, 2), "high", None, 10 ** 400, float("nan")])}
                     for _ in range(rng.randint(0, 6))]
            text = json.dumps(items)
            out.append(text[:rng.randint(0, len(text))] if rng.random() < 0.3 else text)
        elif kind == 3:
            out.append("[" * rng.randint(1, 3000) + "]" * rng.randint(0, 5))
        else:
            items = [{"index": rng.randint(0, 4), "relevance": round(rng.random(), 3)} for _ in range(rng.randint(0, 6))]
            out.append(f"Here you go: {json.dumps(items)} hope that helps [{rng.randint(0, 9)}]")
    return out


def test_04_reranker_fuzz():
    rng = random.Random(4)
    chunks = [ContextChunk(f"c{i}", f"d{i}", f"text {i}", (0, 6)) for i in range(5)]
    ctx = ScoredContextList(tuple((c, 5.0 - i) for i, c in enumerate(chunks)), 5, "sparse")
    violations = 0
    failed = 0
    for reply in adversarial_replies(rng, 10_000):
        try:
            ev = rerank("Q?", ctx, MockGateway(default=reply))
        except Exception:
            violations += 1
            continue
        ids = [c.chunk_id for c in ev.chunks]
        ok = (isinstance(ev, RerankedEvidence) and len(ids) == len(set(ids)) and len(ids) <= len(ctx)
              and set(ids) <= set(ctx.chunk_ids) and all(0.0 <= s <= 1.0 for _, s in ev.entries))
        if ev.parse_status == "failed":
            failed += 1
            ok = ok and ev.chunks == ctx.chunks
        violations += not ok
    verdict(4, "reranker safety fuzz", violations == 0, f"10000 replies, {violations} violations, {failed} fell back")


# 5 -------------------------------------------------------------------------

CHAIN_SCRIPT = """
from chainrag.chain import construct_chain
from chainrag.corpus import ContextChunk
from chainrag.rerank import RerankedEvidence
texts = ["Alda Brenner was born in 1950 in the city of Velmora.", "Velmora is a city located in Andoria.", "Third."]
chunks = [ContextChunk(f"c{i}", f"d{i}", t, (0, len(t))) for i, t in enumerate(texts)]
ev = RerankedEvidence(tuple((c, 1.0 - i / 4) for i, c in enumerate(chunks)), 3)
print(construct_chain(ev).rendered, end="")
"""


def test_05_template_conformance():
    outputs = [subprocess.run([sys.executable, "-c", CHAIN_SCRIPT], capture_output=True, check=True).stdout
               for _ in range(2)]
    rendered = outputs[0].decode()
    lines = rendered.split("\n")
    shape = (lines[0] == "Reasoning Steps:"
             and all(re.fullmatch(rf"Step {j}: .+", line) for j, line in enumerate(lines[1:], 1))
             and len(lines) == 4)
    empty = construct_chain(RerankedEvidence((), 0)).rendered
    ok = outputs[0] == outputs[1] and shape and empty == EMPTY_CHAIN
    verdict(5, "chain template conformance", ok, "byte-identical across two processes, sentinel checked")


# 6 -------------------------------------------------------------------------

def index_suite(tmp_path, records, **config_kwargs):
    suite_path = write_suite(tmp_path / "suite.jsonl", records)
    cfg = mock_config(tmp_path / "config.yaml", suite_path, **config_kwargs)
    out = tmp_path / "out"
    assert cli("index", "--config", cfg, "--out", out) == 0
    return cfg, out


def test_06_end_to_end_mock(tmp_path):
    t0 = time.perf_counter()
    cfg, out = index_suite(tmp_path, make_suite(10, 3))
    docs = json.loads((out / "corpus" / "manifest.json").read_text())["documents"]
    codes = [cli("eval", "--config", cfg, "--out", out, "--mode", m) for m in ("lir3ag", "direct")]
    full = json.loads((eval_dir(out, "eval-lir3ag-no_think") / "report.json").read_text())
    direct = json.loads((eval_dir(out, "eval-direct-no_think") / "report.json").read_text())
    elapsed = time.perf_counter() - t0
    ok = (docs == 50 and codes == [0, 0] and full["em"] == 1.0 and full["f1"] == 1.0
          and direct["em"] == 0.0 and elapsed < 10)
    verdict(6, "end-to-end mock pipeline", ok,
            f"{docs} docs, lir3ag EM={full['em']} F1={full['f1']}, direct EM={direct['em']}, {elapsed:.2f}s")


# 7 -------------------------------------------------------------------------

def test_07_ablation_direction(tmp_path):
    records = make_suite(10, 3, adversarial=True)
    cfg, out = index_suite(tmp_path, records)
    # precondition: the retriever really does put the answer document before the bridge
    corpus, questions = ingest_dataset(tmp_path / "suite.jsonl", "synthetic")
    retriever = Retriever(corpus.chunks)
    shuffled = 0
    for q in questions:
        ids = retriever.subset(q.pool).retrieve(q.question, 5).chunks
        docs = [c.doc_id for c in ids]
        shuffled += docs.index(f"{q.question_id}-answer") < docs.index(f"{q.question_id}-bridge")
    assert cli("ablate", "--config", cfg, "--out", out, "--disable", "none") == 0
    assert cli("ablate", "--config", cfg, "--out", out, "--disable", "reranker") == 0
    assert cli("ablate", "--config", cfg, "--out", out, "--disable", "retriever,reranker,constructor") == 0
    assert cli("eval", "--config", cfg, "--out", out, "--mode", "direct") == 0
    full = EvalReport.load(eval_dir(out, "ablate-none"))
    no_rr = EvalReport.load(eval_dir(out, "ablate-reranker"))
    all_off = EvalReport.load(eval_dir(out, "ablate-retriever+reranker+constructor"))
    direct = EvalReport.load(eval_dir(out, "eval-direct-no_think"))
    same = all(
        (a.generator_prompt, a.answer, a.usage_total, a.latency_ms_total, a.em, a.f1)
        == (d.generator_prompt, d.answer, d.usage_total, d.latency_ms_total, d.em, d.f1)
        for a, d in zip(all_off.records, direct.records)
    ) and all_off.n == direct.n
    ok = shuffled == len(questions) and full.em > no_rr.em and same
    verdict(7, "ablation direction", ok,
            f"{shuffled}/{len(questions)} shuffled, full EM={full.em} > w/o reranker EM={no_rr.em}, all-off == direct: {same}")


# 8 -------------------------------------------------------------------------

def test_08_topk_sweep(tmp_path):
    cfg, out = index_suite(tmp_path, make_suite(10, 3), reranker="fallback")
    assert cli("sweep", "--config", cfg, "--out", out, "--ks", "1,5,10") == 0
    lines = (eval_dir(out, "sweep-lir3ag") / "sweep.tsv").read_text().splitlines()
    header, rows = lines[0].split("\t"), [dict(zip(lines[0].split("\t"), r.split("\t"))) for r in lines[1:]]
    recall = [float(r["gold_recall"]) for r in rows]
    tokens = [float(r["generator_input_tokens"]) for r in rows]
    ks = [int(r["k"]) for r in rows]
    ok = (ks == [1, 5, 10] and all(a <= b for a, b in zip(recall, recall[1:]))
          and all(a <= b for a, b in zip(tokens, tokens[1:])) and "generator_input_tokens" in header)
    verdict(8, "top-k sweep mechanics", ok, f"recall {recall}, generator input tokens {tokens}")


# 9 -------------------------------------------------------------------------

def test_09_cost_accounting(tmp_path):
    cfg, out = index_suite(tmp_path, make_suite(10, 3))
    verbose = mock_config(tmp_path / "verbose.yaml", tmp_path / "suite.jsonl", generator="verbose")
    assert cli("eval", "--config", cfg, "--out", out, "--mode", "lir3ag") == 0
    assert cli("eval", "--config", verbose, "--out", out, "--mode", "vanilla_rag", "--think-mode", "think") == 0
    runs = [eval_dir(out, "eval-lir3ag-no_think"), eval_dir(out, "eval-vanilla_rag-think")]
    sums_ok = means_ok = True
    for run in runs:
        records = [RunRecord.from_dict(json.loads(line)) for line in (run / "records.jsonl").read_text().splitlines()]
        for r in records:
            sums_ok &= r.usage_total == {
                "input_tokens": sum(c["input_tokens"] for c in r.calls),
                "output_tokens": sum(c["output_tokens"] for c in r.calls),
            }
        saved = json.loads((run / "report.json").read_text())
        n = len(records)
        means_ok &= saved["n"] == n and saved["em"] == sum(r.em for r in records) / n
        means_ok &= saved["f1"] == sum(r.f1 for r in records) / n
        means_ok &= saved["mean_input_tokens"] == sum(r.usage_total["input_tokens"] for r in records) / n
        means_ok &= saved["mean_output_tokens"] == sum(r.usage_total["output_tokens"] for r in records) / n
        means_ok &= saved["mean_latency_ms"] == sum(r.latency_ms_total for r in records) / n
    assert cli("cost", "--out", out, "--runs", *runs) == 0
    rows = [line.split("\t") for line in (out / "cost" / "cost.tsv").read_text().splitlines()[1:]]
    outputs = {row[0]: float(row[3]) for row in rows}
    ok = sums_ok and means_ok and outputs["lir3ag"] < outputs["vanilla_rag think"]
    verdict(9, "cost accounting consistency", ok,
            f"per-call sums {sums_ok}, means recompute {means_ok}, output tokens {outputs}")


# 10 ------------------------------------------------------------------------

def test_10_strategy_annotator():
    ctx = ["Velmora is a city located in Andoria.", "Alda Brenner was born in 1950 in the city of Velmora."]
    reconciled = annotate_trace_heuristic(ctx, "The passage doesn't mention her birthplace, so I fall back on what I know.")
    grounded = annotate_trace_heuristic(ctx, "Passage 2 says Alda Brenner was born in 1950 in the city of Velmora.")
    labels = {f"q{i}": lab for i, lab in enumerate(
        ["context_grounded"] * 6 + ["knowledge_reconciled"] * 3 + ["ambiguous"])}
    records = [RunRecord(qid, "lir3ag", f"question {qid}", ["x"], trace=f"trace for {qid}") for qid in labels]
    judge = MockGateway(responder=lambda req: next(lab for qid, lab in labels.items() if f"question {qid}\n" in req.user + "\n"))
    report = strategy_report(records, "llm", judge)
    fractions = report.fractions
    ok = (reconciled.label == "knowledge_reconciled" and grounded.label == "context_grounded"
          and abs(sum(fractions.values()) - 1.0) <= 1e-9
          and fractions == {"context_grounded": 0.6, "knowledge_reconciled": 0.3, "ambiguous": 0.1})
    verdict(10, "strategy annotator", ok, f"cue fixtures {reconciled.label}/{grounded.label}, fractions {fractions}")


# 11 ------------------------------------------------------------------------

def test_11_reproducibility(tmp_path):
    cfg, out = index_suite(tmp_path, make_suite(10, 3))
    prints, bodies = [], []
    for name in ("first", "second"):
        run_out = tmp_path / name
        assert cli("eval", "--config", cfg, "--out", run_out, "--corpus-dir", out / "corpus") == 0
        run = eval_dir(run_out, "eval-lir3ag-no_think")
        prints.append(json.loads((run / "report.json").read_text())["report_fingerprint"])
        bodies.append(((run / "report.json").read_bytes(), (run / "records.jsonl").read_bytes()))
    ok = prints[0] == prints[1] and bodies[0] == bodies[1]
    verdict(11, "reproducibility", ok, f"fingerprints {prints[0]} / {prints[1]}")
