"""Run the full experiment grid on synthetic suites with scripted mock models.

Covers the three modes, every single-module ablation plus all three,
a top-k sweep, a think-mode run with strategy annotation, and the cost
table. Needs no network; finishes in a few seconds.

    python3 scripts/run_mock_experiments.py --out runs/mock
"""

import argparse
import json
import shutil
from pathlib import Path

import yaml

from chainrag.cli import main as cli
from chainrag.synthetic import make_suite, suite_config, write_suite


def run(*argv):
    argv = [str(a) for a in argv]
    print("$ chainrag " + " ".join(argv))
    code = cli(argv)
    if code:
        raise SystemExit(f"command failed with exit code {code}")


def setup(root: Path, adversarial: bool, reranker="scripted", generator="scripted", questions=10) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    suite = write_suite(root / "suite.jsonl", make_suite(questions, 3, adversarial=adversarial))
    config = root / f"config-{reranker}-{generator}.yaml"
    config.write_text(yaml.safe_dump(suite_config(suite.resolve(), reranker, generator)))
    return config


def latest(out: Path, prefix: str) -> Path:
    return max(out.glob(prefix + "-*"), key=lambda p: p.stat().st_mtime)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/mock")
    ap.add_argument("--questions", type=int, default=10)
    ap.add_argument("--clean", action="store_true", help="delete --out first")
    args = ap.parse_args()
    root = Path(args.out)
    if args.clean and root.exists():
        shutil.rmtree(root)

    # standard suite: modes, sweep, cost
    std = root / "standard"
    cfg = setup(std, False, questions=args.questions)
    run("index", "--config", cfg, "--out", std)
    for mode in ("direct", "vanilla_rag", "lir3ag"):
        run("eval", "--config", cfg, "--out", std, "--mode", mode)
    fallback = setup(std, False, reranker="fallback", questions=args.questions)
    run("sweep", "--config", fallback, "--out", std, "--ks", "1,3,5")

    # think-mode reasoner for the cost comparison and strategy labels
    verbose = setup(std, False, generator="verbose", questions=args.questions)
    run("eval", "--config", verbose, "--out", std, "--mode", "vanilla_rag", "--think-mode", "think")
    run("annotate", "--out", std, "--run", latest(std, "eval-vanilla_rag-think"))
    run("cost", "--out", std, "--emit-plots", "--runs",
        latest(std, "eval-lir3ag-no_think"), latest(std, "eval-vanilla_rag-no_think"),
        latest(std, "eval-direct-no_think"), latest(std, "eval-vanilla_rag-think"))

    # adversarial suite: ablations
    adv = root / "adversarial"
    cfg = setup(adv, True, questions=args.questions)
    run("index", "--config", cfg, "--out", adv)
    for disable in ("none", "retriever", "reranker", "constructor", "retriever,reranker,constructor"):
        run("ablate", "--config", cfg, "--out", adv, "--disable", disable)

    rows = []
    for report in sorted(root.glob("*/*/report.json")):
        data = json.loads(report.read_text())
        label = report.parent.name.rsplit("-", 1)[0]
        rows.append(f"{report.parent.parent.name:<12} {label:<44} EM {data['em']:.2f}  F1 {data['f1']:.2f}  "
                    f"out tok {data['mean_output_tokens']:.1f}")
    print("\n".join(["", "summary"] + rows))


if __name__ == "__main__":
    main()
