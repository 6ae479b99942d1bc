"""Write a synthetic two-hop suite plus a mock-gateway config for it.

    python3 scripts/make_synthetic_suite.py --out runs/synthetic --questions 10
"""

import argparse
from pathlib import Path

import yaml

from chainrag.synthetic import make_suite, suite_config, write_suite


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/synthetic")
    ap.add_argument("--questions", type=int, default=10)
    ap.add_argument("--distractors", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--adversarial", action="store_true", help="make BM25 rank the answer document above the bridge")
    ap.add_argument("--reranker", choices=("scripted", "fallback"), default="scripted")
    ap.add_argument("--generator", choices=("scripted", "verbose"), default="scripted")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = make_suite(args.questions, args.distractors, args.seed, args.adversarial)
    suite = write_suite(out / "suite.jsonl", records)
    config = out / "config.yaml"
    config.write_text(yaml.safe_dump(suite_config(suite.resolve(), args.reranker, args.generator)))
    print(f"{len(records)} questions, {len(records) * (2 + args.distractors)} documents -> {suite}")
    print(f"config -> {config}")


if __name__ == "__main__":
    main()
