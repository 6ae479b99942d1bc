"""SQuAD-style answer normalization, exact match and token F1."""

from __future__ import annotations

import re
import string
from collections import Counter
from typing import Sequence

_PUNCT = str.maketrans("", "", string.punctuation)
_ARTICLES = re.compile(r"\b(a|an|the)\b")


def normalize_answer(text: str) -> list[str]:
    text = text.lower().translate(_PUNCT)
    text = _ARTICLES.sub(" ", text)
    return text.split()


def exact_match(pred: str, golds: Sequence[str]) -> int:
    if not golds:
        raise ValueError("at least one gold answer is required")
    p = normalize_answer(pred)
    return int(any(p == normalize_answer(g) for g in golds))


def _f1(pred: list[str], gold: list[str]) -> float:
    if not pred and not gold:
        return 1.0
    overlap = sum((Counter(pred) & Counter(gold)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred)
    recall = overlap / len(gold)
    return 2 * precision * recall / (precision + recall)


def f1_score(pred: str, golds: Sequence[str]) -> float:
    """Best token-level F1 of ``pred`` against any gold answer."""
    if not golds:
        raise ValueError("at least one gold answer is required")
    p = normalize_answer(pred)
    return max(_f1(p, normalize_answer(g)) for g in golds)
