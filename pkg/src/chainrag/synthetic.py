"""Synthetic two-hop QA suites and scripted mock models for hermetic runs.

Each question asks for the country of a person's birth city. Answering
needs a bridge document (person -> city) and an answer document
(city -> country), in that order. Every question gets its own paragraph
pool: the two gold documents plus distractors.

The scripted responders play the three model roles against a suite:

* ``scripted_reranker`` keeps exactly the gold documents, bridge first;
* ``scripted_generator`` answers only when it sees a reasoning chain whose
  steps hold the gold documents in hop order, and refuses otherwise;
* ``verbose_reasoner`` imitates a think-mode model: a long deliberation
  inside ``<think>`` tags followed by the answer when both gold documents
  are anywhere in the prompt.

They plug into :class:`~chainrag.gateway.MockGateway` as ``responder`` or
through a config ``factory`` entry such as
``chainrag.synthetic:scripted_generator`` with ``factory_args: {suite_path: ...}``.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .gateway import ChatRequest

REFUSAL = "I cannot answer that from the information given."

_FIRST = ["Alda", "Bram", "Cosima", "Dario", "Elke", "Fenn", "Greta", "Hugo", "Ilse", "Jory",
          "Kaia", "Lorn", "Mira", "Niko", "Orla", "Piet", "Quill", "Rhea", "Sten", "Tova"]
_LAST = ["Brenner", "Castell", "Dunmore", "Eskew", "Fairholm", "Galloway", "Hartig", "Ivers",
         "Jessup", "Kettering", "Lindqvist", "Marchetti", "Norwood", "Oyelaran", "Pellham"]
_CITY_A = ["Vel", "Dra", "Sor", "Mar", "Kel", "Tam", "Ost", "Bri", "Quen", "Lio", "Har", "Zen"]
_CITY_B = ["mora", "vik", "bury", "ano", "stad", "holm", "ford", "ria", "dell", "gard"]
_COUNTRY = ["Andoria", "Belvania", "Corvenia", "Drusland", "Estralia", "Falmoria", "Galdria",
            "Hesperon", "Istovia", "Jarlheim", "Kestria", "Lumaria", "Moravel", "Norrland", "Ostavia"]


@dataclass(frozen=True)
class SuiteEntry:
    question: str
    answer: str
    bridge: str
    target: str


def make_suite(n_questions: int = 10, distractors: int = 3, seed: int = 0,
               adversarial: bool = False) -> list[dict]:
    """Build synthetic-format records; ``n_questions * (2 + distractors)`` documents in total.

    With ``adversarial`` the answer document repeats the question's wording so
    BM25 ranks it above the bridge document, i.e. retrieval returns the gold
    evidence in the wrong hop order.
    """
    rng = random.Random(seed)
    names = rng.sample([f"{f} {l}" for f in _FIRST for l in _LAST], n_questions * (1 + distractors))
    cities = rng.sample([a + b for a in _CITY_A for b in _CITY_B], n_questions * (1 + distractors))
    records = []
    for i in range(n_questions):
        qid = f"q{i:03d}"
        person, city = names[i], cities[i]
        country = rng.choice(_COUNTRY)
        year = rng.randint(1900, 1999)
        question = f"Which country is home to the city where {person} was born?"
        bridge = f"{person} was born in {year} in the city of {city}."
        if adversarial:
            target = (f"Which country is home to the city of {city}? The country that is home to "
                      f"{city} is {country}; {city} is a city in {country}.")
        else:
            target = f"{city} is a city located in {country}."
        docs = [
            {"doc_id": f"{qid}-bridge", "title": person, "body": bridge},
            {"doc_id": f"{qid}-answer", "title": city, "body": target},
        ]
        for j in range(distractors):
            other = names[n_questions + i * distractors + j]
            other_city = cities[n_questions + i * distractors + j]
            if j % 2 == 0:
                body = f"{other} was born in {rng.randint(1900, 1999)} in the town of {other_city}."
                title = other
            else:
                body = f"{other_city} lies on a river and is known for {rng.choice(['wool', 'glass', 'salt', 'tin'])}."
                title = other_city
            docs.append({"doc_id": f"{qid}-d{j}", "title": title, "body": body})
        order = docs[:]
        rng.shuffle(order)
        records.append({
            "question_id": qid,
            "question": question,
            "gold_answers": [country],
            "documents": order,
            "gold_support_ids": [f"{qid}-bridge", f"{qid}-answer"],
        })
    return records


def write_suite(path: str | Path, records: Sequence[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records), encoding="utf-8")
    return path


def _entries(records: Sequence[dict] | None, suite_path: str | Path | None) -> dict[str, SuiteEntry]:
    if records is None:
        if suite_path is None:
            raise ValueError("give records or suite_path")
        records = [json.loads(line) for line in Path(suite_path).read_text(encoding="utf-8").splitlines() if line]
    out = {}
    for rec in records:
        if "question" not in rec:
            continue
        bodies = {d["doc_id"]: d["body"] for d in rec.get("documents", [])}
        bridge_id, target_id = rec["gold_support_ids"][:2]
        out[rec["question"]] = SuiteEntry(rec["question"], rec["gold_answers"][0], bodies[bridge_id], bodies[target_id])
    return out


def _question_of(user: str) -> str:
    first = user.split("\n", 1)[0]
    return first[len("Question: "):] if first.startswith("Question: ") else first


_BLOCK = re.compile(r"^\[(\d+)\] (.*)$", re.MULTILINE)


def scripted_reranker(records: Sequence[dict] | None = None, suite_path: str | Path | None = None):
    entries = _entries(records, suite_path)

    def respond(request: ChatRequest) -> str:
        entry = entries.get(_question_of(request.user))
        if entry is None:
            return REFUSAL
        blocks = {int(i): text for i, text in _BLOCK.findall(request.user)}
        picks = []
        for body, rel in ((entry.bridge, 0.9), (entry.target, 0.8)):
            for i, text in sorted(blocks.items()):
                if text.endswith(body):
                    picks.append({"index": i, "relevance": rel})
                    break
        return json.dumps(picks)

    return respond


def _step_of(user: str, body: str) -> int | None:
    m = re.search(r"^Step (\d+): " + re.escape(body) + "$", user, re.MULTILINE)
    return int(m.group(1)) if m else None


def scripted_generator(records: Sequence[dict] | None = None, suite_path: str | Path | None = None):
    entries = _entries(records, suite_path)

    def respond(request: ChatRequest) -> str:
        entry = entries.get(_question_of(request.user))
        if entry is None or "Reasoning Steps:" not in request.user:
            return REFUSAL
        a, b = _step_of(request.user, entry.bridge), _step_of(request.user, entry.target)
        if a is not None and b is not None and a < b:
            return entry.answer
        return REFUSAL

    return respond


def verbose_reasoner(records: Sequence[dict] | None = None, suite_path: str | Path | None = None,
                     rounds: int = 3):
    entries = _entries(records, suite_path)

    def respond(request: ChatRequest) -> str:
        entry = entries.get(_question_of(request.user))
        if entry is not None and entry.bridge in request.user and entry.target in request.user:
            thoughts = [f"The question asks: {entry.question}"]
            for r in range(rounds):
                thoughts.append(f"Looking at the evidence again (pass {r + 1}). It says {entry.bridge}")
                thoughts.append(f"It also says {entry.target} Wait, let me double-check that these connect.")
            thoughts.append(f"So the answer is {entry.answer}.")
            return "<think>" + "\n".join(thoughts) + "</think>\n" + entry.answer
        thoughts = ["The context doesn't mention where this person was born."]
        for r in range(rounds):
            thoughts.append(f"Hmm, let me think about what I know (attempt {r + 1}). Based on my knowledge I am not sure.")
        return "<think>" + "\n".join(thoughts) + "</think>\nI don't know"

    return respond


def suite_config(suite_path: str | Path, reranker: str | None = "scripted", generator: str = "scripted") -> dict:
    """A config mapping that runs the suite entirely on scripted mocks.

    ``reranker`` is ``scripted``, ``fallback`` (a mock whose replies never
    parse, so the pipeline keeps retriever order) or None; ``generator`` is
    ``scripted`` or ``verbose``.
    """
    args = {"suite_path": str(suite_path)}
    factory = "verbose_reasoner" if generator == "verbose" else "scripted_generator"
    gateways = {
        "generator": {"kind": "mock", "model_id": f"mock-{generator}",
                      "factory": f"chainrag.synthetic:{factory}", "factory_args": args},
    }
    if reranker == "scripted":
        gateways["reranker"] = {"kind": "mock", "model_id": "mock-reranker",
                                "factory": "chainrag.synthetic:scripted_reranker", "factory_args": args}
    elif reranker == "fallback":
        gateways["reranker"] = {"kind": "mock", "model_id": "mock-reranker",
                                "default": "I would rather not rank these."}
    elif reranker is not None:
        raise ValueError("reranker must be 'scripted', 'fallback' or None")
    return {"dataset": {"format": "synthetic", "path": str(suite_path)}, "sample_size": None, "gateways": gateways}
