"""Dataset ingestion, chunking and the on-disk corpus store.

A corpus directory holds three newline-delimited JSON files
(``documents.jsonl``, ``chunks.jsonl``, ``questions.jsonl``) and a
``manifest.json`` with record counts and a content hash over those files.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator

logger = logging.getLogger(__name__)

DEFAULT_CHUNK_SIZE = 1000
DEFAULT_CHUNK_STRIDE = 800

SUPPORTED_FORMATS = ("hotpotqa", "2wikimultihop", "musique", "multihop-rag", "synthetic")

_STORE_FILES = ("documents.jsonl", "chunks.jsonl", "questions.jsonl")


class DatasetFormatError(ValueError):
    """Raised when a dataset file does not match its declared format."""


@dataclass(frozen=True)
class Document:
    doc_id: str
    title: str
    body: str
    source: str = ""

    def __post_init__(self):
        if not self.body:
            raise ValueError(f"document {self.doc_id!r} has an empty body")


@dataclass(frozen=True)
class ContextChunk:
    chunk_id: str
    doc_id: str
    text: str
    char_span: tuple[int, int]
    # carried along for prompt rendering; not part of the chunk identity
    title: str = field(default="", compare=False)


@dataclass(frozen=True)
class QaInstance:
    question_id: str
    question: str
    gold_answers: tuple[str, ...]
    gold_support_ids: tuple[str, ...] = ()
    # the question's own paragraph pool, used for local-scope retrieval
    pool: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.gold_answers:
            raise ValueError(f"question {self.question_id!r} has no gold answers")


def chunk_document(
    doc: Document, size: int = DEFAULT_CHUNK_SIZE, stride: int = DEFAULT_CHUNK_STRIDE
) -> list[ContextChunk]:
    """Split ``doc.body`` into windows of ``size`` chars starting every ``stride`` chars."""
    if size <= 0 or stride <= 0:
        raise ValueError(f"chunk size and stride must be positive (got size={size}, stride={stride})")
    if stride > size:
        raise ValueError(f"stride {stride} exceeds size {size}; chunks would leave gaps")
    n = len(doc.body)
    chunks = []
    for i, start in enumerate(range(0, n, stride)):
        end = min(start + size, n)
        chunks.append(
            ContextChunk(
                chunk_id=f"{doc.doc_id}#{i}",
                doc_id=doc.doc_id,
                text=doc.body[start:end],
                char_span=(start, end),
                title=doc.title,
            )
        )
    return chunks


class Corpus:
    """Documents plus their chunks. Treated as immutable once built."""

    def __init__(
        self,
        documents: Iterable[Document] = (),
        chunk_size: int = DEFAULT_CHUNK_SIZE,
        chunk_stride: int = DEFAULT_CHUNK_STRIDE,
        source: str = "",
    ):
        self.chunk_size = chunk_size
        self.chunk_stride = chunk_stride
        self.source = source
        self.documents: dict[str, Document] = {}
        for doc in documents:
            if doc.doc_id in self.documents:
                raise ValueError(f"duplicate doc_id {doc.doc_id!r}")
            self.documents[doc.doc_id] = doc
        self.chunks: list[ContextChunk] = []
        for doc in self.documents.values():
            self.chunks.extend(chunk_document(doc, chunk_size, chunk_stride))
        self._chunk_by_id = {c.chunk_id: c for c in self.chunks}
        if len(self._chunk_by_id) != len(self.chunks):
            raise ValueError("chunk ids collide; doc_ids must not contain '#<digits>' suffixes")

    def __len__(self) -> int:
        return len(self.documents)

    def chunk(self, chunk_id: str) -> ContextChunk:
        return self._chunk_by_id[chunk_id]

    def chunks_for(self, doc_ids: Iterable[str]) -> list[ContextChunk]:
        wanted = set(doc_ids)
        return [c for c in self.chunks if c.doc_id in wanted]


# ---------------------------------------------------------------------------
# loaders
# ---------------------------------------------------------------------------


class _DocPool:
    """Collects documents across records, merging exact duplicates by id."""

    def __init__(self, source: str):
        self.source = source
        self.docs: dict[str, Document] = {}

    def add(self, doc_id: str, title: str, body: str) -> str:
        existing = self.docs.get(doc_id)
        if existing is None:
            self.docs[doc_id] = Document(doc_id, title, body, self.source)
            return doc_id
        if existing.body == body and existing.title == title:
            return doc_id
        raise ValueError(f"doc_id {doc_id!r} reused with different content")

    def add_titled(self, title: str, body: str) -> str:
        """Use the title as id; disambiguate same-titled paragraphs by a body hash."""
        existing = self.docs.get(title)
        if existing is None or (existing.body == body and existing.title == title):
            return self.add(title, title, body)
        alt = f"{title}~{hashlib.sha1(body.encode()).hexdigest()[:8]}"
        return self.add(alt, title, body)


def _read_records(path: Path) -> Iterator[tuple[int, Any]]:
    """Yield (record index, record) from a JSON array or a JSONL file."""
    text = path.read_text(encoding="utf-8")
    stripped = text.lstrip()
    if not stripped:
        return
    if stripped.startswith("["):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise DatasetFormatError(f"{path}: invalid JSON array: {e}") from e
        yield from enumerate(data)
        return
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            yield lineno, json.loads(line)
        except json.JSONDecodeError as e:
            raise DatasetFormatError(f"{path}: line {lineno}: invalid JSON: {e}") from e


def _load_synthetic(path: Path, pool: _DocPool):
    """Fields: question_id, question, gold_answers[], documents[{doc_id, title, body}], gold_support_ids[].

    A record may carry only documents (no question) or only a question.
    """
    questions = []
    for idx, rec in _read_records(path):
        where = f"{path}: record {idx}"
        if not isinstance(rec, dict):
            raise DatasetFormatError(f"{where}: expected an object")
        try:
            doc_ids = []
            for d in rec.get("documents", []):
                doc_ids.append(pool.add(str(d["doc_id"]), str(d.get("title", "")), str(d["body"])))
            if "question" in rec or "question_id" in rec:
                golds = rec["gold_answers"]
                if not isinstance(golds, list):
                    raise TypeError("gold_answers must be a list")
                questions.append(
                    QaInstance(
                        question_id=str(rec["question_id"]),
                        question=str(rec["question"]),
                        gold_answers=tuple(str(g) for g in golds),
                        gold_support_ids=tuple(str(s) for s in rec.get("gold_support_ids", [])),
                        pool=tuple(doc_ids),
                    )
                )
        except (KeyError, TypeError, ValueError) as e:
            raise DatasetFormatError(f"{where}: {type(e).__name__}: {e}") from e
    return questions


def _load_hotpot_like(path: Path, pool: _DocPool):
    """HotpotQA / 2WikiMultihopQA: _id, question, answer, context[[title, [sentences]]], supporting_facts[[title, idx]]."""
    questions = []
    for idx, rec in _read_records(path):
        where = f"{path}: record {idx}"
        try:
            title_to_id = {}
            doc_ids = []
            for title, sentences in rec["context"]:
                body = "".join(sentences) if isinstance(sentences, list) else str(sentences)
                if not body.strip():
                    continue
                doc_id = pool.add_titled(str(title), body)
                title_to_id[str(title)] = doc_id
                doc_ids.append(doc_id)
            support = []
            for fact in rec.get("supporting_facts", []):
                doc_id = title_to_id.get(str(fact[0]))
                if doc_id is not None and doc_id not in support:
                    support.append(doc_id)
            questions.append(
                QaInstance(
                    question_id=str(rec.get("_id", rec.get("id", idx))),
                    question=str(rec["question"]),
                    gold_answers=(str(rec["answer"]),),
                    gold_support_ids=tuple(support),
                    pool=tuple(doc_ids),
                )
            )
        except (KeyError, TypeError, ValueError, IndexError) as e:
            raise DatasetFormatError(f"{where}: {type(e).__name__}: {e}") from e
    return questions


def _load_musique(path: Path, pool: _DocPool):
    """MuSiQue: id, question, answer, answer_aliases[], paragraphs[{idx, title, paragraph_text, is_supporting}]."""
    questions = []
    for idx, rec in _read_records(path):
        where = f"{path}: record {idx}"
        try:
            doc_ids, support = [], []
            for para in rec["paragraphs"]:
                body = str(para["paragraph_text"])
                if not body.strip():
                    continue
                doc_id = pool.add_titled(str(para.get("title", "")), body)
                doc_ids.append(doc_id)
                if para.get("is_supporting"):
                    support.append(doc_id)
            golds = [str(rec["answer"])] + [str(a) for a in rec.get("answer_aliases", [])]
            questions.append(
                QaInstance(
                    question_id=str(rec.get("id", idx)),
                    question=str(rec["question"]),
                    gold_answers=tuple(dict.fromkeys(golds)),
                    gold_support_ids=tuple(support),
                    pool=tuple(doc_ids),
                )
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DatasetFormatError(f"{where}: {type(e).__name__}: {e}") from e
    return questions


def _load_multihop_rag(path: Path, pool: _DocPool):
    """MultiHop-RAG: query, answer, evidence_list[{title, fact}].

    ``path`` is either the query file alone (each evidence fact becomes a
    document) or a directory holding ``MultiHopRAG.json`` and the article
    corpus ``corpus.json`` ([{title, body}]), in which case retrieval runs over
    the articles and has no per-question pool.
    """
    corpus_path = None
    if path.is_dir():
        corpus_path = path / "corpus.json"
        path = path / "MultiHopRAG.json"
    title_to_id = {}
    if corpus_path is not None and corpus_path.exists():
        for idx, art in _read_records(corpus_path):
            try:
                title_to_id[str(art["title"])] = pool.add_titled(str(art["title"]), str(art["body"]))
            except (KeyError, TypeError, ValueError) as e:
                raise DatasetFormatError(f"{corpus_path}: record {idx}: {type(e).__name__}: {e}") from e
    questions = []
    for idx, rec in _read_records(path):
        where = f"{path}: record {idx}"
        try:
            doc_ids, support = [], []
            for ev in rec.get("evidence_list", []):
                title = str(ev["title"])
                if title_to_id:
                    doc_id = title_to_id.get(title)
                    if doc_id is None:
                        continue
                else:
                    doc_id = pool.add_titled(title, str(ev["fact"]))
                    doc_ids.append(doc_id)
                if doc_id not in support:
                    support.append(doc_id)
            questions.append(
                QaInstance(
                    question_id=str(rec.get("id", f"mhrag-{idx}")),
                    question=str(rec["query"]),
                    gold_answers=(str(rec["answer"]),),
                    gold_support_ids=tuple(support),
                    pool=tuple(dict.fromkeys(doc_ids)),
                )
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DatasetFormatError(f"{where}: {type(e).__name__}: {e}") from e
    return questions


_LOADERS = {
    "hotpotqa": _load_hotpot_like,
    "2wikimultihop": _load_hotpot_like,
    "musique": _load_musique,
    "multihop-rag": _load_multihop_rag,
    "synthetic": _load_synthetic,
}


def ingest_dataset(
    path: str | Path,
    fmt: str,
    out_dir: str | Path | None = None,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    chunk_stride: int = DEFAULT_CHUNK_STRIDE,
) -> tuple[Corpus, list[QaInstance]]:
    """Load a dataset file into a corpus and its questions, persisting to ``out_dir`` if given."""
    if fmt not in _LOADERS:
        raise DatasetFormatError(f"unknown dataset format {fmt!r}; supported: {', '.join(SUPPORTED_FORMATS)}")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    pool = _DocPool(fmt)
    questions = _LOADERS[fmt](path, pool)
    corpus = Corpus(pool.docs.values(), chunk_size, chunk_stride, source=fmt)
    logger.info(
        "ingested %s: %d documents, %d chunks, %d questions",
        path, len(corpus.documents), len(corpus.chunks), len(questions),
    )
    if out_dir is not None:
        save_corpus(out_dir, corpus, questions)
    return corpus, questions


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def _dumps(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True)


def save_corpus(out_dir: str | Path, corpus: Corpus, questions: list[QaInstance]) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = {
        "documents.jsonl": [
            _dumps({"doc_id": d.doc_id, "title": d.title, "body": d.body, "source": d.source})
            for d in corpus.documents.values()
        ],
        "chunks.jsonl": [
            _dumps({"chunk_id": c.chunk_id, "doc_id": c.doc_id, "start": c.char_span[0], "end": c.char_span[1]})
            for c in corpus.chunks
        ],
        "questions.jsonl": [
            _dumps({
                "question_id": q.question_id,
                "question": q.question,
                "gold_answers": list(q.gold_answers),
                "gold_support_ids": list(q.gold_support_ids),
                "pool": list(q.pool),
            })
            for q in questions
        ],
    }
    digest = hashlib.sha256()
    for name in _STORE_FILES:
        data = "".join(line + "\n" for line in lines[name]).encode("utf-8")
        (out / name).write_bytes(data)
        digest.update(name.encode() + b"\0" + data)
    manifest = {
        "format_version": 1,
        "source": corpus.source,
        "documents": len(corpus.documents),
        "chunks": len(corpus.chunks),
        "questions": len(questions),
        "chunk_size": corpus.chunk_size,
        "chunk_stride": corpus.chunk_stride,
        "content_hash": digest.hexdigest(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def read_manifest(corpus_dir: str | Path) -> dict:
    path = Path(corpus_dir) / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no corpus at {corpus_dir} (missing manifest.json); run `index` first")
    return json.loads(path.read_text())


def load_corpus(corpus_dir: str | Path) -> tuple[Corpus, list[QaInstance]]:
    root = Path(corpus_dir)
    manifest = read_manifest(root)
    docs = [Document(**json.loads(line)) for line in _lines(root / "documents.jsonl")]
    corpus = Corpus(docs, manifest["chunk_size"], manifest["chunk_stride"], source=manifest.get("source", ""))
    stored = [json.loads(line) for line in _lines(root / "chunks.jsonl")]
    if [(s["chunk_id"], s["start"], s["end"]) for s in stored] != [
        (c.chunk_id, *c.char_span) for c in corpus.chunks
    ]:
        raise ValueError(f"{root}: chunk table does not match documents and chunk parameters")
    questions = []
    for line in _lines(root / "questions.jsonl"):
        q = json.loads(line)
        questions.append(
            QaInstance(
                question_id=q["question_id"],
                question=q["question"],
                gold_answers=tuple(q["gold_answers"]),
                gold_support_ids=tuple(q["gold_support_ids"]),
                pool=tuple(q["pool"]),
            )
        )
    return corpus, questions


def _lines(path: Path) -> list[str]:
    return [line for line in path.read_text(encoding="utf-8").splitlines() if line]
