"""Document/paragraph/sentence corpus model and text ingestion.

The hierarchy is deliberately plain: a corpus is an ordered tuple of
documents, a document an ordered tuple of paragraphs, a paragraph an ordered
tuple of sentence strings. Everything is immutable after construction so a
corpus can be shared read-only across workers.
"""

from __future__ import annotations

import json
import re
import unicodedata
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import ConfigError, DataError

Sentence = str

_WS = re.compile(r"\s+")
_TERMINATOR = re.compile(r"[.!?]+(?= )")
_INITIAL = re.compile(r"[A-Z]\.")


def _load_default_abbreviations() -> frozenset[str]:
    text = resources.files("objforge.data").joinpath("abbreviations.txt").read_text("utf-8")
    return frozenset(line.strip() for line in text.splitlines() if line.strip())


@dataclass(frozen=True)
class Paragraph:
    """An ordered, non-empty run of sentences."""

    sentences: tuple[Sentence, ...]

    def __post_init__(self) -> None:
        if not self.sentences:
            raise DataError("paragraph must contain at least one sentence")
        for s in self.sentences:
            if not s.strip():
                raise DataError("sentences must be non-empty after trimming")

    def text(self) -> str:
        return " ".join(self.sentences)

    def __len__(self) -> int:
        return len(self.sentences)


@dataclass(frozen=True)
class Document:
    id: str
    paragraphs: tuple[Paragraph, ...]

    def __post_init__(self) -> None:
        if not self.paragraphs:
            raise DataError(f"document {self.id!r} has no paragraphs")


@dataclass(frozen=True)
class Corpus:
    documents: tuple[Document, ...]

    def __post_init__(self) -> None:
        if not self.documents:
            raise DataError("corpus is empty")
        ids = [d.id for d in self.documents]
        if len(set(ids)) != len(ids):
            raise DataError("document ids must be unique")

    def __len__(self) -> int:
        return len(self.documents)


@dataclass(frozen=True)
class Span:
    """Contiguous sentence range inside one paragraph, ends inclusive."""

    doc: int
    para: int
    start: int
    end: int

    def __post_init__(self) -> None:
        if self.start > self.end:
            raise DataError("span start must not exceed end")
        if self.start < 0:
            raise DataError("span indices must be non-negative")

    def indices(self) -> range:
        return range(self.start, self.end + 1)

    def extract(self, corpus: Corpus) -> tuple[Sentence, ...]:
        para = corpus.documents[self.doc].paragraphs[self.para]
        if self.end >= len(para):
            raise DataError("span exceeds paragraph bounds")
        return para.sentences[self.start : self.end + 1]

    def text(self, corpus: Corpus) -> str:
        return " ".join(self.extract(corpus))


@dataclass(frozen=True)
class CorpusStats:
    n_docs: int
    n_words: int
    words_per_doc: float
    paras_per_doc: float
    sents_per_para: float


@dataclass(frozen=True)
class SegmentationConfig:
    """Knobs for turning raw text into the corpus hierarchy.

    doc_delimiter: a line consisting solely of this marker starts a new
        document within one stream.
    id_prefix: document ids are the prefix plus a zero-padded running index.
    abbreviations: tokens (ending in '.') that never terminate a sentence;
        None loads the list shipped with the package.
    """

    doc_delimiter: str = "---DOC---"
    id_prefix: str = "doc-"
    abbreviations: frozenset[str] | None = None

    def abbreviation_set(self) -> frozenset[str]:
        if self.abbreviations is not None:
            return self.abbreviations
        return _load_default_abbreviations()


def normalize_text(text: str) -> str:
    """NFC-normalize and collapse all whitespace runs to single spaces."""
    return _WS.sub(" ", unicodedata.normalize("NFC", text)).strip()


def split_sentences(text: str, abbreviations: frozenset[str] | None = None) -> list[Sentence]:
    """Split a paragraph into sentences.

    A sentence boundary is a run of '.', '!' or '?' followed by whitespace and
    an uppercase character, unless the word ending at the terminator is a
    known abbreviation or a single-letter initial. Joining the result with
    single spaces reproduces the whitespace-normalized input exactly.
    """
    if abbreviations is None:
        abbreviations = _load_default_abbreviations()
    norm = normalize_text(text)
    if not norm:
        raise DataError("cannot split empty text")

    breaks: list[int] = []
    for m in _TERMINATOR.finditer(norm):
        after = m.end() + 1
        if after >= len(norm) or not norm[after].isupper():
            continue
        word_start = norm.rfind(" ", 0, m.start()) + 1
        word = norm[word_start : m.end()]
        if word in abbreviations or _INITIAL.fullmatch(word):
            continue
        breaks.append(m.end())

    sentences: list[Sentence] = []
    prev = 0
    for b in breaks:
        sentences.append(norm[prev:b])
        prev = b + 1
    sentences.append(norm[prev:])
    return sentences


def ingest_text(stream: str, cfg: SegmentationConfig | None = None) -> Corpus:
    """Segment one raw text stream into a corpus.

    Documents are delimited by cfg.doc_delimiter lines, paragraphs by blank
    lines, sentences by split_sentences. Blank paragraphs and delimiter-only
    documents are dropped; a stream with no surviving content is an error.
    """
    if cfg is None:
        cfg = SegmentationConfig()
    abbrevs = cfg.abbreviation_set()

    blocks: list[list[str]] = [[]]
    for line in stream.splitlines():
        if line.strip() == cfg.doc_delimiter:
            blocks.append([])
        else:
            blocks[-1].append(line)

    documents: list[Document] = []
    for block in blocks:
        paragraphs: list[Paragraph] = []
        current: list[str] = []
        for line in block + [""]:
            if line.strip():
                current.append(line)
                continue
            if current:
                para_text = normalize_text(" ".join(current))
                current = []
                if para_text:
                    paragraphs.append(Paragraph(tuple(split_sentences(para_text, abbrevs))))
        if paragraphs:
            doc_id = f"{cfg.id_prefix}{len(documents):06d}"
            documents.append(Document(doc_id, tuple(paragraphs)))

    if not documents:
        raise DataError("no documents found in input stream")
    return Corpus(tuple(documents))


def corpus_stats(c: Corpus) -> CorpusStats:
    """Exact counts plus arithmetic means over the hierarchy."""
    n_docs = len(c.documents)
    n_paras = sum(len(d.paragraphs) for d in c.documents)
    n_sents = sum(len(p) for d in c.documents for p in d.paragraphs)
    n_words = sum(
        len(s.split()) for d in c.documents for p in d.paragraphs for s in p.sentences
    )
    return CorpusStats(
        n_docs=n_docs,
        n_words=n_words,
        words_per_doc=n_words / n_docs,
        paras_per_doc=n_paras / n_docs,
        sents_per_para=n_sents / n_paras,
    )


def _contiguous_runs(usable: list[int]) -> list[tuple[int, int]]:
    runs: list[tuple[int, int]] = []
    for i in usable:
        if runs and i == runs[-1][1] + 1:
            runs[-1] = (runs[-1][0], i)
        else:
            runs.append((i, i))
    return runs


def sample_span(
    p: Paragraph,
    len_dist: Mapping[int, float],
    rng: np.random.Generator,
    exclude: set[int] | None = None,
    ref: tuple[int, int] = (0, 0),
) -> Span:
    """Draw a contiguous sentence span from a paragraph.

    The target length comes from len_dist and is truncated to the longest
    contiguous room left after removing `exclude`; the start position is then
    uniform over every placement of that length. `ref` fills the span's
    (doc, para) coordinates for the caller.
    """
    if not len_dist:
        raise ConfigError("length distribution is empty")
    lengths = sorted(len_dist)
    probs = np.array([len_dist[k] for k in lengths], dtype=np.float64)
    if (probs < 0).any() or probs.sum() <= 0:
        raise ConfigError("length distribution must have non-negative mass")
    if lengths[0] < 1:
        raise ConfigError("span lengths must be at least 1")
    probs = probs / probs.sum()

    excluded = exclude or set()
    usable = [i for i in range(len(p)) if i not in excluded]
    if not usable:
        raise DataError("no usable sentences outside the excluded set")
    runs = _contiguous_runs(usable)
    room = max(e - s + 1 for s, e in runs)

    target = int(rng.choice(np.array(lengths), p=probs))
    length = min(target, room)
    starts = [s for s, e in runs for s in range(s, e - length + 2)]
    start = int(starts[rng.integers(len(starts))])
    return Span(doc=ref[0], para=ref[1], start=start, end=start + length - 1)


def load_corpus_jsonl(path: str | Path) -> Corpus:
    """Read one document per line: {"id": ..., "paragraphs": [[sentence, ...], ...]}."""
    documents: list[Document] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(rec, dict) or "id" not in rec or "paragraphs" not in rec:
                raise DataError(f"{path}:{lineno}: expected object with id and paragraphs")
            paragraphs = tuple(
                Paragraph(tuple(str(s) for s in sents)) for sents in rec["paragraphs"]
            )
            documents.append(Document(str(rec["id"]), paragraphs))
    if not documents:
        raise DataError(f"{path}: no documents")
    return Corpus(tuple(documents))


def save_corpus_jsonl(c: Corpus, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in c.documents:
            rec = {"id": doc.id, "paragraphs": [list(p.sentences) for p in doc.paragraphs]}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def corpus_from_lists(docs: Iterable[tuple[str, list[list[str]]]]) -> Corpus:
    """Build a corpus from (id, paragraphs-as-lists) pairs. Test/tooling helper."""
    documents = tuple(
        Document(doc_id, tuple(Paragraph(tuple(sents)) for sents in paras))
        for doc_id, paras in docs
    )
    return Corpus(documents)
