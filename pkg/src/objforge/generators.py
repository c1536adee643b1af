"""Structural example generators.

Every generator walks the corpus in a fixed order, assigns one group index
per eligible unit (paragraph, document, or pivot sentence), and derives that
group's random stream from (seed, objective, group index) alone. A group
emits one positive and its negatives, or nothing when a draw leaves no legal
material; either way the index is consumed, so any contiguous slice of group
indices reproduces exactly the same examples regardless of sharding.

Emitted examples carry full provenance (document/paragraph/sentence indices)
so labels can be re-derived from the corpus without trusting the generator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .corpus import Corpus, Paragraph, Span, sample_span
from .errors import ConfigError, DataError
from .rng import group_stream

LEFT_LENGTH_DIST = {1: 0.70, 2: 0.20, 3: 0.10}
RIGHT_LENGTH_DIST = {1: 0.14, 2: 0.24, 3: 0.24, 4: 0.24, 5: 0.14}

POSITIVE = "positive"
HARD = "hard_negative"
EASY = "easy_negative"

_PAIR_GROUP = 4  # negatives per positive for the pairwise objectives


def sample_left_length(rng: np.random.Generator) -> int:
    """Question-side span length: 1..3 at 70/20/10."""
    return int(rng.choice([1, 2, 3], p=[0.70, 0.20, 0.10]))


def sample_right_length(rng: np.random.Generator) -> int:
    """Answer-side span length: 1..5 at 14/24/24/24/14."""
    return int(rng.choice([1, 2, 3, 4, 5], p=[0.14, 0.24, 0.24, 0.24, 0.14]))


@dataclass(frozen=True)
class NegativeQuota:
    """Requested negative counts: k1 hard, k2 easy, k3 for the three-way form."""

    k1: int
    k2: int
    k3: int | None = None

    def __post_init__(self) -> None:
        if self.k1 < 0 or self.k2 < 0 or (self.k3 is not None and self.k3 < 0):
            raise ConfigError("negative counts must be non-negative")
        if self.k3 is None and self.k1 + self.k2 != _PAIR_GROUP:
            raise ConfigError(f"pairwise quota must satisfy k1 + k2 = {_PAIR_GROUP}")

    @property
    def total(self) -> int:
        return self.k1 + self.k2 + (self.k3 or 0)


@dataclass(frozen=True)
class PairExample:
    left: str
    right: str
    label: str
    objective: str
    provenance: dict

    def __post_init__(self) -> None:
        if not self.left or not self.right:
            raise DataError("pair texts must be non-empty")


@dataclass(frozen=True)
class JointExample:
    pivot: str
    candidates: tuple[str, ...]
    labels: tuple[int, ...]
    provenance: dict

    def __post_init__(self) -> None:
        if len(self.candidates) != len(self.labels):
            raise DataError("candidates and labels must align")
        if any(y not in (0, 1) for y in self.labels):
            raise DataError("labels must be binary")


@dataclass(frozen=True)
class ContextExample:
    a: str
    b: str
    context: str
    label: str
    context_kind: str
    provenance: dict

    def __post_init__(self) -> None:
        if not self.a or not self.b or not self.context:
            raise DataError("context example texts must be non-empty")


@dataclass(frozen=True)
class SummaryExample:
    source: str
    target: str
    provenance: dict

    def __post_init__(self) -> None:
        if not self.source or not self.target:
            raise DataError("summary texts must be non-empty")


def _span_prov(span: Span) -> dict:
    return {
        "doc": int(span.doc),
        "para": int(span.para),
        "span": [int(span.start), int(span.end)],
    }


def _para_prov(doc: int, para: int) -> dict:
    return {"doc": int(doc), "para": int(para)}


def _group_bounds(start: int, stop: int | None, g: int) -> bool | None:
    """True: process. False: skip (before window). None: stop iteration."""
    if g < start:
        return False
    if stop is not None and g >= stop:
        return None
    return True


def _other_doc(rng: np.random.Generator, n_docs: int, d: int) -> int:
    j = int(rng.integers(n_docs - 1))
    return j + (j >= d)


def _choose(rng: np.random.Generator, n: int, k: int) -> list[int]:
    return [int(i) for i in rng.choice(n, size=k, replace=False)]


def _shrink_to_leave_room(para: Paragraph, span: Span) -> Span:
    """Drop the last sentence of a span that swallowed its whole paragraph."""
    if span.start == 0 and span.end == len(para) - 1:
        return Span(span.doc, span.para, span.start, span.end - 1)
    return span


def _remainder(para: Paragraph, removed: set[int]) -> str:
    keep = [s for i, s in enumerate(para.sentences) if i not in removed]
    return " ".join(keep)


def gen_ssp(
    c: Corpus,
    quota: NegativeQuota | None = None,
    seed: int = 0,
    start: int = 0,
    stop: int | None = None,
) -> Iterator[PairExample]:
    """Span pairs from one paragraph vs spans from elsewhere.

    Positive: two sentence-disjoint spans of the same paragraph. Hard
    negatives take the right span from a different paragraph of the same
    document; easy negatives take it from another document. Hard shortfall
    backfills easy so every full group is 1 positive + 4 negatives.
    """
    quota = quota or NegativeQuota(2, 2)
    if quota.k3 is not None:
        raise ConfigError("pairwise objectives use the two-way quota")
    if len(c.documents) < 2:
        raise DataError("easy negatives need at least two documents")
    units = [
        (d, p)
        for d, doc in enumerate(c.documents)
        for p in range(len(doc.paragraphs))
        if len(doc.paragraphs[p]) >= 2
    ]
    if not units:
        raise DataError("no paragraph can host two disjoint spans")
    for g, (d, p) in enumerate(units):
        state = _group_bounds(start, stop, g)
        if state is None:
            break
        if not state:
            continue
        rng = group_stream(seed, "ssp", g)
        doc = c.documents[d]
        para = doc.paragraphs[p]
        left = sample_span(para, LEFT_LENGTH_DIST, rng, ref=(d, p))
        try:
            right = sample_span(
                para, RIGHT_LENGTH_DIST, rng, exclude=set(left.indices()), ref=(d, p)
            )
        except DataError:
            continue
        yield PairExample(
            left.text(c), right.text(c), POSITIVE, "ssp",
            {"l": _span_prov(left), "r": _span_prov(right)},
        )
        others = [j for j in range(len(doc.paragraphs)) if j != p]
        k1 = min(quota.k1, len(others))
        for pick in _choose(rng, len(others), k1):
            j = others[pick]
            span = sample_span(doc.paragraphs[j], RIGHT_LENGTH_DIST, rng, ref=(d, j))
            yield PairExample(
                left.text(c), span.text(c), HARD, "ssp",
                {"l": _span_prov(left), "r": _span_prov(span)},
            )
        for _ in range(quota.total - k1):
            d2 = _other_doc(rng, len(c.documents), d)
            paras2 = c.documents[d2].paragraphs
            p2 = int(rng.integers(len(paras2)))
            span = sample_span(paras2[p2], RIGHT_LENGTH_DIST, rng, ref=(d2, p2))
            yield PairExample(
                left.text(c), span.text(c), EASY, "ssp",
                {"l": _span_prov(left), "r": _span_prov(span)},
            )


def _removal_prov(doc: int, para: int, removed: Sequence[int]) -> dict:
    return {"doc": int(doc), "para": int(para), "removed": sorted(int(i) for i in removed)}


def gen_sp(
    c: Corpus,
    quota: NegativeQuota | None = None,
    seed: int = 0,
    start: int = 0,
    stop: int | None = None,
) -> Iterator[PairExample]:
    """Span vs the paragraph it was cut from.

    Positive right side is the span's own paragraph with the span removed; a
    draw that removes everything skips the group. Negatives remove a fresh
    span from some other paragraph (same document: hard, other document:
    easy) and present what remains.
    """
    quota = quota or NegativeQuota(2, 2)
    if quota.k3 is not None:
        raise ConfigError("pairwise objectives use the two-way quota")
    if len(c.documents) < 2:
        raise DataError("easy negatives need at least two documents")
    units = [
        (d, p)
        for d, doc in enumerate(c.documents)
        for p in range(len(doc.paragraphs))
        if len(doc.paragraphs[p]) >= 2
    ]
    if not units:
        raise DataError("no paragraph large enough to leave a remainder")

    def reduced(doc_i: int, para_i: int, rng: np.random.Generator) -> tuple[str, dict]:
        para2 = c.documents[doc_i].paragraphs[para_i]
        span = sample_span(para2, LEFT_LENGTH_DIST, rng, ref=(doc_i, para_i))
        span = _shrink_to_leave_room(para2, span)
        text = _remainder(para2, set(span.indices()))
        return text, _removal_prov(doc_i, para_i, span.indices())

    for g, (d, p) in enumerate(units):
        state = _group_bounds(start, stop, g)
        if state is None:
            break
        if not state:
            continue
        rng = group_stream(seed, "sp", g)
        doc = c.documents[d]
        para = doc.paragraphs[p]
        left = sample_span(para, LEFT_LENGTH_DIST, rng, ref=(d, p))
        removed = set(left.indices())
        if len(removed) == len(para):
            continue
        yield PairExample(
            left.text(c), _remainder(para, removed), POSITIVE, "sp",
            {"l": _span_prov(left), "r": _removal_prov(d, p, left.indices())},
        )
        others = [j for j in range(len(doc.paragraphs)) if j != p and len(doc.paragraphs[j]) >= 2]
        k1 = min(quota.k1, len(others))
        for pick in _choose(rng, len(others), k1):
            text, prov = reduced(d, others[pick], rng)
            yield PairExample(
                left.text(c), text, HARD, "sp", {"l": _span_prov(left), "r": prov}
            )
        for _ in range(quota.total - k1):
            while True:
                d2 = _other_doc(rng, len(c.documents), d)
                cands = [
                    j for j in range(len(c.documents[d2].paragraphs))
                    if len(c.documents[d2].paragraphs[j]) >= 2
                ]
                if cands:
                    break
            p2 = cands[int(rng.integers(len(cands)))]
            text, prov = reduced(d2, p2, rng)
            yield PairExample(
                left.text(c), text, EASY, "sp", {"l": _span_prov(left), "r": prov}
            )


def gen_psd(
    c: Corpus, seed: int = 0, start: int = 0, stop: int | None = None
) -> Iterator[PairExample]:
    """Whole-paragraph pairs: same document vs different documents.

    One group per document with at least two paragraphs: a positive pair of
    two distinct paragraphs, then four negatives pairing the same left
    paragraph with paragraphs of other documents. No easy/hard distinction
    and no cropping.
    """
    if len(c.documents) < 2:
        raise DataError("negatives need at least two documents")
    units = [d for d, doc in enumerate(c.documents) if len(doc.paragraphs) >= 2]
    if not units:
        raise DataError("no document has two paragraphs")
    for g, d in enumerate(units):
        state = _group_bounds(start, stop, g)
        if state is None:
            break
        if not state:
            continue
        rng = group_stream(seed, "psd", g)
        doc = c.documents[d]
        j, l = _choose(rng, len(doc.paragraphs), 2)
        left_text = doc.paragraphs[j].text()
        yield PairExample(
            left_text, doc.paragraphs[l].text(), POSITIVE, "psd",
            {"l": _para_prov(d, j), "r": _para_prov(d, l)},
        )
        for _ in range(_PAIR_GROUP):
            d2 = _other_doc(rng, len(c.documents), d)
            p2 = int(rng.integers(len(c.documents[d2].paragraphs)))
            yield PairExample(
                left_text, c.documents[d2].paragraphs[p2].text(), EASY, "psd",
                {"l": _para_prov(d, j), "r": _para_prov(d2, p2)},
            )


def _sentence_prov(doc: int, para: int, sent: int) -> dict:
    return {"doc": int(doc), "para": int(para), "sent": int(sent)}


def gen_mspp(
    c: Corpus,
    k: int = 5,
    quota: NegativeQuota | None = None,
    seed: int = 0,
    start: int = 0,
    stop: int | None = None,
) -> Iterator[JointExample]:
    """Pivot sentence against k candidates, labeled same-paragraph or not.

    Per pivot: k1 candidates from its own paragraph (label 1), k2 from other
    paragraphs of its document, k3 from other documents; shortfalls in k1/k2
    roll into k3. Candidates and labels are shuffled together.
    """
    quota = quota or NegativeQuota(1, 2, 2)
    if quota.k3 is None:
        raise ConfigError("this objective needs the three-way quota")
    if quota.total != k:
        raise ConfigError(f"quota totals {quota.total}, but k={k}")
    if len(c.documents) < 2:
        raise DataError("cross-document candidates need at least two documents")
    units = [
        (d, p, s)
        for d, doc in enumerate(c.documents)
        for p, para in enumerate(doc.paragraphs)
        for s in range(len(para))
    ]
    for g, (d, p, s) in enumerate(units):
        state = _group_bounds(start, stop, g)
        if state is None:
            break
        if not state:
            continue
        rng = group_stream(seed, "mspp", g)
        doc = c.documents[d]
        para = doc.paragraphs[p]

        same = [i for i in range(len(para)) if i != s]
        k1 = min(quota.k1, len(same))
        picks = [same[i] for i in _choose(rng, len(same), k1)]
        cands = [(d, p, i) for i in picks]

        other_sents = [
            (p2, s2)
            for p2 in range(len(doc.paragraphs))
            if p2 != p
            for s2 in range(len(doc.paragraphs[p2]))
        ]
        k2 = min(quota.k2, len(other_sents))
        cands += [(d, *other_sents[i]) for i in _choose(rng, len(other_sents), k2)]

        for _ in range(k - k1 - k2):
            d2 = _other_doc(rng, len(c.documents), d)
            doc2 = c.documents[d2]
            p2 = int(rng.integers(len(doc2.paragraphs)))
            s2 = int(rng.integers(len(doc2.paragraphs[p2])))
            cands.append((d2, p2, s2))

        labels = [1] * k1 + [0] * (k - k1)
        perm = rng.permutation(k)
        cands = [cands[i] for i in perm]
        labels = [labels[i] for i in perm]
        yield JointExample(
            pivot=para.sentences[s],
            candidates=tuple(
                c.documents[dd].paragraphs[pp].sentences[ss] for dd, pp, ss in cands
            ),
            labels=tuple(labels),
            provenance={
                "pivot": _sentence_prov(d, p, s),
                "cands": [_sentence_prov(*t) for t in cands],
            },
        )


def _context_units(c: Corpus, min_para_len: int, skip_first: bool) -> list[tuple[int, int]]:
    lo = 1 if skip_first else 0
    return [
        (d, p)
        for d, doc in enumerate(c.documents)
        for p in range(lo, len(doc.paragraphs))
        if len(doc.paragraphs[p]) >= min_para_len
    ]


def _pivot_spans(
    c: Corpus, d: int, p: int, rng: np.random.Generator
) -> tuple[Span, Span] | None:
    """Disjoint (a, b) spans from one paragraph, or None if b has no room."""
    para = c.documents[d].paragraphs[p]
    a = sample_span(para, LEFT_LENGTH_DIST, rng, ref=(d, p))
    try:
        b = sample_span(
            para, RIGHT_LENGTH_DIST, rng, exclude=set(a.indices()), ref=(d, p)
        )
    except DataError:
        return None
    return a, b


def gen_sdc(
    c: Corpus, seed: int = 0, start: int = 0, stop: int | None = None
) -> Iterator[ContextExample]:
    """Sentence pairs judged against the opening paragraph of b's document.

    a and b come from one non-first paragraph (positive); hard negatives move
    b to another non-first paragraph of the same document, easy negatives to
    a non-first paragraph of another document. The context is always the
    first paragraph of whichever document b lives in.
    """
    units = _context_units(c, min_para_len=2, skip_first=True)
    if not units:
        raise DataError("no non-first paragraph can host two disjoint spans")
    multi = [d for d, doc in enumerate(c.documents) if len(doc.paragraphs) >= 2]
    if len(multi) < 2:
        raise DataError("easy negatives need another multi-paragraph document")
    multi_set = set(multi)
    for g, (d, p) in enumerate(units):
        state = _group_bounds(start, stop, g)
        if state is None:
            break
        if not state:
            continue
        rng = group_stream(seed, "sdc", g)
        doc = c.documents[d]
        drawn = _pivot_spans(c, d, p, rng)
        if drawn is None:
            continue
        a, b = drawn

        def emit(b_span: Span, label: str) -> ContextExample:
            ctx_doc = b_span.doc
            return ContextExample(
                a=a.text(c),
                b=b_span.text(c),
                context=c.documents[ctx_doc].paragraphs[0].text(),
                label=label,
                context_kind="sdc",
                provenance={
                    "a": _span_prov(a),
                    "b": _span_prov(b_span),
                    "c": _para_prov(ctx_doc, 0),
                },
            )

        yield emit(b, POSITIVE)
        others = [j for j in range(1, len(doc.paragraphs)) if j != p]
        k1 = min(2, len(others))
        for pick in _choose(rng, len(others), k1):
            j = others[pick]
            span = sample_span(doc.paragraphs[j], RIGHT_LENGTH_DIST, rng, ref=(d, j))
            yield emit(span, HARD)
        easy_docs = sorted(multi_set - {d})
        for _ in range(_PAIR_GROUP - k1):
            d2 = easy_docs[int(rng.integers(len(easy_docs)))]
            doc2 = c.documents[d2]
            p2 = 1 + int(rng.integers(len(doc2.paragraphs) - 1))
            span = sample_span(doc2.paragraphs[p2], RIGHT_LENGTH_DIST, rng, ref=(d2, p2))
            yield emit(span, EASY)


def gen_dpc(
    c: Corpus, seed: int = 0, start: int = 0, stop: int | None = None
) -> Iterator[ContextExample]:
    """Sentence pairs judged against a paragraph with the pair removed.

    Positive context is a and b's own paragraph minus both spans (removing
    them is what makes the task non-trivial); negatives remove a fresh b span
    from some other paragraph and keep the rest as context.
    """
    units = [
        (d, p)
        for d, doc in enumerate(c.documents)
        for p in range(len(doc.paragraphs))
        if len(doc.paragraphs[p]) >= 3
    ]
    if not units:
        raise DataError("no paragraph can host two spans and a remainder")
    if len(c.documents) < 2:
        raise DataError("easy negatives need at least two documents")

    def reduced_context(
        d2: int, p2: int, rng: np.random.Generator
    ) -> tuple[Span, str, dict]:
        para2 = c.documents[d2].paragraphs[p2]
        span = sample_span(para2, RIGHT_LENGTH_DIST, rng, ref=(d2, p2))
        span = _shrink_to_leave_room(para2, span)
        text = _remainder(para2, set(span.indices()))
        return span, text, _removal_prov(d2, p2, span.indices())

    for g, (d, p) in enumerate(units):
        state = _group_bounds(start, stop, g)
        if state is None:
            break
        if not state:
            continue
        rng = group_stream(seed, "dpc", g)
        doc = c.documents[d]
        para = doc.paragraphs[p]
        drawn = _pivot_spans(c, d, p, rng)
        if drawn is None:
            continue
        a, b = drawn
        removed = set(a.indices()) | set(b.indices())
        if len(removed) == len(para):
            continue
        a_text = a.text(c)
        yield ContextExample(
            a=a_text,
            b=b.text(c),
            context=_remainder(para, removed),
            label=POSITIVE,
            context_kind="dpc",
            provenance={
                "a": _span_prov(a),
                "b": _span_prov(b),
                "c": _removal_prov(d, p, sorted(removed)),
            },
        )
        others = [j for j in range(len(doc.paragraphs)) if j != p and len(doc.paragraphs[j]) >= 2]
        k1 = min(2, len(others))
        for pick in _choose(rng, len(others), k1):
            span, text, prov = reduced_context(d, others[pick], rng)
            yield ContextExample(
                a_text, span.text(c), text, HARD, "dpc",
                {"a": _span_prov(a), "b": _span_prov(span), "c": prov},
            )
        for _ in range(_PAIR_GROUP - k1):
            while True:
                d2 = _other_doc(rng, len(c.documents), d)
                cands = [
                    j for j in range(len(c.documents[d2].paragraphs))
                    if len(c.documents[d2].paragraphs[j]) >= 2
                ]
                if cands:
                    break
            p2 = cands[int(rng.integers(len(cands)))]
            span, text, prov = reduced_context(d2, p2, rng)
            yield ContextExample(
                a_text, span.text(c), text, EASY, "dpc",
                {"a": _span_prov(a), "b": _span_prov(span), "c": prov},
            )


def _neighbors(para: Paragraph, span: Span, banned: set[int]) -> list[int]:
    out = []
    if span.start - 1 >= 0 and span.start - 1 not in banned:
        out.append(span.start - 1)
    if span.end + 1 < len(para) and span.end + 1 not in banned:
        out.append(span.end + 1)
    return out


def gen_dslc(
    c: Corpus, seed: int = 0, start: int = 0, stop: int | None = None
) -> Iterator[ContextExample]:
    """Sentence pairs judged against b's immediate neighborhood.

    The context is whichever of b's adjacent sentences exist, never including
    a sentence of a; groups where no neighbor survives are skipped. Negatives
    draw b from another paragraph (same or other document) where a cannot
    collide, shrinking a whole-paragraph b so one neighbor always remains.
    """
    units = [
        (d, p)
        for d, doc in enumerate(c.documents)
        for p in range(len(doc.paragraphs))
        if len(doc.paragraphs[p]) >= 2
    ]
    if not units:
        raise DataError("no paragraph can host a span plus a neighbor")
    if len(c.documents) < 2:
        raise DataError("easy negatives need at least two documents")

    def context_for(d2: int, p2: int, span: Span, banned: set[int]) -> tuple[str, dict] | None:
        para2 = c.documents[d2].paragraphs[p2]
        idx = _neighbors(para2, span, banned)
        if not idx:
            return None
        text = " ".join(para2.sentences[i] for i in idx)
        return text, {"doc": int(d2), "para": int(p2), "sentences": idx}

    for g, (d, p) in enumerate(units):
        state = _group_bounds(start, stop, g)
        if state is None:
            break
        if not state:
            continue
        rng = group_stream(seed, "dslc", g)
        doc = c.documents[d]
        drawn = _pivot_spans(c, d, p, rng)
        if drawn is None:
            continue
        a, b = drawn
        ctx = context_for(d, p, b, set(a.indices()))
        if ctx is None:
            continue
        a_text = a.text(c)

        def emit(b_span: Span, ctx_pair: tuple[str, dict], label: str) -> ContextExample:
            return ContextExample(
                a=a_text,
                b=b_span.text(c),
                context=ctx_pair[0],
                label=label,
                context_kind="dslc",
                provenance={
                    "a": _span_prov(a),
                    "b": _span_prov(b_span),
                    "c": ctx_pair[1],
                },
            )

        yield emit(b, ctx, POSITIVE)
        others = [j for j in range(len(doc.paragraphs)) if j != p and len(doc.paragraphs[j]) >= 2]
        k1 = min(2, len(others))
        emitted_hard = 0
        for pick in _choose(rng, len(others), k1):
            j = others[pick]
            para_j = doc.paragraphs[j]
            span = _shrink_to_leave_room(
                para_j, sample_span(para_j, RIGHT_LENGTH_DIST, rng, ref=(d, j))
            )
            ctx2 = context_for(d, j, span, set())
            assert ctx2 is not None  # shrink guarantees a neighbor
            yield emit(span, ctx2, HARD)
            emitted_hard += 1
        for _ in range(_PAIR_GROUP - emitted_hard):
            while True:
                d2 = _other_doc(rng, len(c.documents), d)
                cands = [
                    j for j in range(len(c.documents[d2].paragraphs))
                    if len(c.documents[d2].paragraphs[j]) >= 2
                ]
                if cands:
                    break
            p2 = cands[int(rng.integers(len(cands)))]
            para2 = c.documents[d2].paragraphs[p2]
            span = _shrink_to_leave_room(
                para2, sample_span(para2, RIGHT_LENGTH_DIST, rng, ref=(d2, p2))
            )
            ctx2 = context_for(d2, p2, span, set())
            assert ctx2 is not None
            yield emit(span, ctx2, EASY)


def gen_sds(
    c: Corpus, min_sentences: int = 2, min_chars: int = 50
) -> Iterator[SummaryExample]:
    """Opening paragraph as the target, everything after it as the source.

    Single-paragraph documents and documents whose opening paragraph is
    shorter than min_sentences sentences or min_chars characters are skipped.
    """
    for d, doc in enumerate(c.documents):
        if len(doc.paragraphs) < 2:
            continue
        first = doc.paragraphs[0]
        target = first.text()
        if len(first) < min_sentences or len(target) < min_chars:
            continue
        source = "\n\n".join(p.text() for p in doc.paragraphs[1:])
        yield SummaryExample(source=source, target=target, provenance={"doc": d})


def save_pair_jsonl(examples, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in examples:
            fh.write(
                json.dumps(
                    {
                        "l": e.left,
                        "r": e.right,
                        "y": e.label,
                        "obj": e.objective,
                        "prov": e.provenance,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_pair_jsonl(path: str | Path) -> list[PairExample]:
    return [
        PairExample(r["l"], r["r"], r["y"], r["obj"], r["prov"])
        for r in _read_jsonl(path, ("l", "r", "y", "obj", "prov"))
    ]


def save_joint_jsonl(examples, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in examples:
            fh.write(
                json.dumps(
                    {
                        "pivot": e.pivot,
                        "cands": list(e.candidates),
                        "ys": list(e.labels),
                        "prov": e.provenance,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_joint_jsonl(path: str | Path) -> list[JointExample]:
    return [
        JointExample(r["pivot"], tuple(r["cands"]), tuple(r["ys"]), r["prov"])
        for r in _read_jsonl(path, ("pivot", "cands", "ys", "prov"))
    ]


def save_context_jsonl(examples, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in examples:
            fh.write(
                json.dumps(
                    {
                        "a": e.a,
                        "b": e.b,
                        "c": e.context,
                        "y": e.label,
                        "kind": e.context_kind,
                        "prov": e.provenance,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_context_jsonl(path: str | Path) -> list[ContextExample]:
    return [
        ContextExample(r["a"], r["b"], r["c"], r["y"], r["kind"], r["prov"])
        for r in _read_jsonl(path, ("a", "b", "c", "y", "kind", "prov"))
    ]


def save_summary_jsonl(examples, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in examples:
            fh.write(
                json.dumps(
                    {"src": e.source, "tgt": e.target, "prov": e.provenance},
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_summary_jsonl(path: str | Path) -> list[SummaryExample]:
    return [
        SummaryExample(r["src"], r["tgt"], r.get("prov", {}))
        for r in _read_jsonl(path, ("src", "tgt"))
    ]


def shard_name(objective: str, shard: int) -> str:
    return f"{objective}-{shard:05d}.jsonl"


def _read_jsonl(path: str | Path, required: tuple[str, ...]) -> Iterator[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            for key in required:
                if key not in rec:
                    raise DataError(f"{path}:{lineno}: missing field {key!r}")
            yield rec
