"""Subword vocabulary training and application.

Three trainers share one vocabulary container: pair-merge training with
frequency selection (train_bpe), pair-merge training with likelihood-ratio
selection (train_wordpiece), and prune-down unigram training (train_unigram).
Encoding is greedy longest-match for merge vocabularies and most-likely
segmentation for unigram ones, either per word or over a whitespace-as-symbol
stream.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping

from .corpus import Corpus, normalize_text
from .errors import ConfigError, DataError

WORD_BOUNDARY = "word-boundary"
WHITESPACE_SYMBOL = "whitespace-as-symbol"
WORD_MARK = "Ġ"  # rendered "Ġ" in interchange files

SPECIAL_NAMES = ("pad", "unk", "mask", "bos", "eos")
SPECIAL_GLYPHS = ("<pad>", "<unk>", "<mask>", "<bos>", "<eos>")

# Unknown characters cost this much log-prob in most-likely segmentation so
# they are only chosen when nothing in the vocabulary covers a position.
_UNK_LOGP = -1e9


@dataclass(frozen=True)
class TokenSequence:
    """Token ids plus a word-start flag per position."""

    ids: tuple[int, ...]
    boundary_marks: tuple[bool, ...]

    def __post_init__(self) -> None:
        if len(self.ids) != len(self.boundary_marks):
            raise DataError("ids and boundary_marks must have equal length")

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class Vocabulary:
    """Ordered token inventory; position in `tokens` is the token id.

    The five specials occupy ids 0..4; learned tokens follow. `merges`
    records pair-merge order for merge-trained vocabularies; `unigram_probs`
    holds the final unigram model for prune-trained ones.
    """

    tokens: tuple[str, ...]
    merges: tuple[tuple[str, str], ...] = ()
    unigram_probs: Mapping[str, float] | None = None
    specials: Mapping[str, int] = field(
        default_factory=lambda: dict(zip(SPECIAL_NAMES, range(5)))
    )
    mode: str = WORD_BOUNDARY

    def __post_init__(self) -> None:
        if self.mode not in (WORD_BOUNDARY, WHITESPACE_SYMBOL):
            raise ConfigError(f"unknown vocabulary mode {self.mode!r}")
        if len(set(self.tokens)) != len(self.tokens):
            raise DataError("duplicate tokens in vocabulary")
        for name, glyph in zip(SPECIAL_NAMES, SPECIAL_GLYPHS):
            if name not in self.specials or self.tokens[self.specials[name]] != glyph:
                raise DataError(f"special token {name!r} missing or misplaced")

    @cached_property
    def token_to_id(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.tokens)}

    @cached_property
    def _max_token_len(self) -> int:
        learned = self.learned_tokens
        return max((len(t) for t in learned), default=1)

    @property
    def learned_tokens(self) -> tuple[str, ...]:
        return self.tokens[len(SPECIAL_NAMES) :]

    @property
    def pad_id(self) -> int:
        return self.specials["pad"]

    @property
    def unk_id(self) -> int:
        return self.specials["unk"]

    @property
    def mask_id(self) -> int:
        return self.specials["mask"]

    @property
    def bos_id(self) -> int:
        return self.specials["bos"]

    @property
    def eos_id(self) -> int:
        return self.specials["eos"]

    def special_ids(self) -> frozenset[int]:
        return frozenset(self.specials.values())

    def __len__(self) -> int:
        return len(self.tokens)


def make_vocabulary(
    learned: Iterable[str],
    merges: Iterable[tuple[str, str]] = (),
    unigram_probs: Mapping[str, float] | None = None,
    mode: str = WORD_BOUNDARY,
) -> Vocabulary:
    tokens = SPECIAL_GLYPHS + tuple(learned)
    return Vocabulary(
        tokens=tokens,
        merges=tuple((l, r) for l, r in merges),
        unigram_probs=dict(unigram_probs) if unigram_probs is not None else None,
        mode=mode,
    )


def _units(c: Corpus, mode: str) -> Counter[str]:
    """Training units with multiplicities: words, or whole-sentence streams."""
    counts: Counter[str] = Counter()
    for doc in c.documents:
        for para in doc.paragraphs:
            for sent in para.sentences:
                norm = normalize_text(sent)
                if not norm:
                    continue
                if mode == WORD_BOUNDARY:
                    counts.update(norm.split())
                else:
                    counts[norm.replace(" ", WORD_MARK)] += 1
    if not counts:
        raise DataError("corpus has no trainable text")
    return counts


def _alphabet(units: Counter[str]) -> list[str]:
    return sorted({ch for u in units for ch in u})


def _apply_merge(seg: tuple[str, ...], left: str, right: str) -> tuple[str, ...]:
    out: list[str] = []
    i = 0
    while i < len(seg):
        if i + 1 < len(seg) and seg[i] == left and seg[i + 1] == right:
            out.append(left + right)
            i += 2
        else:
            out.append(seg[i])
            i += 1
    return tuple(out)


def _pair_counts(segs: dict[str, tuple[str, ...]], units: Counter[str]) -> Counter:
    counts: Counter[tuple[str, str]] = Counter()
    for u, seg in segs.items():
        cu = units[u]
        for a, b in zip(seg, seg[1:]):
            counts[(a, b)] += cu
    return counts


def _merge_training(
    c: Corpus, k: int, mode: str, select: str
) -> Vocabulary:
    units = _units(c, mode)
    alphabet = _alphabet(units)
    if k < len(alphabet):
        raise ConfigError(
            f"target vocab size {k} is below the corpus alphabet size {len(alphabet)}"
        )

    segs = {u: tuple(u) for u in units}
    learned: list[str] = list(alphabet)
    known = set(learned)
    merges: list[tuple[str, str]] = []

    while len(learned) < k:
        pairs = _pair_counts(segs, units)
        candidates = {p: n for p, n in pairs.items() if n >= 2}
        if not candidates:
            break
        if select == "frequency":
            best = min(candidates.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        else:
            tok_counts: Counter[str] = Counter()
            for u, seg in segs.items():
                cu = units[u]
                for t in seg:
                    tok_counts[t] += cu
            n_tok = sum(tok_counts.values())
            n_pair = sum(pairs.values())

            def ratio(pair: tuple[str, str]) -> float:
                p_pair = candidates[pair] / n_pair
                p_l = tok_counts[pair[0]] / n_tok
                p_r = tok_counts[pair[1]] / n_tok
                return p_pair / (p_l * p_r)

            best = min(candidates, key=lambda p: (-ratio(p), p))
        merges.append(best)
        merged = best[0] + best[1]
        segs = {u: _apply_merge(seg, *best) for u, seg in segs.items()}
        if merged not in known:
            known.add(merged)
            learned.append(merged)

    return make_vocabulary(learned, merges=merges, mode=mode)


def train_bpe(c: Corpus, k: int, mode: str = WORD_BOUNDARY) -> Vocabulary:
    """Grow a vocabulary by merging the most frequent adjacent token pair.

    Learned size reaches k unless no pair occurs twice first; ties between
    equally frequent pairs go to the lexicographically smallest (left, right).
    """
    return _merge_training(c, k, mode, select="frequency")


def train_wordpiece(c: Corpus, k: int, mode: str = WORD_BOUNDARY) -> Vocabulary:
    """Pair-merge training that picks the pair maximizing p(l,r)/(p(l)p(r)).

    Probabilities are relative frequencies under the current segmentation;
    candidates and the stop rule are the same as train_bpe.
    """
    return _merge_training(c, k, mode, select="ratio")


def _viterbi(
    s: str, logp: Mapping[str, float], max_len: int
) -> list[str | None] | None:
    """Most-likely segmentation; None entries are unknown single characters.

    Returns None only when s is empty.
    """
    if not s:
        return None
    n = len(s)
    best: list[float] = [-math.inf] * (n + 1)
    ntoks: list[int] = [0] * (n + 1)
    back: list[tuple[int, str | None]] = [(0, None)] * (n + 1)
    best[0] = 0.0
    for i in range(1, n + 1):
        for length in range(1, min(max_len, i) + 1):
            tok = s[i - length : i]
            lp = logp.get(tok)
            if lp is None:
                continue
            cand = best[i - length] + lp
            if cand > best[i] or (cand == best[i] and ntoks[i - length] + 1 < ntoks[i]):
                best[i] = cand
                ntoks[i] = ntoks[i - length] + 1
                back[i] = (i - length, tok)
        if best[i] == -math.inf:
            # fall back to an unknown-character step of width 1
            cand = best[i - 1] + _UNK_LOGP
            best[i] = cand
            ntoks[i] = ntoks[i - 1] + 1
            back[i] = (i - 1, None)
    out: list[str | None] = []
    i = n
    while i > 0:
        j, tok = back[i]
        out.append(tok)
        i = j
    out.reverse()
    return out


def _segment_loss(units: Counter[str], logp: Mapping[str, float], max_len: int) -> float:
    total = 0.0
    for u, cu in units.items():
        seg = _viterbi(u, logp, max_len)
        assert seg is not None
        total -= cu * sum(logp.get(t, _UNK_LOGP) if t else _UNK_LOGP for t in seg)
    return total


def _fit_unigram(
    vocab: set[str], units: Counter[str], rounds: int = 2
) -> dict[str, float]:
    """Hard-EM unigram fit: Viterbi counts under current probs, renormalize."""
    raw: Counter[str] = Counter()
    for u, cu in units.items():
        for t in vocab:
            start = 0
            while True:
                pos = u.find(t, start)
                if pos < 0:
                    break
                raw[t] += cu
                start = pos + 1
    floor = 1e-12
    total = sum(raw.values()) + floor * len(vocab)
    probs = {t: (raw[t] + floor) / total for t in vocab}
    max_len = max(len(t) for t in vocab)
    for _ in range(rounds):
        logp = {t: math.log(p) for t, p in probs.items()}
        counts: Counter[str] = Counter()
        for u, cu in units.items():
            seg = _viterbi(u, logp, max_len)
            assert seg is not None
            for t in seg:
                if t is not None:
                    counts[t] += cu
        total = sum(counts.values()) + floor * len(vocab)
        probs = {t: (counts[t] + floor) / total for t in vocab}
    return probs


def _prune_deltas_approx(
    vocab: set[str],
    removable: list[str],
    probs: Mapping[str, float],
    units: Counter[str],
) -> dict[str, float]:
    """Loss increase estimate per removable token.

    A token's removal forces each of its segmentation occurrences onto the
    best alternative segmentation of its own surface string.
    """
    logp = {t: math.log(probs[t]) for t in vocab}
    max_len = max(len(t) for t in vocab)
    seg_counts: Counter[str] = Counter()
    for u, cu in units.items():
        seg = _viterbi(u, logp, max_len)
        assert seg is not None
        for t in seg:
            if t is not None:
                seg_counts[t] += cu
    deltas: dict[str, float] = {}
    for t in removable:
        c_t = seg_counts[t]
        if c_t == 0:
            deltas[t] = 0.0
            continue
        without = {tok: lp for tok, lp in logp.items() if tok != t}
        alt = _viterbi(t, without, max_len)
        assert alt is not None
        alt_lp = sum(without.get(x, _UNK_LOGP) if x else _UNK_LOGP for x in alt)
        deltas[t] = c_t * (logp[t] - alt_lp)
    return deltas


def _prune_deltas_exact(
    vocab: set[str],
    removable: list[str],
    units: Counter[str],
) -> dict[str, float]:
    """Refit the model per candidate removal and measure the true loss change."""
    base_probs = _fit_unigram(vocab, units)
    base_logp = {t: math.log(p) for t, p in base_probs.items()}
    base = _segment_loss(units, base_logp, max(len(t) for t in vocab))
    deltas: dict[str, float] = {}
    for t in removable:
        reduced = vocab - {t}
        probs = _fit_unigram(reduced, units)
        logp = {x: math.log(p) for x, p in probs.items()}
        deltas[t] = _segment_loss(units, logp, max(len(x) for x in reduced)) - base
    return deltas


def unigram_seed(c: Corpus, mode: str = WORD_BOUNDARY, max_sub_len: int = 8) -> set[str]:
    """Initial candidate set: alphabet, whole units, frequent short substrings."""
    units = _units(c, mode)
    seed: set[str] = set(_alphabet(units))
    seed.update(units.keys())
    sub_counts: Counter[str] = Counter()
    for u, cu in units.items():
        n = len(u)
        for i in range(n):
            for j in range(i + 2, min(i + max_sub_len, n) + 1):
                sub_counts[u[i:j]] += cu
    seed.update(t for t, n in sub_counts.items() if n >= 2)
    return seed


def train_unigram(
    c: Corpus,
    k: int,
    alpha: float = 0.1,
    mode: str = WORD_BOUNDARY,
    exact: bool = False,
) -> Vocabulary:
    """Prune a seeded candidate set down to k tokens under a unigram model.

    Each round drops the alpha fraction of removable tokens whose removal
    costs the least likelihood, refits, and repeats until k remain. Single
    characters are protected so any training text stays encodable.
    """
    if not 0 < alpha <= 1:
        raise ConfigError("alpha must be in (0, 1]")
    units = _units(c, mode)
    alphabet = set(_alphabet(units))
    if k < len(alphabet):
        raise ConfigError(
            f"target size {k} cannot be reached without dropping protected characters"
        )
    vocab = unigram_seed(c, mode)
    if len(vocab) < k:
        raise ConfigError(f"seed set has {len(vocab)} tokens, below target {k}")

    probs = _fit_unigram(vocab, units)
    while len(vocab) > k:
        removable = sorted(t for t in vocab if t not in alphabet)
        budget = len(vocab) - k
        n_drop = min(max(1, int(alpha * len(removable))), budget)
        if exact:
            deltas = _prune_deltas_exact(vocab, removable, units)
        else:
            deltas = _prune_deltas_approx(vocab, removable, probs, units)
        victims = sorted(removable, key=lambda t: (deltas[t], t))[:n_drop]
        vocab -= set(victims)
        probs = _fit_unigram(vocab, units)

    ordered = sorted(alphabet) + sorted(vocab - alphabet)
    return make_vocabulary(ordered, unigram_probs={t: probs[t] for t in ordered}, mode=mode)


def _greedy_segment(s: str, known: Mapping[str, int], max_len: int) -> list[str | None]:
    out: list[str | None] = []
    i = 0
    n = len(s)
    while i < n:
        match: str | None = None
        for length in range(min(max_len, n - i), 0, -1):
            cand = s[i : i + length]
            if cand in known:
                match = cand
                break
        if match is None:
            out.append(None)
            i += 1
        else:
            out.append(match)
            i += len(match)
    return out


def _segment(v: Vocabulary, s: str) -> list[str | None]:
    if v.unigram_probs is not None:
        logp = {t: math.log(p) for t, p in v.unigram_probs.items() if p > 0}
        seg = _viterbi(s, logp, v._max_token_len)
        return seg if seg is not None else []
    learned = {t: 1 for t in v.learned_tokens}
    return _greedy_segment(s, learned, v._max_token_len)


def encode(v: Vocabulary, text: str) -> TokenSequence:
    """Tokenize text.

    Word-boundary mode segments each whitespace word independently and marks
    its first token; whitespace-as-symbol mode rewrites spaces as the word
    mark and segments the whole stream, marking tokens that carry the mark.
    Unknown characters become the OOV id.
    """
    norm = normalize_text(text)
    if not norm:
        return TokenSequence((), ())
    lookup = v.token_to_id
    ids: list[int] = []
    marks: list[bool] = []
    if v.mode == WHITESPACE_SYMBOL:
        stream = norm.replace(" ", WORD_MARK)
        for pos, tok in enumerate(_segment(v, stream)):
            if tok is None:
                ids.append(v.unk_id)
                marks.append(pos == 0)
            else:
                ids.append(lookup[tok])
                marks.append(pos == 0 or tok.startswith(WORD_MARK))
    else:
        for word in norm.split(" "):
            first = True
            for tok in _segment(v, word):
                ids.append(v.unk_id if tok is None else lookup[tok])
                marks.append(first)
                first = False
    return TokenSequence(tuple(ids), tuple(marks))


def decode(v: Vocabulary, seq: TokenSequence) -> str:
    """Concatenate token surfaces, restoring one space at each word start."""
    pieces: list[str] = []
    for i, (tid, mark) in enumerate(zip(seq.ids, seq.boundary_marks)):
        if not 0 <= tid < len(v.tokens):
            raise DataError(f"token id {tid} outside vocabulary of size {len(v.tokens)}")
        surface = v.tokens[tid]
        if v.mode == WORD_BOUNDARY and mark and i > 0:
            pieces.append(" ")
        pieces.append(surface)
    text = "".join(pieces)
    if v.mode == WHITESPACE_SYMBOL:
        text = text.replace(WORD_MARK, " ")
    return text


def save_vocab_json(v: Vocabulary, path: str | Path) -> None:
    rec: dict = {
        "tokens": list(v.tokens),
        "merges": [list(m) for m in v.merges],
        "specials": dict(v.specials),
        "mode": v.mode,
    }
    if v.unigram_probs is not None:
        rec["unigram_probs"] = dict(v.unigram_probs)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rec, fh, ensure_ascii=False, indent=1)
        fh.write("\n")


def load_vocab_json(path: str | Path) -> Vocabulary:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            rec = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid vocabulary JSON: {exc}") from exc
    for key in ("tokens", "merges", "specials", "mode"):
        if key not in rec:
            raise DataError(f"{path}: vocabulary file missing field {key!r}")
    return Vocabulary(
        tokens=tuple(rec["tokens"]),
        merges=tuple((l, r) for l, r in rec["merges"]),
        unigram_probs=rec.get("unigram_probs"),
        specials=rec["specials"],
        mode=rec["mode"],
    )
