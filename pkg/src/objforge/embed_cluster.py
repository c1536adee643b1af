"""Token embeddings and vocabulary clustering.

Cluster-corrupted training needs a partition of the vocabulary into groups of
interchangeable tokens. This module trains small skip-gram embeddings over a
tokenized corpus, partitions them with restarted Lloyd iterations, and picks
the cluster count whose short-run proxy accuracy is lowest (hardest to tell
replacements apart means the clusters are most coherent).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .corpus import Corpus
from .errors import ConfigError, DataError
from .rng import stage_rng
from .tokenizer import Vocabulary, encode

_NEGATIVES = 5
_LEARNING_RATE = 0.025


def _sigmoid(x: np.ndarray | float) -> np.ndarray | float:
    return 1.0 / (1.0 + np.exp(-np.clip(x, -30.0, 30.0)))


@dataclass(frozen=True, eq=False)
class EmbeddingTable:
    """One d_emb-dimensional row per vocabulary id."""

    vectors: np.ndarray

    def __post_init__(self) -> None:
        if self.vectors.ndim != 2:
            raise DataError("embedding table must be 2-dimensional")
        if not np.isfinite(self.vectors).all():
            raise DataError("embedding table contains non-finite values")

    @property
    def d_emb(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return int(self.vectors.shape[0])


@dataclass(frozen=True, eq=False)
class ClusterMap:
    """Partition of token ids into n non-empty clusters."""

    assignment: np.ndarray
    n: int

    def __post_init__(self) -> None:
        if self.assignment.ndim != 1:
            raise DataError("assignment must be 1-dimensional")
        if self.n < 1:
            raise DataError("cluster count must be positive")
        if len(self.assignment) and (
            self.assignment.min() < 0 or self.assignment.max() >= self.n
        ):
            raise DataError("cluster ids out of range")
        counts = np.bincount(self.assignment, minlength=self.n)
        if (counts == 0).any():
            raise DataError("empty cluster in assignment")

    @property
    def members(self) -> tuple[tuple[int, ...], ...]:
        out: list[list[int]] = [[] for _ in range(self.n)]
        for tid, c in enumerate(self.assignment):
            out[int(c)].append(tid)
        return tuple(tuple(m) for m in out)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.n)

    def __len__(self) -> int:
        return len(self.assignment)


def _token_stream(c: Corpus, v: Vocabulary) -> list[np.ndarray]:
    sentences: list[np.ndarray] = []
    for doc in c.documents:
        for para in doc.paragraphs:
            for sent in para.sentences:
                ids = encode(v, sent).ids
                if ids:
                    sentences.append(np.array(ids, dtype=np.int64))
    if not sentences:
        raise DataError("corpus produced no tokens")
    return sentences


def train_skipgram(
    c: Corpus,
    v: Vocabulary,
    d_emb: int = 32,
    window: int = 2,
    epochs: int = 5,
    seed: int = 0,
) -> EmbeddingTable:
    """Skip-gram embeddings with negative sampling.

    Center/context pairs come from a symmetric window inside each sentence
    and are visited one at a time in a seed-shuffled order; negatives are
    drawn from the unigram distribution raised to 3/4. epochs=0 returns the
    seeded initialization.
    """
    if d_emb < 1:
        raise ConfigError("embedding dimension must be at least 1")
    if window < 1:
        raise ConfigError("window must be at least 1")
    sentences = _token_stream(c, v)
    n_vocab = len(v)
    rng = stage_rng(seed, "skipgram")
    w_in = (rng.random((n_vocab, d_emb)) - 0.5) / d_emb
    w_out = np.zeros((n_vocab, d_emb))

    centers_l: list[np.ndarray] = []
    contexts_l: list[np.ndarray] = []
    for ids in sentences:
        n = len(ids)
        for off in range(1, window + 1):
            if off >= n:
                break
            centers_l.append(ids[:-off])
            contexts_l.append(ids[off:])
            centers_l.append(ids[off:])
            contexts_l.append(ids[:-off])
    if not centers_l:
        raise DataError("no context pairs; sentences too short for the window")
    centers = np.concatenate(centers_l)
    contexts = np.concatenate(contexts_l)

    freq = np.bincount(np.concatenate(sentences), minlength=n_vocab).astype(np.float64)
    noise = freq**0.75
    noise /= noise.sum()

    for _ in range(epochs):
        order = rng.permutation(len(centers))
        negatives = rng.choice(n_vocab, size=(len(order), _NEGATIVES), p=noise)
        for row, pair_idx in enumerate(order):
            ctr = centers[pair_idx]
            pos = contexts[pair_idx]
            neg = negatives[row]

            v_ctr = w_in[ctr]
            u_pos = w_out[pos]
            u_neg = w_out[neg]

            g_pos = _sigmoid(v_ctr @ u_pos) - 1.0
            g_neg = _sigmoid(u_neg @ v_ctr)

            grad_ctr = g_pos * u_pos + g_neg @ u_neg
            w_out[pos] -= _LEARNING_RATE * g_pos * v_ctr
            # subtract.at: a token drawn twice as a negative gets both updates
            np.subtract.at(w_out, neg, _LEARNING_RATE * g_neg[:, None] * v_ctr)
            w_in[ctr] = v_ctr - _LEARNING_RATE * grad_ctr

    return EmbeddingTable(w_in)


def _lloyd(
    points: np.ndarray, n: int, rng: np.random.Generator, max_iter: int
) -> tuple[np.ndarray, float]:
    n_points = len(points)
    centers = points[rng.choice(n_points, size=n, replace=False)].copy()
    assignment = np.full(n_points, -1, dtype=np.int64)
    prev_inertia = np.inf
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assignment = d2.argmin(axis=1)

        counts = np.bincount(new_assignment, minlength=n)
        for c in np.flatnonzero(counts == 0):
            dist_own = d2[np.arange(n_points), new_assignment]
            donors = np.flatnonzero(counts[new_assignment] > 1)
            far = donors[dist_own[donors].argmax()]
            counts[new_assignment[far]] -= 1
            new_assignment[far] = c
            counts[c] += 1
            centers[c] = points[far]

        inertia = float(
            ((points - centers[new_assignment]) ** 2).sum()
        )
        assert inertia <= prev_inertia + 1e-9, "inertia increased across an iteration"
        if (new_assignment == assignment).all():
            break
        assignment = new_assignment
        prev_inertia = inertia
        for c in range(n):
            mask = assignment == c
            centers[c] = points[mask].mean(axis=0)
    inertia = float(((points - centers[assignment]) ** 2).sum())
    return assignment, inertia


def kmeans(
    e: EmbeddingTable, n: int, restarts: int = 5, seed: int = 0, max_iter: int = 300
) -> ClusterMap:
    """Restarted Lloyd clustering; the lowest-inertia restart wins.

    Empty clusters are repaired each iteration by stealing the point farthest
    from its own center among clusters that can spare one.
    """
    if n < 1:
        raise ConfigError("cluster count must be positive")
    if n > len(e):
        raise ConfigError(f"cannot form {n} clusters from {len(e)} tokens")
    if restarts < 1:
        raise ConfigError("need at least one restart")
    best: tuple[float, np.ndarray] | None = None
    for r in range(restarts):
        rng = stage_rng(seed, f"kmeans-{r}")
        assignment, inertia = _lloyd(e.vectors, n, rng, max_iter)
        if best is None or inertia < best[0]:
            best = (inertia, assignment)
    assert best is not None
    return ClusterMap(assignment=best[1], n=n)


def select_cluster_count(
    candidates: Sequence[int], proxy: Callable[[int], float]
) -> int:
    """Pick the candidate whose proxy accuracy is smallest; ties go small."""
    if not candidates:
        raise ConfigError("no cluster-count candidates")
    scores: Mapping[int, float] = {n: float(proxy(n)) for n in candidates}
    return min(candidates, key=lambda n: (scores[n], n))


def save_embedding(e: EmbeddingTable, path: str | Path) -> None:
    np.save(path, e.vectors)


def load_embedding(path: str | Path) -> EmbeddingTable:
    try:
        vectors = np.load(path)
    except ValueError as exc:
        raise DataError(f"{path}: not a valid embedding file: {exc}") from exc
    return EmbeddingTable(np.asarray(vectors, dtype=np.float64))


def save_cluster_map(m: ClusterMap, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"n": m.n, "assignment": m.assignment.tolist()}, fh)
        fh.write("\n")


def load_cluster_map(path: str | Path) -> ClusterMap:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            rec = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid cluster map JSON: {exc}") from exc
    if "n" not in rec or "assignment" not in rec:
        raise DataError(f"{path}: cluster map needs n and assignment")
    return ClusterMap(
        assignment=np.array(rec["assignment"], dtype=np.int64), n=int(rec["n"])
    )
