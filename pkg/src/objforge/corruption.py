"""Token-level corruption objectives.

Four transformations over token id sequences:

* mlm_corrupt: mask-predict with the 80/10/10 mask/random/keep split.
* rts_corrupt: uniform random replacement, binary original/replaced target.
* slm_corrupt: random replacement like RTS but the target is the original id.
* crts_corrupt: cluster-aware replacement driven by a running success/failure
  matrix over cluster pairs, plus crts_update to fold a batch of model
  predictions back into that matrix.

All ops are pure: they never mutate inputs and draw only from the generator
passed in. Positions holding special tokens are never selected, and no
replacement draw can produce a special token or the original token.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .embed_cluster import ClusterMap
from .errors import ConfigError, DataError
from .tokenizer import Vocabulary

IGNORE_LABEL = -1

_DEFAULT_SPECIALS = frozenset(range(5))


@dataclass(frozen=True, eq=False)
class CorruptionOutput:
    """Result of one corruption pass over one sequence.

    labels holds original token ids at selected positions (id objectives,
    IGNORE_LABEL elsewhere) or 0/1 replaced flags at every position (binary
    objectives). provenance is the (source cluster, target cluster) pair per
    selected position, present only for cluster-aware corruption.
    """

    corrupted_ids: np.ndarray
    selection_mask: np.ndarray
    labels: np.ndarray
    provenance: np.ndarray | None = None

    def __post_init__(self) -> None:
        if not (
            len(self.corrupted_ids) == len(self.selection_mask) == len(self.labels)
        ):
            raise DataError("corruption arrays must share one length")
        if self.provenance is not None and len(self.provenance) != int(
            self.selection_mask.sum()
        ):
            raise DataError("provenance must have one row per selected position")


@dataclass(frozen=True, eq=False)
class FMatrix:
    """Signed success/failure counts per (source, target) cluster pair."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise DataError("count matrix must be square")
        if self.counts.dtype != np.int64:
            raise DataError("count matrix must be int64")

    @property
    def n(self) -> int:
        return int(self.counts.shape[0])


def fmatrix_zeros(n: int) -> FMatrix:
    if n < 1:
        raise ConfigError("cluster count must be positive")
    return FMatrix(np.zeros((n, n), dtype=np.int64))


@dataclass(frozen=True)
class CrtsConfig:
    gamma: float = 1.0
    rate: float = 0.15
    special_ids: frozenset[int] = field(default_factory=lambda: _DEFAULT_SPECIALS)

    def __post_init__(self) -> None:
        if not self.gamma > 0:
            raise ConfigError("gamma must be positive")
        _check_rate(self.rate)


def _check_rate(rate: float) -> None:
    if not 0.0 <= rate <= 1.0:
        raise ConfigError("rate must lie in [0, 1]")


def _as_ids(ids: Sequence[int] | np.ndarray) -> np.ndarray:
    arr = np.asarray(ids, dtype=np.int64)
    if arr.ndim != 1:
        raise DataError("token ids must be one-dimensional")
    return arr


def _select(
    ids: np.ndarray, special_ids: frozenset[int], rate: float, rng: np.random.Generator
) -> np.ndarray:
    eligible = ~np.isin(ids, np.fromiter(special_ids, dtype=np.int64))
    return eligible & (rng.random(len(ids)) < rate)


def _replacement_pool(v: Vocabulary) -> np.ndarray:
    pool = np.array(
        [i for i in range(len(v)) if i not in v.special_ids()], dtype=np.int64
    )
    if len(pool) < 2:
        raise DataError("need at least two non-special tokens to replace")
    return pool


def _draw_different(
    pool: np.ndarray, pool_index: np.ndarray, originals: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Uniform draw from pool excluding each original (all originals in pool)."""
    j = rng.integers(0, len(pool) - 1, size=len(originals))
    j = j + (j >= pool_index[originals])
    return pool[j]


def mlm_corrupt(
    ids: Sequence[int] | np.ndarray,
    v: Vocabulary,
    rng: np.random.Generator,
    rate: float = 0.15,
) -> CorruptionOutput:
    """Mask-style corruption.

    Each non-special position is selected independently with probability
    rate; a selected token becomes the mask id 80% of the time, a uniformly
    chosen different non-special token 10% of the time, and stays unchanged
    otherwise. Labels carry the original id at selected positions.
    """
    _check_rate(rate)
    arr = _as_ids(ids)
    sel = _select(arr, v.special_ids(), rate, rng)
    out = arr.copy()
    labels = np.full(len(arr), IGNORE_LABEL, dtype=np.int64)
    sel_idx = np.flatnonzero(sel)
    if len(sel_idx):
        labels[sel_idx] = arr[sel_idx]
        branch = rng.random(len(sel_idx))
        mask_pos = sel_idx[branch < 0.8]
        rand_pos = sel_idx[(branch >= 0.8) & (branch < 0.9)]
        out[mask_pos] = v.mask_id
        if len(rand_pos):
            pool = _replacement_pool(v)
            pool_index = np.zeros(len(v), dtype=np.int64)
            pool_index[pool] = np.arange(len(pool))
            out[rand_pos] = _draw_different(pool, pool_index, arr[rand_pos], rng)
    return CorruptionOutput(out, sel, labels)


def _replace_uniform(
    arr: np.ndarray, v: Vocabulary, rng: np.random.Generator, rate: float
) -> tuple[np.ndarray, np.ndarray]:
    sel = _select(arr, v.special_ids(), rate, rng)
    out = arr.copy()
    sel_idx = np.flatnonzero(sel)
    if len(sel_idx):
        pool = _replacement_pool(v)
        pool_index = np.zeros(len(v), dtype=np.int64)
        pool_index[pool] = np.arange(len(pool))
        out[sel_idx] = _draw_different(pool, pool_index, arr[sel_idx], rng)
    return out, sel


def rts_corrupt(
    ids: Sequence[int] | np.ndarray,
    v: Vocabulary,
    rng: np.random.Generator,
    rate: float = 0.15,
) -> CorruptionOutput:
    """Replace selected tokens uniformly; label 1 where replaced, else 0."""
    _check_rate(rate)
    arr = _as_ids(ids)
    out, sel = _replace_uniform(arr, v, rng, rate)
    return CorruptionOutput(out, sel, sel.astype(np.int64))


def slm_corrupt(
    ids: Sequence[int] | np.ndarray,
    v: Vocabulary,
    rng: np.random.Generator,
    rate: float = 0.15,
) -> CorruptionOutput:
    """Replace selected tokens uniformly; labels are the original ids.

    The mask id never appears: every selected position holds a real token.
    """
    _check_rate(rate)
    arr = _as_ids(ids)
    out, sel = _replace_uniform(arr, v, rng, rate)
    labels = np.where(sel, arr, IGNORE_LABEL)
    return CorruptionOutput(out, sel, labels)


def target_cluster_distribution(
    f_row: Sequence[int] | np.ndarray, gamma: float = 1.0
) -> np.ndarray:
    """Turn one row of the count matrix into target-cluster probabilities.

    The row is min-max normalized into [0, 1], divided by gamma, and
    exponentiated in max-shifted log space so arbitrarily large counts cannot
    overflow. A constant row yields the uniform distribution.
    """
    if not gamma > 0:
        raise ConfigError("gamma must be positive")
    row = np.asarray(f_row, dtype=np.float64)
    if row.ndim != 1 or len(row) == 0:
        raise DataError("count row must be a non-empty vector")
    lo, hi = row.min(), row.max()
    if hi == lo:
        return np.full(len(row), 1.0 / len(row))
    z = (row - lo) / (hi - lo) / gamma
    e = np.exp(z - z.max())
    return e / e.sum()


def _cluster_pools(
    cm: ClusterMap, special_ids: frozenset[int]
) -> tuple[list[np.ndarray], np.ndarray]:
    pools: list[np.ndarray] = []
    within = np.zeros(len(cm), dtype=np.int64)
    for c in range(cm.n):
        members = np.flatnonzero(cm.assignment == c)
        members = members[~np.isin(members, np.fromiter(special_ids, dtype=np.int64))]
        pools.append(members)
        within[members] = np.arange(len(members))
    return pools, within


def crts_corrupt(
    ids: Sequence[int] | np.ndarray,
    cfg: CrtsConfig,
    cm: ClusterMap,
    f: FMatrix,
    rng: np.random.Generator,
) -> CorruptionOutput:
    """Cluster-aware replacement.

    For each selected token with source cluster a, a target cluster b is
    drawn from target_cluster_distribution of row a, and the replacement is
    uniform over cluster b's non-special members, never the original token.
    Clusters that cannot supply a valid replacement are renormalized away and
    the target redrawn. Provenance records (a, b) per selected position.
    """
    if cm.n != f.n:
        raise ConfigError(f"cluster map has n={cm.n} but count matrix has n={f.n}")
    arr = _as_ids(ids)
    if len(arr) and int(arr.max()) >= len(cm.assignment):
        raise DataError("token id outside the cluster map")
    sel = _select(arr, cfg.special_ids, cfg.rate, rng)
    out = arr.copy()
    labels = sel.astype(np.int64)
    sel_idx = np.flatnonzero(sel)
    if not len(sel_idx):
        return CorruptionOutput(out, sel, labels, np.zeros((0, 2), dtype=np.int64))

    pools, within = _cluster_pools(cm, cfg.special_ids)
    usable = sum(len(p) for p in pools)
    if usable < 2:
        raise DataError("need at least two non-special tokens to replace")

    originals = arr[sel_idx]
    sources = cm.assignment[originals]
    prov = np.zeros((len(sel_idx), 2), dtype=np.int64)
    prov[:, 0] = sources

    for a in np.unique(sources):
        in_group = np.flatnonzero(sources == a)
        dist = target_cluster_distribution(f.counts[a], cfg.gamma)
        targets = rng.choice(cm.n, size=len(in_group), p=dist)
        for g, b in zip(in_group, targets):
            orig = originals[g]
            banned: set[int] = set()
            while True:
                pool = pools[b]
                m = len(pool)
                if int(b) == int(a):
                    if m >= 2:
                        j = int(rng.integers(m - 1))
                        j += j >= within[orig]
                        break
                elif m >= 1:
                    j = int(rng.integers(m))
                    break
                banned.add(int(b))
                if len(banned) == cm.n:
                    raise DataError("no cluster can supply a replacement")
                masked = dist.copy()
                masked[list(banned)] = 0.0
                total = masked.sum()
                if total > 0:
                    masked /= total
                else:
                    open_c = [c for c in range(cm.n) if c not in banned]
                    masked[:] = 0.0
                    masked[open_c] = 1.0 / len(open_c)
                b = int(rng.choice(cm.n, p=masked))
            pos = sel_idx[g]
            out[pos] = pools[b][j]
            prov[g, 1] = b
    return CorruptionOutput(out, sel, labels, prov)


def crts_update(
    f: FMatrix,
    predictions: Sequence[int] | np.ndarray,
    provenance: np.ndarray,
) -> FMatrix:
    """Fold one batch of binary predictions into the count matrix.

    predictions use the label convention (1 = called replaced). A pair (a, b)
    gains 1 when the model called the fake token original (the replacement
    fooled it) and loses 1 otherwise. Pure integer addition, so batch order
    and splitting cannot change the result.
    """
    preds = np.asarray(predictions, dtype=np.int64)
    prov = np.asarray(provenance, dtype=np.int64)
    if prov.ndim != 2 or prov.shape[1] != 2:
        raise DataError("provenance must be an (n, 2) array")
    if len(preds) != len(prov):
        raise DataError("predictions and provenance lengths differ")
    delta = np.zeros_like(f.counts)
    signs = np.where(preds == 0, 1, -1)
    np.add.at(delta, (prov[:, 0], prov[:, 1]), signs)
    return FMatrix(f.counts + delta)


def save_fmatrix(f: FMatrix, path: str | Path) -> None:
    """n, then n*n row-major counts, all little-endian signed 64-bit."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<q", f.n))
        fh.write(f.counts.astype("<i8").tobytes())


def load_fmatrix(path: str | Path) -> FMatrix:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise DataError(f"{path}: truncated count matrix")
    (n,) = struct.unpack_from("<q", raw)
    expect = 8 + 8 * n * n
    if n < 1 or len(raw) != expect:
        raise DataError(f"{path}: expected {expect} bytes for n={n}, got {len(raw)}")
    counts = np.frombuffer(raw, dtype="<i8", offset=8).reshape(n, n)
    return FMatrix(counts.astype(np.int64))


def save_corruption_jsonl(
    outputs: Iterable[CorruptionOutput], path: str | Path
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for o in outputs:
            rec: dict = {
                "ids": o.corrupted_ids.tolist(),
                "labels": o.labels.tolist(),
                "mask": [bool(x) for x in o.selection_mask],
            }
            if o.provenance is not None:
                rec["prov"] = o.provenance.tolist()
            fh.write(json.dumps(rec) + "\n")


def load_corruption_jsonl(path: str | Path) -> list[CorruptionOutput]:
    out: list[CorruptionOutput] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            for key in ("ids", "labels", "mask"):
                if key not in rec:
                    raise DataError(f"{path}:{lineno}: missing field {key!r}")
            prov = rec.get("prov")
            out.append(
                CorruptionOutput(
                    corrupted_ids=np.array(rec["ids"], dtype=np.int64),
                    selection_mask=np.array(rec["mask"], dtype=bool),
                    labels=np.array(rec["labels"], dtype=np.int64),
                    provenance=None
                    if prov is None
                    else np.array(prov, dtype=np.int64).reshape(-1, 2),
                )
            )
    return out
