"""Transformer encoder with per-objective prediction heads.

Post-LN blocks over numpy tensors from `autodiff`. Inputs are packed in one
of three layouts: a single sequence ("pairwise"), k+1 equal-width slots
("fixed"), or variable-width segments under a total budget ("flexible").
Slot outputs feed the classification heads.
"""

from __future__ import annotations

import dataclasses
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError

LAYOUT_KINDS = ("pairwise", "fixed", "flexible")

# heads legal per layout; pairwise pools o_0 exactly like ie1
HEAD_LAYOUTS = {
    "lm": ("pairwise", "fixed", "flexible"),
    "binary": ("pairwise", "fixed", "flexible"),
    "ie1": ("pairwise", "fixed", "flexible"),
    "ae1": ("fixed",),
    "iek": ("fixed",),
    "aek": ("fixed",),
    "rek": ("flexible",),
}


@dataclass(frozen=True)
class Layout:
    kind: str
    k: int = 0
    l_slot: int = 0
    l_total: int = 0

    def __post_init__(self):
        if self.kind not in LAYOUT_KINDS:
            raise ConfigError(f"unknown layout kind {self.kind!r}")
        if self.kind == "fixed" and (self.k < 1 or self.l_slot < 1):
            raise ConfigError("fixed layout needs k >= 1 and l_slot >= 1")
        if self.kind == "flexible" and (self.k < 1 or self.l_total < 1):
            raise ConfigError("flexible layout needs k >= 1 and l_total >= 1")

    @classmethod
    def pairwise(cls) -> "Layout":
        return cls("pairwise")

    @classmethod
    def fixed(cls, k: int, l_slot: int) -> "Layout":
        return cls("fixed", k=k, l_slot=l_slot)

    @classmethod
    def flexible(cls, k: int, l_total: int) -> "Layout":
        return cls("flexible", k=k, l_total=l_total)


@dataclass(frozen=True)
class ModelConfig:
    d: int
    n_layers: int
    n_heads: int
    f: int
    l_max: int
    vocab_size: int
    n_seq_ids: int = 0
    layout: Layout = Layout.pairwise()
    activation: str = "relu"

    def __post_init__(self):
        if min(self.d, self.n_layers, self.n_heads, self.f, self.l_max, self.vocab_size) < 1:
            raise ConfigError("model sizes must be positive")
        if self.d % self.n_heads:
            raise ConfigError(f"d={self.d} not divisible by n_heads={self.n_heads}")
        if self.activation not in ("relu", "gelu"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        lay = self.layout
        if lay.kind == "fixed":
            if (lay.k + 1) * lay.l_slot > self.l_max:
                raise ConfigError("fixed layout exceeds l_max")
            if self.n_seq_ids and self.n_seq_ids < lay.k + 1:
                raise ConfigError("fixed layout needs k+1 sequence ids")
        if lay.kind == "flexible":
            if lay.l_total > self.l_max:
                raise ConfigError("flexible budget exceeds l_max")
            if self.n_seq_ids and self.n_seq_ids < 2:
                raise ConfigError("flexible layout needs 2 sequence ids")
        if self.n_seq_ids < 0:
            raise ConfigError("n_seq_ids must be >= 0")


@dataclass(eq=False)
class LayerParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    ln1_scale: Tensor
    ln1_shift: Tensor
    ln2_scale: Tensor
    ln2_shift: Tensor


@dataclass(eq=False)
class ModelParams:
    e: Tensor
    p: Tensor
    s: Tensor | None
    layers: tuple[LayerParams, ...]
    heads: dict[str, Tensor]

    @property
    def lm_tied(self) -> bool:
        return "lm" not in self.heads


def init_params(
    cfg: ModelConfig,
    seed: int = 0,
    heads: tuple[str, ...] = (),
    tie_lm: bool = True,
    dtype=np.float32,
    scale: float = 0.02,
) -> ModelParams:
    """Gaussian(0, scale) weights; layer-norm at identity; zero biases."""
    rng = np.random.default_rng(seed)

    def w(*shape):
        return Tensor(rng.normal(0.0, scale, size=shape).astype(dtype), requires_grad=True)

    def zeros(*shape):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

    def ones(*shape):
        return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)

    d, f = cfg.d, cfg.f
    layers = tuple(
        LayerParams(
            wq=w(d, d), wk=w(d, d), wv=w(d, d), wo=w(d, d),
            w1=w(d, f), b1=zeros(f), w2=w(f, d), b2=zeros(d),
            ln1_scale=ones(d), ln1_shift=zeros(d),
            ln2_scale=ones(d), ln2_shift=zeros(d),
        )
        for _ in range(cfg.n_layers)
    )
    head_params: dict[str, Tensor] = {}
    for name in heads:
        if name not in HEAD_LAYOUTS:
            raise ConfigError(f"unknown head {name!r}")
        if name == "lm":
            if not tie_lm:
                head_params["lm"] = w(cfg.vocab_size, d)
        elif name == "aek":
            head_params["aek"] = w(2, 2 * d)
        elif name == "rek":
            head_params["rek"] = w(cfg.layout.k, 2, d)
        else:
            head_params[name] = w(2, d)
    return ModelParams(
        e=w(cfg.vocab_size, d),
        p=w(cfg.l_max, d),
        s=w(cfg.n_seq_ids, d) if cfg.n_seq_ids else None,
        layers=layers,
        heads=head_params,
    )


def named_parameters(params: ModelParams) -> list[tuple[str, Tensor]]:
    out: list[tuple[str, Tensor]] = [("e", params.e), ("p", params.p)]
    if params.s is not None:
        out.append(("s", params.s))
    for i, layer in enumerate(params.layers):
        for field in dataclasses.fields(LayerParams):
            out.append((f"layers.{i}.{field.name}", getattr(layer, field.name)))
    for name in sorted(params.heads):
        out.append((f"heads.{name}", params.heads[name]))
    return out


# --- embedding ----------------------------------------------------------------


def one_hot(i: int, size: int) -> np.ndarray:
    if not 0 <= i < size:
        raise ShapeError(f"index {i} out of range for size {size}")
    v = np.zeros(size)
    v[i] = 1.0
    return v


def sinusoid_position(i: int, j: int, d: int) -> float:
    if not 0 <= j < d:
        raise ShapeError(f"dimension {j} out of range for d={d}")
    angle = i / 10000.0 ** (2.0 * j / d)
    return math.sin(angle) if j % 2 == 0 else math.cos(angle)


def embed_sequence(
    ids: np.ndarray,
    positions: np.ndarray,
    seq_ids: np.ndarray | None,
    params: ModelParams,
) -> Tensor:
    h = ad.add(ad.gather_rows(params.e, ids), ad.gather_rows(params.p, positions))
    if seq_ids is not None:
        if params.s is None:
            raise ConfigError("sequence ids given but model has no sequence-id table")
        h = ad.add(h, ad.gather_rows(params.s, seq_ids))
    return h


# --- attention ------------------------------------------------------------------


def key_bias_from_mask(pad_mask: np.ndarray) -> np.ndarray:
    """(B, L) booleans (True = real token) -> additive (B, 1, 1, L) bias."""
    pad_mask = np.asarray(pad_mask, dtype=bool)
    bias = np.where(pad_mask, 0.0, -np.inf)
    return bias[:, None, None, :]


def scaled_dot_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    key_bias: np.ndarray | None = None,
    return_weights: bool = False,
):
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention shapes disagree: {q.shape} {k.shape} {v.shape}")
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = ad.mul(ad.matmul(q, ad.swapaxes(k, -1, -2)), Tensor(np.asarray(scale, dtype=q.data.dtype)))
    if key_bias is not None:
        scores = ad.add(scores, Tensor(key_bias))
    weights = ad.softmax(scores, axis=-1)
    out = ad.matmul(weights, v)
    return (out, weights) if return_weights else out


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    *lead, length, d = x.shape
    x = ad.reshape(x, (*lead, length, n_heads, d // n_heads))
    return ad.swapaxes(x, -3, -2)


def multi_head_attention(
    h: Tensor,
    layer: LayerParams,
    n_heads: int,
    key_bias: np.ndarray | None = None,
) -> Tensor:
    d = h.shape[-1]
    if d % n_heads:
        raise ConfigError(f"d={d} not divisible by n_heads={n_heads}")
    q = _split_heads(ad.matmul(h, layer.wq), n_heads)
    k = _split_heads(ad.matmul(h, layer.wk), n_heads)
    v = _split_heads(ad.matmul(h, layer.wv), n_heads)
    mixed = scaled_dot_attention(q, k, v, key_bias)
    *lead, _, length, _ = mixed.shape
    merged = ad.reshape(ad.swapaxes(mixed, -3, -2), (*lead, length, d))
    return ad.matmul(merged, layer.wo)


def feed_forward(h: Tensor, layer: LayerParams, activation: str = "relu") -> Tensor:
    act = ad.relu if activation == "relu" else ad.gelu
    inner = act(ad.add(ad.matmul(h, layer.w1), layer.b1))
    return ad.add(ad.matmul(inner, layer.w2), layer.b2)


# --- encoder --------------------------------------------------------------------


def default_seq_ids(cfg: ModelConfig, length: int) -> np.ndarray | None:
    if not cfg.n_seq_ids:
        return None
    if cfg.layout.kind == "fixed":
        return np.arange(length) // cfg.layout.l_slot
    return None  # flexible/pairwise segment ids depend on packing; caller supplies


def encoder_forward(
    ids: np.ndarray,
    params: ModelParams,
    cfg: ModelConfig,
    *,
    positions: np.ndarray | None = None,
    seq_ids: np.ndarray | None = None,
    pad_mask: np.ndarray | None = None,
    dropout_p: float = 0.0,
    dropout_rng: np.random.Generator | None = None,
) -> tuple[Tensor, Tensor]:
    """Returns (per-token hidden states (B, L, d), slot outputs (B, n_slots, d))."""
    ids = np.asarray(ids)
    if ids.ndim != 2:
        raise ShapeError("ids must be (batch, length)")
    batch, length = ids.shape
    lay = cfg.layout
    if lay.kind == "fixed":
        if length != (lay.k + 1) * lay.l_slot:
            raise ConfigError(
                f"fixed layout expects length {(lay.k + 1) * lay.l_slot}, got {length}"
            )
    elif lay.kind == "flexible":
        if length > lay.l_total:
            raise ConfigError(f"length {length} over flexible budget {lay.l_total}")
    elif length > cfg.l_max:
        raise ConfigError(f"length {length} over l_max {cfg.l_max}")

    if positions is None:
        positions = np.broadcast_to(np.arange(length), (batch, length))
    if seq_ids is None:
        base = default_seq_ids(cfg, length)
        seq_ids = None if base is None else np.broadcast_to(base, (batch, length))
    h = embed_sequence(ids, positions, seq_ids, params)
    key_bias = None if pad_mask is None else key_bias_from_mask(pad_mask)

    def drop(x: Tensor) -> Tensor:
        if dropout_p > 0.0:
            if dropout_rng is None:
                raise ConfigError("dropout_p set without a generator")
            return ad.dropout(x, dropout_p, dropout_rng)
        return x

    for layer in params.layers:
        attn = drop(multi_head_attention(h, layer, cfg.n_heads, key_bias))
        h = ad.layer_norm(ad.add(h, attn), layer.ln1_scale, layer.ln1_shift)
        ff = drop(feed_forward(h, layer, cfg.activation))
        h = ad.layer_norm(ad.add(h, ff), layer.ln2_scale, layer.ln2_shift)

    if lay.kind == "fixed":
        anchors = np.arange(lay.k + 1) * lay.l_slot
        slots = h[:, anchors]
    else:
        slots = h[:, :1]
    return h, slots


# --- heads ----------------------------------------------------------------------


def _require_layout(cfg: ModelConfig, head: str) -> None:
    if cfg.layout.kind not in HEAD_LAYOUTS[head]:
        raise ConfigError(f"head {head!r} incompatible with {cfg.layout.kind!r} layout")


def head_lm(h: Tensor, params: ModelParams) -> Tensor:
    w = params.heads.get("lm", params.e)
    return ad.matmul(h, ad.swapaxes(w, 0, 1))


def head_binary(h: Tensor, params: ModelParams) -> Tensor:
    return ad.matmul(h, ad.swapaxes(params.heads["binary"], 0, 1))


def head_ie1(slots: Tensor, params: ModelParams, cfg: ModelConfig) -> Tensor:
    _require_layout(cfg, "ie1")
    return ad.matmul(slots[:, 0], ad.swapaxes(params.heads["ie1"], 0, 1))


def head_ae1(slots: Tensor, params: ModelParams, cfg: ModelConfig) -> Tensor:
    # mean of candidate slots o_1..o_k; the pivot slot is excluded
    _require_layout(cfg, "ae1")
    pooled = ad.tmean(slots[:, 1:], axis=1)
    return ad.matmul(pooled, ad.swapaxes(params.heads["ae1"], 0, 1))


def head_iek(slots: Tensor, params: ModelParams, cfg: ModelConfig) -> Tensor:
    _require_layout(cfg, "iek")
    return ad.matmul(slots[:, 1:], ad.swapaxes(params.heads["iek"], 0, 1))


def head_aek(slots: Tensor, params: ModelParams, cfg: ModelConfig) -> Tensor:
    _require_layout(cfg, "aek")
    k = cfg.layout.k
    batch = slots.shape[0]
    pivot = ad.expand(slots[:, :1], (batch, k, slots.shape[-1]))
    paired = ad.concat([pivot, slots[:, 1:]], axis=-1)
    return ad.matmul(paired, ad.swapaxes(params.heads["aek"], 0, 1))


def head_rek(slots: Tensor, params: ModelParams, cfg: ModelConfig) -> Tensor:
    _require_layout(cfg, "rek")
    o0 = ad.reshape(slots[:, 0], (1, slots.shape[0], slots.shape[-1]))
    stacked = ad.matmul(o0, ad.swapaxes(params.heads["rek"], -1, -2))  # (k, B, 2)
    return ad.swapaxes(stacked, 0, 1)


def cross_entropy(logits: Tensor, labels: np.ndarray, ignore_index: int = -1) -> Tensor:
    """Mean -log softmax(logits)[label] over positions whose label != ignore_index."""
    labels = np.asarray(labels)
    if logits.shape[:-1] != labels.shape:
        raise ShapeError(f"labels {labels.shape} do not match logits {logits.shape}")
    n_classes = logits.shape[-1]
    flat = ad.reshape(logits, (-1, n_classes))
    flat_labels = labels.reshape(-1)
    valid = flat_labels != ignore_index
    if not valid.any():
        return Tensor(np.asarray(0.0, dtype=logits.data.dtype))
    kept = flat[valid]
    kept_labels = flat_labels[valid]
    lse = ad.logsumexp(kept, axis=-1)
    picked = ad.pick_last(kept, kept_labels)
    return ad.tmean(ad.sub(lse, picked))


# --- layout packing helpers -------------------------------------------------------


def truncate_flexible(segments: list[list[int]], l_total: int) -> list[list[int]]:
    """Drop one trailing token at a time from the longest segment; ties go to
    the earliest segment."""
    if l_total < len(segments):
        raise ConfigError("budget cannot hold one token per segment")
    trimmed = [list(s) for s in segments]
    while sum(len(s) for s in trimmed) > l_total:
        longest = max(range(len(trimmed)), key=lambda i: (len(trimmed[i]), -i))
        trimmed[longest].pop()
    return trimmed


# --- checkpoint IO ----------------------------------------------------------------

_CKPT_MAGIC = b"OFCK"


def save_checkpoint(named: dict[str, np.ndarray], path: str | Path) -> None:
    manifest = [
        {"name": k, "shape": list(v.shape), "dtype": str(v.dtype)}
        for k, v in named.items()
    ]
    blob = json.dumps(manifest).encode()
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", 1))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for v in named.values():
            fh.write(np.ascontiguousarray(v).astype(v.dtype.newbyteorder("<")).tobytes())


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        if fh.read(4) != _CKPT_MAGIC:
            raise ShapeError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != 1:
            raise ShapeError(f"{path}: unsupported checkpoint version {version}")
        (n,) = struct.unpack("<I", fh.read(4))
        manifest = json.loads(fh.read(n))
        out = {}
        for entry in manifest:
            dtype = np.dtype(entry["dtype"]).newbyteorder("<")
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            raw = fh.read(count * dtype.itemsize)
            arr = np.frombuffer(raw, dtype=dtype, count=count).reshape(entry["shape"])
            out[entry["name"]] = arr.astype(np.dtype(entry["dtype"]))
    return out


def params_to_arrays(params: ModelParams) -> dict[str, np.ndarray]:
    return {name: t.data.copy() for name, t in named_parameters(params)}


def load_params_inplace(params: ModelParams, arrays: dict[str, np.ndarray]) -> None:
    for name, t in named_parameters(params):
        if name not in arrays:
            raise ShapeError(f"checkpoint missing tensor {name!r}")
        if arrays[name].shape != t.data.shape:
            raise ShapeError(
                f"checkpoint tensor {name!r} has shape {arrays[name].shape}, "
                f"expected {t.data.shape}"
            )
        t.data = arrays[name].astype(t.data.dtype)
