"""Training loops wiring corruption and example generation into the encoder.

Each objective gets a batch supplier built once up front (windows for the
token-level objectives, pre-packed example tensors for the sentence-level
ones); a shared encoder body is trained with one optimizer step per loop
iteration, summing weighted per-objective losses. The cluster-aware detector
threads its count matrix through every step.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import Corpus, corpus_from_lists
from .corruption import (
    CrtsConfig,
    FMatrix,
    crts_corrupt,
    crts_update,
    fmatrix_zeros,
    mlm_corrupt,
    rts_corrupt,
    slm_corrupt,
)
from .embed_cluster import ClusterMap, kmeans, train_skipgram
from .errors import ConfigError, DataError
from .generators import POSITIVE, gen_mspp, gen_psd, gen_sds, gen_sp, gen_ssp
from .model import (
    Layout,
    ModelConfig,
    ModelParams,
    cross_entropy,
    encoder_forward,
    head_binary,
    head_ie1,
    head_iek,
    head_lm,
    init_params,
    named_parameters,
    truncate_flexible,
)
from .rng import derive_seed, stage_rng
from .tokenizer import Vocabulary, encode

OBJECTIVES = ("mlm", "rts", "crts", "slm", "ssp", "sp", "psd", "mspp", "sds")

_LM_OBJECTIVES = {"mlm", "slm", "sds"}
_DETECT_OBJECTIVES = {"rts", "crts"}
_PAIR_OBJECTIVES = {"ssp", "sp", "psd"}


@dataclass(frozen=True)
class TrainConfig:
    lr_peak: float
    warmup_steps: int
    total_steps: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.warmup_steps <= self.total_steps:
            raise ConfigError("need 0 < warmup_steps <= total_steps")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ConfigError("betas must lie in (0, 1)")
        if self.lr_peak < 0 or self.eps <= 0 or self.weight_decay < 0:
            raise ConfigError("lr_peak/eps/weight_decay out of range")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")


def triangular_lr(step: int, cfg: TrainConfig) -> float:
    """Linear 0 -> peak over warmup, then linear peak -> 0 at total_steps."""
    if not 0 <= step <= cfg.total_steps:
        raise ConfigError(f"step {step} outside [0, {cfg.total_steps}]")
    if step <= cfg.warmup_steps:
        return cfg.lr_peak * step / cfg.warmup_steps
    span = cfg.total_steps - cfg.warmup_steps
    if span == 0:
        return cfg.lr_peak
    return cfg.lr_peak * (cfg.total_steps - step) / span


@dataclass(eq=False)
class OptimizerState:
    mode: str = "adamw"
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("adamw", "sgd"):
            raise ConfigError(f"unknown optimizer mode {self.mode!r}")


def optimizer_step(
    named: list[tuple[str, Tensor]],
    grads: list[np.ndarray],
    state: OptimizerState,
    cfg: TrainConfig,
    lr: float,
) -> None:
    """In-place update. sgd mode is exactly W' = W - lr * grad; adamw applies
    bias-corrected moments plus decoupled decay on every tensor of rank >= 2
    (biases and layer-norm parameters are rank 1 and stay undecayed)."""
    if len(named) != len(grads):
        raise ConfigError("parameter and gradient counts differ")
    if state.mode == "sgd":
        for (_, tensor), g in zip(named, grads):
            if g.shape != tensor.data.shape:
                raise ConfigError("gradient shape mismatch")
            tensor.data = tensor.data - lr * g
        return
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    correct1 = 1.0 - b1**state.t
    correct2 = 1.0 - b2**state.t
    for (name, tensor), g in zip(named, grads):
        if g.shape != tensor.data.shape:
            raise ConfigError("gradient shape mismatch")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(tensor.data, dtype=np.float64)
            v = np.zeros_like(tensor.data, dtype=np.float64)
        else:
            v = state.v[name]
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        update = (m / correct1) / (np.sqrt(v / correct2) + cfg.eps)
        if tensor.data.ndim >= 2:
            update = update + cfg.weight_decay * tensor.data
        tensor.data = (tensor.data - lr * update).astype(tensor.data.dtype)


# --- input packing --------------------------------------------------------------


def _encode_ids(v: Vocabulary, text: str) -> list[int]:
    return list(encode(v, text).ids)


def pack_single(ids: list[int], l_max: int, v: Vocabulary) -> tuple[np.ndarray, ...]:
    (kept,) = truncate_flexible([ids], l_max - 2)
    seq = [v.bos_id, *kept, v.eos_id]
    return _pad_to(seq, [0] * len(seq), l_max, v.pad_id)


def pack_pairwise(
    left: list[int], right: list[int], l_max: int, v: Vocabulary
) -> tuple[np.ndarray, ...]:
    a, b = truncate_flexible([left, right], l_max - 3)
    seq = [v.bos_id, *a, v.eos_id, *b, v.eos_id]
    seg = [0] * (len(a) + 2) + [1] * (len(b) + 1)
    return _pad_to(seq, seg, l_max, v.pad_id)


def _pad_to(ids: list[int], seg: list[int], l_max: int, pad_id: int):
    n = len(ids)
    out = np.full(l_max, pad_id, dtype=np.int64)
    out[:n] = ids
    seg_arr = np.zeros(l_max, dtype=np.int64)
    seg_arr[:n] = seg
    mask = np.zeros(l_max, dtype=bool)
    mask[:n] = True
    return out, seg_arr, mask


def pack_fixed(
    segments: list[list[int]], l_slot: int, v: Vocabulary
) -> tuple[np.ndarray, ...]:
    """Crop or right-pad each segment to the slot width; the attention mask
    hides the padding."""
    ids = np.full(len(segments) * l_slot, v.pad_id, dtype=np.int64)
    seg_arr = np.zeros(len(segments) * l_slot, dtype=np.int64)
    mask = np.zeros(len(segments) * l_slot, dtype=bool)
    for i, segment in enumerate(segments):
        kept = segment[:l_slot]
        base = i * l_slot
        ids[base : base + len(kept)] = kept
        seg_arr[base : base + l_slot] = i
        mask[base : base + len(kept)] = True
    return ids, seg_arr, mask


# --- per-objective batch suppliers -------------------------------------------------


@dataclass(eq=False)
class _Batchable:
    ids: np.ndarray
    seg: np.ndarray
    mask: np.ndarray
    labels: np.ndarray

    def sample(self, rng: np.random.Generator, n: int):
        idx = rng.integers(0, len(self.ids), size=n)
        return self.ids[idx], self.seg[idx], self.mask[idx], self.labels[idx]


def _token_windows(corpus: Corpus, v: Vocabulary, length: int) -> np.ndarray:
    stream: list[int] = []
    for doc in corpus.documents:
        for para in doc.paragraphs:
            stream.extend(_encode_ids(v, para.text()))
            stream.append(v.eos_id)
    n = len(stream) // length
    if n == 0:
        raise DataError(f"corpus too small for any window of {length} tokens")
    return np.array(stream[: n * length], dtype=np.int64).reshape(n, length)


def _pair_data(corpus: Corpus, v: Vocabulary, objective: str, l_max: int, seed: int) -> _Batchable:
    gen = {"ssp": gen_ssp, "sp": gen_sp, "psd": gen_psd}[objective]
    ids, segs, masks, labels = [], [], [], []
    for ex in gen(corpus, seed=seed):
        i, s, m = pack_pairwise(
            _encode_ids(v, ex.left), _encode_ids(v, ex.right), l_max, v
        )
        ids.append(i)
        segs.append(s)
        masks.append(m)
        labels.append(1 if ex.label == POSITIVE else 0)
    if not ids:
        raise DataError(f"{objective}: corpus produced no examples")
    return _Batchable(np.array(ids), np.array(segs), np.array(masks), np.array(labels))


def _joint_data(corpus: Corpus, v: Vocabulary, k: int, l_slot: int, seed: int) -> _Batchable:
    ids, segs, masks, labels = [], [], [], []
    for ex in gen_mspp(corpus, k=k, seed=seed):
        segments = [_encode_ids(v, ex.pivot)] + [_encode_ids(v, c) for c in ex.candidates]
        i, s, m = pack_fixed(segments, l_slot, v)
        ids.append(i)
        segs.append(s)
        masks.append(m)
        labels.append(list(ex.labels))
    if not ids:
        raise DataError("mspp: corpus produced no examples")
    return _Batchable(np.array(ids), np.array(segs), np.array(masks), np.array(labels))


def _bag_data(corpus: Corpus, v: Vocabulary, l_max: int) -> _Batchable:
    ids, segs, masks, bags = [], [], [], []
    for ex in gen_sds(corpus):
        i, s, m = pack_single(_encode_ids(v, ex.source), l_max, v)
        target = _encode_ids(v, ex.target)
        bag = np.zeros(len(v), dtype=np.float64)
        np.add.at(bag, target, 1.0)
        ids.append(i)
        segs.append(s)
        masks.append(m)
        bags.append(bag / bag.sum())
    if not ids:
        raise DataError("sds: corpus produced no summarizable documents")
    return _Batchable(np.array(ids), np.array(segs), np.array(masks), np.array(bags))


# --- trace -------------------------------------------------------------------------


@dataclass(frozen=True)
class TraceRow:
    step: int
    objective: str
    loss: float
    lr: float


def write_trace_csv(rows: list[TraceRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "objective", "loss", "lr"])
        for row in rows:
            writer.writerow([row.step, row.objective, f"{row.loss:.8f}", f"{row.lr:.10f}"])


@dataclass(eq=False)
class TrainResult:
    rows: list[TraceRow]
    params: ModelParams
    config: ModelConfig
    fmatrix: FMatrix | None = None

    def losses(self, objective: str) -> list[float]:
        return [r.loss for r in self.rows if r.objective == objective]


# --- the loop ----------------------------------------------------------------------


def _heads_for(weights: Mapping[str, float]) -> tuple[str, ...]:
    heads: list[str] = []
    if _LM_OBJECTIVES & set(weights):
        heads.append("lm")
    if _DETECT_OBJECTIVES & set(weights):
        heads.append("binary")
    if _PAIR_OBJECTIVES & set(weights):
        heads.append("ie1")
    if "mspp" in weights:
        heads.append("iek")
    return tuple(heads)


def train_objectives(
    corpus: Corpus,
    v: Vocabulary,
    weights: Mapping[str, float],
    tcfg: TrainConfig,
    *,
    d: int = 32,
    n_layers: int = 2,
    n_heads: int = 2,
    f: int = 64,
    l_max: int = 48,
    mspp_k: int = 5,
    optimizer: str = "adamw",
    dtype=np.float32,
    rate: float = 0.15,
    gamma: float = 1.0,
    cluster_map: ClusterMap | None = None,
    fmatrix: FMatrix | None = None,
    n_clusters: int = 8,
    dropout_p: float = 0.0,
    init_scale: float = 0.3,
) -> TrainResult:
    """Seeded multi-objective training; returns the loss trace plus final
    parameters. Unknown objective names or empty weights are config errors."""
    if not weights:
        raise ConfigError("no objectives given")
    for name, w in weights.items():
        if name not in OBJECTIVES:
            raise ConfigError(f"unknown objective {name!r}")
        if w <= 0:
            raise ConfigError(f"objective {name!r} has non-positive weight")

    l_slot = l_max // (mspp_k + 1)
    if "mspp" in weights and l_slot < 2:
        raise ConfigError("l_max too small for the joint layout")
    base_cfg = ModelConfig(
        d=d, n_layers=n_layers, n_heads=n_heads, f=f, l_max=l_max,
        vocab_size=len(v),
        n_seq_ids=(mspp_k + 1) if "mspp" in weights else 2,
        layout=Layout.pairwise(),
    )
    fixed_cfg = (
        dataclasses.replace(base_cfg, layout=Layout.fixed(k=mspp_k, l_slot=l_slot))
        if "mspp" in weights
        else None
    )
    params = init_params(
        base_cfg,
        seed=derive_seed(tcfg.seed, "train-init"),
        heads=_heads_for(weights),
        tie_lm=True,
        dtype=dtype,
        scale=init_scale,
    )
    named = named_parameters(params)
    tensors = [t for _, t in named]
    state = OptimizerState(mode=optimizer)

    crts_cfg = CrtsConfig(gamma=gamma, rate=rate, special_ids=v.special_ids())
    if "crts" in weights:
        if cluster_map is None:
            emb = train_skipgram(
                corpus, v, d_emb=16, window=2, epochs=2,
                seed=derive_seed(tcfg.seed, "crts-embed"),
            )
            cluster_map = kmeans(
                emb, min(n_clusters, len(v) - 1), restarts=2,
                seed=derive_seed(tcfg.seed, "crts-kmeans"),
            )
        if fmatrix is None:
            fmatrix = fmatrix_zeros(cluster_map.n)

    # build every supplier once; generation seeds derive from the train seed
    suppliers: dict[str, object] = {}
    for name in weights:
        gen_seed = derive_seed(tcfg.seed, f"data-{name}")
        if name in ("mlm", "rts", "crts", "slm"):
            suppliers[name] = _token_windows(corpus, v, l_max)
        elif name in _PAIR_OBJECTIVES:
            suppliers[name] = _pair_data(corpus, v, name, l_max, gen_seed)
        elif name == "mspp":
            suppliers[name] = _joint_data(corpus, v, mspp_k, l_slot, gen_seed)
        else:
            suppliers[name] = _bag_data(corpus, v, l_max)

    data_rng = stage_rng(tcfg.seed, "train-batches")
    drop_rng = stage_rng(tcfg.seed, "train-dropout") if dropout_p > 0 else None
    rows: list[TraceRow] = []
    order = sorted(weights)

    for step in range(1, tcfg.total_steps + 1):
        lr = triangular_lr(step, tcfg)
        total: Tensor | None = None
        crts_feedback: tuple[np.ndarray, np.ndarray] | None = None
        for name in order:
            loss, feedback = _objective_loss(
                name, suppliers[name], params, base_cfg, fixed_cfg, v,
                crts_cfg, cluster_map, fmatrix, data_rng, tcfg.batch_size,
                dropout_p, drop_rng,
            )
            if name == "crts":
                crts_feedback = feedback
            rows.append(TraceRow(step, name, float(loss.data), lr))
            weighted = ad.mul(loss, Tensor(np.asarray(weights[name], dtype=loss.data.dtype)))
            total = weighted if total is None else ad.add(total, weighted)
        grads = ad.gradients(total, tensors)
        optimizer_step(named, grads, state, tcfg, lr)
        if crts_feedback is not None:
            preds, prov = crts_feedback
            fmatrix = crts_update(fmatrix, preds, prov)
    return TrainResult(rows=rows, params=params, config=base_cfg, fmatrix=fmatrix)


def train_objective(
    corpus: Corpus, v: Vocabulary, objective: str, tcfg: TrainConfig, **kw
) -> TrainResult:
    return train_objectives(corpus, v, {objective: 1.0}, tcfg, **kw)


def _objective_loss(
    name: str,
    data,
    params: ModelParams,
    base_cfg: ModelConfig,
    fixed_cfg: ModelConfig | None,
    v: Vocabulary,
    crts_cfg: CrtsConfig,
    cluster_map: ClusterMap | None,
    fmatrix: FMatrix | None,
    rng: np.random.Generator,
    batch_size: int,
    dropout_p: float,
    drop_rng: np.random.Generator | None,
) -> tuple[Tensor, tuple[np.ndarray, np.ndarray] | None]:
    drop = {"dropout_p": dropout_p, "dropout_rng": drop_rng}
    if name in ("mlm", "rts", "crts", "slm"):
        windows = data[rng.integers(0, len(data), size=batch_size)]
        ids = np.empty_like(windows)
        labels = np.empty_like(windows)
        prov_rows: list[np.ndarray] = []
        sel = np.zeros(windows.shape, dtype=bool)
        for b, row in enumerate(windows):
            if name == "mlm":
                out = mlm_corrupt(row, v, rng, rate=crts_cfg.rate)
            elif name == "rts":
                out = rts_corrupt(row, v, rng, rate=crts_cfg.rate)
            elif name == "slm":
                out = slm_corrupt(row, v, rng, rate=crts_cfg.rate)
            else:
                out = crts_corrupt(row, crts_cfg, cluster_map, fmatrix, rng)
                prov_rows.append(out.provenance)
            ids[b] = out.corrupted_ids
            labels[b] = out.labels
            sel[b] = out.selection_mask
        h, _ = encoder_forward(ids, params, base_cfg, **drop)
        if name in ("mlm", "slm"):
            return cross_entropy(head_lm(h, params), labels), None
        logits = head_binary(h, params)
        loss = cross_entropy(logits, labels)
        if name == "crts":
            preds = logits.data.argmax(axis=-1)[sel]
            prov = (
                np.concatenate(prov_rows)
                if prov_rows
                else np.zeros((0, 2), dtype=np.int64)
            )
            return loss, (preds, prov)
        return loss, None

    ids, seg, mask, labels = data.sample(rng, batch_size)
    if name in _PAIR_OBJECTIVES:
        _, slots = encoder_forward(
            ids, params, base_cfg, seq_ids=seg, pad_mask=mask, **drop
        )
        return cross_entropy(head_ie1(slots, params, base_cfg), labels), None
    if name == "mspp":
        _, slots = encoder_forward(
            ids, params, fixed_cfg, seq_ids=seg, pad_mask=mask, **drop
        )
        return cross_entropy(head_iek(slots, params, fixed_cfg), labels), None
    # sds proxy: soft-target cross entropy between the pooled lm distribution
    # and the summary's bag of tokens
    _, slots = encoder_forward(ids, params, base_cfg, seq_ids=seg, pad_mask=mask, **drop)
    logits = head_lm(slots[:, 0], params)
    lse = ad.logsumexp(logits, axis=-1)
    dot = ad.tsum(ad.mul(logits, Tensor(labels.astype(logits.data.dtype))), axis=-1)
    return ad.tmean(ad.sub(lse, dot)), None


def crts_proxy_accuracy(
    corpus: Corpus,
    v: Vocabulary,
    cluster_map: ClusterMap,
    tcfg: TrainConfig,
    *,
    eval_batches: int = 4,
    **model_kw,
) -> float:
    """Short cluster-aware detection run, then detector accuracy on freshly
    corrupted windows. Used to compare candidate cluster counts: a count that
    makes detection harder scores lower."""
    from .model import encoder_forward, head_binary

    result = train_objectives(
        corpus, v, {"crts": 1.0}, tcfg, cluster_map=cluster_map, **model_kw
    )
    cfg = result.config
    windows = _token_windows(corpus, v, cfg.l_max)
    rng = stage_rng(tcfg.seed, "crts-proxy-eval")
    crts_cfg = CrtsConfig(rate=0.15, special_ids=v.special_ids())
    correct = 0
    seen = 0
    for _ in range(eval_batches):
        rows = windows[rng.integers(0, len(windows), size=tcfg.batch_size)]
        ids = np.empty_like(rows)
        labels = np.empty_like(rows)
        for b, row in enumerate(rows):
            out = crts_corrupt(row, crts_cfg, cluster_map, result.fmatrix, rng)
            ids[b] = out.corrupted_ids
            labels[b] = out.labels
        h, _ = encoder_forward(ids, result.params, cfg)
        preds = head_binary(h, result.params).data.argmax(axis=-1)
        correct += int((preds == labels).sum())
        seen += labels.size
    return correct / seen


# --- bundled toy corpus ---------------------------------------------------------


def toy_corpus() -> Corpus:
    """The corpus shipped with the package for smoke runs and CLI demos."""
    from importlib.resources import files

    from .corpus import load_corpus_jsonl

    return load_corpus_jsonl(str(files("objforge").joinpath("data/toy.jsonl")))


def make_toy_corpus(
    n_docs: int = 12, n_paras: int = 4, n_sents: int = 6, seed: int = 0
) -> Corpus:
    """Small synthetic corpus with per-document topic words and per-paragraph
    marker words, so sentence-level objectives are learnable at desk scale."""
    topics = [
        "amber", "basalt", "cedar", "dune", "ember", "fjord",
        "grove", "heath", "islet", "juniper", "karst", "loch",
    ]
    markers = ["north", "south", "east", "west", "core", "rim"]
    fillers = [
        "stone", "river", "wind", "light", "moss", "sand",
        "mist", "leaf", "root", "wave", "cloud", "frost",
    ]
    if n_docs > len(topics) or n_paras > len(markers):
        raise ConfigError("toy corpus supports at most 12 docs and 6 paragraphs")
    rng = stage_rng(seed, "toy-corpus")
    docs = []
    for di in range(n_docs):
        paras = []
        for pi in range(n_paras):
            sents = []
            for _ in range(n_sents):
                a, b = rng.choice(len(fillers), size=2, replace=False)
                sents.append(
                    f"{topics[di].capitalize()} {markers[pi]} {fillers[a]} {fillers[b]}."
                )
            paras.append(sents)
        docs.append((f"toy-{di:02d}", paras))
    return corpus_from_lists(docs)
