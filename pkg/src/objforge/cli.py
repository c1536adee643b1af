"""Pipeline command line.

Exit codes: 0 success, 1 validation error (bad flags, bad config, missing or
malformed inputs), 2 runtime error. Every command is deterministic given the
same config and inputs; all randomness derives from one root --seed through
labeled sub-seeds. --dry-run validates the whole configuration, including
input files, and stops before any output is written.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .corpus import (
    Corpus,
    corpus_stats,
    ingest_text,
    load_corpus_jsonl,
    save_corpus_jsonl,
)
from .corruption import (
    CrtsConfig,
    crts_corrupt,
    fmatrix_zeros,
    load_fmatrix,
    mlm_corrupt,
    rts_corrupt,
    save_fmatrix,
    slm_corrupt,
)
from .embed_cluster import (
    kmeans,
    load_cluster_map,
    load_embedding,
    save_cluster_map,
    save_embedding,
    select_cluster_count,
    train_skipgram,
)
from .errors import ConfigError, DataError
from .generators import (
    NegativeQuota,
    gen_dpc,
    gen_dslc,
    gen_mspp,
    gen_psd,
    gen_sdc,
    gen_sds,
    gen_sp,
    gen_ssp,
    save_context_jsonl,
    save_joint_jsonl,
    save_pair_jsonl,
    save_summary_jsonl,
    shard_name,
)
from .metrics import RankedGroup, head_cost, jointwise_latency_ratio, rank_report, report_to_json
from .model import params_to_arrays, save_checkpoint
from .rng import derive_seed, stage_rng
from .tokenizer import (
    TokenSequence,
    decode,
    encode,
    load_vocab_json,
    save_vocab_json,
    train_bpe,
    train_wordpiece,
)
from .training import (
    TrainConfig,
    crts_proxy_accuracy,
    toy_corpus,
    train_objectives,
)

_GEN_OBJECTIVES = ("ssp", "sp", "psd", "mspp", "sdc", "dpc", "dslc", "sds")
_CORRUPT_OBJECTIVES = ("mlm", "rts", "crts", "slm")
_TRAIN_OBJECTIVES = ("mlm", "rts", "crts", "slm", "ssp", "sp", "psd", "mspp", "sds")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # bad flags are validation errors, not exit 2
        raise _UsageError(message)


# --- config ----------------------------------------------------------------------

# section -> key -> (cast, predicate, description of the constraint)
_SCHEMA: dict[str, dict[str, tuple]] = {
    "": {
        "seed": (int, lambda x: x >= 0, "must be a non-negative integer"),
        "out_dir": (str, lambda x: bool(x), "must be a non-empty path"),
        "jobs": (int, lambda x: x >= 1, "must be >= 1"),
    },
    "tok": {
        "algo": (str, lambda x: x in ("bpe", "wordpiece"), "must be bpe or wordpiece"),
        "vocab_size": (int, lambda x: x >= 1, "must be >= 1"),
    },
    "cluster": {
        "dim": (int, lambda x: x >= 1, "must be >= 1"),
        "window": (int, lambda x: x >= 1, "must be >= 1"),
        "epochs": (int, lambda x: x >= 1, "must be >= 1"),
        "n": (int, lambda x: x >= 1, "must be >= 1"),
        "restarts": (int, lambda x: x >= 1, "must be >= 1"),
        "proxy_steps": (int, lambda x: x >= 2, "must be >= 2"),
    },
    "gen": {
        "shards": (int, lambda x: x >= 1, "must be >= 1"),
        "k": (int, lambda x: x >= 1, "must be >= 1"),
    },
    "corrupt": {
        "rate": (float, lambda x: 0.0 <= x <= 1.0, "must be in [0, 1]"),
        "gamma": (float, lambda x: x > 0.0, "must be positive"),
    },
    "train": {
        "steps": (int, lambda x: x >= 1, "must be >= 1"),
        "warmup": (int, lambda x: x >= 1, "must be >= 1"),
        "lr": (float, lambda x: x > 0.0, "must be positive"),
        "batch_size": (int, lambda x: x >= 1, "must be >= 1"),
        "optimizer": (str, lambda x: x in ("adamw", "sgd"), "must be adamw or sgd"),
        "d": (int, lambda x: x >= 1, "must be >= 1"),
        "n_heads": (int, lambda x: x >= 1, "must be >= 1"),
        "f": (int, lambda x: x >= 1, "must be >= 1"),
        "l_max": (int, lambda x: x >= 4, "must be >= 4"),
        "rate": (float, lambda x: 0.0 <= x <= 1.0, "must be in [0, 1]"),
        "gamma": (float, lambda x: x > 0.0, "must be positive"),
    },
    "flops": {
        "d": (int, lambda x: x >= 1, "must be >= 1"),
        "vocab": (int, lambda x: x >= 1, "must be >= 1"),
        "k": (int, lambda x: x >= 1, "must be >= 1"),
    },
}


def _load_config_file(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"--config: file not found: {path}")
    text = p.read_text(encoding="utf-8")
    try:
        import tomllib
    except ModuleNotFoundError:  # 3.10
        import tomli as tomllib
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as toml_err:
        try:
            parsed = json.loads(text)
        except json.JSONDecodeError as json_err:
            raise ConfigError(
                f"--config: {path} is neither TOML ({toml_err}) nor JSON ({json_err})"
            ) from json_err
        if not isinstance(parsed, dict):
            raise ConfigError(f"--config: {path} must hold an object at top level")
        return parsed


def _validate_config(raw: dict) -> None:
    for section, value in raw.items():
        if section in _SCHEMA[""]:
            _check_value("", section, value)
        elif section in _SCHEMA:
            if not isinstance(value, dict):
                raise ConfigError(f"config field {section}: must be a table")
            for key, inner in value.items():
                _check_value(section, key, inner)
        else:
            raise ConfigError(f"config field {section}: unknown section")


def _check_value(section: str, key: str, value) -> None:
    field = f"{section}.{key}" if section else key
    schema = _SCHEMA.get(section, {})
    if key not in schema:
        raise ConfigError(f"config field {field}: unknown key")
    cast, ok, why = schema[key]
    if cast is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, cast) or isinstance(value, bool):
        raise ConfigError(f"config field {field}: expected {cast.__name__}")
    if not ok(value):
        raise ConfigError(f"config field {field}: {why}")


@dataclass
class Ctx:
    raw: dict
    seed: int
    out_dir: Path
    jobs: int
    dry_run: bool

    def opt(self, ns_value, section: str, key: str, default):
        """Flag > config file > default, validated against the schema."""
        if ns_value is not None:
            _check_value(section, key, ns_value)
            return ns_value
        section_map = self.raw.get(section, {})
        if isinstance(section_map, dict) and key in section_map:
            return section_map[key]
        return default


def _make_ctx(ns) -> Ctx:
    raw = _load_config_file(ns.config) if ns.config else {}
    _validate_config(raw)
    seed = ns.seed if ns.seed is not None else raw.get("seed", 0)
    _check_value("", "seed", seed)
    out_dir = ns.out_dir if ns.out_dir is not None else raw.get("out_dir", ".")
    _check_value("", "out_dir", out_dir)
    if ns.jobs is not None:
        jobs = ns.jobs
    elif "jobs" in raw:
        jobs = raw["jobs"]
    else:
        env = os.environ.get("OBJFORGE_JOBS")
        if env is not None:
            try:
                jobs = int(env)
            except ValueError:
                raise ConfigError(f"OBJFORGE_JOBS: not an integer: {env!r}")
        else:
            jobs = 1
    _check_value("", "jobs", jobs)
    return Ctx(raw=raw, seed=seed, out_dir=Path(out_dir), jobs=jobs, dry_run=ns.dry_run)


# --- shared pieces ----------------------------------------------------------------


def _require_file(path: str, flag: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{flag}: file not found: {path}")
    return p


def _load_corpus_arg(spec: str, flag: str = "--corpus") -> Corpus:
    if spec == "toy":
        return toy_corpus()
    return load_corpus_jsonl(_require_file(spec, flag))


def _out_path(ctx: Ctx, name: str, override: str | None) -> Path:
    return Path(override) if override else ctx.out_dir / name


def _write_json(payload: dict, out: Path | None) -> None:
    text = json.dumps(payload, sort_keys=True)
    if out is None:
        print(text)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


def _read_ids_jsonl(path: Path) -> list[list[int]]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if "ids" not in rec:
                raise DataError(f"{path}:{lineno}: field ids: missing")
            ids = rec["ids"]
            if not isinstance(ids, list) or any(not isinstance(i, int) for i in ids):
                raise DataError(f"{path}:{lineno}: field ids: must be an integer list")
            rows.append(ids)
    if not rows:
        raise DataError(f"{path}: no id rows")
    return rows


def _read_sequences_jsonl(path: Path) -> list[TokenSequence]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            for field, kind in (("ids", int), ("marks", bool)):
                if field not in rec:
                    raise DataError(f"{path}:{lineno}: field {field}: missing")
                if not isinstance(rec[field], list) or any(
                    not isinstance(x, kind) for x in rec[field]
                ):
                    raise DataError(
                        f"{path}:{lineno}: field {field}: must be a {kind.__name__} list"
                    )
            if len(rec["ids"]) != len(rec["marks"]):
                raise DataError(f"{path}:{lineno}: ids and marks lengths differ")
            rows.append(TokenSequence(tuple(rec["ids"]), tuple(rec["marks"])))
    if not rows:
        raise DataError(f"{path}: no sequence rows")
    return rows


# --- command validators -----------------------------------------------------------
# each returns a no-argument closure that performs the writes


def _cmd_corpus(ns, ctx: Ctx) -> Callable[[], int]:
    if ns.sub == "ingest":
        src = _require_file(ns.input, "--input")
        text = src.read_text(encoding="utf-8")
        corpus = ingest_text(text)
        out = _out_path(ctx, "corpus.jsonl", ns.out)

        def run() -> int:
            out.parent.mkdir(parents=True, exist_ok=True)
            save_corpus_jsonl(corpus, out)
            print(f"{out}\t{len(corpus.documents)} documents")
            return 0

        return run

    corpus = _load_corpus_arg(ns.corpus)

    def run_stats() -> int:
        s = corpus_stats(corpus)
        _write_json(
            {
                "n_docs": s.n_docs,
                "n_words": s.n_words,
                "words_per_doc": s.words_per_doc,
                "paras_per_doc": s.paras_per_doc,
                "sents_per_para": s.sents_per_para,
            },
            Path(ns.out) if ns.out else None,
        )
        return 0

    return run_stats


def _cmd_tok(ns, ctx: Ctx) -> Callable[[], int]:
    if ns.sub == "train":
        corpus = _load_corpus_arg(ns.corpus)
        algo = ctx.opt(ns.algo, "tok", "algo", "bpe")
        size = ctx.opt(ns.vocab_size, "tok", "vocab_size", 64)
        out = _out_path(ctx, "vocab.json", ns.out)

        def run() -> int:
            v = (train_bpe if algo == "bpe" else train_wordpiece)(corpus, size)
            out.parent.mkdir(parents=True, exist_ok=True)
            save_vocab_json(v, out)
            print(f"{out}\t{len(v)} tokens")
            return 0

        return run

    v = load_vocab_json(_require_file(ns.vocab, "--vocab"))
    src = _require_file(ns.input, "--input")
    out = Path(ns.out) if ns.out else None

    def emit(payload: list[str]) -> int:
        if out is None:
            for row in payload:
                print(row)
        else:
            out.parent.mkdir(parents=True, exist_ok=True)
            with open(out, "w", encoding="utf-8") as fh:
                fh.write("\n".join(payload) + "\n")
            print(f"{out}\t{len(payload)} rows")
        return 0

    if ns.sub == "encode":
        lines = [ln for ln in src.read_text(encoding="utf-8").splitlines() if ln.strip()]
        if not lines:
            raise DataError(f"--input: {src} has no non-empty lines")

        def run_encode() -> int:
            rows = []
            for ln in lines:
                seq = encode(v, ln)
                rows.append(
                    json.dumps({"ids": list(seq.ids), "marks": list(seq.boundary_marks)})
                )
            return emit(rows)

        return run_encode

    sequences = _read_sequences_jsonl(src)

    def run_decode() -> int:
        return emit(
            [json.dumps({"text": decode(v, seq)}, ensure_ascii=False) for seq in sequences]
        )

    return run_decode


def _cmd_cluster(ns, ctx: Ctx) -> Callable[[], int]:
    if ns.sub == "embed":
        corpus = _load_corpus_arg(ns.corpus)
        v = load_vocab_json(_require_file(ns.vocab, "--vocab"))
        dim = ctx.opt(ns.dim, "cluster", "dim", 32)
        window = ctx.opt(ns.window, "cluster", "window", 2)
        epochs = ctx.opt(ns.epochs, "cluster", "epochs", 5)
        out = _out_path(ctx, "embedding.npy", ns.out)

        def run() -> int:
            table = train_skipgram(
                corpus, v, d_emb=dim, window=window, epochs=epochs,
                seed=derive_seed(ctx.seed, "cluster-embed"),
            )
            out.parent.mkdir(parents=True, exist_ok=True)
            save_embedding(table, out)
            print(f"{out}\t{len(table)} x {table.d_emb}")
            return 0

        return run

    if ns.sub == "kmeans":
        table = load_embedding(_require_file(ns.emb, "--emb"))
        n = ctx.opt(ns.n, "cluster", "n", 8)
        restarts = ctx.opt(ns.restarts, "cluster", "restarts", 5)
        out = _out_path(ctx, "clusters.json", ns.out)

        def run_kmeans() -> int:
            cm = kmeans(table, n, restarts=restarts, seed=derive_seed(ctx.seed, "cluster-kmeans"))
            out.parent.mkdir(parents=True, exist_ok=True)
            save_cluster_map(cm, out)
            print(f"{out}\t{cm.n} clusters")
            return 0

        return run_kmeans

    # select: short detection run per candidate count, keep the hardest
    corpus = _load_corpus_arg(ns.corpus)
    v = load_vocab_json(_require_file(ns.vocab, "--vocab"))
    table = load_embedding(_require_file(ns.emb, "--emb"))
    try:
        candidates = [int(x) for x in ns.candidates.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"--candidates: not a comma-separated integer list: {ns.candidates!r}")
    if not candidates or any(n < 1 for n in candidates):
        raise ConfigError("--candidates: needs one or more integers >= 1")
    if any(n >= len(v) for n in candidates):
        raise ConfigError(f"--candidates: counts must be below the vocab size {len(v)}")
    steps = ctx.opt(ns.proxy_steps, "cluster", "proxy_steps", 40)

    def run_select() -> int:
        tcfg = TrainConfig(
            lr_peak=5e-3, warmup_steps=max(1, steps // 10), total_steps=steps,
            batch_size=8, seed=derive_seed(ctx.seed, "cluster-select"),
        )
        accuracies: dict[int, float] = {}
        for n in candidates:
            cm = kmeans(table, n, restarts=2, seed=derive_seed(ctx.seed, f"cluster-select-{n}"))
            accuracies[n] = crts_proxy_accuracy(corpus, v, cm, tcfg, d=16, f=32, l_max=32)
        chosen = select_cluster_count(candidates, lambda n: accuracies[n])
        _write_json(
            {"selected": chosen, "accuracy": {str(n): accuracies[n] for n in candidates}},
            Path(ns.out) if ns.out else None,
        )
        return 0

    return run_select


_GEN_DISPATCH = {
    "ssp": (gen_ssp, save_pair_jsonl, 5),
    "sp": (gen_sp, save_pair_jsonl, 5),
    "psd": (gen_psd, save_pair_jsonl, 5),
    "mspp": (gen_mspp, save_joint_jsonl, 1),
    "sdc": (gen_sdc, save_context_jsonl, 5),
    "dpc": (gen_dpc, save_context_jsonl, 5),
    "dslc": (gen_dslc, save_context_jsonl, 5),
    "sds": (gen_sds, save_summary_jsonl, 1),
}


def _cmd_gen(ns, ctx: Ctx) -> Callable[[], int]:
    corpus = _load_corpus_arg(ns.corpus)
    shards = ctx.opt(ns.shards, "gen", "shards", 1)
    k = ctx.opt(ns.k, "gen", "k", 5)
    quota = None
    if ns.objective == "mspp":
        if k < 4:
            raise ConfigError("--k: needs k >= 4 (one same-paragraph, two same-document, rest elsewhere)")
        quota = NegativeQuota(1, 2, k - 3)
    gen_fn, saver, group_size = _GEN_DISPATCH[ns.objective]

    def run() -> int:
        seed = derive_seed(ctx.seed, f"gen-{ns.objective}")
        if ns.objective == "mspp":
            examples = list(gen_fn(corpus, k=k, quota=quota, seed=seed))
        elif ns.objective == "sds":
            examples = list(gen_fn(corpus))
        else:
            examples = list(gen_fn(corpus, seed=seed))
        groups = [
            examples[i : i + group_size] for i in range(0, len(examples), group_size)
        ]
        base, extra = divmod(len(groups), shards)
        ctx.out_dir.mkdir(parents=True, exist_ok=True)
        plans = []
        cursor = 0
        for s in range(shards):
            take = base + (1 if s < extra else 0)
            chunk = [ex for grp in groups[cursor : cursor + take] for ex in grp]
            cursor += take
            plans.append((ctx.out_dir / shard_name(ns.objective, s), chunk))
        with ThreadPoolExecutor(max_workers=ctx.jobs) as pool:
            list(pool.map(lambda p: saver(p[1], p[0]), plans))
        for path, chunk in plans:
            print(f"{path}\t{len(chunk)} examples")
        return 0

    return run


def _cmd_corrupt(ns, ctx: Ctx) -> Callable[[], int]:
    v = load_vocab_json(_require_file(ns.vocab, "--vocab"))
    rows = _read_ids_jsonl(_require_file(ns.input, "--input"))
    rate = ctx.opt(ns.rate, "corrupt", "rate", 0.15)
    gamma = ctx.opt(ns.gamma, "corrupt", "gamma", 1.0)
    cm = None
    f = None
    if ns.objective == "crts":
        if not ns.clusters:
            raise ConfigError("--clusters: required for crts")
        cm = load_cluster_map(_require_file(ns.clusters, "--clusters"))
        f = load_fmatrix(_require_file(ns.fmatrix, "--fmatrix")) if ns.fmatrix else fmatrix_zeros(cm.n)
    out = _out_path(ctx, f"corrupt-{ns.objective}.jsonl", ns.out)

    def run() -> int:
        rng = stage_rng(ctx.seed, f"corrupt-{ns.objective}")
        crts_cfg = CrtsConfig(gamma=gamma, rate=rate, special_ids=v.special_ids())
        payload = []
        for ids in rows:
            if ns.objective == "mlm":
                res = mlm_corrupt(ids, v, rng, rate=rate)
            elif ns.objective == "rts":
                res = rts_corrupt(ids, v, rng, rate=rate)
            elif ns.objective == "slm":
                res = slm_corrupt(ids, v, rng, rate=rate)
            else:
                res = crts_corrupt(ids, crts_cfg, cm, f, rng)
            rec = {
                "ids": res.corrupted_ids.tolist(),
                "labels": res.labels.tolist(),
                "selection": res.selection_mask.astype(int).tolist(),
            }
            if ns.objective == "crts":
                rec["provenance"] = res.provenance.tolist()
            payload.append(json.dumps(rec, sort_keys=True))
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", encoding="utf-8") as fh:
            fh.write("\n".join(payload) + "\n")
        print(f"{out}\t{len(payload)} rows")
        return 0

    return run


def _parse_weights(specs: list[str]) -> dict[str, float]:
    weights: dict[str, float] = {}
    for spec in specs:
        name, sep, value = spec.partition(":")
        if not sep:
            raise ConfigError(f"objective spec {spec!r}: expected name:weight")
        if name not in _TRAIN_OBJECTIVES:
            raise ConfigError(f"objective spec {spec!r}: unknown objective {name!r}")
        try:
            w = float(value)
        except ValueError:
            raise ConfigError(f"objective spec {spec!r}: weight must be a number")
        if w <= 0:
            raise ConfigError(f"objective spec {spec!r}: weight must be positive")
        if name in weights:
            raise ConfigError(f"objective spec {spec!r}: duplicate objective")
        weights[name] = w
    return weights


def _cmd_train(ns, ctx: Ctx) -> Callable[[], int]:
    weights = _parse_weights(ns.objectives)
    corpus = _load_corpus_arg(ns.corpus)
    if ns.vocab:
        v = load_vocab_json(_require_file(ns.vocab, "--vocab"))
    else:
        v = train_bpe(corpus, 64)
    steps = ctx.opt(ns.steps, "train", "steps", 100)
    warmup = ctx.opt(ns.warmup, "train", "warmup", max(1, steps // 10))
    if warmup > steps:
        raise ConfigError(f"--warmup: {warmup} exceeds --steps {steps}")
    lr = ctx.opt(ns.lr, "train", "lr", 5e-3)
    batch = ctx.opt(ns.batch_size, "train", "batch_size", 16)
    optimizer = ctx.opt(ns.optimizer, "train", "optimizer", "adamw")
    d = ctx.opt(ns.d, "train", "d", 32)
    n_heads = ctx.opt(ns.n_heads, "train", "n_heads", 4)
    f = ctx.opt(ns.f, "train", "f", 128)
    l_max = ctx.opt(ns.l_max, "train", "l_max", 48)
    rate = ctx.opt(ns.rate, "train", "rate", 0.15)
    gamma = ctx.opt(ns.gamma, "train", "gamma", 1.0)
    if d % n_heads:
        raise ConfigError(f"--d: {d} not divisible by --n-heads {n_heads}")
    if "mspp" in weights and l_max // 6 < 2:
        raise ConfigError(f"--l-max: {l_max} too small for the six-slot layout")
    out = _out_path(ctx, "trace.csv", ns.out)

    def run() -> int:
        tcfg = TrainConfig(
            lr_peak=lr, warmup_steps=warmup, total_steps=steps,
            batch_size=batch, seed=ctx.seed,
        )
        result = train_objectives(
            corpus, v, weights, tcfg,
            d=d, n_heads=n_heads, f=f, l_max=l_max,
            optimizer=optimizer, rate=rate, gamma=gamma,
        )
        names = sorted(weights)
        by_step: dict[int, dict[str, float]] = {}
        lr_at: dict[int, float] = {}
        for row in result.rows:
            by_step.setdefault(row.step, {})[row.objective] = row.loss
            lr_at[row.step] = row.lr
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "lr", *names])
            for step in sorted(by_step):
                writer.writerow(
                    [step, f"{lr_at[step]:.10f}"]
                    + [f"{by_step[step][n]:.8f}" for n in names]
                )
        print(f"{out}\t{steps} steps x {len(names)} objectives")
        if ns.save_params:
            ckpt = Path(ns.save_params)
            ckpt.parent.mkdir(parents=True, exist_ok=True)
            save_checkpoint(params_to_arrays(result.params), ckpt)
            print(f"{ckpt}\tparameters")
        return 0

    return run


def _cmd_eval(ns, ctx: Ctx) -> Callable[[], int]:
    src = _require_file(ns.input, "--input")
    groups: list[RankedGroup] = []
    with open(src, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{src}:{lineno}: invalid JSON: {exc}") from exc
            for field in ("scores", "relevance"):
                if field not in rec:
                    raise DataError(f"{src}:{lineno}: field {field}: missing")
            groups.append(RankedGroup(tuple(rec["scores"]), tuple(rec["relevance"])))
    if not groups:
        raise DataError(f"--input: {src} has no groups")

    def run() -> int:
        import warnings as _warnings

        with _warnings.catch_warnings(record=True) as caught:
            _warnings.simplefilter("always")
            report = rank_report(groups)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        _write_json(report_to_json(report), Path(ns.out) if ns.out else None)
        return 0

    return run


def _cmd_flops(ns, ctx: Ctx) -> Callable[[], int]:
    d = ctx.opt(ns.d, "flops", "d", None)
    vocab = ctx.opt(ns.vocab, "flops", "vocab", None)
    if d is None:
        raise ConfigError("--d: required")
    if vocab is None:
        raise ConfigError("--vocab: required")
    k = ctx.opt(ns.k, "flops", "k", None)

    def run() -> int:
        rows = [
            head_cost("mlm", d, vocab),
            head_cost("slm", d, vocab),
            head_cost("rts", d),
            head_cost("crts", d),
        ]
        print("head\td\tvocab\tparams\tparams_fmt\tflops_per_token")
        for r in rows:
            vs = str(r.vocab_size) if r.vocab_size is not None else "-"
            print(f"{r.objective}\t{r.d}\t{vs}\t{r.params}\t{r.params:,}\t{r.flops_per_token}")
        if k is not None:
            print(f"latency_ratio\tk={k}\t{jointwise_latency_ratio(k)}")
        return 0

    return run


_VALIDATORS = {
    "corpus": _cmd_corpus,
    "tok": _cmd_tok,
    "cluster": _cmd_cluster,
    "gen": _cmd_gen,
    "corrupt": _cmd_corrupt,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "flops": _cmd_flops,
}


def _build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--config", default=None, help="TOML (or JSON) config file")
    common.add_argument("--seed", type=int, default=None, help="root seed (default 0)")
    common.add_argument("--out-dir", default=None, help="output directory (default .)")
    common.add_argument("--jobs", type=int, default=None, help="worker count (or OBJFORGE_JOBS)")
    common.add_argument("--dry-run", action="store_true", help="validate and stop")

    p = _Parser(prog="objforge", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    corpus = sub.add_parser("corpus", parents=[common]).add_subparsers(dest="sub", required=True)
    ing = corpus.add_parser("ingest", parents=[common])
    ing.add_argument("--input", required=True)
    ing.add_argument("--out", default=None)
    st = corpus.add_parser("stats", parents=[common])
    st.add_argument("--corpus", default="toy")
    st.add_argument("--out", default=None)

    tok = sub.add_parser("tok", parents=[common]).add_subparsers(dest="sub", required=True)
    tt = tok.add_parser("train", parents=[common])
    tt.add_argument("--corpus", default="toy")
    tt.add_argument("--algo", choices=("bpe", "wordpiece"), default=None)
    tt.add_argument("--vocab-size", type=int, default=None)
    tt.add_argument("--out", default=None)
    te = tok.add_parser("encode", parents=[common])
    te.add_argument("--vocab", required=True)
    te.add_argument("--input", required=True)
    te.add_argument("--out", default=None)
    td = tok.add_parser("decode", parents=[common])
    td.add_argument("--vocab", required=True)
    td.add_argument("--input", required=True)
    td.add_argument("--out", default=None)

    cluster = sub.add_parser("cluster", parents=[common]).add_subparsers(dest="sub", required=True)
    ce = cluster.add_parser("embed", parents=[common])
    ce.add_argument("--corpus", default="toy")
    ce.add_argument("--vocab", required=True)
    ce.add_argument("--dim", type=int, default=None)
    ce.add_argument("--window", type=int, default=None)
    ce.add_argument("--epochs", type=int, default=None)
    ce.add_argument("--out", default=None)
    ck = cluster.add_parser("kmeans", parents=[common])
    ck.add_argument("--emb", required=True)
    ck.add_argument("--n", type=int, default=None)
    ck.add_argument("--restarts", type=int, default=None)
    ck.add_argument("--out", default=None)
    cs = cluster.add_parser("select", parents=[common])
    cs.add_argument("--corpus", default="toy")
    cs.add_argument("--vocab", required=True)
    cs.add_argument("--emb", required=True)
    cs.add_argument("--candidates", required=True, help="comma-separated counts")
    cs.add_argument("--proxy-steps", type=int, default=None)
    cs.add_argument("--out", default=None)

    g = sub.add_parser("gen", parents=[common])
    g.add_argument("objective", choices=_GEN_OBJECTIVES)
    g.add_argument("--corpus", default="toy")
    g.add_argument("--shards", type=int, default=None)
    g.add_argument("--k", type=int, default=None, help="mspp candidate count")

    c = sub.add_parser("corrupt", parents=[common])
    c.add_argument("objective", choices=_CORRUPT_OBJECTIVES)
    c.add_argument("--vocab", required=True)
    c.add_argument("--input", required=True, help="ids JSONL from tok encode")
    c.add_argument("--rate", type=float, default=None)
    c.add_argument("--gamma", type=float, default=None)
    c.add_argument("--clusters", default=None)
    c.add_argument("--fmatrix", default=None)
    c.add_argument("--out", default=None)

    t = sub.add_parser("train", parents=[common])
    t.add_argument("objectives", nargs="+", help="name:weight, e.g. mlm:1.0 ssp:1.0")
    t.add_argument("--corpus", default="toy")
    t.add_argument("--vocab", default=None)
    t.add_argument("--steps", type=int, default=None)
    t.add_argument("--warmup", type=int, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--batch-size", type=int, default=None)
    t.add_argument("--optimizer", choices=("adamw", "sgd"), default=None)
    t.add_argument("--d", type=int, default=None)
    t.add_argument("--n-heads", type=int, default=None)
    t.add_argument("--f", type=int, default=None)
    t.add_argument("--l-max", type=int, default=None)
    t.add_argument("--rate", type=float, default=None)
    t.add_argument("--gamma", type=float, default=None)
    t.add_argument("--out", default=None)
    t.add_argument("--save-params", default=None)

    e = sub.add_parser("eval", parents=[common]).add_subparsers(dest="sub", required=True)
    er = e.add_parser("rank", parents=[common])
    er.add_argument("--input", required=True, help="JSONL rows with scores and relevance")
    er.add_argument("--out", default=None)

    fl = sub.add_parser("flops", parents=[common]).add_subparsers(dest="sub", required=True)
    fr = fl.add_parser("report", parents=[common])
    fr.add_argument("--d", type=int, default=None)
    fr.add_argument("--vocab", type=int, default=None)
    fr.add_argument("--k", type=int, default=None)

    return p


def main(argv=None) -> int:
    try:
        ns = _build_parser().parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        ctx = _make_ctx(ns)
        run = _VALIDATORS[ns.command](ns, ctx)
    except (ConfigError, DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if ctx.dry_run:
        print("dry-run: configuration valid")
        return 0
    try:
        return run()
    except Exception as exc:  # anything past validation is a runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
