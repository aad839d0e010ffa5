"""JSON-configured experiment sweeps writing a results CSV and a summary JSON.

Config schema (all keys except ``task`` and ``data`` optional)::

    {
      "task": "sda" | "dg",
      "data": {...},                 # see DATA_KINDS below
      "train": {...},                # TrainConfig fields except "seed"
      "variants": ["CCSA"],          # FT/CSA/CS/CCSA; dg also accepts POOLED
      "sweep": [1],                  # sda: labeled target samples per class
      "holdout": [0, 1, ...],        # dg: held-out domain indices (default: all)
      "seeds": [0],
      "standardize": false,          # z-score with source statistics
      "record_wall_time": false,
      "save_checkpoints": false
    }

In the results CSV the ``n`` column is the labeled-target count for sda and the
held-out domain index for dg.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import (Dataset, concat, gen_gaussian_domains, gen_rotated_domains,
                   gen_rotated_gaussian_domains, load_csv, load_idx, resize_nearest,
                   standardize, subsample_target)
from .eval import accuracy, embedding_stats
from .losses import LossVariant
from .nn import embed, load_params
from .train import TrainConfig, train_dg, train_pooled_baseline, train_sda

CSV_HEADER = ["task", "variant", "n", "seed", "accuracy", "intra_mean", "inter_mean", "wall_ms"]
OUT_ENV = "CCSA_OUT"
DATA_KINDS = ("gaussian", "rotated_gaussian", "csv", "idx", "rotated_idx")
TOP_KEYS = {"task", "data", "train", "variants", "sweep", "holdout", "seeds", "standardize",
            "record_wall_time", "save_checkpoints"}


class ConfigError(ValueError):
    """Invalid experiment config; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


@dataclass
class ExperimentConfig:
    task: str
    data: dict
    train: TrainConfig
    variants: list = field(default_factory=lambda: ["CCSA"])
    sweep: list = field(default_factory=lambda: [1])
    holdout: list | None = None
    seeds: list = field(default_factory=lambda: [0])
    standardize: bool = False
    record_wall_time: bool = False
    save_checkpoints: bool = False
    raw: dict = field(default_factory=dict)

    @property
    def digest(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def _require(cond, path, msg):
    if not cond:
        raise ConfigError(path, msg)


def parse_config(raw: dict) -> ExperimentConfig:
    _require(isinstance(raw, dict), "$", "config must be a JSON object")
    unknown = set(raw) - TOP_KEYS
    _require(not unknown, "$", f"unknown key(s) {sorted(unknown)}")
    task = raw.get("task")
    _require(task in ("sda", "dg"), "task", f"must be 'sda' or 'dg', got {task!r}")
    data = raw.get("data")
    _require(isinstance(data, dict), "data", "required object")
    _require(data.get("kind") in DATA_KINDS, "data.kind", f"must be one of {DATA_KINDS}")
    train_raw = dict(raw.get("train", {}))
    _require("seed" not in train_raw, "train.seed", "seeds are given by the top-level 'seeds' list")
    try:
        train = TrainConfig.from_dict(train_raw)
    except (TypeError, ValueError) as exc:
        msg = str(exc)
        name = "variant" if "LossVariant" in msg else next(
            (f for f in TrainConfig.__dataclass_fields__ if msg.startswith(f)), None)
        raise ConfigError(f"train.{name}" if name else "train", msg) from None
    variants = raw.get("variants", ["CCSA"])
    _require(isinstance(variants, list) and variants, "variants", "must be a nonempty list")
    allowed = {v.value for v in LossVariant} | ({"POOLED"} if task == "dg" else set())
    for i, v in enumerate(variants):
        _require(v in allowed, f"variants[{i}]", f"must be one of {sorted(allowed)}")
    sweep = raw.get("sweep", [1])
    _require(isinstance(sweep, list) and sweep, "sweep", "must be a nonempty list")
    for i, n in enumerate(sweep):
        _require(isinstance(n, int) and n >= 0, f"sweep[{i}]", "must be an integer >= 0")
    seeds = raw.get("seeds", [0])
    _require(isinstance(seeds, list) and seeds, "seeds", "must be a nonempty list")
    for i, s in enumerate(seeds):
        _require(isinstance(s, int) and 0 <= s < 2 ** 64, f"seeds[{i}]", "must be an unsigned 64-bit integer")
    holdout = raw.get("holdout")
    if holdout is not None:
        _require(isinstance(holdout, list) and holdout, "holdout", "must be a nonempty list")
        for i, h in enumerate(holdout):
            _require(isinstance(h, int) and h >= 0, f"holdout[{i}]", "must be an integer >= 0")
    for key in ("standardize", "record_wall_time", "save_checkpoints"):
        _require(isinstance(raw.get(key, False), bool), key, "must be true or false")
    return ExperimentConfig(task, data, train, list(variants), list(sweep), holdout, list(seeds),
                            raw.get("standardize", False), raw.get("record_wall_time", False),
                            raw.get("save_checkpoints", False), raw)


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}, column {exc.colno}", exc.msg) from None
    return parse_config(raw)


def _get(data: dict, key: str, default=None, kind=None):
    if key not in data:
        if default is None:
            raise ConfigError(f"data.{key}", "required")
        return default
    val = data[key]
    if kind is not None and not isinstance(val, kind):
        raise ConfigError(f"data.{key}", f"expected {kind.__name__ if isinstance(kind, type) else kind}")
    return val


def _idx_pair(data: dict, key: str, domain: str) -> Dataset:
    entry = _get(data, key, kind=dict)
    return load_idx(entry["images"], entry["labels"], domain, entry.get("num_classes", 10))


def _limit(ds: Dataset, limit: int | None, seed: int) -> Dataset:
    if limit is None or limit >= len(ds):
        return ds
    rng = np.random.default_rng(seed)
    return ds.subset(np.sort(rng.choice(len(ds), size=limit, replace=False)))


def sda_data(data: dict, seed: int) -> tuple[Dataset, Dataset]:
    kind = data["kind"]
    if kind == "gaussian":
        per = _get(data, "per_class", 50, int)
        src, tgt = gen_gaussian_domains(_get(data, "num_classes", 2, int), _get(data, "dim", 2, int), per,
                                        float(_get(data, "shift", 2.0)), float(_get(data, "rotation_deg", 60.0)),
                                        seed, float(_get(data, "center_scale", 3.0)))
        return src, tgt
    if kind == "csv":
        src = load_csv(_get(data, "source", kind=str), "source")
        tgt = load_csv(_get(data, "target", kind=str), "target")
        c = max(src.num_classes, tgt.num_classes)
        return (Dataset(src.x, src.y, c, "source"), Dataset(tgt.x, tgt.y, c, "target"))
    if kind == "idx":
        data_seed = _get(data, "data_seed", 0, int)
        src = _limit(_idx_pair(data, "source", "source"), data.get("source_limit"), data_seed)
        tgt = _limit(_idx_pair(data, "target", "target"), data.get("target_limit"), data_seed + 1)
        side = data.get("resize")
        if side is None and src.feature_shape != tgt.feature_shape:
            side = min(src.feature_shape[0], tgt.feature_shape[0])
        if side is not None:
            src, tgt = resize_nearest(src, side), resize_nearest(tgt, side)
        return src, tgt
    raise ConfigError("data.kind", f"{kind!r} is not an sda data kind")


def dg_data(data: dict, seed: int) -> list[Dataset]:
    kind = data["kind"]
    if kind == "rotated_gaussian":
        return gen_rotated_gaussian_domains(_get(data, "num_classes", 2, int), _get(data, "dim", 2, int),
                                            _get(data, "per_class", 50, int), _get(data, "angles", [0, 20, 40, 60], list),
                                            seed, float(_get(data, "center_scale", 3.0)))
    if kind == "csv":
        paths = _get(data, "domains", kind=list)
        loaded = [load_csv(p, f"d{i}") for i, p in enumerate(paths)]
        c = max(d.num_classes for d in loaded)
        return [Dataset(d.x, d.y, c, d.domain) for d in loaded]
    if kind == "rotated_idx":
        base = _idx_pair(data, "base", "M")
        per = data.get("per_class")
        if per is not None:
            base, _ = subsample_target(base, per, _get(data, "data_seed", 0, int))
        if data.get("resize") is not None:
            base = resize_nearest(base, data["resize"])
        return gen_rotated_domains(base, _get(data, "angles", [0, 15, 30, 45, 60, 75], list))
    raise ConfigError("data.kind", f"{kind!r} is not a dg data kind")


def _standardize_pair(train_sets, others):
    pooled = concat(train_sets)
    _, mean, std = standardize(pooled)
    fix = lambda d: standardize(d, mean, std)[0]
    return [fix(d) for d in train_sets], [fix(d) for d in others]


def run_cell(exp: ExperimentConfig, variant: str, n: int, seed: int, ckpt_dir: str | None = None) -> dict:
    """Train and evaluate one (variant, n, seed) cell; returns a results row."""
    t0 = time.perf_counter()
    cfg = exp.train.replace(seed=seed, variant=variant if variant != "POOLED" else "FT")
    if exp.task == "sda":
        src, tgt = sda_data(exp.data, seed)
        labeled, holdout = subsample_target(tgt, n, seed)
        if exp.standardize:
            (src,), (labeled, holdout) = _standardize_pair([src], [labeled, holdout])
        report = train_sda(src, labeled, cfg)
        reference, stream = src, "target"
    else:
        domains = dg_data(exp.data, seed)
        if n >= len(domains):
            raise ValueError(f"holdout index {n} out of range for {len(domains)} domains")
        sources = [d for i, d in enumerate(domains) if i != n]
        holdout = domains[n]
        if exp.standardize:
            sources, (holdout,) = _standardize_pair(sources, [holdout])
        report = train_pooled_baseline(sources, cfg) if variant == "POOLED" else train_dg(sources, cfg)
        reference, stream = concat(sources), "source"
    spec = (report.g_spec, report.h_spec)
    acc = accuracy(report.params, spec, holdout, stream)
    intra, inter = embedding_stats(report.params, spec, reference, holdout, "source", stream)
    if ckpt_dir is not None:
        report.save(Path(ckpt_dir) / f"{variant}_n{n}_s{seed}")
    wall_ms = (time.perf_counter() - t0) * 1000.0
    return {"task": exp.task, "variant": variant, "n": n, "seed": seed, "accuracy": acc,
            "intra_mean": intra, "inter_mean": inter,
            "wall_ms": round(wall_ms, 3) if exp.record_wall_time else None}


def _cell_job(args):
    raw, variant, n, seed, ckpt_dir = args
    exp = parse_config(raw)
    try:
        return run_cell(exp, variant, n, seed, ckpt_dir), None
    except Exception as exc:  # a failed cell must not stop the sweep
        return None, {"variant": variant, "n": n, "seed": seed, "error": f"{type(exc).__name__}: {exc}"}


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def results_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([_fmt(r[k]) for k in CSV_HEADER])
    return buf.getvalue()


def read_results(path) -> list[dict]:
    """Parse a results CSV back into typed rows."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for r in reader:
            opt = lambda s: float(s) if s != "" else None
            out.append({"task": r["task"], "variant": r["variant"], "n": int(r["n"]), "seed": int(r["seed"]),
                        "accuracy": float(r["accuracy"]), "intra_mean": opt(r["intra_mean"]),
                        "inter_mean": opt(r["inter_mean"]), "wall_ms": opt(r["wall_ms"])})
    return out


def summarize(rows: list[dict], variants: list) -> dict:
    groups = []
    keys = sorted({(r["variant"], r["n"]) for r in rows}, key=lambda k: (variants.index(k[0]), k[1]))
    for variant, n in keys:
        accs = [r["accuracy"] for r in rows if r["variant"] == variant and r["n"] == n]
        groups.append({"variant": variant, "n": n, "count": len(accs),
                       "mean_accuracy": statistics.fmean(accs),
                       "stdev_accuracy": statistics.stdev(accs) if len(accs) > 1 else 0.0})
    by_variant = {}
    for v in variants:
        means = [g["mean_accuracy"] for g in groups if g["variant"] == v]
        if means:
            by_variant[v] = statistics.fmean(means)
    return {"groups": groups, "mean_accuracy_by_variant": by_variant}


def _fresh_path(directory: Path, stem: str, suffix: str) -> Path:
    path = directory / f"{stem}{suffix}"
    k = 2
    while path.exists():
        path = directory / f"{stem}-{k}{suffix}"
        k += 1
    return path


def default_out_root() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


def run(config_path=None, out_root=None, jobs: int = 1, config: ExperimentConfig | None = None,
        seeds: list | None = None) -> tuple[Path, list[dict], list[dict]]:
    """Run every (variant, n, seed) cell and write results.

    Output goes to ``<out_root>/<task>-<config hash>/``. Existing result files
    are never overwritten: a rerun writes ``results-2.csv`` and so on.
    Returns ``(results_csv_path, rows, failures)``.
    """
    exp = config if config is not None else load_config(config_path)
    if seeds is not None:
        exp = parse_config({**exp.raw, "seeds": list(seeds)})
    run_dir = Path(out_root or default_out_root()) / f"{exp.task}-{exp.digest[:12]}"
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(exp.raw, indent=2, sort_keys=True))
    ns = exp.sweep if exp.task == "sda" else (exp.holdout if exp.holdout is not None
                                              else list(range(len(dg_data(exp.data, exp.seeds[0])))))
    ckpt = str(run_dir / "cells") if exp.save_checkpoints else None
    cells = [(exp.raw, v, n, s, ckpt) for v in exp.variants for n in ns for s in exp.seeds]
    t0 = time.perf_counter()
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_cell_job, cells))
    else:
        outcomes = [_cell_job(c) for c in cells]
    rows = [r for r, _ in outcomes if r is not None]
    failures = [f for _, f in outcomes if f is not None]
    order = {v: i for i, v in enumerate(exp.variants)}
    rows.sort(key=lambda r: (r["n"], r["seed"], order[r["variant"]]))
    csv_path = _fresh_path(run_dir, "results", ".csv")
    csv_path.write_text(results_csv(rows), encoding="utf-8")
    summary = {"task": exp.task, "config_hash": exp.digest, "results": csv_path.name,
               **summarize(rows, exp.variants), "failures": failures}
    if exp.record_wall_time:
        summary["wall_s"] = time.perf_counter() - t0
    summary_path = csv_path.with_name(csv_path.name.replace("results", "summary", 1)).with_suffix(".json")
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True))
    return csv_path, rows, failures


def pca_2d(z: np.ndarray) -> np.ndarray:
    """Project onto the top two principal components.

    Signs are fixed so the first nonzero loading of each component is positive.
    Missing components (rank < 2 or width < 2) give zero coordinates.
    """
    z = np.asarray(z, dtype=np.float64)
    centered = z - z.mean(axis=0)
    out = np.zeros((len(z), 2))
    if not np.any(centered):
        return out
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    tol = s[0] * max(z.shape) * np.finfo(float).eps
    for k in range(min(2, vt.shape[0])):
        if s[k] <= tol:
            break
        v = vt[k]
        first = v[np.flatnonzero(np.abs(v) > 1e-12)[0]]
        out[:, k] = centered @ (v if first > 0 else -v)
    return out


def export_projection(params_path, dataset_paths, out_path, stream: str = "source") -> int:
    """Embed every sample of the CSV datasets, write ``x,y,label,domain`` rows; returns row count."""
    params, g_spec, _, _ = load_params(params_path)
    datasets = [load_csv(p, Path(p).stem) for p in dataset_paths]
    z = np.concatenate([embed(params, g_spec, d.x, stream).data for d in datasets])
    coords = pca_2d(z)
    labels = np.concatenate([d.y for d in datasets])
    domains = [d.domain for d in datasets for _ in range(len(d))]
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "label", "domain"])
        for (x, y), lab, dom in zip(coords, labels, domains):
            w.writerow([repr(float(x)), repr(float(y)), int(lab), dom])
    return len(labels)
