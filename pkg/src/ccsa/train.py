"""Optimizers and the SDA / DG training protocols."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .data import Dataset, concat
from .losses import (DomainBatch, LossVariant, LossWeights, SDABatch, cross_entropy,
                     dg_loss_terms, sda_loss_terms)
from .nn import (NetSpec, NetworkParams, embed, forward, init_params, lenet_g, mlp_g, predict,
                 save_params, softmax_h)
from .pairing import PairSet, build_dg_pairs, build_sda_pairs, reshuffle_epoch

log = logging.getLogger(__name__)

OPTIMIZERS = ("sgd", "momentum", "adam")


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.1
    margin: float = 1.0
    variant: str = "CCSA"
    optimizer: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs_source: int = 20
    epochs_joint: int = 80
    epochs_finetune: int = 30
    finetune_lr_scale: float = 0.1
    pair_budget: int | None = None
    dg_pair_budget: int = 2
    shared_g: bool = True
    seed: int = 0
    arch: str = "mlp"
    hidden: int = 64
    embed_dim: int = 16

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        for name in ("epochs_source", "epochs_joint", "epochs_finetune"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.arch not in ("mlp", "lenet"):
            raise ValueError("arch must be 'mlp' or 'lenet'")
        LossVariant(self.variant)
        LossWeights(self.gamma, self.margin)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.gamma, self.margin)

    def replace(self, **changes) -> "TrainConfig":
        return TrainConfig(**{**asdict(self), **changes})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig field(s): {sorted(unknown)}")
        return cls(**d)


def build_specs(feature_shape, num_classes: int, config: TrainConfig) -> tuple[NetSpec, NetSpec]:
    """g and h specs for a dataset's feature shape."""
    if config.arch == "lenet":
        if len(feature_shape) != 2 or feature_shape[0] != feature_shape[1]:
            raise ValueError(f"lenet needs square images, got feature shape {feature_shape}")
        g = lenet_g(feature_shape[0])
    else:
        g = mlp_g(int(np.prod(feature_shape)), config.hidden, config.embed_dim)
    return g, softmax_h(g.output_shape[0], num_classes)


def sgd_step(params: list, grads: list, state: dict | None, config: TrainConfig):
    """One update of ``params`` (list of arrays). Returns ``(new_params, new_state)``.

    ``sgd``: p - lr*g. ``momentum``: heavy-ball velocity. ``adam``: bias-corrected
    first/second moment estimates.
    """
    if len(params) != len(grads):
        raise ShapeError("sgd_step", (len(params),), (len(grads),), "parameter/gradient counts")
    for p, g in zip(params, grads):
        if np.shape(p) != np.shape(g):
            raise ShapeError("sgd_step", np.shape(p), np.shape(g))
    lr = config.lr
    if config.optimizer == "sgd":
        return [p - lr * g for p, g in zip(params, grads)], state or {}
    if config.optimizer == "momentum":
        vel = (state or {}).get("v") or [np.zeros_like(p) for p in params]
        vel = [config.momentum * v + g for v, g in zip(vel, grads)]
        return [p - lr * v for p, v in zip(params, vel)], {"v": vel}
    state = state or {}
    t = state.get("t", 0) + 1
    m = state.get("m") or [np.zeros_like(p) for p in params]
    v = state.get("v") or [np.zeros_like(p) for p in params]
    b1, b2 = config.beta1, config.beta2
    m = [b1 * mi + (1 - b1) * g for mi, g in zip(m, grads)]
    v = [b2 * vi + (1 - b2) * g * g for vi, g in zip(v, grads)]
    c1, c2 = 1 - b1 ** t, 1 - b2 ** t
    new = [p - lr * (mi / c1) / (np.sqrt(vi / c2) + config.eps) for p, mi, vi in zip(params, m, v)]
    return new, {"t": t, "m": m, "v": v}


@dataclass
class TrainReport:
    config: dict
    seed: int
    history: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    params: NetworkParams | None = None
    source_params: NetworkParams | None = None
    g_spec: NetSpec | None = None
    h_spec: NetSpec | None = None

    def to_dict(self) -> dict:
        return {"config": self.config, "seed": self.seed, "history": self.history,
                "timings_s": self.timings, "warnings": self.warnings,
                "g_spec": self.g_spec.to_dict() if self.g_spec else None,
                "h_spec": self.h_spec.to_dict() if self.h_spec else None}

    def save(self, directory) -> None:
        """Write ``report.json`` and ``params.npz`` into ``directory``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "report.json").write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        if self.params is not None:
            save_params(directory / "params.npz", self.params, self.g_spec, self.h_spec, self.seed)


def _epoch_rng(seed: int, phase: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), phase, epoch])


def _cyclic(order: np.ndarray, step: int, size: int) -> np.ndarray:
    n = len(order)
    return order[(step * size + np.arange(min(size, n))) % n]


def _mean_logs(rows: list[dict]) -> dict:
    return {k: float(np.mean([r[k] for r in rows])) for k in rows[0]}


def _train_classifier(params: NetworkParams, g_spec, h_spec, data: Dataset, epochs: int,
                      config: TrainConfig, phase: int, stream: str = "source") -> tuple[NetworkParams, list]:
    """Cross-entropy training of h∘g on ``data`` (both g of ``stream`` and h are updated)."""
    history = []
    state = None
    bs = config.batch_size
    for epoch in range(epochs):
        order = _epoch_rng(config.seed, phase, epoch).permutation(len(data))
        logs = []
        for start in range(0, len(data), bs):
            idx = order[start:start + bs]
            leaves = params.map(Tensor)
            loss = cross_entropy(predict(leaves, h_spec, embed(leaves, g_spec, data.x[idx], stream)), data.y[idx])
            train_g = leaves.g_for(stream)
            grads = ad.backward(loss, list(train_g) + list(leaves.h))
            old = list(params.g_for(stream)) + list(params.h)
            new, state = sgd_step(old, grads, state, config)
            ng = len(train_g)
            if stream == "source" or params.shared_g:
                params = NetworkParams(new[:ng], new[ng:], params.shared_g, params.g_target)
            else:
                params = NetworkParams(params.g, new[ng:], False, new[:ng])
            logs.append({"classification": loss.item(), "total": loss.item()})
        history.append(_mean_logs(logs))
    return params, history


def init_source(params: NetworkParams, source: Dataset, config: TrainConfig,
                g_spec: NetSpec, h_spec: NetSpec) -> NetworkParams:
    """Train h∘g on the source with cross-entropy for ``epochs_source`` epochs."""
    if not len(source):
        raise ValueError("init_source: empty source")
    out, _ = _train_classifier(params, g_spec, h_spec, source, config.epochs_source, config, phase=0)
    return out


def finetune_h(params: NetworkParams, data: Dataset, config: TrainConfig, g_spec: NetSpec,
               h_spec: NetSpec, stream: str = "target") -> tuple[NetworkParams, list]:
    """Cross-entropy on ``data`` updating h only; g stays bit-identical."""
    if not len(data) or config.epochs_finetune == 0:
        return params, []
    z = embed(params, g_spec, data.x, stream).data
    cfg = config.replace(lr=config.lr * config.finetune_lr_scale)
    h = list(params.h)
    state, history = None, []
    bs = config.batch_size
    for epoch in range(config.epochs_finetune):
        order = _epoch_rng(config.seed, 2, epoch).permutation(len(data))
        logs = []
        for start in range(0, len(data), bs):
            idx = order[start:start + bs]
            leaves = [Tensor(a) for a in h]
            loss = cross_entropy(forward(h_spec, leaves, z[idx]), data.y[idx])
            h, state = sgd_step(h, ad.backward(loss, leaves), state, cfg)
            logs.append({"classification": loss.item(), "total": loss.item()})
        history.append(_mean_logs(logs))
    return NetworkParams(params.g, h, params.shared_g, params.g_target), history


def _sda_step_batch(source: Dataset, target: Dataset, cls_rows: np.ndarray, pair_batch: PairSet) -> SDABatch:
    nc = len(cls_rows)
    k = len(pair_batch)
    x_s = np.concatenate([source.x[cls_rows], source.x[pair_batch.a]])
    y_s = np.concatenate([source.y[cls_rows], source.y[pair_batch.a]])
    pairs = PairSet(nc + np.arange(k), np.arange(k), pair_batch.positive)
    return SDABatch(x_s, y_s, target.x[pair_batch.b], target.y[pair_batch.b], pairs, np.arange(nc))


def joint_sda(params: NetworkParams, source: Dataset, target: Dataset, config: TrainConfig,
              g_spec: NetSpec, h_spec: NetSpec) -> tuple[NetworkParams, list]:
    """End-to-end minimization of the SDA objective over classification and pair mini-batches."""
    variant = LossVariant(config.variant)
    weights = config.weights
    bs = config.batch_size
    if len(target):
        pairs = build_sda_pairs(source, target, config.seed, config.pair_budget)
    else:
        pairs = PairSet([], [], [])
    steps = max(math.ceil(len(source) / bs), math.ceil(len(pairs) / bs))
    state, history = None, []
    for epoch in range(config.epochs_joint):
        cls_order = _epoch_rng(config.seed, 1, epoch).permutation(len(source))
        pair_order = reshuffle_epoch(pairs, config.seed, epoch) if len(pairs) else pairs
        logs = []
        for step in range(steps):
            cls_rows = _cyclic(cls_order, step, bs)
            pb = pair_order.take(_cyclic(np.arange(len(pairs)), step, bs)) if len(pairs) else pairs
            batch = _sda_step_batch(source, target, cls_rows, pb)
            leaves = params.map(Tensor)
            terms = sda_loss_terms(batch, leaves, weights, variant, g_spec, h_spec)
            grads = ad.backward(terms.total, leaves.flat())
            new, state = sgd_step(params.flat(), grads, state, config)
            params = params.with_flat(new)
            logs.append(terms.values())
        history.append(_mean_logs(logs))
    return params, history


def train_sda(source: Dataset, target_labeled: Dataset, config: TrainConfig) -> TrainReport:
    """Source initialization, joint CCSA training, then fine-tuning of h on the labeled target."""
    if not len(source):
        raise ValueError("train_sda: empty source")
    report = TrainReport(config.to_dict(), config.seed)
    if not len(target_labeled) and LossVariant(config.variant) is not LossVariant.FT:
        msg = "no labeled target samples: contrastive terms are zero"
        report.warnings.append(msg)
        log.warning(msg)
    g_spec, h_spec = build_specs(source.feature_shape, source.num_classes, config)
    params = init_params(g_spec, h_spec, config.seed, shared_g=True)

    t0 = time.perf_counter()
    params, report.history["source"] = _train_classifier(
        params, g_spec, h_spec, source, config.epochs_source, config, phase=0)
    report.timings["source"] = time.perf_counter() - t0
    report.source_params = params.copy()
    if not config.shared_g:
        params = params.unshared()

    t0 = time.perf_counter()
    params, report.history["joint"] = joint_sda(params, source, target_labeled, config, g_spec, h_spec)
    report.timings["joint"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    params, report.history["finetune"] = finetune_h(params, target_labeled, config, g_spec, h_spec)
    report.timings["finetune"] = time.perf_counter() - t0

    report.params, report.g_spec, report.h_spec = params, g_spec, h_spec
    return report


def _dg_step_batches(domains, cls_rows: list, pair_batches: dict):
    """Per-domain row blocks (classification rows first) and re-indexed pair sets."""
    xs = [[d.x[r]] for d, r in zip(domains, cls_rows)]
    ys = [[d.y[r]] for d, r in zip(domains, cls_rows)]
    sizes = [len(r) for r in cls_rows]
    remapped = {}
    for (u, v), pb in pair_batches.items():
        k = len(pb)
        a = sizes[u] + np.arange(k)
        b = sizes[v] + np.arange(k)
        xs[u].append(domains[u].x[pb.a])
        ys[u].append(domains[u].y[pb.a])
        xs[v].append(domains[v].x[pb.b])
        ys[v].append(domains[v].y[pb.b])
        sizes[u] += k
        sizes[v] += k
        remapped[(u, v)] = PairSet(a, b, pb.positive, pb.domain_a, pb.domain_b)
    batches = [DomainBatch(np.concatenate(x), np.concatenate(y), np.arange(len(r)))
               for x, y, r in zip(xs, ys, cls_rows)]
    return batches, remapped


def train_dg(domains, config: TrainConfig) -> TrainReport:
    """Single end-to-end phase on D >= 2 source domains with budgeted cross-domain pairs."""
    domains = list(domains)
    if len(domains) < 2:
        raise ValueError(f"train_dg: need at least 2 source domains, got {len(domains)}")
    variant = LossVariant(config.variant)
    weights = config.weights
    report = TrainReport(config.to_dict(), config.seed)
    C = max(d.num_classes for d in domains)
    g_spec, h_spec = build_specs(domains[0].feature_shape, C, config)
    params = init_params(g_spec, h_spec, config.seed, shared_g=True)
    pair_sets = build_dg_pairs(domains, config.dg_pair_budget, config.seed)
    bs = config.batch_size
    steps = max([math.ceil(len(d) / bs) for d in domains] + [math.ceil(len(p) / bs) for p in pair_sets.values()])

    t0 = time.perf_counter()
    state, history = None, []
    for epoch in range(config.epochs_joint):
        rng = _epoch_rng(config.seed, 1, epoch)
        cls_orders = [rng.permutation(len(d)) for d in domains]
        pair_orders = {k: reshuffle_epoch(p, config.seed + 7919 * (i + 1), epoch)
                       for i, (k, p) in enumerate(sorted(pair_sets.items()))}
        logs = []
        for step in range(steps):
            cls_rows = [_cyclic(o, step, bs) for o in cls_orders]
            pbs = {k: p.take(_cyclic(np.arange(len(p)), step, bs)) for k, p in pair_orders.items() if len(p)}
            batches, remapped = _dg_step_batches(domains, cls_rows, pbs)
            leaves = params.map(Tensor)
            terms = dg_loss_terms(batches, leaves, weights, remapped, g_spec, h_spec, variant)
            grads = ad.backward(terms.total, leaves.flat())
            new, state = sgd_step(params.flat(), grads, state, config)
            params = params.with_flat(new)
            logs.append(terms.values())
        history.append(_mean_logs(logs))
    report.history["joint"] = history
    report.timings["joint"] = time.perf_counter() - t0
    report.params, report.g_spec, report.h_spec = params, g_spec, h_spec
    return report


def train_source_only(data: Dataset, config: TrainConfig, epochs: int | None = None) -> TrainReport:
    """Cross-entropy-only baseline on one (possibly pooled) dataset."""
    report = TrainReport(config.to_dict(), config.seed)
    g_spec, h_spec = build_specs(data.feature_shape, data.num_classes, config)
    params = init_params(g_spec, h_spec, config.seed, shared_g=True)
    t0 = time.perf_counter()
    params, report.history["source"] = _train_classifier(
        params, g_spec, h_spec, data, config.epochs_joint if epochs is None else epochs, config, phase=0)
    report.timings["source"] = time.perf_counter() - t0
    report.params, report.g_spec, report.h_spec = params, g_spec, h_spec
    return report


def train_pooled_baseline(domains, config: TrainConfig) -> TrainReport:
    """All source domains pooled into one dataset, cross-entropy only."""
    return train_source_only(concat(domains), config)
