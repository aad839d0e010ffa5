"""Finite-difference gradient checks over every primitive and loss.

Each item builds a scalar function and its inputs from a seeded generator.
Inputs are kept away from kinks (ReLU/hinge at 0, max-pool ties, norm at 0)
by more than the probe step, so the central difference is well defined.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, grad_check
from .losses import (DomainBatch, LossWeights, SDABatch, ccsa_dg_loss, ccsa_sda_loss,
                     contrastive_loss, cross_entropy, pair_distance, pair_similarity,
                     semantic_alignment_loss, separation_loss)
from .nn import NetSpec, NetworkParams, conv, dense, flatten, init_params, maxpool, mlp_g, relu, softmax_h
from .pairing import PairSet, build_dg_pairs, build_sda_pairs

TOLERANCE = 1e-4
EPSILON = 1e-5


def _away_from_zero(rng, shape, gap=0.05):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < gap, np.sign(x + 1e-300) * gap + x, x)


def _distinct(rng, shape, gap=1e-2):
    n = int(np.prod(shape))
    return (rng.permutation(n) * gap + rng.uniform(0, gap / 4, n)).reshape(shape) - n * gap / 2


def _weighted_sum(out: Tensor, w: np.ndarray) -> Tensor:
    return ad.tsum(ad.mul(out, Tensor(w)))


def _unary(op, make):
    def build(rng):
        x = make(rng)
        w = rng.normal(size=op(Tensor(x)).shape)
        return (lambda a: _weighted_sum(op(a), w)), [x]
    return build


def _binary(op, make_a, make_b):
    def build(rng):
        a, b = make_a(rng), make_b(rng)
        w = rng.normal(size=op(Tensor(a), Tensor(b)).shape)
        return (lambda p, q: _weighted_sum(op(p, q), w)), [a, b]
    return build


def _normal(*shape):
    return lambda rng: rng.normal(size=shape)


def _random_batch(rng, n_s, n_t, dim, classes=2, scale=0.4):
    ys = rng.integers(0, classes, n_s)
    yt = rng.integers(0, classes, n_t)
    ys[:classes] = np.arange(classes)
    yt[:classes] = np.arange(classes)
    zs = rng.normal(scale=scale, size=(n_s, dim))
    zt = rng.normal(scale=scale, size=(n_t, dim))
    return zs, zt, ys, yt


def _pair_loss(kind):
    def build(rng):
        zs, zt, ys, yt = _random_batch(rng, int(rng.integers(4, 9)), int(rng.integers(2, 5)), 3)
        pairs = build_sda_pairs(ys, yt)
        if kind == "alignment":
            return (lambda a, b: semantic_alignment_loss(a, b, pairs.positives())), [zs, zt]
        if kind == "separation":
            return (lambda a, b: separation_loss(a, b, pairs.negatives(), 1.0)), [zs, zt]
        return (lambda a, b: contrastive_loss(a, b, pairs, 1.0)), [zs, zt]
    return build


def _cross_entropy(rng):
    logits = rng.normal(size=(5, 4))
    labels = rng.integers(0, 4, 5)
    return (lambda z: cross_entropy(ad.softmax(z), labels)), [logits]


def _pair_distance(rng):
    return (lambda a, b: ad.tsum(pair_distance(a, b))), [rng.normal(size=(4, 3)), rng.normal(size=(4, 3))]


def _pair_similarity(rng):
    a = rng.normal(scale=0.3, size=(4, 3))
    b = rng.normal(scale=0.3, size=(4, 3))
    return (lambda p, q: ad.tsum(pair_similarity(p, q, 1.0))), [a, b]


def _net_closure(g_spec, h_spec, params: NetworkParams, loss):
    ng, nt = len(params.g), len(params.g_target or [])

    def fn(*leaves):
        p = NetworkParams(list(leaves[:ng]), list(leaves[ng + nt:]), params.shared_g,
                          list(leaves[ng:ng + nt]) if nt else None)
        return loss(p)
    return fn, params.flat()


def _ccsa_sda(arch: str, shared: bool = True):
    def build(rng):
        seed = int(rng.integers(2 ** 31))
        if arch == "conv":
            g_spec = NetSpec((1, 6, 6), (conv(1, 2, 3), maxpool(), flatten(), dense(8, 4), relu(), dense(4, 3)))
            shape = (6, 6)
        else:
            g_spec = mlp_g(3, 5, 3)
            shape = (3,)
        h_spec = softmax_h(3, 2)
        params = init_params(g_spec, h_spec, seed, shared_g=shared)
        params = params.map(lambda a: a + rng.normal(scale=0.1, size=np.shape(a)))
        n_s, n_t = int(rng.integers(2, 5)), int(rng.integers(2, 5))
        ys = np.concatenate([[0, 1], rng.integers(0, 2, n_s - 2)])
        yt = np.concatenate([[0, 1], rng.integers(0, 2, n_t - 2)])
        xs = rng.normal(size=(n_s, *shape))
        xt = rng.normal(size=(n_t, *shape))
        batch = SDABatch(xs, ys, xt, yt, build_sda_pairs(ys, yt))
        weights = LossWeights(0.1, 1.0)
        return _net_closure(g_spec, h_spec, params,
                            lambda p: ccsa_sda_loss(batch, p, weights, "CCSA", g_spec, h_spec))
    return build


def _ccsa_dg(rng):
    seed = int(rng.integers(2 ** 31))
    g_spec, h_spec = mlp_g(3, 5, 3), softmax_h(3, 2)
    params = init_params(g_spec, h_spec, seed)
    params = params.map(lambda a: a + rng.normal(scale=0.1, size=np.shape(a)))
    batches = []
    for _ in range(3):
        y = np.concatenate([[0, 1], rng.integers(0, 2, 2)])
        batches.append(DomainBatch(rng.normal(size=(4, 3)), y))
    pairs = build_dg_pairs([b.y for b in batches], 2, seed)
    weights = LossWeights(0.1, 1.0)
    return _net_closure(g_spec, h_spec, params,
                        lambda p: ccsa_dg_loss(batches, p, weights, pairs, g_spec, h_spec))


PRIMITIVES = {
    "matmul": _binary(ad.matmul, _normal(3, 4), _normal(4, 2)),
    "add": _binary(ad.add, _normal(3, 4), _normal(4)),
    "sub": _binary(ad.sub, _normal(3, 4), _normal(3, 4)),
    "mul": _binary(ad.mul, _normal(3, 4), _normal(3, 4)),
    "scale": _unary(lambda x: ad.scale(x, -1.7), _normal(3, 4)),
    "relu": _unary(ad.relu, lambda rng: _away_from_zero(rng, (3, 4))),
    "hinge": _unary(ad.hinge, lambda rng: _away_from_zero(rng, (5,))),
    "conv2d": _binary(ad.conv2d, _normal(2, 2, 5, 6), _normal(3, 2, 3, 2)),
    "maxpool2d": _unary(ad.maxpool2d, lambda rng: _distinct(rng, (2, 2, 5, 4))),
    "pad2d": _unary(lambda x: ad.pad2d(x, 2), _normal(2, 3, 3)),
    "softmax": _unary(ad.softmax, _normal(3, 5)),
    "square": _unary(ad.square, _normal(3, 4)),
    "sqrt": _unary(ad.sqrt, lambda rng: rng.uniform(0.2, 2.0, (3, 4))),
    "log": _unary(ad.log, lambda rng: rng.uniform(0.2, 2.0, (3, 4))),
    "sum": _unary(lambda x: ad.tsum(x, axis=1), _normal(3, 4)),
    "mean": _unary(lambda x: ad.mean(x, axis=0), _normal(3, 4)),
    "reshape": _unary(lambda x: ad.reshape(x, (2, 6)), _normal(3, 4)),
    "rows": _unary(lambda x: ad.rows(x, [2, 0, 2, 1]), _normal(3, 4)),
    "pick": _unary(lambda x: ad.pick(x, [3, 0, 1]), _normal(3, 4)),
    "norm_diff": _binary(ad.norm_diff, _normal(4, 3), _normal(4, 3)),
}

LOSSES = {
    "cross_entropy": _cross_entropy,
    "pair_distance": _pair_distance,
    "pair_similarity": _pair_similarity,
    "semantic_alignment_loss": _pair_loss("alignment"),
    "separation_loss": _pair_loss("separation"),
    "contrastive_loss": _pair_loss("contrastive"),
    "ccsa_sda_loss[mlp]": _ccsa_sda("mlp"),
    "ccsa_sda_loss[mlp,unshared]": _ccsa_sda("mlp", shared=False),
    "ccsa_sda_loss[conv]": _ccsa_sda("conv"),
    "ccsa_dg_loss": _ccsa_dg,
}

ITEMS = {**PRIMITIVES, **LOSSES}


def check_item(name: str, seed: int, trials: int = 1, epsilon: float = EPSILON) -> float:
    """Worst relative error of one item across ``trials`` seeded draws."""
    build = ITEMS[name]
    worst = 0.0
    for t in range(trials):
        fn, inputs = build(np.random.default_rng([seed, t, sum(map(ord, name))]))
        worst = max(worst, grad_check(fn, inputs, epsilon))
    return worst


def run_suite(seed: int = 0, trials: int = 3, names=None) -> dict[str, float]:
    return {name: check_item(name, seed, trials) for name in (names or ITEMS)}
