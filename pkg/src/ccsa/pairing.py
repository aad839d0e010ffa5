"""Cross-domain positive/negative pair construction and per-epoch reshuffling."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np


class PairLabelError(ValueError):
    """A pair's polarity flag disagrees with its endpoint labels."""


def _frozen(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype).reshape(-1)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class PairSet:
    """Pairs ``(a[k], b[k])`` indexing into two datasets, flagged by label equality."""

    a: np.ndarray
    b: np.ndarray
    positive: np.ndarray
    domain_a: str = "source"
    domain_b: str = "target"

    def __post_init__(self):
        object.__setattr__(self, "a", _frozen(self.a, np.int64))
        object.__setattr__(self, "b", _frozen(self.b, np.int64))
        object.__setattr__(self, "positive", _frozen(self.positive, bool))
        if not (len(self.a) == len(self.b) == len(self.positive)):
            raise ValueError("PairSet: index and flag arrays differ in length")

    @classmethod
    def from_labels(cls, a, b, labels_a, labels_b, domain_a="source", domain_b="target") -> "PairSet":
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        pos = np.asarray(labels_a)[a] == np.asarray(labels_b)[b] if len(a) else np.zeros(0, bool)
        return cls(a, b, pos, domain_a, domain_b)

    def __len__(self):
        return len(self.a)

    def __eq__(self, other):
        return (isinstance(other, PairSet) and self.domain_a == other.domain_a
                and self.domain_b == other.domain_b and np.array_equal(self.a, other.a)
                and np.array_equal(self.b, other.b) and np.array_equal(self.positive, other.positive))

    def take(self, index) -> "PairSet":
        index = np.asarray(index, dtype=np.int64)
        return PairSet(self.a[index], self.b[index], self.positive[index], self.domain_a, self.domain_b)

    def positives(self) -> "PairSet":
        return self.take(np.flatnonzero(self.positive))

    def negatives(self) -> "PairSet":
        return self.take(np.flatnonzero(~self.positive))

    @property
    def n_positive(self) -> int:
        return int(self.positive.sum())

    @property
    def n_negative(self) -> int:
        return len(self) - self.n_positive

    def validate(self, labels_a, labels_b) -> None:
        if not len(self):
            return
        truth = np.asarray(labels_a)[self.a] == np.asarray(labels_b)[self.b]
        bad = np.flatnonzero(truth != self.positive)
        if bad.size:
            k = int(bad[0])
            raise PairLabelError(
                f"pair {k} ({self.a[k]}, {self.b[k]}) flagged "
                f"{'positive' if self.positive[k] else 'negative'} but labels "
                f"{np.asarray(labels_a)[self.a[k]]} vs {np.asarray(labels_b)[self.b[k]]}")


def _labels(ds):
    return np.asarray(ds.y if hasattr(ds, "y") else ds)


def build_sda_pairs(source, target, seed: int = 0, budget_per_target: int | None = None) -> PairSet:
    """Pair every target sample with source samples.

    With ``budget_per_target=None`` the full cross product is emitted. Otherwise
    each target sample gets up to ``budget_per_target`` positives and as many
    negatives, drawn uniformly without replacement. Pairs are ordered by target
    index, then source index.
    """
    ys, yt = _labels(source), _labels(target)
    if len(ys) == 0 or len(yt) == 0:
        raise ValueError("build_sda_pairs: source and target must be nonempty")
    if budget_per_target is not None and budget_per_target < 1:
        raise ValueError("budget_per_target must be a positive count or None")
    rng = np.random.default_rng(seed)
    a_idx, b_idx = [], []
    all_src = np.arange(len(ys))
    for j, label in enumerate(yt):
        same = ys == label
        if budget_per_target is None:
            chosen = all_src
        else:
            picks = []
            for bucket in (all_src[same], all_src[~same]):
                k = min(budget_per_target, bucket.size)
                picks.append(rng.choice(bucket, size=k, replace=False) if k else bucket[:0])
            chosen = np.sort(np.concatenate(picks))
        a_idx.append(chosen)
        b_idx.append(np.full(chosen.size, j, dtype=np.int64))
    return PairSet.from_labels(np.concatenate(a_idx), np.concatenate(b_idx), ys, yt,
                               getattr(source, "domain", "source"), getattr(target, "domain", "target"))


def build_dg_pairs(domains, per_domain_budget: int = 2, seed: int = 0) -> dict[tuple[int, int], PairSet]:
    """Budgeted pairs for every unordered pair of source domains.

    For domains ``u < v``, each sample of ``u`` draws ``K`` partners from ``v``
    and each sample of ``v`` draws ``K`` partners from ``u``. Partners already
    paired with a sample are excluded from its draw, so the union has no
    duplicates. Pairs are stored oriented ``(index in u, index in v)`` under the
    key ``(u, v)``.
    """
    if len(domains) < 2:
        raise ValueError(f"build_dg_pairs: need at least 2 domains, got {len(domains)}")
    if per_domain_budget < 1:
        raise ValueError("per_domain_budget must be >= 1")
    K = per_domain_budget
    rng = np.random.default_rng(seed)
    out = {}
    for u, v in combinations(range(len(domains)), 2):
        yu, yv = _labels(domains[u]), _labels(domains[v])
        pairs = set()
        for i in range(len(yu)):
            k = min(K, len(yv))
            for j in rng.choice(len(yv), size=k, replace=False):
                pairs.add((i, int(j)))
        taken_by_v: dict[int, set] = {}
        for i, j in pairs:
            taken_by_v.setdefault(j, set()).add(i)
        for j in range(len(yv)):
            taken = taken_by_v.get(j, ())
            free = np.array([i for i in range(len(yu)) if i not in taken], dtype=np.int64)
            k = min(K, free.size)
            if k:
                for i in rng.choice(free, size=k, replace=False):
                    pairs.add((int(i), j))
        ordered = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
        out[(u, v)] = PairSet.from_labels(ordered[:, 0], ordered[:, 1], yu, yv,
                                          getattr(domains[u], "domain", str(u)),
                                          getattr(domains[v], "domain", str(v)))
    return out


def reshuffle_epoch(pair_set: PairSet, seed: int, epoch: int) -> PairSet:
    """Same pairs in an order determined by ``(seed, epoch)``."""
    rng = np.random.default_rng([int(seed), int(epoch)])
    return pair_set.take(rng.permutation(len(pair_set)))
