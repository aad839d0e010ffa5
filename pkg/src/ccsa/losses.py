"""Classification, semantic-alignment and separation losses and their CCSA combinations."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .nn import NetSpec, NetworkParams, embed, predict
from .pairing import PairLabelError, PairSet

LOG_FLOOR = 1e-12


class LossVariant(str, Enum):
    FT = "FT"
    CSA = "CSA"
    CS = "CS"
    CCSA = "CCSA"

    @property
    def uses_alignment(self) -> bool:
        return self in (LossVariant.CSA, LossVariant.CCSA)

    @property
    def uses_separation(self) -> bool:
        return self in (LossVariant.CS, LossVariant.CCSA)


@dataclass(frozen=True)
class LossWeights:
    gamma: float = 0.1
    margin: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not self.margin > 0.0:
            raise ValueError(f"margin must be positive, got {self.margin}")


def cross_entropy(probabilities, labels) -> Tensor:
    """Batch mean of ``-log p[label]``; probabilities are clamped at 1e-12 before the log."""
    p = ad.as_tensor(probabilities)
    labels = np.asarray(labels, dtype=np.int64)
    if p.ndim != 2 or labels.shape != (p.shape[0],):
        raise ShapeError("cross_entropy", p.shape, labels.shape)
    if labels.size and (labels.min() < 0 or labels.max() >= p.shape[1]):
        raise ValueError(f"cross_entropy: labels outside 0..{p.shape[1] - 1}")
    return ad.scale(ad.mean(ad.log(ad.pick(p, labels), floor=LOG_FLOOR)), -1.0)


def pair_distance(za, zb) -> Tensor:
    """``0.5 * ||za - zb||^2`` over the last axis."""
    za, zb = ad.as_tensor(za), ad.as_tensor(zb)
    if za.shape != zb.shape:
        raise ShapeError("pair_distance", za.shape, zb.shape)
    return ad.scale(ad.tsum(ad.square(ad.sub(za, zb)), axis=-1), 0.5)


def pair_similarity(za, zb, m: float) -> Tensor:
    """``0.5 * max(0, m - ||za - zb||)^2`` over the last axis."""
    za, zb = ad.as_tensor(za), ad.as_tensor(zb)
    if za.shape != zb.shape:
        raise ShapeError("pair_similarity", za.shape, zb.shape)
    if not m > 0:
        raise ValueError(f"margin must be positive, got {m}")
    gap = ad.hinge(ad.sub(Tensor(np.full(za.shape[:-1], float(m))), ad.norm_diff(za, zb)))
    return ad.scale(ad.square(gap), 0.5)


def _check_pairs(pairs: PairSet, want_positive: bool, labels_s, labels_t, op: str) -> None:
    wrong = pairs.positive != want_positive
    if np.any(wrong):
        k = int(np.flatnonzero(wrong)[0])
        kind = "negative" if want_positive else "positive"
        raise PairLabelError(f"{op}: pair {k} ({pairs.a[k]}, {pairs.b[k]}) is {kind}")
    if labels_s is not None and labels_t is not None:
        pairs.validate(labels_s, labels_t)


def _pair_rows(zs, zt, pairs: PairSet):
    zs, zt = ad.as_tensor(zs), ad.as_tensor(zt)
    if zs.shape[1:] != zt.shape[1:]:
        raise ShapeError("pairs", zs.shape, zt.shape, "embedding widths differ")
    return ad.rows(zs, pairs.a), ad.rows(zt, pairs.b)


def semantic_alignment_loss(embeddings_s, embeddings_t, positive_pairs: PairSet,
                            labels_s=None, labels_t=None) -> Tensor:
    """Mean ``pair_distance`` over same-class cross-domain pairs; 0 for no pairs."""
    _check_pairs(positive_pairs, True, labels_s, labels_t, "semantic_alignment_loss")
    if not len(positive_pairs):
        return Tensor(0.0)
    za, zb = _pair_rows(embeddings_s, embeddings_t, positive_pairs)
    return ad.mean(pair_distance(za, zb))


def separation_loss(embeddings_s, embeddings_t, negative_pairs: PairSet, m: float,
                    labels_s=None, labels_t=None) -> Tensor:
    """Mean ``pair_similarity`` over different-class cross-domain pairs; 0 for no pairs."""
    _check_pairs(negative_pairs, False, labels_s, labels_t, "separation_loss")
    if not len(negative_pairs):
        return Tensor(0.0)
    za, zb = _pair_rows(embeddings_s, embeddings_t, negative_pairs)
    return ad.mean(pair_similarity(za, zb, m))


def contrastive_loss(embeddings_s, embeddings_t, all_pairs: PairSet, m: float,
                     labels_s=None, labels_t=None) -> Tensor:
    """Alignment over the positive pairs plus separation over the negative ones."""
    if labels_s is not None and labels_t is not None:
        all_pairs.validate(labels_s, labels_t)
    return ad.add(semantic_alignment_loss(embeddings_s, embeddings_t, all_pairs.positives()),
                  separation_loss(embeddings_s, embeddings_t, all_pairs.negatives(), m))


def combine_sda(l_c, l_sa, l_s, weights: LossWeights, variant) -> Tensor | float:
    """Weighted SDA objective from its three terms (Tensors or floats)."""
    variant = LossVariant(variant)
    g = weights.gamma
    if variant is LossVariant.FT:
        return l_c
    contrastive = l_sa if variant is LossVariant.CSA else l_s if variant is LossVariant.CS else l_sa + l_s
    return (1.0 - g) * l_c + g * contrastive


def dg_coefficients(num_domains: int, gamma: float) -> tuple[float, float]:
    """(classification weight, per-domain-pair weight) for D source domains."""
    D = num_domains
    if D < 2:
        raise ValueError(f"need at least 2 domains, got {D}")
    return (1.0 - gamma) / D, 2.0 * gamma / (D * D - D)


@dataclass
class SDABatch:
    """One SDA step's inputs.

    ``pairs`` index rows of ``x_s`` and ``x_t``. Classification uses the rows
    ``cls_index`` of ``x_s`` (all rows when None).
    """

    x_s: np.ndarray
    y_s: np.ndarray
    x_t: np.ndarray
    y_t: np.ndarray
    pairs: PairSet
    cls_index: np.ndarray | None = None


@dataclass
class LossTerms:
    total: Tensor
    classification: Tensor
    alignment: Tensor
    separation: Tensor

    def values(self) -> dict[str, float]:
        return {k: getattr(self, k).item() for k in ("classification", "alignment", "separation", "total")}


def sda_loss_terms(batch: SDABatch, params: NetworkParams, weights: LossWeights, variant,
                   g_spec: NetSpec, h_spec: NetSpec) -> LossTerms:
    variant = LossVariant(variant)
    y_s = np.asarray(batch.y_s)
    y_t = np.asarray(batch.y_t)
    batch.pairs.validate(y_s, y_t)
    zs = embed(params, g_spec, batch.x_s, "source")
    idx = np.arange(len(y_s)) if batch.cls_index is None else np.asarray(batch.cls_index)
    zc = ad.rows(zs, idx) if batch.cls_index is not None else zs
    l_c = cross_entropy(predict(params, h_spec, zc), y_s[idx])
    if len(batch.pairs):
        zt = embed(params, g_spec, batch.x_t, "target")
        l_sa = semantic_alignment_loss(zs, zt, batch.pairs.positives())
        l_s = separation_loss(zs, zt, batch.pairs.negatives(), weights.margin)
    else:
        l_sa = l_s = Tensor(0.0)
    return LossTerms(combine_sda(l_c, l_sa, l_s, weights, variant), l_c, l_sa, l_s)


def ccsa_sda_loss(batch: SDABatch, params: NetworkParams, weights: LossWeights, variant,
                  g_spec: NetSpec, h_spec: NetSpec) -> Tensor:
    """``(1-γ) L_C + γ (L_SA + L_S)`` for CCSA; CSA / CS drop one term, FT keeps only L_C.

    L_C is computed on source rows only.
    """
    return sda_loss_terms(batch, params, weights, variant, g_spec, h_spec).total


@dataclass
class DomainBatch:
    x: np.ndarray
    y: np.ndarray
    cls_index: np.ndarray | None = None


@dataclass
class DGLossTerms:
    total: Tensor
    classification: list
    alignment: dict = field(default_factory=dict)
    separation: dict = field(default_factory=dict)

    def values(self) -> dict[str, float]:
        """Mean classification loss over domains, alignment / separation summed over domain pairs."""
        return {
            "classification": sum(t.item() for t in self.classification) / len(self.classification),
            "alignment": sum(t.item() for t in self.alignment.values()),
            "separation": sum(t.item() for t in self.separation.values()),
            "total": self.total.item(),
        }


def combine_dg(mean_c, sum_sa, sum_s, num_domains: int, weights: LossWeights, variant="CCSA"):
    """DG objective from the mean classification loss and the pair-summed contrastive terms."""
    variant = LossVariant(variant)
    if variant is LossVariant.FT:
        return mean_c
    _, p_w = dg_coefficients(num_domains, weights.gamma)
    out = (1.0 - weights.gamma) * mean_c
    if variant.uses_alignment:
        out = out + p_w * sum_sa
    if variant.uses_separation:
        out = out + p_w * sum_s
    return out


def dg_loss_terms(domain_batches, params: NetworkParams, weights: LossWeights,
                  pair_sets: dict, g_spec: NetSpec, h_spec: NetSpec, variant="CCSA") -> DGLossTerms:
    variant = LossVariant(variant)
    D = len(domain_batches)
    c_w, p_w = dg_coefficients(D, weights.gamma)
    embeddings, cls_terms = [], []
    for batch in domain_batches:
        y = np.asarray(batch.y)
        z = embed(params, g_spec, batch.x, "source")
        embeddings.append(z)
        if batch.cls_index is None:
            cls_terms.append(cross_entropy(predict(params, h_spec, z), y))
        else:
            idx = np.asarray(batch.cls_index)
            cls_terms.append(cross_entropy(predict(params, h_spec, ad.rows(z, idx)), y[idx]))
    total = cls_terms[0]
    for t in cls_terms[1:]:
        total = ad.add(total, t)
    if variant is not LossVariant.FT:
        total = ad.scale(total, c_w)
    else:
        total = ad.scale(total, 1.0 / D)
    align, sep = {}, {}
    for key in sorted(pair_sets):
        u, v = key
        if not (0 <= u < D and 0 <= v < D and u != v):
            raise ValueError(f"pair key {key} does not name two distinct domains of {D}")
        pairs = pair_sets[key]
        pairs.validate(domain_batches[u].y, domain_batches[v].y)
        align[key] = semantic_alignment_loss(embeddings[u], embeddings[v], pairs.positives())
        sep[key] = separation_loss(embeddings[u], embeddings[v], pairs.negatives(), weights.margin)
        if variant.uses_alignment:
            total = ad.add(total, ad.scale(align[key], p_w))
        if variant.uses_separation:
            total = ad.add(total, ad.scale(sep[key], p_w))
    return DGLossTerms(total, cls_terms, align, sep)


def ccsa_dg_loss(domain_batches, params: NetworkParams, weights: LossWeights, pair_sets: dict,
                 g_spec: NetSpec, h_spec: NetSpec, variant="CCSA") -> Tensor:
    """``(1-γ)/D Σ_u L_C(u) + 2γ/(D²-D) Σ_(u,v) [L_SA(u,v) + L_S(u,v)]``.

    ``pair_sets`` maps unordered domain index pairs ``(u, v)``, ``u < v``, to
    PairSets indexing rows of ``domain_batches[u]`` and ``domain_batches[v]``.
    The FT variant is the plain mean of per-domain classification losses.
    """
    if len(domain_batches) < 2:
        raise ValueError(f"ccsa_dg_loss: need at least 2 domains, got {len(domain_batches)}")
    return dg_loss_terms(domain_batches, params, weights, pair_sets, g_spec, h_spec, variant).total
