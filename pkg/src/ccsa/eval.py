"""Accuracy and cross-domain embedding-geometry metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .data import Dataset
from .nn import NetSpec, NetworkParams, embed, predict


@dataclass
class MetricsRecord:
    accuracy: float
    per_class_accuracy: list
    intra_class_cross_domain_mean_distance: float | None
    inter_class_cross_domain_mean_distance: float | None
    n_labeled_target: int
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"accuracy {self.accuracy} outside [0, 1]")
        for d in (self.intra_class_cross_domain_mean_distance, self.inter_class_cross_domain_mean_distance):
            if d is not None and d < 0:
                raise ValueError("distances must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def predict_labels(probabilities: np.ndarray) -> np.ndarray:
    """Argmax per row; ``np.argmax`` already returns the lowest index on ties."""
    return np.argmax(probabilities, axis=1)


def class_probabilities(params: NetworkParams, g_spec: NetSpec, h_spec: NetSpec, dataset: Dataset,
                        stream: str = "source") -> np.ndarray:
    return predict(params, h_spec, embed(params, g_spec, dataset.x, stream)).data


def accuracy(params: NetworkParams, spec: tuple[NetSpec, NetSpec], dataset: Dataset,
             stream: str = "source") -> float:
    """Fraction of samples whose argmax class matches the label."""
    if not len(dataset):
        raise ValueError("accuracy: empty dataset")
    g_spec, h_spec = spec
    pred = predict_labels(class_probabilities(params, g_spec, h_spec, dataset, stream))
    return float(np.mean(pred == dataset.y))


def per_class_accuracy(params, spec, dataset: Dataset, stream: str = "source") -> list:
    """Accuracy per class; ``None`` for classes absent from ``dataset``."""
    g_spec, h_spec = spec
    pred = predict_labels(class_probabilities(params, g_spec, h_spec, dataset, stream))
    out = []
    for c in range(dataset.num_classes):
        mask = dataset.y == c
        out.append(float(np.mean(pred[mask] == c)) if mask.any() else None)
    return out


def pairwise_stats(za: np.ndarray, ya: np.ndarray, zb: np.ndarray, yb: np.ndarray):
    """Mean Euclidean distance over same-label and different-label cross pairs.

    Either mean is ``None`` when no pair of that kind exists.
    """
    za, zb = np.asarray(za, float), np.asarray(zb, float)
    d2 = (np.sum(za * za, 1)[:, None] + np.sum(zb * zb, 1)[None, :] - 2.0 * za @ zb.T)
    dist = np.sqrt(np.maximum(d2, 0.0))
    same = np.asarray(ya)[:, None] == np.asarray(yb)[None, :]
    intra = float(dist[same].mean()) if same.any() else None
    inter = float(dist[~same].mean()) if (~same).any() else None
    return intra, inter


def embedding_stats(params: NetworkParams, spec, dataset_a: Dataset, dataset_b: Dataset,
                    stream_a: str = "source", stream_b: str = "target"):
    """(intra, inter): mean distances of cross-domain same-class / different-class embedding pairs."""
    g_spec = spec[0] if isinstance(spec, tuple) else spec
    za = embed(params, g_spec, dataset_a.x, stream_a).data
    zb = embed(params, g_spec, dataset_b.x, stream_b).data
    return pairwise_stats(za, dataset_a.y, zb, dataset_b.y)


def evaluate(params, spec, holdout: Dataset, reference: Dataset, n_labeled_target: int,
             seed: int, stream: str = "target") -> MetricsRecord:
    """Holdout accuracy plus geometry between ``reference`` (source stream) and ``holdout``."""
    intra, inter = embedding_stats(params, spec, reference, holdout, "source", stream)
    return MetricsRecord(accuracy(params, spec, holdout, stream), per_class_accuracy(params, spec, holdout, stream),
                         intra, inter, n_labeled_target, seed)
