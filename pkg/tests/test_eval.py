import numpy as np
import numpy.testing as npt
import pytest

from ccsa.data import Dataset
from ccsa.eval import (MetricsRecord, accuracy, embedding_stats, evaluate, pairwise_stats, per_class_accuracy,
                       predict_labels)
from ccsa.nn import NetSpec, NetworkParams, dense, softmax_h


def identity_model(h_w, h_b):
    g = NetSpec((2,), (dense(2, 2),))
    return (g, softmax_h(2, 2)), NetworkParams([np.eye(2), np.zeros(2)], [np.asarray(h_w, float), np.asarray(h_b, float)])


def test_perfect_predictions():
    spec, p = identity_model([[10, 0], [0, 10]], [0, 0])
    ds = Dataset(np.array([[1.0, 0.0], [0.0, 1.0]]), [0, 1], 2)
    assert accuracy(p, spec, ds) == 1.0


def test_uniform_model_tie_breaks_to_class_zero():
    spec, p = identity_model(np.zeros((2, 2)), [0, 0])
    ds = Dataset(np.random.default_rng(0).normal(size=(6, 2)), [0, 1, 0, 1, 0, 1], 2)
    assert accuracy(p, spec, ds) == 0.5
    npt.assert_array_equal(predict_labels(np.full((3, 4), 0.25)), 0)


def test_half_correct():
    spec, p = identity_model([[10, 0], [0, 10]], [0, 0])
    ds = Dataset(np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]]), [0, 1, 1, 0], 2)
    assert accuracy(p, spec, ds) == 0.5
    assert per_class_accuracy(p, spec, ds) == [0.5, 0.5]


def test_empty_dataset_rejected():
    spec, p = identity_model(np.zeros((2, 2)), [0, 0])
    with pytest.raises(ValueError):
        accuracy(p, spec, Dataset(np.zeros((0, 2)), np.zeros(0, int), 2))


def test_identical_embeddings_zero_distances():
    z = np.ones((4, 3))
    assert pairwise_stats(z, [0, 1, 0, 1], z, [1, 0, 1, 0]) == (0.0, 0.0)


def test_two_cluster_distances():
    za = np.array([[0.0, 0.0], [2.0, 0.0]])
    intra, inter = pairwise_stats(za, [0, 1], za.copy(), [0, 1])
    assert intra == 0.0 and inter == 2.0


def test_absent_kind_reported_as_none():
    z = np.zeros((2, 2))
    assert pairwise_stats(z, [0, 0], z, [0, 0])[1] is None
    assert pairwise_stats(z, [0, 0], z, [1, 1])[0] is None


def test_pairwise_stats_against_double_loop():
    rng = np.random.default_rng(0)
    for _ in range(10):
        za, zb = rng.normal(size=(5, 3)), rng.normal(size=(4, 3))
        ya, yb = rng.integers(0, 2, 5), rng.integers(0, 2, 4)
        same, diff = [], []
        for i in range(5):
            for j in range(4):
                d = np.sqrt(np.sum((za[i] - zb[j]) ** 2))
                (same if ya[i] == yb[j] else diff).append(d)
        intra, inter = pairwise_stats(za, ya, zb, yb)
        if same:
            assert abs(intra - np.mean(same)) < 1e-12
        if diff:
            assert abs(inter - np.mean(diff)) < 1e-12


def test_embedding_stats_and_evaluate():
    spec, p = identity_model([[10, 0], [0, 10]], [0, 0])
    a = Dataset(np.array([[0.0, 0.0], [2.0, 0.0]]), [0, 1], 2)
    b = Dataset(np.array([[0.0, 0.0], [2.0, 0.0]]), [0, 1], 2, "target")
    assert embedding_stats(p, spec, a, b) == (0.0, 2.0)
    rec = evaluate(p, spec, b, a, n_labeled_target=1, seed=0)
    assert rec.intra_class_cross_domain_mean_distance == 0.0
    assert rec.to_dict()["n_labeled_target"] == 1


def test_metrics_record_validation():
    with pytest.raises(ValueError):
        MetricsRecord(1.5, [], None, None, 0, 0)
    with pytest.raises(ValueError):
        MetricsRecord(0.5, [], -1.0, None, 0, 0)
