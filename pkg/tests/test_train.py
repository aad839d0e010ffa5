import numpy as np
import numpy.testing as npt
import pytest

from ccsa import autodiff as ad
from ccsa.autodiff import ShapeError, Tensor
from ccsa.data import Dataset, gen_gaussian_domains, gen_rotated_gaussian_domains, subsample_target
from ccsa.eval import accuracy
from ccsa.losses import semantic_alignment_loss
from ccsa.nn import init_params
from ccsa.pairing import build_sda_pairs
from ccsa.train import (TrainConfig, build_specs, finetune_h, init_source, sgd_step, train_dg,
                        train_pooled_baseline, train_sda)

FAST = dict(epochs_source=5, epochs_joint=5, epochs_finetune=5, hidden=16, embed_dim=4)


def same_params(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a.flat(), b.flat()))


def test_sgd_step_plain():
    new, _ = sgd_step([np.array(0.0)], [np.array(1.0)], None, TrainConfig(optimizer="sgd", lr=0.1))
    npt.assert_allclose(new[0], -0.1)


@pytest.mark.parametrize("opt", ["sgd", "momentum", "adam"])
def test_zero_gradient_leaves_params(opt):
    p = [np.array([1.0, -2.0])]
    cfg = TrainConfig(optimizer=opt)
    state = None
    for _ in range(3):
        p2, state = sgd_step(p, [np.zeros(2)], state, cfg)
    npt.assert_array_equal(p2[0], p[0])


def test_momentum_closed_form():
    cfg = TrainConfig(optimizer="momentum", lr=0.1, momentum=0.9)
    p, state, g = [np.array(0.0)], None, 2.0
    for t in range(1, 30):
        before = p[0]
        p, state = sgd_step(p, [np.array(g)], state, cfg)
        npt.assert_allclose(before - p[0], 0.1 * g * (1 - 0.9 ** t) / (1 - 0.9), rtol=1e-12)


def test_adam_constant_gradient_step_tends_to_lr():
    cfg = TrainConfig(optimizer="adam", lr=0.01)
    p, state = [np.array([0.0, 0.0])], None
    g = np.array([3.0, -1e-3])
    for _ in range(200):
        before = p[0]
        p, state = sgd_step(p, [g], state, cfg)
    # bias-corrected moments equal g and g^2 exactly, so the step is lr*g/(|g|+eps)
    npt.assert_allclose(before - p[0], 0.01 * g / (np.abs(g) + cfg.eps), rtol=1e-9)


def test_sgd_step_shape_mismatch():
    with pytest.raises(ShapeError):
        sgd_step([np.zeros(2)], [np.zeros(3)], None, TrainConfig())


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(gamma=1.5)
    with pytest.raises(ValueError):
        TrainConfig(optimizer="rmsprop")
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"nope": 1})
    cfg = TrainConfig(gamma=0.3, variant="CS")
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def _source_setup(epochs):
    rng = np.random.default_rng(0)
    y = np.repeat([0, 1], 50)
    src = Dataset(np.array([[-3.0, -3.0], [3.0, 3.0]])[y] + rng.normal(size=(100, 2)), y, 2)
    cfg = TrainConfig(epochs_source=epochs, hidden=16, embed_dim=4)
    g, h = build_specs(src.feature_shape, 2, cfg)
    return src, cfg, g, h, init_params(g, h, 0)


def test_init_source_zero_epochs_unchanged():
    src, cfg, g, h, p = _source_setup(0)
    assert same_params(init_source(p, src, cfg, g, h), p)


def test_init_source_learns_separable_task():
    src, cfg, g, h, p = _source_setup(50)
    out = init_source(p, src, cfg, g, h)
    assert accuracy(out, (g, h), src) > 0.95
    assert same_params(out, init_source(p, src, cfg, g, h))


def test_finetune_only_touches_h():
    src, cfg, g, h, p = _source_setup(3)
    p = init_source(p, src, cfg, g, h)
    out, hist = finetune_h(p, src, cfg.replace(epochs_finetune=5), g, h)
    assert all(np.array_equal(a, b) for a, b in zip(out.g, p.g))
    assert not np.array_equal(out.h[0], p.h[0])
    assert len(hist) == 5


def _sda_data(seed=0):
    src, tgt = gen_gaussian_domains(2, 2, 20, 2.0, 60.0, seed)
    lab, hold = subsample_target(tgt, 1, seed)
    return src, lab, hold


def test_train_sda_deterministic():
    src, lab, _ = _sda_data()
    cfg = TrainConfig(seed=3, **FAST)
    a, b = train_sda(src, lab, cfg), train_sda(src, lab, cfg)
    assert same_params(a.params, b.params)
    assert a.history == b.history
    assert set(a.history) == {"source", "joint", "finetune"}


def test_tiny_gamma_tracks_ft():
    src, lab, _ = _sda_data()
    ft = train_sda(src, lab, TrainConfig(variant="FT", **FAST))
    near = train_sda(src, lab, TrainConfig(variant="CCSA", gamma=1e-9, **FAST))
    for a, b in zip(ft.history["joint"], near.history["joint"]):
        assert abs(a["classification"] - b["classification"]) < 1e-6
    for a, b in zip(ft.params.flat(), near.params.flat()):
        npt.assert_allclose(a, b, atol=1e-6)


def test_ft_joint_total_is_classification():
    src, lab, _ = _sda_data()
    rep = train_sda(src, lab, TrainConfig(variant="FT", **FAST))
    for row in rep.history["joint"]:
        assert row["total"] == row["classification"]


def test_empty_target_warns():
    src, _, _ = _sda_data()
    empty = Dataset(np.zeros((0, 2)), np.zeros(0, int), 2, "target")
    rep = train_sda(src, empty, TrainConfig(**FAST))
    assert rep.warnings


def test_unshared_streams_diverge_in_joint_phase():
    src, lab, _ = _sda_data()
    rep = train_sda(src, lab, TrainConfig(shared_g=False, **FAST))
    assert not rep.params.shared_g
    assert not np.array_equal(rep.params.g[0], rep.params.g_target[0])


def test_alignment_gradient_zero_at_coincident_embeddings():
    z = Tensor(np.tile([[0.3, -1.2]], (3, 1)))
    zt = Tensor(np.tile([[0.3, -1.2]], (2, 1)))
    loss = semantic_alignment_loss(z, zt, build_sda_pairs([0, 0, 0], [0, 0]))
    for g in ad.backward(loss, [z, zt]):
        npt.assert_array_equal(g, 0)


def test_train_dg_identical_domains_alignment_decreases():
    d = gen_rotated_gaussian_domains(2, 2, 20, [0], 0)[0]
    doms = [d, d.relabel_domain("copy")]
    run = lambda v: [row["alignment"] for row in
                     train_dg(doms, TrainConfig(epochs_joint=60, hidden=16, embed_dim=4, variant=v)).history["joint"]]
    ccsa, ft = run("CCSA"), run("FT")
    # cross-entropy alone spreads classes apart; the alignment term pulls them back in
    assert ccsa[-1] < ccsa[0]
    assert ccsa[-1] < 0.5 * ft[-1]


def test_train_dg_deterministic_and_baseline_runs():
    doms = gen_rotated_gaussian_domains(2, 2, 10, [0, 30, 60], 1)
    cfg = TrainConfig(epochs_joint=3, hidden=8, embed_dim=4, seed=2)
    a, b = train_dg(doms, cfg), train_dg(doms, cfg)
    assert same_params(a.params, b.params)
    base = train_pooled_baseline(doms, cfg)
    assert len(base.history["source"]) == 3
    with pytest.raises(ValueError):
        train_dg(doms[:1], cfg)


def test_report_save(tmp_path):
    src, lab, _ = _sda_data()
    rep = train_sda(src, lab, TrainConfig(**FAST))
    rep.save(tmp_path / "r")
    assert (tmp_path / "r" / "report.json").exists()
    assert (tmp_path / "r" / "params.npz").exists()
