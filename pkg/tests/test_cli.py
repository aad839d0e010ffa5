import csv
import io
import json

import numpy as np
import numpy.testing as npt
import pytest

from ccsa import autodiff as ad
from ccsa.cli import gradcheck_cmd, main
from ccsa.data import Dataset, write_csv
from ccsa.eval import MetricsRecord
from ccsa.experiment import (CSV_HEADER, ConfigError, export_projection, parse_config, pca_2d, read_results,
                             run)
from ccsa.nn import NetSpec, NetworkParams, dense, save_params, softmax_h

QUICK_TRAIN = {"epochs_source": 2, "epochs_joint": 2, "epochs_finetune": 2, "hidden": 8, "embed_dim": 4}


def sda_config(**over):
    cfg = {"task": "sda", "data": {"kind": "gaussian", "per_class": 10}, "train": QUICK_TRAIN,
           "variants": ["CCSA"], "sweep": [1], "seeds": [0]}
    cfg.update(over)
    return cfg


def write_config(tmp_path, cfg, name="c.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def test_gradcheck_passes(capsys):
    assert gradcheck_cmd(0, 1) == 0
    out = capsys.readouterr().out
    assert "relu" in out and "ccsa_dg_loss" in out


def test_gradcheck_names_corrupted_relu(monkeypatch):
    monkeypatch.setattr(ad.ReLU, "backward", lambda self, g: (g * self.mask * 1.5,))
    buf = io.StringIO()
    assert gradcheck_cmd(0, 1, out=buf) != 0
    last = buf.getvalue().strip().splitlines()[-1]
    offenders = [name.strip() for name in last.split(":", 1)[1].split(",")]
    assert "relu" in offenders and "matmul" not in offenders


def test_gradcheck_repeatable():
    a, b = io.StringIO(), io.StringIO()
    gradcheck_cmd(3, 1, out=a)
    gradcheck_cmd(3, 1, out=b)
    assert a.getvalue() == b.getvalue()


def test_sweep_row_count(tmp_path):
    cfg = sda_config(sweep=[1, 2, 3], seeds=list(range(10)),
                     train={**QUICK_TRAIN, "epochs_source": 1, "epochs_joint": 1, "epochs_finetune": 1})
    path, rows, failures = run(config=parse_config(cfg), out_root=tmp_path)
    assert len(rows) == 30 and not failures
    assert [(r["n"], r["seed"]) for r in rows] == sorted((r["n"], r["seed"]) for r in rows)


def test_rerun_byte_identical_and_append_only(tmp_path):
    cfg = write_config(tmp_path, sda_config(seeds=[0, 1]))
    p1, _, _ = run(cfg, out_root=tmp_path / "out")
    p2, _, _ = run(cfg, out_root=tmp_path / "out")
    assert p1 != p2 and p1.parent == p2.parent
    assert p1.read_bytes() == p2.read_bytes()
    assert (p1.parent / "summary.json").exists() and (p2.parent / "summary-2.json").exists()


def test_parallel_matches_sequential(tmp_path):
    cfg = parse_config(sda_config(seeds=[0, 1, 2]))
    p1, _, _ = run(config=cfg, out_root=tmp_path / "a", jobs=1)
    p2, _, _ = run(config=cfg, out_root=tmp_path / "b", jobs=2)
    assert p1.read_bytes() == p2.read_bytes()


def test_csv_schema_round_trip(tmp_path):
    path, rows, _ = run(config=parse_config(sda_config(record_wall_time=True)), out_root=tmp_path)
    with open(path) as fh:
        assert next(csv.reader(fh)) == CSV_HEADER
    back = read_results(path)
    assert back == rows
    for r in back:
        MetricsRecord(r["accuracy"], [], r["intra_mean"], r["inter_mean"], r["n"], r["seed"])
        assert r["wall_ms"] > 0


def test_ablation_groups(tmp_path):
    cfg = sda_config(variants=["FT", "CSA", "CS", "CCSA"], seeds=[0, 1])
    path, rows, _ = run(config=parse_config(cfg), out_root=tmp_path)
    summary = json.loads((path.parent / "summary.json").read_text())
    assert [g["variant"] for g in summary["groups"]] == ["FT", "CSA", "CS", "CCSA"]
    assert all(g["count"] == 2 for g in summary["groups"])


def test_dg_run_with_pooled_baseline(tmp_path):
    cfg = {"task": "dg", "data": {"kind": "rotated_gaussian", "per_class": 5, "angles": [0, 30, 60]},
           "train": {"epochs_joint": 2, "hidden": 8, "embed_dim": 4}, "variants": ["POOLED", "CCSA"],
           "holdout": [0, 2], "seeds": [0]}
    _, rows, failures = run(config=parse_config(cfg), out_root=tmp_path)
    assert not failures
    assert sorted((r["variant"], r["n"]) for r in rows) == [("CCSA", 0), ("CCSA", 2), ("POOLED", 0), ("POOLED", 2)]


def test_failed_cell_recorded_others_proceed(tmp_path):
    cfg = {"task": "dg", "data": {"kind": "rotated_gaussian", "per_class": 5, "angles": [0, 30, 60]},
           "train": {"epochs_joint": 1, "hidden": 8, "embed_dim": 4}, "holdout": [0, 7], "seeds": [0]}
    path, rows, failures = run(config=parse_config(cfg), out_root=tmp_path)
    assert len(rows) == 1 and len(failures) == 1 and failures[0]["n"] == 7
    assert json.loads((path.parent / "summary.json").read_text())["failures"]


@pytest.mark.parametrize("bad,field", [
    ({"seeds": []}, "seeds"),
    ({"sweep": [1, -2]}, "sweep[1]"),
    ({"task": "x"}, "task"),
    ({"variants": ["CCSA", "POOLED"]}, "variants[1]"),
    ({"train": {"gamma": 2.0}}, "train.gamma"),
    ({"train": {"variant": "Q"}}, "train.variant"),
    ({"data": {"kind": "mystery"}}, "data.kind"),
])
def test_config_errors_name_field(bad, field):
    with pytest.raises(ConfigError) as err:
        parse_config(sda_config(**bad))
    assert err.value.path == field


def test_cli_invalid_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"task": "sda",\n "seeds": [}')
    assert main(["train-sda", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "line 2" in capsys.readouterr().err
    cfg = write_config(tmp_path, sda_config(seeds=[]))
    assert main(["train-sda", "--config", str(cfg)]) == 2


def test_cli_task_mismatch(tmp_path):
    cfg = write_config(tmp_path, sda_config())
    assert main(["train-dg", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_cli_train_uses_env_out_root(tmp_path, monkeypatch):
    monkeypatch.setenv("CCSA_OUT", str(tmp_path / "env"))
    cfg = write_config(tmp_path, sda_config(seeds=[0, 1, 2]))
    assert main(["train-sda", "--config", str(cfg), "--seed", "5"]) == 0
    (csv_path,) = (tmp_path / "env").glob("sda-*/results.csv")
    assert [r["seed"] for r in read_results(csv_path)] == [5]


def test_pca_rank2_reconstruction():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(20, 2))
    z -= z.mean(0)
    p = pca_2d(z)
    # an orthogonal map: pairwise distances and the centered Gram matrix are preserved
    npt.assert_allclose(p @ p.T, z @ z.T, atol=1e-10)


def test_pca_identical_points_at_origin():
    npt.assert_array_equal(pca_2d(np.ones((5, 4))), 0)


def test_pca_sign_convention_and_narrow_input():
    z = np.array([[1.0], [2.0], [4.0]])
    p = pca_2d(z)
    npt.assert_allclose(p[:, 0], z[:, 0] - z.mean())
    npt.assert_array_equal(p[:, 1], 0)
    npt.assert_allclose(pca_2d(-np.hstack([z, 2 * z])), pca_2d(np.hstack([z, 2 * z])) * [-1, 1])


def _checkpoint(tmp_path):
    g, h = NetSpec((3,), (dense(3, 3),)), softmax_h(3, 2)
    p = NetworkParams([np.eye(3), np.zeros(3)], [np.zeros((3, 2)), np.zeros(2)])
    save_params(tmp_path / "p.npz", p, g, h)
    rng = np.random.default_rng(0)
    paths = []
    for name, n in (("src", 4), ("tgt", 3)):
        path = tmp_path / f"{name}.csv"
        write_csv(path, Dataset(rng.normal(size=(n, 3)), np.arange(n) % 2, 2, name))
        paths.append(path)
    return tmp_path / "p.npz", paths


def test_export_projection(tmp_path):
    ckpt, paths = _checkpoint(tmp_path)
    out = tmp_path / "proj.csv"
    assert export_projection(ckpt, paths, out) == 7
    rows = list(csv.DictReader(open(out)))
    assert list(rows[0]) == ["x", "y", "label", "domain"]
    assert len(rows) == 7 and {r["domain"] for r in rows} == {"src", "tgt"}


def test_cli_project_eval_gen_data(tmp_path, capsys):
    ckpt, paths = _checkpoint(tmp_path)
    assert main(["project", "--params", str(ckpt), "--data", *map(str, paths), "--out", str(tmp_path / "x.csv")]) == 0
    assert main(["eval", "--params", str(ckpt), "--data", str(paths[1])]) == 0
    assert '"accuracy"' in capsys.readouterr().out
    assert main(["gen-data", "--out", str(tmp_path / "gd"), "--per-class", "3"]) == 0
    assert (tmp_path / "gd" / "source.csv").exists() and (tmp_path / "gd" / "target.csv").exists()
    assert main(["gen-data", "--kind", "rotated_gaussian", "--out", str(tmp_path / "rg")]) == 0
    assert len(list((tmp_path / "rg").glob("rot*.csv"))) == 4
    assert main(["eval", "--params", str(tmp_path / "missing.npz"), "--data", str(paths[0])]) == 1


def _idx_pair(tmp_path, name, side, n, seed):
    from ccsa.data import write_idx
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 3
    images = rng.integers(0, 256, (n, side, side))
    write_idx(tmp_path / f"{name}-img", tmp_path / f"{name}-lab", images, labels)
    return {"images": str(tmp_path / f"{name}-img"), "labels": str(tmp_path / f"{name}-lab"), "num_classes": 3}


def test_idx_data_kinds_run_lenet(tmp_path):
    train = {"arch": "lenet", "epochs_source": 1, "epochs_joint": 1, "epochs_finetune": 1}
    sda = {"task": "sda", "data": {"kind": "idx", "resize": 16, "source_limit": 9,
                                   "source": _idx_pair(tmp_path, "m", 20, 12, 0),
                                   "target": _idx_pair(tmp_path, "u", 16, 9, 1)},
           "train": train, "sweep": [1], "seeds": [0]}
    _, rows, failures = run(config=parse_config(sda), out_root=tmp_path / "o")
    assert not failures and len(rows) == 1
    dg = {"task": "dg", "data": {"kind": "rotated_idx", "angles": [0, 15, 30], "per_class": 2,
                                 "base": _idx_pair(tmp_path, "b", 16, 9, 2)},
          "train": train, "holdout": [2], "seeds": [0]}
    _, rows, failures = run(config=parse_config(dg), out_root=tmp_path / "o")
    assert not failures and len(rows) == 1
