import gzip
import struct

import numpy as np
import numpy.testing as npt
import pytest

from ccsa.data import (BadMagicError, CountMismatchError, DataFormatError, Dataset, TruncatedFileError,
                       concat, gen_gaussian_domains, gen_rotated_domains, gen_rotated_gaussian_domains,
                       load_csv, load_idx, resize_nearest, rotate_image, standardize, subsample_target,
                       write_csv, write_idx)

# 4 images of 2x3 pixels, written byte by byte
IMAGES = (bytes([0x00, 0x00, 0x08, 0x03, 0, 0, 0, 4, 0, 0, 0, 2, 0, 0, 0, 3])
          + bytes([0, 1, 2, 3, 4, 5,
                   255, 255, 255, 0, 0, 0,
                   10, 20, 30, 40, 50, 60,
                   0, 0, 0, 0, 0, 51]))
LABELS = bytes([0x00, 0x00, 0x08, 0x01, 0, 0, 0, 4, 3, 0, 1, 3])


@pytest.fixture
def idx_files(tmp_path):
    img, lab = tmp_path / "img.idx", tmp_path / "lab.idx"
    img.write_bytes(IMAGES)
    lab.write_bytes(LABELS)
    return img, lab


def test_idx_handwritten_fixture(idx_files):
    ds = load_idx(*idx_files, domain="M")
    assert len(ds) == 4 and ds.feature_shape == (2, 3) and ds.domain == "M"
    npt.assert_array_equal(ds.y, [3, 0, 1, 3])
    npt.assert_array_equal(ds.x[0] * 255, [[0, 1, 2], [3, 4, 5]])
    npt.assert_array_equal(ds.x[1], [[1, 1, 1], [0, 0, 0]])
    assert ds.x[3, 1, 2] == 0.2
    assert ds.num_classes == 4


def test_idx_gzip(tmp_path):
    img, lab = tmp_path / "i.gz", tmp_path / "l.gz"
    img.write_bytes(gzip.compress(IMAGES))
    lab.write_bytes(gzip.compress(LABELS))
    assert len(load_idx(img, lab)) == 4


def test_idx_bad_magic(tmp_path, idx_files):
    bad = tmp_path / "bad.idx"
    bad.write_bytes(b"\x00\x00\x00\x00" + IMAGES[4:])
    with pytest.raises(BadMagicError):
        load_idx(bad, idx_files[1])


def test_idx_count_mismatch(tmp_path, idx_files):
    lab = tmp_path / "lab3.idx"
    lab.write_bytes(bytes([0, 0, 8, 1, 0, 0, 0, 3, 1, 2, 3]))
    with pytest.raises(CountMismatchError):
        load_idx(idx_files[0], lab)


def test_idx_truncated(tmp_path, idx_files):
    short = tmp_path / "short.idx"
    short.write_bytes(IMAGES[:-1])
    with pytest.raises(TruncatedFileError):
        load_idx(short, idx_files[1])


def test_idx_write_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    imgs = rng.integers(0, 256, (5, 4, 4), dtype=np.uint8)
    labs = rng.integers(0, 10, 5)
    write_idx(tmp_path / "a", tmp_path / "b", imgs, labs)
    ds = load_idx(tmp_path / "a", tmp_path / "b", num_classes=10)
    npt.assert_array_equal(np.rint(ds.x * 255), imgs)
    npt.assert_array_equal(ds.y, labs)


def test_csv_basic(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("0,1.0,2.0\n1,3.0,4.0")
    ds = load_csv(p)
    assert len(ds) == 2 and ds.feature_shape == (2,) and ds.num_classes == 2


def test_csv_empty(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("")
    with pytest.raises(DataFormatError):
        load_csv(p)


def test_csv_label_gap(tmp_path):
    p = tmp_path / "g.csv"
    p.write_text("0,1\n2,3\n")
    ds = load_csv(p)
    assert ds.num_classes == 3
    npt.assert_array_equal(ds.class_counts(), [1, 0, 1])


def test_csv_errors_name_line(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("0,1,2\n1,3\n")
    with pytest.raises(DataFormatError, match=":2:"):
        load_csv(p)
    p.write_text("0,1\nx,2\n")
    with pytest.raises(DataFormatError, match=":2:"):
        load_csv(p)


def test_csv_round_trip_exact(tmp_path):
    src, _ = gen_gaussian_domains(3, 4, 5, 1.0, 30.0, 0)
    write_csv(tmp_path / "s.csv", src)
    back = load_csv(tmp_path / "s.csv")
    assert np.array_equal(back.x, src.x) and np.array_equal(back.y, src.y)


def test_gaussian_identity_transform():
    src, tgt = gen_gaussian_domains(2, 3, 50, 0.0, 0.0, 4)
    npt.assert_array_equal(src.meta["centers"], tgt.meta["centers"])
    assert len(src) == len(tgt) == 100


def test_gaussian_rotation_180_negates_centers():
    src, tgt = gen_gaussian_domains(2, 2, 10, 0.0, 180.0, 1)
    npt.assert_allclose(tgt.meta["centers"], -src.meta["centers"], atol=1e-12)


def test_gaussian_target_centers_follow_samples():
    src, tgt = gen_gaussian_domains(2, 2, 4000, 2.0, 60.0, 2)
    for c in range(2):
        npt.assert_allclose(tgt.x[tgt.y == c].mean(0), tgt.meta["centers"][c], atol=0.1)


def test_gaussian_deterministic():
    a, b = gen_gaussian_domains(2, 2, 5, 1.0, 10.0, 3), gen_gaussian_domains(2, 2, 5, 1.0, 10.0, 3)
    assert np.array_equal(a[1].x, b[1].x)


def test_rotated_gaussian_domains():
    doms = gen_rotated_gaussian_domains(2, 2, 10, [0, 20, 40, 60], 0)
    assert [d.domain for d in doms] == ["rot0", "rot20", "rot40", "rot60"]
    c0 = doms[0].meta["centers"]
    t = np.deg2rad(60)
    r = np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
    npt.assert_allclose(doms[3].meta["centers"], c0 @ r.T, atol=1e-12)


def test_rotate_zero_is_copy():
    img = np.random.default_rng(0).random((5, 5))
    out = rotate_image(img, 0)
    assert np.array_equal(out, img) and out is not img


@pytest.mark.parametrize("side", [6, 7])
def test_rotate_90_back_nearest_identity(side):
    img = np.zeros((side, side))
    img[2:side - 2, 2:side - 2] = 1.0
    img[2, 2] = 0.5
    back = rotate_image(rotate_image(img, 90, "nearest"), -90, "nearest")
    npt.assert_array_equal(back, img)


def test_rotate_90_moves_corner_counterclockwise():
    img = np.zeros((3, 3))
    img[0, 2] = 1.0  # top right
    out = rotate_image(img, 90, "nearest")
    assert out[0, 0] == 1.0 and out.sum() == 1.0


def test_rotate_bilinear_90_matches_rot90():
    img = np.random.default_rng(1).random((5, 5))
    npt.assert_allclose(rotate_image(img, 90), np.rot90(img), atol=1e-12)


def test_rotated_domains_shape():
    base = Dataset(np.random.default_rng(0).random((20, 8, 8)), np.repeat(np.arange(2), 10), 2, "M")
    doms = gen_rotated_domains(base, [0, 15, 30, 45, 60, 75])
    assert len(doms) == 6
    assert np.array_equal(doms[0].x, base.x)
    assert all(np.array_equal(d.y, base.y) for d in doms)


def test_resize_nearest():
    ds = Dataset(np.arange(16.0).reshape(1, 4, 4), [0], 1)
    npt.assert_array_equal(resize_nearest(ds, 2).x[0], [[5, 7], [13, 15]])


def test_subsample_target_edges():
    _, tgt = gen_gaussian_domains(2, 2, 5, 1.0, 0.0, 0)
    lab, hold = subsample_target(tgt, 0, 1)
    assert len(lab) == 0 and len(hold) == 10
    lab, hold = subsample_target(tgt, 9, 1)
    assert len(lab) == 10 and len(hold) == 0
    lab, hold = subsample_target(tgt, 3, 1)
    npt.assert_array_equal(lab.class_counts(), [3, 3])
    assert len(hold) == 4
    again, _ = subsample_target(tgt, 3, 1)
    assert np.array_equal(again.x, lab.x)


def test_subsample_is_partition():
    _, tgt = gen_gaussian_domains(3, 2, 7, 1.0, 0.0, 0)
    lab, hold = subsample_target(tgt, 2, 5)
    rows = {tuple(r) for r in np.concatenate([lab.x, hold.x])}
    assert len(rows) == len(tgt)


def test_dataset_validation_and_immutability():
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 2)), [0, 2], 2)
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 2)), [0], 2)
    ds = Dataset(np.zeros((2, 2)), [0, 1], 2)
    with pytest.raises(ValueError):
        ds.x[0, 0] = 1.0


def test_concat_and_standardize():
    a, b = gen_gaussian_domains(2, 3, 20, 2.0, 30.0, 0)
    pooled = concat([a, b])
    assert len(pooled) == 80
    z, mean, std = standardize(pooled)
    npt.assert_allclose(z.x.mean(0), 0, atol=1e-12)
    npt.assert_allclose(z.x.std(0), 1, atol=1e-12)
