"""Labeled datasets: synthetic shifted Gaussians, rotated image domains, IDX and CSV loaders."""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataFormatError(ValueError):
    """Malformed dataset file."""


class IdxFormatError(DataFormatError):
    pass


class BadMagicError(IdxFormatError):
    pass


class TruncatedFileError(IdxFormatError):
    pass


class CountMismatchError(IdxFormatError):
    pass


class LabeledSample(NamedTuple):
    features: np.ndarray
    label: int
    domain: str


def _readonly(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable batch of samples from one domain.

    ``x`` is (N, d) for feature vectors or (N, H, W) for images; ``y`` holds
    class indices below ``num_classes``.
    """

    x: np.ndarray
    y: np.ndarray
    num_classes: int
    domain: str = "source"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        x = _readonly(self.x, np.float64)
        y = _readonly(self.y, np.int64).reshape(-1)
        if x.shape[0] != y.shape[0]:
            raise ValueError(f"Dataset: {x.shape[0]} feature rows but {y.shape[0]} labels")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise ValueError(f"Dataset: labels must lie in 0..{self.num_classes - 1}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "num_classes", int(self.num_classes))

    def __len__(self):
        return len(self.y)

    def __getitem__(self, i) -> LabeledSample:
        return LabeledSample(self.x[i], int(self.y[i]), self.domain)

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def feature_shape(self) -> tuple[int, ...]:
        return self.x.shape[1:]

    @property
    def is_image(self) -> bool:
        return self.x.ndim == 3

    def subset(self, index, domain: str | None = None) -> "Dataset":
        index = np.asarray(index, dtype=np.int64)
        return Dataset(self.x[index], self.y[index], self.num_classes,
                       self.domain if domain is None else domain, dict(self.meta))

    def relabel_domain(self, domain: str) -> "Dataset":
        return Dataset(self.x, self.y, self.num_classes, domain, dict(self.meta))

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.num_classes)


def concat(datasets, domain: str = "pooled") -> Dataset:
    """Pool datasets that share feature shape and label space."""
    datasets = list(datasets)
    c = max(d.num_classes for d in datasets)
    return Dataset(np.concatenate([d.x for d in datasets]), np.concatenate([d.y for d in datasets]), c, domain)


def rotation_matrix_2d(deg: float) -> np.ndarray:
    t = np.deg2rad(deg)
    return np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])


def _rotate_points(x: np.ndarray, deg: float) -> np.ndarray:
    """Rotate in the plane of the first two coordinates about the origin."""
    if deg == 0:
        return x.copy()
    out = x.copy()
    out[..., :2] = x[..., :2] @ rotation_matrix_2d(deg).T
    return out


def gen_gaussian_domains(C: int, dim: int, per_class: int, shift: float, rotation_deg: float,
                         seed: int, center_scale: float = 3.0) -> tuple[Dataset, Dataset]:
    """Source and covariate-shifted target domains of C unit-variance Gaussian clusters.

    Cluster centers are drawn once (normal with std ``center_scale``). The target
    domain draws fresh samples from the same clusters and maps them through a
    rotation by ``rotation_deg`` (first two coordinates, about the origin)
    followed by a translation of length ``shift`` in a seeded random direction.
    Class centers of each domain are stored in ``meta["centers"]``.
    """
    if C < 2:
        raise ValueError("gen_gaussian_domains: need C >= 2")
    if per_class < 1:
        raise ValueError("gen_gaussian_domains: need per_class >= 1")
    if dim < 2 and rotation_deg != 0:
        raise ValueError("gen_gaussian_domains: rotation needs dim >= 2")
    rng = np.random.default_rng(seed)
    centers = rng.normal(scale=center_scale, size=(C, dim))
    direction = rng.normal(size=dim)
    direction /= np.linalg.norm(direction)
    offset = shift * direction
    y = np.repeat(np.arange(C), per_class)
    xs = centers[y] + rng.normal(size=(C * per_class, dim))
    xt = _rotate_points(centers[y] + rng.normal(size=(C * per_class, dim)), rotation_deg) + offset
    t_centers = _rotate_points(centers, rotation_deg) + offset
    src = Dataset(xs, y, C, "source", {"centers": centers})
    tgt = Dataset(xt, y, C, "target", {"centers": t_centers})
    return src, tgt


def gen_rotated_gaussian_domains(C: int, dim: int, per_class: int, angles_deg, seed: int,
                                 center_scale: float = 3.0) -> list[Dataset]:
    """One Gaussian-cluster domain per angle: fresh samples, rotated about the origin."""
    if dim < 2:
        raise ValueError("gen_rotated_gaussian_domains: need dim >= 2")
    rng = np.random.default_rng(seed)
    centers = rng.normal(scale=center_scale, size=(C, dim))
    y = np.repeat(np.arange(C), per_class)
    out = []
    for angle in angles_deg:
        x = _rotate_points(centers[y] + rng.normal(size=(C * per_class, dim)), angle)
        out.append(Dataset(x, y, C, f"rot{angle:g}", {"angle": float(angle),
                                                     "centers": _rotate_points(centers, angle)}))
    return out


def rotate_image(img: np.ndarray, deg: float, interpolation: str = "bilinear") -> np.ndarray:
    """Rotate counter-clockwise about the image center; outside pixels read as 0."""
    img = np.asarray(img, dtype=np.float64)
    if deg == 0:
        return img.copy()
    h, w = img.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    t = np.deg2rad(deg)
    c, s = np.cos(t), np.sin(t)
    rr, cc = np.mgrid[0:h, 0:w].astype(np.float64)
    # inverse map: output pixel -> source location (rows grow downward)
    dy, dx = rr - cy, cc - cx
    sx = c * dx - s * dy + cx
    sy = s * dx + c * dy + cy
    if interpolation == "nearest":
        iy, ix = np.rint(sy).astype(int), np.rint(sx).astype(int)
        ok = (iy >= 0) & (iy < h) & (ix >= 0) & (ix < w)
        out = np.zeros_like(img)
        out[ok] = img[iy[ok], ix[ok]]
        return out
    if interpolation != "bilinear":
        raise ValueError(f"unknown interpolation {interpolation!r}")
    padded = np.pad(img, 1)
    y0, x0 = np.floor(sy), np.floor(sx)
    fy, fx = sy - y0, sx - x0
    y0 = y0.astype(int) + 1
    x0 = x0.astype(int) + 1

    def at(yy, xx):
        ok = (yy >= 0) & (yy < h + 2) & (xx >= 0) & (xx < w + 2)
        vals = np.zeros_like(img)
        vals[ok] = padded[yy[ok], xx[ok]]
        return vals

    return ((1 - fy) * (1 - fx) * at(y0, x0) + (1 - fy) * fx * at(y0, x0 + 1)
            + fy * (1 - fx) * at(y0 + 1, x0) + fy * fx * at(y0 + 1, x0 + 1))


def gen_rotated_domains(base: Dataset, angles_deg, interpolation: str = "bilinear") -> list[Dataset]:
    """One dataset per angle, each image rotated about its center; labels kept."""
    if not base.is_image:
        raise ValueError("gen_rotated_domains: base dataset must hold 2-D images")
    out = []
    for angle in angles_deg:
        x = np.stack([rotate_image(img, angle, interpolation) for img in base.x]) if len(base) else base.x
        domain = base.domain if angle == 0 else f"{base.domain}_rot{angle:g}"
        out.append(Dataset(x, base.y, base.num_classes, domain, {"angle": float(angle)}))
    return out


def resize_nearest(dataset: Dataset, side: int) -> Dataset:
    """Nearest-neighbour resize of every image to ``side`` x ``side``."""
    if not dataset.is_image:
        raise ValueError("resize_nearest: dataset must hold images")
    h, w = dataset.feature_shape
    rows = np.minimum((np.arange(side) + 0.5) * h / side, h - 1).astype(int)
    cols = np.minimum((np.arange(side) + 0.5) * w / side, w - 1).astype(int)
    x = dataset.x[:, rows][:, :, cols]
    return Dataset(x, dataset.y, dataset.num_classes, dataset.domain, dict(dataset.meta))


def standardize(dataset: Dataset, mean=None, std=None) -> tuple[Dataset, np.ndarray, np.ndarray]:
    """Per-feature z-scoring; pass the source statistics to transform a target set."""
    mean = dataset.x.mean(axis=0) if mean is None else mean
    std = dataset.x.std(axis=0) if std is None else std
    std = np.where(std > 0, std, 1.0)
    return (Dataset((dataset.x - mean) / std, dataset.y, dataset.num_classes, dataset.domain,
                    dict(dataset.meta)), mean, std)


def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def _parse_idx(buf: bytes, magic: int, path) -> tuple[tuple[int, ...], bytes]:
    if len(buf) < 4:
        raise TruncatedFileError(f"{path}: file shorter than the 4-byte magic")
    (got,) = struct.unpack(">I", buf[:4])
    if got != magic:
        raise BadMagicError(f"{path}: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise TruncatedFileError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", buf[4:header])
    need = int(np.prod(dims))
    body = buf[header:]
    if len(body) < need:
        raise TruncatedFileError(f"{path}: expected {need} data bytes, found {len(body)}")
    return dims, body[:need]


def load_idx(images_path, labels_path, domain: str = "source", num_classes: int | None = None) -> Dataset:
    """Read an IDX image/label file pair (optionally gzipped); pixels scaled to [0, 1]."""
    dims, body = _parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, images_path)
    (n_labels,), lbody = _parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, labels_path)
    if dims[0] != n_labels:
        raise CountMismatchError(f"{images_path}: {dims[0]} images but {labels_path}: {n_labels} labels")
    x = np.frombuffer(body, dtype=np.uint8).reshape(dims).astype(np.float64) / 255.0
    y = np.frombuffer(lbody, dtype=np.uint8).astype(np.int64)
    c = num_classes if num_classes is not None else (int(y.max()) + 1 if y.size else 1)
    return Dataset(x, y, c, domain)


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write uint8 images (N, H, W) and labels (N,) as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">I", IDX_IMAGES_MAGIC) + struct.pack(">3I", *images.shape) + images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]) + labels.tobytes())


def load_csv(path, domain: str = "source", num_classes: int | None = None) -> Dataset:
    """Read ``label,f0,f1,...`` rows. C defaults to max label + 1."""
    labels, feats = [], []
    width = None
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                label = int(row[0])
                values = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: non-numeric field ({exc})") from None
            if label < 0:
                raise DataFormatError(f"{path}:{lineno}: negative label {label}")
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise DataFormatError(f"{path}:{lineno}: expected {width} features, found {len(values)}")
            labels.append(label)
            feats.append(values)
    if not labels:
        raise DataFormatError(f"{path}: no rows")
    y = np.array(labels, dtype=np.int64)
    c = num_classes if num_classes is not None else int(y.max()) + 1
    return Dataset(np.array(feats, dtype=np.float64).reshape(len(labels), width), y, c, domain)


def write_csv(path, dataset: Dataset) -> None:
    """Write a dataset as ``label,f0,...`` rows (images are flattened)."""
    flat = dataset.x.reshape(len(dataset), -1)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for label, row in zip(dataset.y, flat):
            w.writerow([int(label)] + [repr(float(v)) for v in row])


def subsample_target(dataset: Dataset, n_per_class: int, seed: int) -> tuple[Dataset, Dataset]:
    """Split off ``min(n, available)`` seeded random samples per class; the rest is the holdout."""
    if n_per_class < 0:
        raise ValueError("n_per_class must be >= 0")
    rng = np.random.default_rng(seed)
    chosen = []
    for c in range(dataset.num_classes):
        members = np.flatnonzero(dataset.y == c)
        k = min(n_per_class, members.size)
        if k:
            chosen.append(rng.choice(members, size=k, replace=False))
    picked = np.sort(np.concatenate(chosen)) if chosen else np.zeros(0, dtype=np.int64)
    mask = np.zeros(len(dataset), dtype=bool)
    mask[picked] = True
    return dataset.subset(picked), dataset.subset(np.flatnonzero(~mask))
