"""Synthetic datasets, IDX/CSV ingestion, semi-supervised splits and
vector-space weak/strong augmentations."""
import gzip
import struct
from dataclasses import dataclass

import numpy as np

from .exceptions import (
    BadMagic,
    CountMismatch,
    InsufficientClassCount,
    TruncatedFile,
)
from .numerics import row_normalize

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    k: int
    name: str = "dataset"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.shape[0] != self.labels.shape[0]:
            raise CountMismatch("features and labels differ in length")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.k):
            raise ValueError(f"labels must lie in [0, {self.k})")

    def __len__(self):
        return self.labels.shape[0]

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.k)


@dataclass
class SemiSplit:
    labeled_x: np.ndarray
    labeled_y: np.ndarray
    unlabeled: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    unlabeled_y: np.ndarray = None  # ground truth, diagnostics only
    labeled_idx: np.ndarray = None
    unlabeled_idx: np.ndarray = None
    val_idx: np.ndarray = None


def gen_gaussian_blobs(k, input_dim, n_per_class, spread, rng):
    """``k`` isotropic Gaussian classes around random unit-norm means."""
    if k < 2 or input_dim < 2:
        raise ValueError("need k >= 2 and input_dim >= 2")
    means = row_normalize(rng.normal(size=(k, input_dim)))
    labels = np.repeat(np.arange(k), n_per_class)
    noise = rng.normal(size=(k * n_per_class, input_dim))
    features = means[labels] + spread * noise
    return Dataset(features, labels, k, name=f"blobs-k{k}-d{input_dim}")


def gen_two_moons(n, noise, rng):
    """Two interleaved unit half-circles, ``n / 2`` points each."""
    if n % 2:
        raise ValueError("n must be even")
    half = n // 2
    t_outer = np.linspace(0.0, np.pi, half)
    t_inner = np.linspace(0.0, np.pi, half)
    outer = np.column_stack([np.cos(t_outer), np.sin(t_outer)])
    inner = np.column_stack([1.0 - np.cos(t_inner), 0.5 - np.sin(t_inner)])
    features = np.vstack([outer, inner])
    if noise > 0:
        features = features + noise * rng.normal(size=features.shape)
    labels = np.repeat([0, 1], half)
    return Dataset(features, labels, 2, name="two-moons")


# -- IDX ---------------------------------------------------------------


def _open_maybe_gzip(path):
    path = str(path)
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def _read_idx(path, expected_magic):
    with _open_maybe_gzip(path) as fh:
        buf = fh.read()
    if len(buf) < 4:
        raise TruncatedFile(f"{path}: missing magic number")
    (magic,) = struct.unpack(">I", buf[:4])
    if magic != expected_magic:
        raise BadMagic(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(buf) < head:
        raise TruncatedFile(f"{path}: header truncated")
    shape = struct.unpack(f">{ndim}I", buf[4:head])
    count = int(np.prod(shape))
    if len(buf) - head < count:
        raise TruncatedFile(f"{path}: expected {count} bytes of data, found {len(buf) - head}")
    return np.frombuffer(buf, dtype=np.uint8, count=count, offset=head).reshape(shape)


def load_idx(images_path, labels_path, k=None):
    """Read an IDX image/label pair; pixels are scaled to [0, 1] by /255."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC).astype(np.int64)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatch(f"{images.shape[0]} images but {labels.shape[0]} labels")
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    k = int(labels.max()) + 1 if k is None else int(k)
    return Dataset(features, labels, k, name="idx")


def write_idx(images_path, labels_path, images, labels):
    """Write uint8 ``images`` of shape (n, rows, cols) and labels as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def load_csv(path, header=False, k=None):
    """Numeric CSV whose last column is an integer class label."""
    table = np.loadtxt(path, delimiter=",", skiprows=1 if header else 0, ndmin=2, dtype=np.float64)
    labels = table[:, -1]
    if not np.all(labels == np.round(labels)):
        raise ValueError(f"{path}: last column must hold integer labels")
    labels = labels.astype(np.int64)
    k = int(labels.max()) + 1 if k is None else int(k)
    return Dataset(table[:, :-1], labels, k, name="csv")


# -- splits --------------------------------------------------------------


def split_semi(d, labels_per_class, val_fraction, rng):
    """Pick ``labels_per_class`` labeled examples per class; split the rest
    into unlabeled and validation pools."""
    counts = d.class_counts()
    if (counts < labels_per_class + 1).any():
        worst = int(np.argmin(counts))
        raise InsufficientClassCount(
            f"class {worst} has {counts[worst]} examples, need at least {labels_per_class + 1}"
        )
    labeled = []
    for c in range(d.k):
        members = np.flatnonzero(d.labels == c)
        labeled.append(rng.choice(members, size=labels_per_class, replace=False))
    labeled = np.sort(np.concatenate(labeled))
    rest = np.setdiff1d(np.arange(len(d)), labeled)
    rest = rng.permutation(rest)
    n_val = int(round(val_fraction * rest.size))
    val = np.sort(rest[:n_val])
    unlabeled = np.sort(rest[n_val:])
    return SemiSplit(
        labeled_x=d.features[labeled],
        labeled_y=d.labels[labeled],
        unlabeled=d.features[unlabeled],
        val_x=d.features[val],
        val_y=d.labels[val],
        unlabeled_y=d.labels[unlabeled],
        labeled_idx=labeled,
        unlabeled_idx=unlabeled,
        val_idx=val,
    )


# -- augmentation ----------------------------------------------------------


@dataclass
class AugmentConfig:
    # defaults equal from_strength(20)
    weak_noise_sigma: float = 0.02
    strong_noise_sigma: float = 0.20
    strong_mask_fraction: float = 0.50
    strong_scale_range: tuple = (0.5, 1.5)
    strength: int = 20

    def __post_init__(self):
        self.strong_scale_range = tuple(float(v) for v in self.strong_scale_range)
        lo, hi = self.strong_scale_range
        if not 0 < lo <= hi:
            raise ValueError("strong_scale_range must be positive with low <= high")
        if not 0.0 <= self.strong_mask_fraction < 1.0:
            raise ValueError("strong_mask_fraction must lie in [0, 1)")
        if self.strong_noise_sigma < self.weak_noise_sigma:
            raise ValueError("strong noise must be at least as large as weak noise")

    @classmethod
    def from_strength(cls, strength, weak_noise_sigma=0.02):
        """Map an integer level (3..20 in sweeps) linearly onto every strong knob."""
        s = int(strength)
        if s < 0:
            raise ValueError("strength must be nonnegative")
        width = min(0.025 * s, 0.9)
        return cls(
            weak_noise_sigma=weak_noise_sigma,
            strong_noise_sigma=max(0.01 * s, weak_noise_sigma),
            strong_mask_fraction=min(0.025 * s, 0.95),
            strong_scale_range=(1.0 - width, 1.0 + width),
            strength=s,
        )


def augment_weak(x, cfg, rng):
    x = np.asarray(x, dtype=np.float64)
    if cfg.weak_noise_sigma == 0:
        return x.copy()
    return x + cfg.weak_noise_sigma * rng.normal(size=x.shape)


def augment_strong(x, cfg, rng):
    """Noise, a per-row random scale, then zero exactly
    ``round(mask_fraction * cols)`` random coordinates per row."""
    x = np.asarray(x, dtype=np.float64)
    n, cols = x.shape
    out = x + cfg.strong_noise_sigma * rng.normal(size=x.shape) if cfg.strong_noise_sigma else x.copy()
    lo, hi = cfg.strong_scale_range
    out = out * rng.uniform(lo, hi, size=(n, 1))
    n_mask = int(round(cfg.strong_mask_fraction * cols))
    if n_mask:
        order = np.argsort(rng.random((n, cols)), axis=1)[:, :n_mask]
        out[np.arange(n)[:, None], order] = 0.0
    return out
