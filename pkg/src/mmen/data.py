"""Domain-pair fixtures, an IDX digit loader and seeded mini-batching."""

from __future__ import annotations

import csv
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
from sklearn.datasets import make_moons

__all__ = [
    "DomainDataset",
    "DomainPair",
    "BatchPair",
    "make_two_moons",
    "rotate_domain",
    "make_rotated_moons_pair",
    "make_shifted_blobs",
    "IdxFormatError",
    "IdxMagicError",
    "IdxTruncatedError",
    "IdxCountMismatchError",
    "load_idx",
    "area_downsample",
    "batch_iter",
    "source_batches",
    "export_csv",
]

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class DomainDataset:
    features: np.ndarray
    labels: Optional[np.ndarray]
    domain_tag: str
    class_count: int

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError(f"features must be a non-empty [n, d] array, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("features contain NaN or Inf")
        if self.domain_tag not in ("source", "target"):
            raise ValueError(f"domain_tag must be 'source' or 'target', got {self.domain_tag!r}")
        if self.class_count < 2:
            raise ValueError("class_count must be >= 2")
        object.__setattr__(self, "features", x)
        if self.labels is not None:
            y = np.asarray(self.labels, dtype=np.int64)
            if y.shape != (x.shape[0],):
                raise ValueError(f"{y.shape[0]} labels for {x.shape[0]} samples")
            if y.min() < 0 or y.max() >= self.class_count:
                raise ValueError(f"labels must lie in [0, {self.class_count})")
            object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class DomainPair:
    """Labeled source plus unlabeled target.

    Target labels, if known, are kept out of ``target`` and can only be read
    through :meth:`diagnostic_target_labels`.
    """

    source: DomainDataset
    target: DomainDataset
    _held_out_labels: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.source.labels is None:
            raise ValueError("source dataset must be labeled")
        if self.source.n_features != self.target.n_features:
            raise ValueError(
                f"feature dims differ: source {self.source.n_features}, target {self.target.n_features}"
            )
        if self.source.class_count != self.target.class_count:
            raise ValueError(
                f"class counts differ: source {self.source.class_count}, target {self.target.class_count}"
            )
        if self.target.labels is not None:
            held = self.target.labels
            object.__setattr__(
                self,
                "target",
                DomainDataset(self.target.features, None, "target", self.target.class_count),
            )
            object.__setattr__(self, "_held_out_labels", held)

    @property
    def class_count(self) -> int:
        return self.source.class_count

    @property
    def n_features(self) -> int:
        return self.source.n_features

    def diagnostic_target_labels(self) -> Optional[np.ndarray]:
        """True target labels for evaluation only; never used in training."""
        return self._held_out_labels


@dataclass(frozen=True)
class BatchPair:
    source_idx: np.ndarray
    target_idx: np.ndarray
    xs: np.ndarray
    ys: np.ndarray
    xt: np.ndarray


def make_two_moons(n: int, noise: float = 0.1, seed: int = 0, domain_tag: str = "source") -> DomainDataset:
    if n < 2:
        raise ValueError("n must be >= 2")
    if noise < 0:
        raise ValueError("noise must be >= 0")
    x, y = make_moons(n_samples=n, noise=noise if noise > 0 else None, random_state=seed)
    return DomainDataset(x, y, domain_tag, 2)


def rotate_domain(ds: DomainDataset, angle: float) -> DomainDataset:
    """Rotate 2-d features by ``angle`` degrees about their centroid."""
    if ds.n_features != 2:
        raise ValueError(f"rotate_domain needs 2-d features, got {ds.n_features}")
    theta = np.deg2rad(angle)
    c, s = np.cos(theta), np.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    center = ds.features.mean(axis=0)
    rotated = (ds.features - center) @ rot.T + center
    return DomainDataset(rotated, ds.labels, ds.domain_tag, ds.class_count)


def make_rotated_moons_pair(n: int = 500, noise: float = 0.1, angle: float = 45.0, seed: int = 0) -> DomainPair:
    """Independent two-moons draws for each domain, target rotated by ``angle``."""
    src = make_two_moons(n, noise, seed=2 * seed, domain_tag="source")
    tgt = make_two_moons(n, noise, seed=2 * seed + 1, domain_tag="target")
    return DomainPair(src, rotate_domain(tgt, angle))


def make_shifted_blobs(
    n_classes: int,
    n_per_class: int,
    shift_vector: Sequence[float],
    spread: float = 1.0,
    seed: int = 0,
    target_noise_seed: Optional[int] = None,
) -> DomainPair:
    """Gaussian clusters on a circle of radius ``4 * spread``; target is translated.

    Cluster centres occupy the first two coordinates; the feature dimension
    is ``len(shift_vector)`` (at least 2). Each cluster has isotropic standard
    deviation ``spread``. Target noise is drawn from ``target_noise_seed``
    (defaults to a stream independent of the source one).
    """
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    shift = np.asarray(shift_vector, dtype=np.float64)
    if shift.ndim != 1 or shift.size < 2:
        raise ValueError("shift_vector must have at least 2 entries")
    d = shift.size
    angles = 2.0 * np.pi * np.arange(n_classes) / n_classes
    means = np.zeros((n_classes, d))
    means[:, 0] = 4.0 * spread * np.cos(angles)
    means[:, 1] = 4.0 * spread * np.sin(angles)
    labels = np.repeat(np.arange(n_classes), n_per_class)

    src_rng = np.random.default_rng([seed, 0])
    tgt_rng = np.random.default_rng([seed, 1] if target_noise_seed is None else [target_noise_seed, 0])
    xs = means[labels] + spread * src_rng.standard_normal((labels.size, d))
    xt = means[labels] + shift + spread * tgt_rng.standard_normal((labels.size, d))
    return DomainPair(
        DomainDataset(xs, labels, "source", n_classes),
        DomainDataset(xt, labels.copy(), "target", n_classes),
    )


# -- IDX ---------------------------------------------------------------------


class IdxFormatError(ValueError):
    pass


class IdxMagicError(IdxFormatError):
    pass


class IdxTruncatedError(IdxFormatError):
    pass


class IdxCountMismatchError(IdxFormatError):
    pass


def _read_idx(path, magic: int, ndim: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxTruncatedError(f"{path}: header needs {header} bytes, file has {len(raw)}")
    found = struct.unpack_from(">I", raw, 0)[0]
    if found != magic:
        raise IdxMagicError(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    need = int(np.prod(dims))
    if len(raw) - header < need:
        raise IdxTruncatedError(f"{path}: expected {need} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=need, offset=header).reshape(dims)


def _area_matrix(n_in: int, n_out: int) -> np.ndarray:
    # Row i averages the input cells covering [i, i+1) * n_in / n_out.
    edges = np.arange(n_out + 1) * (n_in / n_out)
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo, hi = edges[i], edges[i + 1]
        for j in range(int(np.floor(lo)), min(int(np.ceil(hi)), n_in)):
            overlap = min(hi, j + 1) - max(lo, j)
            if overlap > 0:
                m[i, j] = overlap
        m[i] /= hi - lo
    return m


def area_downsample(images: np.ndarray, side: int) -> np.ndarray:
    """Average-pool ``[n, rows, cols]`` images to ``[n, side, side]``.

    Output pixels average the exact input area they cover, so integer
    ratios reduce to ordinary block pooling.
    """
    n, rows, cols = images.shape
    if side < 1 or side > min(rows, cols):
        raise ValueError(f"downsample side {side} must be in [1, {min(rows, cols)}]")
    a = _area_matrix(rows, side)
    b = _area_matrix(cols, side)
    return np.einsum("ir,nrc,jc->nij", a, images.astype(np.float64), b)


def load_idx(
    images_path,
    labels_path,
    max_n: Optional[int] = None,
    downsample_to: Optional[int] = None,
    domain_tag: str = "source",
    n_classes: int = 10,
) -> DomainDataset:
    """Read a big-endian IDX image/label pair into a dataset with pixels in [0, 1]."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatchError(
            f"{images.shape[0]} images but {labels.shape[0]} labels"
        )
    count = images.shape[0]
    if max_n is not None:
        if max_n > count:
            warnings.warn(f"max_n={max_n} exceeds the {count} items available; loading all", stacklevel=2)
        count = min(count, max_n)
    images = images[:count]
    if downsample_to is not None and downsample_to != images.shape[1]:
        pixels = area_downsample(images, downsample_to)
    else:
        pixels = images.astype(np.float64)
    x = (pixels / 255.0).reshape(count, -1)
    return DomainDataset(x, labels[:count].astype(np.int64), domain_tag, n_classes)


# -- batching ----------------------------------------------------------------


def source_batches(n: int, batch: int, seed: int, epoch: int, stream: int = 2) -> list:
    """Drop-last index batches over one domain (used for pretraining)."""
    if batch < 1 or batch > n:
        raise ValueError(f"batch size {batch} must be in [1, {n}]")
    perm = np.random.default_rng([seed, epoch, stream]).permutation(n)
    return [perm[i * batch:(i + 1) * batch] for i in range(n // batch)]


def batch_iter(pair: DomainPair, batch_s: int, batch_t: int, seed: int, epoch: int) -> Iterator[BatchPair]:
    """Independently shuffled source and target batches for one epoch.

    Yields ``floor(min(n_s / batch_s, n_t / batch_t))`` pairs; leftovers are
    dropped so every step sees fixed batch sizes.
    """
    n_s, n_t = len(pair.source), len(pair.target)
    if not (1 <= batch_s <= n_s and 1 <= batch_t <= n_t):
        raise ValueError(f"batch sizes ({batch_s}, {batch_t}) must fit datasets ({n_s}, {n_t})")
    perm_s = np.random.default_rng([seed, epoch, 0]).permutation(n_s)
    perm_t = np.random.default_rng([seed, epoch, 1]).permutation(n_t)
    steps = min(n_s // batch_s, n_t // batch_t)
    for i in range(steps):
        si = perm_s[i * batch_s:(i + 1) * batch_s]
        ti = perm_t[i * batch_t:(i + 1) * batch_t]
        yield BatchPair(si, ti, pair.source.features[si], pair.source.labels[si], pair.target.features[ti])


def export_csv(pair: DomainPair, path) -> None:
    """Write ``x0..x{d-1},label,domain`` rows, source first; unknown labels are -1."""
    held = pair.diagnostic_target_labels()
    d = pair.n_features
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(d)] + ["label", "domain"])
        for ds, labels in ((pair.source, pair.source.labels), (pair.target, held)):
            for i in range(len(ds)):
                lab = int(labels[i]) if labels is not None else -1
                w.writerow([repr(float(v)) for v in ds.features[i]] + [lab, ds.domain_tag])
