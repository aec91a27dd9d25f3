"""Synthetic blob datasets, OoD variants, and small-image binary ingestion."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DatasetFormatError
from .linalg import Rng

RECORD_BYTES = 3073
PIXELS = 3072
CHANNELS = 3


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    name: str = "dataset"

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 2 or self.y.shape != (self.x.shape[0],):
            raise DatasetFormatError(f"inconsistent shapes x={self.x.shape} y={self.y.shape}")
        if not np.all(np.isfinite(self.x)):
            raise DatasetFormatError(f"{self.name}: non-finite inputs")

    def __len__(self) -> int:
        return self.x.shape[0]

    def subset(self, idx, name: str | None = None) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.x[idx], self.y[idx], name or self.name)


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 8
    input_dim: int = 20
    mean_radius: float = 5.0
    noise_sigma: float = 1.0
    samples_per_class: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 1 or self.input_dim < 1 or self.samples_per_class < 1:
            raise ValueError("counts must be >= 1")
        if not self.mean_radius > 0 or self.noise_sigma < 0:
            raise ValueError("mean_radius must be > 0 and noise_sigma >= 0")


@dataclass(frozen=True)
class OodVariant:
    """One of ``held_out_classes``, ``gaussian_noise``, ``permuted_id``.

    ``class_ids`` labels the held-out blobs; they must not overlap ID labels.
    """

    kind: str
    class_ids: tuple[int, ...] = field(default=())

    KINDS = ("held_out_classes", "gaussian_noise", "permuted_id")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown OoD variant {self.kind!r}")
        object.__setattr__(self, "class_ids", tuple(int(c) for c in self.class_ids))
        if self.kind == "held_out_classes" and not self.class_ids:
            raise ValueError("held_out_classes needs at least one class id")

    @classmethod
    def held_out(cls, first_id: int, count: int) -> "OodVariant":
        return cls("held_out_classes", tuple(range(first_id, first_id + count)))


def sphere_points(n: int, dim: int, radius: float, rng: Rng) -> np.ndarray:
    g = rng.normal((n, dim))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return radius * g


def _blobs(means, labels, per_class, sigma, rng, name):
    dim = means.shape[1]
    xs = [m + rng.normal((per_class, dim), sigma) for m in means]
    ys = [np.full(per_class, c) for c in labels]
    return Dataset(np.concatenate(xs), np.concatenate(ys), name)


def gen_blobs(spec: SyntheticSpec, rng: Rng | None = None) -> Dataset:
    """Class means uniform on the ``mean_radius`` sphere, isotropic Gaussian noise."""
    rng = rng if rng is not None else Rng(spec.seed)
    means = sphere_points(spec.num_classes, spec.input_dim, spec.mean_radius, rng)
    return _blobs(means, range(spec.num_classes), spec.samples_per_class,
                  spec.noise_sigma, rng, "blobs")


def make_ood(
    id_dataset: Dataset,
    variant: OodVariant,
    rng: Rng,
    spec: SyntheticSpec | None = None,
    per_class: int | None = None,
    n: int | None = None,
) -> Dataset:
    """Build an OoD dataset of the requested kind from an ID reference set.

    Noise and permuted sets carry label -1. Held-out blobs use fresh class
    means on the same sphere as the ID means; ``spec`` supplies radius and
    spread and ``per_class`` the count (defaults to the ID per-class size).
    ``n`` sets the size of a noise set (default: as many samples as the ID set).
    """
    if variant.kind == "held_out_classes":
        if spec is None:
            raise ValueError("held_out_classes requires the SyntheticSpec")
        if set(variant.class_ids) & set(np.unique(id_dataset.y).tolist()):
            raise ValueError("held-out class ids overlap ID labels")
        if per_class is None:
            per_class = max(1, len(id_dataset) // max(1, len(np.unique(id_dataset.y))))
        means = sphere_points(len(variant.class_ids), id_dataset.x.shape[1], spec.mean_radius, rng)
        return _blobs(means, variant.class_ids, per_class, spec.noise_sigma, rng,
                      "held_out_classes")

    n_id, d = id_dataset.x.shape
    if variant.kind == "gaussian_noise":
        n = n_id if n is None else int(n)
        if n < 1:
            raise ValueError("noise set size must be >= 1")
        mu = id_dataset.x.mean(axis=0)
        sd = id_dataset.x.std(axis=0)
        x = mu + rng.normal((n, d)) * sd
        return Dataset(x, np.full(n, -1), "gaussian_noise")

    # permuted_id: independent permutation of each sample's features
    n = n_id
    keys = rng.gen.random((n, d))
    order = np.argsort(keys, axis=1, kind="stable")
    x = np.take_along_axis(id_dataset.x, order, axis=1)
    return Dataset(x, np.full(n, -1), "permuted_id")


def split(dataset: Dataset, train_fraction: float, rng: Rng) -> tuple[Dataset, Dataset]:
    """Seeded stratified partition.

    Each class contributes ``round(train_fraction * n_c)`` samples to the
    training side, clipped so that both sides keep at least one sample of a
    class whenever the fraction is strictly between 0 and 1 and the class has
    two or more samples.
    """
    if not 0.0 <= train_fraction <= 1.0:
        raise ValueError("train_fraction must lie in [0, 1]")
    train_idx, test_idx = [], []
    for c in np.unique(dataset.y):
        idx = np.flatnonzero(dataset.y == c)
        idx = idx[rng.permutation(len(idx))]
        k = int(round(train_fraction * len(idx)))
        if 0.0 < train_fraction < 1.0 and len(idx) >= 2:
            k = min(max(k, 1), len(idx) - 1)
        train_idx.append(idx[:k])
        test_idx.append(idx[k:])
    tr = np.sort(np.concatenate(train_idx)) if train_idx else np.zeros(0, np.int64)
    te = np.sort(np.concatenate(test_idx)) if test_idx else np.zeros(0, np.int64)
    return (dataset.subset(tr, f"{dataset.name}_train"),
            dataset.subset(te, f"{dataset.name}_test"))


@dataclass(frozen=True)
class ChannelStats:
    mean: tuple[float, ...]
    std: tuple[float, ...]


def channel_stats(pixels01: np.ndarray) -> ChannelStats:
    per_ch = pixels01.reshape(pixels01.shape[0], CHANNELS, -1)
    mean = per_ch.mean(axis=(0, 2))
    std = per_ch.std(axis=(0, 2))
    std = np.where(std > 0, std, 1.0)
    return ChannelStats(tuple(mean.tolist()), tuple(std.tolist()))


def standardize(pixels01: np.ndarray, stats: ChannelStats) -> np.ndarray:
    per_ch = pixels01.reshape(pixels01.shape[0], CHANNELS, -1)
    mean = np.asarray(stats.mean)[None, :, None]
    std = np.asarray(stats.std)[None, :, None]
    return ((per_ch - mean) / std).reshape(pixels01.shape[0], -1)


def read_image_records(path) -> tuple[np.ndarray, np.ndarray]:
    """Raw ``(labels, pixels in [0, 1])`` from a label-byte + 3072-pixel record file."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DatasetFormatError(f"cannot read {path}: {exc}") from exc
    if len(raw) == 0 or len(raw) % RECORD_BYTES:
        raise DatasetFormatError(
            f"{path}: size {len(raw)} is not a positive multiple of {RECORD_BYTES}")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, RECORD_BYTES)
    labels = rec[:, 0].astype(np.int64)
    if labels.max() >= 10:
        raise DatasetFormatError(f"{path}: label byte {labels.max()} >= 10")
    return labels, rec[:, 1:].astype(np.float64) / 255.0


def load_image_binary(path, stats: ChannelStats | None = None) -> tuple[Dataset, ChannelStats]:
    """Load a record file and standardize per channel.

    Without ``stats`` the per-channel mean/std are computed from this file;
    pass the training file's stats to reuse them for test or OoD files.
    """
    labels, pixels = read_image_records(path)
    stats = stats if stats is not None else channel_stats(pixels)
    return Dataset(standardize(pixels, stats), labels, Path(path).stem), stats


def write_image_binary(path, labels, pixels_u8) -> None:
    labels = np.asarray(labels, dtype=np.uint8).reshape(-1, 1)
    pixels_u8 = np.asarray(pixels_u8, dtype=np.uint8)
    if pixels_u8.shape != (labels.shape[0], PIXELS):
        raise DatasetFormatError(f"pixels must have shape (N, {PIXELS})")
    Path(path).write_bytes(np.hstack([labels, pixels_u8]).tobytes())


def write_csv(dataset: Dataset, path) -> None:
    d = dataset.x.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{i}" for i in range(d)] + ["label"])
        for row, lab in zip(dataset.x, dataset.y):
            w.writerow([repr(float(v)) for v in row] + [int(lab)])


def read_csv(path, name: str | None = None) -> Dataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetFormatError(f"{path}: empty csv")
    header, body = rows[0], rows[1:]
    d = len(header) - 1
    if header != [f"f{i}" for i in range(d)] + ["label"]:
        raise DatasetFormatError(f"{path}: unexpected header")
    x = np.array([[float(v) for v in r[:d]] for r in body]).reshape(len(body), d)
    y = np.array([int(r[d]) for r in body], dtype=np.int64)
    return Dataset(x, y, name or Path(path).stem)
