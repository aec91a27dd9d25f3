"""Neural Collapse statistics and the cross-entropy lower bound."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError, DegenerateGeometryWarning, EmptyClassError, ShapeError
from .linalg import as_matrix, pinv_psd, row_l2_norms


@dataclass(frozen=True)
class ClassStats:
    class_means: np.ndarray   # C x d
    global_mean: np.ndarray   # d
    counts: np.ndarray        # C
    within_cov: np.ndarray    # d x d
    between_cov: np.ndarray   # d x d

    @property
    def num_classes(self) -> int:
        return self.class_means.shape[0]

    @property
    def centered_means(self) -> np.ndarray:
        return self.class_means - self.global_mean


@dataclass(frozen=True)
class EquiangularityWork:
    normalized_means: np.ndarray
    gram: np.ndarray
    c_cos: float


@dataclass(frozen=True)
class CollapseReport:
    nc1: float
    en_means: float
    ea_means: float
    norm_mean: float
    norm_std: float
    norm_cv: float


@dataclass(frozen=True)
class BoundInputs:
    rho_z: float
    k: int
    frob_W: float


def _labels(Z: np.ndarray, labels) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (Z.shape[0],):
        raise ShapeError("labels must have one entry per row of Z")
    return labels


def class_stats(Z, labels, num_classes: int | None = None) -> ClassStats:
    """Class means, global mean, and within/between covariances.

    ``within = (1/N) sum_i (z_i - mu_c(i))(z_i - mu_c(i))^T``;
    ``between = (1/C) sum_c (mu_c - mu_G)(mu_c - mu_G)^T``.
    """
    Z = as_matrix(Z, "Z")
    labels = _labels(Z, labels)
    if Z.shape[0] == 0:
        raise EmptyClassError("no samples")
    C = int(num_classes if num_classes is not None else labels.max() + 1)
    if labels.min() < 0 or labels.max() >= C:
        raise EmptyClassError("labels outside 0..C-1")
    counts = np.bincount(labels, minlength=C)
    if np.any(counts == 0):
        raise EmptyClassError(f"classes without samples: {np.flatnonzero(counts == 0).tolist()}")
    means = np.zeros((C, Z.shape[1]))
    np.add.at(means, labels, Z)
    means /= counts[:, None]
    global_mean = Z.mean(axis=0)
    resid = Z - means[labels]
    within = resid.T @ resid / Z.shape[0]
    centered = means - global_mean
    between = centered.T @ centered / C
    return ClassStats(means, global_mean, counts, 0.5 * (within + within.T),
                      0.5 * (between + between.T))


def nc1(Z, labels, num_classes: int | None = None) -> float:
    """``Tr(Sigma_W pinv(Sigma_B)) / C``.

    A zero between-class covariance gives 0 by the pseudoinverse convention
    and emits ``DegenerateGeometryWarning``.
    """
    st = class_stats(Z, labels, num_classes)
    if not np.any(st.between_cov):
        warnings.warn("between-class covariance is zero; NC1 reported as 0",
                      DegenerateGeometryWarning, stacklevel=2)
    val = float(np.trace(st.within_cov @ pinv_psd(st.between_cov))) / st.num_classes
    return max(val, 0.0)


def en_means(stats: ClassStats) -> float:
    """Coefficient of variation (population std) of centered class-mean norms."""
    if stats.num_classes < 2:
        raise DegenerateGeometryError("equinormality needs at least 2 classes")
    norms = row_l2_norms(stats.centered_means)
    avg = float(norms.mean())
    if avg == 0.0:
        raise DegenerateGeometryError("all centered class means are zero")
    return float(norms.std()) / avg


def equiangularity_work(stats: ClassStats, center: bool = True) -> EquiangularityWork:
    C = stats.num_classes
    if C < 2:
        raise DegenerateGeometryError("equiangularity needs at least 2 classes")
    m = stats.centered_means if center else stats.class_means
    norms = row_l2_norms(m)
    if np.any(norms == 0.0):
        raise DegenerateGeometryError("a class mean has zero length")
    u = m / norms[:, None]
    return EquiangularityWork(u, u @ u.T, -1.0 / (C - 1))


def ea_means(stats: ClassStats, center: bool = True) -> float:
    """Mean over ordered pairs c != c' of ``|cos(mu_c, mu_c') + 1/(C-1)|``."""
    w = equiangularity_work(stats, center)
    C = w.gram.shape[0]
    dev = np.abs(w.gram - w.c_cos)
    np.fill_diagonal(dev, 0.0)
    return float(dev.sum()) / (C * (C - 1))


def ce_lower_bound(b: BoundInputs) -> float:
    """``log(1 + (k-1) exp(-rho_z * sqrt(k)/(k-1) * ||W||_F))``."""
    if b.k < 2:
        raise ValueError("k must be >= 2")
    k = b.k
    return math.log1p((k - 1) * math.exp(-b.rho_z * math.sqrt(k) / (k - 1) * b.frob_W))


def norm_dispersion(Z) -> tuple[float, float, float]:
    """Mean, population std, and CV of the row norms (CV is nan when the mean is 0)."""
    norms = row_l2_norms(Z)
    if norms.size == 0:
        return float("nan"), float("nan"), float("nan")
    mean = float(norms.mean())
    std = float(norms.std())
    return mean, std, (std / mean if mean > 0 else float("nan"))


def collapse_report(Z, labels, num_classes: int | None = None, center: bool = True) -> CollapseReport:
    st = class_stats(Z, labels, num_classes)
    mean, std, cv = norm_dispersion(Z)
    return CollapseReport(nc1(Z, labels, num_classes), en_means(st), ea_means(st, center),
                          mean, std, cv)
