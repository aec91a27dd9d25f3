"""Training-dynamics analyses over checkpoints and final forward traces."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import spearmanr

from .collapse import norm_dispersion
from .errors import DegenerateGeometryError, L2OODError
from .model import ForwardTrace, ModelConfig, forward


class CheckpointSequenceError(L2OODError, ValueError):
    pass


@dataclass(frozen=True)
class NormGroupSpec:
    """Half-open bins ``[e0, e1), ..., [e_last, inf)``."""

    edges: tuple[float, ...]
    labels: tuple[str, ...] | None = None

    L2_PRESET = (0.0, 10.0, 20.0, 30.0)
    NOL2_PRESET = (0.0, 5.0, 7.0, 9.0)

    def __post_init__(self):
        edges = tuple(float(e) for e in self.edges)
        if len(edges) < 2:
            raise ValueError("need at least two edges (two groups)")
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError("edges must be strictly ascending")
        object.__setattr__(self, "edges", edges)
        if self.labels is None:
            object.__setattr__(self, "labels", tuple(self._default_labels()))
        elif len(self.labels) != len(edges):
            raise ValueError("one label per group required")

    def _default_labels(self):
        e = self.edges
        for i, lo in enumerate(e):
            yield f"[{lo:g},{e[i + 1]:g})" if i + 1 < len(e) else f"[{lo:g},inf)"

    @property
    def num_groups(self) -> int:
        return len(self.edges)

    @classmethod
    def from_quantiles(cls, norms, n_groups: int = 4) -> "NormGroupSpec":
        """Equal-population groups: the lowest edge is min(norms), the rest are quantiles."""
        norms = np.asarray(norms, dtype=np.float64)
        qs = np.quantile(norms, np.linspace(0.0, 1.0, n_groups + 1)[1:-1])
        edges = np.concatenate([[norms.min()], qs])
        if np.any(np.diff(edges) <= 0):
            raise ValueError("norms too concentrated for quantile groups")
        return cls(tuple(edges.tolist()))

    @classmethod
    def parse(cls, text: str, norms=None) -> "NormGroupSpec":
        """``"0,10,20,30"`` or ``"quantile:4"`` (the latter needs ``norms``)."""
        text = text.strip()
        if text.startswith("quantile:"):
            if norms is None:
                raise ValueError("quantile groups need the final norms")
            return cls.from_quantiles(norms, int(text.split(":", 1)[1]))
        return cls(tuple(float(t) for t in text.split(",")))


@dataclass
class FeatureChangeReport:
    labels: tuple[str, ...]
    epochs: np.ndarray          # later epoch of each consecutive pair
    increments: np.ndarray      # groups x pairs
    sizes: np.ndarray           # samples per group

    @property
    def totals(self) -> np.ndarray:
        return self.increments.sum(axis=1)


@dataclass
class BinAccuracyReport:
    norm_lo: np.ndarray
    norm_hi: np.ndarray
    norm_median: np.ndarray
    counts: np.ndarray
    accuracy: np.ndarray
    mode: str = "equal_count"

    @property
    def bin_count(self) -> int:
        return int(self.counts.size)

    def spearman(self) -> float:
        ok = self.counts > 0
        if ok.sum() < 2 or np.ptp(self.accuracy[ok]) == 0:
            return float("nan")
        return float(spearmanr(self.norm_median[ok], self.accuracy[ok])[0])


@dataclass
class NormDistributionReport:
    norms: dict[str, np.ndarray] = field(default_factory=dict)

    def summary(self) -> dict[str, dict[str, float]]:
        out = {}
        for name, v in self.norms.items():
            mean, std, cv = norm_dispersion(v[:, None])
            out[name] = {"n": int(v.size), "mean": mean, "std": std, "cv": cv,
                         "median": float(np.median(v)) if v.size else float("nan")}
        return out

    def mean_ratio(self, num: str, den: str) -> float:
        return float(self.norms[num].mean() / self.norms[den].mean())


@dataclass
class NormSoftmaxTable:
    norm: np.ndarray
    max_softmax: np.ndarray
    is_id: np.ndarray
    pearson: float
    degenerate: bool


def assign_norm_groups(final_norms, spec: NormGroupSpec) -> np.ndarray:
    norms = np.asarray(final_norms, dtype=np.float64)
    g = np.searchsorted(np.asarray(spec.edges), norms, side="right") - 1
    return np.clip(g, 0, spec.num_groups - 1)


def _check_consecutive(checkpoints) -> None:
    if len(checkpoints) < 2:
        raise CheckpointSequenceError("feature change needs at least two checkpoints")
    epochs = [c.epoch for c in checkpoints]
    bad = [(a, b) for a, b in zip(epochs, epochs[1:]) if b != a + 1]
    if bad:
        raise CheckpointSequenceError(f"checkpoint epochs not consecutive: {bad[:3]}")


def feature_change(checkpoints, model_cfg: ModelConfig, x, groups,
                   spec: NormGroupSpec | None = None) -> FeatureChangeReport:
    """Per-group sum over consecutive epochs of the mean squared feature change.

    The mean runs over the group's samples and all feature dimensions of the
    pre-normalization features ``z``.
    """
    _check_consecutive(checkpoints)
    groups = np.asarray(groups, dtype=np.int64)
    n_groups = spec.num_groups if spec is not None else int(groups.max()) + 1
    labels = spec.labels if spec is not None else tuple(str(i) for i in range(n_groups))
    sizes = np.bincount(groups, minlength=n_groups)
    inc = np.zeros((n_groups, len(checkpoints) - 1))
    prev = forward(checkpoints[0].params, model_cfg, x).z
    for j, ck in enumerate(checkpoints[1:]):
        cur = forward(ck.params, model_cfg, x).z
        sq = np.mean((cur - prev) ** 2, axis=1)
        for m in range(n_groups):
            if sizes[m]:
                inc[m, j] = float(np.sum(sq[groups == m])) / sizes[m]
        prev = cur
    return FeatureChangeReport(labels, np.array([c.epoch for c in checkpoints[1:]]), inc, sizes)


def cv_trajectory(checkpoints, model_cfg: ModelConfig, x) -> np.ndarray:
    """Rows of ``(epoch, mean, std, cv)`` of the recorded norms at every checkpoint."""
    rows = []
    for ck in checkpoints:
        norms = forward(ck.params, model_cfg, x).recorded_norms
        rows.append((ck.epoch, *norm_dispersion(norms[:, None])))
    return np.array(rows, dtype=np.float64).reshape(-1, 4)


def norm_accuracy_bins(trace: ForwardTrace, labels, bin_count: int = 125,
                       mode: str = "equal_count") -> BinAccuracyReport:
    """Accuracy per norm bin.

    ``equal_count`` sorts samples by recorded norm and splits them into
    ``bin_count`` bins whose sizes differ by at most one (larger bins first).
    ``equal_width`` splits the norm range instead; empty bins get nan accuracy.
    """
    labels = np.asarray(labels)
    norms = trace.recorded_norms
    n = norms.size
    if bin_count < 1 or bin_count > n:
        raise ValueError(f"bin_count must lie in [1, {n}]")
    correct = trace.logits.argmax(axis=1) == labels
    if mode == "equal_count":
        order = np.argsort(norms, kind="stable")
        parts = np.array_split(order, bin_count)
        lo = np.array([norms[p].min() for p in parts])
        hi = np.array([norms[p].max() for p in parts])
    elif mode == "equal_width":
        edges = np.linspace(norms.min(), norms.max(), bin_count + 1)
        idx = np.clip(np.searchsorted(edges, norms, side="right") - 1, 0, bin_count - 1)
        parts = [np.flatnonzero(idx == i) for i in range(bin_count)]
        lo, hi = edges[:-1], edges[1:]
    else:
        raise ValueError(f"unknown bin mode {mode!r}")
    counts = np.array([p.size for p in parts])
    acc = np.array([correct[p].mean() if p.size else np.nan for p in parts])
    med = np.array([np.median(norms[p]) if p.size else np.nan for p in parts])
    return BinAccuracyReport(lo, hi, med, counts, acc, mode)


def norm_distributions(params, model_cfg: ModelConfig,
                       datasets: Mapping[str, np.ndarray]) -> NormDistributionReport:
    rep = NormDistributionReport()
    for name, x in datasets.items():
        rep.norms[name] = forward(params, model_cfg, x).recorded_norms
    return rep


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or np.ptp(a) == 0 or np.ptp(b) == 0:
        return float("nan")
    return float(np.corrcoef(a, b)[0, 1])


def norm_vs_softmax_export(traces: Sequence[ForwardTrace], is_id: Sequence[bool],
                           max_softmax: Sequence[np.ndarray] | None = None) -> NormSoftmaxTable:
    """Pair each sample's recorded norm with its max softmax score.

    ``max_softmax`` overrides the trace's own softmax (e.g. scaled softmax for
    normalized models). A constant column leaves the correlation undefined and
    sets ``degenerate``.
    """
    norms = np.concatenate([t.recorded_norms for t in traces])
    if max_softmax is None:
        sm = np.concatenate([t.softmax.max(axis=1) for t in traces])
    else:
        sm = np.concatenate([np.asarray(s, dtype=np.float64) for s in max_softmax])
    flags = np.concatenate([np.full(t.recorded_norms.size, bool(f)) for t, f in zip(traces, is_id)])
    r = pearson(norms, sm)
    return NormSoftmaxTable(norms, sm, flags, r, bool(np.isnan(r)))


def spearman(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or np.ptp(a) == 0 or np.ptp(b) == 0:
        raise DegenerateGeometryError("spearman correlation undefined for constant input")
    return float(spearmanr(a, b)[0])
