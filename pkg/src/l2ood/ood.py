"""Scoring rules and threshold-free OoD separability metrics.

Convention throughout: ID is the positive class and a higher score means
"more in-distribution".
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ScoringError
from .linalg import row_l2_norms
from .model import ForwardTrace, ModelConfig, ModelParams, forward, softmax

RULES = ("feature_norm", "max_softmax", "max_logit", "logit_norm", "scaled_softmax")


@dataclass(frozen=True)
class ScoringRule:
    kind: str
    scale: float | None = None

    def __post_init__(self):
        if self.kind not in RULES:
            raise ValueError(f"unknown scoring rule {self.kind!r}")
        if self.kind == "scaled_softmax" and not (self.scale is not None and self.scale > 0):
            raise ValueError("scaled_softmax needs a scale > 0")

    @property
    def name(self) -> str:
        return self.kind


@dataclass(frozen=True)
class ScoreSet:
    id_scores: np.ndarray
    ood_scores: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.id_scores, dtype=np.float64).ravel()
        b = np.asarray(self.ood_scores, dtype=np.float64).ravel()
        if a.size == 0 or b.size == 0:
            raise ValueError("both score vectors must be nonempty")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("scores must be finite")
        object.__setattr__(self, "id_scores", a)
        object.__setattr__(self, "ood_scores", b)


@dataclass(frozen=True)
class EvalReport:
    auroc: float
    fpr95: float
    n_id: int
    n_ood: int
    rule: ScoringRule


def score(trace: ForwardTrace, rule: ScoringRule, params: ModelParams | None = None) -> np.ndarray:
    if rule.kind == "feature_norm":
        return trace.recorded_norms.copy()
    if rule.kind == "max_softmax":
        return trace.softmax.max(axis=1)
    if rule.kind == "max_logit":
        return trace.logits.max(axis=1)
    if rule.kind == "logit_norm":
        return row_l2_norms(trace.logits)
    # scaled_softmax
    if trace.z_norm is None:
        raise ScoringError("scaled_softmax is only defined for models trained with normalization")
    if params is None:
        raise ScoringError("scaled_softmax needs the decision-layer params")
    logits = (trace.z / rule.scale) @ params.W
    if params.b is not None:
        logits = logits + params.b
    return softmax(logits).max(axis=1)


def _twice_u(id_scores: np.ndarray, ood_scores: np.ndarray) -> int:
    """2*U of Mann-Whitney via mid-ranks, in exact integer arithmetic."""
    n1 = id_scores.size
    allv = np.concatenate([id_scores, ood_scores])
    uniq, inv, counts = np.unique(allv, return_inverse=True, return_counts=True)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])  # zero-based first position
    # twice the 1-based mid-rank of each value: 2*start + count + 1
    twice_rank = 2 * starts.astype(np.int64) + counts.astype(np.int64) + 1
    id_sum = int(twice_rank[inv[:n1]].sum())
    return id_sum - n1 * (n1 + 1)


def auroc(s: ScoreSet) -> float:
    """P(id > ood) + 0.5 * P(id == ood), computed in O(n log n)."""
    n1, n2 = s.id_scores.size, s.ood_scores.size
    return _twice_u(s.id_scores, s.ood_scores) / (2 * n1 * n2)


def fpr_at_tpr(s: ScoreSet, tpr_target: float = 0.95) -> float:
    """FPR at the largest threshold whose ID acceptance rate reaches ``tpr_target``.

    Samples with score >= threshold are accepted as ID, so OoD scores tied
    with the threshold count as false positives.
    """
    if not 0.0 < tpr_target <= 1.0:
        raise ValueError("tpr_target must lie in (0, 1]")
    ids = np.sort(s.id_scores)
    cand = np.unique(ids)
    tpr = (ids.size - np.searchsorted(ids, cand, side="left")) / ids.size
    ok = np.flatnonzero(tpr >= tpr_target)
    t_star = cand[ok[-1]]
    ood = np.sort(s.ood_scores)
    return (ood.size - int(np.searchsorted(ood, t_star, side="left"))) / ood.size


def evaluate_rule(id_trace: ForwardTrace, ood_trace: ForwardTrace, rule: ScoringRule,
                  params: ModelParams | None = None, tpr_target: float = 0.95) -> EvalReport:
    ss = ScoreSet(score(id_trace, rule, params), score(ood_trace, rule, params))
    return EvalReport(auroc(ss), fpr_at_tpr(ss, tpr_target), ss.id_scores.size,
                      ss.ood_scores.size, rule)


@dataclass(frozen=True)
class ScaleSearchResult:
    best_scale: float
    grid: np.ndarray
    aurocs: np.ndarray = field(repr=False)


def default_scale_grid(max_norm: float, n: int = 20) -> np.ndarray:
    return np.logspace(np.log10(0.01), 0.0, n) * max_norm


def scale_search(params: ModelParams, config: ModelConfig, id_val_x, ood_val_x,
                 grid=None) -> ScaleSearchResult:
    """Pick the feature down-scaling ``s`` maximizing scaled-softmax AUROC on validation data.

    Ties resolve to the earliest grid entry.
    """
    if not config.normalize:
        raise ScoringError("scale_search applies to models trained with normalization")
    id_tr = forward(params, config, id_val_x)
    ood_tr = forward(params, config, ood_val_x)
    if grid is None:
        grid = default_scale_grid(float(id_tr.recorded_norms.max()))
    grid = np.asarray(grid, dtype=np.float64).ravel()
    if grid.size == 0:
        raise ValueError("empty scale grid")
    aurocs = np.array([
        auroc(ScoreSet(score(id_tr, ScoringRule("scaled_softmax", s), params),
                       score(ood_tr, ScoringRule("scaled_softmax", s), params)))
        for s in grid
    ])
    return ScaleSearchResult(float(grid[int(np.argmax(aurocs))]), grid, aurocs)
