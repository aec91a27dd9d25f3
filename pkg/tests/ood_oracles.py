"""Brute-force reference implementations of the separability metrics."""

import numpy as np


def auroc_pairs(id_scores, ood_scores) -> float:
    wins = 0.0
    for a in id_scores:
        for b in ood_scores:
            wins += 1.0 if a > b else 0.5 if a == b else 0.0
    return wins / (len(id_scores) * len(ood_scores))


def fpr_scan(id_scores, ood_scores, target=0.95) -> float:
    """Try every threshold; keep the largest one whose ID acceptance reaches the target."""
    best = None
    for t in sorted(set(id_scores)):
        tpr = sum(1 for s in id_scores if s >= t) / len(id_scores)
        if tpr >= target:
            best = t
    return sum(1 for s in ood_scores if s >= best) / len(ood_scores)


def random_scoreset(r: np.random.Generator):
    n1, n2 = int(r.integers(1, 201)), int(r.integers(1, 201))
    levels = int(r.integers(2, 30))
    if r.random() < 0.5:  # heavy ties
        a = r.integers(0, levels, n1).astype(float)
        b = r.integers(0, levels, n2).astype(float) - r.integers(0, 3)
    else:
        a = np.round(r.normal(0.5, 1, n1), 2)
        b = np.round(r.normal(0, 1, n2), 2)
    return a, b
