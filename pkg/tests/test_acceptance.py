"""Acceptance suite: one test per criterion, each at its stated tolerance.

Criteria 5-11 share one session fixture that trains the default synthetic
configuration for 3 seeds with and without feature normalization.
"""

import time
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import spearmanr

from l2ood.collapse import class_stats, ea_means, en_means, nc1
from l2ood.config import ExperimentConfig, load_config
from l2ood.experiment import read_csv, run_all
from l2ood.ood import ScoreSet, auroc, fpr_at_tpr

from acceptance_log import record
from gradcheck import analytic_gradients, fd_gradients, max_row_cosine, random_setup, relative_error
from ood_oracles import auroc_pairs, fpr_scan, random_scoreset
from test_collapse import etf_features, oracle_ea, oracle_en, oracle_nc1

SEEDS = (0, 1, 2)
OTHER_RULES = ("max_softmax", "max_logit", "logit_norm")


def test_criterion_01_orthogonality():
    t0 = time.perf_counter()
    worst = max(max_row_cosine(*random_setup(1000 + i, True)) for i in range(100))
    dt = time.perf_counter() - t0
    ok = record(1, worst < 1e-8 and dt < 10, f"max |cos| = {worst:.2e}, {dt:.2f}s")
    assert ok


def test_criterion_02_gradients():
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(20):
        for normalize in (True, False):
            cfg, p, x, y = random_setup(2000 + i, normalize)
            worst = max(worst, relative_error(analytic_gradients(cfg, p, x, y),
                                              fd_gradients(cfg, p, x, y, h=1e-5)))
    dt = time.perf_counter() - t0
    ok = record(2, worst < 1e-5 and dt < 60, f"max relative error = {worst:.2e}, {dt:.2f}s")
    assert ok


def test_criterion_03_collapse_metrics():
    r = np.random.default_rng(3)
    etf_worst = 0.0
    for C in (2, 3, 4):
        for d in (3, 8):
            Z, y = etf_features(C, d, r)
            st = class_stats(Z, y)
            etf_worst = max(etf_worst, nc1(Z, y), en_means(st), ea_means(st))
    oracle_worst = 0.0
    for _ in range(50):
        C = int(r.integers(2, 6))
        d = int(r.integers(C, 10))
        y = np.repeat(np.arange(C), int(r.integers(2, 6)))
        Z = 2 * r.standard_normal((C, d))[y] + r.standard_normal((y.size, d))
        st = class_stats(Z, y)
        ref = oracle_nc1(Z, y, C)
        oracle_worst = max(oracle_worst, abs(nc1(Z, y) - ref) / max(1.0, abs(ref)),
                           abs(en_means(st) - oracle_en(Z, y, C)),
                           abs(ea_means(st) - oracle_ea(Z, y, C)))
    ok = record(3, etf_worst < 1e-10 and oracle_worst < 1e-9,
                f"ETF max = {etf_worst:.1e}, oracle max deviation = {oracle_worst:.1e}")
    assert ok


def test_criterion_04_metric_oracles():
    r = np.random.default_rng(4)
    t0 = time.perf_counter()
    mismatches = 0
    for _ in range(200):
        a, b = random_scoreset(r)
        ss = ScoreSet(a, b)
        mismatches += auroc(ss) != auroc_pairs(a, b)
        mismatches += fpr_at_tpr(ss) != fpr_scan(list(a), list(b))
    fast = time.perf_counter() - t0
    # the timing bound applies to the library metrics, not to the O(n^2) oracles
    t0 = time.perf_counter()
    r = np.random.default_rng(4)
    for _ in range(200):
        ss = ScoreSet(*random_scoreset(r))
        auroc(ss), fpr_at_tpr(ss)
    dt = time.perf_counter() - t0
    ok = record(4, mismatches == 0 and dt < 10,
                f"{mismatches} mismatches over 200 sets, metrics {dt:.2f}s (with oracles {fast:.1f}s)")
    assert ok


@pytest.fixture(scope="session")
def runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    t0 = time.perf_counter()
    out = {}
    for seed in SEEDS:
        for normalize in (True, False):
            cfg = ExperimentConfig().with_overrides(
                seed=seed, normalize=normalize, output_dir=root / f"s{seed}_{'l2' if normalize else 'nol2'}")
            res = run_all(cfg)
            res["cfg"] = cfg
            res["eval_map"] = {(d, rule): a for d, rule, a, *_ in res["eval"]}
            out[seed, normalize] = res
    out["elapsed"] = time.perf_counter() - t0
    return out


def test_criterion_05_headline(runs):
    margins = {}
    for ds in ("gaussian_noise", "held_out_classes", "permuted_id"):
        margins[ds] = float(np.mean([runs[s, True]["eval_map"][ds, "feature_norm"]
                                     - runs[s, False]["eval_map"][ds, "feature_norm"]
                                     for s in SEEDS]))
    ok = margins["gaussian_noise"] > 0 and margins["held_out_classes"] > 0 and runs["elapsed"] < 600
    detail = ", ".join(f"{k} {v:+.4f}" for k, v in margins.items())
    assert record(5, ok, f"mean AUROC(L2) - AUROC(NoL2): {detail}; 6 runs in {runs['elapsed']:.0f}s")


def test_criterion_06_cv_trajectories(runs):
    parts, ok = [], True
    for s in SEEDS:
        for normalize in (True, False):
            traj = runs[s, normalize]["analysis"]["cv_trajectory"]
            first, last = traj[1, 3], traj[-1, 3]
            ok &= (last > first) if normalize else (last < first)
            parts.append(f"{'L2' if normalize else 'NoL2'}[{s}] {first:.3f}->{last:.3f}")
    assert record(6, ok, "; ".join(parts))


def test_criterion_07_norm_growth(runs):
    rhos = []
    for s in SEEDS:
        assert runs[s, True]["cfg"].train.weight_decay == 0
        traj = runs[s, True]["analysis"]["cv_trajectory"]
        rhos.append(float(spearmanr(traj[:, 0], traj[:, 1])[0]))
    assert record(7, min(rhos) > 0.9, "Spearman(epoch, mean norm) per L2 seed: "
                  + ", ".join(f"{r:.3f}" for r in rhos))


def test_criterion_08_feature_change(runs):
    parts = []
    for s in SEEDS:
        tot = runs[s, True]["analysis"]["feature_change"].totals
        parts.append((tot[-1], tot[0]))
    ok = all(hi > lo for hi, lo in parts)
    assert record(8, ok, "L2 high vs low group: "
                  + ", ".join(f"{hi:.3g} > {lo:.3g}" for hi, lo in parts))


def test_criterion_09_norm_accuracy_bins(runs):
    parts = []
    for s in SEEDS:
        n = len(runs[s, True]["data"].id_test)
        expected = 125 if n >= 2500 else 25
        assert runs[s, True]["analysis"]["bins"].bin_count == expected
        parts.append((runs[s, True]["analysis"]["bins"].spearman(),
                      runs[s, False]["analysis"]["bins"].spearman()))
    ok = all(a > b for a, b in parts)
    assert record(9, ok, f"{expected} bins, Spearman L2 vs NoL2: "
                  + ", ".join(f"{a:.3f} > {b:.3f}" for a, b in parts))


def test_criterion_10_norm_invariance(runs):
    parts = []
    for s in SEEDS:
        ratio = [runs[s, n]["analysis"]["norm_distributions"].mean_ratio("id_test", "gaussian_noise")
                 for n in (True, False)]
        parts.append(ratio)
    ok = all(a > b for a, b in parts)
    assert record(10, ok, "ID/noise mean-norm ratio L2 vs NoL2: "
                  + ", ".join(f"{a:.3f} > {b:.3f}" for a, b in parts))


def test_criterion_11_scoring_rules(runs):
    worst = np.inf
    parts = []
    for ds in ("held_out_classes", "gaussian_noise", "permuted_id"):
        fn = np.mean([runs[s, True]["eval_map"][ds, "feature_norm"] for s in SEEDS])
        best = max(np.mean([runs[s, True]["eval_map"][ds, r] for s in SEEDS]) for r in OTHER_RULES)
        worst = min(worst, fn - best)
        parts.append(f"{ds} {fn - best:+.4f}")
    assert record(11, worst >= -0.02, "feature_norm minus best other rule (seed mean): "
                  + ", ".join(parts))


def test_criterion_12_reproducibility(runs, tmp_path):
    diffs, compared = [], 0
    for normalize in (True, False):
        src = Path(runs[0, normalize]["cfg"].output_dir)
        out = tmp_path / ("l2" if normalize else "nol2")
        run_all(load_config(src / "manifest.json").with_overrides(output_dir=out))
        for f in src.rglob("*"):
            if f.is_file() and f.suffix in (".csv", ".ckpt"):
                compared += 1
                if f.read_bytes() != (out / f.relative_to(src)).read_bytes():
                    diffs.append(str(f.relative_to(src)))
    assert record(12, not diffs and compared > 0,
                  f"{compared} files re-generated from manifests, {len(diffs)} differ")


def test_ce_bound_on_acceptance_runs(runs):
    for key, res in runs.items():
        if key == "elapsed":
            continue
        rows = read_csv(res["cfg"].output_dir + "/collapse.csv")
        assert rows
        for r in rows:
            assert float(r["ce_bound"]) <= float(r["ce_loss"])
