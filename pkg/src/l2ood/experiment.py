"""End-to-end experiments: data assembly, train/eval/analyze/compare, run manifests.

Run directory layout::

    <out>/manifest.json          resolved config, seeds, version, artifact hashes
    <out>/trainlog.csv
    <out>/checkpoints/epoch_XXXX.ckpt, final.ckpt
    <out>/eval.csv, eval_summary.json
    <out>/cv_trajectory.csv, feature_change.csv, bins.csv, norm_dist.csv,
          norm_vs_softmax.csv, collapse.csv
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    NormGroupSpec,
    assign_norm_groups,
    cv_trajectory,
    feature_change,
    norm_accuracy_bins,
    norm_distributions,
    norm_vs_softmax_export,
)
from .checkpoint import checkpoint_name, load_checkpoint, load_checkpoint_dir, save_checkpoint
from .collapse import BoundInputs, ce_lower_bound, collapse_report
from .config import ExperimentConfig, dump_json
from .datasets import Dataset, OodVariant, gen_blobs, load_image_binary, make_ood, split
from .errors import CheckpointError, ScoringError
from .linalg import Rng, frobenius_norm
from .model import forward, softmax_cross_entropy
from .ood import ScoreSet, ScoringRule, auroc, fpr_at_tpr, score, scale_search
from .trainer import train

log = logging.getLogger(__name__)

# Rng stream ids under the data seed
_BLOBS, _SPLIT, _SPLIT_VAL, _OOD_BASE = 10, 11, 12, 20


@dataclass
class ExperimentData:
    train: Dataset
    id_val: Dataset
    id_test: Dataset
    ood_val: dict[str, Dataset] = field(default_factory=dict)
    ood_test: dict[str, Dataset] = field(default_factory=dict)


def build_data(cfg: ExperimentConfig) -> ExperimentData:
    """Deterministically assemble ID splits and OoD sets from the config.

    The ID pool is split into train / val / test. Each OoD variant is built
    against the ID val+test pool (noise statistics come from the training
    split only) and then split into its own val and test halves in the same
    proportion.
    """
    dc = cfg.data
    seed = dc.synthetic.seed
    if dc.source == "synthetic":
        pool = gen_blobs(dc.synthetic, Rng(seed, _BLOBS))
        pool.name = "id"
        train_ds, rest = split(pool, dc.train_fraction, Rng(seed, _SPLIT))
    else:
        train_ds, stats = load_image_binary(dc.train_path)
        rest, _ = load_image_binary(dc.test_path, stats)
    val_share = dc.val_fraction / (1.0 - dc.train_fraction) if dc.source == "synthetic" \
        else dc.val_fraction
    id_val, id_test = split(rest, val_share, Rng(seed, _SPLIT_VAL))
    train_ds.name, id_val.name, id_test.name = "id_train", "id_val", "id_test"
    data = ExperimentData(train_ds, id_val, id_test)

    k = cfg.model_config().num_classes
    for i, kind in enumerate(cfg.ood):
        rng = Rng(seed, _OOD_BASE + i)
        if kind == "held_out_classes":
            variant = OodVariant.held_out(k, dc.held_out_classes)
            per_class = max(1, len(rest) // k)
            full = make_ood(rest, variant, rng, spec=dc.synthetic, per_class=per_class)
        elif kind == "gaussian_noise":
            full = make_ood(train_ds, OodVariant(kind), rng, n=len(rest))
        else:
            full = make_ood(rest, OodVariant(kind), rng)
        val, test = split(full, val_share, Rng(seed, _OOD_BASE + 100 + i))
        val.name = test.name = kind
        data.ood_val[kind], data.ood_test[kind] = val, test
    return data


# ---------------------------------------------------------------- file helpers

def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "" if math.isnan(v) else repr(v)
    if isinstance(v, np.integer):
        return int(v)
    return v


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def update_manifest(cfg: ExperimentConfig, out: Path) -> Path:
    """Write ``manifest.json`` indexing every artifact in the run directory."""
    artifacts = {}
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            artifacts[p.relative_to(out).as_posix()] = _sha256(p)
    manifest = {
        "tool": "l2ood",
        "version": __version__,
        "config": cfg.to_dict(),
        "seeds": {"data": cfg.data.synthetic.seed, "train": cfg.train.seed},
        "artifacts": artifacts,
    }
    path = out / "manifest.json"
    path.write_text(dump_json(manifest))
    return path


# ---------------------------------------------------------------- commands

TRAINLOG_HEADER = ["epoch", "lr", "loss", "acc", "norm_mean", "norm_std", "norm_cv"]


def cmd_train(cfg: ExperimentConfig, data: ExperimentData | None = None):
    out = Path(cfg.output_dir)
    ck_dir = out / "checkpoints"
    ck_dir.mkdir(parents=True, exist_ok=True)
    data = data if data is not None else build_data(cfg)
    mcfg = cfg.model_config()
    result = train(mcfg, cfg.train, data.train)
    for ck in result.checkpoints:
        save_checkpoint(ck_dir / checkpoint_name(ck.epoch), ck)
    save_checkpoint(ck_dir / "final.ckpt", result.checkpoints[-1])
    write_csv(out / "trainlog.csv", TRAINLOG_HEADER,
              [[getattr(r, h) for h in TRAINLOG_HEADER] for r in result.log.records])
    update_manifest(cfg, out)
    return result


EVAL_HEADER = ["dataset", "rule", "auroc", "fpr95", "n_id", "n_ood"]


def _rule_for(cfg, name, params, mcfg, data, variant) -> ScoringRule:
    if name != "scaled_softmax":
        return ScoringRule(name)
    if not mcfg.normalize:
        raise ScoringError("scaled_softmax is undefined for models trained without normalization")
    res = scale_search(params, mcfg, data.id_val.x, data.ood_val[variant].x)
    return ScoringRule("scaled_softmax", res.best_scale)


def cmd_eval(cfg: ExperimentConfig, checkpoint=None, data: ExperimentData | None = None):
    """Score ID test vs every OoD test set under every rule; write eval.csv."""
    out = Path(cfg.output_dir)
    ck_path = Path(checkpoint) if checkpoint else out / "checkpoints" / "final.ckpt"
    if not ck_path.exists():
        raise CheckpointError(f"missing checkpoint {ck_path}")
    ck = load_checkpoint(ck_path)
    mcfg = cfg.model_config()
    if "scaled_softmax" in cfg.rules and not mcfg.normalize:
        raise ScoringError("scaled_softmax is undefined for models trained without normalization")
    data = data if data is not None else build_data(cfg)
    id_tr = forward(ck.params, mcfg, data.id_test.x)
    rows, summary = [], {"epoch": ck.epoch, "rules": {}}
    for variant in cfg.ood:
        ood_tr = forward(ck.params, mcfg, data.ood_test[variant].x)
        for name in cfg.rules:
            rule = _rule_for(cfg, name, ck.params, mcfg, data, variant)
            ss = ScoreSet(score(id_tr, rule, ck.params), score(ood_tr, rule, ck.params))
            rows.append([variant, name, auroc(ss), fpr_at_tpr(ss), ss.id_scores.size,
                         ss.ood_scores.size])
            if rule.scale is not None:
                summary["rules"].setdefault(name, {})[variant] = {"scale": rule.scale}
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "eval.csv", EVAL_HEADER, rows)
    summary["id_test_accuracy"] = float(np.mean(id_tr.logits.argmax(axis=1) == data.id_test.y))
    summary["id_test_loss"] = softmax_cross_entropy(id_tr.logits, data.id_test.y)[0]
    (out / "eval_summary.json").write_text(dump_json(summary))
    update_manifest(cfg, out)
    return rows, summary


def cmd_analyze(cfg: ExperimentConfig, checkpoint_dir=None, data: ExperimentData | None = None):
    """Write one CSV per enabled analysis; returns a dict of in-memory results."""
    out = Path(cfg.output_dir)
    ck_dir = Path(checkpoint_dir) if checkpoint_dir else out / "checkpoints"
    cks = load_checkpoint_dir(ck_dir)
    final = cks[-1]
    mcfg = cfg.model_config()
    data = data if data is not None else build_data(cfg)
    an = cfg.analysis
    results = {}
    out.mkdir(parents=True, exist_ok=True)

    if an.cv_trajectory:
        traj = cv_trajectory(cks, mcfg, data.train.x)
        write_csv(out / "cv_trajectory.csv", ["epoch", "mean", "std", "cv"],
                  [[int(r[0]), r[1], r[2], r[3]] for r in traj])
        results["cv_trajectory"] = traj

    if an.feature_change:
        src = data.train if an.group_source == "train" else data.id_test
        final_norms = forward(final.params, mcfg, src.x).recorded_norms
        spec = NormGroupSpec.parse(an.groups, final_norms)
        groups = assign_norm_groups(final_norms, spec)
        rep = feature_change(cks, mcfg, src.x, groups, spec)
        rows = [[spec.labels[m], int(e), rep.increments[m, j]]
                for m in range(spec.num_groups) for j, e in enumerate(rep.epochs)]
        rows += [[spec.labels[m], "total", rep.totals[m]] for m in range(spec.num_groups)]
        write_csv(out / "feature_change.csv", ["group", "epoch", "increment"], rows)
        results["feature_change"] = rep

    id_tr = forward(final.params, mcfg, data.id_test.x)
    if an.bins:
        n = len(data.id_test)
        count = an.bin_count if n >= 2500 else min(an.bin_count, 25)
        rep = norm_accuracy_bins(id_tr, data.id_test.y, count, an.bin_mode)
        write_csv(out / "bins.csv", ["bin", "norm_lo", "norm_hi", "count", "accuracy"],
                  [[i, rep.norm_lo[i], rep.norm_hi[i], rep.counts[i], rep.accuracy[i]]
                   for i in range(rep.bin_count)])
        results["bins"] = rep

    if an.norm_distributions:
        named = {"id_test": data.id_test.x, **{k: v.x for k, v in data.ood_test.items()}}
        rep = norm_distributions(final.params, mcfg, named)
        write_csv(out / "norm_dist.csv", ["dataset", "sample_index", "norm"],
                  [[name, i, v] for name, vals in rep.norms.items() for i, v in enumerate(vals)])
        results["norm_distributions"] = rep

    if an.norm_vs_softmax:
        ood_trs = [forward(final.params, mcfg, data.ood_test[k].x) for k in cfg.ood]
        traces = [id_tr, *ood_trs]
        sm = None
        if mcfg.normalize and cfg.ood:
            ood_val = np.concatenate([data.ood_val[k].x for k in cfg.ood])
            s = scale_search(final.params, mcfg, data.id_val.x, ood_val).best_scale
            rule = ScoringRule("scaled_softmax", s)
            sm = [score(t, rule, final.params) for t in traces]
            results["norm_vs_softmax_scale"] = s
        table = norm_vs_softmax_export(traces, [True] + [False] * len(ood_trs), sm)
        write_csv(out / "norm_vs_softmax.csv", ["norm", "max_softmax", "is_id"],
                  zip(table.norm, table.max_softmax, table.is_id))
        results["norm_vs_softmax"] = table

    if an.collapse:
        # geometry of the encoder output z; the loss bound uses the decision-layer input
        rows = []
        for ck in cks:
            if ck.epoch % an.collapse_every and ck is not final:
                continue
            tr = forward(ck.params, mcfg, data.train.x)
            rep = collapse_report(tr.z, data.train.y, mcfg.num_classes)
            loss = softmax_cross_entropy(tr.logits, data.train.y)[0]
            rho = float(np.max(np.linalg.norm(tr.features, axis=1)))
            bound = ce_lower_bound(BoundInputs(rho, mcfg.num_classes, frobenius_norm(ck.params.W)))
            rows.append([ck.epoch, rep.nc1, rep.en_means, rep.ea_means, rep.norm_mean,
                         rep.norm_std, rep.norm_cv, loss, bound])
        write_csv(out / "collapse.csv", ["epoch", "nc1", "en_means", "ea_means", "norm_mean",
                                         "norm_std", "norm_cv", "ce_loss", "ce_bound"], rows)
        results["collapse"] = rows

    update_manifest(cfg, out)
    return results


def _eval_index(run: Path) -> dict[tuple[str, str], dict[str, str]]:
    return {(r["dataset"], r["rule"]): r for r in read_csv(run / "eval.csv")}


def _num(v):
    return None if v is None or v == "" else float(v)


def cmd_compare(run_a, run_b, out_path=None) -> dict:
    """Paired deltas (a minus b) for every (dataset, rule) seen in either run."""
    run_a, run_b = Path(run_a), Path(run_b)
    ia, ib = _eval_index(run_a), _eval_index(run_b)
    keys = sorted(set(ia) | set(ib))
    rows = []
    for key in keys:
        ra, rb = ia.get(key), ib.get(key)
        entry = {"dataset": key[0], "rule": key[1]}
        for metric in ("auroc", "fpr95"):
            a = _num(ra[metric]) if ra else None
            b = _num(rb[metric]) if rb else None
            entry[f"{metric}_a"], entry[f"{metric}_b"] = a, b
            entry[f"{metric}_delta"] = None if a is None or b is None else a - b
        rows.append(entry)

    def acc(run):
        p = run / "eval_summary.json"
        return json.loads(p.read_text()).get("id_test_accuracy") if p.exists() else None

    aa, ab = acc(run_a), acc(run_b)
    result = {
        "run_a": str(run_a), "run_b": str(run_b), "rows": rows,
        "accuracy": {"a": aa, "b": ab,
                     "delta": None if aa is None or ab is None else aa - ab},
    }
    out_path = Path(out_path) if out_path else run_a / "compare.json"
    out_path.write_text(dump_json(result))
    return result


def run_all(cfg: ExperimentConfig) -> dict:
    """train + eval + analyze on a shared data build."""
    data = build_data(cfg)
    result = cmd_train(cfg, data)
    rows, summary = cmd_eval(cfg, data=data)
    analysis = cmd_analyze(cfg, data=data)
    return {"train": result, "eval": rows, "summary": summary, "analysis": analysis, "data": data}
