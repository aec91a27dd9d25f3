import json

import numpy as np
import pytest

from l2ood.cli import main
from l2ood.config import ExperimentConfig, load_config
from l2ood.errors import ConfigError
from l2ood.experiment import build_data, read_csv

SMALL = {
    "train": {"epochs": 5, "lr_step_epochs": [3], "base_lr": 0.05},
    "data": {"synthetic": {"samples_per_class": 60, "input_dim": 8}},
    "model": {"hidden_dims": [16], "feature_dim": 8},
    "analysis": {"bin_count": 6},
}


@pytest.fixture(scope="module")
def small_cfg(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "small.json"
    path.write_text(json.dumps(SMALL))
    return path


@pytest.fixture(scope="module")
def runs(tmp_path_factory, small_cfg):
    root = tmp_path_factory.mktemp("runs")
    for name, norm in (("l2", "on"), ("nol2", "off")):
        assert main(["run", "--config", str(small_cfg), "--out", str(root / name),
                     "--normalize", norm, "--seed", "1"]) == 0
    return root


def test_config_round_trip():
    cfg = ExperimentConfig.from_dict(SMALL)
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.train.momentum == 0.9 and cfg.train.epochs == 5


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"modle": {}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"model": {"width": 3}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"rules": ["energy"]})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"data": {"train_fraction": 0.9, "val_fraction": 0.1}})
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


def test_with_overrides_seed_sets_both():
    cfg = ExperimentConfig().with_overrides(seed=9, normalize=False, bins=10, groups="0,5,7,9")
    assert cfg.train.seed == cfg.data.synthetic.seed == 9
    assert not cfg.model_config().normalize
    assert (cfg.analysis.bin_count, cfg.analysis.groups) == (10, "0,5,7,9")


def test_build_data_is_disjoint_and_deterministic():
    cfg = ExperimentConfig.from_dict(SMALL)
    a, b = build_data(cfg), build_data(cfg)
    assert np.array_equal(a.train.x, b.train.x)
    assert len(a.train) + len(a.id_val) + len(a.id_test) == 8 * 60
    rows = {tuple(r) for r in a.train.x}
    assert not rows & {tuple(r) for r in a.id_test.x}
    assert set(a.ood_test) == {"held_out_classes", "gaussian_noise", "permuted_id"}
    assert set(a.ood_test["held_out_classes"].y.tolist()) == {8, 9, 10, 11}


def test_run_outputs(runs):
    run = runs / "l2"
    ckpts = sorted(p.name for p in (run / "checkpoints").iterdir())
    assert len(ckpts) == 5 // 1 + 2 and "final.ckpt" in ckpts
    log = read_csv(run / "trainlog.csv")
    assert list(log[0]) == ["epoch", "lr", "loss", "acc", "norm_mean", "norm_std", "norm_cv"]
    assert len(log) == 6
    ev = read_csv(run / "eval.csv")
    assert list(ev[0]) == ["dataset", "rule", "auroc", "fpr95", "n_id", "n_ood"]
    assert len(ev) == 12
    assert len(read_csv(run / "bins.csv")) == 6
    fc = read_csv(run / "feature_change.csv")
    totals = {r["group"]: float(r["increment"]) for r in fc if r["epoch"] == "total"}
    for g, tot in totals.items():
        assert tot == pytest.approx(sum(float(r["increment"]) for r in fc
                                        if r["group"] == g and r["epoch"] != "total"))
    assert list(read_csv(run / "norm_dist.csv")[0]) == ["dataset", "sample_index", "norm"]
    assert list(read_csv(run / "norm_vs_softmax.csv")[0]) == ["norm", "max_softmax", "is_id"]
    assert list(read_csv(run / "cv_trajectory.csv")[0]) == ["epoch", "mean", "std", "cv"]
    manifest = json.loads((run / "manifest.json").read_text())
    assert "trainlog.csv" in manifest["artifacts"] and manifest["seeds"]["train"] == 1
    assert "time" not in json.dumps(manifest)
    # NoL2 models still get a feature_norm row
    assert any(r["rule"] == "feature_norm" for r in read_csv(runs / "nol2" / "eval.csv"))


def test_manifest_rerun_is_byte_identical(runs, tmp_path):
    src = runs / "l2"
    out = tmp_path / "again"
    assert main(["run", "--config", str(src / "manifest.json"), "--out", str(out)]) == 0
    files = [p.relative_to(src) for p in src.rglob("*")
             if p.is_file() and p.suffix in (".csv", ".ckpt")]
    assert files
    for f in files:
        assert (src / f).read_bytes() == (out / f).read_bytes(), f


def test_compare(runs, tmp_path):
    out = tmp_path / "c.json"
    assert main(["compare", str(runs / "l2"), str(runs / "l2"), "--out", str(out)]) == 0
    res = json.loads(out.read_text())
    assert all(r["auroc_delta"] == 0 and r["fpr95_delta"] == 0 for r in res["rows"])
    assert res["accuracy"]["delta"] == 0
    # drop a row from one side: it must show up with explicit nulls
    b = tmp_path / "b"
    b.mkdir()
    lines = (runs / "nol2" / "eval.csv").read_text().splitlines()
    (b / "eval.csv").write_text("\n".join(lines[:-1]) + "\n")
    res = main(["compare", str(runs / "l2"), str(b), "--out", str(out)])
    rows = json.loads(out.read_text())["rows"]
    missing = [r for r in rows if r["auroc_b"] is None]
    assert len(rows) == 12 and len(missing) == 1 and missing[0]["auroc_delta"] is None
    assert json.loads(out.read_text())["accuracy"]["b"] is None


def test_disabled_analyses_emit_nothing(tmp_path, small_cfg, runs):
    cfg = dict(SMALL, analysis={"cv_trajectory": False, "feature_change": False, "bins": False,
                                "norm_distributions": False, "norm_vs_softmax": False,
                                "collapse": False})
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / "an"
    assert main(["analyze", "--config", str(path), "--out", str(out), "--seed", "1",
                 "--checkpoint-dir", str(runs / "l2" / "checkpoints")]) == 0
    assert not list(out.glob("*.csv"))


def test_eval_failures(tmp_path, small_cfg, runs, capsys):
    assert main(["eval", "--config", str(small_cfg), "--out", str(tmp_path / "none")]) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["type"] == "CheckpointError"
    cfg = dict(SMALL, rules=["feature_norm", "scaled_softmax"])
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    code = main(["eval", "--config", str(path), "--normalize", "off", "--out", str(tmp_path / "x"),
                 "--checkpoint", str(runs / "nol2" / "checkpoints" / "final.ckpt")])
    assert code == 1
    assert json.loads(capsys.readouterr().err)["type"] == "ScoringError"


def test_scaled_softmax_row_for_l2(tmp_path, runs):
    cfg = dict(SMALL, rules=["feature_norm", "scaled_softmax"])
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / "e"
    assert main(["eval", "--config", str(path), "--seed", "1", "--out", str(out),
                 "--checkpoint", str(runs / "l2" / "checkpoints" / "final.ckpt")]) == 0
    assert {r["rule"] for r in read_csv(out / "eval.csv")} == {"feature_norm", "scaled_softmax"}


def test_bad_config_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{"train": {"epochs": 0}}')
    assert main(["train", "--config", str(path)]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "invalid input"


def test_image_binary_run(tmp_path):
    from l2ood.datasets import PIXELS, write_image_binary

    rng = np.random.default_rng(0)
    for name, n in (("train.bin", 120), ("test.bin", 60)):
        labels = rng.integers(0, 10, n)
        write_image_binary(tmp_path / name, labels, rng.integers(0, 256, (n, PIXELS)))
    cfg = {"data": {"source": "image_binary", "train_path": str(tmp_path / "train.bin"),
                    "test_path": str(tmp_path / "test.bin"), "val_fraction": 0.3},
           "ood": ["gaussian_noise", "permuted_id"],
           "train": {"epochs": 2, "lr_step_epochs": []},
           "model": {"hidden_dims": [8], "feature_dim": 4},
           "analysis": {"bin_count": 5, "groups": "quantile:2"}}
    path = tmp_path / "img.json"
    path.write_text(json.dumps(cfg))
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "run")]) == 0
    assert len(read_csv(tmp_path / "run" / "eval.csv")) == 8
    bad = dict(cfg, ood=["held_out_classes"])
    path.write_text(json.dumps(bad))
    assert main(["train", "--config", str(path)]) == 2
