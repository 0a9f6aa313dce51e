import json
from pathlib import Path

import numpy as np
import pytest

from modalvgae.cli import main
from modalvgae.config import build_run_config

TINY_SETS = [
    "--set", "generation.truss.n_nodes=[8,12]",
    "--set", 'model.spectral_widths=[64,32]',
    "--set", "model.graph_width=32",
    "--set", "model.graph_width2=48",
    "--set", "model.latent_width=16",
    "--set", "model.fusion_width=48",
    "--set", "model.decoder_width=32",
    "--set", "model.head_widths=[32]",
    "--set", "train.epochs=[1,1,2]",
    "--set", "train.batch_size=4",
    "--set", "train.accum_steps=1",
    "--set", "train.cosine_t0=5",
    "--set", "train.swag_last=2",
    "--set", "uq.mc_passes=2",
    "--set", "uq.swag_samples=2",
]


def dir_bytes(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    rc = main(["generate", "--n", "12", "--seed", "7", "--out", str(data), *TINY_SETS])
    assert rc == 0
    run = root / "run"
    rc = main(["train", "--data", str(data), "--out", str(run), "--seed", "7",
               "--with-baseline", "--deterministic", *TINY_SETS])
    assert rc == 0
    return root, data, run


def test_generate_counts_and_determinism(workspace, tmp_path):
    root, data, _ = workspace
    records = sorted(data.glob("graph_*.bin"))
    assert len(records) == 12
    manifest = json.loads((data / "manifest.json").read_text())
    assert len(manifest["splits"]["train"]) == 8
    assert len(manifest["splits"]["val"]) == 2
    assert len(manifest["splits"]["test"]) == 2

    other = tmp_path / "data2"
    rc = main(["generate", "--n", "12", "--seed", "7", "--out", str(other), *TINY_SETS])
    assert rc == 0
    assert dir_bytes(data) == dir_bytes(other)


def test_generate_invalid_count():
    assert main(["generate", "--n", "0", "--out", "/tmp/should_not_exist_xyz"]) != 0
    assert not Path("/tmp/should_not_exist_xyz").exists()


def test_generate_refuses_nonempty_without_force(workspace):
    _, data, _ = workspace
    assert main(["generate", "--n", "12", "--out", str(data), *TINY_SETS]) != 0


def test_bad_override_fails_before_side_effects(tmp_path):
    out = tmp_path / "noout"
    rc = main(["generate", "--n", "12", "--out", str(out), "--set", "train.nonsense=1"])
    assert rc != 0
    assert not out.exists()


def test_train_artifacts(workspace):
    _, _, run = workspace
    for name in ("best.json", "best.bin", "final.json", "final.bin",
                 "baseline.json", "baseline.bin", "metrics.csv"):
        assert (run / name).exists()
    manifest = json.loads((run / "best.json").read_text())
    assert manifest["kind"] == "vgae"
    assert any(e["name"].startswith("swag_mean/") for e in manifest["params"])


def test_train_deterministic_repeat(workspace, tmp_path):
    root, data, run = workspace
    run2 = tmp_path / "run2"
    rc = main(["train", "--data", str(data), "--out", str(run2), "--seed", "7",
               "--deterministic", *TINY_SETS])
    assert rc == 0
    assert (run / "metrics.csv").read_bytes() == (run2 / "metrics.csv").read_bytes()
    assert (run / "best.bin").read_bytes() == (run2 / "best.bin").read_bytes()


def test_train_missing_dataset(tmp_path):
    rc = main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "r")])
    assert rc != 0


def test_eval_full_schema(workspace, tmp_path):
    _, data, run = workspace
    out = tmp_path / "eval"
    rc = main(["eval", "--data", str(data), "--ckpt", str(run / "best"),
               "--out", str(out), *TINY_SETS])
    assert rc == 0
    report = json.loads((out / "report.json").read_text())
    for key in ("mac_mean", "freq_err_mean", "damp_mae", "epis_frac_freq",
                "mac_overall", "freq_mae_overall"):
        assert key in report
    assert (out / "report.csv").exists()
    assert (out / "predictions.json").exists()
    calibration = json.loads((out / "calibration.json").read_text())
    assert len(calibration["levels"]) == 9
    for plot in ("error_histograms", "mac_distribution", "true_vs_predicted",
                 "reliability", "uncertainty_decomposition", "mode_shapes"):
        assert (out / "plots" / f"{plot}.svg").exists()


def test_eval_no_plots_same_numbers(workspace, tmp_path):
    _, data, run = workspace
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["eval", "--data", str(data), "--ckpt", str(run / "best"),
                 "--out", str(a), *TINY_SETS]) == 0
    assert main(["eval", "--data", str(data), "--ckpt", str(run / "best"),
                 "--out", str(b), "--no-plots", *TINY_SETS]) == 0
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
    assert not (b / "plots").exists()


def test_predict_intervals(workspace, tmp_path):
    _, data, run = workspace
    out = tmp_path / "pred"
    rc = main(["predict", "--data", str(data), "--ckpt", str(run / "best"),
               "--out", str(out), *TINY_SETS])
    assert rc == 0
    records = json.loads((out / "predictions.json").read_text())
    assert len(records) == 2
    rec = records[0]
    lo, hi = rec["intervals"]["0.9"]["freq_hz"]
    assert all(l < p < h for l, p, h in zip(lo[0:4], rec["freq_pred"], hi[0:4]))


def test_study_noise_cli(workspace, tmp_path):
    _, data, run = workspace
    out = tmp_path / "noise"
    rc = main(["study-noise", "--data", str(data), "--ckpt", str(run / "best"),
               "--baseline-ckpt", str(run / "baseline"),
               "--snr", "clean,30,20,10", "--out", str(out), *TINY_SETS])
    assert rc == 0
    study = json.loads((out / "study.json").read_text())
    assert study["conditions"] == ["clean", "30", "20", "10"]
    assert set(study["reports"]) == {"vgae", "gnn"}
    assert (out / "study.csv").exists()


def test_study_sparsity_and_compare_cli(workspace, tmp_path):
    _, data, run = workspace
    out = tmp_path / "sparse"
    rc = main(["study-sparsity", "--data", str(data), "--ckpt", str(run / "best"),
               "--baseline-ckpt", str(run / "baseline"),
               "--fractions", "30,80", "--ft-epochs", "1",
               "--out", str(out), "--no-plots", *TINY_SETS])
    assert rc == 0
    study = json.loads((out / "study.json").read_text())
    assert study["conditions"] == ["0.3", "0.8"]

    cmp_out = tmp_path / "cmp"
    rc = main(["compare", "--study", str(out / "study.json"), "--out", str(cmp_out)])
    assert rc == 0
    header = (cmp_out / "comparison.csv").read_text().splitlines()[0].split(",")
    assert len(header) == 10  # condition + 9 metric/winner columns
    assert "mac_winner" in header


def test_report_cli(workspace, tmp_path):
    _, data, run = workspace
    eval_out = tmp_path / "eval"
    assert main(["eval", "--data", str(data), "--ckpt", str(run / "best"),
                 "--out", str(eval_out), "--no-plots", *TINY_SETS]) == 0
    rep_out = tmp_path / "rep"
    rc = main(["report", "--input", str(eval_out), "--out", str(rep_out)])
    assert rc == 0
    text = (rep_out / "summary.txt").read_text()
    assert "mean MAC" in text and "ECE freq" in text
    assert (rep_out / "plots" / "error_histograms.svg").exists()


def test_run_config_digest_stable_under_reordering(tmp_path):
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    a.write_text(json.dumps({"train": {"batch_size": 4, "seed": 3}}))
    b.write_text(json.dumps({"train": {"seed": 3, "batch_size": 4}}))
    assert build_run_config(a).digest == build_run_config(b).digest


def test_run_config_rejects_mode_mismatch(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": {"n_modes": 3}}))
    with pytest.raises(Exception, match="n_modes"):
        build_run_config(cfg)
