"""Command-line interface.

Subcommands: generate, train, eval, predict, study-noise, study-sparsity,
compare, report.  Every command validates the full run configuration before
performing any side effect; exit code 0 means all requested artifacts were
written.  The MODALVGAE_THREADS environment variable caps worker threads.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import evaluation as ev
from . import plots
from .config import ConfigError, RunConfig, build_run_config
from .data import apply_normalization, read_dataset, write_dataset
from .synthesis import SynthesisConfig, synthesize_dataset
from .training import (
    Checkpoint,
    CheckpointError,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train,
    train_baseline,
)
from .uq import summary_interval


class CliError(RuntimeError):
    """User-facing command failure (bad arguments, missing inputs)."""


def _apply_thread_cap() -> None:
    cap = os.environ.get("MODALVGAE_THREADS")
    if cap:
        try:
            torch.set_num_threads(max(1, int(cap)))
        except ValueError as exc:
            raise CliError(f"MODALVGAE_THREADS={cap!r} is not an integer") from exc


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="dotted-path config override, e.g. train.lr_backbone=1e-3")
    p.add_argument("--seed", type=int, help="override generation and training seeds")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded bit-reproducible runs")
    p.add_argument("--no-plots", action="store_true", help="skip figure emission")
    p.add_argument("--force", action="store_true", help="overwrite non-empty output")


def _run_config(args) -> RunConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides += [f"generation.truss.seed={args.seed}", f"train.seed={args.seed}"]
    if args.deterministic:
        overrides.append("train.deterministic=true")
    return build_run_config(args.config, overrides)


def _prepare_out(args) -> Path:
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise CliError(f"output directory {out} is not empty (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_split(data_dir, split: str):
    samples, manifest = read_dataset(data_dir, split=split)
    normalized = [apply_normalization(s, manifest.norm_stats) for s in samples]
    return samples, normalized, manifest


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True), encoding="utf-8")


def _write_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        path.write_text("", encoding="utf-8")
        return
    keys: list[str] = []
    for row in rows:
        keys += [k for k in row if k not in keys]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)


def _report_rows(report: ev.EvalReport) -> list[dict]:
    rows = []
    for j in range(report.n_modes):
        rows.append({
            "mode": j + 1,
            "mac_mean": report.mac_mean[j],
            "mac_std": report.mac_std[j],
            "mac_min": report.mac_min[j],
            "freq_err_mean_pct": report.freq_err_mean[j],
            "freq_err_std_pct": report.freq_err_std[j],
            "freq_err_max_abs_pct": report.freq_err_max_abs[j],
            "damp_err_mean_pct": report.damp_err_mean[j],
            "damp_err_std_pct": report.damp_err_std[j],
            "damp_err_max_abs_pct": report.damp_err_max_abs[j],
            "freq_mae_pct": report.freq_mae[j],
            "damp_mae_pct": report.damp_mae[j],
            "epis_frac_freq": None if report.epis_frac_freq is None else report.epis_frac_freq[j],
            "epis_frac_zeta": None if report.epis_frac_zeta is None else report.epis_frac_zeta[j],
        })
    return rows


def _study_rows(study: ev.StudyResult) -> list[dict]:
    rows = []
    for cond in study.conditions:
        for name, by_cond in study.reports.items():
            r = by_cond[cond]
            rows.append({
                study.axis_name: cond,
                "model": name,
                "mac_mean": r.mac_overall,
                "freq_mae_pct": r.freq_mae_overall,
                "damp_mae_pct": r.damp_mae_overall,
            })
    return rows


def cmd_generate(args) -> int:
    run = _run_config(args)
    synth = run.synthesis
    if args.n is not None:
        if args.n < 6:
            raise CliError("--n must be at least 6 (one sample per split minimum)")
        n_train = round(args.n * 2 / 3)
        n_val = (args.n - n_train) // 2
        n_test = args.n - n_train - n_val
        synth = SynthesisConfig.from_dict(
            {**synth.to_dict(), "n_train": n_train, "n_val": n_val, "n_test": n_test}
        )
        synth.validate()
    out = _prepare_out(args)
    samples, manifest = synthesize_dataset(synth)
    write_dataset(samples, manifest, out)
    mean_nodes = float(np.mean([s.n_nodes for s in samples]))
    print(f"wrote {len(samples)} samples to {out}")
    print(f"splits: train={len(manifest.splits['train'])} val={len(manifest.splits['val'])} "
          f"test={len(manifest.splits['test'])}; mean nodes {mean_nodes:.1f}; "
          f"fs={manifest.generation['fs']:.0f} Hz; digest {manifest.config_digest[:12]}")
    return 0


def cmd_train(args) -> int:
    run = _run_config(args)
    if args.deterministic:
        torch.set_num_threads(1)
    data_dir = Path(args.data)
    if not data_dir.exists():
        raise CliError(f"dataset directory {data_dir} does not exist")
    _, train_n, manifest = _load_split(data_dir, "train")
    _, val_n, _ = _load_split(data_dir, "val")
    if manifest.feature_dim != run.model.n_inputs:
        raise CliError(
            f"model.n_inputs={run.model.n_inputs} does not match dataset features "
            f"({manifest.feature_dim})"
        )
    out = _prepare_out(args)

    result = train(train_n, val_n, run.model, run.train, run.weights)
    for ckpt, name in ((result.best, "best"), (result.final, "final")):
        ckpt.metrics["config_digest"] = run.digest
        ckpt.metrics["dataset_digest"] = manifest.config_digest
        save_checkpoint(out / name, ckpt)
    _write_csv(out / "metrics.csv", result.log)
    print(f"best epoch {result.best.metrics['best_epoch']} "
          f"val {result.best.metrics['best_val_total']:.4f}; "
          f"SWAG snapshots {result.best.metrics['swag_snapshots']}")

    if args.with_baseline:
        base = train_baseline(train_n, val_n, run.model, run.train)
        base.best.metrics["config_digest"] = run.digest
        save_checkpoint(out / "baseline", base.best)
        _write_csv(out / "baseline_metrics.csv", base.log)
        print(f"baseline best epoch {base.best.metrics['best_epoch']} "
              f"val {base.best.metrics['best_val_total']:.4f}")
    print(f"checkpoints written to {out}")
    return 0


def _load_model_checkpoint(prefix) -> Checkpoint:
    try:
        return load_checkpoint(prefix)
    except (CheckpointError, FileNotFoundError) as exc:
        raise CliError(f"cannot load checkpoint {prefix}: {exc}") from exc


def _eval_artifacts(out: Path, preds, report, calibration, no_plots: bool, samples=None):
    _write_json(out / "report.json", report.to_dict())
    _write_csv(out / "report.csv", _report_rows(report))
    _write_json(out / "predictions.json", [ev.prediction_to_dict(p) for p in preds])
    if calibration is not None:
        _write_json(out / "calibration.json", calibration.to_dict())
    if no_plots:
        return
    plot_dir = out / "plots"
    plots.plot_error_histograms(preds, plot_dir / "error_histograms")
    plots.plot_mac_distribution(preds, plot_dir / "mac_distribution")
    plots.plot_true_vs_predicted(preds, plot_dir / "true_vs_predicted")
    if calibration is not None:
        plots.plot_reliability(calibration, plot_dir / "reliability")
    if report.epis_frac_freq is not None:
        plots.plot_uncertainty_decomposition(report, plot_dir / "uncertainty_decomposition")
    if samples:
        plots.plot_mode_shape_overlay(samples[0], preds[0], plot_dir / "mode_shapes")


def cmd_eval(args) -> int:
    run = _run_config(args)
    ckpt = _load_model_checkpoint(args.ckpt)
    raw, normalized, manifest = _load_split(args.data, args.split)
    out = _prepare_out(args)

    if normalized[0].features.shape[1] != ckpt.model_config.n_inputs:
        raise CliError(
            f"checkpoint expects {ckpt.model_config.n_inputs} features, "
            f"dataset has {normalized[0].features.shape[1]}"
        )
    model = ckpt.build()
    if ckpt.kind == "vgae":
        preds = ev.predict_vgae(model, normalized, run.uq, ckpt.swag_posterior())
        calibration = ev.coverage_curve(preds, run.uq.levels)
    else:
        preds = ev.predict_baseline(model, normalized)
        calibration = None
    report = ev.evaluate(preds)
    _eval_artifacts(out, preds, report, calibration, args.no_plots, samples=raw)
    print(f"evaluated {report.n_samples} samples: "
          f"MAC {report.mac_overall:.4f}, freq MAE {report.freq_mae_overall:.3f}%, "
          f"damp MAE {report.damp_mae_overall:.3f}%")
    print(f"artifacts in {out}")
    return 0


def cmd_predict(args) -> int:
    run = _run_config(args)
    ckpt = _load_model_checkpoint(args.ckpt)
    _, normalized, _ = _load_split(args.data, args.split)
    if args.ids:
        wanted = {int(tok) for tok in args.ids.split(",")}
        normalized = [s for s in normalized if s.sample_id in wanted]
        if not normalized:
            raise CliError(f"no samples with ids {sorted(wanted)} in split {args.split!r}")
    out = _prepare_out(args)

    model = ckpt.build()
    if ckpt.kind != "vgae":
        raise CliError("predict requires a variational model checkpoint")
    preds = ev.predict_vgae(model, normalized, run.uq, ckpt.swag_posterior())
    records = []
    for p in preds:
        rec = ev.prediction_to_dict(p)
        rec["intervals"] = {}
        for level in run.uq.levels:
            lo_f, hi_f = summary_interval(p.summary_freq, level)
            lo_z, hi_z = summary_interval(p.summary_zeta, level)
            rec["intervals"][f"{level:g}"] = {
                "freq_hz": [np.exp(lo_f).tolist(), np.exp(hi_f).tolist()],
                "zeta": [np.exp(lo_z).tolist(), np.exp(hi_z).tolist()],
            }
        records.append(rec)
    _write_json(out / "predictions.json", records)
    print(f"wrote predictions for {len(records)} samples to {out / 'predictions.json'}")
    return 0


def cmd_study_noise(args) -> int:
    run = _run_config(args)
    ckpt = _load_model_checkpoint(args.ckpt)
    models = {"vgae": ckpt.build()}
    if args.baseline_ckpt:
        models["gnn"] = _load_model_checkpoint(args.baseline_ckpt).build()
    _, _, manifest = _load_split(args.data, "test")
    snrs = [tok.strip() for tok in args.snr.split(",")]
    snrs = [tok if tok == "clean" else float(tok) for tok in snrs]
    out = _prepare_out(args)

    study = ev.noise_study(models, manifest, manifest.splits["test"], snrs,
                           manifest.norm_stats, run.uq,
                           ckpt.swag_posterior())
    _write_json(out / "study.json", study.to_dict())
    _write_csv(out / "study.csv", _study_rows(study))
    if not args.no_plots:
        plots.plot_study(study, "mac_overall", out / "plots" / "mac_vs_snr")
        plots.plot_study(study, "freq_mae_overall", out / "plots" / "freq_mae_vs_snr")
    print(f"noise study over {study.conditions} written to {out}")
    return 0


def cmd_study_sparsity(args) -> int:
    run = _run_config(args)
    vgae_ckpt = _load_model_checkpoint(args.ckpt)
    gnn_ckpt = _load_model_checkpoint(args.baseline_ckpt) if args.baseline_ckpt else None
    _, train_n, manifest = _load_split(args.data, "train")
    _, val_n, _ = _load_split(args.data, "val")
    _, test_n, _ = _load_split(args.data, "test")
    fractions = sorted(float(tok) / 100.0 for tok in args.fractions.split(","))
    ft_epochs = max(1, args.ft_epochs)
    ft_cfg = TrainConfig.from_dict({
        **run.train.to_dict(),
        "epochs": [1, 1, ft_epochs],
        "lr_backbone": run.train.lr_backbone * 0.3,
        "lr_heads": run.train.lr_heads * 0.3,
        "kl_warmup": 0, "crps_delay": 0, "evi_warmup": 0,
        "swag_last": 0,
    })
    out = _prepare_out(args)

    study = ev.sparsity_study(vgae_ckpt, gnn_ckpt, train_n, val_n, test_n,
                              fractions, ft_cfg, seed=run.train.seed, uq_cfg=run.uq)
    _write_json(out / "study.json", study.to_dict())
    _write_csv(out / "study.csv", _study_rows(study))
    if not args.no_plots:
        plots.plot_study(study, "mac_overall", out / "plots" / "mac_vs_fraction")
        plots.plot_study(study, "freq_mae_overall", out / "plots" / "freq_mae_vs_fraction")
    print(f"sparsity study over {study.conditions} written to {out}")
    return 0


def cmd_compare(args) -> int:
    study_path = Path(args.study)
    if not study_path.exists():
        raise CliError(f"study file {study_path} does not exist")
    study = ev.study_from_dict(json.loads(study_path.read_text(encoding="utf-8")))
    if args.model_a not in study.reports or args.model_b not in study.reports:
        raise CliError(
            f"study holds models {sorted(study.reports)}, not {args.model_a}/{args.model_b}"
        )
    out = _prepare_out(args)
    rows = ev.compare_models(study.for_model(args.model_a), study.for_model(args.model_b),
                             args.model_a, args.model_b)
    _write_csv(out / "comparison.csv", rows)
    for row in rows:
        print(row)
    return 0


def cmd_report(args) -> int:
    src = Path(args.input)
    report_path = src / "report.json"
    if not report_path.exists():
        raise CliError(f"{src} has no report.json")
    report = ev.report_from_dict(json.loads(report_path.read_text(encoding="utf-8")))
    preds = None
    if (src / "predictions.json").exists():
        preds = [ev.prediction_from_dict(d)
                 for d in json.loads((src / "predictions.json").read_text(encoding="utf-8"))]
    calibration = None
    if (src / "calibration.json").exists():
        d = json.loads((src / "calibration.json").read_text(encoding="utf-8"))
        calibration = ev.CalibrationReport(**d)
    out = _prepare_out(args)

    lines = [
        f"samples: {report.n_samples}, modes: {report.n_modes}",
        f"mean MAC (all modes): {report.mac_overall:.4f}",
        f"frequency MAE: {report.freq_mae_overall:.3f}%",
        f"damping MAE: {report.damp_mae_overall:.3f}%",
    ]
    for j in range(report.n_modes):
        lines.append(
            f"mode {j + 1}: MAC {report.mac_mean[j]:.4f} (min {report.mac_min[j]:.4f}), "
            f"freq err {report.freq_err_mean[j]:+.3f}% +/- {report.freq_err_std[j]:.3f}, "
            f"damp err {report.damp_err_mean[j]:+.3f}% +/- {report.damp_err_std[j]:.3f}"
        )
    if report.epis_frac_freq is not None:
        lines.append("epistemic variance fraction (freq): "
                     + ", ".join(f"{v:.3f}" for v in report.epis_frac_freq))
    if calibration is not None:
        lines.append("ECE freq per mode: " + ", ".join(f"{v:.3f}" for v in calibration.ece_freq))
        lines.append("ECE damp per mode: " + ", ".join(f"{v:.3f}" for v in calibration.ece_zeta))
    (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))

    if not args.no_plots and preds:
        plot_dir = out / "plots"
        plots.plot_error_histograms(preds, plot_dir / "error_histograms")
        plots.plot_mac_distribution(preds, plot_dir / "mac_distribution")
        plots.plot_true_vs_predicted(preds, plot_dir / "true_vs_predicted")
        if calibration is not None:
            plots.plot_reliability(calibration, plot_dir / "reliability")
        if report.epis_frac_freq is not None:
            plots.plot_uncertainty_decomposition(report, plot_dir / "uncertainty_decomposition")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="modalvgae",
        description="Truss modal dataset synthesis, model training and evaluation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthesize a truss modal dataset")
    _common_flags(p)
    p.add_argument("--n", type=int, help="total sample count (splits 4:1:1)")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("train", help="train the variational model (and optionally the baseline)")
    _common_flags(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--with-baseline", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    _common_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True, help="checkpoint prefix (without extension)")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("predict", help="write per-sample predictions with intervals")
    _common_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--ids", help="comma-separated sample ids")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("study-noise", help="noise robustness study")
    _common_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--baseline-ckpt")
    p.add_argument("--snr", default="clean,30,20,10", help="comma list, clean first")
    p.set_defaults(fn=cmd_study_noise)

    p = sub.add_parser("study-sparsity", help="sensor sparsity study")
    _common_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--baseline-ckpt")
    p.add_argument("--fractions", default="5,10,20,30,50,80,95",
                   help="observed-sensor percentages, increasing")
    p.add_argument("--ft-epochs", type=int, default=6,
                   help="fine-tune epochs per fraction")
    p.set_defaults(fn=cmd_study_sparsity)

    p = sub.add_parser("compare", help="side-by-side model comparison from a study")
    _common_flags(p)
    p.add_argument("--study", required=True, help="study.json path")
    p.add_argument("--model-a", default="vgae")
    p.add_argument("--model-b", default="gnn")
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("report", help="render summary and plots from stored artifacts")
    _common_flags(p)
    p.add_argument("--input", required=True, help="directory with report.json etc.")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _apply_thread_cap()
        return args.fn(args)
    except (CliError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
