"""Figure emission for evaluation reports.

All figures are rendered to SVG by default (PNG optional) and never feed
back into any reported number; CSV/JSON outputs are the source of truth.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .data import GraphSample
from .evaluation import CalibrationReport, EvalReport, SamplePrediction, StudyResult


def _finish(fig, path: Path, fmt: str) -> Path:
    path = Path(path).with_suffix(f".{fmt}")
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format=fmt, bbox_inches="tight")
    plt.close(fig)
    return path


def _errors(preds: list[SamplePrediction]):
    f = np.array([(p.freq_pred - p.freq_true) / p.freq_true * 100 for p in preds])
    z = np.array([(p.zeta_pred - p.zeta_true) / p.zeta_true * 100 for p in preds])
    return f, z


def plot_error_histograms(preds: list[SamplePrediction], path, fmt="svg") -> Path:
    """Signed relative error distributions per mode, frequency and damping."""
    f_err, z_err = _errors(preds)
    m = f_err.shape[1]
    fig, axes = plt.subplots(2, m, figsize=(3.2 * m, 6), squeeze=False)
    for j in range(m):
        axes[0][j].hist(f_err[:, j], bins=30, color="#3b6aa0")
        axes[0][j].set_title(f"Mode {j + 1} freq err (%)")
        axes[1][j].hist(z_err[:, j], bins=30, color="#a03b3b")
        axes[1][j].set_title(f"Mode {j + 1} damping err (%)")
    for ax in axes.ravel():
        ax.axvline(0.0, color="k", lw=0.8)
    return _finish(fig, path, fmt)


def plot_mac_distribution(preds: list[SamplePrediction], path, fmt="svg") -> Path:
    """Violin summary of per-mode MAC values with mean annotations."""
    from .evaluation import mac_value

    m = preds[0].phi_true.shape[1]
    macs = [[mac_value(p.phi_pred[:, j], p.phi_true[:, j]) for p in preds] for j in range(m)]
    fig, ax = plt.subplots(figsize=(2.2 * m, 4))
    ax.violinplot(macs, showmeans=True)
    for thr in (0.90, 0.95):
        ax.axhline(thr, color="gray", ls="--", lw=0.8)
    for j, vals in enumerate(macs, start=1):
        ax.text(j, min(1.002, max(vals) + 0.002), f"{np.mean(vals):.4f}",
                ha="center", fontsize=8)
    ax.set_xticks(range(1, m + 1), [f"Mode {j}" for j in range(1, m + 1)])
    ax.set_ylabel("MAC")
    return _finish(fig, path, fmt)


def plot_true_vs_predicted(preds: list[SamplePrediction], path, fmt="svg") -> Path:
    """Scatter with the 1:1 line and +/-10% bounds per quantity per mode."""
    m = preds[0].freq_true.shape[0]
    fig, axes = plt.subplots(2, m, figsize=(3.2 * m, 6.4), squeeze=False)
    for row, (true_attr, pred_attr, label) in enumerate(
        [("freq_true", "freq_pred", "frequency (Hz)"), ("zeta_true", "zeta_pred", "damping ratio")]
    ):
        for j in range(m):
            t = np.array([getattr(p, true_attr)[j] for p in preds])
            q = np.array([getattr(p, pred_attr)[j] for p in preds])
            ax = axes[row][j]
            ax.scatter(t, q, s=10, alpha=0.7)
            lo, hi = min(t.min(), q.min()), max(t.max(), q.max())
            line = np.linspace(lo, hi, 2)
            ax.plot(line, line, "k-", lw=0.8)
            ax.plot(line, 1.1 * line, "k--", lw=0.6)
            ax.plot(line, 0.9 * line, "k--", lw=0.6)
            ax.set_title(f"Mode {j + 1} {label}", fontsize=9)
    return _finish(fig, path, fmt)


def plot_reliability(report: CalibrationReport, path, fmt="svg") -> Path:
    """Coverage bars vs the nominal diagonal with per-mode ECE annotations."""
    m = len(report.coverage_freq)
    levels = np.asarray(report.levels)
    fig, axes = plt.subplots(2, m, figsize=(3.0 * m, 6), squeeze=False)
    for row, (cov, eces, label) in enumerate(
        [(report.coverage_freq, report.ece_freq, "freq"),
         (report.coverage_zeta, report.ece_zeta, "damping")]
    ):
        for j in range(m):
            ax = axes[row][j]
            ax.bar(levels, cov[j], width=0.07, color="#3b6aa0")
            ax.plot(levels, levels, "r--o", ms=3, lw=1)
            ax.set_ylim(0, 1.05)
            ax.set_title(f"Mode {j + 1} {label}\nECE={eces[j]:.3f}", fontsize=9)
    return _finish(fig, path, fmt)


def plot_uncertainty_decomposition(report: EvalReport, path, fmt="svg") -> Path:
    """Epistemic vs aleatoric share of the predictive variance per mode."""
    if report.epis_frac_freq is None:
        raise ValueError("report has no uncertainty decomposition")
    m = report.n_modes
    idx = np.arange(1, m + 1)
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    for ax, frac, label in [
        (axes[0], np.asarray(report.epis_frac_freq), "frequency"),
        (axes[1], np.asarray(report.epis_frac_zeta), "damping"),
    ]:
        ax.bar(idx - 0.18, frac, width=0.36, label="epistemic")
        ax.bar(idx + 0.18, 1.0 - frac, width=0.36, label="aleatoric")
        ax.set_xticks(idx, [f"Mode {j}" for j in idx])
        ax.set_ylim(0, 1)
        ax.set_title(f"Variance share, {label}")
        ax.legend(fontsize=8)
    return _finish(fig, path, fmt)


def plot_mode_shape_overlay(sample: GraphSample, prediction: SamplePrediction,
                            path, fmt="svg", scale: float = 1.0) -> Path:
    """True vs predicted truss deformation per mode on the wireframe."""
    coords = sample.coords.astype(np.float64)
    members = {tuple(sorted(map(int, e))) for e in sample.edges}
    m = prediction.phi_true.shape[1]
    fig, axes = plt.subplots(2, m, figsize=(3.4 * m, 5.4), squeeze=False)
    for row, (phi, label) in enumerate(
        [(prediction.phi_true, "true"), (prediction.phi_pred, "predicted")]
    ):
        for j in range(m):
            ax = axes[row][j]
            col = phi[:, j]
            norm = np.abs(col).max() or 1.0
            deformed = coords.copy()
            deformed[:, 1] += scale * col / norm
            for a, b in members:
                ax.plot(coords[[a, b], 0], coords[[a, b], 1], color="0.8", lw=0.7)
                ax.plot(deformed[[a, b], 0], deformed[[a, b], 1], color="#3b6aa0", lw=1.1)
            ax.set_aspect("equal")
            ax.set_title(f"Mode {j + 1} ({label})", fontsize=9)
            ax.axis("off")
    return _finish(fig, path, fmt)


def plot_study(result: StudyResult, metric: str, path, fmt="svg") -> Path:
    """Per-condition metric curves for every model in a study."""
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    x = np.arange(len(result.conditions))
    for name, by_cond in result.reports.items():
        values = [getattr(by_cond[c], metric) for c in result.conditions]
        ax.plot(x, values, "-o", label=name)
    ax.set_xticks(x, result.conditions)
    ax.set_xlabel(result.axis_name)
    ax.set_ylabel(metric)
    ax.legend()
    return _finish(fig, path, fmt)
