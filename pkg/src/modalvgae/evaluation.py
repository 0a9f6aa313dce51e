"""Evaluation metrics, calibration analysis and robustness studies.

Computes per-mode mode-shape agreement (MAC), signed relative errors of the
de-logged frequency/damping predictions, the epistemic share of the
predictive variance, empirical coverage against nominal confidence levels,
and the noise/sparsity robustness studies comparing the variational model
with the baseline GNN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace as dc_replace

import numpy as np
import torch

from .data import GraphSample, NormStats, apply_normalization, mask_sensors
from .model import BaselineGNN, ModalVGAE, ModelConfig, sample_tensors
from .training import Checkpoint, TrainConfig, train, train_baseline
from .uq import (
    NIGParams,
    PredictiveSummary,
    SWAGPosterior,
    UQConfig,
    combine_uncertainty,
    mc_dropout_predict,
    predictive_moments,
    summary_interval,
    swag_predict,
)
from .util import STREAM_MASKING, stream_seed


@dataclass
class SamplePrediction:
    """Predictions and truths for one graph, in original units."""

    sample_id: int
    freq_true: np.ndarray  # (M,) Hz
    zeta_true: np.ndarray  # (M,)
    phi_true: np.ndarray  # (N, M)
    phi_pred: np.ndarray  # (N, M)
    freq_pred: np.ndarray  # (M,) Hz
    zeta_pred: np.ndarray  # (M,)
    nig_freq: NIGParams | None = None  # log space
    nig_zeta: NIGParams | None = None
    summary_freq: PredictiveSummary | None = None  # combined, log space
    summary_zeta: PredictiveSummary | None = None


@dataclass
class EvalReport:
    """Per-mode and aggregate statistics over one evaluated split."""

    n_samples: int
    n_modes: int
    mac_mean: list[float]
    mac_std: list[float]
    mac_min: list[float]
    freq_err_mean: list[float]  # signed relative error, %
    freq_err_std: list[float]
    freq_err_max_abs: list[float]
    damp_err_mean: list[float]
    damp_err_std: list[float]
    damp_err_max_abs: list[float]
    freq_mae: list[float]  # mean |relative error|, %
    damp_mae: list[float]
    epis_frac_freq: list[float] | None = None
    epis_frac_zeta: list[float] | None = None

    @property
    def mac_overall(self) -> float:
        return float(np.mean(self.mac_mean))

    @property
    def freq_mae_overall(self) -> float:
        return float(np.mean(self.freq_mae))

    @property
    def damp_mae_overall(self) -> float:
        return float(np.mean(self.damp_mae))

    def validate(self) -> None:
        for v in self.mac_mean + self.mac_min:
            if not 0.0 <= v <= 1.0 + 1e-12:
                raise ValueError("MAC outside [0, 1]")
        for fr in (self.epis_frac_freq, self.epis_frac_zeta):
            if fr is not None and any(not 0.0 <= v <= 1.0 for v in fr):
                raise ValueError("epistemic fraction outside [0, 1]")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["mac_overall"] = self.mac_overall
        d["freq_mae_overall"] = self.freq_mae_overall
        d["damp_mae_overall"] = self.damp_mae_overall
        return d


@dataclass
class CalibrationReport:
    levels: list[float]
    coverage_freq: list[list[float]]  # [mode][level]
    coverage_zeta: list[list[float]]
    ece_freq: list[float]  # per mode
    ece_zeta: list[float]

    def validate(self) -> None:
        for rows in (self.coverage_freq, self.coverage_zeta):
            for row in rows:
                if any(not 0.0 <= c <= 1.0 for c in row):
                    raise ValueError("coverage outside [0, 1]")
        if any(not 0.0 <= e <= 1.0 for e in self.ece_freq + self.ece_zeta):
            raise ValueError("ECE outside [0, 1]")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class StudyResult:
    """One robustness study: a condition axis and per-model reports."""

    axis_name: str  # "snr_db" or "sensor_fraction"
    conditions: list[str]
    reports: dict[str, dict[str, EvalReport]] = field(default_factory=dict)  # model -> condition -> report

    def for_model(self, name: str) -> dict[str, EvalReport]:
        return self.reports[name]

    def to_dict(self) -> dict:
        return {
            "axis_name": self.axis_name,
            "conditions": self.conditions,
            "reports": {
                m: {c: r.to_dict() for c, r in by_cond.items()}
                for m, by_cond in self.reports.items()
            },
        }


def mac_value(a: np.ndarray, b: np.ndarray) -> float:
    """Modal assurance criterion; sign- and scale-invariant."""
    aa, bb = float(a @ a), float(b @ b)
    if aa == 0.0 or bb == 0.0:
        raise ValueError("zero-norm mode shape")
    return float(a @ b) ** 2 / (aa * bb)


def predict_vgae(
    model: ModalVGAE,
    samples: list[GraphSample],
    uq_cfg: UQConfig | None = None,
    swag: SWAGPosterior | None = None,
) -> list[SamplePrediction]:
    """Mean-latent predictions with optional MC-dropout/SWAG variance."""
    uq_cfg = uq_cfg or UQConfig()
    uq_cfg.validate()
    model.eval()
    preds = []
    for s in samples:
        x, edges = sample_tensors(s)
        with torch.no_grad():
            out = model(x, edges, mode="mean")
        nig_f = NIGParams.from_tensors(out.nig_freq)
        nig_z = NIGParams.from_tensors(out.nig_zeta)
        sum_f = predictive_moments(nig_f)
        sum_z = predictive_moments(nig_z)
        var_mc_f = var_mc_z = 0.0
        if uq_cfg.mc_passes >= 1 and model.cfg.dropout > 0:
            (_, var_mc_f), (_, var_mc_z) = mc_dropout_predict(
                model, x, edges, uq_cfg.mc_passes, seed=stream_seed(uq_cfg.seed, s.sample_id, 0xDD)
            )
        var_sw_f = var_sw_z = 0.0
        if uq_cfg.swag_samples >= 1 and swag is not None:
            (_, var_sw_f), (_, var_sw_z) = swag_predict(
                swag, model, x, edges, uq_cfg.swag_samples,
                seed=stream_seed(uq_cfg.seed, s.sample_id, 0x55),
            )
        preds.append(
            SamplePrediction(
                sample_id=s.sample_id,
                freq_true=s.freqs.astype(np.float64),
                zeta_true=s.zetas.astype(np.float64),
                phi_true=s.shapes.astype(np.float64),
                phi_pred=out.phi.numpy().astype(np.float64),
                freq_pred=np.exp(nig_f.gamma),
                zeta_pred=np.exp(nig_z.gamma),
                nig_freq=nig_f,
                nig_zeta=nig_z,
                summary_freq=combine_uncertainty(sum_f, var_mc_f, var_sw_f),
                summary_zeta=combine_uncertainty(sum_z, var_mc_z, var_sw_z),
            )
        )
    return preds


def predict_baseline(model: BaselineGNN, samples: list[GraphSample]) -> list[SamplePrediction]:
    model.eval()
    preds = []
    for s in samples:
        x, edges = sample_tensors(s)
        with torch.no_grad():
            log_f, log_z, phi = model(x, edges)
        preds.append(
            SamplePrediction(
                sample_id=s.sample_id,
                freq_true=s.freqs.astype(np.float64),
                zeta_true=s.zetas.astype(np.float64),
                phi_true=s.shapes.astype(np.float64),
                phi_pred=phi.numpy().astype(np.float64),
                freq_pred=np.exp(log_f.numpy().astype(np.float64)),
                zeta_pred=np.exp(log_z.numpy().astype(np.float64)),
            )
        )
    return preds


def evaluate(predictions: list[SamplePrediction]) -> EvalReport:
    """Aggregate per-mode statistics; invariant to the input ordering."""
    if not predictions:
        raise ValueError("cannot evaluate an empty split")
    preds = sorted(predictions, key=lambda p: p.sample_id)
    m = preds[0].freq_true.shape[0]
    if any(p.freq_true.shape[0] != m for p in preds):
        raise ValueError("mode-count mismatch across predictions")

    macs = np.array([[mac_value(p.phi_pred[:, j], p.phi_true[:, j]) for j in range(m)] for p in preds])
    f_err = np.array([(p.freq_pred - p.freq_true) / p.freq_true * 100.0 for p in preds])
    z_err = np.array([(p.zeta_pred - p.zeta_true) / p.zeta_true * 100.0 for p in preds])

    have_uq = all(p.summary_freq is not None for p in preds)
    epis_f = epis_z = None
    if have_uq:
        frac_f = np.array([p.summary_freq.var_epis / p.summary_freq.var_total for p in preds])
        frac_z = np.array([p.summary_zeta.var_epis / p.summary_zeta.var_total for p in preds])
        epis_f = frac_f.mean(axis=0).tolist()
        epis_z = frac_z.mean(axis=0).tolist()

    report = EvalReport(
        n_samples=len(preds),
        n_modes=m,
        mac_mean=macs.mean(axis=0).tolist(),
        mac_std=macs.std(axis=0).tolist(),
        mac_min=macs.min(axis=0).tolist(),
        freq_err_mean=f_err.mean(axis=0).tolist(),
        freq_err_std=f_err.std(axis=0).tolist(),
        freq_err_max_abs=np.abs(f_err).max(axis=0).tolist(),
        damp_err_mean=z_err.mean(axis=0).tolist(),
        damp_err_std=z_err.std(axis=0).tolist(),
        damp_err_max_abs=np.abs(z_err).max(axis=0).tolist(),
        freq_mae=np.abs(f_err).mean(axis=0).tolist(),
        damp_mae=np.abs(z_err).mean(axis=0).tolist(),
        epis_frac_freq=epis_f,
        epis_frac_zeta=epis_z,
    )
    report.validate()
    return report


def ece(levels, coverages) -> float:
    """Mean absolute gap between nominal and empirical coverage."""
    levels = np.asarray(levels, float)
    coverages = np.asarray(coverages, float)
    if levels.shape != coverages.shape:
        raise ValueError("levels and coverages must have equal length")
    return float(np.mean(np.abs(coverages - levels)))


def empirical_coverage(lo: np.ndarray, hi: np.ndarray, truths: np.ndarray) -> float:
    return float(np.mean((truths >= lo) & (truths <= hi)))


def coverage_curve(predictions: list[SamplePrediction], levels) -> CalibrationReport:
    """Empirical coverage of combined Student-t intervals, in log space."""
    preds = sorted(predictions, key=lambda p: p.sample_id)
    if any(p.summary_freq is None for p in preds):
        raise ValueError("coverage needs predictive summaries")
    m = preds[0].freq_true.shape[0]
    levels = list(levels)

    def curves(summaries, truths_log):
        cov = np.zeros((m, len(levels)))
        for li, level in enumerate(levels):
            inside = np.zeros((len(preds), m), dtype=bool)
            for pi, (summary, y) in enumerate(zip(summaries, truths_log)):
                lo, hi = summary_interval(summary, level)
                inside[pi] = (y >= lo) & (y <= hi)
            cov[:, li] = inside.mean(axis=0)
        return cov

    cov_f = curves([p.summary_freq for p in preds], [np.log(p.freq_true) for p in preds])
    cov_z = curves([p.summary_zeta for p in preds], [np.log(p.zeta_true) for p in preds])
    report = CalibrationReport(
        levels=levels,
        coverage_freq=cov_f.tolist(),
        coverage_zeta=cov_z.tolist(),
        ece_freq=[ece(levels, cov_f[j]) for j in range(m)],
        ece_zeta=[ece(levels, cov_z[j]) for j in range(m)],
    )
    report.validate()
    return report


def _snr_key(value) -> float:
    if value is None or (isinstance(value, str) and value.lower() == "clean"):
        return math.inf
    return float(value)


def _snr_label(value) -> str:
    return "clean" if _snr_key(value) == math.inf else f"{float(value):g}"


def noise_study(
    models: dict[str, torch.nn.Module],
    manifest,
    test_ids: list[int],
    snrs,
    norm_stats: NormStats,
    uq_cfg: UQConfig | None = None,
    swag: SWAGPosterior | None = None,
) -> StudyResult:
    """Re-simulate test responses under each SNR and evaluate every model.

    Noise enters the time series before Welch, so the PSD features see
    measurement noise the way a real sensor chain would.
    """
    from .synthesis import SynthesisConfig, draw_truss, features_for_truss
    from .data import build_graph

    keys = [_snr_key(s) for s in snrs]
    if any(b >= a for a, b in zip(keys, keys[1:])):
        raise ValueError("SNR conditions must be strictly decreasing (clean first)")
    labels = [_snr_label(s) for s in snrs]

    cfg = SynthesisConfig.from_dict(manifest.generation)
    fs = float(manifest.generation["fs"])
    duration = float(manifest.generation["duration"])
    trusses = {i: draw_truss(cfg, i) for i in test_ids}

    result = StudyResult(axis_name="snr_db", conditions=labels,
                         reports={name: {} for name in models})
    for snr, label in zip(snrs, labels):
        samples = []
        for i in test_ids:
            model_t, modal = trusses[i]
            snr_arg = None if _snr_key(snr) == math.inf else float(snr)
            psd = features_for_truss(cfg, i, model_t, modal, fs, duration, snr_db=snr_arg)
            sample = build_graph(model_t, psd, modal, sample_id=i)
            samples.append(apply_normalization(sample, norm_stats))
        for name, model in models.items():
            if isinstance(model, ModalVGAE):
                preds = predict_vgae(model, samples, uq_cfg, swag)
            else:
                preds = predict_baseline(model, samples)
            result.reports[name][label] = evaluate(preds)
    return result


def widen_for_mask_flag(ckpt: Checkpoint) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    """Adapt a checkpoint to masked inputs: one extra observed-flag feature.

    The first spectral layer gains a zero-initialized input column; every
    other weight is copied unchanged.
    """
    cfg = ModelConfig.from_dict({**ckpt.model_config.to_dict(),
                                 "n_inputs": ckpt.model_config.n_inputs + 1})
    state = {k: v.copy() for k, v in ckpt.state.items()}
    key = "spectral.layers.0.weight"
    w = state[key]
    state[key] = np.concatenate([w, np.zeros((w.shape[0], 1), dtype=w.dtype)], axis=1)
    return cfg, state


def masked_split(samples: list[GraphSample], fraction: float, seed: int) -> list[GraphSample]:
    return [
        mask_sensors(s, fraction, seed=stream_seed(seed, s.sample_id, STREAM_MASKING))
        for s in samples
    ]


def sparsity_study(
    vgae_ckpt: Checkpoint,
    gnn_ckpt: Checkpoint | None,
    train_samples: list[GraphSample],
    val_samples: list[GraphSample],
    test_samples: list[GraphSample],
    fractions,
    finetune_cfg: TrainConfig,
    seed: int = 0,
    uq_cfg: UQConfig | None = None,
) -> StudyResult:
    """Fine-tune a masked-input variant per sensor fraction and evaluate.

    A model never trained with masks degenerates trivially, so each fraction
    gets a short fine-tune from the base checkpoint (first layer widened by
    the observed-flag column) before evaluation on the masked test split.
    """
    fractions = [float(f) for f in fractions]
    if any(b <= a for a, b in zip(fractions, fractions[1:])) and len(fractions) > 1:
        raise ValueError("sensor fractions must be strictly increasing")
    labels = [f"{f:g}" for f in fractions]
    models = {"vgae": vgae_ckpt} if gnn_ckpt is None else {"vgae": vgae_ckpt, "gnn": gnn_ckpt}
    result = StudyResult(axis_name="sensor_fraction", conditions=labels,
                         reports={name: {} for name in models})

    for fraction, label in zip(fractions, labels):
        m_train = masked_split(train_samples, fraction, seed)
        m_val = masked_split(val_samples, fraction, seed)
        m_test = masked_split(test_samples, fraction, seed)
        for name, ckpt in models.items():
            cfg, state = widen_for_mask_flag(ckpt)
            if name == "vgae":
                run = train(m_train, m_val, cfg, finetune_cfg, init_state=state)
                model = run.best.build()
                result.reports[name][label] = evaluate(predict_vgae(model, m_test, uq_cfg, run.swag))
            else:
                run = train_baseline(m_train, m_val, cfg, finetune_cfg, init_state=state)
                model = run.best.build()
                result.reports[name][label] = evaluate(predict_baseline(model, m_test))
    return result


def _summary_to_dict(s: PredictiveSummary | None) -> dict | None:
    if s is None:
        return None
    return {k: np.asarray(getattr(s, k)).tolist() for k in
            ("mean", "var_alea", "var_epis", "var_total", "df", "t_scale2")}


def _summary_from_dict(d: dict | None) -> PredictiveSummary | None:
    if d is None:
        return None
    return PredictiveSummary(**{k: np.asarray(v, float) for k, v in d.items()})


def prediction_to_dict(p: SamplePrediction) -> dict:
    d = {"sample_id": p.sample_id}
    for k in ("freq_true", "zeta_true", "phi_true", "phi_pred", "freq_pred", "zeta_pred"):
        d[k] = np.asarray(getattr(p, k)).tolist()
    for k in ("nig_freq", "nig_zeta"):
        nig = getattr(p, k)
        d[k] = None if nig is None else {f: np.asarray(getattr(nig, f)).tolist()
                                         for f in ("gamma", "nu", "alpha", "beta")}
    d["summary_freq"] = _summary_to_dict(p.summary_freq)
    d["summary_zeta"] = _summary_to_dict(p.summary_zeta)
    return d


def prediction_from_dict(d: dict) -> SamplePrediction:
    def nig(x):
        return None if x is None else NIGParams(**{k: np.asarray(v, float) for k, v in x.items()})

    return SamplePrediction(
        sample_id=int(d["sample_id"]),
        freq_true=np.asarray(d["freq_true"], float),
        zeta_true=np.asarray(d["zeta_true"], float),
        phi_true=np.asarray(d["phi_true"], float),
        phi_pred=np.asarray(d["phi_pred"], float),
        freq_pred=np.asarray(d["freq_pred"], float),
        zeta_pred=np.asarray(d["zeta_pred"], float),
        nig_freq=nig(d.get("nig_freq")),
        nig_zeta=nig(d.get("nig_zeta")),
        summary_freq=_summary_from_dict(d.get("summary_freq")),
        summary_zeta=_summary_from_dict(d.get("summary_zeta")),
    )


def report_from_dict(d: dict) -> EvalReport:
    fields = {k: d[k] for k in EvalReport.__dataclass_fields__ if k in d}
    return EvalReport(**fields)


def study_from_dict(d: dict) -> StudyResult:
    return StudyResult(
        axis_name=d["axis_name"],
        conditions=list(d["conditions"]),
        reports={m: {c: report_from_dict(r) for c, r in by_cond.items()}
                 for m, by_cond in d["reports"].items()},
    )


def compare_models(a: dict[str, EvalReport], b: dict[str, EvalReport],
                   name_a: str = "vgae", name_b: str = "gnn") -> list[dict]:
    """Side-by-side per-condition metrics with per-cell winner flags."""
    if list(a.keys()) != list(b.keys()):
        raise ValueError("condition axes differ between the two reports")
    rows = []
    for cond in a:
        ra, rb = a[cond], b[cond]
        rows.append({
            "condition": cond,
            f"mac_{name_a}": ra.mac_overall,
            f"mac_{name_b}": rb.mac_overall,
            "mac_winner": name_a if ra.mac_overall >= rb.mac_overall else name_b,
            f"freq_mae_{name_a}": ra.freq_mae_overall,
            f"freq_mae_{name_b}": rb.freq_mae_overall,
            "freq_mae_winner": name_a if ra.freq_mae_overall <= rb.freq_mae_overall else name_b,
            f"damp_mae_{name_a}": ra.damp_mae_overall,
            f"damp_mae_{name_b}": rb.damp_mae_overall,
            "damp_mae_winner": name_a if ra.damp_mae_overall <= rb.damp_mae_overall else name_b,
        })
    return rows
