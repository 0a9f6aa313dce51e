"""Evidential predictive distribution and sampling-based uncertainty.

The evidential head yields a closed-form Student-t predictive distribution
per mode whose variance splits into aleatoric and epistemic parts.  MC
dropout and a diagonal SWAG posterior provide supplementary model-parameter
uncertainty; their variances add to the epistemic component while the
evidential mean is retained.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, replace

import numpy as np
import scipy.stats
import torch

from .model import ModalVGAE, NIGTensors
from .util import stream_seed


@dataclass
class NIGParams:
    """Normal-Inverse-Gamma parameters per mode (numpy side)."""

    gamma: np.ndarray
    nu: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    def validate(self) -> None:
        arrays = (self.gamma, self.nu, self.alpha, self.beta)
        if any(not np.all(np.isfinite(a)) for a in arrays):
            raise ValueError("non-finite NIG parameters")
        if np.any(self.nu <= 0) or np.any(self.alpha <= 1) or np.any(self.beta <= 0):
            raise ValueError("need nu > 0, alpha > 1, beta > 0")

    @classmethod
    def from_tensors(cls, nig: NIGTensors) -> "NIGParams":
        return cls(*(t.detach().cpu().numpy().astype(np.float64) for t in nig))


@dataclass
class PredictiveSummary:
    """Mean and decomposed variances of one predictive distribution.

    ``t_scale2`` is the squared scale of the Student-t predictive density
    with ``df`` degrees of freedom; it always satisfies
    var_total = t_scale2 * df / (df - 2).
    """

    mean: np.ndarray
    var_alea: np.ndarray
    var_epis: np.ndarray
    var_total: np.ndarray
    df: np.ndarray
    t_scale2: np.ndarray


@dataclass
class SWAGPosterior:
    """Diagonal Gaussian over flattened parameters from training snapshots."""

    mean: dict[str, np.ndarray]
    var: dict[str, np.ndarray]
    n_snapshots: int


@dataclass(frozen=True)
class UQConfig:
    mc_passes: int = 0  # T; 0 disables MC dropout
    swag_samples: int = 0  # S; 0 disables SWAG sampling
    levels: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    seed: int = 0

    def validate(self) -> None:
        if self.mc_passes < 0 or self.swag_samples < 0:
            raise ValueError("pass counts must be non-negative")
        if any(not 0.0 < lv < 1.0 for lv in self.levels):
            raise ValueError("confidence levels must lie in (0, 1)")


def predictive_moments(p: NIGParams) -> PredictiveSummary:
    """Closed-form mean/variance decomposition of the NIG predictive."""
    p.validate()
    var_alea = p.beta / (p.alpha - 1.0)
    var_epis = p.beta / (p.nu * (p.alpha - 1.0))
    return PredictiveSummary(
        mean=p.gamma.copy(),
        var_alea=var_alea,
        var_epis=var_epis,
        var_total=var_alea + var_epis,
        df=2.0 * p.alpha,
        t_scale2=p.beta * (1.0 + p.nu) / (p.nu * p.alpha),
    )


def student_t_logpdf(y, p: NIGParams) -> np.ndarray:
    """Log-density of the marginal Student-t predictive at y."""
    s = predictive_moments(p)
    return scipy.stats.t.logpdf(np.asarray(y, float), df=s.df, loc=s.mean, scale=np.sqrt(s.t_scale2))


def confidence_interval(p: NIGParams, level: float) -> tuple[np.ndarray, np.ndarray]:
    """Central Student-t interval, symmetric about gamma."""
    return summary_interval(predictive_moments(p), level)


def summary_interval(s: PredictiveSummary, level: float) -> tuple[np.ndarray, np.ndarray]:
    if not 0.0 < level < 1.0:
        raise ValueError("confidence level must be in (0, 1)")
    lo, hi = scipy.stats.t.interval(level, df=s.df, loc=s.mean, scale=np.sqrt(s.t_scale2))
    return np.asarray(lo), np.asarray(hi)


def _predict_means(model: ModalVGAE, x: torch.Tensor, edges: torch.Tensor,
                   dropout_active: bool, generator: torch.Generator | None):
    with torch.no_grad():
        out = model(x, edges, mode="mean", generator=generator, dropout_active=dropout_active)
    return (out.nig_freq.gamma.numpy().astype(np.float64),
            out.nig_zeta.gamma.numpy().astype(np.float64))


def mc_dropout_predict(model: ModalVGAE, x: torch.Tensor, edges: torch.Tensor,
                       n_passes: int, seed: int = 0):
    """Mean/variance of the predictive means over stochastic dropout passes.

    Returns ((mean_f, var_f), (mean_z, var_z)); variances use the 1/T
    normalization, so a single pass gives exactly zero variance.
    """
    if n_passes < 1:
        raise ValueError("need at least one stochastic pass")
    f_draws, z_draws = [], []
    for t in range(n_passes):
        gen = torch.Generator().manual_seed(stream_seed(seed, t, 0xD0) % (2**63))
        gf, gz = _predict_means(model, x, edges, dropout_active=True, generator=gen)
        f_draws.append(gf)
        z_draws.append(gz)
    f_draws, z_draws = np.asarray(f_draws), np.asarray(z_draws)
    return ((f_draws.mean(axis=0), f_draws.var(axis=0)),
            (z_draws.mean(axis=0), z_draws.var(axis=0)))


def collect_state(model: torch.nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().astype(np.float64).copy()
            for k, v in model.state_dict().items()}


def swag_collect(snapshots: list[dict[str, np.ndarray]]) -> SWAGPosterior:
    """Elementwise mean and unbiased (1/(K-1)) variance over snapshots."""
    k = len(snapshots)
    if k < 2:
        raise ValueError("SWAG needs at least 2 snapshots")
    names = list(snapshots[0].keys())
    for snap in snapshots[1:]:
        if list(snap.keys()) != names or any(
            snap[n].shape != snapshots[0][n].shape for n in names
        ):
            raise ValueError("snapshot parameter trees differ in shape")
    mean = {n: np.mean([s[n] for s in snapshots], axis=0) for n in names}
    var = {
        n: np.sum([(s[n] - mean[n]) ** 2 for s in snapshots], axis=0) / (k - 1)
        for n in names
    }
    return SWAGPosterior(mean=mean, var=var, n_snapshots=k)


def _load_state(model: torch.nn.Module, state: dict[str, np.ndarray]) -> None:
    model.load_state_dict({k: torch.from_numpy(np.asarray(v)).to(torch.float32)
                           for k, v in state.items()})


def swag_predict(posterior: SWAGPosterior, model: ModalVGAE, x: torch.Tensor,
                 edges: torch.Tensor, n_samples: int, seed: int = 0):
    """Mean/variance of predictive means under sampled SWAG weights.

    The model's weights are restored afterwards.
    """
    if n_samples < 1:
        raise ValueError("need at least one SWAG sample")
    saved = copy.deepcopy(model.state_dict())
    try:
        f_draws, z_draws = [], []
        for s in range(n_samples):
            rng = np.random.default_rng(stream_seed(seed, s, 0x5A))
            drawn = {
                name: posterior.mean[name] + np.sqrt(posterior.var[name]) * rng.standard_normal(posterior.mean[name].shape)
                for name in posterior.mean
            }
            _load_state(model, drawn)
            gf, gz = _predict_means(model, x, edges, dropout_active=False, generator=None)
            f_draws.append(gf)
            z_draws.append(gz)
    finally:
        model.load_state_dict(saved)
    f_draws, z_draws = np.asarray(f_draws), np.asarray(z_draws)
    return ((f_draws.mean(axis=0), f_draws.var(axis=0)),
            (z_draws.mean(axis=0), z_draws.var(axis=0)))


def combine_uncertainty(summary: PredictiveSummary, var_mc=0.0, var_swag=0.0) -> PredictiveSummary:
    """Add sampling-based variances to the epistemic component.

    The evidential mean is retained; the Student-t scale is inflated so the
    distribution's variance matches the combined total.
    """
    var_mc = np.asarray(var_mc, dtype=np.float64)
    var_swag = np.asarray(var_swag, dtype=np.float64)
    if np.any(var_mc < 0) or np.any(var_swag < 0):
        raise ValueError("sampling variances must be non-negative")
    extra = var_mc + var_swag
    new_total = summary.var_total + extra
    return replace(
        summary,
        var_epis=summary.var_epis + extra,
        var_total=new_total,
        t_scale2=summary.t_scale2 * new_total / summary.var_total,
    )
