"""Training loss terms and the weighted composite objective.

Every term is differentiable and individually testable.  Frequency/damping
targets enter the evidential and calibration terms in log space; mode-shape
terms operate on the raw predicted field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch

from .model import ModelOutput, NIGTensors

INV_SQRT_PI = 1.0 / math.sqrt(math.pi)


@dataclass(frozen=True)
class LossWeights:
    lambda_freq: float = 1.0
    lambda_zeta: float = 1.0
    lambda_crps: float = 0.1
    lambda_phi: float = 1.0
    lambda_ortho: float = 0.01
    kl_weight: float = 1e-3
    lambda_evi: float = 0.01
    mode_weights: tuple[float, ...] = (1.0, 1.0, 2.0, 2.0)

    def validate(self) -> None:
        vals = (self.lambda_freq, self.lambda_zeta, self.lambda_crps, self.lambda_phi,
                self.lambda_ortho, self.kl_weight, self.lambda_evi, *self.mode_weights)
        if any(v < 0 for v in vals):
            raise ValueError("loss weights must be non-negative")


@dataclass
class LossBreakdown:
    """Scalar value and effective weight of every term plus the weighted total."""

    terms: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)
    total: float = 0.0

    def weighted_sum(self) -> float:
        return sum(self.weights[k] * self.terms[k] for k in self.terms)


def _check_nig(nig: NIGTensors) -> None:
    if bool((nig.nu <= 0).any()) or bool((nig.beta <= 0).any()) or bool((nig.alpha <= 0).any()):
        raise ValueError("invalid NIG parameters: need nu > 0, alpha > 0, beta > 0")


def nig_nll(y: torch.Tensor, nig: NIGTensors) -> torch.Tensor:
    """Negative log-likelihood of the NIG evidential distribution, per mode."""
    _check_nig(nig)
    omega = 2.0 * nig.beta * (1.0 + nig.nu)
    return (
        0.5 * torch.log(math.pi / nig.nu)
        - nig.alpha * torch.log(omega)
        + (nig.alpha + 0.5) * torch.log((y - nig.gamma) ** 2 * nig.nu + omega)
        + torch.lgamma(nig.alpha)
        - torch.lgamma(nig.alpha + 0.5)
    )


def evidential_regularizer(y: torch.Tensor, nig: NIGTensors) -> torch.Tensor:
    """|y - gamma| (2 nu + alpha): penalizes confident misses, per mode."""
    return torch.abs(y - nig.gamma) * (2.0 * nig.nu + nig.alpha)


def crps_gaussian(y: torch.Tensor, mu: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
    """Closed-form CRPS of a Gaussian forecast, elementwise."""
    if bool((sigma <= 0).any()):
        raise ValueError("sigma must be strictly positive")
    z = (y - mu) / sigma
    cdf = torch.special.ndtr(z)
    pdf = torch.exp(-0.5 * z**2) / math.sqrt(2.0 * math.pi)
    return sigma * (z * (2.0 * cdf - 1.0) + 2.0 * pdf - INV_SQRT_PI)


def mac(phi_p: torch.Tensor, phi_t: torch.Tensor) -> torch.Tensor:
    """Modal assurance criterion of two shape vectors, in [0, 1]."""
    pp = torch.dot(phi_p, phi_p)
    tt = torch.dot(phi_t, phi_t)
    if float(pp.detach()) == 0.0 or float(tt.detach()) == 0.0:
        raise ValueError("zero-norm mode shape")
    return torch.dot(phi_p, phi_t) ** 2 / (pp * tt)


def mac_loss(phi_pred: torch.Tensor, phi_true: torch.Tensor,
             mode_weights: tuple[float, ...] | torch.Tensor | None = None) -> torch.Tensor:
    """Weighted mean over modes of (1 - MAC)."""
    if phi_pred.shape != phi_true.shape:
        raise ValueError("mode-shape arrays must share a shape")
    m = phi_pred.shape[1]
    if mode_weights is None:
        w = torch.ones(m, dtype=phi_pred.dtype)
    else:
        w = torch.as_tensor(mode_weights, dtype=phi_pred.dtype)
        if w.shape[0] < m:  # repeat the last emphasis for extra modes
            w = torch.cat([w, w[-1].expand(m - w.shape[0])])
        w = w[:m]
    w = w / w.sum()
    per_mode = torch.stack([1.0 - mac(phi_pred[:, j], phi_true[:, j]) for j in range(m)])
    return torch.dot(w, per_mode)


def ortho_loss(phi_pred: torch.Tensor) -> torch.Tensor:
    """Elementwise l1 distance of the Gram matrix from the identity."""
    gram = phi_pred.T @ phi_pred
    eye = torch.eye(gram.shape[0], dtype=phi_pred.dtype)
    return torch.abs(gram - eye).sum()


def kl_loss(mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """KL(N(mu, sigma^2) || N(0, I)) for a diagonal Gaussian."""
    return -0.5 * torch.sum(1.0 + logvar - mu**2 - torch.exp(logvar))


def nig_total_std(nig: NIGTensors) -> torch.Tensor:
    """sqrt of the total predictive variance beta/(alpha-1) (1 + 1/nu)."""
    return torch.sqrt(nig.beta / (nig.alpha - 1.0) * (1.0 + 1.0 / nig.nu))


def total_loss(output: ModelOutput, targets, weights: LossWeights, schedule) -> tuple[torch.Tensor, LossBreakdown]:
    """Composite objective under the current phase/warm-up schedule.

    ``targets`` is (log_f, log_zeta, phi_true); ``schedule`` must expose
    ``phase`` plus ``kl_mult``, ``evi_mult`` and ``crps_mult`` in [0, 1].
    Inactive terms are still reported (detached) with weight zero, so the
    breakdown identity total = sum(w_k t_k) holds in every phase.
    """
    weights.validate()
    log_f, log_z, phi_true = targets
    phase = schedule.phase

    nll_f = nig_nll(log_f, output.nig_freq).mean()
    reg_f = evidential_regularizer(log_f, output.nig_freq).mean()
    nll_z = nig_nll(log_z, output.nig_zeta).mean()
    reg_z = evidential_regularizer(log_z, output.nig_zeta).mean()

    def gated(active, fn):
        if active:
            return fn(), True
        with torch.no_grad():
            return fn(), False

    l_mac, mac_on = gated(phase >= 2, lambda: mac_loss(output.phi, phi_true, weights.mode_weights))
    l_ortho, ortho_on = gated(phase >= 3, lambda: ortho_loss(output.phi))
    l_kl, kl_on = gated(phase >= 3, lambda: kl_loss(output.mu, output.logvar))

    def crps_term():
        c_f = crps_gaussian(log_f, output.nig_freq.gamma, nig_total_std(output.nig_freq))
        c_z = crps_gaussian(log_z, output.nig_zeta.gamma, nig_total_std(output.nig_zeta))
        return 0.5 * (c_f.mean() + c_z.mean())

    crps_active = phase >= 3 and schedule.crps_mult > 0.0
    l_crps, crps_on = gated(crps_active, crps_term)

    evi = weights.lambda_evi * schedule.evi_mult
    terms = {
        "nll_freq": nll_f, "reg_freq": reg_f,
        "nll_zeta": nll_z, "reg_zeta": reg_z,
        "crps": l_crps, "mac": l_mac, "ortho": l_ortho, "kl": l_kl,
    }
    eff = {
        "nll_freq": weights.lambda_freq,
        "reg_freq": weights.lambda_freq * evi,
        "nll_zeta": weights.lambda_zeta,
        "reg_zeta": weights.lambda_zeta * evi,
        "crps": weights.lambda_crps * schedule.crps_mult if crps_on else 0.0,
        "mac": weights.lambda_phi if mac_on else 0.0,
        "ortho": weights.lambda_ortho if ortho_on else 0.0,
        "kl": weights.kl_weight * schedule.kl_mult if kl_on else 0.0,
    }

    total = None
    for name, term in terms.items():
        if not torch.isfinite(term):
            raise FloatingPointError(f"non-finite loss term {name!r}")
        if eff[name] == 0.0:
            continue
        piece = eff[name] * term
        total = piece if total is None else total + piece
    if total is None:
        total = torch.zeros((), dtype=nll_f.dtype)

    breakdown = LossBreakdown(
        terms={k: float(v.detach()) for k, v in terms.items()},
        weights=dict(eff),
        total=float(total.detach()),
    )
    return total, breakdown
