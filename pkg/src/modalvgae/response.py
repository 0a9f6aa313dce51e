"""Stochastic response simulation and Welch PSD features.

Structural responses are synthesized by modal superposition: every mode is an
independent damped oscillator driven by the modal projection of band-limited
white noise acting on all free DOFs.  Each oscillator is integrated with the
exact zero-order-hold discretization, so the recursion is unconditionally
stable.  Per-node vertical displacement series are then reduced to one-sided
PSDs with Welch's method and pair-averaged down to 512 frequency bins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.signal

from .truss import ModalSolution, TrussModel

CLEAN = "clean"
PSD_LOG_EPS = 1e-12  # floor inside log10(psd + eps) feature transform


class SimulationError(RuntimeError):
    """Response synthesis produced an invalid series."""


@dataclass(frozen=True)
class WelchConfig:
    """Welch estimator settings; n_seg fixes the one-sided bin count."""

    n_seg: int = 2048
    overlap: float = 0.5
    window: str = "hann"

    @property
    def n_onesided(self) -> int:
        return self.n_seg // 2 + 1

    @property
    def step(self) -> int:
        return self.n_seg - int(round(self.overlap * self.n_seg))

    def validate(self) -> None:
        if self.n_seg < 2 or (self.n_seg & (self.n_seg - 1)) != 0:
            raise ValueError("n_seg must be a power of two")
        if not 0.0 <= self.overlap < 1.0:
            raise ValueError("overlap must be in [0, 1)")


@dataclass(frozen=True)
class ExcitationSpec:
    """White-noise excitation at all free DOFs."""

    force_std: float = 1e5  # N
    fs: float = 1024.0  # Hz
    duration: float = 17.0  # s
    seed: int = 0

    @property
    def n_samples(self) -> int:
        return int(round(self.fs * self.duration))

    def validate(self, f_max: float | None = None, welch: WelchConfig | None = None) -> None:
        if self.force_std < 0 or self.fs <= 0 or self.duration <= 0:
            raise ValueError("force_std must be >= 0, fs and duration positive")
        if f_max is not None and self.fs <= 2.0 * f_max:
            raise ValueError(f"fs={self.fs} violates Nyquist for f_max={f_max}")
        if welch is not None and self.n_samples < 4 * welch.n_seg:
            raise ValueError("duration too short: need at least 4 Welch segments of data")


@dataclass
class NodePSDMatrix:
    """Per-node PSD rows on a common frequency axis."""

    values: np.ndarray  # (N, F), (response unit)^2 / Hz
    freqs: np.ndarray  # (F,) Hz

    def validate(self, zero_start: bool = True) -> None:
        if self.values.shape[1] != self.freqs.shape[0]:
            raise ValueError("frequency axis length mismatch")
        if np.any(self.values < 0):
            raise ValueError("negative PSD entry")
        if np.any(np.diff(self.freqs) <= 0):
            raise ValueError("frequency axis must be strictly increasing")
        if zero_start and self.freqs[0] != 0.0:
            raise ValueError("frequency axis must start at 0")


def choose_sampling_rate(f_max: float, factor: float = 8.0) -> float:
    """Sampling rate covering the highest target mode with headroom."""
    if f_max <= 0:
        raise ValueError("f_max must be positive")
    return float(math.ceil(factor * f_max))


def duration_for_segments(welch: WelchConfig, fs: float, n_segments: int = 16) -> float:
    """Duration giving exactly ``n_segments`` overlapped Welch segments."""
    n_samples = welch.n_seg + (n_segments - 1) * welch.step
    return n_samples / fs


def _oscillator_filter(omega: float, zeta: float, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact ZOH difference-equation coefficients for q'' + 2 z w q' + w^2 q = u."""
    a_c = np.array([[0.0, 1.0], [-omega**2, -2.0 * zeta * omega]])
    b_c = np.array([[0.0], [1.0]])
    c = np.array([[1.0, 0.0]])
    d = np.array([[0.0]])
    a_d, b_d, c_d, d_d, _ = scipy.signal.cont2discrete((a_c, b_c, c, d), dt, method="zoh")
    num, den = scipy.signal.ss2tf(a_d, b_d, c_d, d_d)
    return num[0], den


def simulate_response(
    modal: ModalSolution, truss: TrussModel, exc: ExcitationSpec
) -> np.ndarray:
    """Vertical-displacement time series for every node, shape (N, T)."""
    exc.validate(f_max=float(modal.freqs[-1]))
    rng = np.random.default_rng(np.random.SeedSequence([int(exc.seed) & 0xFFFFFFFFFFFFFFFF, 0x657863]))
    n_free = modal.dof_vectors.shape[0]
    n_t = exc.n_samples
    dt = 1.0 / exc.fs

    forces = rng.normal(0.0, exc.force_std, size=(n_t, n_free))
    modal_forces = forces @ modal.dof_vectors  # (T, M), mass-normalized modes

    q = np.empty((modal.n_modes, n_t))
    for m in range(modal.n_modes):
        num, den = _oscillator_filter(float(modal.omegas[m]), float(modal.zetas[m]), dt)
        q[m] = scipy.signal.lfilter(num, den, modal_forces[:, m])

    ydofs = modal.dof_map[:, 1]
    phi_y = np.zeros((truss.n_nodes, modal.n_modes))
    has_y = ydofs >= 0
    phi_y[has_y] = modal.dof_vectors[ydofs[has_y], :]
    series = phi_y @ q  # (N, T)
    if not np.all(np.isfinite(series)):
        raise SimulationError("non-finite response series")
    return series


def welch_psd(series: np.ndarray, cfg: WelchConfig, fs: float) -> tuple[np.ndarray, np.ndarray]:
    """One-sided Welch PSD; works on a single series or stacked rows.

    Returns (freqs, psd) with ``cfg.n_onesided`` bins along the last axis.
    """
    cfg.validate()
    series = np.asarray(series, dtype=np.float64)
    if series.shape[-1] < cfg.n_seg:
        raise ValueError(
            f"series length {series.shape[-1]} shorter than one segment ({cfg.n_seg})"
        )
    freqs, psd = scipy.signal.welch(
        series,
        fs=fs,
        window=cfg.window,
        nperseg=cfg.n_seg,
        noverlap=int(round(cfg.overlap * cfg.n_seg)),
        detrend="constant",
        scaling="density",
        axis=-1,
    )
    return freqs, psd


def node_psd_matrix(series: np.ndarray, cfg: WelchConfig, fs: float) -> NodePSDMatrix:
    """Welch PSD of every node row of an (N, T) response array."""
    freqs, psd = welch_psd(series, cfg, fs)
    out = NodePSDMatrix(values=np.atleast_2d(psd), freqs=freqs)
    out.validate(zero_start=True)
    return out


def downsample_psd(psd: np.ndarray, freqs: np.ndarray | None = None):
    """1025 one-sided bins -> 512: drop the Nyquist bin, average adjacent pairs.

    Preserves constants exactly.  With ``freqs`` given, returns the halved
    frequency axis as well (pairwise midpoints).
    """
    psd = np.asarray(psd)
    n_raw = psd.shape[-1]
    if n_raw < 1025 or n_raw % 2 == 0:
        raise ValueError(f"expected an odd one-sided bin count >= 1025, got {n_raw}")
    trimmed = psd[..., : n_raw - 1]
    pairs = trimmed.reshape(*trimmed.shape[:-1], (n_raw - 1) // 2, 2)
    down = pairs.mean(axis=-1)
    if freqs is None:
        return down
    f = np.asarray(freqs)[: n_raw - 1].reshape(-1, 2).mean(axis=-1)
    return down, f


def add_noise(series: np.ndarray, snr_db, seed: int) -> np.ndarray:
    """Add zero-mean Gaussian noise at the requested SNR (dB).

    ``snr_db`` may be the sentinel ``"clean"`` (or None), returning the input
    unchanged.  Noise power is set from the sample variance of the signal.
    """
    if snr_db is None or (isinstance(snr_db, str) and snr_db.lower() == CLEAN):
        return series
    snr_db = float(snr_db)
    if not math.isfinite(snr_db):
        raise ValueError("snr_db must be finite or 'clean'")
    series = np.asarray(series, dtype=np.float64)
    power = float(np.var(series))
    if power <= 0.0:
        raise ValueError("zero-power signal cannot be scaled to a finite SNR")
    noise_std = math.sqrt(power * 10.0 ** (-snr_db / 10.0))
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, 0x6E6F69]))
    return series + rng.normal(0.0, noise_std, size=series.shape)


def log_psd_features(psd: np.ndarray) -> np.ndarray:
    """log10(psd + eps); PSDs span decades, raw values destabilize normalization."""
    return np.log10(np.asarray(psd) + PSD_LOG_EPS)
