import numpy as np
import pytest

from modalvgae import response as rp
from modalvgae import truss as ts


def single_mode_solution(f1=20.0, zeta=0.02):
    """Hand-built one-mode system: node 1 has the only free (vertical) DOF."""
    omega = 2 * np.pi * f1
    return ts.ModalSolution(
        freqs=np.array([f1]),
        zetas=np.array([zeta]),
        shapes=np.array([[0.0], [1.0]]),
        omegas=np.array([omega]),
        dof_vectors=np.array([[1.0]]),
        dof_map=np.array([[-1, -1], [-1, 0]]),
    )


def two_node_truss():
    return ts.TrussModel(
        nodes=np.array([[0.0, 0.0], [1.0, 0.0]]),
        elements=np.array([[0, 1]]),
        youngs_modulus=np.array([2e11]),
        area=np.array([1e-3]),
        density=np.array([8000.0]),
        support_mask=np.array([[True, True], [True, False]]),
        rayleigh_a0=1.0,
        rayleigh_a1=1e-4,
    )


def periodogram(x, fs):
    """Single-segment DFT periodogram oracle (one-sided density)."""
    n = len(x)
    spec = np.abs(np.fft.rfft(x)) ** 2 / (fs * n)
    spec[1:-1] *= 2.0
    return np.fft.rfftfreq(n, 1.0 / fs), spec


def test_zero_forcing_zero_response():
    modal = single_mode_solution()
    exc = rp.ExcitationSpec(force_std=0.0, fs=512.0, duration=4.0, seed=0)
    series = rp.simulate_response(modal, two_node_truss(), exc)
    assert np.all(series == 0.0)


def test_single_dof_peak_near_f1():
    modal = single_mode_solution(f1=20.0, zeta=0.02)
    fs = 512.0
    exc = rp.ExcitationSpec(force_std=1.0, fs=fs, duration=64.0, seed=3)
    series = rp.simulate_response(modal, two_node_truss(), exc)
    cfg = rp.WelchConfig(n_seg=1024)
    freqs, psd = rp.welch_psd(series[1], cfg, fs)
    df = freqs[1] - freqs[0]
    assert abs(freqs[np.argmax(psd)] - 20.0) <= df
    # independent oracle: whole-series periodogram peaks in the same bin range
    of, op = periodogram(series[1], fs)
    assert abs(of[np.argmax(op)] - 20.0) <= 2 * (of[1] - of[0])


def test_simulation_deterministic():
    modal = single_mode_solution()
    exc = rp.ExcitationSpec(force_std=1.0, fs=512.0, duration=8.0, seed=11)
    a = rp.simulate_response(modal, two_node_truss(), exc)
    b = rp.simulate_response(modal, two_node_truss(), exc)
    assert np.array_equal(a, b)


def test_nyquist_violation_rejected():
    modal = single_mode_solution(f1=300.0)
    exc = rp.ExcitationSpec(force_std=1.0, fs=512.0, duration=8.0, seed=0)
    with pytest.raises(ValueError, match="Nyquist"):
        rp.simulate_response(modal, two_node_truss(), exc)


def test_welch_zero_signal():
    cfg = rp.WelchConfig(n_seg=256)
    _, psd = rp.welch_psd(np.zeros(2048), cfg, 128.0)
    assert np.all(psd == 0.0)


def test_welch_sine_at_exact_bin():
    fs, n_seg = 1024.0, 1024
    cfg = rp.WelchConfig(n_seg=n_seg)
    k = 100  # exact bin
    t = np.arange(8 * n_seg) / fs
    x = np.sin(2 * np.pi * (k * fs / n_seg) * t)
    freqs, psd = rp.welch_psd(x, cfg, fs)
    assert np.argmax(psd) == k
    of, op = periodogram(x[:n_seg], fs)  # oracle periodogram
    assert np.argmax(op) == k


def test_welch_parseval_white_noise():
    fs, cfg = 256.0, rp.WelchConfig(n_seg=512)
    rng = np.random.default_rng(7)
    sigma2 = 2.5
    for _ in range(20):
        x = rng.normal(0, np.sqrt(sigma2), 16384)
        freqs, psd = rp.welch_psd(x, cfg, fs)
        integral = np.trapezoid(psd, freqs)
        assert integral == pytest.approx(sigma2, rel=0.05)


def test_welch_short_series_rejected():
    with pytest.raises(ValueError, match="shorter"):
        rp.welch_psd(np.zeros(100), rp.WelchConfig(n_seg=256), 64.0)


def test_welch_offset_invariance():
    fs = 512.0
    cfg = rp.WelchConfig(n_seg=512)
    rng = np.random.default_rng(4)
    t = np.arange(40000) / fs
    x = np.sin(2 * np.pi * 50.0 * t) + 0.3 * rng.normal(size=t.size)
    f0, p0 = rp.welch_psd(x[:32768], cfg, fs)
    f1, p1 = rp.welch_psd(x[173 : 173 + 32768], cfg, fs)
    scale = p0.max()
    assert np.abs(p1 - p0).max() / scale < 0.2
    i0 = np.trapezoid(p0, f0)
    assert abs(np.trapezoid(p1, f1) - i0) / i0 < 0.02


def test_downsample_preserves_constants():
    out = rp.downsample_psd(np.full(1025, 3.25))
    assert out.shape == (512,)
    assert np.all(out == 3.25)


def test_downsample_shapes_and_axis():
    psd = np.arange(1025.0)
    freqs = np.linspace(0, 512, 1025)
    down, f = rp.downsample_psd(psd, freqs)
    assert down.shape == (512,) and f.shape == (512,)
    assert f[1] - f[0] == pytest.approx(2 * (freqs[1] - freqs[0]))


def test_downsample_wrong_length_rejected():
    with pytest.raises(ValueError):
        rp.downsample_psd(np.zeros(513))


def test_add_noise_clean_identity():
    x = np.arange(100.0)
    assert rp.add_noise(x, "clean", 0) is x
    assert rp.add_noise(x, None, 0) is x


def test_add_noise_snr0_power_match():
    rng = np.random.default_rng(0)
    x = rng.normal(0, 2.0, 100000)
    noisy = rp.add_noise(x, 0.0, 5)
    noise = noisy - x
    assert np.var(noise) == pytest.approx(np.var(x), rel=0.1)


def test_add_noise_deterministic():
    x = np.sin(np.linspace(0, 30, 5000))
    assert np.array_equal(rp.add_noise(x, 20.0, 9), rp.add_noise(x, 20.0, 9))


def test_add_noise_zero_signal_rejected():
    with pytest.raises(ValueError, match="zero-power"):
        rp.add_noise(np.zeros(64), 10.0, 0)


def test_noise_30db_psd_integral_property():
    fs, cfg = 512.0, rp.WelchConfig(n_seg=512)
    rng = np.random.default_rng(2)
    t = np.arange(32768) / fs
    x = np.sin(2 * np.pi * 40 * t) + 0.2 * rng.normal(size=t.size)
    noisy = rp.add_noise(x, 30.0, 1)
    f0, p0 = rp.welch_psd(x, cfg, fs)
    _, p1 = rp.welch_psd(noisy, cfg, fs)
    sig_power = np.var(x)
    i0, i1 = np.trapezoid(p0, f0), np.trapezoid(p1, f0)
    assert abs(i1 - i0) < 0.002 * sig_power + 0.001 * i0


def test_psd_non_negative_on_modal_response():
    modal = single_mode_solution()
    exc = rp.ExcitationSpec(force_std=10.0, fs=512.0, duration=16.0, seed=1)
    series = rp.simulate_response(modal, two_node_truss(), exc)
    mat = rp.node_psd_matrix(series, rp.WelchConfig(n_seg=1024), 512.0)
    mat.validate(zero_start=True)
    assert np.all(mat.values >= 0)


def test_excitation_validation():
    with pytest.raises(ValueError):
        rp.ExcitationSpec(fs=-1.0).validate()
    spec = rp.ExcitationSpec(fs=512.0, duration=1.0)
    with pytest.raises(ValueError, match="segments"):
        spec.validate(welch=rp.WelchConfig(n_seg=2048))


def test_welch_config_validation():
    with pytest.raises(ValueError):
        rp.WelchConfig(n_seg=1000).validate()
    with pytest.raises(ValueError):
        rp.WelchConfig(overlap=1.0).validate()
