import math

import numpy as np
import pytest
import scipy.integrate
import scipy.stats
import torch

from modalvgae import uq
from modalvgae.model import ModelConfig, build_model

TINY = ModelConfig(
    n_inputs=10, spectral_widths=(12, 8), graph_width=8, graph_width2=12,
    latent_width=4, fusion_width=12, decoder_width=8, head_widths=(8,),
    n_modes=2, dropout=0.2,
)


def params(gamma=0.0, nu=1.0, alpha=2.0, beta=1.0):
    return uq.NIGParams(
        gamma=np.atleast_1d(np.float64(gamma)),
        nu=np.atleast_1d(np.float64(nu)),
        alpha=np.atleast_1d(np.float64(alpha)),
        beta=np.atleast_1d(np.float64(beta)),
    )


def graph_inputs(n=5, seed=0):
    g = torch.Generator().manual_seed(seed)
    x = torch.randn((n, TINY.n_inputs), generator=g)
    members = torch.tensor([[i, i + 1] for i in range(n - 1)], dtype=torch.long)
    return x, torch.cat([members, members.flip(1)], dim=0)


def test_moments_substitution():
    s = uq.predictive_moments(params(0.0, 1.0, 2.0, 1.0))
    assert s.var_alea[0] == pytest.approx(1.0)
    assert s.var_epis[0] == pytest.approx(1.0)
    assert s.var_total[0] == pytest.approx(2.0)
    assert s.df[0] == pytest.approx(4.0)


def test_moments_epistemic_vanishes_with_evidence():
    s = uq.predictive_moments(params(nu=1e9))
    assert s.var_epis[0] < 2e-9 * s.var_alea[0]


def test_moments_additivity_random_sweep():
    rng = np.random.default_rng(0)
    for _ in range(10000):
        p = params(rng.normal(), rng.uniform(0.01, 100), rng.uniform(1.01, 30), rng.uniform(1e-3, 50))
        s = uq.predictive_moments(p)
        assert abs(s.var_total[0] - (s.var_alea[0] + s.var_epis[0])) <= 1e-12 * s.var_total[0]
        # rearranged identity: total = alea * (1 + 1/nu)
        assert s.var_total[0] == pytest.approx(s.var_alea[0] * (1 + 1 / p.nu[0]), rel=1e-12)
        # Student-t variance consistency
        assert s.t_scale2[0] * s.df[0] / (s.df[0] - 2) == pytest.approx(s.var_total[0], rel=1e-12)


def test_moments_invalid():
    with pytest.raises(ValueError):
        uq.predictive_moments(params(alpha=1.0))
    with pytest.raises(ValueError):
        uq.predictive_moments(params(nu=0.0))


def test_logpdf_symmetry_and_argmax():
    p = params(1.5, 0.8, 2.5, 0.9)
    a = uq.student_t_logpdf(1.5 + 0.7, p)
    b = uq.student_t_logpdf(1.5 - 0.7, p)
    assert a[0] == pytest.approx(b[0], abs=1e-12)
    grid = np.linspace(-3, 6, 901)
    vals = [uq.student_t_logpdf(y, p)[0] for y in grid]
    assert abs(grid[int(np.argmax(vals))] - 1.5) < 0.02


def marginal_pdf_quadrature(y, gamma, nu, alpha, beta):
    """2-D quadrature of the Normal likelihood over the NIG prior.

    Integrates in the precision parametrization tau = 1/sigma^2 (Gamma
    distributed), whose tails behave far better than inverse-gamma's.
    """
    gd = scipy.stats.gamma(alpha, scale=1.0 / beta)
    t_lo, t_hi = gd.ppf(1e-14), gd.ppf(1 - 1e-14)

    def norm_pdf(v, mean, sd):
        return math.exp(-0.5 * ((v - mean) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))

    def inner(tau):
        sd = 1.0 / math.sqrt(tau)
        mu_sd = 1.0 / math.sqrt(nu * tau)
        lo = min(y - 9 * sd, gamma - 9 * mu_sd)
        hi = max(y + 9 * sd, gamma + 9 * mu_sd)
        val, _ = scipy.integrate.quad(
            lambda mu: norm_pdf(y, mu, sd) * norm_pdf(mu, gamma, mu_sd), lo, hi, limit=200
        )
        return val * gd.pdf(tau)

    val, _ = scipy.integrate.quad(
        inner, t_lo, t_hi, limit=400,
        points=[gd.ppf(q) for q in (0.05, 0.25, 0.5, 0.75, 0.95)],
    )
    return val


@pytest.mark.parametrize("seed", range(5))
def test_logpdf_matches_quadrature_marginalization(seed):
    rng = np.random.default_rng(seed)
    for _ in range(5):
        gamma = rng.normal()
        nu_v = rng.uniform(0.3, 4.0)
        alpha = rng.uniform(1.3, 5.0)
        beta = rng.uniform(0.3, 3.0)
        p = params(gamma, nu_v, alpha, beta)
        scale = math.sqrt(float(uq.predictive_moments(p).t_scale2[0]))
        y = gamma + rng.uniform(-3, 3) * scale
        got = float(uq.student_t_logpdf(y, p)[0])
        oracle = math.log(marginal_pdf_quadrature(y, gamma, nu_v, alpha, beta))
        assert got == pytest.approx(oracle, abs=1e-6)


def test_logpdf_integrates_to_one():
    rng = np.random.default_rng(3)
    for _ in range(20):
        p = params(rng.normal(), rng.uniform(0.3, 4), rng.uniform(1.3, 6), rng.uniform(0.2, 3))
        s = uq.predictive_moments(p)
        width = math.sqrt(float(s.t_scale2[0]))
        lo, hi = float(p.gamma[0]) - 400 * width, float(p.gamma[0]) + 400 * width
        val, _ = scipy.integrate.quad(
            lambda y: math.exp(float(uq.student_t_logpdf(y, p)[0])), lo, hi, limit=400
        )
        assert val == pytest.approx(1.0, abs=1e-4)


def test_interval_collapses_at_tiny_level():
    p = params(2.0, 1.0, 2.0, 1.0)
    scale = math.sqrt(float(uq.predictive_moments(p).t_scale2[0]))
    lo, hi = uq.confidence_interval(p, 1e-6)
    assert hi[0] - lo[0] < 1e-5 * scale  # ~2.7e-6 via the median quantile slope
    assert lo[0] == pytest.approx(2.0, abs=1e-5)
    lo2, hi2 = uq.confidence_interval(p, 2.5e-7)
    assert hi2[0] - lo2[0] < 1e-6 * scale


def test_interval_monte_carlo_coverage():
    p = params(1.0, 0.7, 3.0, 1.5)
    s = uq.predictive_moments(p)
    rng = np.random.default_rng(0)
    draws = scipy.stats.t.rvs(df=s.df[0], loc=s.mean[0], scale=math.sqrt(s.t_scale2[0]),
                              size=1_000_000, random_state=rng)
    for level in (0.5, 0.9):
        lo, hi = uq.confidence_interval(p, level)
        cov = np.mean((draws >= lo[0]) & (draws <= hi[0]))
        assert cov == pytest.approx(level, abs=0.005)


def test_interval_monotone_widths():
    p = params(0.0, 1.0, 2.5, 1.0)
    lo5, hi5 = uq.confidence_interval(p, 0.5)
    lo9, hi9 = uq.confidence_interval(p, 0.9)
    assert lo9[0] < lo5[0] < hi5[0] < hi9[0]
    with pytest.raises(ValueError):
        uq.confidence_interval(p, 1.5)


def test_mc_dropout_contracts():
    model = build_model(TINY, seed=0)
    x, edges = graph_inputs()
    (mf, vf), (mz, vz) = uq.mc_dropout_predict(model, x, edges, n_passes=1, seed=0)
    assert np.all(vf == 0.0) and np.all(vz == 0.0)
    (mf1, vf1), _ = uq.mc_dropout_predict(model, x, edges, n_passes=8, seed=1)
    (mf2, vf2), _ = uq.mc_dropout_predict(model, x, edges, n_passes=8, seed=1)
    assert np.array_equal(mf1, mf2) and np.array_equal(vf1, vf2)
    assert np.any(vf1 > 0)
    with pytest.raises(ValueError):
        uq.mc_dropout_predict(model, x, edges, n_passes=0)


def test_mc_dropout_zero_rate_degenerate():
    cfg = ModelConfig(**{**TINY.__dict__, "dropout": 0.0})
    model = build_model(cfg, seed=0)
    x, edges = graph_inputs()
    (_, vf), (_, vz) = uq.mc_dropout_predict(model, x, edges, n_passes=5, seed=0)
    assert np.all(vf == 0.0) and np.all(vz == 0.0)


def test_swag_collect_identities():
    theta = {"a": np.array([1.0, -2.0]), "b": np.array([[3.0]])}
    post = uq.swag_collect([theta, theta, theta])
    assert np.array_equal(post.mean["a"], theta["a"])
    assert np.all(post.var["a"] == 0.0)
    neg = {k: -v for k, v in theta.items()}
    post2 = uq.swag_collect([theta, neg])
    assert np.all(post2.mean["a"] == 0.0)
    assert np.allclose(post2.var["a"], 2.0 * theta["a"] ** 2)
    with pytest.raises(ValueError):
        uq.swag_collect([theta])
    bad = {"a": np.zeros(3), "b": np.zeros((1, 1))}
    with pytest.raises(ValueError):
        uq.swag_collect([theta, bad])


def test_swag_predict_zero_variance_degenerate():
    model = build_model(TINY, seed=0)
    x, edges = graph_inputs()
    state = uq.collect_state(model)
    post = uq.SWAGPosterior(mean=state, var={k: np.zeros_like(v) for k, v in state.items()},
                            n_snapshots=3)
    (mf, vf), (mz, vz) = uq.swag_predict(post, model, x, edges, n_samples=4, seed=0)
    assert np.all(vf == 0.0) and np.all(vz == 0.0)
    with torch.no_grad():
        out = model(x, edges, mode="mean")
    assert np.allclose(mf, out.nig_freq.gamma.numpy(), atol=1e-6)


def test_swag_predict_reproducible_and_scales():
    model = build_model(TINY, seed=0)
    x, edges = graph_inputs()
    state = uq.collect_state(model)
    var = {k: np.full_like(v, 1e-8) for k, v in state.items()}
    post = uq.SWAGPosterior(mean=state, var=var, n_snapshots=5)
    (_, v1a), _ = uq.swag_predict(post, model, x, edges, n_samples=50, seed=3)
    (_, v1b), _ = uq.swag_predict(post, model, x, edges, n_samples=50, seed=3)
    assert np.array_equal(v1a, v1b)
    post4 = uq.SWAGPosterior(mean=state, var={k: 4 * v for k, v in var.items()}, n_snapshots=5)
    (_, v4), _ = uq.swag_predict(post4, model, x, edges, n_samples=200, seed=4)
    (_, v1), _ = uq.swag_predict(post, model, x, edges, n_samples=200, seed=4)
    ratio = v4.mean() / v1.mean()
    assert 2.0 <= ratio <= 8.0
    with pytest.raises(ValueError):
        uq.swag_predict(post, model, x, edges, n_samples=0)


def test_combine_uncertainty():
    s = uq.predictive_moments(params(0.0, 1.0, 3.0, 2.0))
    same = uq.combine_uncertainty(s, 0.0, 0.0)
    assert same.var_total[0] == s.var_total[0]
    assert same.t_scale2[0] == s.t_scale2[0]
    c = uq.combine_uncertainty(s, 0.3, 0.2)
    assert c.var_total[0] == pytest.approx(s.var_total[0] + 0.5, rel=1e-12)
    assert c.var_total[0] == pytest.approx(c.var_alea[0] + c.var_epis[0], rel=1e-12)
    assert c.mean[0] == s.mean[0]
    # t-scale inflated to keep variance consistency
    assert c.t_scale2[0] * c.df[0] / (c.df[0] - 2) == pytest.approx(c.var_total[0], rel=1e-12)
    with pytest.raises(ValueError):
        uq.combine_uncertainty(s, -1.0, 0.0)


def test_uq_config_validation():
    uq.UQConfig(mc_passes=5, swag_samples=3).validate()
    with pytest.raises(ValueError):
        uq.UQConfig(levels=(0.0, 0.5)).validate()
    with pytest.raises(ValueError):
        uq.UQConfig(mc_passes=-1).validate()
