"""The evidential uncertainty toolkit on its own, no training required.

A Normal-Inverse-Gamma head output (gamma, nu, alpha, beta) defines a
Student-t predictive distribution whose variance splits into an aleatoric
part beta/(alpha-1) and an epistemic part beta/(nu (alpha-1)).  This demo
evaluates the closed forms, checks them against brute-force Monte Carlo, and
shows how sampling-based variance (MC dropout / SWAG style) folds into the
epistemic component.
"""

import numpy as np
import scipy.stats

from modalvgae.uq import (
    NIGParams,
    combine_uncertainty,
    confidence_interval,
    predictive_moments,
    student_t_logpdf,
)

p = NIGParams(
    gamma=np.array([3.2]),   # predicted mean (log-frequency, say)
    nu=np.array([1.5]),      # evidence: pseudo-observation count
    alpha=np.array([2.5]),   # variance shape
    beta=np.array([0.08]),   # variance scale
)
s = predictive_moments(p)
print(f"mean {s.mean[0]:.3f}")
print(f"aleatoric variance  {s.var_alea[0]:.4f}")
print(f"epistemic variance  {s.var_epis[0]:.4f}")
print(f"total               {s.var_total[0]:.4f} "
      f"(epistemic fraction {s.var_epis[0] / s.var_total[0]:.2f})")

# Monte Carlo check of the closed form: sigma^2 ~ InvGamma, mu ~ N(gamma, sigma^2/nu)
rng = np.random.default_rng(0)
sig2 = scipy.stats.invgamma(p.alpha[0], scale=p.beta[0]).rvs(200_000, random_state=rng)
mu = rng.normal(p.gamma[0], np.sqrt(sig2 / p.nu[0]))
y = rng.normal(mu, np.sqrt(sig2))
print(f"\nMonte Carlo total variance: {y.var():.4f} (closed form {s.var_total[0]:.4f})")

# the marginal is Student-t; its density should match a histogram
grid = np.linspace(2.0, 4.4, 5)
print("log-density on a grid:", np.round([float(student_t_logpdf(g, p)[0]) for g in grid], 3))

for level in (0.5, 0.9):
    lo, hi = confidence_interval(p, level)
    hit = np.mean((y >= lo[0]) & (y <= hi[0]))
    print(f"{level:.0%} interval [{lo[0]:.3f}, {hi[0]:.3f}] covers {hit:.1%} of draws")

# fold in sampling-based model uncertainty (as MC dropout / SWAG would)
combined = combine_uncertainty(s, var_mc=0.01, var_swag=0.005)
print(f"\nafter combining: total {combined.var_total[0]:.4f}, "
      f"epistemic fraction {combined.var_epis[0] / combined.var_total[0]:.2f}")
lo, hi = confidence_interval(p, 0.9)
print(f"evidential-only 90% width: {hi[0] - lo[0]:.3f}")
from modalvgae.uq import summary_interval

lo, hi = summary_interval(combined, 0.9)
print(f"combined 90% width:        {hi[0] - lo[0]:.3f} (wider, as it must be)")
