"""The critical two-type family attached to ENV-A's placid law: Perron data,
pgf iteration asymptotics and survival with emigration.

Run:  python3 demos/critical_branching.py
"""

from fractions import Fraction

import numpy as np

from erwlab.emigration import EmigrationConfig, WOffspring, fit_survival_tail, survival_experiment
from erwlab.genfun import gamma_fit, kolmogorov_check
from erwlab.spectral import char_poly_check, perron_pair, sigma_beta_theta

rho = (Fraction(1, 3), Fraction(1, 3))
off = WOffspring(rho)
s = perron_pair(off.mean_matrix())
rep = sigma_beta_theta(off, (1, 1), s.u, s.v)
print(f"lambda = {s.lambda_max:.12f}, u = {s.u.round(6)}, v = {s.v.round(6)}, beta = {rep.beta:.6f}")
print("characteristic roots:", [complex(r) for r in char_poly_check(rho).roots])

k = kolmogorov_check(rho, 100_000)
print(f"n (1 - f^n(0)) at n = 1e5: {np.round(k.scaled, 5)} (limit {k.limit})")
g = gamma_fit(rho, (1, 1), 100_000)
print(f"log gamma_n slope: {g.theta_hat:.5f} (theta = {g.theta_expected})")

# Starting at K = N each type emigrates entirely, so a larger start is used.
cfg = EmigrationConfig((1, 1), (2, 2), off)
tab = survival_experiment(cfg, 200, 1_000_000, seed=6)
fit = fit_survival_tail(tab)
print(f"\nsurvival from K = (2, 2): fitted exponent {fit.exponent:.2f} +- {fit.ci95:.2f} "
      f"on n in [{fit.n0}, {fit.n1}] (asymptotic value {1 + rep.theta:.0f}, approached from below as n grows)")
for n in (5, 10, 20, 40):
    print(f"  n = {n:>3}: mu = {tab.mu_hat[n]:.2e}, E[|W| | alive] = {tab.cond_mean[n]:.2f}")
