"""Regimes and speed: the walk's direct speed against the stationary-chain
formula, for a ballistic and a zero-speed transient environment.

Run:  python3 demos/speed_regimes.py
"""

from erwlab.branching import estimate_stationary
from erwlab.environment import ENV_A, ENV_B, ENV_C, classify_regime, compute_delta
from erwlab.walk import estimate_speed_direct

for env in (ENV_A, ENV_B, ENV_C):
    d = compute_delta(env)
    print(f"{env.name}: delta = {d} -> {classify_regime(d).label}")

print("\nDirect estimates of X_n / n (100 walks each):")
for env in (ENV_A, ENV_B):
    est = estimate_speed_direct(env, 200_000, 100, seed=1, checkpoints=[2_000, 20_000])
    for n, m, se in zip(est.checkpoints, est.mean, est.se):
        print(f"  {env.name}  n = {n:>7}: {m:.4f} +- {se:.4f}")

st = estimate_stationary(ENV_A, 2_000_000, seed=2)
print(f"\nENV-A stationary E[Z] = {[round(x, 4) for x in st.mean_z]}")
print(f"ENV-A speed from the chain: {st.speed_formula_value:.4f} +- {st.speed_formula_se:.4f}")
print("ENV-B has E[Z] = infinity; its direct estimate drifts down slowly with n.")
