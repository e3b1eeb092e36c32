"""The walk's backward-jump profile and the multi-type chain Z.

Checks the hitting-time identity on a batch of walks, then compares the
joint law of the profile below level n with n steps of the chain.

Run:  python3 demos/branching_structure.py
"""

import numpy as np

from erwlab.branching import backward_profile_vs_z_test, expected_A_M_minus_1
from erwlab.environment import ENV_A
from erwlab.walk import run_to_level, simulate_profiles

rec = run_to_level(ENV_A, 8, seed=3, record_path=True)
print("path to level 8:", rec.path.tolist())
for level in sorted(rec.profile.counts):
    print(f"  level {level}: jumps over it by type = {rec.profile.counts[level]}")

T, _, resid, _ = simulate_profiles(ENV_A, 50, 5_000, seed=4)
print(f"\n5000 walks to level 50: mean T = {T.mean():.1f}, max |identity residual| = {np.abs(resid).max()}")

print("\nE[A(M-1)] exactly:", [str(x) for x in expected_A_M_minus_1(ENV_A)])
for n in (2, 3):
    r = backward_profile_vs_z_test(ENV_A, n, 100_000, seed=5)
    print(f"profile vs chain, n = {n}: chi-square p = {r['p_value']:.3f} on {r['df']} df")
