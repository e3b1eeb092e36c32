"""The generating-function identity of the stationary chain, evaluated by
Monte Carlo on ENV-A, with its slopes at s = 1.

Run:  python3 demos/functional_equation.py
"""

from erwlab.environment import ENV_A
from erwlab.genfun import functional_equation_residual

rep = functional_equation_residual(ENV_A, [0.8, 0.85, 0.9, 0.95, 1.0], 1_000_000, 1_000_000, seed=7)
print(f"{'s':>5} {'G(s)':>9} {'a(s)':>9} {'b(s)':>10} {'residual':>11} {'SE':>9}")
for e in rep.evaluations:
    print(f"{e.s:5.2f} {e.G_hat:9.5f} {e.a_hat:9.5f} {e.b_hat:10.6f} {e.residual:11.2e} {e.residual_se:9.2e}")
print(f"\nslope of a(1-s) at 0: {rep.a_slope:.4f} +- {rep.a_slope_se:.4f} (expected {-(rep.delta - 1):.1f})")
print(f"slope of b(1-s) at 0: {rep.b_slope_numeric:.5f} +- {rep.b_slope_numeric_se:.5f}, "
      f"closed form with estimated masses {rep.b_slope_closed:.5f}")
