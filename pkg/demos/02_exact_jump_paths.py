"""Exact simulation of jump-driven Volterra equations.

With a bounded jump measure the driver Z is piecewise constant, so between
events the solution X = g0 + K * Z is an explicit function of time and the
next event time follows from inverting the integrated intensity. This
script simulates a Poisson-driven path with a singular kernel, a
self-exciting path whose intensity depends on X, and checks the
stochastic-Fubini identity that links X and Z on every path.
"""

import numpy as np

from volterrajump.engine import fubini_identity_check, simulate_pure_jump
from volterrajump.kernels import Kernel
from volterrajump.rng import SeedSpec
from volterrajump.triplet import FiniteMixture, HawkesBasis

K = Kernel.fractional(0.75)
poisson = FiniteMixture.from_json({"components": [{"intensity": "2", "displacement": ["1"]}]}, 1)

print("Poisson driver (rate 2, unit jumps), kernel t^{-1/4}")
s = simulate_pure_jump(0.0, K, poisson, 3.0, 12, SeedSpec(1))
print(f"  events at {np.round(s.path.times, 3).tolist()}")
print(f"  X on the grid: {np.round(s.X[:, 0], 3).tolist()}")
print(f"  Fubini residual {fubini_identity_check(s):.1e}")

print("\nSelf-exciting driver: intensity 0.5 + 0.5 X")
hawkes = HawkesBasis(["0.5 + 0.5*x1"])
counts, worst = [], 0.0
for i in range(200):
    s = simulate_pure_jump(0.5, K, hawkes, 2.0, 20, SeedSpec(2, i))
    counts.append(s.path.n_events)
    worst = max(worst, fubini_identity_check(s))
print(f"  mean number of events on [0, 2]: {np.mean(counts):.2f} (a Poisson clock at rate 0.75 gives 1.5)")
print(f"  worst Fubini residual over 200 paths: {worst:.1e}")

print("\nThe first event time of the Poisson driver is Exponential(2):")
firsts = [simulate_pure_jump(0.0, K, poisson, 5.0, 5, SeedSpec(3, i)).path.times[0] for i in range(2000)]
print(f"  sample mean {np.mean(firsts):.4f} vs 0.5, sample variance {np.var(firsts):.4f} vs 0.25")
