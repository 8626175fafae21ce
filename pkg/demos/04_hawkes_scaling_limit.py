"""Rescaled Hawkes processes and their square-root Volterra limit.

A linear Hawkes process with intensity Y and kernel K, sped up by n and
scaled down by 1/n, converges to the Volterra equation
X = x0 + K * dZ whose martingale Z has quadratic variation int X ds. The
script checks the scaling hypotheses exactly in rational arithmetic and
measures the Wasserstein-1 distance between the rescaled marginal at t = 1
and a reference sample of the limit. The full-size version (2000 replicates,
levels 10, 50, 200 and a 40000-path reference) is run by the acceptance
suite; this one is smaller and finishes in seconds.
"""

import numpy as np

from volterrajump.hawkes import ScalingSchedule, scaling_limit_experiment
from volterrajump.kernels import Kernel

schedule = ScalingSchedule.power_law([5, 20, 80], [1])
report = schedule.require()
print(f"scaling hypotheses checked exactly: {report.exact}; limit errors {report.limit_errors.ravel().tolist()}")

K = Kernel.exponential_sum([1.0], [50.0])
rep = scaling_limit_experiment(0.05, K, schedule, 1.0, 400, 11, steps=10, reference_replicates=4000,
                               reference_steps=1000, n_boot=50)
for level, w, band in zip(schedule.levels, rep.w1(1.0), rep.band(1.0)):
    print(f"  n={level:3d}  W1={w:.5f} +- {band:.5f}")
print(f"decreasing beyond noise: {rep.decreasing_beyond_noise(1.0, z=2)}")
print("\nCSV report:")
print(rep.to_csv())
