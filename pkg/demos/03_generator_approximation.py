"""Pure-jump approximation of a general triplet.

Any drift and diffusion can be replaced by a jump measure whose generator
converges to the original one: drift b becomes jumps of size b/n at rate n,
and a diffusion direction sigma becomes jumps of size +-sigma/n at rate
n^2/2 each. Compensated large jumps are truncated with a smooth cutoff. The
generator error on a test function decays like 1/n for the drift and like
1/n^2 for the diffusion.
"""

import numpy as np

from volterrajump.generator import TestFunction, generator_convergence_report, report_to_csv
from volterrajump.triplet import Triplet

f = TestFunction.polynomial_bump(1, radius=3, power=6)
levels = [4, 8, 16, 32, 64]
probes = (np.linspace(-2, 2, 9)[:, None], np.linspace(-2.5, 2.5, 11)[:, None])

for label, tr, part in (("drift b(x) = 1 + x", Triplet(1, 1, drift=["1 + x1"]), "drift"),
                        ("diffusion a(x) = 1 + x^2", Triplet(1, 1, diffusion=[["1 + x1^2"]]), "diffusion")):
    rows = [r for r in generator_convergence_report(tr, f, levels, probes) if r.part == part]
    errs = np.array([r.sup_error for r in rows])
    slope = np.polyfit(np.log(levels), np.log(errs), 1)[0]
    shown = ", ".join(f"{e:.2e}" for e in errs)
    print(f"{label}: sup errors [{shown}]; log-log slope {slope:.2f}")

print("\nThe report as CSV (diffusion triplet):")
print(report_to_csv(generator_convergence_report(Triplet(1, 1, diffusion=[["1 + x1^2"]]), f, [4, 16], probes)))
