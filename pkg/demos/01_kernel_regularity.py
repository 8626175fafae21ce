"""Kernel regularity: certificates, exponential-sum fits and resolvents.

The well-posedness theory asks two integrals of the kernel to be finite: a
weighted integral of |K(t)|^p near the origin and a fractional Sobolev
double integral. This script certifies them for a few kernels, shows how a
fractional kernel is approximated by sums of exponentials and checks the
resolvent equation numerically.
"""

import numpy as np

from volterrajump.kernels import (Kernel, fit_exponential_sum, resolvent, resolvent_residual,
                                  slobodeckij_certificate)

print("Certificates on [0, 1] with p = 2, eta = 0.2")
for name, K in [("fractional gamma=0.75", Kernel.fractional(0.75)),
                ("dampened fractional gamma=0.75, beta=1", Kernel.dampened_fractional(0.75, 1.0)),
                ("exponential 2 e^{-3t}", Kernel.exponential_sum([2.0], [3.0]))]:
    cert = slobodeckij_certificate(K, 2.0, 0.2, 1.0)
    print(f"  {name:40s} singular={cert.value_singular_integral:.6f} "
          f"slobodeckij={cert.value_slobodeckij_integral:.6f} ({cert.method})")

print("\nA kernel that is too singular for the pair (eta, p) = (0.3, 4):")
cert = slobodeckij_certificate(Kernel.fractional(0.6), 4.0, 0.3, 1.0)
print(f"  finite={cert.finite}: {cert.diagnostic}")

print("\nExponential-sum fits of the dampened fractional kernel (L2 error on [0, 1])")
target = Kernel.dampened_fractional(0.75, 1.0)
for n in (5, 10, 20, 40):
    fit = fit_exponential_sum(target, n, 1.0)
    print(f"  n={n:2d}  error={fit.l2_error:.4f}")

print("\nResolvent of k(t) = 2 e^{-t}: r = k - k * r has the closed form 2 e^{-3t}")
for h in (1 / 50, 1 / 200, 1 / 800):
    table = resolvent(lambda t: 2.0 * np.exp(-t), 1.0, h)
    print(f"  h=1/{round(1 / h):3d}  r(1)={table.values[-1]:.6f}  exact={2 * np.exp(-3.0):.6f}  "
          f"trapezoid residual={resolvent_residual(table):.2e}")
