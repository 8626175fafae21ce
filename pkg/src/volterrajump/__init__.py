"""Simulation and numerical analysis of stochastic Volterra equations with jumps.

The package studies equations of convolution type

    X_t = g0(t) + int_0^t K(t - s) dZ_s,

where the driver ``Z`` is a semimartingale whose differential
characteristics ``(b(X), a(X), nu(X, .))`` depend on the current state.

Modules
-------
kernels
    Kernel families, regularity certificates, resolvents, exponential-sum fits.
triplet
    Characteristic triplets, jump families and growth checks.
generator
    The driver's generator, test functions and level-``n`` pure-jump approximations.
engine
    Exact event-driven and Euler path simulation, identity and martingale checks,
    pathwise uniqueness probes.
hawkes
    Nonlinear Hawkes processes and their square-root scaling limits.
factors
    Markovian factor systems for exponential-sum kernels.
diagnostics
    Norms, Slobodeckij seminorms, Hölder exponents and Wasserstein distances.
cli
    Configuration-driven command line (``volterrajump``).
"""

__version__ = "0.1.0"

from .kernels import Kernel, fit_exponential_sum, resolvent, slobodeckij_certificate
from .rng import GridSpec, SeedSpec
from .triplet import FiniteMixture, HawkesBasis, HypothesisError, Triplet, check_growth

__all__ = [
    "__version__",
    "Kernel",
    "fit_exponential_sum",
    "resolvent",
    "slobodeckij_certificate",
    "GridSpec",
    "SeedSpec",
    "FiniteMixture",
    "HawkesBasis",
    "HypothesisError",
    "Triplet",
    "check_growth",
]
