"""Generalized nonlinear Hawkes processes and their diffusive rescaling.

A Hawkes process here is a ``k``-variate counting process ``N`` whose
intensity vector is ``Lambda(Y)``, where

    Y_t = g0(t) + int_0^t K(t - s) b(Y_s) ds + int_[0,t) K(t - s) dN_s.

With ``b = -Lambda`` the compensated form ``Y = g0 + K * M`` holds with
``M = N - int Lambda(Y) ds``. Under the rescaling
``X^n_t = eps^n Y^n_{nt}``, ``Z^n_t = eps^n M^n_{nt}``, level-``n`` processes
built from ``g0^n = eps^{-1} g0(./n)`` and ``K^n = eps^{-1} K(./n) eps`` are
tight and accumulate at solutions of ``X = g0 + K * Z`` with
``Z = int sqrt(diag(Lambda_bar(X))) dW`` whenever
``n eps_i^2 Lambda_i(eps^{-1} x)`` is bounded by ``c_i (1 + |x|^2)`` and
converges to ``Lambda_bar_i(x)``.

Two simulators are provided. :func:`simulate_hawkes` is general and goes
through :func:`volterrajump.engine.simulate_pure_jump`.
:func:`simulate_hawkes_batch` handles the one-dimensional affine intensity
with an exponential kernel, where the state between events solves a linear
ODE in closed form, and runs many replicates at once; it is what makes the
scaling experiment affordable at large ``n``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Mapping, Sequence

import numpy as np

from .diagnostics import lp_norm, wasserstein1
from .engine import (EulerCoefficients, InitialCurve, SolutionSample, _Buffered, as_curve,
                     simulate_euler_batch, simulate_pure_jump)
from .expr import VectorExpr, as_vector
from .kernels import Kernel, _phi1, kernel_lp_distance, slobodeckij_certificate
from .quadrature import integrate_graded
from .rng import STREAM_CLOCK, GridSpec, SeedSpec
from .triplet import HawkesBasis, HypothesisError, default_probes

__all__ = [
    "HawkesSpec",
    "HawkesValidation",
    "HawkesSample",
    "HawkesBatch",
    "RescaledSample",
    "ScalingSchedule",
    "ScheduleReport",
    "ScalingRow",
    "ScalingReport",
    "simulate_hawkes",
    "simulate_hawkes_batch",
    "batch_eligible",
    "compensator",
    "rescale",
    "level_inputs",
    "square_root_reference",
    "scaling_limit_experiment",
]

DRIFT_MODES = ("zero", "minus_intensity")


# ----------------------------------------------------------------------
# model definition
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class HawkesValidation:
    """Outcome of :meth:`HawkesSpec.validate` on a probe set."""

    min_intensity: float
    growth_ratio: float
    growth_constant: float | None
    passed: bool
    failures: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {"min_intensity": self.min_intensity, "growth_ratio": self.growth_ratio,
                "growth_constant": self.growth_constant, "passed": self.passed,
                "failures": list(self.failures)}


@dataclass(frozen=True, eq=False)
class HawkesSpec:
    """Inputs of a generalized nonlinear Hawkes process.

    Parameters
    ----------
    kernel : Kernel
        ``d x k`` kernel.
    intensity : VectorExpr or sequence of str
        ``Lambda: R^d -> R^k``, one expression per counting component.
    g0 : initial curve
        Anything :func:`volterrajump.engine.as_curve` accepts.
    drift : {"zero", "minus_intensity"} or VectorExpr
        ``b``. ``"minus_intensity"`` is ``b = -Lambda``, the compensated form.
    growth_constant : float, optional
        Declared ``c`` in ``|b(y)| + |Lambda(y)| <= c (1 + |y|)``.
    """

    kernel: Kernel
    intensity: VectorExpr
    g0: Any = None
    drift: Any = "zero"
    growth_constant: float | None = None

    def __post_init__(self):
        d, k = self.kernel.dims
        object.__setattr__(self, "intensity", as_vector(self.intensity, k))
        if self.intensity.state_dim > d:
            raise ValueError(f"intensity references x{self.intensity.state_dim} but the state has dimension {d}")
        if isinstance(self.drift, str) and self.drift in DRIFT_MODES:
            pass
        else:
            vec = as_vector(self.drift, k)
            if vec.state_dim > d:
                raise ValueError("drift references a state component beyond d")
            object.__setattr__(self, "drift", vec)

    @property
    def d(self) -> int:
        return self.kernel.dims[0]

    @property
    def k(self) -> int:
        return self.kernel.dims[1]

    @property
    def curve(self) -> InitialCurve:
        return as_curve(self.g0, self.d)

    def lam(self, y) -> np.ndarray:
        """Raw intensity ``Lambda(y)`` (before clamping at zero)."""
        return np.asarray(self.intensity(np.asarray(y, dtype=float)), dtype=float)

    def b(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if isinstance(self.drift, str):
            if self.drift == "zero":
                return np.zeros(y.shape[:-1] + (self.k,))
            return -self.lam(y)
        return np.asarray(self.drift(y), dtype=float)

    @property
    def has_drift(self) -> bool:
        return not (isinstance(self.drift, str) and self.drift == "zero")

    def family(self) -> HawkesBasis:
        return HawkesBasis(self.intensity, self.k)

    def validate(self, probes=None) -> HawkesValidation:
        """Check intensity sign and linear growth on probes.

        The default probes are folded into the nonnegative orthant: with a
        nonnegative initial curve and kernel the state never leaves it, and
        intensities such as ``Lambda(y) = y`` are only meant to be used
        there.
        """
        x = np.abs(default_probes(self.d)) if probes is None else np.asarray(probes, dtype=float)
        lam = self.lam(x)
        lhs = np.linalg.norm(self.b(x), axis=-1) + np.linalg.norm(lam, axis=-1)
        ratio = lhs / (1.0 + np.linalg.norm(x, axis=-1))
        failures = []
        mn = float(np.min(lam))
        if mn < 0:
            failures.append(f"intensity is negative ({mn:.6g}) at a probe")
        gmax = float(np.max(ratio))
        if self.growth_constant is not None and gmax > self.growth_constant * (1 + 1e-12):
            failures.append(f"|b| + |Lambda| reaches {gmax:.6g} (1 + |y|), above the declared "
                            f"constant {self.growth_constant}")
        return HawkesValidation(mn, gmax, self.growth_constant, not failures, tuple(failures))

    def to_json(self) -> dict:
        return {"kernel": self.kernel.to_json(), "intensity": self.intensity.to_json(),
                "g0": self.curve.to_json(),
                "drift": self.drift if isinstance(self.drift, str) else self.drift.to_json(),
                "growth_constant": self.growth_constant}

    @classmethod
    def from_json(cls, obj: Mapping | str) -> "HawkesSpec":
        if isinstance(obj, str):
            obj = json.loads(obj)
        try:
            kernel = Kernel.from_json(obj["kernel"])
            intensity = obj["intensity"]
        except KeyError as exc:
            raise ValueError(f"Hawkes model JSON is missing field {exc.args[0]!r}") from None
        return cls(kernel, intensity, obj.get("g0"), obj.get("drift", "zero"), obj.get("growth_constant"))


# ----------------------------------------------------------------------
# general simulator
# ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class HawkesSample:
    """One Hawkes path: the state ``Y`` (as a solution sample) plus counts.

    ``N`` and ``compensator`` are sampled on the same grid as ``Y``;
    ``M = N - compensator``.
    """

    solution: SolutionSample
    N: np.ndarray
    compensator: np.ndarray
    spec: HawkesSpec

    @property
    def times(self) -> np.ndarray:
        return self.solution.times

    @property
    def Y(self) -> np.ndarray:
        return self.solution.X

    @property
    def M(self) -> np.ndarray:
        return self.N - self.compensator

    @property
    def event_times(self) -> np.ndarray:
        return self.solution.path.times

    @property
    def event_marks(self) -> np.ndarray:
        """Index of the counting component that jumped at each event."""
        return np.argmax(self.solution.path.jumps, axis=1)


def simulate_hawkes(spec: HawkesSpec, T: float, grid: GridSpec | int, seed: SeedSpec, **kw) -> HawkesSample:
    """Simulate ``(Y, N, M)`` on ``[0, T]``.

    Events are generated exactly by inverting the integrated intensity
    ``int Lambda(Y)^+ ds``; negative intensities are clamped at zero and the
    ``intensity_clamped`` flag records it. The drift convolution
    ``int K(t - s) b(Y_s) ds`` uses ``b`` frozen at the left end of each grid
    cell. Keyword arguments go to :func:`volterrajump.engine.simulate_pure_jump`
    (``max_events``, ``clock_tol``, ...).
    """
    grid = grid if isinstance(grid, GridSpec) else GridSpec(T, int(grid))
    drift = spec.b if spec.has_drift else None
    sol = simulate_pure_jump(spec.curve, spec.kernel, spec.family(), T, grid, seed, drift=drift,
                             scheme="hawkes", **kw)
    times = sol.times
    path = sol.path
    N = np.zeros((len(times), spec.k))
    if path.n_events:
        marks = np.argmax(path.jumps, axis=1)
        for i in range(spec.k):
            N[:, i] = np.searchsorted(path.times[marks == i], times, side="right")
    comp = compensator(sol, spec, times)
    if sol.exploded:
        bad = times > sol.flags["explosion_time"]
        N[bad] = np.nan
        comp[bad] = np.nan
    return HawkesSample(sol, N, comp, spec)


def compensator(sol: SolutionSample, spec: HawkesSpec, times, *, levels: int = 16) -> np.ndarray:
    """``int_0^t Lambda(Y_s)^+ ds`` at the requested (sorted) times.

    The integral is split at event times; with a kernel singular at zero
    each piece starting at an event uses a graded rule towards it.
    """
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0):
        raise ValueError("times must be sorted")
    ev = sol.path.times if sol.path is not None else np.empty(0)
    lam = spec.intensity
    if lam.is_constant:
        rate = np.maximum(np.asarray(lam(np.zeros(spec.d)), dtype=float), 0.0)
        return times[:, None] * rate[None, :]
    singular = spec.kernel.singular_at_zero

    def f(s):
        return np.maximum(spec.lam(sol.state(s)), 0.0)

    cuts = np.union1d(ev[ev < times[-1]], times)
    cuts = cuts[cuts >= 0.0]
    ev_set = set(ev.tolist())
    acc = np.zeros(spec.k)
    out = np.zeros((len(times), spec.k))
    prev = 0.0
    j = 0
    for c in cuts:
        if c > prev:
            left = singular and prev in ev_set
            val, _ = _integrate_vec(f, prev, float(c), left, levels, spec.k)
            acc = acc + val
            prev = float(c)
        while j < len(times) and times[j] <= c:
            out[j] = acc
            j += 1
    return out


def _integrate_vec(f, a, b, left, levels, k):
    vals = np.zeros(k)
    for i in range(k):
        v, e = integrate_graded(lambda s: f(s)[..., i], a, b, left=left, levels=levels if left else 1)
        vals[i] = v
    return vals, None


# ----------------------------------------------------------------------
# batch simulator for affine intensity and exponential kernel
# ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class HawkesBatch:
    """Replicates of a one-dimensional Hawkes path on a common grid.

    Arrays have shape ``(R, M + 1)``.
    """

    times: np.ndarray
    Y: np.ndarray
    N: np.ndarray
    compensator: np.ndarray
    seeds: tuple
    flags: Mapping[str, Any] = field(default_factory=dict)

    @property
    def M(self) -> np.ndarray:
        return self.N - self.compensator


def _affine_coefficients(expr, probes=(-3.0, -1.0, 0.0, 0.5, 2.0, 7.0)) -> tuple[float, float] | None:
    x = np.asarray(probes, dtype=float)
    v = np.asarray(expr(x[:, None]), dtype=float).reshape(-1)
    a1 = (v[-1] - v[2]) / x[-1]
    a0 = v[2]
    if np.allclose(v, a0 + a1 * x, rtol=1e-12, atol=1e-12):
        return float(a0), float(a1)
    return None


def batch_eligible(spec: HawkesSpec) -> str | None:
    """``None`` when :func:`simulate_hawkes_batch` applies, else the reason it does not."""
    if spec.kernel.dims != (1, 1):
        return "batch simulation needs d = k = 1"
    if spec.kernel.family == "constant":
        alpha, beta = float(spec.kernel.params["matrix"][0, 0]), 0.0
    elif spec.kernel.is_exponential_sum and len(spec.kernel.params["rates"]) == 1:
        alpha = float(spec.kernel.params["coeffs"][0, 0, 0])
        beta = float(spec.kernel.params["rates"][0])
    else:
        return "batch simulation needs a single exponential (or constant) kernel"
    if spec.curve.constant is None:
        return "batch simulation needs a constant initial curve"
    aff = _affine_coefficients(spec.intensity.items[0])
    if aff is None:
        return "batch simulation needs an affine intensity"
    if not isinstance(spec.drift, str):
        return "batch simulation supports drift 'zero' or 'minus_intensity' only"
    a0, a1 = aff
    y0 = float(spec.curve.constant[0])
    if alpha < 0 or a1 < 0 or a0 + a1 * y0 < 0 or beta < 0:
        return "batch simulation needs alpha, beta, slope >= 0 and Lambda(g0) >= 0"
    return None


def _phi2(z):
    """``(z - 1 + exp(-z)) / z^2``, so that ``int_0^tau s phi1(k s) ds = tau^2 phi2(k tau)``."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = np.abs(z) < 1e-3
    zs = z[small]
    out[small] = 0.5 - zs / 6.0 + zs ** 2 / 24.0
    zl = z[~small]
    out[~small] = (zl + np.expm1(-zl)) / zl ** 2
    return out


class _BatchClock:
    """Per-replicate unit exponentials, drawn in the same blocks as the
    single-path engine so both simulators consume identical sequences."""

    def __init__(self, seeds):
        self.streams = [_Buffered(s.generator(STREAM_CLOCK), "exp") for s in seeds]

    def draw(self, idx) -> np.ndarray:
        return np.array([self.streams[i].next() for i in idx])


def simulate_hawkes_batch(spec: HawkesSpec, T: float, grid: GridSpec | int, seeds: Sequence[SeedSpec], *,
                          max_events: int = 10_000_000, newton_tol: float = 1e-13) -> HawkesBatch:
    """Vectorized exact simulation for ``d = k = 1``, ``Lambda(y) = a0 + a1 y``
    and ``K(t) = alpha exp(-beta t)``.

    Between events ``dY/ds = -kappa Y + r`` with ``kappa = beta`` and
    ``r = beta y0`` when ``b = 0``, or ``kappa = beta + alpha a1`` and
    ``r = beta y0 - alpha a0`` when ``b = -Lambda``. The integrated intensity
    over a gap of length ``tau`` starting from ``Y = u`` is
    ``a0 tau + a1 (u tau phi1(kappa tau) + r tau^2 phi2(kappa tau))``,
    inverted by safeguarded Newton iteration. Each event raises ``Y`` by
    ``alpha``. Under the eligibility conditions the intensity stays
    nonnegative, so no clamping is needed.
    """
    reason = batch_eligible(spec)
    if reason is not None:
        raise ValueError(reason)
    grid = grid if isinstance(grid, GridSpec) else GridSpec(T, int(grid))
    if not math.isclose(grid.T, T, rel_tol=1e-12):
        raise ValueError("grid horizon does not match T")
    if spec.kernel.family == "constant":
        alpha, beta = float(spec.kernel.params["matrix"][0, 0]), 0.0
    else:
        alpha = float(spec.kernel.params["coeffs"][0, 0, 0])
        beta = float(spec.kernel.params["rates"][0])
    a0, a1 = _affine_coefficients(spec.intensity.items[0])
    y0 = float(spec.curve.constant[0])
    if spec.drift == "zero":
        kappa, r = beta, beta * y0
    else:
        kappa, r = beta + alpha * a1, beta * y0 - alpha * a0

    R = len(seeds)
    times = grid.times
    Mg = grid.M
    Y = np.empty((R, Mg + 1))
    N = np.zeros((R, Mg + 1))
    C = np.zeros((R, Mg + 1))
    Y[:, 0] = y0
    clock = _BatchClock(seeds)
    E = clock.draw(range(R))
    y = np.full(R, y0)
    n = np.zeros(R)
    comp = np.zeros(R)
    exploded = np.zeros(R, dtype=bool)

    def advance(u, tau):
        return u * np.exp(-kappa * tau) + r * tau * _phi1(kappa * tau)

    def Phi(u, tau):
        return a0 * tau + a1 * (u * tau * _phi1(kappa * tau) + r * tau ** 2 * _phi2(kappa * tau))

    for m in range(Mg):
        L = np.full(R, grid.h)  # remaining length of the cell for each replicate
        active = ~exploded
        while np.any(active):
            idx = np.nonzero(active)[0]
            mass = Phi(y[idx], L[idx])
            quiet = mass < E[idx]
            qi = idx[quiet]
            E[qi] -= mass[quiet]
            comp[qi] += mass[quiet]
            y[qi] = advance(y[qi], L[qi])
            active[qi] = False
            ei = idx[~quiet]
            if len(ei) == 0:
                break
            tau = _invert(Phi, lambda u, s: a0 + a1 * advance(u, s), y[ei], E[ei], L[ei], newton_tol)
            comp[ei] += E[ei]
            y[ei] = advance(y[ei], tau) + alpha
            n[ei] += 1
            L[ei] -= tau
            E[ei] = clock.draw(ei)
            over = n[ei] >= max_events
            if np.any(over):
                exploded[ei[over]] = True
                active[ei[over]] = False
        Y[:, m + 1] = y
        N[:, m + 1] = n
        C[:, m + 1] = comp
        if np.any(exploded):
            Y[exploded, m + 1] = np.nan
    flags = {"exploded": bool(np.any(exploded)), "n_exploded": int(exploded.sum()),
             "mean_events": float(np.mean(n))}
    return HawkesBatch(times, Y, N, C, tuple(seeds), flags)


def _invert(Phi, dPhi, u, target, hi, tol, iters: int = 100) -> np.ndarray:
    """Solve ``Phi(u, tau) = target`` for ``tau`` in ``[0, hi]`` (``Phi`` increasing)."""
    lo = np.zeros_like(hi)
    hi = hi.copy()
    rate0 = dPhi(u, lo)
    tau = np.where(rate0 > 0, np.minimum(target / np.maximum(rate0, 1e-300), hi), 0.5 * hi)
    for _ in range(iters):
        g = Phi(u, tau) - target
        lo = np.where(g < 0, tau, lo)
        hi = np.where(g > 0, tau, hi)
        der = dPhi(u, tau)
        step = np.where(der > 0, g / np.maximum(der, 1e-300), np.inf)
        new = tau - step
        bad = ~np.isfinite(new) | (new <= lo) | (new >= hi)
        new = np.where(bad, 0.5 * (lo + hi), new)
        done = np.abs(new - tau) <= tol * np.maximum(1.0, tau)
        tau = new
        if np.all(done):
            break
    return tau


# ----------------------------------------------------------------------
# rescaling
# ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RescaledSample:
    """``X^n_t = eps Y_{nt}`` and ``Z^n_t = eps M_{nt}`` on a target grid.

    For single paths ``event_times`` holds ``T_j / n``; batch results carry
    no event list.
    """

    times: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    n: float
    eps: np.ndarray
    event_times: np.ndarray | None = None


def _eps_diag(eps, k) -> np.ndarray:
    e = np.asarray([float(v) for v in np.atleast_1d(eps)], dtype=float)
    if e.size == 1:
        e = np.full(k, e[0])
    if e.shape != (k,) or np.any(e <= 0):
        raise ValueError(f"rescaling needs {k} positive diagonal entries")
    return e


def rescale(sample: HawkesSample | HawkesBatch, n: float, eps, T_target: float,
            grid: GridSpec | int | None = None) -> RescaledSample:
    """Time-dilate by ``n`` and scale amplitudes by the diagonal ``eps``.

    For a :class:`HawkesSample` the state is re-evaluated exactly at
    ``n t_j`` and the compensator integrated up to those times, so nothing is
    interpolated. A :class:`HawkesBatch` must already live on the grid
    ``n t_j`` (same number of steps, horizon ``n T_target``).

    Raises
    ------
    ValueError
        If the sample horizon is shorter than ``n T_target``.
    """
    horizon = float(sample.times[-1])
    need = float(n) * float(T_target)
    if horizon < need * (1 - 1e-12):
        raise ValueError(f"sample horizon {horizon:.6g} is shorter than n * T_target = {need:.6g}")
    if isinstance(sample, HawkesBatch):
        e = _eps_diag(eps, 1)[0]
        M = len(sample.times) - 1
        if grid is not None and (grid if isinstance(grid, int) else grid.M) != M:
            raise ValueError("a batch can only be rescaled onto its own grid size")
        if not math.isclose(horizon, need, rel_tol=1e-12):
            raise ValueError("a batch must be simulated on [0, n T_target]")
        return RescaledSample(sample.times / n, e * sample.Y, e * sample.M, float(n), np.array([e]))
    spec = sample.spec
    e = _eps_diag(eps, spec.k)
    grid = GridSpec(T_target, len(sample.times) - 1 if grid is None else (grid if isinstance(grid, int) else grid.M)) \
        if not isinstance(grid, GridSpec) else grid
    t = grid.times
    s = float(n) * t
    s[-1] = min(s[-1], horizon)
    sol = sample.solution
    Y = sol.state(s)
    ev = sol.path.times
    marks = np.argmax(sol.path.jumps, axis=1) if len(ev) else np.empty(0, dtype=int)
    N = np.zeros((len(s), spec.k))
    for i in range(spec.k):
        N[:, i] = np.searchsorted(ev[marks == i], s, side="right")
    comp = compensator(sol, spec, s)
    d_eps = e if spec.d == spec.k else _eps_diag(eps, spec.d)
    return RescaledSample(t, Y * d_eps, (N - comp) * e, float(n), e, ev / n)


# ----------------------------------------------------------------------
# scaling schedule
# ----------------------------------------------------------------------


def _to_fraction(v):
    if isinstance(v, Fraction):
        return v
    if isinstance(v, int):
        return Fraction(v)
    if isinstance(v, str):
        return Fraction(v)
    return Fraction(float(v))


@dataclass(frozen=True)
class ScheduleReport:
    """Per level: worst scaling-growth ratio and limit error on the probes."""

    levels: tuple
    growth_ratios: np.ndarray  # (L, k): max over probes of lhs / (1 + |x|^2)
    limit_errors: np.ndarray   # (L, k): sup over probes of |lhs - Lambda_bar|
    growth_constants: np.ndarray
    exact: bool
    failures: tuple[str, ...]

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_json(self) -> dict:
        return {"levels": list(self.levels), "growth_ratios": self.growth_ratios.tolist(),
                "limit_errors": self.limit_errors.tolist(), "growth_constants": self.growth_constants.tolist(),
                "exact": self.exact, "failures": list(self.failures)}


@dataclass(frozen=True, eq=False)
class ScalingSchedule:
    """Levels ``n``, diagonal rescalings ``eps^n`` and the limit intensity.

    ``eps`` entries may be :class:`fractions.Fraction` (or strings such as
    ``"1/50"``); then, with rational probes and a polynomial intensity, the
    scaled intensity ``n eps_i^2 Lambda_i(x / eps)`` is evaluated exactly.
    """

    levels: tuple
    eps: tuple
    intensity: VectorExpr
    limit_intensity: VectorExpr
    growth_constants: np.ndarray

    def __post_init__(self):
        k = len(self.intensity) if isinstance(self.intensity, VectorExpr) else len(list(self.intensity))
        object.__setattr__(self, "intensity", as_vector(self.intensity, k))
        object.__setattr__(self, "limit_intensity", as_vector(self.limit_intensity, k))
        if len(self.levels) != len(self.eps):
            raise ValueError("one rescaling per level is required")
        eps = []
        for e in self.eps:
            row = [_to_fraction(v) if not isinstance(v, float) else v for v in np.atleast_1d(np.asarray(e, dtype=object))]
            if len(row) == 1:
                row = row * k
            if len(row) != k or any(v <= 0 for v in row):
                raise ValueError(f"each rescaling needs {k} positive diagonal entries")
            eps.append(tuple(row))
        object.__setattr__(self, "eps", tuple(eps))
        object.__setattr__(self, "levels", tuple(int(n) for n in self.levels))
        c = np.broadcast_to(np.asarray(self.growth_constants, dtype=float), (k,)).copy()
        object.__setattr__(self, "growth_constants", c)

    @property
    def k(self) -> int:
        return len(self.intensity)

    @classmethod
    def power_law(cls, levels, exponents, limit_rates=None, growth_constants=None) -> "ScalingSchedule":
        """Intensity ``Lambda_i(y) = y_i^beta_i`` with ``n eps_i^(2 - beta_i) = nu_i``.

        The limit is ``Lambda_bar_i(x) = nu_i x_i^beta_i`` (exactly, at every
        level). ``beta_i = 1`` with ``nu_i = 1`` gives ``eps = 1/n``.
        """
        betas = [_to_fraction(b) for b in np.atleast_1d(exponents)]
        k = len(betas)
        nus = [Fraction(1)] * k if limit_rates is None else [_to_fraction(v) for v in np.atleast_1d(limit_rates)]
        inten = [f"x{i + 1}" if b == 1 else f"pos(x{i + 1})^{float(b)!r}" for i, b in enumerate(betas)]
        limit = [(f"{nus[i]}*" if nus[i] != 1 else "") + inten[i] for i in range(k)]
        eps = []
        for n in levels:
            row = []
            for b, nu in zip(betas, nus):
                if b == 1:
                    row.append(nu / n)
                else:
                    row.append(float(nu / n) ** (1.0 / float(2 - b)))
            eps.append(tuple(row))
        if growth_constants is None:
            # y^beta <= 1 + y^2 for 0 < beta < 2 and y >= 0
            growth_constants = [float(nu) for nu in nus]
        return cls(tuple(levels), tuple(eps), VectorExpr(inten), VectorExpr(limit), np.asarray(growth_constants))

    def scaled_intensity(self, level: int, x, *, exact: bool = False):
        """``n eps_i^2 Lambda_i(eps^{-1} x)`` at one level (index into ``levels``)."""
        n = self.levels[level]
        eps = self.eps[level]
        if exact:
            y = [xi / e for xi, e in zip(x, eps)] + list(x[len(eps):])
            lam = self.intensity(y, exact=True)
            return [n * e * e * li for e, li in zip(eps, lam)]
        x = np.asarray(x, dtype=float)
        e = np.asarray([float(v) for v in eps])
        y = x.copy()
        y[..., : len(e)] = x[..., : len(e)] / e
        return n * e ** 2 * np.asarray(self.intensity(y), dtype=float)

    def default_probes(self, d: int, radius: int = 4, per_axis: int = 9):
        """Rational lattice on ``[0, radius]^d`` (at most 729 points)."""
        per_axis = min(per_axis, max(2, int(round(729 ** (1.0 / d)))))
        axis = [Fraction(radius * i, per_axis - 1) for i in range(per_axis)]
        pts = [[]]
        for _ in range(d):
            pts = [p + [a] for p in pts for a in axis]
        return pts

    def check(self, probes=None, d: int | None = None) -> ScheduleReport:
        """Evaluate the scaling-growth bound and the limit error at each level.

        Exact rational arithmetic is used when every rescaling entry and
        every probe coordinate is rational and evaluation stays rational;
        otherwise floats.
        """
        d = self.k if d is None else d
        pts = self.default_probes(d) if probes is None else [list(p) for p in probes]
        exact = all(isinstance(e, Fraction) for row in self.eps for e in row)
        if exact:
            pts = [[_to_fraction(v) for v in p] for p in pts]
        L = len(self.levels)
        growth = np.zeros((L, self.k))
        errs = np.zeros((L, self.k))
        for li in range(L):
            if exact:
                try:
                    g, er = self._exact_level(li, pts)
                except TypeError:
                    exact = False
            if not exact:
                X = np.asarray([[float(v) for v in p] for p in pts])
                val = self.scaled_intensity(li, X)
                lim = np.asarray(self.limit_intensity(X), dtype=float)
                w = 1.0 + np.sum(X ** 2, axis=-1)
                g = np.max(val / w[:, None], axis=0)
                er = np.max(np.abs(val - lim), axis=0)
            growth[li], errs[li] = g, er
        failures = []
        for li, n in enumerate(self.levels):
            for i in range(self.k):
                if growth[li, i] > self.growth_constants[i] * (1 + 1e-12):
                    failures.append(f"scaling_growth: level n={n}, component {i + 1}: ratio "
                                    f"{growth[li, i]:.6g} exceeds c_{i + 1} = {self.growth_constants[i]:.6g}")
        for i in range(self.k):
            col = errs[:, i]
            tol = 1e-12 * max(1.0, float(np.max(col)))
            # zero error (up to roundoff) is exact convergence; otherwise the
            # error must strictly decrease from level to level
            if np.any(col > tol) and np.any(np.diff(col) >= -tol * 1e-3):
                failures.append(f"scaling_limit: component {i + 1}: limit error {col.tolist()} "
                                "does not decrease with n")
        return ScheduleReport(self.levels, growth, errs, self.growth_constants, exact, tuple(failures))

    def _exact_level(self, li, pts):
        g = [Fraction(0)] * self.k
        er = [Fraction(0)] * self.k
        for p in pts:
            val = self.scaled_intensity(li, p, exact=True)
            lim = self.limit_intensity(p, exact=True)
            w = 1 + sum(v * v for v in p)
            for i in range(self.k):
                if not isinstance(val[i], Fraction) and not isinstance(val[i], int):
                    raise TypeError("non-rational value")
                g[i] = max(g[i], Fraction(val[i]) / w)
                er[i] = max(er[i], abs(Fraction(val[i]) - Fraction(lim[i])))
        return np.array([float(v) for v in g]), np.array([float(v) for v in er])

    def require(self, probes=None, d: int | None = None) -> ScheduleReport:
        """:meth:`check`, raising :class:`HypothesisError` on failure."""
        rep = self.check(probes, d)
        if rep.failures:
            cond = rep.failures[0].split(":", 1)[0]
            raise HypothesisError(cond, "; ".join(rep.failures))
        return rep

    def to_json(self) -> dict:
        return {"levels": list(self.levels),
                "eps": [[str(v) if isinstance(v, Fraction) else format(v, ".17g") for v in row] for row in self.eps],
                "intensity": self.intensity.to_json(), "limit_intensity": self.limit_intensity.to_json(),
                "growth_constants": self.growth_constants.tolist()}


# ----------------------------------------------------------------------
# scaling-limit experiment
# ----------------------------------------------------------------------


def level_inputs(g0, kernel: Kernel, n: float, eps) -> tuple[InitialCurve, Kernel]:
    """``g0^n = eps^{-1} g0(./n)`` and ``K^n = eps^{-1} K(./n) eps``."""
    d, k = kernel.dims
    e_k = _eps_diag(eps, k)
    e_d = e_k if d == k else _eps_diag(eps, d)
    curve = as_curve(g0, d)
    if curve.constant is not None:
        gn = InitialCurve(d, None, curve.constant / e_d, (curve.constant / e_d).tolist())
    else:
        gn = InitialCurve(d, lambda t: curve(np.asarray(t) / n) / e_d)
    Kn = kernel.time_scaled(n, left=np.diag(1.0 / e_d), right=np.diag(e_k))
    return gn, Kn


def square_root_reference(g0, kernel: Kernel, limit_intensity: VectorExpr, T: float, grid: GridSpec | int,
                          seeds: Sequence[SeedSpec], *, mode: str = "clamp") -> np.ndarray:
    """Euler paths of ``X = g0 + K * Z`` with ``dZ = sqrt(diag(Lambda_bar(X))) dW``.

    ``mode="clamp"`` evaluates ``Lambda_bar`` at ``max(X, 0)``, ``mode="abs"``
    at ``|X|``; negative values of ``Lambda_bar`` are clamped at zero before
    the square root. Returns an array ``(R, M + 1, d)``.
    """
    if mode not in ("clamp", "abs"):
        raise ValueError("mode must be 'clamp' or 'abs'")
    grid = grid if isinstance(grid, GridSpec) else GridSpec(T, int(grid))
    d, k = kernel.dims
    lim = as_vector(limit_intensity, k)
    fold = (lambda x: np.maximum(x, 0.0)) if mode == "clamp" else np.abs

    def sigma(x):
        v = np.sqrt(np.maximum(np.asarray(lim(fold(x)), dtype=float), 0.0))
        return v[..., :, None] * np.eye(k)

    coeffs = EulerCoefficients(k, None, sigma, k)
    return simulate_euler_batch(g0, kernel, coeffs, grid, seeds)


@dataclass(frozen=True)
class ScalingRow:
    level: int
    checkpoint: float
    w1: float
    w1_band: float
    norm_mean_gap: float
    norm_second_moment_gap: float
    mean_events: float

    def as_list(self) -> list[str]:
        return [str(self.level)] + [format(float(v), ".17g") for v in
                                    (self.checkpoint, self.w1, self.w1_band, self.norm_mean_gap,
                                     self.norm_second_moment_gap, self.mean_events)]


@dataclass(frozen=True)
class ScalingReport:
    """Rows per (level, checkpoint) plus the verified hypotheses.

    ``w1_band`` is a bootstrap standard deviation of the Wasserstein
    estimate. The reference process is one chosen Euler simulator of the
    limit equation; limit points need not be unique in general, and the
    report compares against this particular one.
    """

    rows: tuple
    schedule: ScheduleReport
    hypotheses: Mapping[str, Any]
    reference: Mapping[str, Any]

    HEADER = ("level", "checkpoint", "w1", "w1_band", "norm_mean_gap", "norm_second_moment_gap", "mean_events")

    def w1(self, checkpoint: float) -> np.ndarray:
        return np.array([r.w1 for r in self.rows if r.checkpoint == checkpoint])

    def band(self, checkpoint: float) -> np.ndarray:
        return np.array([r.w1_band for r in self.rows if r.checkpoint == checkpoint])

    def decreasing_beyond_noise(self, checkpoint: float, z: float = 2.0) -> bool:
        """Each consecutive drop exceeds ``z`` combined bootstrap deviations."""
        w, b = self.w1(checkpoint), self.band(checkpoint)
        return bool(np.all(w[:-1] - w[1:] > z * np.hypot(b[:-1], b[1:])))

    def nonincreasing_within_noise(self, checkpoint: float, z: float = 2.0) -> bool:
        w, b = self.w1(checkpoint), self.band(checkpoint)
        return bool(np.all(w[1:] - w[:-1] <= z * np.hypot(b[:-1], b[1:])))

    def to_csv(self) -> str:
        lines = [",".join(self.HEADER)] + [",".join(r.as_list()) for r in self.rows]
        return "\n".join(lines) + "\n"


def _bootstrap_w1(a, b, rng, n_boot) -> float:
    vals = np.empty(n_boot)
    for j in range(n_boot):
        vals[j] = wasserstein1(a[rng.integers(0, len(a), len(a))], b[rng.integers(0, len(b), len(b))])
    return float(np.std(vals, ddof=1))


def scaling_limit_experiment(g0, kernel: Kernel, schedule: ScalingSchedule, T: float, replicates: int,
                             seed: int, *, checkpoints: Sequence[float] | None = None, steps: int = 100,
                             reference_replicates: int | None = None, reference_steps: int = 400,
                             mode: str = "clamp", certificate: tuple[float, float] | None = None,
                             n_boot: int = 200, probes=None, max_events: int = 10_000_000,
                             chunk: int = 2000) -> ScalingReport:
    """Compare rescaled Hawkes marginals with the square-root Volterra limit.

    Level ``n`` uses ``g0^n = eps^{-1} g0(./n)``, ``K^n = eps^{-1} K(./n) eps``
    and ``b = -Lambda``. For each level ``replicates`` paths are simulated on
    ``[0, n T]`` and rescaled; the reference is
    :func:`square_root_reference` with ``reference_replicates`` paths on
    ``reference_steps`` Euler steps. Distances are the Wasserstein-1 distance
    of the first state component at each checkpoint and the gaps between the
    first two moments of ``||X||^2_{L^2(0,T)}``.

    Parameters
    ----------
    certificate : (eta, p), optional
        Also compare regularity certificates of the back-scaled level kernels
        ``eps K^n(n .) eps^{-1}`` with those of ``K``.

    Raises
    ------
    HypothesisError
        When the schedule fails its scaling-growth or scaling-limit check;
        nothing is simulated in that case.
    """
    d, k = kernel.dims
    sched = schedule.require(probes, d)
    checkpoints = [float(T)] if checkpoints is None else [float(c) for c in checkpoints]
    hyp: dict[str, Any] = {"scaling_growth": True, "scaling_limit_errors": sched.limit_errors.tolist()}
    kernel_gaps, init_gaps, certs = [], [], []
    base_cert = slobodeckij_certificate(kernel, certificate[1], certificate[0], T) if certificate else None
    for n, eps in zip(schedule.levels, schedule.eps):
        e = np.asarray([float(v) for v in eps])
        gn, Kn = level_inputs(g0, kernel, n, e)
        back = Kn.time_scaled(1.0 / n, left=np.diag(e), right=np.diag(1.0 / e))
        kernel_gaps.append(kernel_lp_distance(back, kernel, T, 2.0))
        tt = np.linspace(0.0, T, 65)
        init_gaps.append(float(np.max(np.abs(e * gn(n * tt) - as_curve(g0, d)(tt)))))
        if certificate:
            c = slobodeckij_certificate(back, certificate[1], certificate[0], T)
            certs.append([c.value_singular_integral, c.value_slobodeckij_integral])
    hyp.update(initial_curve_gaps=init_gaps, kernel_l2_gaps=kernel_gaps)
    if certificate:
        hyp.update(certificate_eta=certificate[0], certificate_p=certificate[1],
                   base_certificate=[base_cert.value_singular_integral, base_cert.value_slobodeckij_integral],
                   level_certificates=certs)

    R_ref = replicates if reference_replicates is None else reference_replicates
    ref_seeds = [SeedSpec(seed, 1_000_000 + i) for i in range(R_ref)]
    ref_grid = GridSpec(T, reference_steps)
    ref_idx = [int(round(c / ref_grid.h)) for c in checkpoints]
    ref_marg, ref_norm = [], []
    for a in range(0, R_ref, chunk):
        # chunks bound the memory of long fine-grid reference runs
        part = square_root_reference(g0, kernel, schedule.limit_intensity, T, ref_grid, ref_seeds[a:a + chunk],
                                     mode=mode)
        ref_marg.append(part[:, ref_idx, 0])
        ref_norm.append([lp_norm(x, 2.0, T) for x in part])
    ref_marg = np.concatenate(ref_marg)
    ref_norm = np.concatenate(ref_norm)

    boot = np.random.Generator(np.random.Philox(seed))
    rows = []
    for li, (n, eps) in enumerate(zip(schedule.levels, schedule.eps)):
        e = np.asarray([float(v) for v in eps])
        gn, Kn = level_inputs(g0, kernel, n, e)
        spec = HawkesSpec(Kn, schedule.intensity, gn, "minus_intensity")
        seeds = [SeedSpec(seed, li * 100_000 + i) for i in range(replicates)]
        if batch_eligible(spec) is None:
            batch = simulate_hawkes_batch(spec, n * T, GridSpec(n * T, steps), seeds, max_events=max_events)
            rs = rescale(batch, n, e, T)
            X = rs.X[:, :, None]
            mean_events = batch.flags["mean_events"]
        else:
            paths = []
            counts = []
            for s in seeds:
                hs = simulate_hawkes(spec, n * T, GridSpec(n * T, steps), s, max_events=max_events)
                paths.append(rescale(hs, n, e, T, steps).X)
                counts.append(hs.solution.flags["n_events"])
            X = np.stack(paths)
            mean_events = float(np.mean(counts))
        idx = [int(round(c / (T / steps))) for c in checkpoints]
        norms = np.array([lp_norm(x, 2.0, T) for x in X])
        for ci, (c, i) in enumerate(zip(checkpoints, idx)):
            a, b = X[:, i, 0], ref_marg[:, ci]
            rows.append(ScalingRow(n, c, wasserstein1(a, b), _bootstrap_w1(a, b, boot, n_boot),
                                   abs(float(norms.mean() - ref_norm.mean())),
                                   abs(float((norms ** 2).mean() - (ref_norm ** 2).mean())), mean_events))
    reference = {"scheme": "euler", "mode": mode, "replicates": R_ref, "steps": reference_steps,
                 "note": "limit points need not be unique; distances refer to this reference simulator"}
    return ScalingReport(tuple(rows), sched, hyp, reference)
