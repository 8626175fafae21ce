"""Path simulation for stochastic Volterra equations.

Three schemes are provided.

``exact_jump``
    Event-driven construction for a bounded jump family. Between events the
    state ``X_s = g0(s) + sum_{T_j < s} K(s - T_j) J_j`` is a deterministic
    function of the past, so the next event time is found by inverting the
    integrated intensity ``int nu(X_s, R^k) ds`` against a unit exponential
    draw. The jump is ``F(X_{T_n}, U_n)`` with the left state (the new event is
    not yet in the sum, since the kernel is only ever evaluated at strictly
    positive lags). An optional deterministic drift ``b(X)`` enters the driver
    through grid cells on which the rate is frozen at the left endpoint.

``approx_level_n``
    A general triplet is replaced by its level-``n`` pure-jump approximation
    (:func:`volterrajump.generator.approximate_triplet`) and simulated with the
    exact scheme.

``euler``
    Left-point Volterra Euler scheme with integrated kernel weights
    ``w_l = (I(l h) - I((l - 1) h)) / h`` where ``I`` is the kernel
    antiderivative, so singular kernels are never evaluated at zero. For
    exponential sums the same scheme is run through its factor recursion,
    which gives identical numbers at linear cost.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from scipy import optimize

from .expr import Expr, VectorExpr, as_vector
from .kernels import Kernel, _phi1, resolvent
from .quadrature import gauss_legendre, graded_nodes, integrate_graded
from .rng import STREAM_BROWNIAN, STREAM_CLOCK, STREAM_MARKS, STREAM_POISSON, GridSpec, SeedSpec
from .triplet import CompositeFamily, FiniteMixture, HawkesBasis, JumpFamily, Triplet, psd_sqrt

__all__ = [
    "InitialCurve",
    "as_curve",
    "JumpPath",
    "SolutionSample",
    "ClockInversionError",
    "simulate_pure_jump",
    "simulate_general",
    "EulerCoefficients",
    "euler_weights",
    "simulate_euler_reference",
    "simulate_euler_batch",
    "MartingaleStats",
    "martingale_residuals",
    "fubini_identity_check",
    "UniquenessResult",
    "gronwall_bound",
    "pathwise_uniqueness_probe",
]


class ClockInversionError(RuntimeError):
    """Root finding on the integrated intensity failed; refine the grid step."""


# ----------------------------------------------------------------------
# initial curves
# ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class InitialCurve:
    """Deterministic curve ``g0: [0, T] -> R^d`` with its running integral."""

    d: int
    fn: Callable[[np.ndarray], np.ndarray]
    constant: np.ndarray | None = None
    source: Any = None

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.constant is not None:
            return np.broadcast_to(self.constant, t.shape + (self.d,)).copy()
        return np.asarray(self.fn(t), dtype=float).reshape(t.shape + (self.d,))

    def integral(self, t) -> np.ndarray:
        """``int_0^t g0(s) ds``."""
        t = np.asarray(t, dtype=float)
        if self.constant is not None:
            return t[..., None] * self.constant
        flat = t.reshape(-1)
        out = np.zeros((len(flat), self.d))
        for i, ti in enumerate(flat):
            if ti > 0:
                rule = graded_nodes(0.0, float(ti), left=False)
                vals = self(rule.nodes)
                out[i] = rule.reduce(vals)[0]
        return out.reshape(t.shape + (self.d,))

    def scaled(self, factor: float) -> "InitialCurve":
        if self.constant is not None:
            return InitialCurve(self.d, self.fn, factor * self.constant, None)
        return InitialCurve(self.d, lambda t: factor * self.fn(t), None, None)

    def to_json(self):
        if self.source is not None:
            return self.source
        if self.constant is not None:
            return self.constant.tolist()
        return "<callable>"


def as_curve(g0, d: int) -> InitialCurve:
    """Accept a constant (scalar or length-``d``), DSL strings in ``t``, or a
    callable ``t -> (..., d)``."""
    if isinstance(g0, InitialCurve):
        if g0.d != d:
            raise ValueError(f"initial curve has dimension {g0.d}, expected {d}")
        return g0
    if g0 is None:
        return InitialCurve(d, None, np.zeros(d), 0.0)
    if callable(g0) and not isinstance(g0, (Expr, VectorExpr)):
        return InitialCurve(d, g0)
    if isinstance(g0, (str, Expr, VectorExpr)) or (isinstance(g0, (list, tuple)) and any(isinstance(v, str) for v in g0)):
        vec = g0 if isinstance(g0, VectorExpr) else as_vector(g0 if not isinstance(g0, (str, Expr)) else [g0] * d, d)
        if any(e.state_dim > 0 for e in vec.items):
            raise ValueError("initial curve may only depend on t")
        if vec.is_constant:
            return InitialCurve(d, None, np.asarray(vec(np.zeros(1)), dtype=float).reshape(d),
                                vec.to_json())
        return InitialCurve(d, lambda t: np.stack(
            [np.broadcast_to(e(np.zeros(np.shape(t) + (1,)), t=t), np.shape(t)) for e in vec.items], axis=-1),
            None, vec.to_json())
    arr = np.asarray(g0, dtype=float)
    if arr.ndim == 0:
        arr = np.full(d, float(arr))
    if arr.shape != (d,):
        raise ValueError(f"constant initial curve must have length {d}")
    return InitialCurve(d, None, arr.copy(), arr.tolist())


# ----------------------------------------------------------------------
# paths and samples
# ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class JumpPath:
    """Piecewise-constant driver plus an optional piecewise-linear drift record.

    ``Z_t = sum_{T_n <= t} J_n + sum_cells rate_c * |[c0, c1] cap [0, t]|``.
    """

    times: np.ndarray
    jumps: np.ndarray
    T: float
    cell_edges: np.ndarray | None = None
    cell_rates: np.ndarray | None = None
    seed: SeedSpec | None = None

    @property
    def k(self) -> int:
        return self.jumps.shape[1]

    @property
    def n_events(self) -> int:
        return len(self.times)

    def _drift(self, t):
        t = np.asarray(t, dtype=float)
        if self.cell_edges is None:
            return np.zeros(t.shape + (self.k,))
        c0, c1 = self.cell_edges[:-1], self.cell_edges[1:]
        span = np.clip(t[..., None], c0, c1) - c0
        return span @ self.cell_rates

    def Z(self, t) -> np.ndarray:
        """Right-continuous driver value ``Z_t``."""
        t = np.asarray(t, dtype=float)
        cum = np.vstack([np.zeros((1, self.k)), np.cumsum(self.jumps, axis=0)])
        idx = np.searchsorted(self.times, t, side="right")
        return cum[idx] + self._drift(t)

    def Z_left(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        cum = np.vstack([np.zeros((1, self.k)), np.cumsum(self.jumps, axis=0)])
        idx = np.searchsorted(self.times, t, side="left")
        return cum[idx] + self._drift(t)

    def to_json(self) -> dict:
        out = {"T": self.T, "events": [[format(float(t), ".17g"), [format(float(v), ".17g") for v in j]]
                                       for t, j in zip(self.times, self.jumps)]}
        if self.cell_edges is not None:
            out["drift_cells"] = {"edges": [format(float(v), ".17g") for v in self.cell_edges],
                                  "rates": [[format(float(v), ".17g") for v in r] for r in self.cell_rates]}
        if self.seed is not None:
            out["seed"] = self.seed.to_json()
        return out


@dataclass(frozen=True, eq=False)
class SolutionSample:
    """Grid-sampled solution with its driver and provenance.

    For jump schemes ``path`` holds the exact driver and :meth:`state`
    re-evaluates ``X`` at arbitrary times. For the Euler scheme ``increments``
    holds the driver increments per grid cell.
    """

    times: np.ndarray
    X: np.ndarray
    scheme: str
    seed: SeedSpec | None
    kernel: Kernel
    g0: InitialCurve
    path: JumpPath | None = None
    increments: np.ndarray | None = None
    flags: Mapping[str, Any] = field(default_factory=dict)

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def h(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def exploded(self) -> bool:
        return bool(self.flags.get("exploded", False))

    def state(self, s) -> np.ndarray:
        """``X_s`` recomputed from ``(g0, kernel, events, drift cells)``."""
        if self.path is None:
            raise ValueError("exact state evaluation needs a jump path")
        p = self.path
        return _state(self.kernel, self.g0, p.times, p.jumps, p.cell_edges, p.cell_rates, s)

    def reconstruct(self) -> np.ndarray:
        return self.state(self.times)

    def Z_grid(self) -> np.ndarray:
        if self.path is not None:
            return self.path.Z(self.times)
        z = np.zeros((len(self.times), self.increments.shape[1]))
        z[1:] = np.cumsum(self.increments, axis=0)
        return z

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = self.X.shape[1]
        w.writerow(["t"] + [f"x{i + 1}" for i in range(d)])
        for t, row in zip(self.times, self.X):
            w.writerow([format(float(t), ".17g")] + [format(float(v), ".17g") for v in row])
        return buf.getvalue()

    def sidecar(self) -> dict:
        out = {"scheme": self.scheme, "seed": None if self.seed is None else self.seed.to_json(),
               "flags": {k: (v if not isinstance(v, float) else format(v, ".17g")) for k, v in self.flags.items()},
               "kernel": self.kernel.to_json(), "g0": self.g0.to_json()}
        if self.path is not None:
            out["path"] = self.path.to_json()
        return out

    def sidecar_json(self) -> str:
        return json.dumps(self.sidecar(), sort_keys=True)


def _state(kernel: Kernel, g0: InitialCurve, ev_t, ev_j, cell_edges, cell_rates, s) -> np.ndarray:
    """``g0(s) + sum_{T_j < s} K(s - T_j) J_j + drift-cell convolutions``."""
    s = np.asarray(s, dtype=float)
    flat = s.reshape(-1)
    out = g0(flat)
    n = len(ev_t)
    if n:
        chunk = max(1, 2_000_000 // max(n * kernel.dims[0] * kernel.dims[1], 1))
        for a in range(0, len(flat), chunk):
            lag = flat[a:a + chunk, None] - ev_t[None, :]
            pos = lag > 0
            kv = kernel._profile_matrix(np.where(pos, lag, 1.0))
            kv = np.where(pos[..., None, None], kv, 0.0)
            out[a:a + chunk] += np.einsum("sndk,nk->sd", kv, ev_j)
    if cell_edges is not None and len(cell_rates):
        c0, c1 = cell_edges[:-1], cell_edges[1:]
        w = kernel.integral(np.maximum(flat[:, None] - c0, 0.0)) - kernel.integral(np.maximum(flat[:, None] - c1, 0.0))
        out += np.einsum("scdk,ck->sd", w, cell_rates)
    return out.reshape(s.shape + (g0.d,))


# ----------------------------------------------------------------------
# exact pure-jump construction
# ----------------------------------------------------------------------


class _Buffered:
    """Block-buffered draws from one stream (deterministic given the stream)."""

    def __init__(self, gen: np.random.Generator, kind: str, width: int = 1, block: int = 64):
        self.gen, self.kind, self.width, self.block = gen, kind, width, block
        self.buf = None
        self.pos = block

    def next(self):
        if self.pos >= self.block:
            if self.kind == "exp":
                self.buf = self.gen.standard_exponential(self.block)
            else:
                self.buf = self.gen.random((self.block, self.width))
            self.pos = 0
        v = self.buf[self.pos]
        self.pos += 1
        return v


def _state_free(family: JumpFamily | None) -> bool:
    """True when neither the intensity nor the jump law depends on the state."""
    if family is None:
        return True
    if isinstance(family, FiniteMixture):
        return all(c.intensity.is_constant and (c.displacement is None or c.displacement.is_constant)
                   for c in family.components)
    if isinstance(family, HawkesBasis):
        return family.intensity.is_constant
    from .generator import DiffusionAtoms, DriftAtoms, TruncatedJumps

    if isinstance(family, DriftAtoms):
        return _triplet_part_constant(family.triplet.drift)
    if isinstance(family, DiffusionAtoms):
        return _triplet_part_constant(family.triplet.diffusion)
    if isinstance(family, TruncatedJumps):
        return _state_free(family.nu)
    if isinstance(family, CompositeFamily):
        return all(_state_free(f) for _, f in family.parts)
    return False


def _triplet_part_constant(e) -> bool:
    return e is None or bool(getattr(e, "is_constant", False))


class _History:
    """Growing event arrays plus drift cells, with state evaluation."""

    def __init__(self, kernel, g0, k, cell_edges):
        self.kernel, self.g0, self.k = kernel, g0, k
        self.t = np.empty(16)
        self.j = np.empty((16, k))
        self.n = 0
        self.cell_edges = cell_edges
        self.cell_rates = None if cell_edges is None else np.zeros((len(cell_edges) - 1, k))
        self.n_cells = 0  # cells with a frozen rate

    def add(self, t, jump):
        if self.n == len(self.t):
            self.t = np.concatenate([self.t, np.empty(self.n)])
            self.j = np.concatenate([self.j, np.empty((self.n, self.k))])
        self.t[self.n] = t
        self.j[self.n] = jump
        self.n += 1

    def state(self, s):
        cells = None if self.cell_edges is None else self.cell_edges[: self.n_cells + 1]
        rates = None if self.cell_rates is None else self.cell_rates[: self.n_cells]
        return _state(self.kernel, self.g0, self.t[: self.n], self.j[: self.n], cells, rates, s)


def simulate_pure_jump(g0, kernel: Kernel, family: JumpFamily | None, T: float, grid: GridSpec | int,
                       seed: SeedSpec, *, drift: Callable | None = None, max_events: int = 1_000_000,
                       clock_tol: float = 1e-10, clock_levels: int = 24,
                       scheme: str = "exact_jump") -> SolutionSample:
    """Exact event-driven simulation of ``X = g0 + K * Z`` for a bounded jump family.

    Parameters
    ----------
    g0 : constant, DSL string(s) in ``t``, callable or :class:`InitialCurve`
    kernel : Kernel
        ``d x k`` kernel.
    family : JumpFamily or None
        Jump measure ``nu(x, .)``; ``None`` means no jumps.
    T : float
        Horizon.
    grid : GridSpec or int
        Output grid (an int is the number of steps).
    seed : SeedSpec
    drift : callable, optional
        Deterministic driver drift ``b(x)`` with values in ``R^k``; frozen at
        the left end of each grid cell.
    max_events : int
        Event cap; reaching it stops the path and sets the ``exploded`` flag.
    clock_tol : float
        Absolute tolerance of event times in the root finder.

    Returns
    -------
    SolutionSample
        Grid values after the explosion time (if any) are NaN.
    """
    grid = grid if isinstance(grid, GridSpec) else GridSpec(T, int(grid))
    if not math.isclose(grid.T, T, rel_tol=1e-12):
        raise ValueError("grid horizon does not match T")
    d, k = kernel.dims
    curve = as_curve(g0, d)
    if family is not None and family.k != k:
        raise ValueError(f"jump family has dimension {family.k}, kernel expects {k}")
    times = grid.times
    cell_edges = times.copy() if drift is not None else None
    hist = _History(kernel, curve, k, cell_edges)
    clock = _Buffered(seed.generator(STREAM_CLOCK), "exp")
    marks = _Buffered(seed.generator(STREAM_MARKS), "unif", width=max(1, family.n_uniforms) if family else 1)
    const_rate = None if family is None else family.constant_intensity
    free = _state_free(family)
    part_rates = part_cum = part_free = None
    if isinstance(family, CompositeFamily) and const_rate is not None and const_rate > 0:
        part_rates = np.array([f.constant_intensity for _, f in family.parts])
        part_cum = np.cumsum(part_rates)
        part_free = [_state_free(f) for _, f in family.parts]
    singular = kernel.singular_at_zero

    def rate(s):
        x = hist.state(s)
        r = np.asarray(family.total_intensity(x), dtype=float)
        return np.where(np.isfinite(r), r, np.inf)

    flags: dict[str, Any] = {"exploded": False}
    if family is not None and isinstance(family, HawkesBasis):
        flags["intensity_clamped"] = False

    t_cur = 0.0
    last_event = 0.0
    remaining = clock.next() if family is not None else math.inf
    next_cell = 0
    explosion_time = None
    if drift is not None:
        hist.cell_rates[0] = np.asarray(drift(curve(0.0)), dtype=float).reshape(k)
        hist.n_cells = 1
        next_cell = 1

    while True:
        seg_end = T if drift is None else float(cell_edges[next_cell])
        if family is None or const_rate == 0.0:
            mass = 0.0
        elif const_rate is not None:
            mass = const_rate * (seg_end - t_cur)
        else:
            mass = _clock_integral(rate, t_cur, seg_end, singular and t_cur == last_event and hist.n > 0,
                                   clock_levels, hist.kernel.breakpoints() + last_event)
        if not math.isfinite(mass):
            flags.update(exploded=True, reason="non-finite intensity")
            explosion_time = t_cur
            break
        if mass < remaining:
            remaining -= mass
            t_cur = seg_end
            if drift is not None and next_cell < len(cell_edges) - 1:
                x_edge = hist.state(np.array([t_cur]))[0]
                hist.cell_rates[next_cell] = np.asarray(drift(x_edge), dtype=float).reshape(k)
                hist.n_cells = next_cell + 1
                next_cell += 1
                continue
            break
        # the event falls inside [t_cur, seg_end]
        if const_rate is not None:
            tau = t_cur + remaining / const_rate
        else:
            tau = _invert_clock(rate, t_cur, seg_end, remaining, singular and t_cur == last_event and hist.n > 0,
                                clock_levels, clock_tol)
        tau = min(max(tau, math.nextafter(t_cur, math.inf)), seg_end)
        u = marks.next()
        if part_rates is not None:
            # same uniforms as CompositeFamily.sample_jump, but the state is
            # only evaluated when the chosen part needs it
            idx = min(int(np.searchsorted(part_cum, u[0] * part_cum[-1], side="right")), len(part_cum) - 1)
            sub, sub_free = family.parts[idx][1], part_free[idx]
            x_left = np.zeros(d) if sub_free else hist.state(np.array([tau]))[0]
            jump = np.asarray(sub.sample_jump(x_left, u[1:]), dtype=float).reshape(k)
        else:
            x_left = np.zeros(d) if free else hist.state(np.array([tau]))[0]
            if "intensity_clamped" in flags and not flags["intensity_clamped"] and family.clamped(x_left):
                flags["intensity_clamped"] = True
            jump = np.asarray(family.sample_jump(x_left, u), dtype=float).reshape(k)
        if np.any(jump != 0):
            if hist.n >= max_events:
                flags.update(exploded=True, reason=f"event cap {max_events} reached")
                explosion_time = tau
                break
            hist.add(tau, jump)
            last_event = tau
        t_cur = tau
        remaining = clock.next()

    X = hist.state(times)
    if explosion_time is not None:
        X[times > explosion_time] = np.nan
        flags["explosion_time"] = float(explosion_time)
    n_cells = hist.n_cells
    path = JumpPath(hist.t[: hist.n].copy(), hist.j[: hist.n].copy(), float(T),
                    None if cell_edges is None else cell_edges[: n_cells + 1].copy(),
                    None if cell_edges is None else hist.cell_rates[:n_cells].copy(), seed)
    flags["n_events"] = int(hist.n)
    return SolutionSample(times, X, scheme, seed, kernel, curve, path, None, flags)


def _clock_integral(rate, a, b, singular_left, levels, breakpoints) -> float:
    if b <= a:
        return 0.0
    bps = [x for x in np.atleast_1d(breakpoints) if a < x < b]
    val, _ = integrate_graded(rate, a, b, left=singular_left, levels=levels if singular_left else 1,
                              breakpoints=bps)
    return float(val)


def _invert_clock(rate, a, b, target, singular_left, levels, tol) -> float:
    """Root of ``int_a^t rate = target`` on ``[a, b]``."""

    def F(t):
        return _clock_integral(rate, a, t, singular_left, levels, ()) - target

    fb = F(b)
    if fb < 0:
        # quadrature on [a, b] and on [a, t] may disagree in the last digits
        if fb > -1e-9 * max(1.0, target):
            return b
        raise ClockInversionError(f"integrated intensity does not reach the clock value on [{a}, {b}]")
    try:
        return float(optimize.brentq(F, a, b, xtol=tol, rtol=4 * np.finfo(float).eps))
    except (ValueError, RuntimeError) as exc:
        raise ClockInversionError(f"clock inversion failed on [{a}, {b}]: {exc}; refine the grid step") from exc


def simulate_general(g0, kernel: Kernel, triplet: Triplet, n: int, T: float, grid: GridSpec | int,
                     seed: SeedSpec, **kw) -> SolutionSample:
    """Level-``n`` pure-jump approximation of a general triplet, simulated exactly."""
    from .generator import approximate_triplet

    level = approximate_triplet(triplet, n)
    fam = level.family if level.family.parts else None
    return simulate_pure_jump(g0, kernel, fam, T, grid, seed, scheme=f"approx_level_{int(n)}", **kw)


# ----------------------------------------------------------------------
# Euler reference
# ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EulerCoefficients:
    """Coefficients of the continuous-time form of the equation.

    ``dZ = b(X) dt + sigma(X) dW + int zeta (mu - nu)(dt, dzeta)``, where the
    jump part is generated by thinning a dominating Poisson random measure of
    rate ``intensity_bound``.

    Attributes
    ----------
    b : callable, ``(..., d) -> (..., k)``
    sigma : callable, ``(..., d) -> (..., k, m)``, optional
    m : int
        Brownian dimension.
    jumps : JumpFamily, optional
    intensity_bound : float
        Required when ``jumps`` is given; must dominate ``nu(x, R^k)``.
    """

    k: int
    b: Callable | None = None
    sigma: Callable | None = None
    m: int = 0
    jumps: JumpFamily | None = None
    intensity_bound: float | None = None

    @classmethod
    def from_triplet(cls, triplet: Triplet, intensity_bound: float | None = None) -> "EulerCoefficients":
        sig = None
        if triplet.has_diffusion:
            sig = triplet.sigma
        if triplet.nu is not None and intensity_bound is None:
            intensity_bound = triplet.nu.constant_intensity
            if intensity_bound is None:
                raise ValueError("state-dependent jump intensities need an explicit intensity_bound")
        return cls(triplet.k, triplet.b if triplet.has_drift else None, sig, triplet.k if sig else 0,
                   triplet.nu, intensity_bound)


def euler_weights(kernel: Kernel, h: float, M: int) -> np.ndarray:
    """``w_l = (I(l h) - I((l - 1) h)) / h`` for ``l = 1..M``; index 0 is zero."""
    cum = kernel.integral(np.arange(M + 1) * h)
    w = np.zeros((M + 1,) + kernel.dims)
    w[1:] = (cum[1:] - cum[:-1]) / h
    return w


def _driver_noise(seed: SeedSpec, coeffs: EulerCoefficients, grid: GridSpec):
    """Per-replicate Brownian increments and dominating Poisson points."""
    M, h = grid.M, grid.h
    dW = None
    if coeffs.sigma is not None and coeffs.m > 0:
        dW = seed.generator(STREAM_BROWNIAN).standard_normal((M, coeffs.m)) * math.sqrt(h)
    points = None
    if coeffs.jumps is not None and coeffs.intensity_bound:
        g = seed.generator(STREAM_POISSON)
        count = g.poisson(coeffs.intensity_bound * grid.T)
        t = np.sort(g.random(count) * grid.T)
        thin = g.random(count)
        u = seed.generator(STREAM_MARKS).random((count, coeffs.jumps.n_uniforms))
        points = (t, thin, u)
    return dW, points


def simulate_euler_batch(g0, kernel: Kernel, coeffs: EulerCoefficients, grid: GridSpec,
                         seeds: Sequence[SeedSpec], *, return_increments: bool = False):
    """Euler scheme for several replicates at once.

    Returns
    -------
    X : ndarray, shape (R, M+1, d)
    dZ : ndarray, shape (R, M, k), only if ``return_increments``
    """
    d, k = kernel.dims
    if coeffs.k != k:
        raise ValueError("coefficient dimension does not match the kernel")
    curve = as_curve(g0, d)
    M, h = grid.M, grid.h
    times = grid.times
    R = len(seeds)
    gv = curve(times)
    noise = [_driver_noise(s, coeffs, grid) for s in seeds]
    dW = None if coeffs.sigma is None or coeffs.m == 0 else np.stack([nz[0] for nz in noise])
    X = np.empty((R, M + 1, d))
    X[:, 0] = gv[0]
    dZ = np.zeros((R, M, k))
    factor = kernel.is_exponential_sum
    if factor:
        lam = kernel.params["rates"]
        c = kernel.params["coeffs"]  # (nf, d, k)
        decay = np.exp(-lam * h)
        gain = _phi1(lam * h)
        Y = np.zeros((R, len(lam), k))
    else:
        w = euler_weights(kernel, h, M)
    jump_idx = [0] * R
    for m in range(M):
        x = X[:, m]
        inc = np.zeros((R, k))
        if coeffs.b is not None:
            inc += np.asarray(coeffs.b(x), dtype=float).reshape(R, k) * h
        if dW is not None:
            sig = np.asarray(coeffs.sigma(x), dtype=float).reshape(R, k, coeffs.m)
            inc += np.einsum("rkm,rm->rk", sig, dW[:, m])
        if coeffs.jumps is not None:
            inc -= np.asarray(coeffs.jumps.first_moment(x), dtype=float).reshape(R, k) * h
            t_hi = times[m + 1]
            for r in range(R):
                pts = noise[r][1]
                if pts is None:
                    continue
                t, thin, u = pts
                i = jump_idx[r]
                while i < len(t) and t[i] < t_hi:
                    lam_x = float(coeffs.jumps.total_intensity(x[r]))
                    if lam_x > coeffs.intensity_bound * (1 + 1e-12):
                        raise ValueError(f"jump intensity {lam_x} exceeds the declared bound "
                                         f"{coeffs.intensity_bound} at x={x[r].tolist()}")
                    if thin[i] * coeffs.intensity_bound < lam_x:
                        inc[r] += coeffs.jumps.sample_jump(x[r], u[i])
                    i += 1
                jump_idx[r] = i
        dZ[:, m] = inc
        if factor:
            Y = decay[None, :, None] * Y + gain[None, :, None] * inc[:, None, :]
            X[:, m + 1] = gv[m + 1] + np.einsum("idk,rik->rd", c, Y)
        else:
            # X_{m+1} = g0 + sum_{j <= m} w_{m+1-j} dZ_j
            X[:, m + 1] = gv[m + 1] + np.einsum("jdk,rjk->rd", w[m + 1:0:-1], dZ[:, : m + 1])
    if return_increments:
        return X, dZ
    return X


def simulate_euler_reference(g0, kernel: Kernel, coeffs: EulerCoefficients, T: float,
                             grid: GridSpec | int, seed: SeedSpec) -> SolutionSample:
    """Single-replicate Euler path (see :func:`simulate_euler_batch`)."""
    grid = grid if isinstance(grid, GridSpec) else GridSpec(T, int(grid))
    X, dZ = simulate_euler_batch(g0, kernel, coeffs, grid, [seed], return_increments=True)
    return SolutionSample(grid.times, X[0], "euler", seed, kernel, as_curve(g0, kernel.dims[0]),
                          None, dZ[0], {"exploded": bool(not np.all(np.isfinite(X)))})


# ----------------------------------------------------------------------
# identity checks
# ----------------------------------------------------------------------


def fubini_identity_check(sample: SolutionSample, kernel: Kernel | None = None, g0=None,
                          checkpoints: Sequence[float] | None = None) -> float:
    """Max over checkpoints of ``|int_0^t X ds - int_0^t g0 ds - int_0^t K(t-s) Z_s ds|``.

    The left side integrates the piecewise-defined ``X`` segment by segment
    between consecutive events (telescoping kernel antiderivatives). The
    right side integrates ``K(t - .)`` against the piecewise-constant driver
    segment by segment. Drift cells enter through the second antiderivative
    on the left and through the first moment antiderivative on the right.

    The left side always uses the kernel and initial curve that produced
    ``sample``. ``kernel`` and ``g0`` (default: the same) enter the right
    side only, so passing a different kernel tests whether the sampled
    ``X`` solves the equation with that kernel.
    """
    if sample.path is None:
        raise ValueError("the identity check needs an exact jump path")
    own = sample.kernel
    kernel = own if kernel is None else kernel
    curve = sample.g0 if g0 is None else as_curve(g0, kernel.dims[0])
    p = sample.path
    cps = np.asarray(sample.times[1:] if checkpoints is None else checkpoints, dtype=float)
    I, I_own = kernel.integral, own.integral
    worst = 0.0
    for t in cps:
        live = p.times < t
        ev_t, ev_j = p.times[live], p.jumps[live]
        g_int_own = sample.g0.integral(np.array(t))
        g_int = g_int_own if curve is sample.g0 else curve.integral(np.array(t))
        # left side: segments [s_i, s_{i+1}] between events; event j contributes
        # I(s_{i+1} - T_j) - I(s_i - T_j) on every segment after it
        seg = np.concatenate([ev_t, [t]])
        lhs = g_int_own.copy()
        if len(ev_t):
            # rows: segments i, columns: events j <= i
            after = np.tril(np.ones((len(ev_t), len(ev_t)), dtype=bool))
            lo = np.where(after, seg[:-1, None] - ev_t[None, :], 0.0)
            hi = np.where(after, seg[1:, None] - ev_t[None, :], 0.0)
            w = I_own(hi) - I_own(lo)
            lhs = lhs + np.einsum("indk,nk->d", w, ev_j)
        # right side: Z is constant on [T_i, T_{i+1})
        rhs = g_int.copy()
        if len(ev_t):
            zvals = np.cumsum(ev_j, axis=0)
            w = I(t - seg[:-1]) - I(t - seg[1:])
            rhs = rhs + np.einsum("ndk,nk->d", w, zvals)
        if p.cell_edges is not None and len(p.cell_rates):
            c0, c1 = p.cell_edges[:-1], p.cell_edges[1:]
            live_c = c0 < t
            c0, c1, r = c0[live_c], np.minimum(c1[live_c], t), p.cell_rates[live_c]
            full = p.cell_edges[1:][live_c]
            lhs = lhs + np.einsum("cdk,ck->d", own.double_integral(t - c0) - own.double_integral(t - full), r)
            J1 = kernel.moment_integral
            inside = ((t - c0)[:, None, None] * (I(t - c0) - I(t - c1))
                      - (J1(t - c0) - J1(t - c1)))
            after = (c1 - c0)[:, None, None] * I(np.maximum(t - full, 0.0))
            rhs = rhs + np.einsum("cdk,ck->d", inside + after, r)
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst


@dataclass(frozen=True)
class MartingaleStats:
    """Increments ``M^f_t - M^f_s`` across replicates."""

    s: float
    t: float
    mean: float
    stderr: float
    n: int

    @property
    def z(self) -> float:
        if self.stderr == 0:
            return 0.0 if self.mean == 0 else math.inf
        return self.mean / self.stderr


def _triplet_state_free(triplet: Triplet) -> bool:
    def const(e):
        return e is None or getattr(e, "is_constant", False)

    drift_ok = const(triplet.drift) or (triplet.nu is not None and triplet.drift == triplet.nu.first_moment
                                        and _state_free(triplet.nu))
    return drift_ok and const(triplet.diffusion) and _state_free(triplet.nu)


def _martingale_path(sample: SolutionSample, triplet: Triplet, f, checkpoints, state_free) -> np.ndarray:
    """``M^f`` at each checkpoint for one path."""
    from .generator import apply_generator

    p = sample.path
    cps = np.asarray(checkpoints, dtype=float)
    edges = [0.0] + list(p.times) + list(cps)
    if p.cell_edges is not None:
        edges += list(p.cell_edges)
    edges = np.unique(np.clip(edges, 0.0, cps.max()))
    x20, w20 = gauss_legendre(20)
    integral = np.zeros(len(edges))
    x0 = np.zeros(triplet.d)
    for i in range(len(edges) - 1):
        a, b = edges[i], edges[i + 1]
        if b <= a:
            continue
        if state_free and p.cell_edges is None:
            z = p.Z(np.array([a]))
            val = float(apply_generator(triplet, f, x0, z)[0]) * (b - a)
        else:
            if sample.kernel.singular_at_zero and np.any(p.times == a):
                rule = graded_nodes(a, b, left=True, levels=16)
                s = rule.nodes
                xs = x0[None, :].repeat(len(s), 0) if state_free else sample.state(s)
                vals = apply_generator(triplet, f, xs, p.Z(s))
                val = float(rule.reduce(vals)[0])
            else:
                s = a + (b - a) * x20
                xs = x0[None, :].repeat(len(s), 0) if state_free else sample.state(s)
                val = float((b - a) * np.dot(w20, apply_generator(triplet, f, xs, p.Z(s))))
        integral[i + 1] = val
    cum = np.cumsum(integral)
    idx = np.searchsorted(edges, cps)
    return f(p.Z(cps)) - f(p.Z(np.zeros(1)))[0] - cum[idx]


def martingale_residuals(samples: Sequence[SolutionSample], triplet: Triplet, f,
                         checkpoints: Sequence[float]) -> list[MartingaleStats]:
    """Statistics of ``M^f_t - M^f_s`` over consecutive checkpoint pairs.

    ``M^f_t = f(Z_t) - f(Z_0) - int_0^t A f(X_s, Z_s) ds``. The integral is
    exact when the triplet does not depend on the state and the driver has no
    drift cells (the integrand is then constant between events); otherwise
    Gauss-Legendre rules are applied between events.
    """
    cps = np.asarray(sorted(set([0.0] + [float(c) for c in checkpoints])))
    free = _triplet_state_free(triplet)
    vals = np.array([_martingale_path(s, triplet, f, cps, free) for s in samples])
    out = []
    for i in range(len(cps) - 1):
        inc = vals[:, i + 1] - vals[:, i]
        n = len(inc)
        se = float(inc.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        out.append(MartingaleStats(float(cps[i]), float(cps[i + 1]), float(inc.mean()), se, n))
    return out


# ----------------------------------------------------------------------
# pathwise uniqueness
# ----------------------------------------------------------------------


def gronwall_bound(kernel: Kernel, grid: GridSpec, delta_sq: np.ndarray, lip_b: float,
                   lip_sigma: float) -> np.ndarray:
    """Bound ``U`` on the mean-square gap ``E|X_m - Y_m|^2`` of two Euler runs.

    With ``e_m = X_m - Y_m`` the scheme gives
    ``E|e_m|^2 <= 3 delta_m^2 + C h sum_{j<m} |w_{m-j}|^2 E|e_j|^2`` where
    ``C = 3 (T L_b^2 + L_sigma^2)`` (Cauchy-Schwarz for the drift sum and the
    Ito isometry for the noise sum). The comparison solution is
    ``U = g - r * g`` with ``g = 3 delta^2`` and ``r`` the resolvent of
    ``-C |w|^2``.
    """
    M, h, T = grid.M, grid.h, grid.T
    w = euler_weights(kernel, h, M)
    wn2 = np.sum(w ** 2, axis=(-2, -1))
    C = 3.0 * (T * lip_b ** 2 + lip_sigma ** 2)
    kv = -C * wn2
    kv[0] = 0.0
    table = resolvent(kv, T, h)
    g = 3.0 * np.asarray(delta_sq, dtype=float)
    return g - table.convolve_with(g)


@dataclass(frozen=True)
class UniquenessResult:
    """Outcome of :func:`pathwise_uniqueness_probe`.

    ``distances`` are per-replicate ``||X - Y||_{L^2(0,T)}``;
    ``mean_square`` is the replicate mean of ``|X_m - Y_m|^2`` per grid point
    and ``bound`` the Gronwall comparison (``None`` without Lipschitz data).
    """

    distances: np.ndarray
    mean_square: np.ndarray
    bound: np.ndarray | None

    @property
    def max_distance(self) -> float:
        return float(np.max(self.distances))

    @property
    def within_bound(self) -> bool | None:
        if self.bound is None:
            return None
        return bool(np.all(self.mean_square <= self.bound * (1 + 1e-12) + 1e-300))


def pathwise_uniqueness_probe(g0, kernel: Kernel, coeffs: EulerCoefficients, T: float, grid: GridSpec | int,
                              seed: SeedSpec, *, g0_other=None, seed_other: SeedSpec | None = None,
                              replicates: int = 1, lipschitz: tuple[float, float] | None = None) -> UniquenessResult:
    """Run two independently initialized Euler solvers and measure their gap.

    By default both runs share ``g0`` and the noise streams, so a
    deterministic scheme must give distance 0. ``g0_other`` perturbs the
    initial curve and ``seed_other`` switches the second run's noise.
    """
    grid = grid if isinstance(grid, GridSpec) else GridSpec(T, int(grid))
    d = kernel.dims[0]
    ca = as_curve(g0, d)
    cb = ca if g0_other is None else as_curve(g0_other, d)
    sb = seed if seed_other is None else seed_other
    seeds_a = [seed.replicate(seed.index + i) for i in range(replicates)]
    seeds_b = [sb.replicate(sb.index + i) for i in range(replicates)]
    Xa = simulate_euler_batch(ca, kernel, coeffs, grid, seeds_a)
    Xb = simulate_euler_batch(cb, kernel, coeffs, grid, seeds_b)
    from .diagnostics import lp_norm

    diff = Xa - Xb
    dist = np.array([lp_norm(diff[r], 2.0, grid.T) ** 0.5 for r in range(replicates)])
    ms = np.mean(np.sum(diff ** 2, axis=-1), axis=0)
    bound = None
    if lipschitz is not None:
        delta_sq = np.sum((ca(grid.times) - cb(grid.times)) ** 2, axis=-1)
        bound = gronwall_bound(kernel, grid, delta_sq, *lipschitz)
    return UniquenessResult(dist, ms, bound)
