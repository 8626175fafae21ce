"""The martingale-problem generator and its pure-jump approximations.

For a triplet ``(b, a, nu)`` and a compactly supported ``f in C^2`` the
generator acts on the driver variable ``z`` with the state ``x`` frozen::

    A f(x, z) = b(x) . grad f(z) + 1/2 tr(a(x) hess f(z))
                + int (f(z + zeta) - f(z) - zeta . grad f(z)) nu(x, dzeta)

The approximation at level ``n`` (with ``eps = 1/n``) replaces each part of
the triplet by a finite jump measure whose pure-jump generator
``A^n f = int (f(z + zeta) - f(z)) nu^n(x, dzeta)`` converges to the
corresponding part of ``A f``:

* drift: mass ``n`` at ``eps b(x)`` (a forward difference quotient);
* diffusion: mass ``n^2 / 2`` at each of ``+-eps sigma_i(x)``, where
  ``sigma_i`` are the columns of the PSD square root of ``a(x)`` (a central
  second difference);
* jumps: ``(delta_zeta + n delta_{-zeta/n}) phi_n(|zeta|) nu(x, dzeta)``,
  which truncates small and large jumps and adds a compensating drift made
  of many small jumps.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .triplet import (CompositeFamily, JumpFamily, MomentEstimate, Triplet, check_growth,
                      psd_sqrt)

__all__ = [
    "TestFunction",
    "cutoff",
    "DriftAtoms",
    "DiffusionAtoms",
    "TruncatedJumps",
    "ApproximationLevel",
    "approximate_triplet",
    "apply_generator",
    "generator_parts",
    "approximate_generator",
    "generator_constant",
    "uniform_growth_constant",
    "ConvergenceRow",
    "generator_convergence_report",
    "report_to_csv",
]


# ----------------------------------------------------------------------
# test functions
# ----------------------------------------------------------------------


def _smoothstep_down(s):
    """``1 - (10 s^3 - 15 s^4 + 6 s^5)`` clipped to ``[0, 1]``, with first and
    second derivatives in ``s``. Twice continuously differentiable at both ends."""
    s = np.clip(s, 0.0, 1.0)
    val = 1.0 - s ** 3 * (10.0 - 15.0 * s + 6.0 * s ** 2)
    d1 = -30.0 * s ** 2 * (1.0 - s) ** 2
    d2 = -60.0 * s * (1.0 - s) * (1.0 - 2.0 * s)
    return val, d1, d2


@dataclass(frozen=True, eq=False)
class TestFunction:
    """A compactly supported ``C^2`` function on ``R^k`` with analytic derivatives.

    ``value``, ``grad`` and ``hess`` map arrays of shape ``(..., k)`` to shapes
    ``(...)``, ``(..., k)`` and ``(..., k, k)``. ``grad_sup`` and
    ``hess_sup`` are sup-norm bounds (operator norm for the Hessian) estimated
    on a dense sample of the support.
    """

    __test__ = False  # keep pytest from collecting the class

    name: str
    k: int
    value: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]
    support_radius: float
    center: np.ndarray = field(default_factory=lambda: np.zeros(1))
    grad_sup: float = float("nan")
    hess_sup: float = float("nan")

    def __call__(self, z) -> np.ndarray:
        return self.value(np.asarray(z, dtype=float))

    def _with_bounds(self) -> "TestFunction":
        g, h = _estimate_sup_norms(self)
        object.__setattr__(self, "grad_sup", g)
        object.__setattr__(self, "hess_sup", h)
        return self

    def support_check(self, n_dirs: int = 64, seed: int = 0) -> float:
        """Largest ``|f| + |grad f| + |hess f|`` on a sphere just outside the support."""
        rng = np.random.Generator(np.random.Philox(seed))
        dirs = rng.standard_normal((n_dirs, self.k))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        pts = self.center + 1.001 * self.support_radius * dirs
        return float(np.max(np.abs(self.value(pts)) + np.linalg.norm(self.grad(pts), axis=-1)
                            + np.linalg.norm(self.hess(pts), axis=(-2, -1))))

    # constructors -----------------------------------------------------
    @classmethod
    def _radial(cls, name, k, radius, center, profile) -> "TestFunction":
        """``g(|z - c|^2 / R^2)`` for a profile ``g`` with ``g(s) = 0`` for ``s >= 1``.

        ``profile(s)`` returns ``(g, g', g'')`` on ``s < 1``.
        """
        c = np.zeros(k) if center is None else np.asarray(center, dtype=float).reshape(k)
        R2 = float(radius) ** 2

        def parts(z):
            y = np.asarray(z, dtype=float) - c
            s = np.sum(y * y, axis=-1) / R2
            inside = s < 1.0
            g, g1, g2 = profile(np.where(inside, s, 0.0))
            zero = np.zeros_like(s)
            return y, np.where(inside, g, zero), np.where(inside, g1, zero), np.where(inside, g2, zero)

        def value(z):
            return parts(z)[1]

        def grad(z):
            y, _, g1, _ = parts(z)
            return (2.0 * g1 / R2)[..., None] * y

        def hess(z):
            y, _, g1, g2 = parts(z)
            return ((2.0 * g1 / R2)[..., None, None] * np.eye(k)
                    + (4.0 * g2 / R2 ** 2)[..., None, None] * y[..., :, None] * y[..., None, :])

        return cls(name, k, value, grad, hess, float(radius), c)._with_bounds()

    @classmethod
    def bump(cls, k: int = 1, radius: float = 1.0, center=None, height: float = 1.0) -> "TestFunction":
        """``height * exp(1 - 1 / (1 - |z - c|^2 / R^2))`` inside the ball, 0 outside."""

        def profile(s):
            om = 1.0 - s
            g = height * np.exp(1.0 - 1.0 / om)
            return g, -g / om ** 2, g / om ** 4 - 2.0 * g / om ** 3

        return cls._radial(f"bump(R={radius})", k, radius, center, profile)

    @classmethod
    def polynomial_bump(cls, k: int = 1, radius: float = 1.0, power: int = 6, center=None,
                        height: float = 1.0) -> "TestFunction":
        """``height * (1 - |z - c|^2 / R^2)_+^power``; ``C^{power - 1}`` with
        derivatives of moderate size, which keeps difference-quotient errors in
        their asymptotic regime already at small levels."""
        m = int(power)
        if m < 3:
            raise ValueError("power must be at least 3 for a C^2 function")

        def profile(s):
            om = 1.0 - s
            return height * om ** m, -height * m * om ** (m - 1), height * m * (m - 1) * om ** (m - 2)

        return cls._radial(f"polynomial_bump(R={radius}, power={m})", k, radius, center, profile)

    @classmethod
    def cutoff_polynomial(cls, k: int = 1, *, quadratic=None, linear=None, constant: float = 0.0,
                          inner: float = 1.0, outer: float = 2.0, center=None,
                          name: str | None = None) -> "TestFunction":
        """``q(z) * chi(|z - c|)`` with ``q(z) = 1/2 z^T Q z + g^T z + c0``.

        ``chi`` equals one on ``|z - c| <= inner`` and vanishes for
        ``|z - c| >= outer`` (quintic smoothstep in between), so inside the
        inner ball the function is exactly the polynomial ``q``.
        """
        if not 0 < inner < outer:
            raise ValueError("need 0 < inner < outer")
        Q = np.zeros((k, k)) if quadratic is None else np.asarray(quadratic, dtype=float).reshape(k, k)
        g = np.zeros(k) if linear is None else np.asarray(linear, dtype=float).reshape(k)
        Q = 0.5 * (Q + Q.T)
        c = np.zeros(k) if center is None else np.asarray(center, dtype=float).reshape(k)
        width = outer - inner

        def q_parts(z):
            z = np.asarray(z, dtype=float)
            val = 0.5 * np.einsum("...i,ij,...j->...", z, Q, z) + z @ g + constant
            return val, z @ Q + g

        def chi_parts(z):
            y = np.asarray(z, dtype=float) - c
            rho = np.linalg.norm(y, axis=-1)
            val, d1, d2 = _smoothstep_down((rho - inner) / width)
            safe = np.where(rho > 0, rho, 1.0)
            unit = y / safe[..., None]
            grad = (d1 / width)[..., None] * unit
            eye = np.eye(k)
            outer_uu = unit[..., :, None] * unit[..., None, :]
            hess = ((d2 / width ** 2)[..., None, None] * outer_uu
                    + (d1 / width / safe)[..., None, None] * (eye - outer_uu))
            return val, grad, hess

        def value(z):
            return q_parts(z)[0] * chi_parts(z)[0]

        def grad(z):
            qv, qg = q_parts(z)
            cv, cg, _ = chi_parts(z)
            return cv[..., None] * qg + qv[..., None] * cg

        def hess(z):
            qv, qg = q_parts(z)
            cv, cg, ch = chi_parts(z)
            cross = qg[..., :, None] * cg[..., None, :]
            return cv[..., None, None] * Q + cross + np.swapaxes(cross, -1, -2) + qv[..., None, None] * ch

        label = name or f"cutoff_polynomial(inner={inner}, outer={outer})"
        return cls(label, k, value, grad, hess, float(outer), c)._with_bounds()


def _estimate_sup_norms(f: TestFunction, n_radial: int = 400, n_dirs: int = 64) -> tuple[float, float]:
    """Dense radial sampling of the support; the maximum is inflated by 2%
    to cover the gaps between samples."""
    k = f.k
    if k == 1:
        pts = f.center + np.linspace(-f.support_radius, f.support_radius, 8 * n_radial + 1)[:, None]
    else:
        rng = np.random.Generator(np.random.Philox(12345))
        dirs = rng.standard_normal((n_dirs, k))
        dirs = np.concatenate([dirs, np.eye(k), -np.eye(k)])
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        radii = np.linspace(0.0, f.support_radius, n_radial + 1)
        pts = f.center + (radii[:, None, None] * dirs[None]).reshape(-1, k)
    g = np.linalg.norm(f.grad(pts), axis=-1)
    h = np.linalg.norm(f.hess(pts), ord=2, axis=(-2, -1))
    return 1.02 * float(np.max(g)), 1.02 * float(np.max(h))


# ----------------------------------------------------------------------
# the generator
# ----------------------------------------------------------------------


def _jump_integral(nu: JumpFamily | None, f: TestFunction, x, z, *, compensated: bool,
                   n_mc: int = 4000, seed: int = 0) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    shape = np.broadcast_shapes(x.shape[:-1], z.shape[:-1])
    if nu is None:
        return np.zeros(shape)
    if nu.is_atomic:
        w, zeta = nu.atoms(x)
        zz = np.broadcast_to(z, shape + (z.shape[-1],))
        w = np.broadcast_to(w, shape + w.shape[-1:])
        zeta = np.broadcast_to(zeta, shape + zeta.shape[-2:])
        diff = f(zz[..., None, :] + zeta) - f(zz)[..., None]
        if compensated:
            diff = diff - np.einsum("...mk,...k->...m", zeta, f.grad(zz))
        return np.sum(w * diff, axis=-1)
    # non-atomic families: Monte Carlo over the sampling map with fixed seeds
    xb = np.broadcast_to(x, shape + (x.shape[-1],)).reshape(-1, x.shape[-1])
    zb = np.broadcast_to(z, shape + (z.shape[-1],)).reshape(-1, z.shape[-1])
    out = np.empty(len(xb))
    rng = np.random.Generator(np.random.Philox(seed))
    u = rng.random((n_mc, nu.n_uniforms))
    for i, (xi, zi) in enumerate(zip(xb, zb)):
        rate = float(nu.total_intensity(xi))
        if rate == 0:
            out[i] = 0.0
            continue
        draws = np.array([nu.sample_jump(xi, ui) for ui in u])
        diff = f(zi + draws) - f(zi)
        if compensated:
            diff = diff - draws @ f.grad(zi)
        out[i] = rate * float(np.mean(diff))
    return out.reshape(shape)


def generator_parts(triplet: Triplet, f: TestFunction, x, z) -> dict[str, np.ndarray]:
    """The drift, diffusion and jump contributions to ``A f(x, z)``."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    grad = f.grad(z)
    hess = f.hess(z)
    drift = np.einsum("...k,...k->...", triplet.b(x), grad)
    diff = 0.5 * np.einsum("...ij,...ji->...", triplet.a(x), hess)
    jump = _jump_integral(triplet.nu, f, x, z, compensated=True)
    shape = np.broadcast_shapes(drift.shape, diff.shape, jump.shape)
    return {"drift": np.broadcast_to(drift, shape), "diffusion": np.broadcast_to(diff, shape),
            "jump": np.broadcast_to(jump, shape)}


def apply_generator(triplet: Triplet, f: TestFunction, x, z) -> np.ndarray:
    """``A f(x, z)``; vectorized over broadcastable leading axes of ``x`` and ``z``.

    Examples
    --------
    >>> from volterrajump.triplet import HawkesBasis
    >>> tr = Triplet(1, 1, nu=HawkesBasis(["x1"]))
    >>> f = TestFunction.cutoff_polynomial(1, quadratic=[[2.0]], inner=5, outer=6)
    >>> round(float(apply_generator(tr, f, [3.0], [0.5])), 12)
    3.0
    """
    parts = generator_parts(triplet, f, x, z)
    return parts["drift"] + parts["diffusion"] + parts["jump"]


def generator_constant(c_lg: float, f: TestFunction) -> float:
    """``c_f = 2 (1 + c_LG) (|grad f|_inf + 1/2 |hess f|_inf)``, so that
    ``|A f(x, z)| <= c_f (1 + |x|^p)`` under the linear-growth condition."""
    return 2.0 * (1.0 + c_lg) * (f.grad_sup + 0.5 * f.hess_sup)


def uniform_growth_constant(c_lg: float, k: int) -> float:
    """Linear-growth constant ``(5 + 2 sqrt(k)) c_LG`` valid for every level."""
    return (5.0 + 2.0 * math.sqrt(k)) * c_lg


# ----------------------------------------------------------------------
# approximating jump families
# ----------------------------------------------------------------------


def cutoff(n: int, t) -> np.ndarray:
    """Hat cutoff: 0 on ``[0, 1/n]`` and ``[n, inf)``, 1 on ``[2/n, n/2]``,
    linear in between. Nondecreasing in ``n``."""
    t = np.asarray(t, dtype=float)
    return np.clip(np.minimum(n * t - 1.0, 2.0 - 2.0 * t / n), 0.0, 1.0)


class DriftAtoms(JumpFamily):
    """Mass ``n`` at ``b(x) / n``. A zero drift gives null events."""

    def __init__(self, triplet: Triplet, n: int):
        self.triplet, self.n, self.k = triplet, int(n), triplet.k
        self.n_uniforms = 1
        self.constant_intensity = float(n)

    def total_intensity(self, x):
        return np.full(np.shape(x)[:-1], float(self.n))

    def atoms(self, x):
        x = np.asarray(x, dtype=float)
        b = self.triplet.b(x)
        return np.full(x.shape[:-1] + (1,), float(self.n)), (b / self.n)[..., None, :]

    def sample_jump(self, x, u):
        return self.triplet.b(np.asarray(x, dtype=float)) / self.n


class DiffusionAtoms(JumpFamily):
    """Mass ``n^2 / 2`` at each of ``+-sigma_i(x) / n``, ``i = 1..k``."""

    def __init__(self, triplet: Triplet, n: int):
        self.triplet, self.n, self.k = triplet, int(n), triplet.k
        self.n_uniforms = 1
        self.constant_intensity = float(triplet.k * n * n)

    def total_intensity(self, x):
        return np.full(np.shape(x)[:-1], self.constant_intensity)

    def atoms(self, x):
        x = np.asarray(x, dtype=float)
        sig = self.triplet.sigma(x)  # (..., k, k); columns are sigma_i
        cols = np.swapaxes(sig, -1, -2) / self.n
        z = np.concatenate([cols, -cols], axis=-2)
        w = np.full(x.shape[:-1] + (2 * self.k,), 0.5 * self.n ** 2)
        return w, z

    def sample_jump(self, x, u):
        idx = min(int(u[0] * 2 * self.k), 2 * self.k - 1)
        sig = self.triplet.sigma(np.asarray(x, dtype=float))
        col = sig[:, idx % self.k] / self.n
        return col if idx < self.k else -col


class TruncatedJumps(JumpFamily):
    """``(delta_zeta + n delta_{-zeta/n}) phi_n(|zeta|) nu(x, dzeta)``.

    Sampling draws ``zeta`` from ``nu``, keeps it with probability
    ``phi_n(|zeta|)`` (otherwise a null event), and emits ``zeta`` or the
    compensating ``-zeta/n`` with odds ``1 : n``.
    """

    def __init__(self, nu: JumpFamily, n: int):
        self.nu, self.n, self.k = nu, int(n), nu.k
        self.is_atomic = nu.is_atomic
        self.n_uniforms = 2 + nu.n_uniforms
        self.constant_intensity = None if nu.constant_intensity is None else (1 + n) * nu.constant_intensity

    def total_intensity(self, x):
        return (1 + self.n) * self.nu.total_intensity(x)

    def atoms(self, x):
        w, z = self.nu.atoms(x)
        phi = cutoff(self.n, np.linalg.norm(z, axis=-1))
        return np.concatenate([w * phi, self.n * w * phi], axis=-1), np.concatenate([z, -z / self.n], axis=-2)

    def sample_jump(self, x, u):
        zeta = self.nu.sample_jump(x, u[2:])
        if u[0] >= cutoff(self.n, np.linalg.norm(zeta)):
            return np.zeros(self.k)
        return zeta if u[1] * (1 + self.n) < 1.0 else -zeta / self.n

    def moment(self, x, q, *, truncated=False, n_mc=20_000, seed=0):
        if self.is_atomic:
            return super().moment(x, q, truncated=truncated)
        rng = np.random.Generator(np.random.Philox(seed))
        x = np.asarray(x, dtype=float)
        rate = float(self.nu.total_intensity(x))
        if rate == 0:
            return MomentEstimate(0.0)
        zs = np.array([self.nu.sample_jump(x, u) for u in rng.random((n_mc, self.nu.n_uniforms))])
        r = np.linalg.norm(zs, axis=1)
        phi = cutoff(self.n, r)
        if truncated:
            vals = phi * (np.minimum(1, r ** 2) + self.n * np.minimum(1, (r / self.n) ** 2))
        else:
            vals = phi * r ** q * (1 + self.n ** (1 - q))
        return MomentEstimate(rate * float(vals.mean()), rate * float(vals.std(ddof=1)) / math.sqrt(n_mc))

    def first_moment(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (self.k,))


@dataclass(frozen=True, eq=False)
class ApproximationLevel:
    """Level-``n`` pure-jump approximation of a triplet.

    ``family`` is a :class:`CompositeFamily` with parts tagged ``drift``,
    ``diffusion`` and ``jump`` (absent parts are omitted). ``triplet`` is the
    corresponding pure-jump triplet with ``b^n = int zeta nu^n``.
    """

    n: int
    source: Triplet
    family: CompositeFamily
    triplet: Triplet

    @property
    def eps(self) -> float:
        return 1.0 / self.n

    @property
    def parts(self) -> tuple[str, ...]:
        return tuple(tag for tag, _ in self.family.parts)

    def cutoff(self, t) -> np.ndarray:
        return cutoff(self.n, t)


def approximate_triplet(triplet: Triplet, n: int, *, probes: np.ndarray | None = None) -> ApproximationLevel:
    """Build the level-``n`` pure-jump approximation.

    ``probes`` (optional) are states at which ``a(x)`` is checked to be PSD
    up front, so a bad diffusion coefficient is reported before simulation.
    """
    n = int(n)
    if n < 1:
        raise ValueError("approximation level must be at least 1")
    parts: list[tuple[str, JumpFamily]] = []
    if triplet.has_drift:
        parts.append(("drift", DriftAtoms(triplet, n)))
    if triplet.has_diffusion:
        if probes is not None:
            pts = np.asarray(probes, dtype=float).reshape(-1, triplet.d)
            psd_sqrt(triplet.a(pts), where=pts)
        parts.append(("diffusion", DiffusionAtoms(triplet, n)))
    if triplet.nu is not None:
        parts.append(("jump", TruncatedJumps(triplet.nu, n)))
    fam = CompositeFamily(parts, triplet.k)
    return ApproximationLevel(n, triplet, fam, Triplet.pure_jump(fam, triplet.d, triplet.p))


def approximate_generator(level: ApproximationLevel, f: TestFunction, x, z, *,
                          part: str | None = None) -> np.ndarray:
    """``A^n f(x, z) = int (f(z + zeta) - f(z)) nu^n(x, dzeta)``, optionally
    restricted to one tagged part."""
    fams = level.family.parts if part is None else [(part, level.family.part(part))]
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    total = np.zeros(np.broadcast_shapes(x.shape[:-1], z.shape[:-1]))
    for _, fam in fams:
        total = total + _jump_integral(fam, f, x, z, compensated=False)
    return total


@dataclass(frozen=True)
class ConvergenceRow:
    level: int
    part: str
    sup_error: float


def generator_convergence_report(triplet: Triplet, f: TestFunction, levels: Sequence[int],
                                 probe_box: tuple[np.ndarray, np.ndarray]) -> list[ConvergenceRow]:
    """Sup over probe pairs of ``|A^n f - A f|`` per level and per part.

    Parameters
    ----------
    probe_box : (xs, zs)
        State probes of shape ``(m, d)`` and driver probes of shape
        ``(q, k)``; every pair is evaluated.
    """
    xs = np.asarray(probe_box[0], dtype=float).reshape(-1, triplet.d)
    zs = np.asarray(probe_box[1], dtype=float).reshape(-1, triplet.k)
    X = xs[:, None, :]
    Zp = zs[None, :, :]
    exact = generator_parts(triplet, f, X, Zp)
    exact_total = exact["drift"] + exact["diffusion"] + exact["jump"]
    rows: list[ConvergenceRow] = []
    for n in levels:
        lvl = approximate_triplet(triplet, n)
        total = np.zeros_like(exact_total)
        for tag in lvl.parts:
            approx = approximate_generator(lvl, f, X, Zp, part=tag)
            total = total + approx
            rows.append(ConvergenceRow(int(n), tag, float(np.max(np.abs(approx - exact[tag])))))
        rows.append(ConvergenceRow(int(n), "total", float(np.max(np.abs(total - exact_total)))))
    return rows


def report_to_csv(rows: Sequence[ConvergenceRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["level", "part", "sup_error"])
    for r in rows:
        w.writerow([r.level, r.part, format(r.sup_error, ".17g")])
    return buf.getvalue()


def check_uniform_growth(level: ApproximationLevel, c_lg: float, probes=None):
    """Linear-growth check of the level-``n`` family with the uniform constant."""
    return check_growth(level.triplet, "linear_growth", uniform_growth_constant(c_lg, level.source.k), probes)
