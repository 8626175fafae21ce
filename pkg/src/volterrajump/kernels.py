"""Convolution kernels ``K: [0, inf) -> R^{d x k}`` and their analysis.

Supported families
------------------
``fractional``           ``scale * t**(gamma - 1)`` (no Gamma-function prefactor)
``dampened_fractional``  ``scale * t**(gamma - 1) * exp(-beta t)``
``exponential_sum``      ``sum_i c_i exp(-lambda_i t)``
``lipschitz_tabulated``  piecewise-linear interpolation of tabulated values
``constant``             a fixed matrix

Besides pointwise evaluation every family provides the exact antiderivatives

* ``integral(u)        = int_0^u K(s) ds``
* ``moment_integral(u) = int_0^u s K(s) ds``
* ``double_integral(u) = int_0^u int_0^r K(s) ds dr = u I(u) - moment_integral(u)``

which drive exact convolution against step functions, exact Euler weights
and the integrated-path identity checks in :mod:`volterrajump.engine`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from scipy import integrate, special

from .quadrature import graded_nodes, integrate_graded

__all__ = [
    "KernelDomainError",
    "Kernel",
    "StepFunction",
    "RegularityCertificate",
    "ResolventTable",
    "ResolventStepError",
    "ExponentialFit",
    "evaluate_kernel",
    "slobodeckij_certificate",
    "convolve",
    "resolvent",
    "resolvent_residual",
    "fit_exponential_sum",
    "kernel_lp_distance",
]

FAMILIES = ("fractional", "dampened_fractional", "exponential_sum", "lipschitz_tabulated", "constant")


class KernelDomainError(ValueError):
    """Raised when a kernel is evaluated outside its domain."""


def _phi1(x: np.ndarray) -> np.ndarray:
    """``(1 - exp(-x)) / x`` with the removable singularity filled in."""
    x = np.asarray(x, dtype=float)
    out = np.ones_like(x)
    nz = np.abs(x) > 1e-12
    out[nz] = -np.expm1(-x[nz]) / x[nz]
    return out


def _phi2(x: np.ndarray) -> np.ndarray:
    """``(1 - exp(-x)(1 + x)) / x**2``, accurate near zero."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = np.abs(x) < 1e-3
    xs = x[small]
    out[small] = 0.5 - xs / 3.0 + xs ** 2 / 8.0 - xs ** 3 / 30.0
    xl = x[~small]
    out[~small] = (-np.expm1(-xl) - xl * np.exp(-xl)) / xl ** 2
    return out


def _as_matrix(value, dims=None) -> np.ndarray:
    m = np.asarray(value, dtype=float)
    if m.ndim == 0:
        m = m.reshape(1, 1) if dims is None else m * np.eye(dims[0], dims[1])
    if m.ndim != 2:
        raise ValueError("kernel matrices must be two-dimensional")
    return m


@dataclass(frozen=True, eq=False)
class Kernel:
    """A matrix-valued convolution kernel.

    Use the family constructors (:meth:`fractional`, :meth:`exponential_sum`,
    ...) rather than calling the class directly.

    Attributes
    ----------
    family : str
        One of ``fractional``, ``dampened_fractional``, ``exponential_sum``,
        ``lipschitz_tabulated``, ``constant``.
    params : mapping
        Family parameters; arrays are stored read-only.
    dims : (int, int)
        ``(d, k)``: the kernel maps ``R^k`` driver increments to ``R^d``.
    horizon : float or None
        Largest time the kernel is meant to be used on (informational).
    """

    family: str
    params: Mapping[str, Any]
    dims: tuple[int, int]
    horizon: float | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    # ------------------------------------------------------------------ build
    @classmethod
    def fractional(cls, gamma: float, scale=1.0, horizon=None) -> "Kernel":
        if not gamma > 0.5:
            raise ValueError(f"fractional kernel needs gamma > 1/2, got {gamma}")
        s = _as_matrix(scale)
        return cls._make("fractional", {"gamma": float(gamma), "scale": s}, s.shape, horizon)

    @classmethod
    def dampened_fractional(cls, gamma: float, beta: float, scale=1.0, horizon=None) -> "Kernel":
        if not gamma > 0.5:
            raise ValueError(f"dampened fractional kernel needs gamma > 1/2, got {gamma}")
        if not beta >= 0:
            raise ValueError("dampening rate must be nonnegative")
        s = _as_matrix(scale)
        return cls._make("dampened_fractional", {"gamma": float(gamma), "beta": float(beta), "scale": s},
                         s.shape, horizon)

    @classmethod
    def exponential_sum(cls, coeffs, rates, horizon=None) -> "Kernel":
        rates = np.atleast_1d(np.asarray(rates, dtype=float))
        c = np.asarray(coeffs, dtype=float)
        if c.ndim == 1:
            c = c[:, None, None]
        elif c.ndim == 2 and len(rates) == 1 and c.shape[0] != 1:
            c = c[None]
        if c.ndim != 3 or c.shape[0] != len(rates):
            raise ValueError("coeffs must have shape (m, d, k) matching the rates")
        if not np.all(np.isfinite(rates)) or np.any(rates < 0):
            raise ValueError("exponential rates must be finite and nonnegative")
        return cls._make("exponential_sum", {"coeffs": c, "rates": rates}, c.shape[1:], horizon)

    @classmethod
    def lipschitz_tabulated(cls, grid, values, lipschitz_const=None, horizon=None) -> "Kernel":
        g = np.asarray(grid, dtype=float)
        v = np.asarray(values, dtype=float)
        if v.ndim == 1:
            v = v[:, None, None]
        if g.ndim != 1 or len(g) < 2 or g[0] != 0.0 or np.any(np.diff(g) <= 0):
            raise ValueError("tabulated grid must start at 0 and be strictly increasing")
        if v.shape[0] != len(g) or v.ndim != 3:
            raise ValueError("values must have shape (len(grid), d, k)")
        slopes = np.linalg.norm(np.diff(v, axis=0).reshape(len(g) - 1, -1), axis=1) / np.diff(g)
        lip = float(slopes.max())
        if lipschitz_const is not None and lip > float(lipschitz_const) * (1 + 1e-12):
            raise ValueError(f"tabulated values have Lipschitz constant {lip} > declared {lipschitz_const}")
        return cls._make("lipschitz_tabulated",
                         {"grid": g, "values": v, "lipschitz_const": float(lipschitz_const if lipschitz_const is not None else lip)},
                         v.shape[1:], horizon)

    @classmethod
    def constant(cls, matrix=1.0, horizon=None) -> "Kernel":
        m = _as_matrix(matrix)
        return cls._make("constant", {"matrix": m}, m.shape, horizon)

    @classmethod
    def _make(cls, family, params, dims, horizon):
        frozen = {}
        for key, val in params.items():
            if isinstance(val, np.ndarray):
                val = val.copy()
                val.setflags(write=False)
            frozen[key] = val
        return cls(family, frozen, (int(dims[0]), int(dims[1])), None if horizon is None else float(horizon))

    # ------------------------------------------------------------ properties
    @property
    def singular_at_zero(self) -> bool:
        return self.family in ("fractional", "dampened_fractional") and self.params["gamma"] < 1.0

    @property
    def is_exponential_sum(self) -> bool:
        return self.family == "exponential_sum"

    def breakpoints(self) -> np.ndarray:
        """Interior points where the kernel is not smooth (tabulated grids)."""
        if self.family == "lipschitz_tabulated":
            return np.asarray(self.params["grid"][1:-1])
        return np.empty(0)

    # ------------------------------------------------------------ evaluation
    def __call__(self, t) -> np.ndarray:
        """``K(t)`` with shape ``np.shape(t) + (d, k)``."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise KernelDomainError("kernel evaluated at negative time")
        if self.singular_at_zero and np.any(t == 0):
            raise KernelDomainError(
                f"{self.family} kernel with gamma={self.params['gamma']} is singular at t=0")
        return self._profile_matrix(t)

    def _profile_matrix(self, t: np.ndarray) -> np.ndarray:
        fam, p = self.family, self.params
        if fam in ("fractional", "dampened_fractional"):
            with np.errstate(divide="ignore"):
                prof = t ** (p["gamma"] - 1.0)
            if fam == "dampened_fractional":
                prof = prof * np.exp(-p["beta"] * t)
            return prof[..., None, None] * p["scale"]
        if fam == "exponential_sum":
            e = np.exp(-np.multiply.outer(t, p["rates"]))
            return np.tensordot(e, p["coeffs"], axes=(-1, 0))
        if fam == "lipschitz_tabulated":
            return self._interp(t)
        return np.broadcast_to(p["matrix"], t.shape + self.dims).copy()

    def _interp(self, t):
        g, v = self.params["grid"], self.params["values"]
        flat = v.reshape(len(g), -1)
        out = np.stack([np.interp(t, g, flat[:, j]) for j in range(flat.shape[1])], axis=-1)
        return out.reshape(np.shape(t) + self.dims)

    def scalar(self, t) -> np.ndarray:
        """Evaluate a ``1 x 1`` kernel as a plain array."""
        if self.dims != (1, 1):
            raise ValueError("scalar() needs a 1x1 kernel")
        return self(t)[..., 0, 0]

    def frobenius(self, t) -> np.ndarray:
        """``|K(t)|`` in the Frobenius norm."""
        t = np.asarray(t, dtype=float)
        return np.sqrt(np.sum(self._profile_matrix(t) ** 2, axis=(-2, -1)))

    # ----------------------------------------------------- antiderivatives
    def integral(self, u) -> np.ndarray:
        """``int_0^u K(s) ds``; zero for ``u <= 0``."""
        u = np.maximum(np.asarray(u, dtype=float), 0.0)
        fam, p = self.family, self.params
        if fam == "fractional":
            g = p["gamma"]
            return (u ** g / g)[..., None, None] * p["scale"]
        if fam == "dampened_fractional":
            g, b = p["gamma"], p["beta"]
            if b == 0:
                prof = u ** g / g
            else:
                prof = special.gamma(g) * special.gammainc(g, b * u) / b ** g
            return prof[..., None, None] * p["scale"]
        if fam == "exponential_sum":
            lam = p["rates"]
            prof = u[..., None] * _phi1(np.multiply.outer(u, lam))
            return np.tensordot(prof, p["coeffs"], axes=(-1, 0))
        if fam == "lipschitz_tabulated":
            return self._tab_antiderivative(u, moment=False)
        return u[..., None, None] * p["matrix"]

    def moment_integral(self, u) -> np.ndarray:
        """``int_0^u s K(s) ds``; zero for ``u <= 0``."""
        u = np.maximum(np.asarray(u, dtype=float), 0.0)
        fam, p = self.family, self.params
        if fam == "fractional":
            g = p["gamma"]
            return (u ** (g + 1) / (g + 1))[..., None, None] * p["scale"]
        if fam == "dampened_fractional":
            g, b = p["gamma"], p["beta"]
            if b == 0:
                prof = u ** (g + 1) / (g + 1)
            else:
                prof = special.gamma(g + 1) * special.gammainc(g + 1, b * u) / b ** (g + 1)
            return prof[..., None, None] * p["scale"]
        if fam == "exponential_sum":
            lam = p["rates"]
            prof = (u ** 2)[..., None] * _phi2(np.multiply.outer(u, lam))
            return np.tensordot(prof, p["coeffs"], axes=(-1, 0))
        if fam == "lipschitz_tabulated":
            return self._tab_antiderivative(u, moment=True)
        return (0.5 * u ** 2)[..., None, None] * p["matrix"]

    def double_integral(self, u) -> np.ndarray:
        """``int_0^u int_0^r K(s) ds dr = u I(u) - int_0^u s K(s) ds``."""
        u = np.maximum(np.asarray(u, dtype=float), 0.0)
        return u[..., None, None] * self.integral(u) - self.moment_integral(u)

    def _tab_antiderivative(self, u, moment):
        key = ("tab_cum", moment)
        g = self.params["grid"]
        v = self.params["values"].reshape(len(g), -1)
        a, b = g[:-1], g[1:]
        va, vb = v[:-1], v[1:]
        slope = (vb - va) / (b - a)[:, None]

        def seg(lo, hi, va_, slope_, a_):
            # integrate (va + slope (s - a)) * s**moment over [lo, hi]
            if not moment:
                return va_ * (hi - lo)[..., None] + slope_ * (0.5 * ((hi - a_) ** 2 - (lo - a_) ** 2))[..., None]
            c0 = va_ - slope_ * a_[..., None]
            return c0 * (0.5 * (hi ** 2 - lo ** 2))[..., None] + slope_ * ((hi ** 3 - lo ** 3) / 3.0)[..., None]

        if key not in self._cache:
            cells = seg(a, b, va, slope, a)
            self._cache[key] = np.vstack([np.zeros((1, v.shape[1])), np.cumsum(cells, axis=0)])
        cum = self._cache[key]
        idx = np.clip(np.searchsorted(g, u, side="right") - 1, 0, len(g) - 2)
        lo = g[idx]
        hi = np.minimum(u, g[-1])
        part = seg(lo, hi, va[idx], slope[idx], lo)
        out = cum[idx] + part
        beyond = u > g[-1]
        if np.any(beyond):
            vl = v[-1]
            extra = (u - g[-1]) if not moment else 0.5 * (u ** 2 - g[-1] ** 2)
            out = out + np.where(beyond[..., None], extra[..., None] * vl, 0.0)
        return out.reshape(np.shape(u) + self.dims)

    # --------------------------------------------------------- transforms
    def time_scaled(self, factor: float, left=None, right=None) -> "Kernel":
        """Kernel ``t -> left @ K(t / factor) @ right``.

        ``left`` and ``right`` default to identities. Used for the Hawkes
        rescaling, where the level-``n`` kernel is ``eps^{-1} K(t/n) eps``.
        """
        L = np.eye(self.dims[0]) if left is None else _as_matrix(left)
        R = np.eye(self.dims[1]) if right is None else _as_matrix(right)
        fam, p = self.family, self.params
        f = float(factor)
        if fam == "fractional":
            return Kernel.fractional(p["gamma"], L @ p["scale"] @ R * f ** (1 - p["gamma"]), self.horizon)
        if fam == "dampened_fractional":
            return Kernel.dampened_fractional(p["gamma"], p["beta"] / f,
                                              L @ p["scale"] @ R * f ** (1 - p["gamma"]), self.horizon)
        if fam == "exponential_sum":
            return Kernel.exponential_sum(L @ p["coeffs"] @ R, p["rates"] / f, self.horizon)
        if fam == "lipschitz_tabulated":
            return Kernel.lipschitz_tabulated(p["grid"] * f, L @ p["values"] @ R, None, self.horizon)
        return Kernel.constant(L @ p["matrix"] @ R, self.horizon)

    # -------------------------------------------------------------- JSON
    def to_json(self) -> dict:
        params = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.params.items()}
        out = {"family": self.family, "params": params, "dims": list(self.dims)}
        if self.horizon is not None:
            out["horizon"] = self.horizon
        return out

    @classmethod
    def from_json(cls, obj: Mapping | str) -> "Kernel":
        if isinstance(obj, str):
            obj = json.loads(obj)
        if not isinstance(obj, Mapping):
            raise ValueError("kernel definition must be a JSON object")
        fam = obj.get("family")
        if fam not in FAMILIES:
            raise ValueError(f"unknown kernel family {fam!r}; expected one of {', '.join(FAMILIES)}")
        params = dict(obj.get("params", {}))
        horizon = obj.get("horizon")
        try:
            if fam == "fractional":
                k = cls.fractional(params["gamma"], params.get("scale", 1.0), horizon)
            elif fam == "dampened_fractional":
                k = cls.dampened_fractional(params["gamma"], params["beta"], params.get("scale", 1.0), horizon)
            elif fam == "exponential_sum":
                k = cls.exponential_sum(params["coeffs"], params["rates"], horizon)
            elif fam == "lipschitz_tabulated":
                k = cls.lipschitz_tabulated(params["grid"], params["values"], params.get("lipschitz_const"), horizon)
            else:
                k = cls.constant(params.get("matrix", 1.0), horizon)
        except KeyError as exc:
            raise ValueError(f"{fam} kernel is missing parameter {exc.args[0]!r}") from None
        dims = obj.get("dims")
        if dims is not None and tuple(dims) != k.dims:
            raise ValueError(f"declared dims {list(dims)} do not match parameters {list(k.dims)}")
        return k

    def __repr__(self):
        return f"Kernel({self.family}, dims={self.dims})"


def evaluate_kernel(kernel: Kernel, t) -> np.ndarray:
    """``K(t)``; raises :class:`KernelDomainError` at a singular origin."""
    return kernel(t)


# ======================================================================
# regularity certificate
# ======================================================================


@dataclass(frozen=True)
class RegularityCertificate:
    """Values of the two integrals controlling kernel regularity.

    ``value_singular_integral`` is ``int_0^T |K(t)|^p t^{-eta p} dt`` and
    ``value_slobodeckij_integral`` is the double integral of
    ``|K(t) - K(s)|^p / |t - s|^{1 + eta p}`` over ``[0, T]^2``.
    """

    p: float
    eta: float
    horizon: float
    value_singular_integral: float
    value_slobodeckij_integral: float
    c_K_bound: float
    method: str
    quadrature_error_estimate: float
    diagnostic: str = ""

    @property
    def finite(self) -> bool:
        return bool(np.isfinite(self.value_singular_integral) and np.isfinite(self.value_slobodeckij_integral))

    def to_json(self) -> dict:
        def enc(x):
            if isinstance(x, float) and not math.isfinite(x):
                return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
            return x
        return {k: enc(getattr(self, k)) for k in (
            "p", "eta", "horizon", "value_singular_integral", "value_slobodeckij_integral",
            "c_K_bound", "method", "quadrature_error_estimate", "diagnostic")}


def _fractional_difference_constant(gamma: float, eta: float, p: float) -> tuple[float, float]:
    """``int_0^1 |u^{gamma-1} - 1|^p (1-u)^{-1-eta p} du`` via algebraic-weight quadrature."""
    if gamma == 1.0:
        return 0.0, 0.0
    lo_exp = min((gamma - 1.0) * p, 0.0)
    hi_exp = p - 1.0 - eta * p

    def smooth(u):
        # |u^{g-1} - 1|^p / (1-u)^p * u^{-lo_exp}, with its limits at both ends
        if u <= 0.0:
            return 1.0
        if u >= 1.0:
            return abs(gamma - 1.0) ** p
        q = math.expm1((gamma - 1.0) * math.log(u)) / (1.0 - u)
        return abs(q) ** p * u ** (-lo_exp)

    val, err = integrate.quad(smooth, 0.0, 1.0, weight="alg", wvar=(lo_exp, hi_exp),
                              epsabs=0.0, epsrel=1e-12, limit=200)
    return val, err


def slobodeckij_certificate(kernel: Kernel, p: float, eta: float, T: float, *,
                            method: str = "auto", levels: int = 40) -> RegularityCertificate:
    """Certify the integrability conditions of ``kernel`` on ``[0, T]``.

    Parameters
    ----------
    kernel : Kernel
    p : float
        Integrability exponent, ``p >= 2``.
    eta : float
        Fractional smoothness in ``(0, 1)``.
    T : float
        Horizon.
    method : {"auto", "closed_form", "quadrature"}
        ``auto`` uses closed forms for the fractional and constant families
        and graded quadrature otherwise.

    Returns
    -------
    RegularityCertificate
        Divergent integrals are reported as ``inf`` with a diagnostic.
    """
    if not p >= 2:
        raise ValueError("p must be at least 2")
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    if not T > 0:
        raise ValueError("horizon must be positive")
    has_closed = kernel.family in ("fractional", "constant")
    if method == "auto":
        method = "closed_form" if has_closed else "quadrature"
    if method == "closed_form":
        if not has_closed:
            raise ValueError(f"no closed form for the {kernel.family} family")
        first, second, err, diag = _closed_form_certificate(kernel, p, eta, T)
    elif method == "quadrature":
        first, second, err, diag = _quadrature_certificate(kernel, p, eta, T, levels)
    else:
        raise ValueError(f"unknown method {method!r}")
    total = first + second
    return RegularityCertificate(float(p), float(eta), float(T), float(first), float(second),
                                 float(total + err), method, float(err), diag)


def _decimal(x) -> Fraction:
    """The shortest decimal representation of a float, as an exact rational."""
    return Fraction(repr(float(x)))


def _closed_form_certificate(kernel, p, eta, T):
    if kernel.family == "constant":
        norm = np.linalg.norm(kernel.params["matrix"])
        e = -eta * p
        if norm == 0:
            return 0.0, 0.0, 0.0, ""
        if e <= -1:
            return math.inf, 0.0, math.inf, "singular integral diverges: eta*p >= 1"
        return norm ** p * T ** (e + 1) / (e + 1), 0.0, 0.0, ""
    g = kernel.params["gamma"]
    norm = np.linalg.norm(kernel.params["scale"])
    # exponent arithmetic on the decimal values, so that e.g. gamma = 0.75,
    # p = 2, eta = 0.2 gives e + 1 = 1/10 exactly instead of 0.09999999999999998
    e_plus_one = 1 + (_decimal(g) - 1) * _decimal(p) - _decimal(eta) * _decimal(p)
    e = float(e_plus_one - 1)
    diag = []
    if e_plus_one <= 0:
        first = math.inf
        diag.append(f"singular integral diverges: (gamma-1-eta)p = {e:.6g} <= -1")
    else:
        first = norm ** p * T ** float(e_plus_one) / float(e_plus_one)
    if (g - 1.0) * p <= -1:
        second = math.inf
        diag.append(f"difference integral diverges at the origin: (gamma-1)p = {(g - 1) * p:.6g} <= -1")
        err = math.inf
    else:
        c, c_err = _fractional_difference_constant(g, eta, p)
        if e_plus_one <= 0 and c > 0:
            second = math.inf
            err = math.inf
            if "singular" not in " ".join(diag):
                diag.append("difference integral diverges in t")
        else:
            scale = 2.0 * norm ** p * T ** float(e_plus_one) / float(e_plus_one) if c > 0 else 0.0
            second = scale * c
            err = scale * c_err
    return first, second, err, "; ".join(diag)


def _quadrature_certificate(kernel, p, eta, T, levels):
    bps = [b for b in kernel.breakpoints() if 0 < b < T]
    ep = eta * p

    def first_integrand(t):
        return kernel.frobenius(t) ** p * t ** (-ep)

    first, err1 = integrate_graded(first_integrand, 0.0, T, left=True, levels=levels, breakpoints=bps)

    # second integral: 2 int_0^T t^{-eta p} int_0^1 |K(t) - K(tu)|^p (1-u)^{-1-eta p} du dt
    inner = graded_nodes(0.0, 1.0, left=True, right=True, levels=2 * levels + 20, right_levels=levels)
    u = inner.nodes
    weight_u = (1.0 - u) ** (-1.0 - ep)

    def outer_integrand(t):
        t = np.asarray(t, dtype=float)
        out = np.empty((len(t), 2))
        chunk = max(1, 2_000_000 // (len(u) * kernel.dims[0] * kernel.dims[1]))
        for i in range(0, len(t), chunk):
            tt = t[i:i + chunk]
            kt = kernel._profile_matrix(tt)[:, None]
            ktu = kernel._profile_matrix(np.multiply.outer(tt, u))
            absdiff = np.sqrt(np.sum((kt - ktu) ** 2, axis=(-2, -1)))
            # differences below the cancellation floor are pure roundoff
            floor = 16.0 * np.finfo(float).eps * np.maximum(
                np.sqrt(np.sum(kt ** 2, axis=(-2, -1))), np.sqrt(np.sum(ktu ** 2, axis=(-2, -1))))
            absdiff = np.where(absdiff <= floor, 0.0, absdiff)
            diff = absdiff ** p * weight_u[None, :]
            val, err = inner.reduce(diff.T)
            out[i:i + chunk, 0] = val * tt ** (-ep)
            out[i:i + chunk, 1] = err * tt ** (-ep)
        return out

    outer = graded_nodes(0.0, T, left=True, levels=levels, breakpoints=bps)
    vals = outer_integrand(outer.nodes)
    second_half, err_outer = outer.reduce(vals[:, 0])
    inner_err, _ = outer.reduce(vals[:, 1])
    second = 2.0 * float(second_half)
    err2 = 2.0 * (float(err_outer) + abs(float(inner_err)))
    diag = []
    if not np.isfinite(first):
        diag.append("singular integral diverges near t=0 (local power-law fit exponent <= -1)")
    if not np.isfinite(second):
        diag.append("difference integral diverges (local power-law fit exponent <= -1)")
        err2 = math.inf
    return first, second, err1 + err2, "; ".join(diag)


# ======================================================================
# convolution
# ======================================================================


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous step function with values in ``R^k``.

    ``values[i]`` holds on ``[knots[i], knots[i+1])``; the last value extends
    to infinity and the function is zero before ``knots[0]``.
    """

    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if knots.ndim != 1 or len(knots) != len(values):
            raise ValueError("one value per knot is required")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_jumps(cls, times, jumps, k=None) -> "StepFunction":
        """Cumulative sum of jumps: ``Z_t = sum_{T_n <= t} J_n``."""
        times = np.asarray(times, dtype=float)
        jumps = np.asarray(jumps, dtype=float)
        if jumps.ndim == 1:
            jumps = jumps[:, None]
        if len(times) == 0:
            kk = k if k is not None else (jumps.shape[1] if jumps.ndim == 2 else 1)
            return cls(np.array([0.0]), np.zeros((1, kk)))
        return cls(times, np.cumsum(jumps, axis=0))

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.knots, t, side="right") - 1
        padded = np.vstack([np.zeros((1, self.values.shape[1])), self.values])
        return padded[idx + 1]

    def left_limit(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.knots, t, side="left") - 1
        padded = np.vstack([np.zeros((1, self.values.shape[1])), self.values])
        return padded[idx + 1]


def convolve(kernel: Kernel, path, T: float, h: float) -> tuple[np.ndarray, np.ndarray]:
    """``t -> int_0^t K(t - s) path(s) ds`` on the uniform grid ``0, h, ..., T``.

    Step-function paths are convolved exactly through the kernel
    antiderivative. Callables are handled by product integration: the path
    is frozen at cell midpoints and the kernel is integrated exactly over
    each cell.

    Returns
    -------
    times : ndarray, shape (M+1,)
    values : ndarray, shape (M+1, d)
    """
    M = int(round(T / h))
    if M < 1 or not math.isclose(M * h, T, rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError("T must be a positive multiple of h")
    times = np.linspace(0.0, T, M + 1)
    if isinstance(path, StepFunction):
        knots, vals = path.knots, path.values
        ends = np.append(knots[1:], np.inf)
        # contribution of segment i at time t: [I(t - a_i) - I(t - min(b_i, t))] v_i
        lo = times[:, None] - knots[None, :]
        hi = times[:, None] - np.minimum(ends[None, :], times[:, None])
        w = kernel.integral(lo) - kernel.integral(hi)  # (M+1, n, d, k)
        out = np.einsum("mndk,nk->md", w, vals)
        return times, out
    if not callable(path):
        raise TypeError("path must be a StepFunction or a callable")
    mids = times[:-1] + 0.5 * h
    zm = np.asarray(path(mids), dtype=float)
    if zm.ndim == 1:
        zm = zm[:, None]
    cum = kernel.integral(times)  # I(m h)
    # cell j contributes I(t_m - t_j) - I(t_m - t_{j+1}) = cum[m-j] - cum[m-j-1]
    cell = cum[1:] - cum[:-1]  # index l = m - j - 1 >= 0
    out = np.zeros((M + 1, kernel.dims[0]))
    for m in range(1, M + 1):
        out[m] = np.einsum("jdk,jk->d", cell[:m][::-1], zm[:m])
    return times, out


def kernel_lp_distance(k1: Kernel, k2: Kernel, T: float, p: float = 2.0, levels: int = 40) -> float:
    """``(int_0^T |K1 - K2|^p dt)^{1/p}`` by graded quadrature."""
    bps = sorted(set(k1.breakpoints()) | set(k2.breakpoints()))

    def f(t):
        d = k1._profile_matrix(t) - k2._profile_matrix(t)
        return np.sqrt(np.sum(d ** 2, axis=(-2, -1))) ** p

    val, _ = integrate_graded(f, 0.0, T, left=True, levels=levels, breakpoints=[b for b in bps if 0 < b < T])
    return float(val) ** (1.0 / p)


# ======================================================================
# resolvent
# ======================================================================


class ResolventStepError(RuntimeError):
    """The discrete resolvent recursion is unstable at the given step."""


@dataclass(frozen=True)
class ResolventTable:
    """Discretized resolvent ``r = k - k * r`` on ``0, h, ..., T``."""

    grid: np.ndarray
    values: np.ndarray
    sign_check: bool
    h: float
    kernel_values: np.ndarray

    def convolve_with(self, g: np.ndarray) -> np.ndarray:
        """Discrete convolution ``(r * g)_m = h sum_{j<m} r_{m-j} g_j``."""
        return _left_conv(self.values, np.asarray(g, dtype=float), self.h)


def _left_conv(a: np.ndarray, b: np.ndarray, h: float) -> np.ndarray:
    M = len(a) - 1
    out = np.zeros_like(b, dtype=float)
    for m in range(1, M + 1):
        out[m] = h * np.dot(a[m:0:-1], b[:m])
    return out


def resolvent(kernel_scalar, T: float, h: float, *, tol: float = 1e-12) -> ResolventTable:
    """Solve ``r = k - k * r`` with a left-endpoint rule.

    The recursion is ``r_0 = k_0`` and
    ``r_m = k_m - h sum_{j=0}^{m-1} k_{m-j} r_j``. For a constant kernel this
    is the forward Euler method for ``r' = -c r``, so it converges at first
    order.

    Parameters
    ----------
    kernel_scalar : callable, float or array
        Scalar kernel ``k``. Arrays are taken as values on the grid.
    T, h : float
        Horizon and step.
    tol : float
        Tolerance of the sign check ``r <= tol``.
    """
    M = int(round(T / h))
    if M < 1 or not math.isclose(M * h, T, rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError("T must be a positive multiple of h")
    grid = np.linspace(0.0, T, M + 1)
    if callable(kernel_scalar):
        k = np.asarray(kernel_scalar(grid), dtype=float).reshape(M + 1)
    elif np.ndim(kernel_scalar) == 0:
        k = np.full(M + 1, float(kernel_scalar))
    else:
        k = np.asarray(kernel_scalar, dtype=float)
        if k.shape != (M + 1,):
            raise ValueError(f"kernel values must have length {M + 1}")
    if not np.all(np.isfinite(k)):
        raise ResolventStepError("kernel is not finite on the grid; pass cell-averaged values "
                                 "for singular kernels")
    r = np.empty(M + 1)
    r[0] = k[0]
    for m in range(1, M + 1):
        r[m] = k[m] - h * np.dot(k[m:0:-1], r[:m])
    if not np.all(np.isfinite(r)):
        raise ResolventStepError(f"resolvent recursion overflowed at step h={h}; refine the step")
    pos_scale = h * np.max(np.abs(k))
    if np.max(k) > 0 and pos_scale >= 1.0:
        raise ResolventStepError(
            f"h * max|k| = {pos_scale:.3g} >= 1 makes the recursion oscillate; refine the step")
    scale = max(1.0, float(np.max(np.abs(r))))
    grid.setflags(write=False)
    r.setflags(write=False)
    return ResolventTable(grid, r, bool(np.all(r <= tol * scale)), float(h), k)


def resolvent_residual(table: ResolventTable) -> float:
    """``max |r - (k - k * r)|`` with ``k * r`` computed by the trapezoid rule."""
    k, r, h = table.kernel_values, table.values, table.h
    M = len(r) - 1
    res = np.empty(M + 1)
    res[0] = r[0] - k[0]
    for m in range(1, M + 1):
        prod = k[m::-1] * r[: m + 1]
        conv = h * (prod.sum() - 0.5 * (prod[0] + prod[-1]))
        res[m] = r[m] - (k[m] - conv)
    return float(np.max(np.abs(res)))


# ======================================================================
# exponential-sum approximation
# ======================================================================


@dataclass(frozen=True)
class ExponentialFit:
    """Result of :func:`fit_exponential_sum`."""

    kernel: Kernel
    l2_error: float


def fit_exponential_sum(kernel: Kernel, n: int, T: float) -> ExponentialFit:
    """Approximate ``kernel`` by an ``n``-term exponential sum.

    A fractional kernel is the Laplace transform of the density
    ``lambda^{-gamma} / Gamma(1 - gamma)``; dampening by ``exp(-beta t)``
    shifts that measure by ``beta``. The measure is cut at
    ``0 = eta_0 < eta_1 < ... < eta_n`` with ``eta_i = r^{i - n/2}`` and
    ``r = 1 + 10 n^{-0.9}``. Each cell contributes one exponential whose
    weight is the cell mass and whose rate is the cell mean.

    Exponential sums with at most ``n`` terms are returned unchanged and a
    constant kernel is the rate-zero exponential.

    Raises
    ------
    ValueError
        For families without a Laplace representation (tabulated kernels,
        fractional kernels with ``gamma > 1``) or ``n`` below the number of
        terms of an input exponential sum.
    """
    n = int(n)
    if n < 1:
        raise ValueError("need at least one exponential")
    fam, p = kernel.family, kernel.params
    if fam == "exponential_sum":
        m = len(p["rates"])
        if m > n:
            raise ValueError(f"input already has {m} > {n} exponential terms")
        return ExponentialFit(kernel, 0.0)
    if fam == "constant":
        return ExponentialFit(Kernel.exponential_sum(p["matrix"][None], [0.0], kernel.horizon), 0.0)
    if fam in ("fractional", "dampened_fractional"):
        g = p["gamma"]
        shift = p.get("beta", 0.0)
        if g == 1.0:
            fit = Kernel.exponential_sum(p["scale"][None], [shift], kernel.horizon)
            return ExponentialFit(fit, 0.0)
        if g > 1.0:
            raise ValueError("kernels with gamma > 1 are not completely monotone; no Laplace representation")
        r = 1.0 + 10.0 * n ** -0.9
        edges = np.concatenate([[0.0], r ** (np.arange(1, n + 1) - n / 2.0)])
        a, b = edges[:-1], edges[1:]
        mass = (b ** (1 - g) - a ** (1 - g)) / special.gamma(2 - g)
        mean = (1 - g) / (2 - g) * (b ** (2 - g) - a ** (2 - g)) / (b ** (1 - g) - a ** (1 - g))
        coeffs = mass[:, None, None] * p["scale"][None]
        fit = Kernel.exponential_sum(coeffs, mean + shift, kernel.horizon)
        return ExponentialFit(fit, kernel_lp_distance(kernel, fit, T, 2.0))
    raise ValueError(f"cannot fit an exponential sum to a {fam} kernel")
