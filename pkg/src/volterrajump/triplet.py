"""Characteristic triplets ``(b, a, nu)`` and simulable jump families.

The truncation function is the identity, so ``b`` is the full drift of the
driving semimartingale: a pure-jump driver with jump measure ``nu`` has
``b(x) = int zeta nu(x, dzeta)``.

Jump families are described by a measurable map ``F(x, U)`` from the state
and a vector of independent uniforms to a jump vector. A family may return
the zero vector for part of its mass; such draws are null events that the
engine discards (thinning). ``total_intensity`` therefore bounds the mass of
nonzero jumps and is what drives the exponential clock.
"""

from __future__ import annotations

import json
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from itertools import combinations
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from scipy import special

from .expr import Expr, ExprError, MatrixExpr, VectorExpr, as_matrix, as_vector

__all__ = [
    "PSDError",
    "HypothesisError",
    "MomentEstimate",
    "JumpFamily",
    "FiniteMixture",
    "MixtureComponent",
    "HawkesBasis",
    "CompositeFamily",
    "Triplet",
    "GrowthReport",
    "CONDITIONS",
    "psd_sqrt",
    "default_probes",
    "check_growth",
    "moment",
]

CONDITIONS = ("growth_bound", "linear_growth", "lipschitz")


class PSDError(ValueError):
    """Raised when a diffusion matrix fails to be positive semidefinite."""


class HypothesisError(ValueError):
    """A model hypothesis failed its empirical check.

    ``condition`` is a short stable label of the violated inequality (for
    example ``"scaling_growth"``) so callers can report it without parsing
    the message.
    """

    def __init__(self, condition: str, message: str):
        super().__init__(f"{condition}: {message}")
        self.condition = condition


def psd_sqrt(a: np.ndarray, *, clamp: float = 1e-12, where=None) -> np.ndarray:
    """Symmetric PSD square root via the spectral decomposition.

    Eigenvalues in ``[-clamp, 0)`` are set to zero; anything more negative
    raises :class:`PSDError`.
    """
    a = np.asarray(a, dtype=float)
    sym = 0.5 * (a + np.swapaxes(a, -1, -2))
    if not np.allclose(sym, a, rtol=1e-10, atol=1e-12):
        raise PSDError(f"diffusion matrix is not symmetric{'' if where is None else f' at x={where}'}")
    if sym.shape[-1] == 1:
        low = sym[..., 0, 0] < -clamp * np.maximum(1.0, np.abs(sym[..., 0, 0]))
        if np.any(low):
            loc = ""
            if where is not None:
                pts = np.asarray(where, dtype=float)
                loc = f" at x={(pts[np.nonzero(low)][0] if pts.ndim > 1 else pts).tolist()}"
            raise PSDError(f"diffusion coefficient is negative ({float(np.min(sym)):.3g}){loc}")
        return np.sqrt(np.maximum(sym, 0.0))
    w, v = np.linalg.eigh(sym)
    scale = np.maximum(1.0, np.max(np.abs(w), axis=-1, keepdims=True))
    if np.any(w < -clamp * scale):
        bad = np.argwhere(np.min(w, axis=-1) < -clamp * np.squeeze(scale, -1))
        loc = where if where is None or np.ndim(where) == 1 else np.asarray(where)[tuple(bad[0])]
        raise PSDError(f"diffusion matrix is not positive semidefinite (min eigenvalue "
                       f"{float(np.min(w)):.3g}){'' if loc is None else f' at x={np.asarray(loc).tolist()}'}")
    w = np.clip(w, 0.0, None)
    return np.einsum("...ij,...j,...kj->...ik", v, np.sqrt(w), v)


@dataclass(frozen=True)
class MomentEstimate:
    """``int |zeta|^q nu(x, dzeta)`` with a Monte Carlo standard error (0 if exact)."""

    value: float
    stderr: float = 0.0

    def __float__(self):
        return float(self.value)


class JumpFamily(ABC):
    """State-dependent finite jump measure ``nu(x, dzeta)`` on ``R^k``."""

    k: int
    #: number of uniforms consumed by :meth:`sample_jump`
    n_uniforms: int = 1
    #: structural total intensity if it does not depend on the state
    constant_intensity: float | None = None
    #: True when ``atoms`` gives the measure exactly
    is_atomic: bool = True

    @abstractmethod
    def total_intensity(self, x) -> np.ndarray:
        """Clock rate ``nu(x, R^k)`` (including null mass), shape ``x.shape[:-1]``."""

    def atoms(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Weights ``(..., m)`` and displacements ``(..., m, k)``."""
        raise NotImplementedError(f"{type(self).__name__} is not atomic")

    def sample_jump(self, x, u) -> np.ndarray:
        """The map ``F(x, U)``; returns the zero vector for a null event."""
        w, z = self.atoms(np.asarray(x, dtype=float))
        total = w.sum()
        if total <= 0:
            return np.zeros(self.k)
        idx = int(np.searchsorted(np.cumsum(w), u[0] * total, side="right"))
        return z[min(idx, len(w) - 1)].copy()

    def moment(self, x, q: float, *, truncated: bool = False, n_mc: int = 20_000,
               seed: int = 0) -> MomentEstimate:
        """``int |zeta|^q nu(x, dzeta)``; with ``truncated`` the integrand is
        ``min(1, |zeta|^2)`` instead."""
        w, z = self.atoms(np.asarray(x, dtype=float))
        norm = np.linalg.norm(z, axis=-1)
        vals = np.minimum(1.0, norm ** 2) if truncated else norm ** q
        return MomentEstimate(float(np.sum(w * vals)))

    def moments(self, x, q: float, *, truncated: bool = False) -> np.ndarray:
        """Vectorized exact moments for atomic families (``x`` of shape ``(..., d)``)."""
        if not self.is_atomic:
            xs = np.asarray(x, dtype=float)
            flat = xs.reshape(-1, xs.shape[-1])
            out = np.array([self.moment(pt, q, truncated=truncated).value for pt in flat])
            return out.reshape(xs.shape[:-1])
        w, z = self.atoms(x)
        norm = np.linalg.norm(z, axis=-1)
        vals = np.minimum(1.0, norm ** 2) if truncated else norm ** q
        return np.sum(w * vals, axis=-1)

    def first_moment(self, x) -> np.ndarray:
        """``int zeta nu(x, dzeta)``, shape ``x.shape[:-1] + (k,)``."""
        w, z = self.atoms(x)
        return np.einsum("...m,...mk->...k", w, z)

    def lipschitz_distance(self, x, y) -> float:
        """``int |gamma(x, .) - gamma(y, .)|^2 dF`` for the uniform-mark
        representation ``gamma(x, (i, r)) = zeta_i(x) 1{r < w_i(x)}``."""
        wx, zx = self.atoms(np.asarray(x, dtype=float))
        wy, zy = self.atoms(np.asarray(y, dtype=float))
        common = np.minimum(wx, wy)
        diff = np.sum((zx - zy) ** 2, axis=-1)
        bigger = np.where(wx >= wy, np.sum(zx ** 2, axis=-1), np.sum(zy ** 2, axis=-1))
        return float(np.sum(common * diff + np.abs(wx - wy) * bigger))

    def to_json(self) -> dict:
        raise NotImplementedError


# ----------------------------------------------------------------------
# finite mixtures
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class ParametricSampler:
    """Jump-size distribution independent of the state."""

    dist: str
    params: Mapping[str, Any]
    k: int

    @classmethod
    def from_json(cls, obj: Mapping, k: int) -> "ParametricSampler":
        dist = obj.get("dist")
        if dist == "normal":
            mean = np.asarray(obj.get("mean", np.zeros(k)), dtype=float).reshape(k)
            cov = np.asarray(obj.get("cov", np.eye(k)), dtype=float).reshape(k, k)
            chol = np.linalg.cholesky(cov + 0.0 * np.eye(k)) if np.any(cov) else np.zeros((k, k))
            return cls("normal", {"mean": mean, "cov": cov, "chol": chol}, k)
        if dist == "uniform":
            low = np.asarray(obj["low"], dtype=float).reshape(k)
            high = np.asarray(obj["high"], dtype=float).reshape(k)
            if np.any(high < low):
                raise ValueError("uniform sampler needs low <= high")
            return cls("uniform", {"low": low, "high": high}, k)
        raise ValueError(f"unknown jump-size distribution {dist!r}; expected 'normal' or 'uniform'")

    def draw(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.dist == "normal":
            return self.params["mean"] + self.params["chol"] @ special.ndtri(u)
        return self.params["low"] + (self.params["high"] - self.params["low"]) * u

    def mean(self) -> np.ndarray:
        if self.dist == "normal":
            return self.params["mean"].copy()
        return 0.5 * (self.params["low"] + self.params["high"])

    def second_moment(self) -> float:
        if self.dist == "normal":
            return float(self.params["mean"] @ self.params["mean"] + np.trace(self.params["cov"]))
        lo, hi = self.params["low"], self.params["high"]
        width = hi - lo
        per = np.where(width > 0, (hi ** 3 - lo ** 3) / (3 * np.where(width > 0, width, 1.0)), lo ** 2)
        return float(np.sum(per))

    def to_json(self) -> dict:
        if self.dist == "normal":
            return {"dist": "normal", "mean": self.params["mean"].tolist(), "cov": self.params["cov"].tolist()}
        return {"dist": "uniform", "low": self.params["low"].tolist(), "high": self.params["high"].tolist()}


@dataclass(frozen=True)
class MixtureComponent:
    """One component: intensity ``w(x) >= 0`` and a displacement rule."""

    intensity: Expr
    displacement: VectorExpr | None = None
    sampler: ParametricSampler | None = None

    def __post_init__(self):
        if (self.displacement is None) == (self.sampler is None):
            raise ValueError("a mixture component needs exactly one of displacement or sampler")


class FiniteMixture(JumpFamily):
    """``nu(x, .) = sum_c w_c(x) * law_c(x)``.

    Each law is a point mass at a (possibly state-dependent) displacement or
    a parametric distribution. Negative intensities are treated as zero.

    Examples
    --------
    >>> fam = FiniteMixture.from_json({"components": [
    ...     {"intensity": "1", "displacement": ["2", "0"]},
    ...     {"intensity": "3", "displacement": ["0", "1"]}]}, k=2)
    >>> float(fam.moment([0.0], 2).value)
    7.0
    """

    def __init__(self, components: Sequence[MixtureComponent], k: int):
        self.components = tuple(components)
        self.k = int(k)
        for c in self.components:
            if c.displacement is not None and len(c.displacement) != self.k:
                raise ValueError(f"displacement has length {len(c.displacement)}, expected {self.k}")
        self.is_atomic = all(c.sampler is None for c in self.components)
        self.n_uniforms = 1 if self.is_atomic else 1 + self.k
        if all(c.intensity.is_constant for c in self.components):
            self.constant_intensity = float(sum(max(float(c.intensity(np.zeros(1))), 0.0)
                                                for c in self.components))
        else:
            self.constant_intensity = None

    @classmethod
    def from_json(cls, obj: Mapping, k: int) -> "FiniteMixture":
        comps = []
        for i, c in enumerate(obj.get("components", [])):
            try:
                inten = Expr(c["intensity"])
            except KeyError:
                raise ValueError(f"jump component {i} has no 'intensity'") from None
            if "displacement" in c:
                comps.append(MixtureComponent(inten, as_vector(c["displacement"], k)))
            elif "sampler" in c:
                comps.append(MixtureComponent(inten, sampler=ParametricSampler.from_json(c["sampler"], k)))
            else:
                raise ValueError(f"jump component {i} needs 'displacement' or 'sampler'")
        return cls(comps, k)

    def to_json(self) -> dict:
        out = []
        for c in self.components:
            d = {"intensity": c.intensity.source}
            if c.displacement is not None:
                d["displacement"] = c.displacement.to_json()
            else:
                d["sampler"] = c.sampler.to_json()
            out.append(d)
        return {"kind": "finite_mixture", "components": out}

    def _weights(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if not self.components:
            return np.zeros(x.shape[:-1] + (0,))
        ws = [np.broadcast_to(np.maximum(np.asarray(c.intensity(x), dtype=float), 0.0), x.shape[:-1])
              for c in self.components]
        return np.stack(ws, axis=-1)

    def total_intensity(self, x) -> np.ndarray:
        return self._weights(x).sum(axis=-1)

    def atoms(self, x):
        if not self.is_atomic:
            raise NotImplementedError("mixture with parametric samplers is not atomic")
        x = np.asarray(x, dtype=float)
        w = self._weights(x)
        if not self.components:
            return w, np.zeros(x.shape[:-1] + (0, self.k))
        z = np.stack([np.broadcast_to(c.displacement(x), x.shape[:-1] + (self.k,))
                      for c in self.components], axis=-2)
        return w, z

    def sample_jump(self, x, u) -> np.ndarray:
        if self.is_atomic:
            return super().sample_jump(x, u)
        x = np.asarray(x, dtype=float)
        w = self._weights(x)
        total = w.sum()
        if total <= 0:
            return np.zeros(self.k)
        idx = min(int(np.searchsorted(np.cumsum(w), u[0] * total, side="right")), len(w) - 1)
        c = self.components[idx]
        if c.displacement is not None:
            return np.asarray(c.displacement(x), dtype=float).copy()
        return c.sampler.draw(u[1:1 + self.k])

    def moment(self, x, q, *, truncated=False, n_mc=20_000, seed=0) -> MomentEstimate:
        if self.is_atomic:
            return super().moment(x, q, truncated=truncated)
        x = np.asarray(x, dtype=float)
        w = self._weights(x)
        value, var = 0.0, 0.0
        rng = np.random.Generator(np.random.Philox(seed))
        for wc, c in zip(w, self.components):
            if wc == 0:
                continue
            if c.displacement is not None:
                nz = float(np.linalg.norm(c.displacement(x)))
                value += wc * (min(1.0, nz ** 2) if truncated else nz ** q)
                continue
            if q == 2 and not truncated:
                value += wc * c.sampler.second_moment()
                continue
            draws = np.array([c.sampler.draw(r) for r in rng.random((n_mc, self.k))])
            nz = np.linalg.norm(draws, axis=1)
            vals = np.minimum(1.0, nz ** 2) if truncated else nz ** q
            value += wc * vals.mean()
            var += wc ** 2 * vals.var(ddof=1) / n_mc
        return MomentEstimate(float(value), float(math.sqrt(var)))

    def first_moment(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        w = self._weights(x)
        out = np.zeros(x.shape[:-1] + (self.k,))
        for i, c in enumerate(self.components):
            disp = c.displacement(x) if c.displacement is not None else c.sampler.mean()
            out = out + w[..., i:i + 1] * np.asarray(disp, dtype=float)
        return out

    def lipschitz_distance(self, x, y) -> float:
        if self.is_atomic:
            return super().lipschitz_distance(x, y)
        wx, wy = self._weights(np.asarray(x, float)), self._weights(np.asarray(y, float))
        total = 0.0
        for i, c in enumerate(self.components):
            if c.displacement is not None:
                zx = np.asarray(c.displacement(np.asarray(x, float)))
                zy = np.asarray(c.displacement(np.asarray(y, float)))
                big = zx @ zx if wx[i] >= wy[i] else zy @ zy
                total += min(wx[i], wy[i]) * float(np.sum((zx - zy) ** 2)) + abs(wx[i] - wy[i]) * float(big)
            else:
                total += abs(wx[i] - wy[i]) * c.sampler.second_moment()
        return total


class HawkesBasis(JumpFamily):
    """``nu(y, .) = sum_i Lambda_i(y)^+ delta_{e_i}``: unit jumps along the axes.

    Negative intensity values are clamped at zero; :meth:`clamped` reports
    whether that happened at a given state.
    """

    def __init__(self, intensity: VectorExpr | Sequence, k: int | None = None):
        self.intensity = intensity if isinstance(intensity, VectorExpr) else VectorExpr(intensity)
        self.k = len(self.intensity) if k is None else int(k)
        if len(self.intensity) != self.k:
            raise ValueError("one intensity expression per jump direction is required")
        self.n_uniforms = 1
        self.constant_intensity = (float(np.sum(np.maximum(self.intensity(np.zeros(1)), 0.0)))
                                   if self.intensity.is_constant else None)

    def raw(self, x) -> np.ndarray:
        return np.asarray(self.intensity(np.asarray(x, dtype=float)), dtype=float)

    def clamped(self, x) -> bool:
        return bool(np.any(self.raw(x) < 0))

    def total_intensity(self, x):
        return np.maximum(self.raw(x), 0.0).sum(axis=-1)

    def atoms(self, x):
        x = np.asarray(x, dtype=float)
        w = np.maximum(np.broadcast_to(self.raw(x), x.shape[:-1] + (self.k,)), 0.0)
        z = np.broadcast_to(np.eye(self.k), x.shape[:-1] + (self.k, self.k))
        return w, z

    def to_json(self):
        return {"kind": "hawkes_basis", "intensity": self.intensity.to_json()}


class CompositeFamily(JumpFamily):
    """Sum of tagged sub-families; the tag lets diagnostics attribute error."""

    def __init__(self, parts: Sequence[tuple[str, JumpFamily]], k: int):
        self.parts = tuple(parts)
        self.k = int(k)
        self.is_atomic = all(f.is_atomic for _, f in self.parts)
        self.n_uniforms = 1 + max((f.n_uniforms for _, f in self.parts), default=0)
        consts = [f.constant_intensity for _, f in self.parts]
        self.constant_intensity = float(sum(consts)) if all(c is not None for c in consts) else None

    def part(self, tag: str) -> JumpFamily:
        for t, f in self.parts:
            if t == tag:
                return f
        raise KeyError(tag)

    def total_intensity(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for _, f in self.parts:
            out = out + f.total_intensity(x)
        return out

    def atoms(self, x):
        x = np.asarray(x, dtype=float)
        if not self.parts:
            return np.zeros(x.shape[:-1] + (0,)), np.zeros(x.shape[:-1] + (0, self.k))
        ws, zs = zip(*(f.atoms(x) for _, f in self.parts))
        return np.concatenate(ws, axis=-1), np.concatenate(zs, axis=-2)

    def sample_jump(self, x, u):
        x = np.asarray(x, dtype=float)
        rates = np.array([float(f.total_intensity(x)) for _, f in self.parts])
        total = rates.sum()
        if total <= 0:
            return np.zeros(self.k)
        idx = min(int(np.searchsorted(np.cumsum(rates), u[0] * total, side="right")), len(rates) - 1)
        return self.parts[idx][1].sample_jump(x, u[1:])

    def moment(self, x, q, *, truncated=False, n_mc=20_000, seed=0):
        vals = [f.moment(x, q, truncated=truncated, n_mc=n_mc, seed=seed) for _, f in self.parts]
        return MomentEstimate(sum(v.value for v in vals), math.sqrt(sum(v.stderr ** 2 for v in vals)))

    def first_moment(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (self.k,))
        for _, f in self.parts:
            out = out + f.first_moment(x)
        return out

    def lipschitz_distance(self, x, y):
        return float(sum(f.lipschitz_distance(x, y) for _, f in self.parts))


def jump_family_from_json(obj: Mapping | None, k: int) -> JumpFamily | None:
    if obj is None:
        return None
    kind = obj.get("kind")
    if kind == "finite_mixture":
        return FiniteMixture.from_json(obj, k)
    if kind == "hawkes_basis":
        return HawkesBasis(as_vector(obj["intensity"], k), k)
    raise ValueError(f"unknown jump family kind {kind!r}; expected 'finite_mixture' or 'hawkes_basis'")


def moment(family: JumpFamily | None, x, q: float, **kw) -> MomentEstimate:
    """``int |zeta|^q nu(x, dzeta)``; an absent family has zero moments."""
    if family is None:
        return MomentEstimate(0.0)
    return family.moment(x, q, **kw)


# ----------------------------------------------------------------------
# triplet
# ----------------------------------------------------------------------


def _wrap_vector(f, k):
    if f is None:
        return lambda x: np.zeros(np.shape(x)[:-1] + (k,))
    if isinstance(f, VectorExpr):
        return lambda x: np.broadcast_to(f(np.asarray(x, dtype=float)), np.shape(x)[:-1] + (k,))
    return f


def _wrap_matrix(f, k):
    if f is None:
        return lambda x: np.zeros(np.shape(x)[:-1] + (k, k))
    if isinstance(f, MatrixExpr):
        return lambda x: np.broadcast_to(f(np.asarray(x, dtype=float)), np.shape(x)[:-1] + (k, k))
    return f


@dataclass(frozen=True, eq=False)
class Triplet:
    """Characteristic triplet of the driver, as functions of the state ``x``.

    Parameters
    ----------
    d, k : int
        State and driver dimensions.
    drift : callable, VectorExpr or DSL strings, optional
        ``b(x)`` with values in ``R^k``. ``"pure_jump"`` in configs means
        ``b = int zeta nu``.
    diffusion : callable, MatrixExpr or nested DSL strings, optional
        ``a(x)``, symmetric PSD ``k x k``.
    nu : JumpFamily, optional
    p : float
        Integrability exponent (at least 2).
    """

    d: int
    k: int
    drift: Any = None
    diffusion: Any = None
    nu: JumpFamily | None = None
    p: float = 2.0
    source: Mapping | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.p < 2:
            raise ValueError("p must be at least 2")
        if self.nu is not None and self.nu.k != self.k:
            raise ValueError("jump family dimension does not match k")
        if isinstance(self.drift, (str, list, tuple)):
            object.__setattr__(self, "drift", as_vector(self.drift, self.k))
        if isinstance(self.diffusion, (str, list, tuple)):
            object.__setattr__(self, "diffusion", as_matrix(self.diffusion, (self.k, self.k)))
        object.__setattr__(self, "_b", _wrap_vector(self.drift, self.k))
        object.__setattr__(self, "_a", _wrap_matrix(self.diffusion, self.k))

    # evaluation -------------------------------------------------------
    def b(self, x) -> np.ndarray:
        return np.asarray(self._b(np.asarray(x, dtype=float)), dtype=float)

    def a(self, x) -> np.ndarray:
        return np.asarray(self._a(np.asarray(x, dtype=float)), dtype=float)

    def sigma(self, x) -> np.ndarray:
        """PSD square root of ``a(x)``."""
        x = np.asarray(x, dtype=float)
        return psd_sqrt(self.a(x), where=x)

    @property
    def has_diffusion(self) -> bool:
        return self.diffusion is not None and not (isinstance(self.diffusion, MatrixExpr) and
                                                   all(e.source in ("0", "0.0") for r in self.diffusion.rows
                                                       for e in r.items))

    @property
    def has_drift(self) -> bool:
        return self.drift is not None and not (isinstance(self.drift, VectorExpr) and
                                               all(e.source in ("0", "0.0") for e in self.drift.items))

    # constructors -----------------------------------------------------
    @classmethod
    def zero(cls, d: int = 1, k: int = 1, p: float = 2.0) -> "Triplet":
        return cls(d, k, None, None, None, p)

    @property
    def is_pure_jump(self) -> bool:
        """True when ``Z`` is the plain sum of its jumps (``b = int zeta nu``, ``a = 0``)."""
        return (self.nu is not None and not self.has_diffusion
                and callable(self.drift) and self.drift == self.nu.first_moment)

    @classmethod
    def pure_jump(cls, family: JumpFamily, d: int, p: float = 2.0) -> "Triplet":
        """Triplet of a pure-jump driver: ``b = int zeta nu``, ``a = 0``."""
        return cls(d, family.k, family.first_moment, None, family, p)

    @classmethod
    def from_json(cls, obj: Mapping | str) -> "Triplet":
        if isinstance(obj, str):
            obj = json.loads(obj)
        try:
            d, k = int(obj["d"]), int(obj["k"])
        except KeyError as exc:
            raise ValueError(f"triplet is missing field {exc.args[0]!r}") from None
        p = float(obj.get("p", 2.0))
        nu = jump_family_from_json(obj.get("nu"), k)
        b_spec = obj.get("b")
        if b_spec == "pure_jump":
            if nu is None:
                raise ValueError("b='pure_jump' needs a jump family")
            drift = nu.first_moment
        elif b_spec is None:
            drift = None
        else:
            drift = as_vector(b_spec, k)
        a_spec = obj.get("a")
        diffusion = None if a_spec is None else as_matrix(a_spec, (k, k))
        for name, e in (("b", drift), ("a", diffusion)):
            if isinstance(e, (VectorExpr, MatrixExpr)) and e.state_dim > d:
                raise ValueError(f"{name} references x{e.state_dim} but the state has dimension {d}")
        return cls(d, k, drift, diffusion, nu, p, source=dict(obj))

    def to_json(self) -> dict:
        if self.source is not None:
            return dict(self.source)
        out: dict = {"d": self.d, "k": self.k, "p": self.p}
        if isinstance(self.drift, VectorExpr):
            out["b"] = self.drift.to_json()
        if isinstance(self.diffusion, MatrixExpr):
            out["a"] = self.diffusion.to_json()
        if self.nu is not None:
            out["nu"] = self.nu.to_json()
        return out


# ----------------------------------------------------------------------
# growth checks
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class GrowthReport:
    """Empirical check of a growth or Lipschitz inequality on probes.

    ``ratios`` holds the left side divided by the right-side weight
    (``1 + |x|^p``, ``1 + |x|^2`` or ``|x - y|^2``) for each probe.
    """

    condition: str
    probe_points: np.ndarray
    ratios: np.ndarray
    max_ratio: float
    declared_constant: float
    passed: bool
    worst_point: np.ndarray | None
    failures: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {"condition": self.condition, "n_probes": int(len(self.ratios)),
                "max_ratio": self.max_ratio, "declared_constant": self.declared_constant,
                "passed": self.passed,
                "worst_point": None if self.worst_point is None else np.asarray(self.worst_point).tolist(),
                "failures": list(self.failures)}


def default_probes(d: int, radius: float = 10.0, *, per_axis: int = 5, n_random: int = 20,
                   seed: int = 0) -> np.ndarray:
    """Scaled lattice plus Gaussian directions at radii ``R/4, R/2, R``."""
    axis = np.linspace(-radius, radius, per_axis)
    if per_axis ** d <= 4096:
        lattice = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    else:
        lattice = np.concatenate([np.zeros((1, d)), radius * np.eye(d), -radius * np.eye(d)])
    rng = np.random.Generator(np.random.Philox(seed))
    g = rng.standard_normal((n_random, d))
    g /= np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-300)
    rings = np.concatenate([r * g for r in (radius / 4, radius / 2, radius)])
    return np.concatenate([lattice, rings])


def _jump_moment(nu, x, q, truncated=False):
    if nu is None:
        return np.zeros(np.shape(x)[:-1])
    if nu.is_atomic:
        return nu.moments(x, q, truncated=truncated)
    return np.array([nu.moment(pt, q, truncated=truncated).value for pt in np.asarray(x)])


def growth_lhs(triplet: Triplet, condition: str, x: np.ndarray) -> np.ndarray:
    """Left side of the named growth inequality at each probe."""
    x = np.asarray(x, dtype=float)
    b = triplet.b(x)
    a = triplet.a(x)
    bn = np.linalg.norm(b, axis=-1)
    an = np.sqrt(np.sum(a ** 2, axis=(-2, -1)))
    if condition == "growth_bound":
        return bn + an + _jump_moment(triplet.nu, x, 2, truncated=True)
    if condition == "linear_growth":
        p = triplet.p
        return bn ** 2 + an + _jump_moment(triplet.nu, x, 2) + _jump_moment(triplet.nu, x, p) ** (2.0 / p)
    raise ValueError(f"unknown growth condition {condition!r}")


def check_growth(triplet: Triplet, condition: str, declared_constant: float,
                 probes: np.ndarray | None = None, *, max_pairs: int = 2000) -> GrowthReport:
    """Evaluate a growth or Lipschitz inequality over a probe set.

    Parameters
    ----------
    condition : {"growth_bound", "linear_growth", "lipschitz"}
        ``growth_bound``: ``|b| + |a| + int min(1, |zeta|^2) nu <= c (1 + |x|^p)``.
        ``linear_growth``: ``|b|^2 + |a| + int |zeta|^2 nu + (int |zeta|^p nu)^{2/p}
        <= c (1 + |x|^2)``.
        ``lipschitz``: ``|b(x) - b(y)|^2 + |sigma(x) - sigma(y)|^2 +
        int |gamma(x) - gamma(y)|^2 dF <= c |x - y|^2`` over probe pairs.
    declared_constant : float
    probes : array of shape (n, d), optional
        Defaults to :func:`default_probes`.
    """
    if condition not in CONDITIONS:
        raise ValueError(f"unknown condition {condition!r}; expected one of {', '.join(CONDITIONS)}")
    pts = default_probes(triplet.d) if probes is None else np.asarray(probes, dtype=float).reshape(-1, triplet.d)
    if len(pts) == 0:
        raise ValueError("probe set is empty")
    failures: list[str] = []
    if condition == "lipschitz":
        pairs = list(combinations(range(len(pts)), 2))
        if len(pairs) > max_pairs:
            step = len(pairs) / max_pairs
            pairs = [pairs[int(i * step)] for i in range(max_pairs)]
        ratios = []
        worst = None
        sig = triplet.sigma(pts)
        bb = triplet.b(pts)
        for i, j in pairs:
            dist2 = float(np.sum((pts[i] - pts[j]) ** 2))
            if dist2 == 0:
                continue
            lhs = float(np.sum((bb[i] - bb[j]) ** 2) + np.sum((sig[i] - sig[j]) ** 2))
            if triplet.nu is not None:
                lhs += triplet.nu.lipschitz_distance(pts[i], pts[j])
            r = lhs / dist2
            if not math.isfinite(r):
                failures.append(f"non-finite value at pair {pts[i].tolist()}, {pts[j].tolist()}")
                r = math.inf
            ratios.append(r)
        ratios = np.asarray(ratios)
        if len(ratios):
            k = int(np.argmax(ratios))
            worst = np.stack([pts[pairs[k][0]], pts[pairs[k][1]]])
    else:
        lhs = growth_lhs(triplet, condition, pts)
        norm = np.linalg.norm(pts, axis=-1)
        weight = 1.0 + (norm ** triplet.p if condition == "growth_bound" else norm ** 2)
        ratios = lhs / weight
        bad = ~np.isfinite(ratios)
        for pt in pts[bad]:
            failures.append(f"non-finite moment at x={pt.tolist()}")
        ratios = np.where(bad, np.inf, ratios)
        worst = pts[int(np.argmax(ratios))] if len(ratios) else None
    max_ratio = float(np.max(ratios)) if len(ratios) else 0.0
    passed = bool(max_ratio <= declared_constant and not failures)
    return GrowthReport(condition, pts, np.asarray(ratios), max_ratio, float(declared_constant),
                        passed, worst, tuple(failures))
