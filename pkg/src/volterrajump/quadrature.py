"""Gauss–Legendre quadrature on geometrically graded meshes.

The integrands met in this package blow up like a power of the distance to
an endpoint (singular kernels, fractional difference quotients). Uniform
rules lose almost all accuracy there, so the interval is cut into dyadic
cells accumulating at the singular end(s). Each cell is integrated with a
20-point and a 10-point Gauss–Legendre rule, and the last cell touching the
singular end is replaced by the exact integral of a local power-law fit
``f(a + s) ~ C s**alpha``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

__all__ = ["gauss_legendre", "graded_nodes", "integrate_graded", "GradedRule"]


@lru_cache(maxsize=None)
def gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the ``order``-point rule on ``[0, 1]``."""
    x, w = np.polynomial.legendre.leggauss(order)
    return (x + 1.0) / 2.0, w / 2.0


def _cell_edges(a: float, b: float, left: bool, right: bool, levels: int,
                breakpoints: Sequence[float], right_levels: int) -> np.ndarray:
    if left and right:
        mid = 0.5 * (a + b)
        lo = a + (mid - a) * 2.0 ** -np.arange(levels, -1, -1)
        hi = b - (b - mid) * 2.0 ** -np.arange(1, right_levels + 1)
        edges = np.concatenate([lo, hi])
    elif left:
        edges = a + (b - a) * 2.0 ** -np.arange(levels, -1, -1)
    elif right:
        edges = b - (b - a) * 2.0 ** -np.arange(0, right_levels + 1)
    else:
        edges = np.linspace(a, b, 9)
    extra = [x for x in breakpoints if edges[0] < x < edges[-1]]
    if extra:
        edges = np.unique(np.concatenate([edges, extra]))
    return edges


@dataclass(frozen=True)
class GradedRule:
    """Precomputed nodes for :func:`integrate_graded`.

    ``nodes`` holds every abscissa (both Gauss orders and the tail probes),
    so an integrand can be evaluated in one vectorized call and then reduced
    with :meth:`reduce`.
    """

    a: float
    b: float
    nodes: np.ndarray
    w_hi: np.ndarray
    w_lo: np.ndarray
    n_hi: int
    n_lo: int
    left_tail: tuple[float, ...] | None
    right_tail: tuple[float, ...] | None

    def reduce(self, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Integral and error estimate from integrand values at ``nodes``.

        ``values`` has the node axis first; any trailing axes are kept.
        """
        values = np.asarray(values, dtype=float)
        hi = values[: self.n_hi]
        lo = values[self.n_hi: self.n_hi + self.n_lo]
        tails = values[self.n_hi + self.n_lo:]
        q_hi = np.tensordot(self.w_hi, hi, axes=(0, 0))
        q_lo = np.tensordot(self.w_lo, lo, axes=(0, 0))
        with np.errstate(invalid="ignore"):
            err = np.abs(q_hi - q_lo)
        total = q_hi
        pos = 0
        for tail in (self.left_tail, self.right_tail):
            if tail is None:
                continue
            delta = tail[0]
            f1, f2, f3 = tails[pos], tails[pos + 1], tails[pos + 2]
            pos += 3
            main = _power_tail(f1, f2, delta)
            alt = _power_tail_extended(f2, f3, delta)
            with np.errstate(invalid="ignore"):
                tail_err = np.where(np.isfinite(main), np.abs(main - alt), np.inf)
            total = total + main
            err = err + np.where(np.isfinite(tail_err), tail_err, np.inf)
        return total, err


def _power_tail(f_near_outer, f_inner, delta):
    """Integral over ``[0, delta]`` of ``C s**alpha`` fitted through two probes.

    The probes sit at ``s = delta`` and ``s = delta / 2``. A fitted exponent
    at or below ``-1`` signals a non-integrable singularity and yields ``inf``.
    """
    f1 = np.asarray(f_near_outer, dtype=float)
    f2 = np.asarray(f_inner, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        same_sign = f1 * f2 > 0
        alpha = np.where(same_sign, np.log(f1 / np.where(same_sign, f2, 1.0)) / np.log(2.0), 0.0)
        fitted = f1 * delta / (alpha + 1.0)
        flat = 0.5 * (np.abs(f1) + np.abs(f2)) * delta
        out = np.where(same_sign, np.where(alpha > -1.0 + 1e-9, fitted, np.inf), flat)
    return out


def _power_tail_extended(f_mid, f_inner, delta):
    """Same fit as :func:`_power_tail` but through probes at ``delta/2`` and
    ``delta/4``, extrapolated over ``[0, delta]``; used as an error gauge."""
    f1 = np.asarray(f_mid, dtype=float)
    f2 = np.asarray(f_inner, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        same_sign = f1 * f2 > 0
        alpha = np.where(same_sign, np.log(f1 / np.where(same_sign, f2, 1.0)) / np.log(2.0), 0.0)
        fitted = f1 * 2.0 ** alpha * delta / (alpha + 1.0)
        flat = 0.5 * (np.abs(f1) + np.abs(f2)) * delta
        out = np.where(same_sign, np.where(alpha > -1.0 + 1e-9, fitted, np.inf), flat)
    return out


@lru_cache(maxsize=64)
def _graded_rule(a: float, b: float, left: bool, right: bool, levels: int,
                 breakpoints: tuple[float, ...], right_levels: int) -> GradedRule:
    edges = _cell_edges(a, b, left, right, levels, breakpoints, right_levels)
    lo_edges, hi_edges = edges[:-1], edges[1:]
    left_tail = right_tail = None
    keep = np.ones(len(lo_edges), dtype=bool)
    probes = []
    if left:
        keep[0] = False
        delta = hi_edges[0] - a
        left_tail = (delta,)
        probes += [a + delta, a + delta / 2.0, a + delta / 4.0]
    if right:
        keep[-1] = False
        delta = b - lo_edges[-1]
        right_tail = (delta,)
        probes += [b - delta, b - delta / 2.0, b - delta / 4.0]
    lo_edges, hi_edges = lo_edges[keep], hi_edges[keep]
    width = hi_edges - lo_edges
    x20, w20 = gauss_legendre(20)
    x10, w10 = gauss_legendre(10)
    n_hi = lo_edges[:, None] + width[:, None] * x20[None, :]
    n_lo = lo_edges[:, None] + width[:, None] * x10[None, :]
    nodes = np.concatenate([n_hi.ravel(), n_lo.ravel(), np.asarray(probes, dtype=float)])
    nodes.setflags(write=False)
    return GradedRule(
        a=a, b=b, nodes=nodes,
        w_hi=(width[:, None] * w20[None, :]).ravel(),
        w_lo=(width[:, None] * w10[None, :]).ravel(),
        n_hi=n_hi.size, n_lo=n_lo.size,
        left_tail=left_tail, right_tail=right_tail,
    )


def graded_nodes(a: float, b: float, *, left: bool = True, right: bool = False,
                 levels: int = 40, breakpoints: Sequence[float] = (),
                 right_levels: int | None = None) -> GradedRule:
    """Build (and cache) a :class:`GradedRule` on ``[a, b]``.

    ``levels`` applies to the left end and ``right_levels`` (default: the
    same) to the right end. Grading toward ``b`` stops being meaningful once
    ``b - x`` drops below the float resolution of ``b``.
    """
    if not b > a:
        raise ValueError(f"empty interval [{a}, {b}]")
    rl = levels if right_levels is None else right_levels
    return _graded_rule(float(a), float(b), bool(left), bool(right), int(levels),
                        tuple(float(x) for x in breakpoints), int(rl))


def integrate_graded(f: Callable[[np.ndarray], np.ndarray], a: float, b: float, *,
                     left: bool = True, right: bool = False, levels: int = 40,
                     breakpoints: Sequence[float] = ()) -> tuple[float, float]:
    """Integrate a vectorized ``f`` over ``[a, b]``.

    Parameters
    ----------
    f : callable
        Maps an array of abscissae to an array of the same leading shape.
    left, right : bool
        Which endpoints may carry an integrable power-type singularity.
    levels : int
        Number of dyadic refinements toward each singular end.
    breakpoints : sequence of float
        Interior points where ``f`` is known to be non-smooth.

    Returns
    -------
    value, error_estimate : float
        ``value`` is ``inf`` when a tail fit detects a non-integrable
        singularity.
    """
    if b <= a:
        return 0.0, 0.0
    rule = graded_nodes(a, b, left=left, right=right, levels=levels, breakpoints=breakpoints)
    val, err = rule.reduce(f(rule.nodes))
    return float(val), float(err)
