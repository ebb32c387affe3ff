"""L_p norms on blocks by tensor Gauss-Legendre quadrature and grid maxima.

``p = inf`` is estimated as a maximum over a uniform grid (a lower estimate).
The coarse grid is compared with the staggered grid of its cell midpoints;
when the two disagree by more than 0.5% the maximum is recomputed on the
grid with twice the resolution, which contains both.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .blocks import Block, BlockPartition, normalize

QUAD_ORDER = 20
GRID_POINTS = 33
LINF_REFINE_RTOL = 5e-3


def parse_p(p) -> float:
    if isinstance(p, str):
        p = p.strip().lower()
        if p in ("inf", "infinity", "oo"):
            return math.inf
        p = float(p)
    p = float(p)
    if not (p >= 1):
        raise ValueError(f"exponent p must lie in [1, inf], got {p}")
    return p


@lru_cache(maxsize=None)
def _gauss_legendre(q: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(q)
    # mapped to [-1/2, 1/2]
    return x / 2, w / 2


@lru_cache(maxsize=None)
def tensor_gauss(d: int, q: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor rule on ``[-1/2,1/2]^d``: points ``(q^d, d)`` and weights ``(q^d,)``."""
    x, w = _gauss_legendre(q)
    pts = np.array(list(itertools.product(x, repeat=d)))
    wts = np.array([math.prod(c) for c in itertools.product(w, repeat=d)])
    pts.setflags(write=False)
    wts.setflags(write=False)
    return pts, wts


@lru_cache(maxsize=None)
def uniform_grid(d: int, n: int) -> np.ndarray:
    """``n^d`` points of the uniform grid on ``[-1/2,1/2]^d`` (endpoints included)."""
    t = np.linspace(-0.5, 0.5, n)
    g = np.array(list(itertools.product(t, repeat=d)))
    g.setflags(write=False)
    return g


@lru_cache(maxsize=None)
def staggered_grid(d: int, n: int) -> np.ndarray:
    """Cell midpoints of the ``n``-point uniform grid: ``(n-1)^d`` points."""
    t = np.linspace(-0.5, 0.5, n)
    t = (t[1:] + t[:-1]) / 2
    g = np.array(list(itertools.product(t, repeat=d)))
    g.setflags(write=False)
    return g


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor Gauss-Legendre rule mapped onto a block."""

    points: np.ndarray
    weights: np.ndarray
    order: int

    @classmethod
    def on_block(cls, R: Block, q: int = QUAD_ORDER) -> QuadratureRule:
        u, w = tensor_gauss(R.dim, q)
        phi = normalize(R)
        return cls(phi.forward(u), w * phi.det(), q)

    def integrate(self, g: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(np.dot(self.weights, _values(g, self.points)))


def _values(g, pts: np.ndarray) -> np.ndarray:
    vals = np.asarray(g(pts), dtype=float).reshape(-1)
    if vals.shape[0] != pts.shape[0]:
        raise ValueError("function must map (n, d) points to n values")
    bad = ~np.isfinite(vals)
    if bad.any():
        raise ValueError(f"non-finite function value at point {pts[np.argmax(bad)].tolist()}")
    return vals


def _lp_of_values(vals: np.ndarray, wts: np.ndarray, p: float) -> float:
    a = np.abs(vals)
    if p == 1:
        return float(np.dot(wts, a))
    if p == 2:
        return float(math.sqrt(np.dot(wts, a * a)))
    top = a.max(initial=0.0)
    if top == 0.0:
        return 0.0
    # scaled to avoid under/overflow of |g|^p
    return float(top * np.dot(wts, (a / top) ** p) ** (1.0 / p))


def grid_max(g: Callable[[np.ndarray], np.ndarray], d: int, n: int = GRID_POINTS,
             phi=None) -> float:
    """Max of ``|g|`` on the canonical block (mapped by ``phi`` when given)."""
    fwd = (lambda u: u) if phi is None else phi.forward
    coarse = float(np.abs(_values(g, fwd(uniform_grid(d, n)))).max())
    mid = float(np.abs(_values(g, fwd(staggered_grid(d, n)))).max())
    if abs(coarse - mid) <= LINF_REFINE_RTOL * max(coarse, mid):
        return max(coarse, mid)
    fine = float(np.abs(_values(g, fwd(uniform_grid(d, 2 * n - 1)))).max())
    return max(fine, coarse, mid)


def lp_norm(g: Callable[[np.ndarray], np.ndarray], R: Block, p, q: int = QUAD_ORDER,
            grid_points: int = GRID_POINTS) -> float:
    """``||g||_{L_p(R)}``; ``g`` maps ``(n, d)`` points to ``(n,)`` values."""
    p = parse_p(p)
    if q < 1:
        raise ValueError("quadrature order must be >= 1")
    g = _as_batch(g)
    if p == math.inf:
        return grid_max(g, R.dim, grid_points, normalize(R))
    rule = QuadratureRule.on_block(R, q)
    return _lp_of_values(_values(g, rule.points), rule.weights, p)


def lp_norm_weighted(g, R: Block, p, omega, q: int = QUAD_ORDER,
                     grid_points: int = GRID_POINTS) -> float:
    """``||g * omega||_{L_p(R)}``; ``omega`` must be positive at every sample."""
    g, omega = _as_batch(g), _as_batch(omega)

    def weighted(pts):
        w = _values(omega, pts)
        if np.any(w <= 0):
            raise ValueError(f"weight is not positive at {pts[np.argmax(w <= 0)].tolist()}")
        return _values(g, pts) * w

    return lp_norm(weighted, R, p, q, grid_points)


def _as_batch(g):
    from .poly import Polynomial, eval_poly
    if isinstance(g, Polynomial):
        return lambda pts: eval_poly(g, pts)
    if isinstance(g, (int, float)):
        c = float(g)
        return lambda pts: np.full(len(pts), c)
    return g


class KahanSum:
    """Compensated accumulator; adds in call order."""

    def __init__(self):
        self.total = 0.0
        self._c = 0.0

    def add(self, x: float) -> None:
        y = x - self._c
        t = self.total + y
        self._c = (t - self.total) - y
        self.total = t


def kahan_sum(values: Sequence[float]) -> float:
    acc = KahanSum()
    for v in values:
        acc.add(float(v))
    return acc.total


def cell_error_norms(f, op, P: BlockPartition, p, omega=None, q: int = QUAD_ORDER,
                     grid_points: int = GRID_POINTS, chunk: int = 4096) -> np.ndarray:
    """Per-cell ``||f - I_R f||_{L_p(R, omega)}`` for every cell of ``P``."""
    p = parse_p(p)
    lo, hi = P.arrays()
    out = np.empty(len(lo))
    for s in range(0, len(lo), chunk):
        out[s:s + chunk] = op.cell_errors(f, lo[s:s + chunk], hi[s:s + chunk], p, omega=omega,
                                          q=q, grid_points=grid_points)
    return out


def partition_error(f, op, P: BlockPartition, p, omega=None, q: int = QUAD_ORDER,
                    grid_points: int = GRID_POINTS) -> float:
    """Global ``||f - I_P f||`` over a block partition.

    Cell errors are combined in fixed cell order with compensated summation.
    """
    p = parse_p(p)
    errs = cell_error_norms(f, op, P, p, omega, q, grid_points)
    if p == math.inf:
        return float(errs.max(initial=0.0))
    top = errs.max(initial=0.0)
    if top == 0.0:
        return 0.0
    return float(top * kahan_sum((errs / top) ** p) ** (1.0 / p))
