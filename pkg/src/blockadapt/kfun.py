"""The error function K on homogeneous polynomials and its closed forms.

K(pi) is the smallest projection error of ``pi`` over blocks of unit volume,
computed as a minimization over diagonal scalings ``D = exp(t)`` with
``sum(t) = 0``.  Under the symmetry and reproduction hypotheses it factors as
a constant times the geometric mean of the pure-power coefficients.
"""

from __future__ import annotations

import json
import math
import os
import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import brentq, minimize

from .norms import (GRID_POINTS, LINF_REFINE_RTOL, QUAD_ORDER, parse_p, staggered_grid,
                    tensor_gauss, uniform_grid)
from .poly import Polynomial, compose_diag
from .proj import ProjectionOperator, check_hypotheses, detect_k

T_BOUND = 6.0
MAX_EVALS = 2000
REL_FTOL = 1e-8
DEGENERATE_RATIO = 1e-3
START_RADIUS = 2.0
DISAGREE_RTOL = 1e-4


class KFunError(ValueError):
    pass


class Method(str, Enum):
    NUMERIC = "numeric"
    CLOSED_FORM = "closed-form"


@dataclass
class KResult:
    value: float
    scales: tuple[float, ...] | None
    degenerate: bool
    method: Method
    starts_disagree: bool = False
    evaluations: int = 0

    def block_sides(self) -> tuple[float, ...] | None:
        """Side lengths of the minimizing unit-volume block."""
        return self.scales


class HomogeneousPoly:
    """A polynomial whose terms all have total degree ``m``."""

    def __init__(self, poly: Polynomial, m: int | None = None):
        degs = {a.order() for a in poly.terms}
        if m is None:
            if len(degs) > 1:
                raise KFunError(f"polynomial is not homogeneous (degrees {sorted(degs)})")
            m = degs.pop() if degs else 0
        elif degs - {m}:
            raise KFunError(f"polynomial has terms of degree {sorted(degs - {m})}, expected {m}")
        self.poly = poly
        self.m = m

    @property
    def dim(self) -> int:
        return self.poly.dim

    def pure_coefficients(self) -> np.ndarray:
        d, m = self.dim, self.m
        return np.array([self.poly.coeff(tuple(m if j == i else 0 for j in range(d))) for i in range(d)])

    @classmethod
    def pure(cls, lambdas: Sequence[float], m: int) -> HomogeneousPoly:
        d = len(lambdas)
        terms = {tuple(m if j == i else 0 for j in range(d)): float(l) for i, l in enumerate(lambdas)}
        return cls(Polynomial(d, terms), m)

    def __repr__(self):
        return f"HomogeneousPoly(m={self.m}, {self.poly!r})"


def _as_homogeneous(pi) -> HomogeneousPoly:
    return pi if isinstance(pi, HomogeneousPoly) else HomogeneousPoly(pi)


def k_star(pi) -> float:
    """Geometric mean of the absolute pure-power coefficients."""
    lam = np.abs(_as_homogeneous(pi).pure_coefficients())
    if np.any(lam == 0):
        return 0.0
    return float(np.exp(np.mean(np.log(lam))))


def signature(pi) -> int:
    return int(np.sum(_as_homogeneous(pi).pure_coefficients() > 0))


class ResidualNorm:
    """Fast ``t -> ||pi o D - I(pi o D)||_{L_p}`` with ``D = exp(t)``.

    The residual of each monomial is tabulated once on the quadrature nodes
    (or the max-norm grids) so each evaluation is a matrix-vector product.
    """

    def __init__(self, op: ProjectionOperator, pi: HomogeneousPoly, p, q: int = QUAD_ORDER,
                 grid_points: int = GRID_POINTS):
        self.p = parse_p(p)
        self.d = pi.dim
        items = [(a, c) for a, c in pi.poly.items() if not op.residual(a).is_zero()]
        self.alphas = np.array([a for a, _ in items], dtype=float).reshape(-1, self.d)
        self.coef = np.array([c for _, c in items])
        keys = [a for a, _ in items]
        if self.p == math.inf:
            self.coarse = op.residual_matrix(keys, uniform_grid(self.d, grid_points))
            self.mid = op.residual_matrix(keys, staggered_grid(self.d, grid_points))
            self._fine_pts = uniform_grid(self.d, 2 * grid_points - 1)
            self._fine = None
            self._keys, self._op = keys, op
        else:
            u, self.w = tensor_gauss(self.d, q)
            self.mat = op.residual_matrix(keys, u)
        self.evaluations = 0

    def coefficients(self, t: np.ndarray) -> np.ndarray:
        return self.coef * np.exp(self.alphas @ t)

    def __call__(self, t) -> float:
        self.evaluations += 1
        if len(self.coef) == 0:
            return 0.0
        c = self.coefficients(np.asarray(t, dtype=float))
        if self.p == math.inf:
            a = float(np.abs(self.coarse @ c).max())
            b = float(np.abs(self.mid @ c).max())
            est = max(a, b)
            if abs(a - b) > LINF_REFINE_RTOL * est:
                if self._fine is None:
                    self._fine = self._op.residual_matrix(self._keys, self._fine_pts)
                est = max(est, float(np.abs(self._fine @ c).max()))
            return est
        v = np.abs(self.mat @ c)
        if self.p == 1:
            return float(self.w @ v)
        if self.p == 2:
            return float(math.sqrt(self.w @ (v * v)))
        top = v.max()
        if top == 0:
            return 0.0
        return float(top * (self.w @ (v / top) ** self.p) ** (1 / self.p))


def _full_t(free: np.ndarray) -> np.ndarray:
    return np.append(free, -np.sum(free))


def _starts(d: int) -> list[np.ndarray]:
    n = d - 1
    out = [np.zeros(n)]
    for i in range(n):
        for s in (1, -1):
            e = np.zeros(n)
            e[i] = s * START_RADIUS
            out.append(e)
    for s in (1, -1):
        # direction of the last coordinate t_d = +-2
        out.append(np.full(n, -s * START_RADIUS / n))
    return out


def _box_retract(t: np.ndarray, bound: float) -> np.ndarray:
    top = np.abs(t).max(initial=0.0)
    return t if top <= bound else t * (bound / top)


def _diam_retract(t: np.ndarray, M: float) -> np.ndarray:
    """Shrink ``t`` toward 0 until ``||exp(t)||_2 <= M``."""
    g = lambda s: float(np.sum(np.exp(2 * s * t))) - M * M
    if g(1.0) <= 0:
        return t
    s = brentq(g, 0.0, 1.0, xtol=1e-15)
    return t * s


def _minimize(obj, d: int, retract, on_boundary) -> tuple[list[tuple[float, np.ndarray]], int]:
    """Multi-start Nelder-Mead over the free coordinates; returns (value, full t) per start."""
    results = []
    evals = 0
    f0 = obj(_full_t(np.zeros(d - 1)))
    scale = max(abs(f0), 1e-300)
    for x0 in _starts(d):
        wrapped = lambda x: obj(retract(_full_t(x)))
        res = minimize(wrapped, x0, method="Nelder-Mead",
                       options={"maxfev": MAX_EVALS, "xatol": 1e-9, "fatol": REL_FTOL * scale,
                                "initial_simplex": _simplex(x0)})
        evals += res.nfev
        t = retract(_full_t(res.x))
        results.append((float(res.fun), t))
    return results, evals


def _simplex(x0: np.ndarray) -> np.ndarray:
    n = len(x0)
    sim = np.tile(x0, (n + 1, 1))
    for i in range(n):
        sim[i + 1, i] += 0.5
    return sim


def _pick(results: list[tuple[float, np.ndarray]]) -> tuple[float, np.ndarray, bool]:
    best = min(v for v, _ in results)
    tol = 1e-12 * max(abs(best), 1e-300)
    ties = [(v, t) for v, t in results if v - best <= tol]
    v, t = min(ties, key=lambda vt: float(np.linalg.norm(vt[1])))
    spread = max(v for v, _ in results) - best
    disagree = spread > DISAGREE_RTOL * max(best, 1e-300)
    return v, t, disagree


def k_numeric(op: ProjectionOperator, pi, p, t_bound: float = T_BOUND, q: int = QUAD_ORDER,
              grid_points: int = GRID_POINTS, check_order: bool = True) -> KResult:
    """Numerical infimum of the projection error over unit-determinant diagonal scalings."""
    pi = _as_homogeneous(pi)
    if pi.dim != op.d:
        raise KFunError("dimension mismatch between operator and polynomial")
    if check_order and pi.m != detect_k(op) + 1:
        raise KFunError(f"polynomial degree {pi.m} differs from m = k+1 = {detect_k(op) + 1}")
    obj = ResidualNorm(op, pi, p, q, grid_points)
    d = op.d
    if d == 1:
        v = obj(np.zeros(1))
        return KResult(v, (1.0,), False, Method.NUMERIC, evaluations=1)
    retract = lambda t: _box_retract(t, t_bound)
    results, evals = _minimize(obj, d, retract, None)
    edge = t_bound * (1 - 1e-6)
    interior = [(v, t) for v, t in results if np.abs(t).max() < edge]
    boundary = [(v, t) for v, t in results if np.abs(t).max() >= edge]
    ref = min(v for v, _ in interior) if interior else obj(np.zeros(d))
    if boundary and min(v for v, _ in boundary) < DEGENERATE_RATIO * ref:
        return KResult(0.0, None, True, Method.NUMERIC, evaluations=evals)
    v, t, disagree = _pick(results)
    return KResult(v, tuple(np.exp(t)), False, Method.NUMERIC, disagree, evals)


def k_modified(op: ProjectionOperator, pi, p, M: float, q: int = QUAD_ORDER,
               grid_points: int = GRID_POINTS) -> KResult:
    """Infimum restricted to unit-volume blocks of diameter at most ``M``."""
    pi = _as_homogeneous(pi)
    d = op.d
    if M < math.sqrt(d) * (1 - 1e-12):
        raise KFunError(f"M must be >= sqrt(d) = {math.sqrt(d):.6g}")
    obj = ResidualNorm(op, pi, p, q, grid_points)
    if d == 1:
        return KResult(obj(np.zeros(1)), (1.0,), False, Method.NUMERIC, evaluations=1)
    if M <= math.sqrt(d) * (1 + 1e-12):
        # only the cube is admissible
        return KResult(obj(np.zeros(d)), (1.0,) * d, False, Method.NUMERIC, evaluations=1)
    retract = lambda t: _diam_retract(t, M)
    results, evals = _minimize(obj, d, retract, None)
    v, t, disagree = _pick(results)
    return KResult(v, tuple(np.exp(t)), False, Method.NUMERIC, disagree, evals)


# closed forms

class ConstantCache:
    """Constants keyed by (operator key, p, s, q, grid); optionally mirrored to disk.

    Reads are lock-free; writes take a lock.  The directory comes from
    ``BLOCKADAPT_CACHE_DIR`` when set.
    """

    def __init__(self, directory: str | os.PathLike | None = None):
        self._lock = threading.Lock()
        self._table: dict[str, float] = {}
        if directory is None:
            directory = os.environ.get("BLOCKADAPT_CACHE_DIR")
        self.path = Path(directory) / "constants.json" if directory else None
        if self.path is not None and self.path.exists():
            self._table.update(json.loads(self.path.read_text()))

    @staticmethod
    def key(op: ProjectionOperator, p: float, s: int | None, q: int, grid_points: int) -> str:
        return f"{op.key()}|p={p}|s={s}|q={q}|grid={grid_points}"

    def get(self, key: str) -> float | None:
        return self._table.get(key)

    def put(self, key: str, value: float) -> None:
        with self._lock:
            self._table[key] = value
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                tmp = self.path.with_suffix(".tmp")
                tmp.write_text(json.dumps(self._table, indent=1, sort_keys=True))
                tmp.replace(self.path)

    def items(self):
        return sorted(self._table.items())


CONSTANTS = ConstantCache()


def _require(op: ProjectionOperator, names: Sequence[str]) -> None:
    h = check_hypotheses(op).as_dict()
    missing = [n for n in names if not h[n]]
    if missing:
        raise KFunError(f"operator {op.key()} fails hypothesis {', '.join(missing)}")


def _pure_sum_norm(op: ProjectionOperator, signs: Sequence[int], p, q, grid_points) -> float:
    m = detect_k(op) + 1
    obj = ResidualNorm(op, HomogeneousPoly.pure(signs, m), p, q, grid_points)
    return obj(np.zeros(op.d))


def c_odd(op: ProjectionOperator, p, q: int = QUAD_ORDER, grid_points: int = GRID_POINTS,
          cache: ConstantCache | None = None) -> float:
    """Norm of ``sum_i (X_i^m - I X_i^m)`` for odd ``m``."""
    p = parse_p(p)
    m = detect_k(op) + 1
    if m % 2 == 0:
        raise KFunError(f"m = {m} is even; use c_even")
    _require(op, ["H_pm", "H_sigma", "H_star"])
    cache = CONSTANTS if cache is None else cache
    key = cache.key(op, p, None, q, grid_points)
    val = cache.get(key)
    if val is None:
        val = _pure_sum_norm(op, [1] * op.d, p, q, grid_points)
        cache.put(key, val)
    return val


def c_even(op: ProjectionOperator, p, s: int, q: int = QUAD_ORDER, grid_points: int = GRID_POINTS,
           cache: ConstantCache | None = None) -> float:
    """Constant for even ``m`` and ``s`` positive pure powers."""
    p = parse_p(p)
    m = detect_k(op) + 1
    if m % 2:
        raise KFunError(f"m = {m} is odd; use c_odd")
    if not 0 <= s <= op.d:
        raise KFunError(f"signature must lie in [0, {op.d}]")
    _require(op, ["H_sigma", "H_star", "H_starstar"])
    cache = CONSTANTS if cache is None else cache
    key = cache.key(op, p, s, q, grid_points)
    val = cache.get(key)
    if val is None:
        if s in (0, op.d):
            val = _pure_sum_norm(op, [1] * op.d, p, q, grid_points)
        else:
            signs = [1] * s + [-1] * (op.d - s)
            val = k_numeric(op, HomogeneousPoly.pure(signs, m), p, q=q, grid_points=grid_points).value
        cache.put(key, val)
    return val


def closed_form_applicable(op: ProjectionOperator) -> bool:
    h = check_hypotheses(op)
    m = detect_k(op) + 1
    if m % 2:
        return h.pm and h.sigma and h.star
    return h.sigma and h.star and h.starstar


def k_closed_form(op: ProjectionOperator, pi, p, q: int = QUAD_ORDER,
                  grid_points: int = GRID_POINTS, cache: ConstantCache | None = None) -> KResult:
    pi = _as_homogeneous(pi)
    m = detect_k(op) + 1
    if pi.m != m:
        raise KFunError(f"polynomial degree {pi.m} differs from m = {m}")
    if not closed_form_applicable(op):
        raise KFunError(f"hypotheses fail for {op.key()}: "
                        f"{', '.join(check_hypotheses(op).failed())}; use k_numeric")
    ks = k_star(pi)
    if m % 2:
        c = c_odd(op, p, q, grid_points, cache)
    else:
        c = c_even(op, p, signature(pi), q, grid_points, cache)
    return KResult(c * ks, None, ks == 0.0, Method.CLOSED_FORM)


def verify_scaling(op: ProjectionOperator, pi, p, D: Sequence[float], rtol: float = 1e-4,
                   **kw) -> tuple[bool, float]:
    """Compare K(pi o D) with det(D)^(m/d) K(pi); returns (pass, ratio)."""
    pi = _as_homogeneous(pi)
    D = [float(v) for v in D]
    if any(v <= 0 for v in D):
        raise KFunError("scales must be positive")
    lhs = k_numeric(op, HomogeneousPoly(compose_diag(pi.poly, D), pi.m), p, **kw).value
    rhs = math.prod(D) ** (pi.m / op.d) * k_numeric(op, pi, p, **kw).value
    if rhs == 0.0:
        return lhs == 0.0, (1.0 if lhs == 0.0 else math.inf)
    ratio = lhs / rhs
    return abs(ratio - 1) <= rtol, ratio


def p_sandwich(op: ProjectionOperator, pi, ps: Sequence = (1, 2, math.inf), **kw) -> list[float]:
    """K for each exponent in ``ps`` (non-decreasing in theory)."""
    return [k_numeric(op, pi, p, **kw).value for p in ps]


def k_value(op: ProjectionOperator, pi, p, **kw) -> KResult:
    """Closed form when the hypotheses hold, numerical optimization otherwise."""
    if closed_form_applicable(op):
        return k_closed_form(op, pi, p, **kw)
    return k_numeric(op, pi, p, **kw)
