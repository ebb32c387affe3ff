"""Function corpus, predicted sharp constants and convergence studies."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .adapt import (AdaptivePartition, LocalBlockSpec, partition_for_budget, spec_from_closed_form,
                    spec_from_km, tau, uniform_partition)
from .blocks import Block
from .kfun import (CONSTANTS, HomogeneousPoly, c_even, c_odd, closed_form_applicable, k_numeric)
from .norms import GRID_POINTS, QUAD_ORDER, QuadratureRule, parse_p, partition_error
from .poly import Polynomial, eval_poly, homogeneous_derivative_poly
from .proj import ProjectionOperator, detect_k

FD_STEP = 1e-5
FD_RTOL = 1e-5
LOWER_SLACK = 0.95
UPPER_SLACK = 1.15


class Kind(str, Enum):
    UNIFORM = "uniform"
    ADAPTIVE_KM = "adaptive-km"
    ADAPTIVE_CF = "adaptive-cf"


@dataclass(frozen=True)
class Weight:
    name: str
    func: Callable[[np.ndarray], np.ndarray]

    def __call__(self, pts):
        return self.func(np.atleast_2d(pts))

    def scaled(self, c: float) -> Weight:
        if c <= 0:
            raise ValueError("weight scale must be positive")
        return Weight(f"{c!r}*{self.name}", lambda pts, g=self.func: c * g(pts))


WEIGHTS = {
    "one": Weight("one", lambda pts: np.ones(len(pts))),
    "one_plus_x2": Weight("one_plus_x2", lambda pts: 1.0 + pts[:, 0] ** 2),
}


@dataclass(frozen=True)
class CorpusFunction:
    """A test function with exact partial derivatives on a block domain."""

    name: str
    dim: int
    func: Callable[[np.ndarray], np.ndarray]
    deriv: Callable[[tuple, np.ndarray], float]
    domain: Block
    omega: Weight | None = None
    poly: Polynomial | None = None
    m_max: int = 4

    def __call__(self, pts):
        return self.func(np.atleast_2d(np.asarray(pts, dtype=float)))

    def derivative(self, alpha, x) -> float:
        alpha = tuple(int(a) for a in alpha)
        if sum(alpha) > self.m_max:
            raise ValueError(f"{self.name}: no derivative data above order {self.m_max}")
        return float(self.deriv(alpha, np.asarray(x, dtype=float)))

    def error_input(self):
        """Polynomial form when available (exact per-cell residuals), else self."""
        return self.poly if self.poly is not None else self

    def with_weight(self, omega: Weight | None) -> CorpusFunction:
        name = self.name.split("@")[0] + (f"@{omega.name}" if omega is not None else "")
        return replace(self, name=name, omega=omega)

    def fd_check(self, points: int = 10, seed: int = 0) -> float:
        """Largest relative mismatch between the oracle and central differences."""
        rng = np.random.default_rng(seed)
        lo, hi = np.asarray(self.domain.lo), np.asarray(self.domain.hi)
        worst = 0.0
        from .poly import multi_indices
        for x in lo + (hi - lo) * (0.1 + 0.8 * rng.random((points, self.dim))):
            for alpha in multi_indices(self.dim, self.m_max - 1):
                base = (lambda y: float(self(y[None, :])[0])) if alpha.order() == 0 else \
                    (lambda y, a=alpha: self.derivative(a, y))
                for i in range(self.dim):
                    e = np.zeros(self.dim)
                    e[i] = FD_STEP
                    fd = (base(x + e) - base(x - e)) / (2 * FD_STEP)
                    up = list(alpha)
                    up[i] += 1
                    exact = self.derivative(up, x)
                    worst = max(worst, abs(fd - exact) / max(1.0, abs(exact)))
        return worst


def _poly_function(name: str, p: Polynomial, domain: Block, omega: Weight | None = None) -> CorpusFunction:
    cache: dict[tuple, Polynomial] = {}

    def deriv(alpha, x):
        if alpha not in cache:
            cache[alpha] = p.derivative(alpha)
        return eval_poly(cache[alpha], x)

    return CorpusFunction(name, p.dim, lambda pts: eval_poly(p, pts), deriv, domain, omega, p)


def _exp_function(domain: Block) -> CorpusFunction:
    # exp(x + 2y)
    rate = np.array([1.0, 2.0])
    return CorpusFunction("exp", 2, lambda pts: np.exp(pts @ rate),
                          lambda a, x: float(np.prod(rate ** np.array(a)) * np.exp(x @ rate)), domain)


def _sin_deriv(k: int, t: float) -> float:
    # k-th derivative of sin(pi t)
    return math.pi ** k * math.sin(math.pi * t + k * math.pi / 2)


def _sinsin_function(domain: Block) -> CorpusFunction:
    return CorpusFunction(
        "sinsin", 2, lambda pts: np.sin(np.pi * pts[:, 0]) * np.sin(np.pi * pts[:, 1]),
        lambda a, x: _sin_deriv(a[0], x[0]) * _sin_deriv(a[1], x[1]), domain)


def _poly(d: int, terms: dict) -> Polynomial:
    return Polynomial(d, terms)


def corpus() -> list[CorpusFunction]:
    """The shipped test functions, all on unit cubes."""
    sq = Block.unit(2)
    aniso = _poly(2, {(2, 0): 1.0, (0, 2): 4.0})
    return [
        _poly_function("square_1d", _poly(1, {(2,): 1.0}), Block.unit(1)),
        _poly_function("quad_iso", _poly(2, {(2, 0): 1.0, (0, 2): 1.0}), sq),
        _poly_function("quad_aniso", aniso, sq),
        _poly_function("saddle", _poly(2, {(2, 0): 1.0, (0, 2): -1.0}), sq),
        _poly_function("cubic", _poly(2, {(3, 0): 1.0, (0, 3): 1.0}), sq),
        _exp_function(sq),
        _sinsin_function(sq),
        _poly_function("quad_aniso", aniso, sq).with_weight(WEIGHTS["one_plus_x2"]),
    ]


def get_function(name: str) -> CorpusFunction:
    for f in corpus():
        if f.name == name:
            return f
    raise KeyError(f"unknown corpus function {name!r}; known: {[f.name for f in corpus()]}")


# predicted constants

_PREDICTED: dict[str, float] = {}


def _k_at_nodes(f: CorpusFunction, op: ProjectionOperator, p, pts: np.ndarray, threads: int | None,
                q: int, grid_points: int) -> np.ndarray:
    d = op.d
    m = detect_k(op) + 1
    if closed_form_applicable(op):
        fact = math.factorial(m)
        pure = [tuple(m if j == i else 0 for j in range(d)) for i in range(d)]
        lam = np.array([[f.derivative(a, x) / fact for a in pure] for x in pts])
        absl = np.abs(lam)
        kstar = np.where(absl.min(axis=1) > 0,
                         np.exp(np.mean(np.log(np.where(absl > 0, absl, 1.0)), axis=1)), 0.0)
        if m % 2:
            const = np.full(len(pts), c_odd(op, p, q, grid_points))
        else:
            sig = (lam > 0).sum(axis=1)
            table = {s: c_even(op, p, int(s), q, grid_points) for s in sorted(set(sig.tolist()))}
            const = np.array([table[s] for s in sig])
        return const * kstar

    def one(x):
        pi = HomogeneousPoly(homogeneous_derivative_poly(f, x, m), m)
        return k_numeric(op, pi, p, q=q, grid_points=grid_points).value

    with ThreadPoolExecutor(max_workers=threads) as ex:
        return np.array(list(ex.map(one, pts)))


def predicted_constant(f: CorpusFunction, op: ProjectionOperator, p, omega: Weight | None = None,
                       q: int = QUAD_ORDER, grid_points: int = GRID_POINTS,
                       threads: int | None = None) -> float:
    """``||K(d^m f / m!)||_{L_tau(R0, omega)}`` by tensor Gauss-Legendre quadrature.

    ``K^tau`` is integrated directly, so ``tau < 1`` needs no special care.
    """
    p = parse_p(p)
    omega = f.omega if omega is None else omega
    key = f"predicted|{f.name}|{omega.name if omega else None}|{op.key()}|p={p}|q={q}|grid={grid_points}"
    if key in _PREDICTED:
        return _PREDICTED[key]
    m = detect_k(op) + 1
    t = tau(m, op.d, p)
    rule = QuadratureRule.on_block(f.domain, q)
    K = _k_at_nodes(f, op, p, rule.points, threads, q, grid_points)
    if omega is not None:
        w = np.asarray(omega(rule.points), dtype=float)
        if np.any(w <= 0):
            raise ValueError("weight is not positive at a quadrature node")
        K = K * w
    val = float(np.dot(rule.weights, K ** t) ** (1.0 / t))
    _PREDICTED[key] = val
    return val


# convergence studies

@dataclass(frozen=True)
class ConvergenceRecord:
    kind: str
    N: int
    n: int
    cells: int
    error: float
    scaled: float
    predicted: float
    max_diam: float = field(default=math.nan, compare=False)
    scaled_exponent: float = field(default=1.0, compare=False)

    @property
    def ratio(self) -> float:
        return self.scaled / self.predicted if self.predicted > 0 else math.inf

    @property
    def budget_scaled(self) -> float:
        """Error scaled by the budget instead of the realized cell count."""
        return self.scaled * (self.N / self.cells) ** self.scaled_exponent


def integer_root(N: int, d: int) -> int:
    """Largest ``n`` with ``n^d <= N``."""
    n = max(1, int(round(N ** (1.0 / d))))
    while n ** d > N:
        n -= 1
    while (n + 1) ** d <= N:
        n += 1
    return n


def build_spec(f: CorpusFunction, op: ProjectionOperator, p, kind: Kind | str, M: float | None = None,
               omega: Weight | None = None) -> LocalBlockSpec:
    kind = Kind(kind)
    omega = f.omega if omega is None else omega
    if kind is Kind.ADAPTIVE_CF:
        return spec_from_closed_form(f, op, p, omega=omega)
    if kind is Kind.ADAPTIVE_KM:
        if M is None:
            raise ValueError("kind adaptive-km needs M")
        return spec_from_km(f, op, p, M, omega=omega)
    raise ValueError("uniform studies have no block specification")


def run_study(f: CorpusFunction, op: ProjectionOperator, p, budgets: Sequence[int], kind: Kind | str,
              M: float | None = None, omega: Weight | None = None, q: int = QUAD_ORDER,
              grid_points: int = GRID_POINTS, threads: int | None = None) -> list[ConvergenceRecord]:
    """Error of the partition selected for each budget, with the predicted constant."""
    kind = Kind(kind)
    p = parse_p(p)
    budgets = [int(N) for N in budgets]
    if any(b >= a for a, b in zip(budgets[1:], budgets)) or not budgets:
        raise ValueError("budgets must be a non-empty increasing list")
    if op.d != f.dim:
        raise ValueError(f"operator dimension {op.d} differs from function dimension {f.dim}")
    omega = f.omega if omega is None else omega
    d = op.d
    m = detect_k(op) + 1
    predicted = predicted_constant(f, op, p, omega, q, grid_points, threads)
    spec = None if kind is Kind.UNIFORM else build_spec(f, op, p, kind, M, omega)

    def one(N: int) -> ConvergenceRecord:
        if kind is Kind.UNIFORM:
            n = integer_root(N, d)
            P = uniform_partition(f.domain, n)
        else:
            A: AdaptivePartition = partition_for_budget(spec, N)
            n, P = A.n, A.partition
        err = partition_error(f.error_input(), op, P, p, omega, q, grid_points)
        cells = len(P)
        return ConvergenceRecord(kind.value, N, n, cells, err, cells ** (m / d) * err, predicted,
                                 P.max_diam(), m / d)

    # specs memoize per point, so adaptive budgets run in order on one thread
    workers = threads if kind is Kind.UNIFORM else 1
    with ThreadPoolExecutor(max_workers=workers) as ex:
        records = list(ex.map(one, budgets))
    return sorted(records, key=lambda r: r.N)


def admissibility(records: Sequence[ConvergenceRecord], d: int) -> float:
    """``max_N N^(1/d) max diam`` over the study."""
    return max(r.N ** (1.0 / d) * r.max_diam for r in records)


def loglog_slope(records: Sequence[ConvergenceRecord]) -> float:
    """Least-squares slope of log(error) against log(cells)."""
    if len(records) < 2:
        return math.nan
    x = np.log([r.cells for r in records])
    y = np.log([r.error for r in records])
    return float(np.polyfit(x, y, 1)[0])


@dataclass
class Gate:
    name: str
    passed: bool
    detail: str


def check_gates(records: Sequence[ConvergenceRecord], lower: bool = True, upper: bool = True) -> list[Gate]:
    """Lower bound for every kind; upper bound for closed-form adaptive studies."""
    gates = []
    for kind, rows in _group(records).items():
        last = rows[-1]
        if lower:
            gates.append(Gate(f"{kind}:lower", last.ratio >= LOWER_SLACK,
                              f"ratio {last.ratio:.6g} >= {LOWER_SLACK}"))
        if upper and kind == Kind.ADAPTIVE_CF.value:
            gates.append(Gate(f"{kind}:upper", last.ratio <= UPPER_SLACK,
                              f"ratio {last.ratio:.6g} <= {UPPER_SLACK}"))
    return gates


def _group(records) -> dict[str, list[ConvergenceRecord]]:
    out: dict[str, list[ConvergenceRecord]] = {}
    order = [k.value for k in Kind]
    for r in sorted(records, key=lambda r: (order.index(r.kind) if r.kind in order else len(order), r.N)):
        out.setdefault(r.kind, []).append(r)
    return out


CSV_COLUMNS = ["kind", "N", "n", "cells", "error", "scaled", "predicted", "ratio"]


def _fmt(v) -> str:
    return f"{v:.17g}" if isinstance(v, float) else str(v)


def report_csv(records: Sequence[ConvergenceRecord]) -> str:
    if not records:
        raise ValueError("no records to report")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for rows in _group(records).values():
        for r in rows:
            w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def report_summary(records: Sequence[ConvergenceRecord], d: int | None = None) -> str:
    lines = []
    for kind, rows in _group(records).items():
        last = rows[-1]
        line = (f"{kind}: final N={last.N} cells={last.cells} scaled={last.scaled:.6g} "
                f"predicted={last.predicted:.6g} ratio={last.ratio:.6g} slope={loglog_slope(rows):.4f}")
        if d is not None:
            line += f" admissibility={admissibility(rows, d):.6g}"
        lines.append(line)
    where = CONSTANTS.path if CONSTANTS.path is not None else "memory only"
    lines.append(f"constant cache: {where} ({len(CONSTANTS.items())} entries)")
    return "\n".join(lines) + "\n"


def report(records: Sequence[ConvergenceRecord], d: int | None = None) -> tuple[str, str]:
    """CSV text and a plain-text summary."""
    return report_csv(records), report_summary(records, d)
