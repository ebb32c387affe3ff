"""Local block specifications and the tiling construction of adapted partitions.

A partition ``P_n`` is built from the coarse uniform partition ``Q_n`` of the
domain: each coarse cell ``Q`` is tiled by translates of ``n^-2 R(x_Q)``,
where ``x_Q`` is the barycenter of ``Q``.  Tiles inside ``Q`` form part 1;
tiles cut by the boundary of ``Q`` are clipped and subdivided (part 2).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .blocks import Block, BlockPartition
from .kfun import (HomogeneousPoly, c_even, c_odd, check_hypotheses, closed_form_applicable,
                   k_modified, k_numeric)
from .norms import GRID_POINTS, parse_p, uniform_grid
from .poly import homogeneous_derivative_poly
from .proj import ProjectionOperator, detect_k

CORNER = "corner"
CENTER = "center"
SLIVER = 1e-14
K_FLOOR = 1e-10


class SpecError(ValueError):
    pass


def tau(m: int, d: int, p) -> float:
    """Exponent of the sharp constant: ``1/tau = m/d + 1/p``."""
    p = parse_p(p)
    return 1.0 / (m / d + (0.0 if p == math.inf else 1.0 / p))


class LocalBlockSpec:
    """Map ``x -> R(x)`` (a block centered at the origin) on a domain ``R0``.

    ``sides`` returns the side lengths of ``R(x)``.  Values are memoized per
    point, and the construction only ever queries coarse-cell barycenters.
    """

    def __init__(self, domain: Block, sides: Callable[[np.ndarray], Sequence[float]], name: str = "spec"):
        self.domain = domain
        self._sides = sides
        self._memo: dict[tuple, np.ndarray] = {}
        self.name = name

    @property
    def dim(self) -> int:
        return self.domain.dim

    def sides(self, x) -> np.ndarray:
        key = tuple(float(v) for v in np.asarray(x, dtype=float))
        if key not in self._memo:
            s = np.asarray(self._sides(np.array(key)), dtype=float)
            if s.shape != (self.dim,) or np.any(~np.isfinite(s)) or np.any(s <= 0):
                raise SpecError(f"specification gives invalid sides {s} at x={list(key)}")
            self._memo[key] = s
        return self._memo[key]

    def block(self, x) -> Block:
        return Block.centered(self.sides(x))

    def volume(self, x) -> float:
        return float(np.prod(self.sides(x)))

    def sample(self, grid_points: int = GRID_POINTS) -> tuple[np.ndarray, np.ndarray]:
        """Points of a uniform grid over the domain and the spec's sides there."""
        lo, hi = np.asarray(self.domain.lo), np.asarray(self.domain.hi)
        pts = lo + (uniform_grid(self.dim, grid_points) + 0.5) * (hi - lo)
        return pts, np.array([self.sides(x) for x in pts])

    def check(self, grid_points: int = GRID_POINTS) -> float:
        """Validate positivity on a sample grid; returns the sup of diam(R(x)) seen."""
        _, sides = self.sample(grid_points)
        return float(np.sqrt((sides ** 2).sum(axis=1)).max())

    def inverse_volume_integral(self, q: int = 20) -> float:
        """Quadrature value of ``int_R0 |R(x)|^-1 dx``."""
        from .norms import QuadratureRule
        rule = QuadratureRule.on_block(self.domain, q)
        return rule.integrate(lambda pts: np.array([1.0 / self.volume(x) for x in pts]))


def constant_spec(domain: Block, sides: Sequence[float]) -> LocalBlockSpec:
    s = np.asarray(sides, dtype=float)
    return LocalBlockSpec(domain, lambda x: s, name="constant")


def default_subdivisions(n: int, d: int = 2) -> int:
    """Pieces per axis for clipped boundary tiles: ``max(1, floor(n^(1/(2d))))``.

    Grows without bound (fragment diameters become ``o(n^-2)``) while the
    number of fragment pieces stays ``o(n^(2d))``.
    """
    return max(1, int(math.floor(n ** (1.0 / (2 * d)) + 1e-12)))


def log_subdivisions(n: int, d: int = 2) -> int:
    """The alternative rule ``max(1, floor(ln n))``."""
    return max(1, int(math.floor(math.log(n)))) if n >= 1 else 1


def uniform_partition(R0: Block, n: int) -> BlockPartition:
    """``n^d`` congruent cells."""
    if n < 1:
        raise ValueError("n must be >= 1")
    lo, hi = _uniform_arrays(R0, n)
    return BlockPartition(R0, [Block(tuple(a), tuple(b)) for a, b in zip(lo, hi)])


def _uniform_arrays(R0: Block, n: int) -> tuple[np.ndarray, np.ndarray]:
    d = R0.dim
    edges = [np.linspace(R0.lo[i], R0.hi[i], n + 1) for i in range(d)]
    idx = np.array(list(itertools.product(range(n), repeat=d)), dtype=int)
    lo = np.stack([edges[i][idx[:, i]] for i in range(d)], axis=1)
    hi = np.stack([edges[i][idx[:, i] + 1] for i in range(d)], axis=1)
    return lo, hi


def _axis_segments(a: float, b: float, h: float, anchor: str, thin: float):
    """Split ``[a, b]`` by a lattice of spacing ``h``; returns (starts, ends, is_full)."""
    L = b - a
    if anchor == CORNER:
        nfull = int(math.floor(L / h * (1 + 1e-12)))
        cuts = [a + j * h for j in range(nfull + 1)]
        if b - cuts[-1] > thin:
            cuts.append(b)
            full = [True] * nfull + [False]
        else:
            cuts[-1] = b if nfull else cuts[-1]
            full = [True] * nfull
        if nfull == 0:
            return np.array([a]), np.array([b]), np.array([False])
        return np.array(cuts[:-1]), np.array(cuts[1:]), np.array(full)
    # one tile centered at the midpoint of [a, b]
    c = (a + b) / 2
    half = int(math.floor((L / 2 - h / 2) / h * (1 + 1e-12))) if L >= h else -1
    if half < 0:
        return np.array([a]), np.array([b]), np.array([False])
    cuts = [c - h / 2 - j * h for j in range(half, 0, -1)] + [c - h / 2] + \
           [c + h / 2 + j * h for j in range(half + 1)]
    cuts = sorted(set(cuts))
    starts, ends, full = [], [], []
    if cuts[0] - a > thin:
        starts.append(a); ends.append(cuts[0]); full.append(False)
    else:
        cuts[0] = a
    if b - cuts[-1] > thin:
        tail = True
    else:
        cuts[-1] = b
        tail = False
    for s, e in zip(cuts[:-1], cuts[1:]):
        starts.append(s); ends.append(e); full.append(True)
    if tail:
        starts.append(cuts[-1]); ends.append(b); full.append(False)
    return np.array(starts), np.array(ends), np.array(full)


@dataclass
class AdaptivePartition:
    partition: BlockPartition
    part1: np.ndarray
    part2: np.ndarray
    n: int
    governing: np.ndarray
    barycenters: np.ndarray
    tile_sides: np.ndarray
    subdivisions: int

    def __len__(self) -> int:
        return len(self.partition)

    def stats(self) -> dict:
        lo, hi = self.partition.arrays()
        diam = np.sqrt(((hi - lo) ** 2).sum(axis=1))
        return {
            "n": self.n,
            "cells": len(self.partition),
            "part1": int(len(self.part1)),
            "part2": int(len(self.part2)),
            "max_diam_part1": float(diam[self.part1].max(initial=0.0)),
            "max_diam_part2": float(diam[self.part2].max(initial=0.0)),
        }

    def small_diam_stat(self) -> float:
        """``n^2`` times the largest part-2 diameter (0 when part 2 is empty)."""
        return self.n ** 2 * self.stats()["max_diam_part2"]

    def check_translates(self, domain_diam: float, tol: float = 1e-12) -> None:
        """Part-1 cells are translates of the scaled spec block near their barycenter."""
        lo, hi = self.partition.arrays()
        for i in self.part1:
            g = self.governing[i]
            want = self.tile_sides[g]
            if not np.allclose(hi[i] - lo[i], want, rtol=1e-9, atol=tol):
                raise AssertionError(f"cell {i} is not a translate of the scaled spec block")
            y = self.barycenters[g]
            corners = np.array(list(itertools.product(*zip(lo[i], hi[i]))))
            if np.sqrt(((corners - y) ** 2).sum(axis=1)).max() > domain_diam / self.n + tol:
                raise AssertionError(f"cell {i} is farther than diam(R0)/n from its barycenter")


def _coarse_cells(R0: Block, n: int):
    lo, hi = _uniform_arrays(R0, n)
    return lo, hi, (lo + hi) / 2


def _tile_cell(qlo, qhi, h, anchor, thin, s):
    """Cells of one coarse block: arrays (lo, hi, is_part1)."""
    d = len(qlo)
    segs = [_axis_segments(qlo[i], qhi[i], h[i], anchor, thin) for i in range(d)]
    counts = [len(sg[0]) for sg in segs]
    idx = np.array(list(itertools.product(*[range(c) for c in counts])), dtype=int)
    lo = np.stack([segs[i][0][idx[:, i]] for i in range(d)], axis=1)
    hi = np.stack([segs[i][1][idx[:, i]] for i in range(d)], axis=1)
    full = np.all(np.stack([segs[i][2][idx[:, i]] for i in range(d)], axis=1), axis=1)
    if s > 1 and not full.all():
        frag_lo, frag_hi = lo[~full], hi[~full]
        sub = np.array(list(itertools.product(range(s), repeat=d)), dtype=float)
        w = (frag_hi - frag_lo) / s
        slo = (frag_lo[:, None, :] + sub[None, :, :] * w[:, None, :]).reshape(-1, d)
        shi = (frag_lo[:, None, :] + (sub[None, :, :] + 1) * w[:, None, :]).reshape(-1, d)
        lo = np.concatenate([lo[full], slo])
        hi = np.concatenate([hi[full], shi])
        full = np.concatenate([np.ones(int(full.sum()), bool), np.zeros(len(slo), bool)])
    return lo, hi, full


def count_cells(spec: LocalBlockSpec, n: int, anchor: str = CORNER,
                subdivisions: Callable[[int], int] = default_subdivisions) -> int:
    """``#P_n`` without materializing the partition."""
    R0 = spec.domain
    qlo, qhi, xq = _coarse_cells(R0, n)
    thin = SLIVER * R0.diam()
    s = subdivisions(n, R0.dim)
    total = 0
    for j in range(len(xq)):
        h = spec.sides(xq[j]) / n ** 2
        segs = [_axis_segments(qlo[j, i], qhi[j, i], h[i], anchor, thin) for i in range(R0.dim)]
        all_ = math.prod(len(sg[0]) for sg in segs)
        full = math.prod(int(sg[2].sum()) for sg in segs)
        total += full + (all_ - full) * s ** R0.dim
    return total


def build_adaptive(spec: LocalBlockSpec, n: int, anchor: str = CORNER,
                   subdivisions: Callable[[int], int] = default_subdivisions,
                   validate: bool = True) -> AdaptivePartition:
    """Tile each coarse cell by translates of ``n^-2 R(x_Q)``.

    ``anchor="corner"`` aligns the tiling with the lower corner of each coarse
    cell; ``"center"`` centers one tile on the barycenter.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if anchor not in (CORNER, CENTER):
        raise ValueError(f"unknown anchor {anchor!r}")
    R0 = spec.domain
    qlo, qhi, xq = _coarse_cells(R0, n)
    thin = SLIVER * R0.diam()
    s = subdivisions(n, R0.dim)
    los, his, p1, gov, tiles = [], [], [], [], []
    for j in range(len(xq)):
        try:
            h = spec.sides(xq[j]) / n ** 2
        except Exception as exc:
            raise SpecError(f"specification failed at coarse cell {j} (barycenter {xq[j].tolist()}): {exc}") from exc
        lo, hi, full = _tile_cell(qlo[j], qhi[j], h, anchor, thin, s)
        los.append(lo); his.append(hi); p1.append(full)
        gov.append(np.full(len(lo), j)); tiles.append(h)
    lo, hi = np.concatenate(los), np.concatenate(his)
    full, gov = np.concatenate(p1), np.concatenate(gov)
    cells = [Block(tuple(a), tuple(b)) for a, b in zip(lo, hi)]
    part = BlockPartition(R0, cells, validate=validate)
    if len(part) != len(cells):
        raise AssertionError("construction produced degenerate cells")
    ids = np.arange(len(cells))
    return AdaptivePartition(part, ids[full], ids[~full], n, gov, xq, np.array(tiles), s)


def partition_for_budget(spec: LocalBlockSpec, N: int, anchor: str = CORNER,
                         subdivisions: Callable[[int], int] = default_subdivisions,
                         lookahead: int = 2) -> AdaptivePartition:
    """``P_n`` for the largest ``n`` with ``#P_n <= N``.

    Counts are computed for increasing ``n`` and the search stops once
    ``lookahead`` consecutive indices exceed the budget.
    """
    c2 = count_cells(spec, 2, anchor, subdivisions)
    if N < c2:
        raise ValueError(f"budget N={N} is below #P_2 = {c2}")
    best, n, over = 2, 3, 0
    while over < lookahead:
        if count_cells(spec, n, anchor, subdivisions) <= N:
            best, over = n, 0
        else:
            over += 1
        n += 1
    return build_adaptive(spec, best, anchor, subdivisions)


# specifications driven by a function's m-th derivatives

def _weight_at(omega, x) -> float:
    w = float(np.asarray(omega(np.asarray(x, dtype=float)[None, :])).reshape(-1)[0])
    if not w > 0:
        raise SpecError(f"weight is not positive at {list(np.asarray(x, dtype=float))}")
    return w


def _weight_factor(omega, x, t: float, d: int, ref: float) -> float:
    """``(omega(x) / ref)^(-tau/d)``; the reference makes the spec invariant under ``omega -> c omega``."""
    if omega is None:
        return 1.0
    return (_weight_at(omega, x) / ref) ** (-t / d)


def _weight_reference(omega, R0: Block) -> float:
    return 1.0 if omega is None else _weight_at(omega, R0.center())


def spec_from_km(f, op: ProjectionOperator, p, M: float, omega=None, domain: Block | None = None,
                 **kw) -> LocalBlockSpec:
    """Blocks from the diameter-capped error function, regularized by ``1/M``."""
    d = op.d
    if M < math.sqrt(d):
        raise SpecError(f"M must be >= sqrt(d) = {math.sqrt(d):.6g}")
    m = detect_k(op) + 1
    t = tau(m, d, p)
    R0 = domain or f.domain
    ref = _weight_reference(omega, R0)

    def sides(x):
        pi = HomogeneousPoly(homogeneous_derivative_poly(f, x, m), m)
        res = k_modified(op, pi, p, M, **kw)
        scale = (res.value + 1.0 / M) ** (-t / d) * _weight_factor(omega, x, t, d, ref)
        return scale * np.asarray(res.scales)

    return LocalBlockSpec(R0, sides, name=f"km(M={M:g})")


def _epsilon_block(op: ProjectionOperator, signs: Sequence[int], p, m: int, **kw) -> np.ndarray:
    """Unit-volume minimizing block for ``sum eps_i X_i^m``: the cube when optimal."""
    res = k_numeric(op, HomogeneousPoly.pure(signs, m), p, **kw)
    if res.degenerate or res.scales is None:
        raise SpecError("no minimizing block for the signed pure-power polynomial")
    D = np.asarray(res.scales)
    if np.allclose(D, 1.0, atol=1e-3):
        return np.ones(len(D))
    return D


def spec_from_closed_form(f, op: ProjectionOperator, p, omega=None, domain: Block | None = None,
                          grid_points: int = GRID_POINTS, **kw) -> LocalBlockSpec:
    """Blocks ``K(pi_x)^(-tau/d) R*(x)`` built from the pure m-th derivatives."""
    d = op.d
    m = detect_k(op) + 1
    if not closed_form_applicable(op):
        raise SpecError(f"closed-form hypotheses fail for {op.key()}: {check_hypotheses(op).failed()}")
    t = tau(m, d, p)
    R0 = domain or f.domain
    pure = [tuple(m if j == i else 0 for j in range(d)) for i in range(d)]
    fact = math.factorial(m)

    def lambdas(x):
        return np.array([f.derivative(a, x) for a in pure]) / fact

    lo, hi = np.asarray(R0.lo), np.asarray(R0.hi)
    grid = lo + (uniform_grid(d, grid_points) + 0.5) * (hi - lo)
    lam = np.array([lambdas(x) for x in grid])
    if np.any(np.abs(lam).min(axis=1) < K_FLOOR):
        raise SpecError("K vanishes on the sample grid; use spec_from_km (positivity hypothesis violated)")
    eps = np.sign(lam[0])
    if np.any(np.sign(lam) != eps):
        raise SpecError("a pure m-th derivative changes sign over the domain; use spec_from_km")
    eps = eps.astype(int)
    if m % 2:
        C = c_odd(op, p, **kw)
        s = None
    else:
        s = int((eps > 0).sum())
        C = c_even(op, p, s, **kw)
    base = _epsilon_block(op, eps, p, m, **kw)
    ref = _weight_reference(omega, R0)

    def sides(x):
        l = lambdas(x)
        if np.any(np.sign(l) != eps) or np.abs(l).min() < K_FLOOR:
            raise SpecError(f"positivity/sign hypothesis violated at {list(x)}")
        a = np.abs(l)
        K = C * float(np.exp(np.mean(np.log(a))))
        det = float(np.prod(a))
        star = det ** (1.0 / (m * d)) * a ** (-1.0 / m) * base
        return K ** (-t / d) * _weight_factor(omega, x, t, d, ref) * star

    return LocalBlockSpec(R0, sides, name="closed-form")
