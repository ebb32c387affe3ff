"""Projection operators on ``C^0([-1/2,1/2]^d)`` and their transfer to blocks.

Every shipped operator is a finite combination of sample functionals:
``I f = sum_j (A f(Y))_j X^{beta_j}`` where ``Y`` are sample points (lattice
nodes, or quadrature nodes for the L2 projection) and ``beta_j`` runs over a
monomial basis of the image space.  Polynomial inputs are handled exactly:
the L2 projection then uses a Gauss rule of sufficient order.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .blocks import Block, normalize
from .norms import (GRID_POINTS, LINF_REFINE_RTOL, QUAD_ORDER, parse_p, staggered_grid,
                    tensor_gauss, uniform_grid)
from .poly import (MultiIndex, Polynomial, PolySpace, SpaceKind, compose_affine, compose_signs,
                   eval_poly, monomial_matrix, multi_indices)

REPRODUCTION_TOL = 1e-10
REPRODUCTION_GRID = 17
HYPOTHESIS_SAMPLES = 20
K_MAX = 8


class OperatorError(ValueError):
    pass


class Variant(str, Enum):
    LAGRANGE = "lagrange"
    L2 = "l2"
    BOUNDARY = "boundary"


class NodeKind(str, Enum):
    EQUISPACED = "equispaced"
    CHEBYSHEV = "chebyshev"


def lagrange_nodes(k: int, kind: NodeKind | str = NodeKind.EQUISPACED) -> np.ndarray:
    """``k+1`` sorted nodes in ``[-1/2, 1/2]``.

    ``k = 0`` with equispaced nodes gives the midpoint ``{0}``.
    """
    kind = NodeKind(kind)
    if k < 0:
        raise OperatorError("k must be >= 0")
    if kind is NodeKind.CHEBYSHEV:
        if k == 0:
            raise OperatorError("Chebyshev nodes need k >= 1")
        v = 0.5 * np.cos(np.arange(k + 1) * np.pi / k)
    elif k == 0:
        v = np.zeros(1)
    else:
        v = -0.5 + np.arange(k + 1) / k
    v = np.sort(v)
    # exact mirror symmetry about 0
    v = (v - v[::-1]) / 2
    return v


def _lagrange_1d_coeffs(nodes: np.ndarray) -> np.ndarray:
    """Row ``j`` holds the monomial coefficients (increasing) of the j-th Lagrange basis polynomial."""
    n = len(nodes)
    out = np.zeros((n, n))
    for j in range(n):
        others = np.delete(nodes, j)
        c = np.polynomial.polynomial.polyfromroots(others) if len(others) else np.ones(1)
        out[j] = c / np.prod(nodes[j] - others)
    return out


@dataclass(frozen=True)
class ProjectionOperator:
    """A projector onto a polynomial space on the canonical block.

    Parameters
    ----------
    variant : {"lagrange", "l2", "boundary"}
    d : int
        Dimension.
    k : int
        Construction degree: ``P_k**`` lattice for Lagrange, the space index
        for L2, and ``P_k*`` for boundary-lattice interpolation.
    nodes : {"equispaced", "chebyshev"}
        1-D node family for the lattice variants.
    space : {"Pk", "PkStar", "PkStarStar"}
        Target space of the L2 projection.
    """

    variant: Variant
    d: int
    k: int
    nodes: NodeKind = NodeKind.EQUISPACED
    space: SpaceKind = SpaceKind.PK_STAR_STAR
    node_values: tuple[float, ...] | None = None
    _cache: dict = field(default_factory=dict, compare=False, repr=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "nodes", NodeKind(self.nodes))
        object.__setattr__(self, "space", SpaceKind(self.space))
        if self.d < 1 or self.k < 0:
            raise OperatorError("need d >= 1 and k >= 0")
        if self.variant is Variant.BOUNDARY and self.k < 1:
            raise OperatorError("boundary-lattice interpolation needs k >= 1")
        if self.node_values is not None:
            v = np.asarray(self.node_values, dtype=float)
            if len(v) != self.k + 1 or len(set(v.tolist())) != len(v):
                raise OperatorError("custom node set must have k+1 distinct values")
            if np.any(np.abs(v) > 0.5):
                raise OperatorError("custom nodes must lie in [-1/2, 1/2]")
        else:
            lagrange_nodes(self.k, self.nodes)  # validates k=0 Chebyshev

    # identity
    def key(self) -> str:
        """Stable content key, used for caching constants."""
        parts = [self.variant.value, f"d={self.d}", f"k={self.k}"]
        if self.variant is Variant.L2:
            parts.insert(1, self.space.value)
        else:
            parts.insert(1, self.nodes.value)
        if self.node_values is not None:
            parts.append("nodes=" + ",".join(f"{v:.17g}" for v in self.node_values))
        return ":".join(parts)

    def __str__(self):
        return self.key()

    def descriptor(self) -> dict:
        out = {"variant": self.variant.value, "k": self.k, "d": self.d}
        if self.variant is Variant.L2:
            out["space"] = self.space.value
        else:
            out["nodes"] = self.nodes.value
        return out

    # sample-functional representation
    def node_set(self) -> np.ndarray:
        if self.node_values is not None:
            return np.sort(np.asarray(self.node_values, dtype=float))
        return lagrange_nodes(self.k, self.nodes)

    @cached_property
    def image_basis(self) -> list[MultiIndex]:
        if self.variant is Variant.LAGRANGE:
            return PolySpace(SpaceKind.PK_STAR_STAR, self.k, self.d).basis()
        if self.variant is Variant.BOUNDARY:
            return PolySpace(SpaceKind.PK_STAR, self.k, self.d).basis()
        return PolySpace(self.space, self.k, self.d).basis()

    @cached_property
    def image_axis_degree(self) -> int:
        return max(max(a) for a in self.image_basis)

    @cached_property
    def boundary_points(self) -> np.ndarray:
        """Lattice points used by boundary-lattice interpolation, boundary first."""
        u = self.node_set()
        lattice = list(itertools.product(range(self.k + 1), repeat=self.d))
        on_bd = [p for p in lattice if any(i in (0, self.k) for i in p)]
        inner = [p for p in lattice if p not in on_bd]
        basis = self.image_basis
        chosen: list[np.ndarray] = []
        rank = 0
        for p in on_bd + inner:
            x = u[list(p)]
            trial = np.array(chosen + [x])
            if np.linalg.matrix_rank(monomial_matrix(basis, trial), tol=1e-10) > rank:
                chosen.append(x)
                rank += 1
            if rank == len(basis):
                break
        if rank < len(basis):
            raise OperatorError("lattice cannot be made unisolvent for P_k*")
        return np.array(chosen)

    def plan(self, q: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Sample points ``Y`` and matrix ``A`` with ``coeffs(I f) = A @ f(Y)``.

        ``q`` is the per-axis Gauss order of the L2 projection (ignored otherwise).
        """
        if self.variant is not Variant.L2:
            q = 0
        elif q is None:
            q = QUAD_ORDER
        if q in self._cache.setdefault("plan", {}):
            return self._cache["plan"][q]
        basis = self.image_basis
        if self.variant is Variant.LAGRANGE:
            u = self.node_set()
            L = _lagrange_1d_coeffs(u)
            Y = np.array(list(itertools.product(u, repeat=self.d)))
            idx = list(itertools.product(range(self.k + 1), repeat=self.d))
            pos = {tuple(b): i for i, b in enumerate(basis)}
            A = np.zeros((len(basis), len(idx)))
            for col, node in enumerate(idx):
                for beta in idx:
                    A[pos[beta], col] = math.prod(L[node[i], beta[i]] for i in range(self.d))
        elif self.variant is Variant.BOUNDARY:
            Y = self.boundary_points
            V = monomial_matrix(basis, Y)
            if np.linalg.cond(V) > 1e12:
                raise OperatorError("singular Vandermonde system for the boundary lattice")
            A = np.linalg.inv(V)
        else:
            Y, w = tensor_gauss(self.d, q)
            B = monomial_matrix(basis, Y)
            G = B.T @ (B * w[:, None])
            if np.linalg.cond(G) > 1e14:
                raise OperatorError("singular Gram matrix for the L2 projection")
            A = np.linalg.solve(G, (B * w[:, None]).T)
        Y = np.ascontiguousarray(Y)
        self._cache["plan"][q] = (Y, A)
        return Y, A

    def exact_order(self, poly_axis_degree: int) -> int:
        """Gauss order integrating ``f * basis`` exactly for a polynomial ``f``."""
        need = math.ceil((poly_axis_degree + self.image_axis_degree + 1) / 2)
        return max(need, math.ceil((2 * self.k + 3) / 2))

    def sample_matrix(self, pts: np.ndarray, q: int | None = None) -> np.ndarray:
        """``E`` with ``(I f)(pts) = E @ f(Y)``."""
        Y, A = self.plan(q)
        return monomial_matrix(self.image_basis, pts) @ A

    # action
    def apply(self, f, q: int | None = None) -> Polynomial:
        """Project ``f``; polynomials are projected exactly."""
        if isinstance(f, Polynomial):
            if f.dim != self.d:
                raise OperatorError("dimension mismatch")
            if self.variant is Variant.L2:
                q = self.exact_order(f.max_axis_degree())
            Y, A = self.plan(q)
            vals = eval_poly(f, Y)
        else:
            Y, A = self.plan(q)
            vals = np.asarray(f(Y), dtype=float).reshape(-1)
        coef = A @ vals
        return Polynomial(self.d, {tuple(b): c for b, c in zip(self.image_basis, coef)})

    def residual(self, alpha: Sequence[int]) -> Polynomial:
        """``X^alpha - I(X^alpha)``, cached."""
        alpha = tuple(alpha)
        cache = self._cache.setdefault("residual", {})
        if alpha not in cache:
            mono = Polynomial.monomial(alpha)
            r = mono - self.apply(mono)
            # drop round-off below the reproduction tolerance
            cache[alpha] = Polynomial(self.d, {a: c for a, c in r.items() if abs(c) > 1e-13})
        return cache[alpha]

    def residual_matrix(self, indices: Sequence[Sequence[int]], pts: np.ndarray) -> np.ndarray:
        """Columns are ``X^alpha - I X^alpha`` evaluated at ``pts``."""
        cols = [eval_poly(self.residual(a), pts) for a in indices]
        return np.stack(cols, axis=1) if cols else np.zeros((len(pts), 0))

    # per-cell errors on many blocks at once
    def cell_errors(self, f, lo: np.ndarray, hi: np.ndarray, p, omega=None,
                    q: int = QUAD_ORDER, grid_points: int = GRID_POINTS) -> np.ndarray:
        """``||f - I_R f||_{L_p(R, omega)}`` for the blocks ``[lo_c, hi_c]``."""
        p = parse_p(p)
        lo = np.atleast_2d(lo)
        hi = np.atleast_2d(hi)
        center, scale = (lo + hi) / 2, hi - lo
        d = self.d
        if p == math.inf:
            coarse = self._cell_residual_values(f, center, scale, uniform_grid(d, grid_points), q, omega)
            mid = self._cell_residual_values(f, center, scale, staggered_grid(d, grid_points), q, omega)
            a, b = np.abs(coarse).max(axis=1), np.abs(mid).max(axis=1)
            est = np.maximum(a, b)
            redo = np.abs(a - b) > LINF_REFINE_RTOL * est
            if redo.any():
                fine = self._cell_residual_values(f, center[redo], scale[redo],
                                                  uniform_grid(d, 2 * grid_points - 1), q, omega)
                est[redo] = np.maximum(est[redo], np.abs(fine).max(axis=1))
            return est
        u, w = tensor_gauss(d, q)
        vals = np.abs(self._cell_residual_values(f, center, scale, u, q, omega))
        det = np.prod(scale, axis=1)
        top = vals.max(axis=1)
        safe = np.where(top > 0, top, 1.0)
        integral = ((vals / safe[:, None]) ** p) @ w
        return np.where(top > 0, safe * (integral * det) ** (1.0 / p), 0.0)

    def _cell_residual_values(self, f, center, scale, u, q, omega) -> np.ndarray:
        """``(f o phi - I(f o phi))(u)`` per cell, shape ``(n_cells, n_u)``."""
        ncell = center.shape[0]
        out = np.empty((ncell, u.shape[0]))
        step = max(1, int(4_000_000 // max(1, u.shape[0] + 64)))
        for s in range(0, ncell, step):
            c, D = center[s:s + step], scale[s:s + step]
            if isinstance(f, Polynomial):
                vals = self._poly_residual_cells(f, c, D, u)
            else:
                Y, _ = self.plan(q)
                E = self.sample_matrix(u, q)
                fu = _eval_cells(f, c, D, u)
                fy = _eval_cells(f, c, D, Y)
                vals = fu - fy @ E.T
            if omega is not None:
                wv = _eval_cells(omega, c, D, u)
                if np.any(wv <= 0):
                    raise ValueError("weight is not positive at some sample point")
                vals = vals * wv
            out[s:s + step] = vals
        return out

    def _poly_residual_cells(self, f: Polynomial, c: np.ndarray, D: np.ndarray, u: np.ndarray) -> np.ndarray:
        # coefficients of f(c + D u) in u, per cell, keyed by exponent
        coeffs: dict[tuple, np.ndarray] = {}
        for beta, cf in f.items():
            per_axis = []
            for i, e in enumerate(beta):
                per_axis.append([(j, math.comb(e, j) * c[:, i] ** (e - j) * D[:, i] ** j)
                                 for j in range(e + 1)])
            for combo in itertools.product(*per_axis):
                gamma = tuple(j for j, _ in combo)
                val = cf * np.prod([v for _, v in combo], axis=0)
                coeffs[gamma] = coeffs.get(gamma, 0.0) + val
        keys = [g for g in sorted(coeffs) if not self.residual(g).is_zero()]
        if not keys:
            return np.zeros((c.shape[0], u.shape[0]))
        C = np.stack([np.broadcast_to(coeffs[g], (c.shape[0],)) for g in keys], axis=1)
        return C @ self.residual_matrix(keys, u).T


def _eval_cells(f, c: np.ndarray, D: np.ndarray, u: np.ndarray) -> np.ndarray:
    pts = c[:, None, :] + D[:, None, :] * u[None, :, :]
    flat = pts.reshape(-1, pts.shape[-1])
    if isinstance(f, Polynomial):
        vals = eval_poly(f, flat)
    else:
        vals = np.asarray(f(flat), dtype=float).reshape(-1)
    return vals.reshape(pts.shape[0], pts.shape[1])


def apply(op: ProjectionOperator, f, q: int | None = None) -> Polynomial:
    return op.apply(f, q)


def apply_on_block(op: ProjectionOperator, R: Block, f, q: int | None = None):
    """``I_R f = I(f o phi) o phi^{-1}``; a Polynomial for polynomial ``f``."""
    phi = normalize(R)
    D, x0 = np.asarray(phi.scales), np.asarray(phi.center)
    if isinstance(f, Polynomial):
        g = compose_affine(f, D, x0)
    else:
        g = lambda u: f(phi.forward(u))
    Ig = op.apply(g, q)
    return compose_affine(Ig, 1.0 / D, -x0 / D)


def _sup_on_grid(g: Callable, d: int, n: int = REPRODUCTION_GRID) -> float:
    pts = uniform_grid(d, n)
    return float(np.abs(np.asarray(g(pts))).max())


def reproduces(op: ProjectionOperator, alpha: Sequence[int], tol: float = REPRODUCTION_TOL) -> bool:
    """True when ``I X^alpha = X^alpha`` to ``tol`` in sup-norm on the test grid."""
    r = op.residual(alpha)
    if _sup_on_grid(lambda x: eval_poly(r, x), op.d) <= tol:
        return True
    # confirm on the doubled grid before declaring failure
    return _sup_on_grid(lambda x: eval_poly(r, x), op.d, 2 * REPRODUCTION_GRID - 1) <= tol


def detect_k(op: ProjectionOperator, k_max: int = K_MAX) -> int:
    """Largest ``k'`` such that every monomial of total degree ``<= k'`` is reproduced."""
    cache = op._cache.setdefault("detect_k", {})
    if k_max in cache:
        return cache[k_max]
    for kk in range(k_max + 1):
        ok = all(reproduces(op, a) for a in multi_indices(op.d, kk) if sum(a) == kk)
        if not ok:
            if kk == 0:
                raise OperatorError("operator does not reproduce constants")
            cache[k_max] = kk - 1
            return kk - 1
    raise OperatorError(f"all degrees up to k_max={k_max} reproduced; increase k_max")


@dataclass(frozen=True)
class Hypotheses:
    pm: bool
    sigma: bool
    star: bool
    starstar: bool

    def as_dict(self) -> dict:
        return {"H_pm": self.pm, "H_sigma": self.sigma, "H_star": self.star, "H_starstar": self.starstar}

    def failed(self) -> list[str]:
        return [k for k, v in self.as_dict().items() if not v]


def _smooth_samples(d: int, n: int, seed: int = 0) -> list[Callable]:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        w = rng.normal(0.0, 2.0, size=d)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.5, 2.0)
        out.append(lambda x, w=w, ph=phase, a=amp: a * np.cos(x @ w + ph) + 0.3 * (x @ w) ** 2)
    return out


def _commutes(op: ProjectionOperator, tests: list, transform_poly, transform_pts) -> bool:
    grid = uniform_grid(op.d, REPRODUCTION_GRID)
    for f in tests:
        if isinstance(f, Polynomial):
            lhs = op.apply(transform_poly(f))
        else:
            lhs = op.apply(lambda x, f=f: f(transform_pts(x)))
        rhs = op.apply(f)
        diff = eval_poly(lhs, grid) - eval_poly(rhs, transform_pts(grid))
        if np.abs(diff).max() > REPRODUCTION_TOL * max(1.0, np.abs(eval_poly(rhs, grid)).max()):
            return False
    return True


def check_hypotheses(op: ProjectionOperator) -> Hypotheses:
    """Test symmetry under sign flips and permutations, and the two reproduction conditions."""
    cache = op._cache
    if "hypotheses" in cache:
        return cache["hypotheses"]
    d, k = op.d, detect_k(op)
    m = k + 1
    tests: list = [Polynomial.monomial(a) for a in PolySpace(SpaceKind.PK_STAR_STAR, k + 1, d).basis()]
    tests += _smooth_samples(d, HYPOTHESIS_SAMPLES)

    pm = True
    for eps in itertools.product((-1, 1), repeat=d):
        if all(e == 1 for e in eps):
            continue
        e = np.array(eps, dtype=float)
        if not _commutes(op, tests, lambda f, eps=eps: compose_signs(f, eps), lambda x, e=e: x * e):
            pm = False
            break

    sigma = True
    for perm in itertools.permutations(range(d)):
        if list(perm) == list(range(d)):
            continue
        pr = list(perm)
        if not _commutes(op, tests, lambda f, pr=pr: f.permute(pr), lambda x, pr=pr: x[:, pr]):
            sigma = False
            break

    star = all(reproduces(op, a) for a in PolySpace(SpaceKind.PK_STAR, k, d).basis())

    grid = uniform_grid(d, REPRODUCTION_GRID)
    pure = [tuple(m if j == i else 0 for j in range(d)) for i in range(d)]
    G = op.residual_matrix(pure, grid)
    gram = G.T @ G / len(grid)
    starstar = bool(np.linalg.svd(gram, compute_uv=False).min() > 1e-8)

    out = Hypotheses(pm, sigma, star, starstar)
    cache["hypotheses"] = out
    return out


def operator_norm_estimate(op: ProjectionOperator, extra_tests: Sequence[Callable] = (),
                           grid_points: int = GRID_POINTS, n_random: int = 20) -> float:
    """Lower estimate of ``sup ||I u|| / ||u||`` in the sup-norm.

    Candidates are the extremal sign patterns of the sample functionals at each
    grid point (these give the discrete Lebesgue function), random trigonometric
    samples and any supplied test functions.
    """
    grid = uniform_grid(op.d, grid_points)
    E = op.sample_matrix(grid)
    best = float(np.abs(E).sum(axis=1).max())
    for f in list(_smooth_samples(op.d, n_random, seed=1)) + list(extra_tests):
        If = op.apply(f)
        num = np.abs(eval_poly(If, grid)).max()
        den = np.abs(np.asarray(f(grid))).max()
        if den > 0:
            best = max(best, float(num / den))
    return best


def parse_operator(desc, d: int | None = None) -> ProjectionOperator:
    """Build an operator from a config dict or a ``variant:opt:k=..:d=..`` string."""
    if isinstance(desc, ProjectionOperator):
        return desc
    if isinstance(desc, str):
        fields = desc.split(":")
        out: dict = {"variant": fields[0]}
        for item in fields[1:]:
            if "=" in item:
                key, val = item.split("=", 1)
                out[key] = int(val)
            elif item in {n.value for n in NodeKind}:
                out["nodes"] = item
            elif item in {s.value for s in SpaceKind}:
                out["space"] = item
            else:
                raise OperatorError(f"unknown operator field {item!r}")
        desc = out
    desc = dict(desc)
    unknown = set(desc) - {"variant", "nodes", "k", "space", "d"}
    if unknown:
        raise OperatorError(f"unknown operator keys: {sorted(unknown)}")
    dim = desc.get("d", d)
    if dim is None:
        raise OperatorError("operator dimension d is required")
    try:
        return ProjectionOperator(variant=desc["variant"], d=int(dim), k=int(desc["k"]),
                                  nodes=desc.get("nodes", "equispaced"),
                                  space=desc.get("space", "PkStarStar"))
    except KeyError as exc:
        raise OperatorError(f"operator descriptor missing {exc}") from None
