"""Sparse multivariate polynomials over multi-indices.

Coefficients are floats; a polynomial is stored as a mapping from
multi-index tuples to non-zero coefficients, iterated in lexicographic
order so every reduction is deterministic.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np


class MultiIndex(tuple):
    """Tuple of non-negative integers ``(a_1, ..., a_d)``."""

    def __new__(cls, entries: Iterable[int]):
        entries = tuple(int(a) for a in entries)
        if not entries:
            raise ValueError("multi-index needs dimension >= 1")
        if any(a < 0 for a in entries):
            raise ValueError(f"negative entry in multi-index {entries}")
        return super().__new__(cls, entries)

    def order(self) -> int:
        return sum(self)

    def factorial(self) -> int:
        return math.prod(math.factorial(a) for a in self)

    def maxdeg(self) -> int:
        return max(self)


def multi_indices(d: int, max_order: int) -> list[MultiIndex]:
    """All multi-indices in dimension ``d`` with ``|a| <= max_order``, lexicographic."""
    return [MultiIndex(a) for a in itertools.product(range(max_order + 1), repeat=d)
            if sum(a) <= max_order]


def homogeneous_indices(d: int, m: int) -> list[MultiIndex]:
    return [a for a in multi_indices(d, m) if a.order() == m]


class Polynomial:
    """Immutable sparse polynomial in ``dim`` variables.

    Parameters
    ----------
    dim : int
        Number of variables.
    terms : mapping
        Multi-index -> coefficient. Exact zeros are discarded.
    """

    __slots__ = ("_dim", "_terms")

    def __init__(self, dim: int, terms: Mapping[Sequence[int], float] | None = None):
        if dim < 1:
            raise ValueError("dimension must be >= 1")
        clean: dict[MultiIndex, float] = {}
        for alpha, c in (terms or {}).items():
            alpha = MultiIndex(alpha)
            if len(alpha) != dim:
                raise ValueError(f"multi-index {alpha} does not have dimension {dim}")
            c = float(c)
            if c != 0.0:
                clean[alpha] = clean.get(alpha, 0.0) + c
        self._dim = dim
        self._terms = {a: clean[a] for a in sorted(clean) if clean[a] != 0.0}

    # construction helpers
    @classmethod
    def zero(cls, dim: int) -> Polynomial:
        return cls(dim)

    @classmethod
    def constant(cls, dim: int, c: float) -> Polynomial:
        return cls(dim, {(0,) * dim: c})

    @classmethod
    def monomial(cls, alpha: Sequence[int], c: float = 1.0) -> Polynomial:
        return cls(len(alpha), {tuple(alpha): c})

    @classmethod
    def variable(cls, dim: int, i: int) -> Polynomial:
        alpha = [0] * dim
        alpha[i] = 1
        return cls(dim, {tuple(alpha): 1.0})

    @classmethod
    def from_arrays(cls, indices: Sequence[Sequence[int]], coeffs: Sequence[float]) -> Polynomial:
        indices = list(indices)
        if not indices:
            raise ValueError("need at least one multi-index to infer the dimension")
        terms: dict[tuple, float] = {}
        for a, c in zip(indices, coeffs):
            terms[tuple(a)] = terms.get(tuple(a), 0.0) + float(c)
        return cls(len(indices[0]), terms)

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def terms(self) -> Mapping[MultiIndex, float]:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def coeff(self, alpha: Sequence[int]) -> float:
        return self._terms.get(tuple(alpha), 0.0)

    def is_zero(self) -> bool:
        return not self._terms

    def degree(self) -> int:
        """Total degree; ``-1`` for the zero polynomial."""
        return max((a.order() for a in self._terms), default=-1)

    def max_axis_degree(self) -> int:
        return max((a.maxdeg() for a in self._terms), default=0)

    def __len__(self) -> int:
        return len(self._terms)

    def __repr__(self) -> str:
        if not self._terms:
            return f"Polynomial({self._dim}, 0)"
        parts = []
        for a, c in self._terms.items():
            mono = "*".join(f"X{i + 1}^{e}" if e > 1 else f"X{i + 1}"
                            for i, e in enumerate(a) if e)
            parts.append(f"{c:g}" + (f"*{mono}" if mono else ""))
        return f"Polynomial({self._dim}, {' + '.join(parts)})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self._dim == other._dim and self._terms == other._terms

    def __hash__(self):
        return hash((self._dim, tuple(self._terms.items())))

    # arithmetic
    def _check(self, other: Polynomial):
        if other.dim != self._dim:
            raise ValueError(f"dimension mismatch: {self._dim} vs {other.dim}")

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self._dim, other)
        self._check(other)
        terms = dict(self._terms)
        for a, c in other.items():
            terms[a] = terms.get(a, 0.0) + c
        return Polynomial(self._dim, terms)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self._dim, {a: -c for a, c in self._terms.items()})

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating)):
            return Polynomial(self._dim, {a: c * float(other) for a, c in self._terms.items()})
        self._check(other)
        terms: dict[tuple, float] = {}
        for a, c in self._terms.items():
            for b, e in other.items():
                key = tuple(x + y for x, y in zip(a, b))
                terms[key] = terms.get(key, 0.0) + c * e
        return Polynomial(self._dim, terms)

    __rmul__ = __mul__

    def __pow__(self, n: int):
        out = Polynomial.constant(self._dim, 1.0)
        for _ in range(n):
            out = out * self
        return out

    # evaluation
    def __call__(self, x):
        return eval_poly(self, x)

    def index_array(self) -> tuple[np.ndarray, np.ndarray]:
        """Exponents ``(n_terms, d)`` and coefficients ``(n_terms,)``."""
        if not self._terms:
            return np.zeros((0, self._dim), dtype=int), np.zeros(0)
        idx = np.array(list(self._terms.keys()), dtype=int)
        return idx, np.array(list(self._terms.values()))

    def derivative(self, alpha: Sequence[int]) -> Polynomial:
        """Partial derivative ``d^alpha p``."""
        terms = {}
        for a, c in self._terms.items():
            if all(ai >= bi for ai, bi in zip(a, alpha)):
                factor = math.prod(math.perm(ai, bi) for ai, bi in zip(a, alpha))
                terms[tuple(ai - bi for ai, bi in zip(a, alpha))] = c * factor
        return Polynomial(self._dim, terms)

    def permute(self, perm: Sequence[int]) -> Polynomial:
        """Return ``p o M_sigma``, i.e. ``q(x) = p(x_{perm[0]}, ..., x_{perm[d-1]})``."""
        terms = {}
        for a, c in self._terms.items():
            b = [0] * self._dim
            for i, j in enumerate(perm):
                b[j] += a[i]
            terms[tuple(b)] = c
        return Polynomial(self._dim, terms)


def eval_poly(p: Polynomial, x) -> np.ndarray | float:
    """Evaluate ``p`` at one point ``(d,)`` or a batch ``(n, d)``."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = x[None, :] if single else x
    if pts.ndim != 2 or pts.shape[1] != p.dim:
        raise ValueError(f"point dimension {pts.shape[-1]} does not match polynomial dimension {p.dim}")
    idx, coef = p.index_array()
    if idx.shape[0] == 0:
        out = np.zeros(pts.shape[0])
    else:
        top = idx.max(axis=0)
        powers = [np.vander(pts[:, i], top[i] + 1, increasing=True) for i in range(p.dim)]
        mono = np.ones((pts.shape[0], idx.shape[0]))
        for i in range(p.dim):
            mono *= powers[i][:, idx[:, i]]
        out = mono @ coef
    return float(out[0]) if single else out


def monomial_matrix(indices: Sequence[Sequence[int]], pts: np.ndarray) -> np.ndarray:
    """Values of monomials ``X^alpha`` at points: shape ``(n_pts, n_indices)``."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    idx = np.asarray(indices, dtype=int).reshape(-1, pts.shape[1])
    if idx.shape[0] == 0:
        return np.zeros((pts.shape[0], 0))
    top = idx.max(axis=0)
    out = np.ones((pts.shape[0], idx.shape[0]))
    for i in range(pts.shape[1]):
        out *= np.vander(pts[:, i], top[i] + 1, increasing=True)[:, idx[:, i]]
    return out


def compose_diag(p: Polynomial, D: Sequence[float]) -> Polynomial:
    """``p o diag(D)``: the coefficient of ``X^a`` is multiplied by ``prod D_i^a_i``."""
    D = [float(v) for v in D]
    if len(D) != p.dim:
        raise ValueError("scale vector length must equal the polynomial dimension")
    if any(v < 0 for v in D):
        raise ValueError("diagonal scales must be non-negative; use compose_signs for sign flips")
    return Polynomial(p.dim, {a: c * math.prod(v ** e for v, e in zip(D, a))
                              for a, c in p.items()})


def compose_signs(p: Polynomial, eps: Sequence[int]) -> Polynomial:
    if len(eps) != p.dim:
        raise ValueError("sign vector length must equal the polynomial dimension")
    if any(e not in (-1, 1) for e in eps):
        raise ValueError(f"sign entries must be -1 or +1, got {list(eps)}")
    return Polynomial(p.dim, {a: c * math.prod(e ** k for e, k in zip(eps, a))
                              for a, c in p.items()})


def _binomial_row(n: int) -> list[int]:
    return [math.comb(n, j) for j in range(n + 1)]


def compose_affine(p: Polynomial, scale: Sequence[float], shift: Sequence[float]) -> Polynomial:
    """Return ``q(X) = p(shift + scale * X)`` expanded in monomials."""
    scale = [float(s) for s in scale]
    shift = [float(s) for s in shift]
    terms: dict[tuple, float] = {}
    for a, c in p.items():
        # per-axis expansion of (shift_i + scale_i X_i)^a_i
        axis_terms = []
        for i, e in enumerate(a):
            row = _binomial_row(e)
            axis_terms.append([(j, row[j] * shift[i] ** (e - j) * scale[i] ** j) for j in range(e + 1)])
        for combo in itertools.product(*axis_terms):
            key = tuple(j for j, _ in combo)
            terms[key] = terms.get(key, 0.0) + c * math.prod(v for _, v in combo)
    return Polynomial(p.dim, terms)


def homogeneous_part(p: Polynomial, m: int) -> Polynomial:
    return Polynomial(p.dim, {a: c for a, c in p.items() if a.order() == m})


def taylor_poly(f, x: Sequence[float], m: int) -> Polynomial:
    """Degree-``m`` Taylor polynomial of ``f`` at ``x``, in monomial form.

    ``f`` must provide ``derivative(alpha, x)`` returning the exact partial
    derivative ``d^alpha f(x)``.
    """
    if m < 1:
        raise ValueError("Taylor order m must be >= 1")
    x = np.asarray(x, dtype=float)
    d = x.shape[0]
    oracle = getattr(f, "derivative", None)
    if oracle is None:
        raise ValueError("function has no derivative oracle")
    terms = {}
    for alpha in multi_indices(d, m):
        val = oracle(alpha, x)
        if val is None:
            raise ValueError(f"derivative oracle has no data for order {alpha.order()}")
        terms[alpha] = float(val) / alpha.factorial()
    # sum c_a (X - x)^a  ->  expand via affine substitution of each term
    local = Polynomial(d, terms)
    return compose_affine(local, [1.0] * d, list(-x))


def homogeneous_derivative_poly(f, x: Sequence[float], m: int) -> Polynomial:
    """``d^m f(x) / m!`` as an element of the homogeneous space of degree ``m``."""
    x = np.asarray(x, dtype=float)
    terms = {a: float(f.derivative(a, x)) / a.factorial() for a in homogeneous_indices(x.shape[0], m)}
    return Polynomial(x.shape[0], terms)


class SpaceKind(str, Enum):
    PK = "Pk"
    PK_STAR = "PkStar"
    PK_STAR_STAR = "PkStarStar"


@dataclass(frozen=True)
class PolySpace:
    """One of the three polynomial spaces built from total and per-axis degree bounds."""

    kind: SpaceKind
    k: int
    d: int

    def __post_init__(self):
        object.__setattr__(self, "kind", SpaceKind(self.kind))
        if self.k < 0 or self.d < 1:
            raise ValueError("need k >= 0 and d >= 1")

    def contains(self, alpha: Sequence[int]) -> bool:
        total, top = sum(alpha), max(alpha)
        if self.kind is SpaceKind.PK:
            return total <= self.k
        if self.kind is SpaceKind.PK_STAR:
            return top <= self.k and total <= self.k + 1
        return top <= self.k

    def basis(self) -> list[MultiIndex]:
        return [MultiIndex(a) for a in itertools.product(range(self.k + 2), repeat=self.d)
                if self.contains(a)]

    def dimension(self) -> int:
        """Closed-form dimension."""
        if self.kind is SpaceKind.PK:
            return math.comb(self.k + self.d, self.d)
        if self.kind is SpaceKind.PK_STAR:
            return math.comb(self.k + self.d + 1, self.d) - self.d
        return (self.k + 1) ** self.d


def space_basis(s: PolySpace) -> list[MultiIndex]:
    return s.basis()


def as_callable(f) -> Callable[[np.ndarray], np.ndarray]:
    """Wrap polynomials and scalar functions into a batch evaluator ``(n, d) -> (n,)``."""
    if isinstance(f, Polynomial):
        return lambda pts: eval_poly(f, pts)
    return f
