"""Axis-aligned blocks, their affine normalization, and block partitions."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

# fragments below this fraction of the domain volume count as empty
DEGENERATE_VOLUME = 1e-14


@dataclass(frozen=True)
class Block:
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi) or not lo:
            raise ValueError("lo and hi must be non-empty and of equal length")
        if any(not (a < b) for a, b in zip(lo, hi)):
            raise ValueError(f"degenerate block: lo={lo}, hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def canonical(cls, d: int) -> Block:
        """The block ``[-1/2, 1/2]^d``."""
        return cls((-0.5,) * d, (0.5,) * d)

    @classmethod
    def unit(cls, d: int) -> Block:
        return cls((0.0,) * d, (1.0,) * d)

    @classmethod
    def centered(cls, sides: Sequence[float], center: Sequence[float] | None = None) -> Block:
        sides = [float(s) for s in sides]
        center = [0.0] * len(sides) if center is None else [float(c) for c in center]
        return cls(tuple(c - s / 2 for c, s in zip(center, sides)),
                   tuple(c + s / 2 for c, s in zip(center, sides)))

    @property
    def dim(self) -> int:
        return len(self.lo)

    def sides(self) -> np.ndarray:
        return np.subtract(self.hi, self.lo)

    def center(self) -> np.ndarray:
        return (np.asarray(self.lo) + np.asarray(self.hi)) / 2

    def volume(self) -> float:
        return float(math.prod(h - l for l, h in zip(self.lo, self.hi)))

    def diam(self) -> float:
        return float(math.sqrt(sum((h - l) ** 2 for l, h in zip(self.lo, self.hi))))

    def rho(self) -> float:
        return rho(self)

    def contains_block(self, other: Block, tol: float = 1e-12) -> bool:
        return all(a >= l - tol and b <= h + tol
                   for l, h, a, b in zip(self.lo, self.hi, other.lo, other.hi))

    def translate(self, v: Sequence[float]) -> Block:
        return Block(tuple(l + t for l, t in zip(self.lo, v)), tuple(h + t for h, t in zip(self.hi, v)))

    def scale(self, c: float) -> Block:
        return Block(tuple(c * l for l in self.lo), tuple(c * h for h in self.hi))


@dataclass(frozen=True)
class BlockMap:
    """The map ``x -> center + scales * x`` sending ``[-1/2,1/2]^d`` onto a block."""

    center: tuple[float, ...]
    scales: tuple[float, ...]

    def __post_init__(self):
        if any(s <= 0 for s in self.scales):
            raise ValueError("scales must be positive")

    def det(self) -> float:
        return float(math.prod(self.scales))

    def forward(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.center) + np.asarray(self.scales) * np.asarray(x, dtype=float)

    def inverse(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=float) - np.asarray(self.center)) / np.asarray(self.scales)

    def image(self) -> Block:
        c, s = np.asarray(self.center), np.asarray(self.scales)
        return Block(tuple(c - s / 2), tuple(c + s / 2))


def normalize(R: Block) -> BlockMap:
    return BlockMap(tuple(float(v) for v in R.center()), tuple(float(v) for v in R.sides()))


def rho(R: Block) -> float:
    """Degeneracy ``diam(R)^d / |R|``; equals ``d^(d/2)`` exactly for cubes."""
    return R.diam() ** R.dim / R.volume()


@dataclass
class BlockPartition:
    """Explicit list of cells covering ``domain``."""

    domain: Block
    cells: list[Block] = field(default_factory=list)
    validate: bool = True

    def __post_init__(self):
        floor = DEGENERATE_VOLUME * self.domain.volume()
        self.cells = [c for c in self.cells if c.volume() >= floor]
        if self.validate:
            self.check()

    def __len__(self) -> int:
        return len(self.cells)

    def __iter__(self):
        return iter(self.cells)

    @property
    def dim(self) -> int:
        return self.domain.dim

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell lower and upper corners as ``(n, d)`` arrays (cached; cells are not mutated)."""
        cached = self.__dict__.get("_arrays")
        if cached is not None and cached[0].shape[0] == len(self.cells):
            return cached
        if not self.cells:
            out = np.zeros((0, self.dim)), np.zeros((0, self.dim))
        else:
            out = np.array([c.lo for c in self.cells]), np.array([c.hi for c in self.cells])
        for a in out:
            a.setflags(write=False)
        self.__dict__["_arrays"] = out
        return out

    def max_diam(self) -> float:
        lo, hi = self.arrays()
        return float(np.sqrt(((hi - lo) ** 2).sum(axis=1)).max()) if len(self.cells) else 0.0

    def check(self, overlaps: bool = False) -> None:
        """Volume and containment checks; pairwise overlap check on request (O(n^2))."""
        lo, hi = self.arrays()
        dlo, dhi = np.asarray(self.domain.lo), np.asarray(self.domain.hi)
        if len(self.cells) and (np.any(lo < dlo - 1e-12) or np.any(hi > dhi + 1e-12)):
            raise ValueError("a cell is not contained in the partition domain")
        vols = np.prod(hi - lo, axis=1)
        total = math.fsum(vols)
        if abs(total - self.domain.volume()) > 1e-10 * self.domain.volume():
            raise ValueError(f"cell volumes sum to {total!r}, domain volume is {self.domain.volume()!r}")
        if overlaps:
            overlap = pairwise_overlap_volume(lo, hi)
            if overlap > 1e-12 * self.domain.volume():
                raise ValueError(f"cells overlap with total volume {overlap!r}")

    def to_csv(self) -> str:
        return partition_to_csv(self)


def pairwise_overlap_volume(lo: np.ndarray, hi: np.ndarray) -> float:
    total = 0.0
    for i in range(len(lo)):
        w = np.minimum(hi[i], hi[i + 1:]) - np.maximum(lo[i], lo[i + 1:])
        w = np.clip(w, 0.0, None)
        total += float(np.prod(w, axis=1).sum())
    return total


def admissibility_stat(seq: Sequence[BlockPartition]) -> float:
    """``sup_N N^(1/d) max diam`` over a sequence indexed from ``N = 1``."""
    if not seq:
        raise ValueError("empty partition sequence")
    d = seq[0].dim
    best = 0.0
    for N, P in enumerate(seq, start=1):
        if len(P) > N:
            raise ValueError(f"partition at N={N} has {len(P)} cells (> N)")
        best = max(best, N ** (1.0 / d) * P.max_diam())
    return best


def admissibility_stat_budgets(partitions: Sequence[BlockPartition], budgets: Sequence[int]) -> float:
    """Same statistic for a subsequence given by explicit budgets ``N``."""
    if len(partitions) != len(budgets):
        raise ValueError("one budget per partition required")
    best = 0.0
    for N, P in zip(budgets, partitions):
        if len(P) > N:
            raise ValueError(f"partition at N={N} has {len(P)} cells (> N)")
        best = max(best, N ** (1.0 / P.dim) * P.max_diam())
    return best


def partition_to_csv(P: BlockPartition) -> str:
    d = P.dim
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cell_id"] + [f"lo_{i + 1}" for i in range(d)] + [f"hi_{i + 1}" for i in range(d)])
    for i, c in enumerate(P.cells):
        w.writerow([i] + [f"{v:.17g}" for v in c.lo] + [f"{v:.17g}" for v in c.hi])
    return buf.getvalue()


def partition_from_csv(text: str, domain: Block) -> BlockPartition:
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], rows[1:]
    d = (len(header) - 1) // 2
    cells = [Block(tuple(float(v) for v in r[1:1 + d]), tuple(float(v) for v in r[1 + d:1 + 2 * d]))
             for r in body]
    return BlockPartition(domain, cells)
