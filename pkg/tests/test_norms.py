import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from blockadapt.adapt import tau, uniform_partition
from blockadapt.bench import get_function
from blockadapt.blocks import Block, BlockPartition
from blockadapt.norms import (QuadratureRule, grid_max, kahan_sum, lp_norm, lp_norm_weighted, parse_p,
                              partition_error)
from blockadapt.poly import Polynomial, eval_poly, homogeneous_derivative_poly
from blockadapt.proj import apply_on_block, parse_operator

I1 = Block.canonical(1)


def test_parse_p():
    assert parse_p("inf") == math.inf
    assert parse_p(2) == 2.0
    with pytest.raises(ValueError):
        parse_p(0.5)


@pytest.mark.parametrize("d", [1, 2, 3])
@pytest.mark.parametrize("p", [1, 2, 3.5, math.inf])
def test_unit_constant(d, p):
    assert lp_norm(lambda x: np.ones(len(x)), Block.canonical(d), p) == pytest.approx(1.0, rel=1e-13)


def test_lp_examples():
    g = lambda x: x[:, 0] ** 2 - 0.25
    assert lp_norm(g, I1, math.inf) == pytest.approx(0.25, abs=1e-15)
    assert lp_norm(g, I1, 2) == pytest.approx(1 / math.sqrt(30), rel=1e-13)
    assert lp_norm(Polynomial(1, {(2,): 1.0, (0,): -0.25}), I1, 1) == pytest.approx(1 / 6, rel=1e-13)


def test_weighted_examples():
    g = lambda x: np.sin(3 * x[:, 0]) + x[:, 1]
    R = Block((0.0, 0.0), (1.0, 2.0))
    for p in (1, 2, math.inf):
        base = lp_norm(g, R, p)
        assert lp_norm_weighted(g, R, p, 2.0) == pytest.approx(2 * base, rel=1e-14)
        assert lp_norm_weighted(g, R, p, 1.0) == pytest.approx(base, rel=1e-14)
    assert lp_norm_weighted(1.0, Block((1.0,), (2.0,)), 1, lambda x: x[:, 0]) == pytest.approx(1.5, rel=1e-14)
    with pytest.raises(ValueError, match="not positive"):
        lp_norm_weighted(1.0, Block((0.0,), (2.0,)), 1, lambda x: x[:, 0] - 1)


def test_non_finite_values_rejected():
    with pytest.raises(ValueError, match="non-finite"):
        lp_norm(lambda x: np.where(x[:, 0] == 0, np.nan, 1.0), Block((-1.0,), (1.0,)), math.inf)


@pytest.mark.parametrize("q", [1, 3, 8, 20])
def test_quadrature_rule(q):
    R = Block((0.5, -1.0), (2.0, 0.25))
    rule = QuadratureRule.on_block(R, q)
    assert np.all(rule.weights > 0)
    assert rule.weights.sum() == pytest.approx(R.volume(), rel=1e-13)
    e = 2 * q - 1
    exact = (2.0 ** (e + 1) - 0.5 ** (e + 1)) / (e + 1) * (0.25 ** 2 - 1.0) / 2
    val = rule.integrate(lambda x: x[:, 0] ** e * x[:, 1])
    assert val == pytest.approx(exact, rel=1e-13)


def test_grid_max_refines():
    # spike at a point of the fine grid that is neither a coarse node nor a cell midpoint
    g = lambda x: np.exp(-((x[:, 0] * 400) ** 2 + ((x[:, 1] - 1 / 64) * 200) ** 2))
    assert grid_max(g, 2) == pytest.approx(1.0, abs=1e-12)


def test_partition_error_examples():
    op1 = parse_operator("lagrange:equispaced:k=1:d=1")
    f = get_function("square_1d")
    for N in (10, 37, 1000):
        P = uniform_partition(Block.unit(1), N)
        assert partition_error(f.poly, op1, P, math.inf) == pytest.approx(1 / (4 * N * N), rel=1e-10)
    op2 = parse_operator("lagrange:equispaced:k=1:d=2")
    g = get_function("quad_aniso")
    for n in (3, 8):
        P = uniform_partition(Block.unit(2), n)
        assert partition_error(g.poly, op2, P, math.inf) == pytest.approx(1.25 / n ** 2, rel=1e-10)
        # callable path agrees with the polynomial path
        assert partition_error(g, op2, P, math.inf) == pytest.approx(1.25 / n ** 2, rel=1e-9)
    bilinear = Polynomial(2, {(1, 1): 3.0, (1, 0): -1.0, (0, 0): 2.0})
    P = uniform_partition(Block.unit(2), 4)
    for p in (1, 2, math.inf):
        assert partition_error(bilinear, op2, P, p) <= 1e-10


def test_partition_error_is_cellwise_lp_sum():
    op = parse_operator("lagrange:equispaced:k=1:d=2")
    f = get_function("exp")
    P = BlockPartition(Block.unit(2), [Block((0.0, 0.0), (0.5, 1.0)), Block((0.5, 0.0), (1.0, 0.25)),
                                       Block((0.5, 0.25), (1.0, 1.0))])
    for p in (1, 2, 3):
        cells = [lp_norm(lambda x, R=R: f(x) - eval_poly(apply_on_block(op, R, f), x), R, p) for R in P]
        assert partition_error(f, op, P, p) == pytest.approx(sum(c ** p for c in cells) ** (1 / p), rel=1e-12)


coef = st.integers(-16, 16).map(lambda v: v / 8)


@given(st.lists(coef, min_size=6, max_size=6))
def test_monotone_in_p(cs):
    idx = [(0, 0), (1, 0), (0, 2), (2, 1), (3, 0), (1, 3)]
    g = Polynomial(2, dict(zip(idx, cs)))
    I2 = Block.canonical(2)
    vals = [lp_norm(g, I2, p) for p in (1, 1.5, 2, 4, math.inf)]
    for a, b in zip(vals, vals[1:]):
        assert a <= b * (1 + 1e-12) + 1e-15


def test_kahan_sum():
    vals = [1.0] + [1e-16] * 10000
    assert kahan_sum(vals) == pytest.approx(1.0 + 1e-12, rel=1e-15)
    assert math.fsum(vals) == pytest.approx(kahan_sum(vals), rel=1e-15)


def _dm_norm(f, R, m, n_dirs=64):
    # sup over x in R of sup_{|u|=1} |pi_x(u)|, sampled
    ang = np.linspace(0, 2 * np.pi, n_dirs, endpoint=False)
    u = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    xs = [R.center()] + [np.array(c) for c in [(R.lo[0], R.lo[1]), (R.hi[0], R.hi[1]),
                                                (R.lo[0], R.hi[1]), (R.hi[0], R.lo[1])]]
    return max(np.abs(eval_poly(homogeneous_derivative_poly(f, x, m), u)).max() for x in xs)


@pytest.mark.parametrize("p", [2, math.inf])
def test_local_estimate_constant_does_not_grow(p):
    op = parse_operator("lagrange:equispaced:k=1:d=2")
    m, d = 2, 2
    t = tau(m, d, p)
    rng = np.random.default_rng(3)
    worst = []
    for size in (0.2, 0.05, 0.0125):
        ratios = []
        for name in ("quad_aniso", "saddle", "exp", "sinsin"):
            f = get_function(name)
            for _ in range(25):
                sides = size * np.exp(rng.uniform(-1.5, 1.5, 2))
                lo = rng.uniform(0, 1 - sides)
                R = Block(tuple(lo), tuple(lo + sides))
                IR = apply_on_block(op, R, f)
                err = lp_norm(lambda x: f(x) - eval_poly(IR, x), R, p)
                ratios.append(err / (R.volume() ** (1 / t) * R.rho() ** (m / d) * _dm_norm(f, R, m)))
        worst.append(max(ratios))
    assert worst[-1] <= 1.1 * worst[0]
    assert max(worst) < 1.0
