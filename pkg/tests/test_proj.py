import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from blockadapt.blocks import Block, normalize
from blockadapt.norms import lp_norm, uniform_grid
from blockadapt.poly import Polynomial, PolySpace, eval_poly, homogeneous_part, taylor_poly
from blockadapt.proj import (OperatorError, ProjectionOperator, apply_on_block, check_hypotheses, detect_k,
                             lagrange_nodes, operator_norm_estimate, parse_operator)
from blockadapt.bench import get_function

GRID = uniform_grid(2, 17)

OPERATORS = [
    parse_operator("lagrange:equispaced:k=1:d=2"),
    parse_operator("lagrange:equispaced:k=2:d=2"),
    parse_operator("lagrange:chebyshev:k=3:d=2"),
    parse_operator("l2:Pk:k=1:d=2"),
    parse_operator("l2:PkStar:k=2:d=2"),
    parse_operator("l2:PkStarStar:k=1:d=2"),
    parse_operator("boundary:equispaced:k=2:d=2"),
]


def test_nodes_examples():
    assert lagrange_nodes(1, "equispaced").tolist() == [-0.5, 0.5]
    assert lagrange_nodes(2, "equispaced").tolist() == [-0.5, 0.0, 0.5]
    assert lagrange_nodes(1, "chebyshev").tolist() == [-0.5, 0.5]
    assert lagrange_nodes(0, "equispaced").tolist() == [0.0]
    c = lagrange_nodes(4, "chebyshev")
    assert np.allclose(c, 0.5 * np.cos(np.arange(5) * np.pi / 4)[::-1], atol=1e-16)
    with pytest.raises(OperatorError):
        lagrange_nodes(0, "chebyshev")


def test_apply_examples():
    op1 = parse_operator("lagrange:equispaced:k=1:d=1")
    assert op1.apply(Polynomial(1, {(2,): 1.0})) == Polynomial.constant(1, 0.25)
    op2 = parse_operator("lagrange:equispaced:k=1:d=2")
    assert op2.apply(Polynomial(2, {(2, 0): 1.0})) == Polynomial.constant(2, 0.25)


def test_apply_on_block_examples():
    op1 = parse_operator("lagrange:equispaced:k=1:d=1")
    Ip = apply_on_block(op1, Block.unit(1), Polynomial(1, {(2,): 1.0}))
    x = np.linspace(0, 1, 11)[:, None]
    assert np.allclose(eval_poly(Ip, x), x[:, 0], atol=1e-15)
    op2 = parse_operator("lagrange:equispaced:k=1:d=2")
    xy = Polynomial(2, {(1, 1): 1.0})
    Ixy = apply_on_block(op2, Block((0.0, 0.0), (2.0, 2.0)), xy)
    pts = GRID + 1
    assert np.allclose(eval_poly(Ixy, pts), eval_poly(xy, pts), atol=1e-14)
    # callables give the same polynomial
    Ic = apply_on_block(op2, Block((0.0, 0.0), (2.0, 2.0)), lambda p: p[:, 0] * p[:, 1])
    assert np.allclose(eval_poly(Ic, pts), eval_poly(xy, pts), atol=1e-13)


@pytest.mark.parametrize("op", OPERATORS, ids=str)
def test_reproduces_target_space(op):
    for a in op.image_basis:
        mono = Polynomial.monomial(a)
        assert np.abs(eval_poly(op.apply(mono) - mono, GRID)).max() <= 1e-10


@pytest.mark.parametrize("op", OPERATORS, ids=str)
def test_projector_law_and_image(op):
    target = set(op.image_basis)
    f = lambda x: np.exp(x[:, 0] - 0.7 * x[:, 1]) + np.sin(3 * x[:, 1])
    If = op.apply(f)
    assert set(If.terms) <= target
    IIf = op.apply(If)
    assert np.abs(eval_poly(IIf - If, GRID)).max() <= 1e-10
    IIf_callable = op.apply(lambda x: eval_poly(If, x))
    assert np.abs(eval_poly(IIf_callable - If, GRID)).max() <= 1e-10


coef = st.integers(-16, 16).map(lambda v: v / 8)


@given(st.sampled_from(OPERATORS), st.lists(coef, min_size=6, max_size=6), coef, coef)
def test_linearity_on_polynomials(op, cs, a, b):
    idx = [(0, 0), (2, 0), (1, 2), (3, 1), (0, 3), (2, 2)]
    f = Polynomial(2, dict(zip(idx[:3], cs[:3])))
    g = Polynomial(2, dict(zip(idx[3:], cs[3:])))
    lhs = op.apply(a * f + b * g)
    rhs = a * op.apply(f) + b * op.apply(g)
    assert np.abs(eval_poly(lhs - rhs, GRID)).max() <= 1e-12


@pytest.mark.parametrize("desc,k", [
    ("lagrange:equispaced:k=2:d=2", 2), ("lagrange:equispaced:k=2:d=1", 2), ("l2:Pk:k=1:d=2", 1),
    ("l2:PkStarStar:k=1:d=2", 1), ("lagrange:chebyshev:k=3:d=2", 3), ("boundary:equispaced:k=1:d=3", 1),
    ("lagrange:equispaced:k=0:d=2", 0),
])
def test_detect_k(desc, k):
    assert detect_k(parse_operator(desc)) == k


def test_detect_k_limit():
    with pytest.raises(OperatorError, match="increase k_max"):
        detect_k(parse_operator("lagrange:equispaced:k=3:d=1"), k_max=2)


@pytest.mark.parametrize("nodes", ["equispaced", "chebyshev"])
@pytest.mark.parametrize("k", [1, 2, 3])
def test_hypotheses_lagrange(nodes, k):
    h = check_hypotheses(parse_operator(f"lagrange:{nodes}:k={k}:d=2"))
    assert (h.pm, h.sigma, h.star, h.starstar) == (True, True, True, True)


def test_hypotheses_l2():
    assert check_hypotheses(parse_operator("l2:Pk:k=1:d=2")).star is False
    assert check_hypotheses(parse_operator("l2:Pk:k=2:d=2")).star is False
    h = check_hypotheses(parse_operator("l2:PkStarStar:k=1:d=2"))
    assert (h.pm, h.sigma, h.star, h.starstar) == (True, True, True, True)


def test_hypotheses_k0_midpoint():
    h = check_hypotheses(parse_operator("lagrange:equispaced:k=0:d=2"))
    assert h.pm and h.sigma


def test_boundary_lattice_points():
    op = parse_operator("boundary:equispaced:k=2:d=2")
    pts = op.boundary_points
    assert len(pts) == PolySpace("PkStar", 2, 2).dimension() == 8
    on_boundary = np.any(np.isclose(np.abs(pts), 0.5), axis=1)
    assert on_boundary.all()
    assert detect_k(op) == 2


def test_operator_norm_examples():
    assert operator_norm_estimate(parse_operator("lagrange:equispaced:k=1:d=1")) == pytest.approx(1.0, abs=1e-9)
    assert operator_norm_estimate(parse_operator("lagrange:equispaced:k=2:d=1")) == pytest.approx(1.25, abs=1e-6)
    for op in OPERATORS:
        assert operator_norm_estimate(op) >= 1.0 - 1e-12


@pytest.mark.parametrize("name", ["quad_aniso", "cubic", "exp", "sinsin"])
@pytest.mark.parametrize("p", [1, 2, math.inf])
def test_transfer_identity(name, p):
    f = get_function(name)
    op = parse_operator("lagrange:equispaced:k=2:d=2")
    rng = np.random.default_rng(7)
    for _ in range(3):
        lo = rng.uniform(0, 0.6, 2)
        R = Block(tuple(lo), tuple(lo + rng.uniform(0.05, 0.4, 2)))
        IR = apply_on_block(op, R, f)
        lhs = lp_norm(lambda x: f(x) - eval_poly(IR, x), R, p)
        phi = normalize(R)
        g = lambda u: f(phi.forward(u))
        Ig = op.apply(g)
        rhs = R.volume() ** (0 if p == math.inf else 1 / p) * lp_norm(
            lambda u: g(u) - eval_poly(Ig, u), Block.canonical(2), p)
        assert lhs == pytest.approx(rhs, rel=1e-9)


def test_taylor_residual_equals_homogeneous_residual():
    # pi_x - I_R pi_x = mu_x - I_R mu_x as polynomials
    f = get_function("exp")
    op = parse_operator("lagrange:equispaced:k=1:d=2")
    x = np.array([0.3, 0.6])
    mu = taylor_poly(f, x, 2)
    pi = homogeneous_part(mu, 2)
    R = Block((0.2, 0.5), (0.45, 0.6))
    a = pi - apply_on_block(op, R, pi)
    b = mu - apply_on_block(op, R, mu)
    diff = a - b
    assert max((abs(c) for _, c in diff.items()), default=0.0) <= 1e-12


def test_parse_operator_forms():
    a = parse_operator("lagrange:chebyshev:k=2:d=3")
    b = parse_operator({"variant": "lagrange", "nodes": "chebyshev", "k": 2, "d": 3})
    assert a == b and a.key() == b.key()
    assert parse_operator({"variant": "l2", "space": "Pk", "k": 1}, d=2).space.value == "Pk"
    with pytest.raises(OperatorError):
        parse_operator({"variant": "l2", "k": 1, "d": 2, "colour": "red"})
    with pytest.raises(OperatorError):
        parse_operator("lagrange:gauss:k=1:d=2")
    with pytest.raises(OperatorError):
        parse_operator({"variant": "lagrange", "k": 1})


def test_custom_nodes_validated():
    with pytest.raises(OperatorError):
        ProjectionOperator("lagrange", 1, 1, node_values=(0.1, 0.1))
    with pytest.raises(OperatorError):
        ProjectionOperator("lagrange", 1, 1, node_values=(0.1, 0.9))
    op = ProjectionOperator("lagrange", 1, 2, node_values=(-0.4, 0.1, 0.45))
    assert detect_k(op) == 2
