import itertools
import math

import numpy as np
import pytest

from blockadapt.kfun import (ConstantCache, HomogeneousPoly, KFunError, Method, c_even, c_odd,
                             k_closed_form, k_modified, k_numeric, k_star, k_value, p_sandwich, signature,
                             verify_scaling)
from blockadapt.poly import Polynomial
from blockadapt.proj import parse_operator

LIN1 = parse_operator("lagrange:equispaced:k=1:d=1")
QUAD1 = parse_operator("lagrange:equispaced:k=2:d=1")
BIL = parse_operator("lagrange:equispaced:k=1:d=2")
INF = math.inf


def H(terms, d=2):
    return HomogeneousPoly(Polynomial(d, terms))


def pure(*lam):
    return HomogeneousPoly.pure(lam, 2)


def test_homogeneity_checked():
    with pytest.raises(KFunError):
        H({(2, 0): 1.0, (1, 0): 1.0})
    with pytest.raises(KFunError):
        HomogeneousPoly(Polynomial(2, {(2, 0): 1.0}), 3)
    assert pure(1, 0).pure_coefficients().tolist() == [1.0, 0.0]


def test_k_star_and_signature():
    assert k_star(pure(1, 4)) == pytest.approx(2.0, rel=1e-15)
    assert k_star(pure(1, 0)) == 0.0
    assert k_star(pure(-2, -8)) == pytest.approx(4.0, rel=1e-15)
    assert signature(pure(1, 1)) == 2
    assert signature(pure(1, -1)) == 1
    assert signature(HomogeneousPoly.pure([-1, -1], 3)) == 0


def test_k_numeric_1d():
    x2 = H({(2,): 1.0}, d=1)
    assert k_numeric(LIN1, x2, INF).value == pytest.approx(0.25, abs=1e-12)
    assert k_numeric(LIN1, x2, 2).value == pytest.approx(1 / math.sqrt(30), abs=1e-12)


def test_k_numeric_bilinear():
    r = k_numeric(BIL, pure(1, 1), INF)
    assert r.value == pytest.approx(0.5, abs=1e-9)
    assert np.allclose(r.scales, 1.0, atol=1e-3)
    assert math.prod(r.scales) == pytest.approx(1.0, rel=1e-12)
    assert r.method is Method.NUMERIC


def test_k_numeric_degenerate():
    r = k_numeric(BIL, pure(1, 0), INF)
    assert r.degenerate and r.value == 0.0 and r.scales is None


def test_k_numeric_degree_check():
    with pytest.raises(KFunError):
        k_numeric(BIL, HomogeneousPoly.pure([1, 1], 3), INF)


def _bilinear_s1_oracle():
    # brute force over a > 0 of max |a(x^2-1/4) - (y^2-1/4)/a| on a fine grid
    t = np.linspace(-0.5, 0.5, 201)
    g = t ** 2 - 0.25
    best = math.inf
    for a in np.exp(np.linspace(-1.0, 1.0, 401)):
        best = min(best, np.abs(a * g[:, None] - g[None, :] / a).max())
    return best


def test_c_even_bilinear_inf():
    t = np.linspace(-0.5, 0.5, 401)
    s0_oracle = np.abs(t[:, None] ** 2 + t[None, :] ** 2 - 0.5).max()
    assert c_even(BIL, INF, 0) == pytest.approx(s0_oracle, abs=1e-12)
    assert c_even(BIL, INF, 2) == pytest.approx(0.5, abs=1e-12)
    assert c_even(BIL, INF, 1) == pytest.approx(_bilinear_s1_oracle(), abs=1e-6)
    assert c_even(BIL, INF, 1) == pytest.approx(0.25, abs=1e-6)


@pytest.mark.parametrize("p", [1, 2, INF])
@pytest.mark.parametrize("d", [2, 3])
def test_c_even_symmetry(p, d):
    op = parse_operator(f"lagrange:equispaced:k=1:d={d}")
    for s in range(d + 1):
        assert c_even(op, p, s) == pytest.approx(c_even(op, p, d - s), abs=1e-6)
        assert c_even(op, p, s) > 0


def test_c_odd_examples():
    # interpolating x^3 at {-1/2, 0, 1/2} gives x/4; the residual peaks at x = 1/(2 sqrt 3)
    exact_inf = 1 / (12 * math.sqrt(3))
    v = c_odd(QUAD1, INF)
    assert v <= exact_inf + 1e-15
    assert v == pytest.approx(exact_inf, rel=5e-3)
    # int |x^3 - x/4| over [-1/2, 1/2] = 2 * (1/32 - 1/64) = 1/32
    assert c_odd(QUAD1, 1) == pytest.approx(1 / 32, rel=5e-3)
    assert c_odd(QUAD1, 1, q=200, cache=ConstantCache()) == pytest.approx(1 / 32, rel=1e-4)


def test_c_odd_homogeneity():
    op = parse_operator("lagrange:equispaced:k=2:d=2")
    for c in (0.5, 3.0):
        pi = HomogeneousPoly.pure([c, c], 3)
        assert k_numeric(op, pi, 2).value == pytest.approx(c * c_odd(op, 2), rel=1e-6)


def test_closed_forms_reject_failed_hypotheses():
    with pytest.raises(KFunError, match="H_star"):
        c_even(parse_operator("l2:Pk:k=1:d=2"), INF, 1)
    with pytest.raises(KFunError, match="k_numeric"):
        k_closed_form(parse_operator("l2:Pk:k=1:d=2"), pure(1, 1), INF)
    with pytest.raises(KFunError, match="even"):
        c_odd(BIL, INF)
    with pytest.raises(KFunError, match="odd"):
        c_even(QUAD1, INF, 1)


def test_k_closed_form_examples():
    assert k_closed_form(BIL, pure(1, 4), INF).value == pytest.approx(1.0, abs=1e-12)
    assert k_closed_form(BIL, pure(1, -4), INF).value == pytest.approx(0.5, abs=1e-6)
    r = k_closed_form(BIL, pure(0, 3), INF)
    assert r.value == 0.0 and r.method is Method.CLOSED_FORM
    assert k_value(BIL, pure(1, 4), INF).method is Method.CLOSED_FORM
    assert k_value(parse_operator("l2:Pk:k=1:d=2"), pure(1, 4), INF).method is Method.NUMERIC


def test_k_modified_examples():
    s2 = math.sqrt(2)
    assert k_modified(BIL, pure(1, 1), INF, s2).value == pytest.approx(0.5, abs=1e-12)
    assert k_modified(BIL, pure(1, 0), INF, s2).value == pytest.approx(0.25, abs=1e-12)
    for pi in (pure(1, 4), pure(1, -3), H({(2, 0): 1.0, (1, 1): 0.5, (0, 2): 2.0})):
        assert k_modified(BIL, pi, INF, 1e6).value == pytest.approx(k_numeric(BIL, pi, INF).value, abs=1e-6)
    with pytest.raises(KFunError):
        k_modified(BIL, pure(1, 1), INF, 1.0)


def test_k_modified_decreasing_in_M():
    vals = [k_modified(BIL, pure(1, 0.01), INF, M).value for M in (1.5, 2, 4, 8, 32)]
    assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))
    assert vals[-1] < vals[0]
    r = k_modified(BIL, pure(1, 0.01), INF, 4.0)
    assert math.hypot(*r.scales) <= 4.0 * (1 + 1e-9)


def test_verify_scaling_examples():
    ok, ratio = verify_scaling(BIL, pure(1, 1), INF, [1, 1])
    assert ok and ratio == pytest.approx(1.0, abs=1e-12)
    ok, _ = verify_scaling(BIL, pure(1, 1), INF, [2, 2])
    assert ok
    assert k_numeric(BIL, HomogeneousPoly(Polynomial(2, {(2, 0): 4.0, (0, 2): 4.0})), INF).value == \
        pytest.approx(4 * 0.5, rel=1e-9)
    ok, _ = verify_scaling(BIL, pure(1, 1), INF, [4, 1])
    assert ok
    r = k_numeric(BIL, pure(16, 1), INF)
    assert r.value == pytest.approx(2.0, rel=1e-6)
    assert r.scales[0] == pytest.approx(0.5, rel=1e-3) and r.scales[1] == pytest.approx(2.0, rel=1e-3)


def test_p_sandwich_bilinear():
    vals = p_sandwich(BIL, pure(1, 3))
    assert vals[0] <= vals[1] + 1e-8 <= vals[2] + 2e-8


def _random_homogeneous(rng, d, m, mixed=True):
    terms = {}
    for a in itertools.product(range(m + 1), repeat=d):
        if sum(a) != m:
            continue
        pure_ = max(a) == m
        if pure_:
            terms[a] = float(rng.choice([-1, 1]) * np.exp(rng.uniform(-1, 1)))
        elif mixed:
            terms[a] = float(rng.normal())
    return HomogeneousPoly(Polynomial(d, terms), m)


@pytest.mark.parametrize("desc", ["lagrange:equispaced:k=1:d=2", "lagrange:chebyshev:k=2:d=2",
                                  "l2:PkStarStar:k=1:d=2"])
def test_closed_form_matches_numeric(desc):
    op = parse_operator(desc)
    m = op.k + 1
    rng = np.random.default_rng(11)
    n = 17 if desc.startswith("lagrange:e") else 16
    for i in range(n):
        pi = _random_homogeneous(rng, 2, m)
        p = [1, 2, INF][i % 3]
        num = k_numeric(op, pi, p).value
        cf = k_closed_form(op, pi, p).value
        assert num == pytest.approx(cf, rel=1e-3)


@pytest.mark.parametrize("desc", ["lagrange:equispaced:k=1:d=2", "lagrange:equispaced:k=2:d=2",
                                  "lagrange:chebyshev:k=1:d=3", "l2:PkStarStar:k=1:d=2"])
def test_signed_pure_power_minimizer_is_cube(desc):
    op = parse_operator(desc)
    m = op.k + 1
    for eps in itertools.product((-1, 1), repeat=op.d):
        if op.d > 2 and len(set(eps)) > 1:
            continue
        r = k_numeric(op, HomogeneousPoly.pure(eps, m), INF)
        assert np.allclose(r.scales, 1.0, atol=1e-3)


def test_mixed_signature_minimizer_in_3d_is_not_the_cube():
    op = parse_operator("lagrange:equispaced:k=1:d=3")
    r = k_numeric(op, HomogeneousPoly.pure([1, 1, -1], 2), INF)
    assert r.value < 0.5 - 0.05
    assert not np.allclose(r.scales, 1.0, atol=1e-2)


def test_constant_cache_on_disk(tmp_path):
    cache = ConstantCache(tmp_path)
    v = c_even(BIL, 2, 1, cache=cache)
    assert (tmp_path / "constants.json").exists()
    again = ConstantCache(tmp_path)
    assert again.items() == cache.items()
    assert c_even(BIL, 2, 1, cache=again) == v
