import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aaqs.aggregation import (CATALOG, FOCAL, POW10, SQRT, SQUARE, SUM, DomainError,
                              WeightingProfile, check_axioms, get_generator, power,
                              profile_apply, quasi_sum, quasi_sum_fold)

losses = st.floats(min_value=0.0, max_value=20.0, allow_nan=False)


def test_quasi_sum_examples():
    assert quasi_sum(power(2), [3, 4]) == pytest.approx(5.0, rel=1e-15)
    assert quasi_sum(SUM, [1, 2, 3]) == 6.0
    assert quasi_sum(SQRT, [1, 1]) == pytest.approx(4.0, rel=1e-15)


def test_quasi_sum_edge_cases():
    assert quasi_sum(FOCAL, []) == 0.0
    assert quasi_sum(FOCAL, [2.7]) == 2.7
    assert quasi_sum(SUM, [math.inf, 1.0]) == math.inf
    with pytest.raises(DomainError):
        quasi_sum(SUM, [1.0, -0.5])
    with pytest.raises(DomainError):
        quasi_sum(SQUARE, [float("nan")])


def test_overflow_flag():
    # (1e31)^10 = 1e310 exceeds the 1e300 cap; 50^10 ~ 9.8e16 does not
    v, flag = quasi_sum(POW10, [50.0, 1.0], with_flag=True)
    assert not flag and math.isfinite(v)
    v, flag = quasi_sum(POW10, [1e31, 1.0], with_flag=True)
    assert flag and v == math.inf


def test_fold_examples():
    acc = 0.0
    for x in (3.0, 4.0):
        acc = quasi_sum_fold(SQUARE, acc, x)
    assert acc == pytest.approx(5.0, rel=1e-15)
    assert quasi_sum_fold(SUM, 10.0, 5.0) == 15.0
    assert quasi_sum_fold(FOCAL, 0.0, 2.0) == 2.0


def test_profile_examples():
    assert profile_apply(WeightingProfile(SUM, 1.0), math.log(2)) == pytest.approx(0.5, rel=1e-15)
    assert profile_apply(WeightingProfile(SQUARE, 1.0), 0.0) == 1.0
    assert profile_apply(WeightingProfile(SQRT, 2.0), 4.0) == pytest.approx(0.01831563888873418, rel=1e-14)
    assert WeightingProfile(FOCAL, 1.0).f(math.inf) == 0.0
    wp = WeightingProfile(SQUARE, 0.7)
    assert wp.g(1.0) == 0.0
    assert wp.g(0.0) == math.inf
    with pytest.raises(ValueError):
        WeightingProfile(SUM, 0.0)


def test_catalog_keys():
    assert set(CATALOG) == {"sum", "sqrt", "square", "pow10", "focal"}
    assert get_generator("pow:3").power == 3.0
    assert get_generator("pow:1").is_identity
    with pytest.raises(KeyError):
        get_generator("cube")


@pytest.mark.parametrize("gen", list(CATALOG.values()), ids=list(CATALOG))
def test_generator_invariants(gen):
    grid = np.concatenate([[0.0], np.geomspace(1e-6, 30.0, 400)])
    us = gen.u(grid)
    assert gen.u(0.0) == 0.0
    assert (np.diff(us) > 0).all()
    back = gen.u_inv(us)
    np.testing.assert_allclose(back, grid, rtol=1e-9, atol=0)
    wp = WeightingProfile(gen, 1.3)
    f = wp.f(grid)
    assert f[0] == 1.0 and (np.diff(f) <= 0).all()
    # f itself carries no information once eta*u(x) is below ~1e-16, so the
    # round trip is checked where f is well away from 1 and from underflow
    ok = (1.3 * us > 1e-3) & (f > 1e-280)
    np.testing.assert_allclose(wp.g(f[ok]), grid[ok], rtol=1e-9)


def test_focal_inverse_accuracy():
    y = np.geomspace(1e-12, 1e12, 300)
    x = FOCAL.u_inv(y)
    np.testing.assert_allclose(FOCAL.u(x), y, rtol=1e-13)


def test_power_one_is_sum():
    xs = [0.3, 1.7, 2.2]
    assert quasi_sum(power(1.0), xs) == quasi_sum(SUM, xs)


def test_check_axioms_examples():
    assert check_axioms(SUM, [0, 0.5, 1, 2]).passed
    assert check_axioms(SQUARE, [0, 1, 3, 4]).passed
    rep = check_axioms(POW10, [0, 1, 2, 50, 1e31])
    assert rep.overflow
    assert rep.excluded == [1e31]
    assert rep.passed
    d = rep.to_dict()
    assert d["passed"] and d["excluded"] == [1e31]


def test_check_axioms_rejects_bad_grids():
    with pytest.raises(ValueError):
        check_axioms(SUM, [])
    with pytest.raises(DomainError):
        check_axioms(SUM, [1.0, -1.0])


@pytest.mark.parametrize("gen", list(CATALOG.values()), ids=list(CATALOG))
@settings(max_examples=200, deadline=None)
@given(xs=st.lists(losses, min_size=1, max_size=6))
def test_fold_equals_batch(gen, xs):
    acc = 0.0
    for x in xs:
        acc = quasi_sum_fold(gen, acc, x)
    assert acc == pytest.approx(quasi_sum(gen, xs), rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("gen", list(CATALOG.values()), ids=list(CATALOG))
@settings(max_examples=200, deadline=None)
@given(xs=st.lists(losses, min_size=1, max_size=6), data=st.data())
def test_commutative(gen, xs, data):
    perm = data.draw(st.permutations(xs))
    assert quasi_sum(gen, perm) == pytest.approx(quasi_sum(gen, xs), rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("gen", list(CATALOG.values()), ids=list(CATALOG))
@settings(max_examples=200, deadline=None)
@given(xs=st.lists(st.floats(min_value=0.0, max_value=5.0), min_size=1, max_size=5),
       eta=st.floats(min_value=0.05, max_value=5.0))
def test_quasi_product_and_eta_invariance(gen, xs, eta):
    wp = WeightingProfile(gen, eta)
    # g(prod f(x_i)) evaluated through the log of the product
    log_prod = math.fsum(float(wp.log_f(x)) for x in xs)
    via_profile = float(gen.u_inv(-log_prod / eta))
    assert via_profile == pytest.approx(quasi_sum(gen, xs), rel=1e-9, abs=1e-12)


@settings(max_examples=300, deadline=None)
@given(xs=st.lists(st.floats(min_value=0.0, max_value=10.0), min_size=1, max_size=5),
       k=st.floats(min_value=0.01, max_value=10.0), p=st.sampled_from([0.5, 1.0, 2.0, 3.0, 10.0]))
def test_power_homogeneous(xs, k, p):
    gen = power(p)
    scaled = quasi_sum(gen, [k * x for x in xs])
    assert scaled == pytest.approx(k * quasi_sum(gen, xs), rel=1e-9, abs=1e-12)


def test_focal_not_homogeneous():
    assert quasi_sum(FOCAL, [2.0, 2.0]) != pytest.approx(2 * quasi_sum(FOCAL, [1.0, 1.0]), rel=1e-6)
