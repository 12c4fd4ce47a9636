import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualmaxwell.nonlin import Nonlinearity, cosine_weight, monotonicity_gap, validate_assumptions


def _samples(rng, decades=(-3, 3), n=200):
    s = 10.0 ** rng.uniform(*decades, n)
    d = rng.standard_normal((n, 3))
    return s[:, None] * d / np.linalg.norm(d, axis=1, keepdims=True), s


@pytest.mark.parametrize("p", [3.0, 4.0, 5.0, 4.5])
def test_power_roundtrip(p, rng):
    nl = Nonlinearity(p=p)
    E, s = _samples(rng)
    assert np.max(np.linalg.norm(nl.eval_psi(nl.eval_f(E)) - E, axis=1) / s) < 1e-12
    assert np.max(np.linalg.norm(nl.eval_f(nl.eval_psi(E)) - E, axis=1) / s) < 1e-12


def test_zero_maps_to_zero():
    nl = Nonlinearity(p=4)
    assert np.all(nl.eval_psi(np.zeros((2, 3))) == 0)
    assert np.all(nl.eval_f(np.zeros((2, 3))) == 0)


def test_young_identity(rng):
    nl = Nonlinearity(p=4)
    E, _ = _samples(rng)
    P = nl.eval_f(E)
    lhs = nl.eval_F(E) + nl.eval_Psi(P)
    assert np.allclose(lhs, np.sum(E * P, axis=1), rtol=1e-12)


def test_custom_monotone_roundtrip(rng):
    nl = Nonlinearity(kind="custom_monotone", p=4, g=lambda s: s ** 3 + s ** 2, dg=lambda s: 3 * s ** 2 + 2 * s)
    E, s = _samples(rng, n=60)
    assert np.max(np.linalg.norm(nl.eval_psi(nl.eval_f(E)) - E, axis=1) / s) < 1e-10


def test_jacobian_matches_finite_differences(rng):
    nl = Nonlinearity(p=4)
    P = rng.standard_normal((5, 3))
    D = nl.psi_jacobian(P, 1.0, rel_floor=0.0)
    v = rng.standard_normal((5, 3))
    h = 1e-6
    fd = (nl.eval_psi(P + h * v) - nl.eval_psi(P - h * v)) / (2 * h)
    assert np.allclose(np.einsum("...ij,...j->...i", D, v), fd, rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize("p", [3.0, 4.0, 5.0])
def test_power_law_constants(p):
    rep = validate_assumptions(Nonlinearity(p=p))
    assert rep.growth_pass
    assert rep.c1 == pytest.approx((p - 2) / (2 * p), rel=1e-10)
    assert rep.c2 == pytest.approx((p - 2) / (2 * p), rel=1e-10)


def test_validation_flags_lower_order_term():
    nl = Nonlinearity(kind="custom_monotone", p=4, g=lambda s: s ** 3 + s, dg=lambda s: 3 * s ** 2 + 1,
                      G=lambda s: s ** 4 / 4 + s ** 2 / 2)
    assert not validate_assumptions(nl).growth_pass


def test_bad_parameters():
    with pytest.raises(ValueError):
        Nonlinearity(p=6.5)
    with pytest.raises(ValueError):
        Nonlinearity(p=4, a=0.0)
    with pytest.raises(ValueError):
        Nonlinearity(p=3).require_fullspace()


def test_monotonicity_and_weight(rng):
    nl = Nonlinearity(p=4)
    P, Q = rng.standard_normal((2, 50, 3))
    gap = monotonicity_gap(P, Q, nl, 1.0)
    assert gap[0] >= 0
    coords = rng.uniform(0, 1, (10, 3))
    w = cosine_weight(coords, 1.0)
    assert np.all(w > 0)


@settings(max_examples=200, deadline=None)
@given(p=st.floats(2.1, 5.9), s=st.floats(1e-3, 1e3), a=st.floats(0.1, 10.0),
       d=st.tuples(*[st.floats(-1, 1)] * 3).filter(lambda v: sum(c * c for c in v) > 1e-4))
def test_roundtrip_property(p, s, a, d):
    nl = Nonlinearity(p=p, a=a)
    E = s * np.asarray(d) / np.linalg.norm(d)
    assert np.linalg.norm(nl.eval_psi(nl.eval_f(E)) - E) <= 1e-11 * s
