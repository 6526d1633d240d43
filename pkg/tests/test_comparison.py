"""Comparison functions: evaluation, inversion, KLL envelopes, validation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hymem.comparison import (
    ClassKFn,
    KLLFn,
    eval_kll,
    evaluate,
    numeric_inverse,
    validate_class_k,
)


def test_family_values():
    assert evaluate(ClassKFn("linear", 2.0), 3.0) == pytest.approx(6.0)
    assert evaluate(ClassKFn("power", 2.0, 3.0), 2.0) == pytest.approx(16.0)
    sat = ClassKFn("saturating", 4.0)
    assert evaluate(sat, 0.0) == 0.0
    assert float(evaluate(sat, 1e9)) < 4.0


def test_k_infinity_flags():
    assert ClassKFn("linear", 1.0).k_infinity
    assert ClassKFn("power", 0.5, 2.0).k_infinity
    assert not ClassKFn("saturating", 1.0).k_infinity


def test_constructor_validation():
    with pytest.raises(ValueError):
        ClassKFn("linear", 0.0)
    with pytest.raises(ValueError):
        ClassKFn("power", 1.0, -2.0)
    with pytest.raises(ValueError):
        ClassKFn("cubic", 1.0)


def test_evaluate_rejects_negative_argument():
    with pytest.raises(ValueError):
        evaluate(ClassKFn("linear", 1.0), -0.5)
    with pytest.raises(ValueError):
        evaluate(ClassKFn("linear", 1.0), np.array([0.5, -0.1]))


def test_evaluate_is_vectorized():
    f = ClassKFn("power", 1.5, 2.0)
    s = np.linspace(0, 4, 9)
    np.testing.assert_allclose(evaluate(f, s), 1.5 * s**2)


def test_numeric_inverse_round_trip():
    for f in (
        ClassKFn("linear", 0.7),
        ClassKFn("power", 2.0, 2.0),
        ClassKFn("saturating", 3.0),
    ):
        for s in (0.0, 0.3, 1.0, 2.5):
            y = float(evaluate(f, s))
            s_back = numeric_inverse(f, y, tol=1e-12)
            assert abs(float(evaluate(f, s_back)) - y) <= 1e-12
            assert s_back == pytest.approx(s, abs=1e-9)


def test_numeric_inverse_edge_cases():
    assert numeric_inverse(ClassKFn("power", 2.0, 2.0), 0.0) == 0.0
    with pytest.raises(ValueError, match="saturat"):
        numeric_inverse(ClassKFn("saturating", 1.0), 1.0)
    with pytest.raises(ValueError):
        numeric_inverse(ClassKFn("linear", 1.0), 1.0, tol=0.0)


@given(
    family=st.sampled_from(["linear", "power", "saturating"]),
    c=st.floats(0.2, 5.0),
    p=st.floats(1.0, 2.5),
    s=st.floats(0.05, 4.0),
)
@settings(max_examples=60, deadline=None)
def test_inverse_round_trip_property(family, c, p, s):
    f = ClassKFn(family, c, p)
    y = float(evaluate(f, s))
    s_back = numeric_inverse(f, y, tol=1e-12)
    assert abs(float(evaluate(f, s_back)) - y) <= 1e-12


@given(
    family=st.sampled_from(["linear", "power", "saturating"]),
    c=st.floats(0.2, 5.0),
    p=st.floats(0.5, 3.0),
)
@settings(max_examples=40, deadline=None)
def test_strict_monotonicity_property(family, c, p):
    f = ClassKFn(family, c, p)
    s = np.linspace(0.0, 8.0, 101)
    vals = np.asarray(evaluate(f, s))
    assert float(vals[0]) == 0.0
    assert np.all(np.diff(vals) > 0)


def test_eval_kll_decays_in_both_coordinates():
    beta = KLLFn(gain=ClassKFn("linear", 2.0), rate=0.5)
    v0 = float(eval_kll(beta, 1.0, 0.0, 0.0))
    assert v0 == pytest.approx(2.0)
    assert float(eval_kll(beta, 1.0, 1.0, 0.0)) == pytest.approx(2.0 * np.exp(-0.5))
    assert float(eval_kll(beta, 1.0, 0.0, 1.0)) == pytest.approx(2.0 * np.exp(-0.5))
    assert float(eval_kll(beta, 1.0, 3.0, 4.0)) < v0
    with pytest.raises(ValueError):
        eval_kll(beta, -1.0, 0.0, 0.0)


def test_kll_requires_positive_rate():
    with pytest.raises(ValueError):
        KLLFn(gain=ClassKFn("linear", 1.0), rate=0.0)


def test_validate_class_k_accepts_families():
    check = validate_class_k(ClassKFn("power", 1.0, 2.0))
    assert check.ok
    assert check.k_infinity
    sat = validate_class_k(ClassKFn("saturating", 1.0))
    assert sat.ok
    assert not sat.k_infinity


def test_validate_class_k_rejects_bad_callables():
    grid = np.linspace(0, 10, 201)
    assert not validate_class_k(lambda s: np.sin(s), grid=grid).ok
    assert not validate_class_k(lambda s: s + 1.0, grid=grid).ok


def test_validate_class_k_needs_dense_grid():
    with pytest.raises(ValueError, match="100"):
        validate_class_k(ClassKFn("linear", 1.0), grid=np.linspace(0, 1, 5))
