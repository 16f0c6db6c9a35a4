import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from shieldsynth.linalg import determinant, lu_factor, slogdet


def cofactor_det(a):
    n = a.shape[0]
    if n == 1:
        return a[0, 0]
    return sum((-1) ** j * a[0, j] * cofactor_det(np.delete(a[1:], j, axis=1)) for j in range(n))


def test_identity_and_scaled():
    assert determinant(np.eye(4)) == 1.0
    assert determinant(2 * np.eye(2)) == pytest.approx(4.0)


def test_against_cofactor_expansion(rng):
    for _ in range(50):
        a = rng.standard_normal((5, 5))
        assert determinant(a) == pytest.approx(cofactor_det(a), rel=1e-9)


def test_singular_and_sign():
    assert determinant(np.array([[1.0, 2.0], [2.0, 4.0]])) == 0.0
    assert slogdet(np.zeros((3, 3)))[0] == 0.0
    perm = np.eye(3)[[1, 0, 2]]
    assert determinant(perm) == pytest.approx(-1.0)


def test_slogdet_past_float_range():
    sign, logabs = slogdet(1e-5 * np.eye(100))
    assert sign == 1.0
    assert logabs == pytest.approx(100 * np.log(1e-5))
    assert determinant(1e5 * np.eye(100)) == np.inf


def test_lu_reconstructs(rng):
    a = rng.standard_normal((6, 6))
    lu, perm, _ = lu_factor(a)
    L = np.tril(lu, -1) + np.eye(6)
    U = np.triu(lu)
    assert np.allclose(L @ U, a[perm])


@settings(max_examples=60, deadline=None)
@given(arrays(float, (3, 3), elements=st.floats(-5, 5)))
def test_matches_cofactor_property(a):
    assert determinant(a) == pytest.approx(cofactor_det(a), rel=1e-8, abs=1e-9)


def test_non_square_rejected():
    with pytest.raises(ValueError):
        lu_factor(np.ones((2, 3)))
