import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from semisupcon.exceptions import DimensionMismatch, NonPositiveTemperature, ZeroNormRow
from semisupcon.numerics import SeededRng, log_softmax, row_normalize, similarity_matrix


def test_row_normalize_examples():
    np.testing.assert_allclose(row_normalize([[3.0, 4.0]]), [[0.6, 0.8]], atol=1e-15)
    np.testing.assert_array_equal(row_normalize([[1.0, 0.0], [0.0, 2.0]]), [[1.0, 0.0], [0.0, 1.0]])


def test_row_normalize_zero_row():
    with pytest.raises(ZeroNormRow) as info:
        row_normalize([[1.0, 1.0], [0.0, 0.0]])
    assert info.value.row == 1
    with pytest.raises(ZeroNormRow):
        row_normalize([[0.0, 0.0]])


finite_rows = arrays(
    np.float64,
    st.tuples(st.integers(1, 6), st.integers(1, 6)),
    elements=st.floats(-1e3, 1e3, allow_nan=False, width=64),
).filter(lambda m: (np.linalg.norm(m, axis=1) > 1e-6).all())


@given(finite_rows)
@settings(max_examples=200, deadline=None)
def test_row_normalize_unit_and_idempotent(m):
    out = row_normalize(m)
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(row_normalize(out), out)
    # direction preserved: positive multiple of the input row
    cos = np.einsum("ij,ij->i", out, m) / np.linalg.norm(m, axis=1)
    np.testing.assert_allclose(cos, 1.0, atol=1e-12)


def test_log_softmax_examples():
    np.testing.assert_allclose(log_softmax([0.0, 0.0], 1.0), [-math.log(2)] * 2, atol=1e-15)
    e = math.e
    np.testing.assert_allclose(np.exp(log_softmax([1.0, 0.0], 1.0)), [e / (e + 1), 1 / (e + 1)], atol=1e-15)
    np.testing.assert_allclose(np.exp(log_softmax([1.0, 0.0], 1.0)), [0.731059, 0.268941], atol=1e-6)
    big = log_softmax([1000.0, 0.0], 1.0)
    assert np.isfinite(big).all()
    np.testing.assert_allclose(np.exp(big), [1.0, 0.0], atol=1e-300)


@pytest.mark.parametrize("t", [0.0, -1.0])
def test_log_softmax_rejects_temperature(t):
    with pytest.raises(NonPositiveTemperature):
        log_softmax([1.0, 2.0], t)


@given(
    arrays(np.float64, st.integers(1, 8), elements=st.floats(-50, 50, width=64)),
    st.floats(-100, 100),
    st.sampled_from([0.01, 0.04, 0.5, 1.0, 3.0]),
)
@settings(max_examples=200, deadline=None)
def test_log_softmax_shift_invariant_and_normalised(v, c, t):
    out = log_softmax(v, t)
    assert abs(np.exp(out).sum() - 1.0) < 1e-12
    np.testing.assert_allclose(log_softmax(v + c, t), out, atol=1e-10)


def test_similarity_examples(rng):
    eye = np.eye(2)
    np.testing.assert_array_equal(similarity_matrix(eye, eye), eye)
    np.testing.assert_array_equal(similarity_matrix([[1.0, 0.0]], [[-1.0, 0.0]]), [[-1.0]])
    a = row_normalize(rng.normal(size=(7, 5)))
    b = row_normalize(rng.normal(size=(4, 5)))
    naive = [[sum(a[i, k] * b[j, k] for k in range(5)) for j in range(4)] for i in range(7)]
    s = similarity_matrix(a, b)
    np.testing.assert_allclose(s, naive, atol=1e-12)
    assert np.all(np.abs(s) <= 1 + 1e-9)
    np.testing.assert_allclose(np.diag(similarity_matrix(a, a)), 1.0, atol=1e-12)


def test_similarity_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        similarity_matrix(np.ones((2, 3)), np.ones((2, 4)))


def test_seeded_rng_reproducible():
    assert SeededRng(7).bytes(64) == SeededRng(7).bytes(64)
    assert SeededRng(7).bytes(64) != SeededRng(8).bytes(64)


def test_child_stream_independent_of_parent_draws():
    a, b = SeededRng(3), SeededRng(3)
    b.normal(size=1000)
    assert a.child("init").bytes(32) == b.child("init").bytes(32)
    assert a.child("init").bytes(32) != a.child("augment").bytes(32)
