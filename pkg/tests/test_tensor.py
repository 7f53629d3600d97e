import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nalcert.errors import DimensionError, NonFiniteError, ParameterError
from nalcert.oracles import naive_matmul
from nalcert.tensor import PRNG_ID, RngStream, as_tensor, axpy, clamp, derive_stream_id, gaussian, l2_norm, matmul


def test_matmul_identity_and_dot():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(np.eye(2), a), a)
    assert np.array_equal(matmul([[1.0, 2.0]], [[3.0], [4.0]]), [[11.0]])


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


@settings(max_examples=40, deadline=None)
@given(m=st.integers(1, 64), k=st.integers(1, 64), n=st.integers(1, 64), seed=st.integers(0, 2**32))
def test_matmul_matches_triple_loop(m, k, n, seed):
    gen = np.random.default_rng(seed)
    a, b = gen.standard_normal((m, k)), gen.standard_normal((k, n))
    ref = naive_matmul(a, b)
    assert np.max(np.abs(matmul(a, b) - ref)) <= 1e-12 * max(1.0, np.max(np.abs(ref)))


def test_matmul_5x7x3():
    gen = np.random.default_rng(0)
    a, b = gen.standard_normal((5, 7)), gen.standard_normal((7, 3))
    assert np.allclose(matmul(a, b), naive_matmul(a, b), rtol=1e-12, atol=0)


def test_gaussian_zero_sigma():
    assert np.array_equal(gaussian(RngStream(1), (3,), 0.0), np.zeros(3))


def test_gaussian_negative_sigma():
    with pytest.raises(ParameterError):
        gaussian(RngStream(1), (3,), -0.1)


def test_gaussian_moments_at_one_million():
    z = gaussian(RngStream(42), (10**6,), 1.0)
    assert abs(z.mean()) < 0.005
    assert abs(z.std() - 1.0) < 0.005


def test_gaussian_replays_bytes():
    a = gaussian(RngStream(42, 0), (1000,), 1.0)
    b = gaussian(RngStream(42, 0), (1000,), 1.0)
    assert a.tobytes() == b.tobytes()


def test_child_streams_differ_and_replay():
    root = RngStream(5)
    a = gaussian(root.child("x", 0), (50,), 1.0)
    b = gaussian(root.child("x", 1), (50,), 1.0)
    assert not np.array_equal(a, b)
    assert np.array_equal(a, gaussian(RngStream(5).child("x", 0), (50,), 1.0))
    # independent-looking: sample correlation small
    big_a = gaussian(root.child("y", 0), (20000,), 1.0)
    big_b = gaussian(root.child("y", 1), (20000,), 1.0)
    assert abs(np.corrcoef(big_a, big_b)[0, 1]) < 4 / np.sqrt(20000)


def test_stream_id_is_stable():
    # frozen: a change here would silently change every seeded result
    assert derive_stream_id(0, 0, "model") == derive_stream_id(0, 0, "model")
    assert derive_stream_id(0, 0, "model") != derive_stream_id(1, 0, "model")
    assert derive_stream_id(0, 0, "a", 1) != derive_stream_id(0, 0, "a", 2)
    assert "philox" in PRNG_ID


def test_rng_stream_range():
    with pytest.raises(ParameterError):
        RngStream(-1)
    with pytest.raises(ParameterError):
        RngStream(2**64)


def test_small_vector_ops():
    assert l2_norm([3.0, 4.0]) == 5.0
    assert l2_norm(np.zeros(4)) == 0.0
    assert np.array_equal(axpy(2.0, [1.0, 1.0], [0.0, 1.0]), [2.0, 3.0])
    assert np.array_equal(clamp([-1.0, 0.5, 2.0], 0.0, 1.0), [0.0, 0.5, 1.0])


def test_axpy_shape_mismatch():
    with pytest.raises(DimensionError):
        axpy(1.0, [1.0, 2.0], [1.0, 2.0, 3.0])


def test_non_finite_rejected():
    with pytest.raises(NonFiniteError):
        as_tensor([1.0, np.nan])
    with np.errstate(over="ignore"), pytest.raises(NonFiniteError):
        axpy(1e308, [1e308], [0.0])
