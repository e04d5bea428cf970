import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ttnet.tensor import ShapeError, as_tensor, matricize, permute_axes, reshape, svd_truncated


def test_reshape_row_major():
    t = as_tensor([1, 2, 3, 4])
    np.testing.assert_array_equal(reshape(t, [2, 2]), [[1, 2], [3, 4]])


def test_reshape_round_trip_bit_exact():
    t = np.random.default_rng(0).normal(size=(2, 3))
    back = reshape(reshape(t, [6]), [2, 3])
    assert back.tobytes() == t.tobytes()


def test_reshape_mismatch():
    with pytest.raises(ShapeError):
        reshape(np.zeros((2, 2)), [3])


def test_as_tensor_rejects_scalar_and_empty_modes():
    with pytest.raises(ShapeError):
        as_tensor(3.0)
    with pytest.raises(ShapeError):
        as_tensor(np.zeros((2, 0)))


def test_permute_transpose_and_identity():
    m = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(permute_axes(m, [1, 0]), m.T)
    t = np.random.default_rng(1).normal(size=(2, 3, 4))
    assert permute_axes(t, [0, 1, 2]).tobytes() == t.tobytes()
    assert permute_axes(m, [1, 0]).flags.c_contiguous


def test_permute_invalid():
    with pytest.raises(ShapeError):
        permute_axes(np.zeros((2, 3)), [0, 0])
    with pytest.raises(ShapeError):
        permute_axes(np.zeros((2, 3)), [0, 1, 2])


@given(st.permutations(range(4)), st.integers(0, 2**32 - 1))
def test_permute_then_inverse(perm, seed):
    t = np.random.default_rng(seed).normal(size=(2, 3, 1, 4))
    inv = np.argsort(perm)
    assert permute_axes(permute_axes(t, perm), inv).tobytes() == t.tobytes()


def test_matricize_shapes():
    t = np.arange(24.0).reshape(2, 3, 4)
    assert matricize(t, 1).shape == (2, 12)
    assert matricize(t, 2).shape == (6, 4)
    np.testing.assert_array_equal(reshape(matricize(t, 2), [2, 3, 4]), t)
    for bad in (0, 3):
        with pytest.raises(ShapeError):
            matricize(t, bad)


def test_svd_identity():
    res = svd_truncated(np.eye(3))
    np.testing.assert_allclose(res.s, [1, 1, 1])
    assert res.rank == 3


def test_svd_rank_one_outer_product():
    rng = np.random.default_rng(2)
    u = rng.normal(size=7)
    v = rng.normal(size=5)
    u /= np.linalg.norm(u)
    v /= np.linalg.norm(v)
    m = np.outer(u, v)
    res = svd_truncated(m, None, 1e-10)
    assert res.rank == 1
    assert np.linalg.norm(res.reconstruct() - m) < 1e-10


def test_svd_rank_cap_drops_smallest():
    res = svd_truncated(np.diag([3.0, 2.0, 1.0]), max_rank=2)
    assert res.rank == 2
    assert np.linalg.norm(res.reconstruct() - np.diag([3.0, 2.0, 1.0])) == pytest.approx(1.0, rel=1e-12)


def test_svd_energy_tolerance():
    m = np.diag([3.0, 2.0, 1.0])
    # dropping the last value loses 1/14 of the energy
    assert svd_truncated(m, rel_tol=np.sqrt(1 / 14) + 1e-9).rank == 2
    assert svd_truncated(m, rel_tol=np.sqrt(1 / 14) - 1e-9).rank == 3


def test_svd_errors():
    with pytest.raises(ValueError):
        svd_truncated(np.array([[1.0, np.nan]]))
    with pytest.raises(ShapeError):
        svd_truncated(np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        svd_truncated(np.eye(2), max_rank=0)


def test_svd_factor_orthonormality():
    m = np.random.default_rng(3).normal(size=(9, 6))
    res = svd_truncated(m)
    np.testing.assert_allclose(res.u.T @ res.u, np.eye(res.rank), atol=1e-10)
    np.testing.assert_allclose(res.vt @ res.vt.T, np.eye(res.rank), atol=1e-10)
    assert np.all(np.diff(res.s) <= 0) and np.all(res.s >= 0)


@settings(max_examples=40, deadline=None)
@given(
    rows=st.integers(1, 12),
    cols=st.integers(1, 12),
    cap=st.integers(1, 12),
    seed=st.integers(0, 2**32 - 1),
)
def test_truncation_error_equals_tail(rows, cols, cap, seed):
    m = np.random.default_rng(seed).normal(size=(rows, cols))
    res = svd_truncated(m, max_rank=cap)
    err2 = np.linalg.norm(m - res.reconstruct()) ** 2
    # discarded tail energy, from the eigenvalues of M^T M (independent of the SVD path)
    eig = np.sort(np.clip(np.linalg.eigvalsh(m.T @ m), 0, None))[::-1]
    tail = eig[res.rank :].sum()
    assert err2 == pytest.approx(tail, rel=1e-8, abs=1e-10 * eig.sum())
    assert res.tail_energy == pytest.approx(tail, rel=1e-8, abs=1e-10 * eig.sum())


@pytest.mark.parametrize("n", [2, 8, 32, 64])
def test_full_rank_reconstruction_against_eigen_oracle(n):
    rng = np.random.default_rng(n)
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    m = q @ np.diag(np.linspace(1.0, 2.0, n)) @ q.T.copy()
    m = m + 0.1 * rng.normal(size=(n, n))
    res = svd_truncated(m, None, 0.0)
    assert np.linalg.norm(m - res.reconstruct()) / np.linalg.norm(m) < 1e-10
    # singular values squared are eigenvalues of M^T M
    eig = np.sort(np.linalg.eigvalsh(m.T @ m))[::-1]
    np.testing.assert_allclose(res.s**2, eig, rtol=1e-8)
