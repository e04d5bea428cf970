import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ttnet.tensor import ShapeError
from ttnet.tt import (
    ModeFactorization,
    TTMatrix,
    dense_param_count,
    load_tt,
    reconstruct,
    save_tt,
    tt_matvec,
    tt_param_count,
    tt_param_count_for,
    tt_random_init,
    tt_svd_decompose,
)


def brute_force_dense(tt: TTMatrix) -> np.ndarray:
    """Entry-by-entry product of core slices."""
    w = np.zeros((tt.in_dim, tt.out_dim))
    for i in itertools.product(*[range(m) for m in tt.input_modes]):
        for j in itertools.product(*[range(n) for n in tt.output_modes]):
            prod = np.ones((1, 1))
            for k, core in enumerate(tt.cores):
                prod = prod @ core[:, i[k], j[k], :]
            w[np.ravel_multi_index(i, tt.input_modes), np.ravel_multi_index(j, tt.output_modes)] = prod[0, 0]
    return w


def random_tt(rng, input_modes, output_modes, ranks):
    return TTMatrix(
        [rng.normal(size=(ranks[k], m, n, ranks[k + 1])) for k, (m, n) in enumerate(zip(input_modes, output_modes))]
    )


def test_kronecker_is_rank_one():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
    w = np.kron(a, b)
    tt = tt_svd_decompose(w, ModeFactorization((2, 2), (2, 2)))
    assert tt.ranks == (1, 1, 1)
    np.testing.assert_allclose(reconstruct(tt), w, atol=1e-13)


def test_identity_decomposition():
    tt = tt_svd_decompose(np.eye(4), ModeFactorization((2, 2), (2, 2)))
    np.testing.assert_allclose(reconstruct(tt), np.eye(4), atol=1e-10)


def test_random_matrix_round_trip():
    w = np.random.default_rng(1).normal(size=(16, 16))
    tt = tt_svd_decompose(w, ModeFactorization((4, 4), (4, 4)), rel_tol=0.0)
    assert np.linalg.norm(reconstruct(tt) - w) / np.linalg.norm(w) < 1e-8


def test_decompose_errors():
    with pytest.raises(ShapeError):
        tt_svd_decompose(np.zeros((16, 15)), ModeFactorization((4, 4), (4, 4)))
    with pytest.raises(ValueError):
        ModeFactorization((4, 4), (4, 4), (1, 0, 1))
    with pytest.raises(ValueError):
        ModeFactorization((4, 4), (4, 4), (2, 3, 1))


def test_rank_caps_respected():
    w = np.random.default_rng(2).normal(size=(24, 30))
    tt = tt_svd_decompose(w, ModeFactorization((2, 3, 4), (3, 5, 2), (1, 3, 5, 1)))
    assert tt.ranks[1] <= 3 and tt.ranks[2] <= 5


def test_reconstruct_single_core():
    core = np.arange(6.0).reshape(1, 2, 3, 1)
    np.testing.assert_array_equal(reconstruct(TTMatrix([core])), core.reshape(2, 3))


def test_reconstruct_matches_core_products():
    rng = np.random.default_rng(3)
    tt = random_tt(rng, (2, 3, 2), (3, 1, 2), (1, 2, 3, 1))
    np.testing.assert_allclose(reconstruct(tt), brute_force_dense(tt), rtol=1e-12, atol=1e-12)


def test_reconstruct_zero_cores():
    tt = TTMatrix([np.zeros((1, 2, 2, 3)), np.zeros((3, 2, 2, 1))])
    np.testing.assert_array_equal(reconstruct(tt), np.zeros((4, 4)))


def test_matvec_identity():
    tt = tt_svd_decompose(np.eye(4), ModeFactorization((2, 2), (2, 2)))
    x = np.random.default_rng(4).normal(size=(2, 2))
    np.testing.assert_allclose(tt_matvec(tt, x), x, atol=1e-12)


def test_matvec_kronecker():
    # layers compute y = x @ W, i.e. y = W^T vec(x)
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(4, 2))
    tt = TTMatrix([a.reshape(1, 2, 3, 1), b.reshape(1, 4, 2, 1)])
    x = rng.normal(size=(2, 4))
    np.testing.assert_allclose(tt_matvec(tt, x).ravel(), np.kron(a, b).T @ x.ravel(), rtol=1e-12)


def test_matvec_random_against_dense():
    rng = np.random.default_rng(6)
    tt = random_tt(rng, (3, 4), (2, 5), (1, 3, 1))
    x = rng.normal(size=(3, 4))
    dense = x.ravel() @ reconstruct(tt)
    got = tt_matvec(tt, x).ravel()
    assert np.linalg.norm(got - dense) / np.linalg.norm(dense) < 1e-10


def test_matvec_shape_mismatch():
    tt = random_tt(np.random.default_rng(7), (3, 4), (2, 5), (1, 3, 1))
    with pytest.raises(ShapeError):
        tt_matvec(tt, np.zeros((4, 3)))


def test_param_counts_full_size_layer():
    fact = ModeFactorization((32, 64), (32, 64), (1, 4, 1))
    assert tt_param_count_for(fact) == 1 * 32 * 32 * 4 + 4 * 64 * 64 * 1 == 20480
    assert tt_param_count(tt_random_init(fact, 0)) == 20480
    assert dense_param_count(fact) == 2048 * 2048 == 4_194_304
    assert tt_param_count(tt_random_init(fact, 0)) < dense_param_count(fact)


def test_param_counts_small():
    fact = ModeFactorization((2,), (3,), (1, 1))
    assert tt_param_count(tt_random_init(fact, 0)) == 6 == dense_param_count(fact)
    assert dense_param_count(ModeFactorization((4, 4), (4, 4))) == 256


def test_random_init_determinism():
    fact = ModeFactorization((4, 4), (4, 4), (1, 2, 1))
    a, b, c = tt_random_init(fact, 11), tt_random_init(fact, 11), tt_random_init(fact, 12)
    for x, y in zip(a.cores, b.cores):
        assert x.tobytes() == y.tobytes()
    assert any(not np.array_equal(x, z) for x, z in zip(a.cores, c.cores))


def test_random_init_variance_monte_carlo():
    fact = ModeFactorization((4, 4), (4, 4), (1, 2, 1))
    samples = np.stack([reconstruct(tt_random_init(fact, s)) for s in range(1000)])
    var = samples.var()
    assert abs(var - 2 / 16) / (2 / 16) < 0.3


def test_random_init_rejects_unlimited_rank():
    with pytest.raises(ValueError):
        tt_random_init(ModeFactorization((4, 4), (4, 4)), 0)


def test_checkpoint_round_trip(tmp_path):
    tt = tt_random_init(ModeFactorization((2, 3, 4), (4, 3, 2), (1, 2, 3, 1)), 5)
    save_tt(tmp_path / "w.tt", tt)
    back = load_tt(tmp_path / "w.tt")
    assert back.ranks == tt.ranks and back.input_modes == tt.input_modes
    for x, y in zip(back.cores, tt.cores):
        assert x.tobytes() == y.tobytes()


def test_checkpoint_rejects_foreign_file(tmp_path):
    np.savez(tmp_path / "x.npz", a=np.zeros(3))
    with pytest.raises(ValueError):
        load_tt(tmp_path / "x.npz")


modes = st.lists(st.tuples(st.integers(1, 4), st.integers(1, 4)), min_size=1, max_size=3).filter(
    lambda ms: math.prod(m for m, _ in ms) <= 256 and math.prod(n for _, n in ms) <= 256
)


@settings(max_examples=60, deadline=None)
@given(modes=modes, data=st.data())
def test_contraction_equivalence(modes, data):
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    k = len(modes)
    ranks = [1] + [data.draw(st.integers(1, 4)) for _ in range(k - 1)] + [1]
    tt = random_tt(rng, [m for m, _ in modes], [n for _, n in modes], ranks)
    x = rng.normal(size=tt.input_modes)
    dense = x.ravel() @ reconstruct(tt)
    got = tt_matvec(tt, x).ravel()
    assert np.linalg.norm(got - dense) <= 1e-10 * max(np.linalg.norm(dense), 1e-300)


@settings(max_examples=30, deadline=None)
@given(modes=modes, seed=st.integers(0, 2**32 - 1))
def test_full_rank_round_trip(modes, seed):
    fact = ModeFactorization([m for m, _ in modes], [n for _, n in modes])
    w = np.random.default_rng(seed).normal(size=(fact.in_dim, fact.out_dim))
    back = reconstruct(tt_svd_decompose(w, fact))
    assert np.linalg.norm(back - w) / np.linalg.norm(w) < 1e-8


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), bond=st.integers(0, 1), cap=st.integers(1, 7))
def test_rank_cap_monotonicity(seed, bond, cap):
    w = np.random.default_rng(seed).normal(size=(27, 8))
    fixed = [3, 3]

    def err(c):
        ranks = list(fixed)
        ranks[bond] = c
        tt = tt_svd_decompose(w, ModeFactorization((3, 3, 3), (2, 2, 2), [1, *ranks, 1]))
        return np.linalg.norm(reconstruct(tt) - w)

    assert err(cap + 1) <= err(cap) * (1 + 1e-10) + 1e-12
