"""Tests for the dense linear-algebra primitives.

Oracles: numpy.linalg.eigh on Gram matrices for singular values and dominant
eigenpairs (an independent symmetric eigensolver route), plus direct
reconstruction and orthonormality checks.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedistill.linalg import SvdResult, power_iteration, random_orthogonal, svd


def test_svd_identity():
    res = svd(np.eye(3), 3)
    np.testing.assert_allclose(res.sigma, [1.0, 1.0, 1.0], atol=1e-12)


def test_svd_diagonal_signed_permutation():
    res = svd(np.diag([3.0, 2.0, 1.0]), 3)
    np.testing.assert_allclose(res.sigma, [3.0, 2.0, 1.0], atol=1e-12)
    # u and vt must be signed permutations of the identity.
    assert np.allclose(np.abs(res.u), np.eye(3), atol=1e-12)
    assert np.allclose(np.abs(res.vt), np.eye(3), atol=1e-12)


def test_svd_sigma_matches_gram_eigenvalues():
    # Independent oracle: singular values are square roots of eig(S^T S).
    rng = np.random.default_rng(7)
    s = rng.standard_normal((20, 6))
    res = svd(s, 6)
    gram_eigs = np.linalg.eigh(s.T @ s)[0][::-1]
    np.testing.assert_allclose(res.sigma, np.sqrt(np.clip(gram_eigs, 0, None)), atol=1e-8)


def test_svd_truncation_and_orthonormality():
    rng = np.random.default_rng(0)
    m = rng.standard_normal((30, 10))
    res = svd(m, 4)
    assert res.u.shape == (30, 4)
    assert res.sigma.shape == (4,)
    assert res.vt.shape == (4, 10)
    assert res.rank == 4
    np.testing.assert_allclose(res.u.T @ res.u, np.eye(4), atol=1e-8)
    np.testing.assert_allclose(res.vt @ res.vt.T, np.eye(4), atol=1e-8)
    full = svd(m, 10)
    np.testing.assert_allclose(res.sigma, full.sigma[:4])


def test_svd_reconstruction_large():
    rng = np.random.default_rng(42)
    m = rng.standard_normal((500, 200))
    res = svd(m, 200)
    recon = res.u @ np.diag(res.sigma) @ res.vt
    rel = np.linalg.norm(m - recon) / np.linalg.norm(m)
    assert rel < 1e-8


def test_svd_sign_convention_deterministic():
    rng = np.random.default_rng(3)
    m = rng.standard_normal((15, 5))
    res = svd(m, 5)
    anchors = np.abs(res.u).argmax(axis=0)
    assert np.all(res.u[anchors, np.arange(5)] >= 0)
    res2 = svd(m.copy(), 5)
    np.testing.assert_array_equal(res.u, res2.u)
    np.testing.assert_array_equal(res2.vt, res.vt)


def test_svd_rejects_bad_rank():
    m = np.eye(4)
    with pytest.raises(ValueError):
        svd(m, 0)
    with pytest.raises(ValueError):
        svd(m, 5)


def test_svd_rejects_nonfinite():
    m = np.eye(3)
    m[1, 2] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        svd(m, 2)


def test_random_orthogonal_trivial_sizes():
    q = random_orthogonal(1, 100, np.random.default_rng(0))
    assert q.shape == (1, 1)
    assert abs(abs(q[0, 0]) - 1.0) < 1e-12


def test_random_orthogonal_block_structure():
    q = random_orthogonal(5, 2, np.random.default_rng(1))
    assert np.max(np.abs(q.T @ q - np.eye(5))) < 1e-10
    # Blocks of sizes 2, 2, 1: everything off the block diagonal is zero.
    assert np.all(q[0:2, 2:] == 0)
    assert np.all(q[2:4, 0:2] == 0)
    assert np.all(q[2:4, 4:] == 0)
    assert np.all(q[4:, 0:4] == 0)


def test_random_orthogonal_single_dense_block():
    q = random_orthogonal(100, 100, np.random.default_rng(2))
    assert np.max(np.abs(q.T @ q - np.eye(100))) < 1e-10
    # A genuinely dense block: no zero row outside the diagonal.
    assert np.min(np.abs(q).sum(axis=1)) > 1.0


def test_random_orthogonal_deterministic():
    q1 = random_orthogonal(30, 7, np.random.default_rng(5))
    q2 = random_orthogonal(30, 7, np.random.default_rng(5))
    np.testing.assert_array_equal(q1, q2)


@settings(deadline=None, max_examples=25)
@given(
    rows=st.integers(min_value=2, max_value=40),
    cols=st.integers(min_value=2, max_value=20),
    block=st.integers(min_value=1, max_value=50),
    seed=st.integers(min_value=0, max_value=2**31),
)
def test_orthogonal_invariance_of_singular_values(rows, cols, block, seed):
    # Masking backbone: A M B has the same singular values as M.
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((rows, cols))
    a = random_orthogonal(rows, block, rng)
    b = random_orthogonal(cols, block, rng)
    ref = svd(m).sigma
    masked = svd(a @ m @ b).sigma
    scale = max(ref[0], 1.0)
    assert np.max(np.abs(ref - masked)) / scale < 1e-10


def test_power_iteration_dominant_axis():
    vec, val = power_iteration(np.diag([5.0, 1.0]), 50)
    assert abs(val - 5.0) < 1e-10
    assert abs(abs(vec[0]) - 1.0) < 1e-10
    assert abs(vec[1]) < 1e-10


def test_power_iteration_matches_eigh_oracle():
    rng = np.random.default_rng(11)
    g = rng.standard_normal((8, 8))
    a = g @ g.T + 8 * np.eye(8)
    vec, val = power_iteration(a, 100)
    oracle_vals, oracle_vecs = np.linalg.eigh(a)
    assert abs(val - oracle_vals[-1]) < 1e-6
    top = oracle_vecs[:, -1]
    assert min(np.linalg.norm(vec - top), np.linalg.norm(vec + top)) < 1e-5


def test_power_iteration_rayleigh_monotone_for_spd():
    rng = np.random.default_rng(13)
    g = rng.standard_normal((10, 10))
    a = g @ g.T + np.eye(10)
    values = [power_iteration(a, s)[1] for s in range(1, 30)]
    diffs = np.diff(values)
    assert np.all(diffs >= -1e-12)


def test_power_iteration_warm_start():
    a = np.diag([4.0, 2.0, 1.0])
    v0 = np.array([0.9, 0.3, 0.1])
    vec, val = power_iteration(a, 60, v0=v0)
    assert abs(val - 4.0) < 1e-10
    assert abs(np.linalg.norm(vec) - 1.0) < 1e-12


def test_power_iteration_rejects_zero_matrix():
    with pytest.raises(ValueError, match="no dominant eigenvector"):
        power_iteration(np.zeros((3, 3)), 10)


def test_power_iteration_rejects_asymmetric():
    a = np.array([[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(ValueError, match="symmetric"):
        power_iteration(a, 10)


def test_svd_result_is_plain_container():
    res = SvdResult(u=np.eye(2), sigma=np.ones(2), vt=np.eye(2))
    assert res.rank == 2
