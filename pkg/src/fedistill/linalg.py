"""Dense matrix primitives: truncated SVD, block-orthogonal sampling, power iteration.

All operations are pure functions over float64 arrays and are safe to call
concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import SvdConvergenceError
from .validation import check_matrix, check_random_state, check_symmetric

# LAPACK's bidiagonal QR allows roughly this many implicit-shift sweeps before
# giving up; reported when we surface a convergence failure.
_SVD_ITERATION_CAP = 30


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD truncated to the leading k singular triples.

    u is m-by-k with orthonormal columns, sigma is length k and nonincreasing,
    vt is k-by-n with orthonormal rows, and u @ diag(sigma) @ vt reconstructs
    the input up to the truncation error.
    """

    u: np.ndarray
    sigma: np.ndarray
    vt: np.ndarray

    @property
    def rank(self) -> int:
        return self.sigma.shape[0]


def _fix_signs(u: np.ndarray, vt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Force the max-magnitude entry of each left singular vector nonnegative
    # so repeated runs agree despite the inherent per-column sign ambiguity.
    cols = np.arange(u.shape[1])
    anchor = np.abs(u).argmax(axis=0)
    signs = np.sign(u[anchor, cols])
    signs[signs == 0] = 1.0
    return u * signs, vt * signs[:, None]


def svd(m, k: int | None = None) -> SvdResult:
    """Thin SVD of ``m`` truncated to the leading ``k`` triples.

    Deterministic: the max-magnitude entry of each left singular vector is
    forced nonnegative. Raises SvdConvergenceError if the underlying
    factorization fails to converge.
    """
    m = check_matrix(m)
    max_rank = min(m.shape)
    if k is None:
        k = max_rank
    if not 1 <= k <= max_rank:
        raise ValueError(f"k must be in [1, {max_rank}], got {k}")
    try:
        u, sigma, vt = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise SvdConvergenceError(str(exc), _SVD_ITERATION_CAP) from None
    u, vt = _fix_signs(u[:, :k], vt[:k])
    return SvdResult(u=u, sigma=sigma[:k], vt=vt)


def random_orthogonal(n: int, block_size: int, rng) -> np.ndarray:
    """Block-diagonal orthogonal matrix built from Gaussian QR blocks.

    The result has ceil(n / block_size) diagonal blocks; each is the Q factor
    of a standard-normal square block, sign-fixed so the factorization is
    unique and the output deterministic for a given seed.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if block_size < 1:
        raise ValueError(f"block_size must be >= 1, got {block_size}")
    rng = check_random_state(rng)
    q = np.zeros((n, n))
    for start in range(0, n, block_size):
        stop = min(start + block_size, n)
        b = stop - start
        g = rng.standard_normal((b, b))
        qb, rb = np.linalg.qr(g)
        # Make Q unique by forcing positive diagonal on R.
        qb = qb * np.sign(np.diag(rb))
        q[start:stop, start:stop] = qb
    return q


def power_iteration(a, steps: int, v0=None) -> tuple[np.ndarray, float]:
    """Dominant eigenpair of a symmetric matrix by normalized power iteration.

    Returns (unit eigenvector, Rayleigh-quotient eigenvalue) after ``steps``
    multiply-and-normalize updates. ``v0`` optionally warm-starts the
    iteration; by default a deterministic constant vector is used.
    """
    a = check_symmetric(a)
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    n = a.shape[0]
    if not np.any(a):
        raise ValueError("no dominant eigenvector: input matrix is zero")
    if v0 is None:
        v = np.full(n, 1.0 / np.sqrt(n))
    else:
        v = np.asarray(v0, dtype=np.float64).copy()
        norm = np.linalg.norm(v)
        if norm == 0:
            raise ValueError("v0 must be nonzero")
        v /= norm
    for _ in range(steps):
        w = a @ v
        norm = np.linalg.norm(w)
        if norm == 0:
            raise ValueError("no dominant eigenvector: iterate fell in the null space")
        v = w / norm
    value = float(v @ a @ v)
    return v, value
