"""Federated representation learning over shared samples.

Two protocols produce a latent representation of the samples shared between
the task hospital and a data hospital, without either party revealing raw
features to the server:

* masked federated SVD: a trusted key generator hands each party orthogonal
  masking matrices; parties upload masked blocks, the server sums them and
  factorizes, and only the left singular vectors return to the task party,
  which unmasks them. Because the masks are orthogonal, the server sees the
  true singular values but none of the raw data.
* federated power-iteration PCA: each party uploads its local dominant
  eigenpair per communication round; the server aggregates eigenvectors with
  eigenvalue-proportional weights and broadcasts the result, which warm-starts
  the next round; the task party reconstructs a rank-1 representation from
  the final aggregate.

All roles (key generator, task, data parties, server) run in-process as a
sequential deterministic scheduler; every cross-party message is appended to
a Transcript.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, ProtocolError
from .linalg import power_iteration, random_orthogonal, svd
from .transcript import Transcript, array_digest
from .validation import check_matrix, check_random_state, check_vector

ROLE_KEYGEN = "keygen"
ROLE_TASK = "task"
ROLE_SERVER = "server"

# Payload kinds that may legitimately appear on cross-party edges.
KIND_MASKING_KEYS = "masking_keys"
KIND_MASKED_MATRIX = "masked_matrix"
KIND_SVD_RESULT = "svd_result"
KIND_EIGEN_PAIR = "eigen_pair"
KIND_AGGREGATED_VECTOR = "aggregated_vector"


class DegenerateSpectrumWarning(UserWarning):
    """Truncation boundary falls inside a (near-)repeated singular value."""


class DegenerateAggregationWarning(UserWarning):
    """Weighted eigenvector sum (nearly) cancelled to zero."""


@dataclass(frozen=True)
class FrlConfig:
    """Protocol selection and its knobs; defaults follow the reference setup."""

    method: str = "fedsvd"
    rank: int | None = None
    block_size: int = 100
    iter_num: int = 100
    period_num: int = 10
    warm_start: bool = True
    n_parties: int | None = None
    scale_by_singular_values: bool = False

    def __post_init__(self):
        if self.method not in ("fedsvd", "vfedpca"):
            raise ConfigError(f"method must be 'fedsvd' or 'vfedpca', got {self.method!r}")
        if self.rank is not None and self.rank < 1:
            raise ConfigError(f"rank must be >= 1, got {self.rank}")
        if self.block_size < 1:
            raise ConfigError(f"block_size must be >= 1, got {self.block_size}")
        if self.iter_num < 1:
            raise ConfigError(f"iter_num must be >= 1, got {self.iter_num}")
        if self.period_num < 1:
            raise ConfigError(f"period_num must be >= 1, got {self.period_num}")
        if self.n_parties is not None and self.n_parties < 1:
            raise ConfigError(f"n_parties must be >= 1, got {self.n_parties}")


@dataclass(frozen=True)
class MaskingKeys:
    """Orthogonal masks: one shared row mask A, one column-mask slice per party.

    Stacking the per-party slices vertically yields a single orthogonal
    matrix over the combined feature space.
    """

    a: np.ndarray
    b_parts: tuple[np.ndarray, ...]

    def __post_init__(self):
        a = check_matrix(self.a, "a")
        if a.shape[0] != a.shape[1]:
            raise ConfigError(f"a must be square, got {a.shape[0]}x{a.shape[1]}")
        parts = tuple(check_matrix(b, f"b_parts[{i}]") for i, b in enumerate(self.b_parts))
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b_parts", parts)
        total = sum(b.shape[0] for b in parts)
        for i, b in enumerate(parts):
            if b.shape[1] != total:
                raise ConfigError(
                    f"b_parts[{i}] has width {b.shape[1]}, expected {total}"
                )

    @property
    def total_features(self) -> int:
        return sum(b.shape[0] for b in self.b_parts)


@dataclass(frozen=True)
class FedRepresentation:
    """Latent representation of the shared samples, row-aligned to ids."""

    ids: tuple
    matrix: np.ndarray
    r: int
    method: str
    singular_values: np.ndarray | None = None

    def __post_init__(self):
        mat = check_matrix(self.matrix, "matrix")
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "ids", tuple(self.ids))
        if len(self.ids) != mat.shape[0]:
            raise ConfigError(
                f"{len(self.ids)} ids for {mat.shape[0]} representation rows"
            )
        if self.r != mat.shape[1]:
            raise ConfigError(f"r={self.r} but matrix has {mat.shape[1]} columns")
        if self.r > mat.shape[0]:
            raise ConfigError(
                f"rank {self.r} exceeds shared-sample count {mat.shape[0]}"
            )
        if self.method not in ("fedsvd", "vfedpca"):
            raise ConfigError(f"unknown method {self.method!r}")

    def digest(self) -> str:
        return array_digest(self.matrix)

    def to_json(self) -> str:
        doc = {
            "method": self.method,
            "r": self.r,
            "shape": list(self.matrix.shape),
            "digest": self.digest(),
            "ids": [str(i) for i in self.ids],
        }
        if self.singular_values is not None:
            doc["singular_values"] = [float(s) for s in self.singular_values]
        return json.dumps(doc, indent=2)

    def matrix_to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id"] + [f"z{j:02d}" for j in range(self.r)])
            for sid, row in zip(self.ids, self.matrix):
                writer.writerow([sid] + [repr(float(v)) for v in row])


# ------------------------------------------------------------------ FedSVD


def fedsvd_keygen(n_shared: int, feature_sizes, block_size: int, rng) -> MaskingKeys:
    """Trusted key generation: orthogonal A (shared-row space) and B
    (combined feature space), B handed out partitioned row-wise per party."""
    if n_shared < 1:
        raise ConfigError(f"n_shared must be >= 1, got {n_shared}")
    sizes = [int(s) for s in feature_sizes]
    if not sizes or any(s < 1 for s in sizes):
        raise ConfigError(f"feature_sizes must be nonempty positive, got {sizes}")
    rng = check_random_state(rng)
    a = random_orthogonal(n_shared, block_size, rng)
    total = sum(sizes)
    b = random_orthogonal(total, block_size, rng)
    parts = []
    offset = 0
    for s in sizes:
        parts.append(b[offset : offset + s, :])
        offset += s
    return MaskingKeys(a=a, b_parts=tuple(parts))


def fedsvd_mask(s_k, a, b_k) -> np.ndarray:
    """One party's upload: its shared block masked on both sides, A S_k B_k."""
    s_k = check_matrix(s_k, "s_k")
    a = check_matrix(a, "a")
    b_k = check_matrix(b_k, "b_k")
    if a.shape[1] != s_k.shape[0]:
        raise ConfigError(
            f"a is {a.shape[0]}x{a.shape[1]} but s_k has {s_k.shape[0]} rows"
        )
    if s_k.shape[1] != b_k.shape[0]:
        raise ConfigError(
            f"s_k has {s_k.shape[1]} columns but b_k has {b_k.shape[0]} rows"
        )
    return a @ s_k @ b_k


def fedsvd_run(
    task_shared,
    data_shared,
    cfg: FrlConfig,
    rng,
    transcript: Transcript,
    keys: MaskingKeys | None = None,
    ids=None,
    party_labels=None,
) -> FedRepresentation:
    """Full masked-SVD round between the task party and the data parties.

    The server receives one masked block per party and sums them: with
    B partitioned row-wise, A [S_t | S_d...] B = sum_k A S_k B_k, so the sum
    reconstructs the masked concatenation and shares its singular values with
    the unmasked one. Only the truncated left factor returns to the task
    party, which unmasks it with A^T. ``keys`` may be injected for testing;
    by default the key generator role produces them from ``rng``.
    """
    task_shared = check_matrix(task_shared, "task_shared")
    blocks = [task_shared] + [check_matrix(d, f"data_shared[{i}]") for i, d in enumerate(data_shared)]
    n_shared = task_shared.shape[0]
    for i, b in enumerate(blocks[1:]):
        if b.shape[0] != n_shared:
            raise ConfigError(
                f"data_shared[{i}] has {b.shape[0]} rows, expected {n_shared}"
            )
    if cfg.n_parties is not None and len(data_shared) != cfg.n_parties:
        raise ConfigError(
            f"config expects {cfg.n_parties} data parties, got {len(data_shared)}"
        )
    sizes = [b.shape[1] for b in blocks]
    total = sum(sizes)
    r = cfg.rank if cfg.rank is not None else task_shared.shape[1]
    if not 1 <= r <= min(n_shared, total):
        raise ConfigError(
            f"rank must be in [1, {min(n_shared, total)}], got {r}"
        )
    if party_labels is None:
        party_labels = [f"data:{i}" for i in range(len(data_shared))]
    labels = [ROLE_TASK] + list(party_labels)

    if keys is None:
        keys = fedsvd_keygen(n_shared, sizes, cfg.block_size, rng)
    elif keys.a.shape[0] != n_shared or keys.total_features != total:
        raise ConfigError(
            f"injected keys cover {keys.a.shape[0]} rows x {keys.total_features} "
            f"features, expected {n_shared} x {total}"
        )
    for label, b_k in zip(labels, keys.b_parts):
        transcript.record(ROLE_KEYGEN, label, KIND_MASKING_KEYS, (keys.a, b_k))

    masked_sum = np.zeros((n_shared, total))
    for label, s_k, b_k in zip(labels, blocks, keys.b_parts):
        masked = fedsvd_mask(s_k, keys.a, b_k)
        transcript.record(label, ROLE_SERVER, KIND_MASKED_MATRIX, masked)
        masked_sum += masked

    full = svd(masked_sum)
    if r < full.sigma.shape[0] and full.sigma[r - 1] - full.sigma[r] <= 1e-10:
        warnings.warn(
            f"singular values {r} and {r + 1} agree within 1e-10; the truncated "
            "subspace is rotation-ambiguous",
            DegenerateSpectrumWarning,
            stacklevel=2,
        )
    u_hat = full.u[:, :r]
    sigma = full.sigma[:r].copy()
    transcript.record(ROLE_SERVER, ROLE_TASK, KIND_SVD_RESULT, u_hat)

    x_fed = keys.a.T @ u_hat
    if cfg.scale_by_singular_values:
        x_fed = x_fed * sigma
    if ids is None:
        ids = range(n_shared)
    return FedRepresentation(
        ids=tuple(ids), matrix=x_fed, r=r, method="fedsvd", singular_values=sigma
    )


# ----------------------------------------------------------------- VFedPCA


def vfedpca_local(s_i, iter_num: int, v0=None) -> tuple[np.ndarray, float]:
    """One party's local step: dominant eigenpair of (1/|X_i|) S_i^T S_i."""
    s_i = check_matrix(s_i, "s_i")
    if not np.any(s_i):
        raise ValueError("no dominant eigenvector: party block is zero")
    gram = (s_i.T @ s_i) / s_i.shape[1]
    return power_iteration(gram, iter_num, v0=v0)


def vfedpca_aggregate(pairs) -> np.ndarray:
    """Server step: eigenvalue-weighted sum of the uploaded eigenvectors."""
    pairs = list(pairs)
    if not pairs:
        raise ConfigError("at least one (eigenvector, eigenvalue) pair required")
    vecs = [check_vector(a, f"pairs[{i}].vector") for i, (a, _) in enumerate(pairs)]
    alphas = np.array([float(alpha) for _, alpha in pairs])
    if np.any(alphas < 0):
        raise ConfigError("eigenvalues must be nonnegative")
    total = alphas.sum()
    if total == 0:
        raise ConfigError("eigenvalues must not all be zero")
    dim = vecs[0].shape[0]
    for i, v in enumerate(vecs):
        if v.shape[0] != dim:
            raise ConfigError(
                f"pairs[{i}] has dimension {v.shape[0]}, expected {dim}"
            )
    weights = alphas / total
    u = np.zeros(dim)
    for w, v in zip(weights, vecs):
        u += w * v
    if np.linalg.norm(u) < 1e-12 * max(1.0, np.max(np.abs(np.array(vecs)))):
        warnings.warn(
            "weighted eigenvector sum cancelled to (near) zero",
            DegenerateAggregationWarning,
            stacklevel=2,
        )
    return u


def vfedpca_reconstruct(s_t, u, ids=None) -> FedRepresentation:
    """Task-party step: rank-1 representation S_t M M^T / ||M M^T||_F.

    The aggregated direction u lives in the task party's feature space, so
    the only shape-consistent reading of M = S_t^T u routes u through the
    sample space: M = S_t^T (S_t u), an |X_t|-vector. When u is an
    eigenvector of the local Gram matrix this coincides (up to the scale the
    normalization removes) with projecting S_t straight onto u. The result
    is scale-invariant in u and has rank 1.
    """
    s_t = check_matrix(s_t, "s_t")
    u = check_vector(u, "u")
    if u.shape[0] != s_t.shape[1]:
        raise ConfigError(
            f"u has dimension {u.shape[0]}, expected {s_t.shape[1]}"
        )
    m = s_t.T @ (s_t @ u)
    outer = np.outer(m, m)
    norm = np.linalg.norm(outer)
    if norm == 0:
        raise ProtocolError("representation collapsed: S_t^T u is zero")
    x_fed = s_t @ (outer / norm)
    if ids is None:
        ids = range(s_t.shape[0])
    return FedRepresentation(
        ids=tuple(ids), matrix=x_fed, r=s_t.shape[1], method="vfedpca"
    )


def vfedpca_run(
    task_shared,
    data_shared,
    cfg: FrlConfig,
    transcript: Transcript,
    ids=None,
    party_labels=None,
) -> FedRepresentation:
    """Full multi-round power-iteration protocol over one shared-sample set.

    Per round every party (task included) uploads its local eigenpair and the
    server broadcasts the weighted aggregate, which warm-starts the next
    round. When all party blocks have the same width the eigenvectors are
    aggregated in that common frame; otherwise each is padded into the
    combined feature frame at its party's column offsets, and the task party
    slices the aggregate back to its own coordinates for reconstruction.
    """
    task_shared = check_matrix(task_shared, "task_shared")
    blocks = [task_shared] + [
        check_matrix(d, f"data_shared[{i}]") for i, d in enumerate(data_shared)
    ]
    n_shared = task_shared.shape[0]
    for i, b in enumerate(blocks[1:]):
        if b.shape[0] != n_shared:
            raise ConfigError(
                f"data_shared[{i}] has {b.shape[0]} rows, expected {n_shared}"
            )
    if cfg.n_parties is not None and len(data_shared) != cfg.n_parties:
        raise ConfigError(
            f"config expects {cfg.n_parties} data parties, got {len(data_shared)}"
        )
    if party_labels is None:
        party_labels = [f"data:{i}" for i in range(len(data_shared))]
    labels = [ROLE_TASK] + list(party_labels)
    widths = [b.shape[1] for b in blocks]
    same_width = len(set(widths)) == 1
    offsets = np.concatenate([[0], np.cumsum(widths)])
    frame = widths[0] if same_width else int(offsets[-1])

    u = None
    for _ in range(cfg.period_num):
        pairs = []
        for k, (label, block) in enumerate(zip(labels, blocks)):
            v0 = None
            if cfg.warm_start and u is not None:
                v0 = u if same_width else u[offsets[k] : offsets[k] + widths[k]]
                if np.linalg.norm(v0) == 0:
                    v0 = None
            a_k, alpha_k = vfedpca_local(block, cfg.iter_num, v0=v0)
            transcript.record(label, ROLE_SERVER, KIND_EIGEN_PAIR, (a_k, alpha_k))
            if same_width:
                pairs.append((a_k, alpha_k))
            else:
                padded = np.zeros(frame)
                padded[offsets[k] : offsets[k] + widths[k]] = a_k
                pairs.append((padded, alpha_k))
        u = vfedpca_aggregate(pairs)
        for label in labels:
            transcript.record(ROLE_SERVER, label, KIND_AGGREGATED_VECTOR, u)

    u_task = u if same_width else u[: widths[0]]
    return vfedpca_reconstruct(task_shared, u_task, ids=ids)


def run_frl(
    task_shared,
    data_shared,
    cfg: FrlConfig,
    rng,
    transcript: Transcript,
    ids=None,
    party_labels=None,
) -> FedRepresentation:
    """Dispatch to the configured protocol."""
    if cfg.method == "fedsvd":
        return fedsvd_run(
            task_shared, data_shared, cfg, rng, transcript,
            ids=ids, party_labels=party_labels,
        )
    return vfedpca_run(
        task_shared, data_shared, cfg, transcript,
        ids=ids, party_labels=party_labels,
    )
