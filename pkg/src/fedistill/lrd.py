"""Local representation distillation.

A fully connected autoencoder learns a latent representation of the task
hospital's local features. Shared rows carry an extra distillation term that
pulls their latent codes toward the federated representation, so the encoder
absorbs cross-party knowledge that plain reconstruction cannot see. Only the
encoder half is used afterwards: enrichment concatenates the raw features
with each trained encoder's latent output.

Interior layers are sigmoid; the latent and output layers are linear, because
both the distillation targets (orthonormal factors, frequently negative) and
the z-scored inputs live outside (0, 1). Widths interpolate geometrically
between the input width and the latent dimension, mirrored in the decoder.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import ConfigError, TrainingDivergedError
from .frl import FedRepresentation
from .transcript import array_digest
from .validation import check_matrix

_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8

_PARAMS_JSON_VERSION = 1


@dataclass(frozen=True)
class DistillConfig:
    """Training knobs; defaults follow the reference setup."""

    theta: float = 0.001
    learning_rate: float = 0.001
    batch_size: int = 100
    epochs: int = 500
    latent_dim: int | None = None
    depth: int = 6
    seed: int = 0
    distill_norm: str = "l2"

    def __post_init__(self):
        if self.theta < 0:
            raise ConfigError(f"theta must be >= 0, got {self.theta}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.latent_dim is not None and self.latent_dim < 1:
            raise ConfigError(f"latent_dim must be >= 1, got {self.latent_dim}")
        if self.depth < 2 or self.depth % 2 != 0:
            raise ConfigError(f"depth must be an even count >= 2, got {self.depth}")
        if self.distill_norm not in ("l2", "l1"):
            raise ConfigError(f"distill_norm must be 'l2' or 'l1', got {self.distill_norm!r}")


def _layer_widths(n_input: int, latent: int, depth: int) -> list[int]:
    """Geometric interpolation n_input -> latent, mirrored for the decoder."""
    n_enc = depth // 2
    enc = [
        max(1, round(n_input ** (1 - k / n_enc) * latent ** (k / n_enc)))
        for k in range(1, n_enc + 1)
    ]
    enc[-1] = latent
    dec = enc[-2::-1] + [n_input]
    return [n_input] + enc + dec


@dataclass(frozen=True)
class EncoderParams:
    """Trained weights for the full autoencoder stack.

    The first half of the layers is the encoder (input width down to the
    latent dimension), the second half the decoder. Interior layers apply a
    sigmoid; the latent and final output layers are linear.
    """

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    activation: str = "sigmoid"

    def __post_init__(self):
        ws = tuple(np.asarray(w, dtype=np.float64) for w in self.weights)
        bs = tuple(np.asarray(b, dtype=np.float64) for b in self.biases)
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)
        if len(ws) != len(bs) or not ws:
            raise ConfigError("weights and biases must be nonempty and aligned")
        if len(ws) % 2 != 0:
            raise ConfigError(f"layer count must be even, got {len(ws)}")
        for i, (w, b) in enumerate(zip(ws, bs)):
            if w.ndim != 2 or b.ndim != 1 or b.shape[0] != w.shape[1]:
                raise ConfigError(f"layer {i} shapes do not chain: {w.shape}, {b.shape}")
            if i and ws[i - 1].shape[1] != w.shape[0]:
                raise ConfigError(
                    f"layer {i} input width {w.shape[0]} does not match "
                    f"layer {i - 1} output width {ws[i - 1].shape[1]}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ConfigError(f"layer {i} contains non-finite parameters")

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[0]

    @property
    def latent_dim(self) -> int:
        return self.weights[self.depth // 2 - 1].shape[1]

    def _linear_layers(self) -> tuple[int, int]:
        return (self.depth // 2 - 1, self.depth - 1)

    def _apply(self, x, start: int, stop: int) -> np.ndarray:
        linear = self._linear_layers()
        h = x
        for i in range(start, stop):
            z = h @ self.weights[i] + self.biases[i]
            h = z if i in linear else _sigmoid(z)
        return h

    def encode(self, x) -> np.ndarray:
        x = check_matrix(np.atleast_2d(x), "x")
        if x.shape[1] != self.n_inputs:
            raise ConfigError(f"expected {self.n_inputs} features, got {x.shape[1]}")
        return self._apply(x, 0, self.depth // 2)

    def decode(self, z) -> np.ndarray:
        z = check_matrix(np.atleast_2d(z), "z")
        if z.shape[1] != self.latent_dim:
            raise ConfigError(f"expected {self.latent_dim} latent columns, got {z.shape[1]}")
        return self._apply(z, self.depth // 2, self.depth)

    def reconstruct(self, x) -> np.ndarray:
        return self.decode(self.encode(x))

    def digest(self) -> str:
        h = hashlib.sha256()
        for w, b in zip(self.weights, self.biases):
            h.update(array_digest(w).encode())
            h.update(array_digest(b).encode())
        return h.hexdigest()

    def to_json(self) -> str:
        doc = {
            "version": _PARAMS_JSON_VERSION,
            "activation": self.activation,
            "shapes": [list(w.shape) for w in self.weights],
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "EncoderParams":
        doc = json.loads(text)
        if doc.get("version") != _PARAMS_JSON_VERSION:
            raise ConfigError(f"unsupported encoder document version {doc.get('version')!r}")
        weights = tuple(
            np.asarray(flat, dtype=np.float64).reshape(shape)
            for flat, shape in zip(doc["weights"], doc["shapes"])
        )
        biases = tuple(np.asarray(b, dtype=np.float64) for b in doc["biases"])
        return cls(weights=weights, biases=biases, activation=doc["activation"])


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _init_params(n_input: int, latent: int, depth: int, rng) -> tuple[list, list]:
    """Glorot-uniform weights, zero biases."""
    widths = _layer_widths(n_input, latent, depth)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return weights, biases


def _forward(weights, biases, x):
    depth = len(weights)
    linear = (depth // 2 - 1, depth - 1)
    acts = [x]
    h = x
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = h @ w + b
        h = z if i in linear else _sigmoid(z)
        acts.append(h)
    return acts


def _loss_and_gradient(weights, biases, x, fed, mask, theta, distill_norm):
    """Mean batch loss and its exact gradient.

    Per-sample loss: ||Dec(Enc(x)) - x||^2 / d, plus for flagged rows
    theta * mean(penalty(Enc(x) - fed)) over the latent coordinates.
    """
    depth = len(weights)
    latent_idx = depth // 2 - 1
    linear = (latent_idx, depth - 1)
    n, d = x.shape
    acts = _forward(weights, biases, x)
    xhat = acts[-1]
    resid = xhat - x
    loss = float(np.mean(np.sum(resid**2, axis=1)) / d)

    latent = acts[latent_idx + 1]
    dist_grad = np.zeros_like(latent)
    if theta > 0 and mask is not None and np.any(mask):
        r = latent.shape[1]
        diff = (latent - fed) * mask[:, None]
        if distill_norm == "l2":
            loss += float(theta * np.sum(diff**2) / (n * r))
            dist_grad = 2.0 * theta * diff / (n * r)
        else:
            loss += float(theta * np.sum(np.abs(diff)) / (n * r))
            dist_grad = theta * np.sign(diff) / (n * r)

    grad_w = [None] * depth
    grad_b = [None] * depth
    delta = 2.0 * resid / (n * d)
    for i in range(depth - 1, -1, -1):
        grad_w[i] = acts[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i == 0:
            break
        da = delta @ weights[i].T
        prev = i - 1
        if prev == latent_idx:
            da = da + dist_grad
        if prev in linear:
            delta = da
        else:
            delta = da * acts[i] * (1.0 - acts[i])
    return loss, grad_w, grad_b


def lrd_loss(params: EncoderParams, x, fed=None, theta: float = 0.001,
             distill_norm: str = "l2") -> float:
    """Loss of a single sample: reconstruction error, plus the distillation
    penalty when a federated target row is supplied."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    if x.shape[1] != params.n_inputs:
        raise ConfigError(f"expected {params.n_inputs} features, got {x.shape[1]}")
    if fed is None:
        mask = None
        fed_m = np.zeros((1, params.latent_dim))
    else:
        fed = np.asarray(fed, dtype=np.float64).reshape(1, -1)
        if fed.shape[1] != params.latent_dim:
            raise ConfigError(
                f"expected {params.latent_dim} target columns, got {fed.shape[1]}"
            )
        mask = np.array([True])
        fed_m = fed
    loss, _, _ = _loss_and_gradient(
        list(params.weights), list(params.biases), x, fed_m, mask, theta, distill_norm
    )
    return loss


@dataclass(frozen=True)
class LrdGradient:
    """Gradient of the mean batch loss, aligned with EncoderParams layers."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    loss: float


def lrd_gradient(params: EncoderParams, batch, fed_rows=None, theta: float = 0.001,
                 distill_norm: str = "l2") -> LrdGradient:
    """Analytic gradient of the mean loss over a batch.

    ``fed_rows`` is a sequence aligned with the batch; entries are a latent
    target row for shared samples and None otherwise.
    """
    batch = check_matrix(batch, "batch")
    n = batch.shape[0]
    mask = np.zeros(n, dtype=bool)
    fed_m = np.zeros((n, params.latent_dim))
    if fed_rows is not None:
        fed_rows = list(fed_rows)
        if len(fed_rows) != n:
            raise ConfigError(f"{len(fed_rows)} target rows for {n} batch rows")
        for i, row in enumerate(fed_rows):
            if row is None:
                continue
            row = np.asarray(row, dtype=np.float64)
            if row.shape != (params.latent_dim,):
                raise ConfigError(
                    f"target row {i} has shape {row.shape}, "
                    f"expected ({params.latent_dim},)"
                )
            mask[i] = True
            fed_m[i] = row
    loss, gw, gb = _loss_and_gradient(
        list(params.weights), list(params.biases), batch, fed_m, mask, theta, distill_norm
    )
    return LrdGradient(weights=tuple(gw), biases=tuple(gb), loss=loss)


def _align_targets(task_view, shared_mask, fed):
    """Dense per-row target matrix and mask from the flagged rows and the
    federated representation, aligned by sample id when both carry ids."""
    if hasattr(task_view, "features"):
        x = task_view.features
        row_ids = task_view.ids
    else:
        x = check_matrix(task_view, "task_view")
        row_ids = None
    mask = np.asarray(shared_mask, dtype=bool)
    if mask.shape != (x.shape[0],):
        raise ConfigError(
            f"shared_mask covers {mask.shape}, expected ({x.shape[0]},)"
        )
    if fed is None:
        return x, mask, None
    if isinstance(fed, FedRepresentation):
        fed_ids, fed_matrix = fed.ids, fed.matrix
    else:
        fed_ids, fed_matrix = None, check_matrix(fed, "fed")
    if int(mask.sum()) != fed_matrix.shape[0]:
        raise ConfigError(
            f"{int(mask.sum())} rows flagged shared but {fed_matrix.shape[0]} "
            "target rows supplied"
        )
    targets = np.zeros((x.shape[0], fed_matrix.shape[1]))
    if row_ids is not None and fed_ids is not None:
        flagged = [row_ids[i] for i in np.flatnonzero(mask)]
        if set(flagged) != set(fed_ids):
            raise ConfigError("flagged shared rows do not match the target ids")
        by_id = {sid: fed_matrix[j] for j, sid in enumerate(fed_ids)}
        for i in np.flatnonzero(mask):
            targets[i] = by_id[row_ids[i]]
    else:
        targets[mask] = fed_matrix
    return x, mask, targets


def train_distilled_encoder(task_view, shared_mask, fed, cfg: DistillConfig):
    """Adam-train the autoencoder on all task rows with the distillation term
    active on flagged shared rows. Returns (EncoderParams, loss curve).

    Deterministic given cfg.seed; aborts with the failing epoch and batch if
    the loss stops being finite.
    """
    x, mask, targets = _align_targets(task_view, shared_mask, fed)
    latent = cfg.latent_dim
    if latent is None:
        if targets is None:
            raise ConfigError("latent_dim is required when no targets are given")
        latent = targets.shape[1]
    if targets is not None and targets.shape[1] != latent:
        raise ConfigError(
            f"latent_dim={latent} but targets have {targets.shape[1]} columns"
        )
    if targets is None:
        targets = np.zeros((x.shape[0], latent))

    rng = np.random.default_rng(cfg.seed)
    weights, biases = _init_params(x.shape[1], latent, cfg.depth, rng)
    m_w = [np.zeros_like(w) for w in weights]
    v_w = [np.zeros_like(w) for w in weights]
    m_b = [np.zeros_like(b) for b in biases]
    v_b = [np.zeros_like(b) for b in biases]
    step = 0
    n = x.shape[0]
    curve = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for b0 in range(0, n, cfg.batch_size):
            idx = order[b0 : b0 + cfg.batch_size]
            loss, gw, gb = _loss_and_gradient(
                weights, biases, x[idx], targets[idx], mask[idx],
                cfg.theta, cfg.distill_norm,
            )
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, b0 // cfg.batch_size)
            epoch_losses.append(loss)
            step += 1
            c1 = 1.0 - _ADAM_BETA1**step
            c2 = 1.0 - _ADAM_BETA2**step
            for params, grads, ms, vs in (
                (weights, gw, m_w, v_w),
                (biases, gb, m_b, v_b),
            ):
                for j, g in enumerate(grads):
                    ms[j] = _ADAM_BETA1 * ms[j] + (1 - _ADAM_BETA1) * g
                    vs[j] = _ADAM_BETA2 * vs[j] + (1 - _ADAM_BETA2) * g**2
                    params[j] = params[j] - cfg.learning_rate * (ms[j] / c1) / (
                        np.sqrt(vs[j] / c2) + _ADAM_EPS
                    )
        curve.append(float(np.mean(epoch_losses)))
    params = EncoderParams(weights=tuple(weights), biases=tuple(biases))
    return params, curve


def loss_curve_to_csv(curve, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss"])
        for i, v in enumerate(curve):
            writer.writerow([i, repr(float(v))])


@dataclass(frozen=True)
class EnrichedRepresentation:
    """Raw local features concatenated with each encoder's latent output."""

    ids: tuple
    matrix: np.ndarray
    provenance: tuple[str, ...]

    def __post_init__(self):
        mat = check_matrix(self.matrix, "matrix", min_cols=1)
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "provenance", tuple(self.provenance))
        if len(self.ids) != mat.shape[0]:
            raise ConfigError(f"{len(self.ids)} ids for {mat.shape[0]} rows")
        if len(self.provenance) != mat.shape[1]:
            raise ConfigError(
                f"{len(self.provenance)} provenance labels for {mat.shape[1]} columns"
            )


def enrich(encoders, x_rows, ids=None) -> EnrichedRepresentation:
    """Concatenate raw features with each encoder's latent codes, in order.

    With no encoders the output is the raw features unchanged (the purely
    local baseline).
    """
    x = check_matrix(x_rows, "x_rows")
    if ids is None:
        ids = range(x.shape[0])
    blocks = [x]
    provenance = [f"raw:{j:02d}" for j in range(x.shape[1])]
    for k, enc in enumerate(encoders):
        if enc.n_inputs != x.shape[1]:
            raise ConfigError(
                f"encoder {k} expects {enc.n_inputs} features, got {x.shape[1]}"
            )
        z = enc.encode(x)
        blocks.append(z)
        provenance += [f"encoder{k}:{j:02d}" for j in range(z.shape[1])]
    return EnrichedRepresentation(
        ids=tuple(ids), matrix=np.hstack(blocks), provenance=tuple(provenance)
    )


class DistilledAutoencoder(BaseEstimator, TransformerMixin):
    """Estimator wrapper around the distillation trainer.

    fit(X, distill_targets=..., distill_mask=...) trains on all rows of X,
    applying the distillation term to the rows flagged in ``distill_mask``
    (aligned with the rows of ``distill_targets``). transform(X) returns the
    latent codes.
    """

    def __init__(self, theta=0.001, learning_rate=0.001, batch_size=100,
                 epochs=500, latent_dim=None, depth=6, seed=0, distill_norm="l2"):
        self.theta = theta
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.latent_dim = latent_dim
        self.depth = depth
        self.seed = seed
        self.distill_norm = distill_norm

    def _config(self) -> DistillConfig:
        return DistillConfig(
            theta=self.theta,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            latent_dim=self.latent_dim,
            depth=self.depth,
            seed=self.seed,
            distill_norm=self.distill_norm,
        )

    def fit(self, X, y=None, distill_targets=None, distill_mask=None):
        X = check_matrix(X, "X")
        if distill_targets is None:
            mask = np.zeros(X.shape[0], dtype=bool)
            fed = None
        else:
            distill_targets = check_matrix(distill_targets, "distill_targets")
            if distill_mask is None:
                if distill_targets.shape[0] != X.shape[0]:
                    raise ConfigError(
                        "distill_mask is required when targets do not cover every row"
                    )
                mask = np.ones(X.shape[0], dtype=bool)
            else:
                mask = np.asarray(distill_mask, dtype=bool)
            fed = distill_targets
        self.params_, self.loss_curve_ = train_distilled_encoder(
            X, mask, fed, self._config()
        )
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        if not hasattr(self, "params_"):
            raise ConfigError("transform called before fit")
        return self.params_.encode(check_matrix(X, "X"))
