"""Downstream classifiers trained on raw or enriched representations.

Three model families cover the evaluation: a bagged random forest (Gini
impurity, sqrt-of-width feature sampling, bootstrap rows), a standardized
Euclidean k-nearest-neighbors, and a small relu multilayer perceptron with
softmax cross-entropy and L2 penalty. All ties anywhere break toward the
smallest class id so repeated runs agree exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .exceptions import ConfigError
from .validation import check_labels, check_matrix

_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8


def accuracy(pred, truth) -> float:
    """Fraction of exact label matches."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise ConfigError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    if pred.shape[0] == 0:
        raise ConfigError("accuracy of empty predictions is undefined")
    return float(np.mean(pred == truth))


def _check_training_inputs(x, y):
    x = check_matrix(x, "x")
    y = check_labels(y, x.shape[0], "y")
    classes = np.unique(y)
    if classes.shape[0] < 2:
        raise ConfigError("training labels contain a single class")
    return x, y, classes


# ------------------------------------------------------------ random forest


def _best_split(x, y_idx, n_classes, candidates):
    """Lowest weighted-Gini axis split among the candidate features."""
    m = x.shape[0]
    parent_counts = np.bincount(y_idx, minlength=n_classes).astype(float)
    parent_gini = 1.0 - np.sum((parent_counts / m) ** 2)
    best = None
    for f in candidates:
        col = x[:, f]
        order = np.argsort(col, kind="stable")
        sv = col[order]
        if sv[0] == sv[-1]:
            continue
        onehot = np.zeros((m, n_classes))
        onehot[np.arange(m), y_idx[order]] = 1.0
        cum = np.cumsum(onehot, axis=0)
        bounds = np.flatnonzero(sv[:-1] < sv[1:])
        n_left = (bounds + 1).astype(float)
        n_right = m - n_left
        c_left = cum[bounds]
        c_right = parent_counts - c_left
        gini_left = 1.0 - np.sum((c_left / n_left[:, None]) ** 2, axis=1)
        gini_right = 1.0 - np.sum((c_right / n_right[:, None]) ** 2, axis=1)
        weighted = (n_left * gini_left + n_right * gini_right) / m
        j = int(np.argmin(weighted))
        if weighted[j] < parent_gini - 1e-12 and (
            best is None or weighted[j] < best[0] - 1e-15
        ):
            thr = 0.5 * (sv[bounds[j]] + sv[bounds[j] + 1])
            best = (float(weighted[j]), int(f), float(thr))
    return best


def _grow_tree(x, y_idx, n_classes, max_depth, rng, depth=0):
    counts = np.bincount(y_idx, minlength=n_classes)
    leaf = {"class": int(np.argmax(counts))}
    if (
        counts.max() == y_idx.shape[0]
        or (max_depth is not None and depth >= max_depth)
        or x.shape[0] < 2
    ):
        return leaf
    d = x.shape[1]
    k = min(d, math.ceil(math.sqrt(d)))
    candidates = np.sort(rng.choice(d, size=k, replace=False))
    split = _best_split(x, y_idx, n_classes, candidates)
    if split is None:
        return leaf
    _, f, thr = split
    left = x[:, f] <= thr
    return {
        "feature": f,
        "threshold": thr,
        "left": _grow_tree(x[left], y_idx[left], n_classes, max_depth, rng, depth + 1),
        "right": _grow_tree(x[~left], y_idx[~left], n_classes, max_depth, rng, depth + 1),
    }


def _tree_predict(node, row):
    while "class" not in node:
        node = node["left"] if row[node["feature"]] <= node["threshold"] else node["right"]
    return node["class"]


class RandomForest(BaseEstimator, ClassifierMixin):
    """Bagged CART forest; per-tree RNG streams derive from (seed, tree index)."""

    def __init__(self, n_estimators=200, max_depth=10, seed=0):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.seed = seed

    def fit(self, X, y):
        if self.n_estimators < 1:
            raise ConfigError(f"n_estimators must be >= 1, got {self.n_estimators}")
        x, y, classes = _check_training_inputs(X, y)
        y_idx = np.searchsorted(classes, y)
        self.classes_ = classes
        self.n_features_in_ = x.shape[1]
        seeds = np.random.SeedSequence(self.seed).spawn(self.n_estimators)
        self.trees_ = []
        n = x.shape[0]
        for ss in seeds:
            rng = np.random.default_rng(ss)
            rows = rng.integers(0, n, size=n)
            self.trees_.append(
                _grow_tree(x[rows], y_idx[rows], classes.shape[0], self.max_depth, rng)
            )
        return self

    def predict(self, X):
        x = self._check_predict_input(X)
        n_classes = self.classes_.shape[0]
        votes = np.zeros((x.shape[0], n_classes), dtype=np.int64)
        for tree in self.trees_:
            for i in range(x.shape[0]):
                votes[i, _tree_predict(tree, x[i])] += 1
        return self.classes_[np.argmax(votes, axis=1)]

    def _check_predict_input(self, X):
        if not hasattr(self, "trees_"):
            raise ConfigError("predict called before fit")
        x = check_matrix(X, "X")
        if x.shape[1] != self.n_features_in_:
            raise ConfigError(
                f"expected {self.n_features_in_} features, got {x.shape[1]}"
            )
        return x

    def to_json(self) -> str:
        return json.dumps(
            {
                "kind": "rf",
                "classes": self.classes_.tolist(),
                "n_features": self.n_features_in_,
                "trees": self.trees_,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "RandomForest":
        doc = json.loads(text)
        if doc.get("kind") != "rf":
            raise ConfigError(f"not a forest document: kind={doc.get('kind')!r}")
        model = cls(n_estimators=len(doc["trees"]))
        model.classes_ = np.asarray(doc["classes"], dtype=np.int64)
        model.n_features_in_ = int(doc["n_features"])
        model.trees_ = doc["trees"]
        return model


# -------------------------------------------------------- nearest neighbors


class KNearestNeighbors(BaseEstimator, ClassifierMixin):
    """Euclidean vote over a standardized reference set."""

    def __init__(self, n_neighbors=8, standardize=True):
        self.n_neighbors = n_neighbors
        self.standardize = standardize

    def fit(self, X, y):
        if self.n_neighbors < 1:
            raise ConfigError(f"n_neighbors must be >= 1, got {self.n_neighbors}")
        x, y, classes = _check_training_inputs(X, y)
        if self.n_neighbors > x.shape[0]:
            raise ConfigError(
                f"n_neighbors={self.n_neighbors} exceeds {x.shape[0]} reference rows"
            )
        if self.standardize:
            self.mean_ = x.mean(axis=0)
            std = x.std(axis=0)
            std[std == 0] = 1.0
            self.scale_ = std
        else:
            self.mean_ = np.zeros(x.shape[1])
            self.scale_ = np.ones(x.shape[1])
        self.reference_ = (x - self.mean_) / self.scale_
        self.labels_ = y
        self.classes_ = classes
        self.n_features_in_ = x.shape[1]
        return self

    def predict(self, X):
        if not hasattr(self, "reference_"):
            raise ConfigError("predict called before fit")
        x = check_matrix(X, "X")
        if x.shape[1] != self.n_features_in_:
            raise ConfigError(
                f"expected {self.n_features_in_} features, got {x.shape[1]}"
            )
        q = (x - self.mean_) / self.scale_
        d2 = (
            np.sum(q**2, axis=1)[:, None]
            - 2.0 * q @ self.reference_.T
            + np.sum(self.reference_**2, axis=1)[None, :]
        )
        # Stable sort keeps equidistant neighbors in reference order.
        nearest = np.argsort(d2, axis=1, kind="stable")[:, : self.n_neighbors]
        out = np.empty(x.shape[0], dtype=np.int64)
        for i in range(x.shape[0]):
            votes = np.bincount(
                np.searchsorted(self.classes_, self.labels_[nearest[i]]),
                minlength=self.classes_.shape[0],
            )
            out[i] = self.classes_[np.argmax(votes)]
        return out

    def to_json(self) -> str:
        return json.dumps(
            {
                "kind": "knn",
                "n_neighbors": self.n_neighbors,
                "classes": self.classes_.tolist(),
                "mean": self.mean_.tolist(),
                "scale": self.scale_.tolist(),
                "reference": self.reference_.tolist(),
                "labels": self.labels_.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "KNearestNeighbors":
        doc = json.loads(text)
        if doc.get("kind") != "knn":
            raise ConfigError(f"not a neighbors document: kind={doc.get('kind')!r}")
        model = cls(n_neighbors=int(doc["n_neighbors"]))
        model.classes_ = np.asarray(doc["classes"], dtype=np.int64)
        model.mean_ = np.asarray(doc["mean"])
        model.scale_ = np.asarray(doc["scale"])
        model.reference_ = np.asarray(doc["reference"])
        model.labels_ = np.asarray(doc["labels"], dtype=np.int64)
        model.n_features_in_ = model.reference_.shape[1]
        return model


# ------------------------------------------------------------------- M L P


def _relu(z):
    return np.maximum(z, 0.0)


def _log_softmax(z):
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))


class MultilayerPerceptron(BaseEstimator, ClassifierMixin):
    """Relu network with softmax cross-entropy, L2 penalty, full-batch Adam."""

    def __init__(self, hidden=(100, 100, 50), l2_alpha=0.01, max_iter=400,
                 learning_rate=0.001, seed=0, standardize=True):
        self.hidden = hidden
        self.l2_alpha = l2_alpha
        self.max_iter = max_iter
        self.learning_rate = learning_rate
        self.seed = seed
        self.standardize = standardize

    def fit(self, X, y):
        if self.max_iter < 1:
            raise ConfigError(f"max_iter must be >= 1, got {self.max_iter}")
        if any(h < 1 for h in self.hidden):
            raise ConfigError(f"hidden widths must be >= 1, got {self.hidden}")
        x, y, classes = _check_training_inputs(X, y)
        if self.standardize:
            self.mean_ = x.mean(axis=0)
            std = x.std(axis=0)
            std[std == 0] = 1.0
            self.scale_ = std
        else:
            self.mean_ = np.zeros(x.shape[1])
            self.scale_ = np.ones(x.shape[1])
        x = (x - self.mean_) / self.scale_
        y_idx = np.searchsorted(classes, y)
        n, d = x.shape
        widths = [d, *self.hidden, classes.shape[0]]
        rng = np.random.default_rng(self.seed)
        weights, biases = [], []
        for a, b in zip(widths[:-1], widths[1:]):
            limit = np.sqrt(6.0 / (a + b))
            weights.append(rng.uniform(-limit, limit, size=(a, b)))
            biases.append(np.zeros(b))

        onehot = np.zeros((n, classes.shape[0]))
        onehot[np.arange(n), y_idx] = 1.0
        m_w = [np.zeros_like(w) for w in weights]
        v_w = [np.zeros_like(w) for w in weights]
        m_b = [np.zeros_like(b) for b in biases]
        v_b = [np.zeros_like(b) for b in biases]
        self.loss_curve_ = []
        for step in range(1, self.max_iter + 1):
            acts = [x]
            h = x
            for i, (w, b) in enumerate(zip(weights, biases)):
                z = h @ w + b
                h = z if i == len(weights) - 1 else _relu(z)
                acts.append(h)
            logp = _log_softmax(acts[-1])
            ce = -float(np.mean(np.sum(onehot * logp, axis=1)))
            penalty = (self.l2_alpha / (2.0 * n)) * sum(
                float(np.sum(w**2)) for w in weights
            )
            self.loss_curve_.append(ce + penalty)

            delta = (np.exp(logp) - onehot) / n
            grad_w = [None] * len(weights)
            grad_b = [None] * len(weights)
            for i in range(len(weights) - 1, -1, -1):
                grad_w[i] = acts[i].T @ delta + (self.l2_alpha / n) * weights[i]
                grad_b[i] = delta.sum(axis=0)
                if i == 0:
                    break
                delta = (delta @ weights[i].T) * (acts[i] > 0)

            c1 = 1.0 - _ADAM_BETA1**step
            c2 = 1.0 - _ADAM_BETA2**step
            for params, grads, ms, vs in (
                (weights, grad_w, m_w, v_w),
                (biases, grad_b, m_b, v_b),
            ):
                for j, g in enumerate(grads):
                    ms[j] = _ADAM_BETA1 * ms[j] + (1 - _ADAM_BETA1) * g
                    vs[j] = _ADAM_BETA2 * vs[j] + (1 - _ADAM_BETA2) * g**2
                    params[j] = params[j] - self.learning_rate * (ms[j] / c1) / (
                        np.sqrt(vs[j] / c2) + _ADAM_EPS
                    )
        self.weights_ = [w.copy() for w in weights]
        self.biases_ = [b.copy() for b in biases]
        self.classes_ = classes
        self.n_features_in_ = d
        return self

    def decision_function(self, X):
        if not hasattr(self, "weights_"):
            raise ConfigError("predict called before fit")
        x = check_matrix(X, "X")
        if x.shape[1] != self.n_features_in_:
            raise ConfigError(
                f"expected {self.n_features_in_} features, got {x.shape[1]}"
            )
        h = (x - self.mean_) / self.scale_
        for i, (w, b) in enumerate(zip(self.weights_, self.biases_)):
            z = h @ w + b
            h = z if i == len(self.weights_) - 1 else _relu(z)
        return h

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]

    def to_json(self) -> str:
        return json.dumps(
            {
                "kind": "mlp",
                "classes": self.classes_.tolist(),
                "mean": self.mean_.tolist(),
                "scale": self.scale_.tolist(),
                "shapes": [list(w.shape) for w in self.weights_],
                "weights": [w.ravel().tolist() for w in self.weights_],
                "biases": [b.tolist() for b in self.biases_],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "MultilayerPerceptron":
        doc = json.loads(text)
        if doc.get("kind") != "mlp":
            raise ConfigError(f"not a perceptron document: kind={doc.get('kind')!r}")
        model = cls()
        model.classes_ = np.asarray(doc["classes"], dtype=np.int64)
        model.mean_ = np.asarray(doc["mean"])
        model.scale_ = np.asarray(doc["scale"])
        model.weights_ = [
            np.asarray(flat).reshape(shape)
            for flat, shape in zip(doc["weights"], doc["shapes"])
        ]
        model.biases_ = [np.asarray(b) for b in doc["biases"]]
        model.n_features_in_ = model.weights_[0].shape[0]
        return model


# ------------------------------------------------------------ configuration


@dataclass(frozen=True)
class ClassifierConfig:
    """Model family and knobs; defaults follow the reference setup."""

    kind: str = "rf"
    n_estimators: int = 200
    max_depth: int | None = 10
    n_neighbors: int = 8
    hidden: tuple[int, ...] = (100, 100, 50)
    alpha: float = 0.01
    max_iter: int = 400

    def __post_init__(self):
        if self.kind not in ("rf", "knn", "mlp"):
            raise ConfigError(f"kind must be rf, knn or mlp, got {self.kind!r}")
        object.__setattr__(self, "hidden", tuple(self.hidden))
        for name in ("n_estimators", "n_neighbors", "max_iter"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")

    def make(self, seed: int = 0):
        if self.kind == "rf":
            return RandomForest(
                n_estimators=self.n_estimators, max_depth=self.max_depth, seed=seed
            )
        if self.kind == "knn":
            return KNearestNeighbors(n_neighbors=self.n_neighbors)
        return MultilayerPerceptron(
            hidden=self.hidden, l2_alpha=self.alpha, max_iter=self.max_iter, seed=seed
        )


def fit(x, y, cfg: ClassifierConfig, seed: int = 0):
    """Train a classifier of the configured family."""
    return cfg.make(seed).fit(x, y)


def predict(model, x):
    return model.predict(x)
