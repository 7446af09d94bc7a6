"""Dataset ingestion, synthetic generators, and hospital-view partitioning.

A scenario splits one source dataset into a labeled task-hospital view and
one or more unlabeled data-hospital views: sample rows are shuffled and
assigned so each pairing overlaps in a shared-sample block, and feature
columns are assigned disjointly. All splits are pure functions of
(dataset, config, seed).
"""

from __future__ import annotations

import csv
import importlib.resources
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import ConfigError, DataFormatError
from .validation import check_labels, check_matrix, check_random_state

__all__ = [
    "Dataset",
    "PartyView",
    "PartySpec",
    "ScenarioSplit",
    "SplitConfig",
    "draw_party_specs",
    "export_scenario",
    "inductive_split",
    "load_breast",
    "load_csv",
    "partition_scenario",
    "psi_intersect",
    "synth_generate",
    "synth_latent_signal",
]


@dataclass(frozen=True)
class Dataset:
    """A labeled (or unlabeled) table: ids, feature matrix, optional labels."""

    ids: tuple
    features: np.ndarray
    labels: np.ndarray | None
    feature_names: tuple[str, ...]
    label_names: tuple[str, ...] | None = None

    def __post_init__(self):
        feats = check_matrix(self.features, "features")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if len(self.ids) != feats.shape[0]:
            raise DataFormatError(
                f"{len(self.ids)} ids for {feats.shape[0]} feature rows"
            )
        if len(set(self.ids)) != len(self.ids):
            raise DataFormatError("sample ids are not unique")
        if len(self.feature_names) != feats.shape[1]:
            raise DataFormatError(
                f"{len(self.feature_names)} feature names for {feats.shape[1]} columns"
            )
        if self.labels is not None:
            labels = check_labels(self.labels, feats.shape[0], "labels")
            object.__setattr__(self, "labels", labels)
            n_classes = np.unique(labels).shape[0]
            if not 2 <= n_classes <= feats.shape[0]:
                raise DataFormatError(
                    f"expected between 2 and {feats.shape[0]} classes, got {n_classes}"
                )

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def take(self, row_indices) -> "Dataset":
        """Row subset preserving order of ``row_indices``."""
        idx = np.asarray(row_indices, dtype=np.int64)
        return Dataset(
            ids=tuple(self.ids[i] for i in idx),
            features=self.features[idx],
            labels=None if self.labels is None else self.labels[idx],
            feature_names=self.feature_names,
            label_names=self.label_names,
        )


@dataclass(frozen=True)
class PartyView:
    """One hospital's local table: a row subset crossed with a column subset.

    Labels are present exactly when the view belongs to the task hospital.
    """

    party_id: str
    role: str
    ids: tuple
    features: np.ndarray
    feature_names: tuple[str, ...]
    labels: np.ndarray | None = None

    def __post_init__(self):
        if self.role not in ("task", "data"):
            raise ConfigError(f"role must be 'task' or 'data', got {self.role!r}")
        feats = check_matrix(self.features, f"features[{self.party_id}]")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if len(self.ids) != feats.shape[0]:
            raise DataFormatError(
                f"party {self.party_id}: {len(self.ids)} ids for {feats.shape[0]} rows"
            )
        if (self.role == "task") != (self.labels is not None):
            raise ConfigError(
                f"party {self.party_id}: labels must be present iff role is 'task'"
            )
        if self.labels is not None:
            object.__setattr__(
                self, "labels", check_labels(self.labels, feats.shape[0], "labels")
            )

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def rows_for(self, ids) -> np.ndarray:
        """Feature rows for the given ids, in the given order."""
        lookup = {v: i for i, v in enumerate(self.ids)}
        try:
            idx = [lookup[v] for v in ids]
        except KeyError as exc:
            raise KeyError(f"party {self.party_id} does not hold sample {exc.args[0]!r}")
        return self.features[np.asarray(idx, dtype=np.int64)]


@dataclass(frozen=True)
class PartySpec:
    """Requested sizes for one data hospital: rows, features, shared rows."""

    n_rows: int
    n_features: int
    n_shared: int

    def __post_init__(self):
        if self.n_shared < 1:
            raise ConfigError(f"|I_s| must be >= 1, got {self.n_shared}")
        if self.n_shared > self.n_rows:
            raise ConfigError(
                f"infeasible: |I_s| <= |I_d| violated ({self.n_shared} > {self.n_rows})"
            )
        if self.n_features < 1:
            raise ConfigError(f"|X_d| must be >= 1, got {self.n_features}")


@dataclass(frozen=True)
class SplitConfig:
    """Sizes for the task hospital and every data hospital."""

    n_task_rows: int
    n_task_features: int
    parties: tuple[PartySpec, ...]
    shuffle_columns: bool = False
    test_fraction: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "parties", tuple(self.parties))
        if self.n_task_rows < 2:
            raise ConfigError(f"|I_t| must be >= 2, got {self.n_task_rows}")
        if self.n_task_features < 1:
            raise ConfigError(f"|X_t| must be >= 1, got {self.n_task_features}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError(f"test_fraction must be in (0, 1), got {self.test_fraction}")


@dataclass(frozen=True)
class ScenarioSplit:
    """A partitioned scenario: task view, data views, shared ids, row masks."""

    task: PartyView
    data_parties: tuple[PartyView, ...]
    shared_ids: tuple[tuple, ...]
    train_mask: np.ndarray
    test_mask: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data_parties", tuple(self.data_parties))
        object.__setattr__(self, "shared_ids", tuple(tuple(s) for s in self.shared_ids))
        train = np.asarray(self.train_mask, dtype=bool)
        test = np.asarray(self.test_mask, dtype=bool)
        object.__setattr__(self, "train_mask", train)
        object.__setattr__(self, "test_mask", test)
        n = self.task.n_samples
        if train.shape != (n,) or test.shape != (n,):
            raise ConfigError("train/test masks must cover exactly the task rows")
        if np.any(train & test) or not np.all(train | test):
            raise ConfigError("train/test masks must partition the task rows")
        if len(self.shared_ids) != len(self.data_parties):
            raise ConfigError("one shared-id list required per data party")
        task_ids = set(self.task.ids)
        for view, shared in zip(self.data_parties, self.shared_ids):
            if not shared:
                raise ConfigError(
                    f"party {view.party_id} shares no samples with the task hospital"
                )
            held = set(view.ids)
            missing = [s for s in shared if s not in held or s not in task_ids]
            if missing:
                raise ConfigError(
                    f"shared id {missing[0]!r} is not held by both parties"
                )


def load_csv(path, id_column: str, label_column: str | None = None) -> Dataset:
    """Parse a comma-separated file with a header row into a Dataset.

    All cells outside the id and label columns must be numeric; violations
    raise DataFormatError naming the offending row and column. Labels are
    encoded as integers in sorted order of their distinct raw values.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: no data rows") from None
        rows = [r for r in reader if r]
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    header = [h.strip() for h in header]
    if id_column not in header:
        raise DataFormatError(f"{path}: missing id column {id_column!r}")
    if label_column is not None and label_column not in header:
        raise DataFormatError(f"{path}: missing label column {label_column!r}")
    id_idx = header.index(id_column)
    label_idx = header.index(label_column) if label_column is not None else None
    feat_cols = [i for i in range(len(header)) if i not in (id_idx, label_idx)]
    feature_names = tuple(header[i] for i in feat_cols)

    ids: list[str] = []
    raw_labels: list[str] = []
    data = np.empty((len(rows), len(feat_cols)))
    seen: set[str] = set()
    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise DataFormatError(
                f"{path}: row {r + 2} has {len(row)} cells, expected {len(header)}"
            )
        sid = row[id_idx].strip()
        if sid in seen:
            raise DataFormatError(f"{path}: duplicate id {sid!r} at row {r + 2}")
        seen.add(sid)
        ids.append(sid)
        if label_idx is not None:
            raw_labels.append(row[label_idx].strip())
        for j, c in enumerate(feat_cols):
            cell = row[c].strip()
            try:
                data[r, j] = float(cell)
            except ValueError:
                raise DataFormatError(
                    f"{path}: non-numeric value {cell!r} at row {r + 2}, "
                    f"column {header[c]!r}"
                ) from None

    labels = None
    label_names = None
    if label_idx is not None:
        distinct = sorted(set(raw_labels))
        encode = {v: k for k, v in enumerate(distinct)}
        labels = np.array([encode[v] for v in raw_labels], dtype=np.int64)
        label_names = tuple(distinct)
    return Dataset(
        ids=tuple(ids),
        features=data,
        labels=labels,
        feature_names=feature_names,
        label_names=label_names,
    )


def load_breast() -> Dataset:
    """Bundled breast-tumor diagnostic table: 569 samples, 30 features, 2 classes.

    Labels encode benign as 0 and malignant as 1.
    """
    ref = importlib.resources.files("fedistill") / "data" / "breast_wdbc.csv"
    with importlib.resources.as_file(ref) as path:
        return load_csv(path, id_column="id", label_column="diagnosis")


def synth_generate(
    n_samples: int,
    n_features: int,
    n_classes: int,
    class_separation: float,
    seed,
) -> Dataset:
    """Gaussian-blob classification data.

    Recipe: class centers are standard normal draws scaled by
    ``class_separation``; each sample is its class center plus unit Gaussian
    noise. With separation 0 the labels carry no signal; with large
    separation a nearest-neighbor classifier approaches perfect accuracy.
    """
    if n_classes < 2:
        raise ConfigError(f"n_classes must be >= 2, got {n_classes}")
    if n_features < 2:
        raise ConfigError(f"n_features must be >= 2, got {n_features}")
    rng = check_random_state(seed)
    centers = class_separation * rng.standard_normal((n_classes, n_features))
    labels = rng.integers(0, n_classes, size=n_samples)
    features = centers[labels] + rng.standard_normal((n_samples, n_features))
    return Dataset(
        ids=tuple(range(n_samples)),
        features=features,
        labels=labels.astype(np.int64),
        feature_names=tuple(f"x{i:02d}" for i in range(n_features)),
    )


def synth_latent_signal(
    n_samples: int = 600,
    n_task_features: int = 12,
    n_data_features: int = 6,
    latent_dim: int = 4,
    class_shift: float = 3.0,
    task_signal: float = 0.5,
    task_noise: float = 2.0,
    seed=0,
) -> Dataset:
    """Binary classification data where the label signal lives in a low-rank
    latent factor that the data hospital observes strongly and the task
    hospital only weakly.

    Recipe: each sample has a latent vector z = mu_y + N(0, I_k) where the
    class mean mu_y is +-class_shift/sqrt(k) per coordinate. The first
    ``n_task_features`` columns are task_signal * (z W_t) plus task_noise *
    unit Gaussian nuisance; the remaining ``n_data_features`` columns are
    z W_d plus small noise. Column order puts the task block first so a
    partition that assigns the leading columns to the task hospital leaves
    it with the weak view.
    """
    if latent_dim < 1:
        raise ConfigError(f"latent_dim must be >= 1, got {latent_dim}")
    rng = check_random_state(seed)
    k = latent_dim
    labels = rng.integers(0, 2, size=n_samples).astype(np.int64)
    mu = class_shift / np.sqrt(k)
    z = (2.0 * labels[:, None] - 1.0) * mu + rng.standard_normal((n_samples, k))
    w_task = rng.standard_normal((k, n_task_features)) / np.sqrt(k)
    w_data = rng.standard_normal((k, n_data_features)) / np.sqrt(k)
    task_block = task_signal * (z @ w_task) + task_noise * rng.standard_normal(
        (n_samples, n_task_features)
    )
    data_block = z @ w_data + 0.1 * rng.standard_normal((n_samples, n_data_features))
    names = tuple(f"t{i:02d}" for i in range(n_task_features)) + tuple(
        f"d{i:02d}" for i in range(n_data_features)
    )
    return Dataset(
        ids=tuple(range(n_samples)),
        features=np.hstack([task_block, data_block]),
        labels=labels,
        feature_names=names,
    )


def psi_intersect(ids_a, ids_b) -> tuple:
    """Sorted intersection of two id collections.

    Plain-sight stand-in for a private set intersection: both parties learn
    the shared ids and nothing else is modeled.
    """
    return tuple(sorted(set(ids_a) & set(ids_b)))


def draw_party_specs(
    n_parties: int,
    rows_range: tuple[int, int],
    features_range: tuple[int, int],
    shared_range: tuple[int, int],
    rng,
) -> tuple[PartySpec, ...]:
    """Draw per-party sizes uniformly from closed integer intervals."""
    rng = check_random_state(rng)
    specs = []
    for _ in range(n_parties):
        n_rows = int(rng.integers(rows_range[0], rows_range[1] + 1))
        n_feat = int(rng.integers(features_range[0], features_range[1] + 1))
        n_shared = int(rng.integers(shared_range[0], shared_range[1] + 1))
        specs.append(PartySpec(n_rows=n_rows, n_features=n_feat, n_shared=min(n_shared, n_rows)))
    return tuple(specs)


def partition_scenario(ds: Dataset, cfg: SplitConfig, seed) -> ScenarioSplit:
    """Shuffle rows and assign them to hospital views per the size config.

    Layout after the seeded shuffle: the first |I_t| rows form the task
    hospital; each data party's shared rows are the leading |I_s_i| rows of
    that task block (so multi-party shared sets are nested prefixes), and its
    private rows are drawn sequentially from the remaining pool. Feature
    columns are assigned disjointly in dataset order (first |X_t| to the
    task), optionally after a seeded column shuffle.
    """
    if ds.labels is None:
        raise ConfigError("task hospital requires labels; dataset has none")
    n, d = ds.n_samples, ds.n_features
    i_t = cfg.n_task_rows
    extra = sum(p.n_rows - p.n_shared for p in cfg.parties)
    if i_t + extra > n:
        raise ConfigError(
            "infeasible: |I_t| + sum(|I_d_i| - |I_s_i|) <= rows violated "
            f"({i_t} + {extra} > {n})"
        )
    total_features = cfg.n_task_features + sum(p.n_features for p in cfg.parties)
    if total_features > d:
        raise ConfigError(
            "infeasible: |X_t| + sum(|X_d_i|) <= columns violated "
            f"({total_features} > {d})"
        )
    for i, p in enumerate(cfg.parties):
        if p.n_shared > i_t:
            raise ConfigError(
                f"infeasible: |I_s_{i}| <= |I_t| violated ({p.n_shared} > {i_t})"
            )

    rng = check_random_state(seed)
    perm = rng.permutation(n)
    col_order = np.arange(d)
    if cfg.shuffle_columns:
        col_order = rng.permutation(d)

    task_rows = perm[:i_t]
    task_cols = col_order[: cfg.n_task_features]
    task = PartyView(
        party_id="task",
        role="task",
        ids=tuple(ds.ids[i] for i in task_rows),
        features=ds.features[np.ix_(task_rows, task_cols)],
        feature_names=tuple(ds.feature_names[c] for c in task_cols),
        labels=ds.labels[task_rows],
    )

    views = []
    shared_lists = []
    cursor_rows = i_t
    cursor_cols = cfg.n_task_features
    for i, p in enumerate(cfg.parties):
        shared_rows = perm[: p.n_shared]
        n_private = p.n_rows - p.n_shared
        private_rows = perm[cursor_rows : cursor_rows + n_private]
        cursor_rows += n_private
        rows = np.concatenate([shared_rows, private_rows])
        cols = col_order[cursor_cols : cursor_cols + p.n_features]
        cursor_cols += p.n_features
        view = PartyView(
            party_id=f"data:{i}",
            role="data",
            ids=tuple(ds.ids[r] for r in rows),
            features=ds.features[np.ix_(rows, cols)],
            feature_names=tuple(ds.feature_names[c] for c in cols),
        )
        views.append(view)
        shared_lists.append(psi_intersect(task.ids, view.ids))

    n_test = max(1, round(cfg.test_fraction * i_t))
    if n_test >= i_t:
        raise ConfigError(
            f"infeasible: test rows ({n_test}) must be fewer than |I_t| ({i_t})"
        )
    order = rng.permutation(i_t)
    test_mask = np.zeros(i_t, dtype=bool)
    test_mask[order[:n_test]] = True
    return ScenarioSplit(
        task=task,
        data_parties=tuple(views),
        shared_ids=tuple(shared_lists),
        train_mask=~test_mask,
        test_mask=test_mask,
    )


def inductive_split(
    ds: Dataset, cfg: SplitConfig, seed, mode: str = "noniid"
) -> tuple[ScenarioSplit, PartyView]:
    """Hold out a pool of unseen samples, then partition the remainder.

    Non-IID mode picks half of the label set and holds out 40% of those
    labels' rows; IID mode holds out the same number of rows drawn uniformly.
    The held-out rows are returned as a labeled task-side view restricted to
    the task hospital's columns.
    """
    if mode not in ("iid", "noniid"):
        raise ConfigError(f"mode must be 'iid' or 'noniid', got {mode!r}")
    if ds.labels is None:
        raise ConfigError("inductive split requires labels")
    classes = np.unique(ds.labels)
    if classes.shape[0] < 2:
        raise ConfigError("inductive split requires at least two classes")
    ss = np.random.SeedSequence(seed)
    holdout_seed, part_seed = ss.spawn(2)
    rng = np.random.default_rng(holdout_seed)

    chosen = rng.choice(classes, size=max(1, classes.shape[0] // 2), replace=False)
    pool = np.flatnonzero(np.isin(ds.labels, chosen))
    n_hold = max(1, round(0.4 * pool.shape[0]))
    if mode == "noniid":
        holdout = rng.choice(pool, size=n_hold, replace=False)
    else:
        holdout = rng.choice(ds.n_samples, size=n_hold, replace=False)
    holdout = np.sort(holdout)
    rest = np.setdiff1d(np.arange(ds.n_samples), holdout)

    split = partition_scenario(ds.take(rest), cfg, part_seed)
    name_to_col = {nm: i for i, nm in enumerate(ds.feature_names)}
    task_cols = np.array([name_to_col[nm] for nm in split.task.feature_names])
    new_samples = PartyView(
        party_id="task:new",
        role="task",
        ids=tuple(ds.ids[i] for i in holdout),
        features=ds.features[np.ix_(holdout, task_cols)],
        feature_names=split.task.feature_names,
        labels=ds.labels[holdout],
    )
    return split, new_samples


def _write_view_csv(path, view: PartyView, extra_cols: dict | None = None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        extra = extra_cols or {}
        writer.writerow(["id", *view.feature_names, *extra.keys()])
        for r in range(view.n_samples):
            row = [view.ids[r]] + [repr(float(v)) for v in view.features[r]]
            row += [extra[k][r] for k in extra]
            writer.writerow(row)


def export_scenario(split: ScenarioSplit, directory) -> list[str]:
    """Write each view and the shared-id lists as CSVs; returns file names."""
    import os

    os.makedirs(directory, exist_ok=True)
    written = []
    extra = {
        "label": [int(v) for v in split.task.labels],
        "split": ["test" if t else "train" for t in split.test_mask],
    }
    _write_view_csv(os.path.join(directory, "task.csv"), split.task, extra)
    written.append("task.csv")
    for i, view in enumerate(split.data_parties):
        name = f"data_{i}.csv"
        _write_view_csv(os.path.join(directory, name), view)
        written.append(name)
        sname = f"shared_ids_{i}.csv"
        with open(os.path.join(directory, sname), "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id"])
            for sid in split.shared_ids[i]:
                writer.writerow([sid])
        written.append(sname)
    return written


def replace_parties(cfg: SplitConfig, parties) -> SplitConfig:
    """Config copy with a different data-party list."""
    return replace(cfg, parties=tuple(parties))
