"""End-to-end pipeline and experiment suites.

One run walks the full collaboration: partition a dataset into hospital
views, align shared samples, learn federated representations, distill them
into per-party encoders, enrich the task hospital's rows, and score a
downstream classifier against the local-features-only baseline. On top of
single runs sit seed batteries, hyperparameter sweeps, few-shot and
inductive evaluations, incremental-update operations, wall-clock reporting,
and a transcript audit that checks no raw feature column ever crossed a
party boundary.

Every stochastic choice derives from the run seed through labeled
sub-streams (party draw, federated learning, distillation, downstream,
few-shot subsampling), so adding a party or swapping the classifier never
shifts the randomness of unrelated phases.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .datasets import (
    Dataset,
    PartySpec,
    PartyView,
    ScenarioSplit,
    SplitConfig,
    draw_party_specs,
    inductive_split,
    load_breast,
    load_csv,
    partition_scenario,
    psi_intersect,
    replace_parties,
    synth_generate,
    synth_latent_signal,
)
from .downstream import ClassifierConfig, accuracy
from .exceptions import ConfigError, PipelineError, ProtocolError
from .frl import FedRepresentation, FrlConfig, run_frl
from .lrd import DistillConfig, EncoderParams, EnrichedRepresentation, enrich, train_distilled_encoder
from .transcript import Transcript, array_digest
from .validation import check_labels, check_matrix

FEW_SHOT_FRACTION = 0.1

# Labels for seed sub-streams; each phase owns one so runs stay reproducible
# when other phases change.
_STREAM_PARTY_DRAW = 0
_STREAM_FRL = 1
_STREAM_LRD = 2
_STREAM_DOWNSTREAM = 3
_STREAM_FEW_SHOT = 4

SCENARIOS = (
    "main",
    "few_shot",
    "multi_party",
    "inductive_iid",
    "inductive_noniid",
    "new_data_hospital",
    "distill_ablation",
)

SWEEP_AXES = ("task_features", "data_features", "shared_samples", "n_parties")


def _derive_rng(seed: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *path]))


def _derive_int(seed: int, *path: int) -> int:
    return int(np.random.SeedSequence([int(seed), *path]).generate_state(1)[0])


# ------------------------------------------------------------ configuration


@dataclass(frozen=True)
class DatasetConfig:
    """Which dataset a run loads and, for synthetic sources, its shape."""

    source: str = "breast"
    path: str | None = None
    id_column: str = "id"
    label_column: str | None = None
    n_samples: int = 600
    n_features: int = 18
    n_classes: int = 2
    class_separation: float = 3.0
    n_task_features: int = 12
    n_data_features: int = 6
    latent_dim: int = 4
    class_shift: float = 3.0
    task_signal: float = 0.5
    task_noise: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.source not in ("breast", "synth", "synth_latent", "csv"):
            raise ConfigError(
                "source must be breast, synth, synth_latent or csv, "
                f"got {self.source!r}"
            )
        if self.source == "csv" and not self.path:
            raise ConfigError("csv source requires a path")

    def load(self) -> Dataset:
        if self.source == "breast":
            return load_breast()
        if self.source == "synth":
            return synth_generate(
                n_samples=self.n_samples,
                n_features=self.n_features,
                n_classes=self.n_classes,
                class_separation=self.class_separation,
                seed=self.seed,
            )
        if self.source == "synth_latent":
            return synth_latent_signal(
                n_samples=self.n_samples,
                n_task_features=self.n_task_features,
                n_data_features=self.n_data_features,
                latent_dim=self.latent_dim,
                class_shift=self.class_shift,
                task_signal=self.task_signal,
                task_noise=self.task_noise,
                seed=self.seed,
            )
        return load_csv(self.path, self.id_column, self.label_column)


@dataclass(frozen=True)
class PartyIntervals:
    """Closed integer intervals for per-seed random party shapes."""

    n_parties: int
    rows: tuple[int, int]
    features: tuple[int, int]
    shared: tuple[int, int]

    def __post_init__(self):
        if self.n_parties < 0:
            raise ConfigError(f"n_parties must be >= 0, got {self.n_parties}")
        for name in ("rows", "features", "shared"):
            lo, hi = getattr(self, name)
            object.__setattr__(self, name, (int(lo), int(hi)))
            if not 1 <= lo <= hi:
                raise ConfigError(
                    f"party interval {name} must satisfy 1 <= lo <= hi, got [{lo}, {hi}]"
                )

    def draw(self, rng) -> tuple[PartySpec, ...]:
        return draw_party_specs(
            self.n_parties, self.rows, self.features, self.shared, rng
        )


_SECTION_TYPES = {
    "dataset": DatasetConfig,
    "frl": FrlConfig,
    "lrd": DistillConfig,
    "classifier": ClassifierConfig,
}
# Keys callers may not set: per-run derivation owns the distillation seed and
# the party-count guard belongs to direct protocol use.
_BLOCKED_KEYS = {"lrd": ("seed",), "frl": ("n_parties",)}


def _section_from_dict(section: str, doc: dict):
    cls = _SECTION_TYPES[section]
    allowed = set(cls.__dataclass_fields__) - set(_BLOCKED_KEYS.get(section, ()))
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in section {section!r}")
    kwargs = dict(doc)
    for name in ("hidden",):
        if name in kwargs and isinstance(kwargs[name], list):
            kwargs[name] = tuple(kwargs[name])
    return cls(**kwargs)


def _split_from_dict(doc: dict) -> SplitConfig:
    allowed = {"n_task_rows", "n_task_features", "parties", "shuffle_columns",
               "test_fraction"}
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in section 'split'")
    parties = []
    for i, p in enumerate(doc.get("parties", [])):
        extra = set(p) - {"n_rows", "n_features", "n_shared"}
        if extra:
            raise ConfigError(
                f"unknown key {sorted(extra)[0]!r} in split party {i}"
            )
        parties.append(PartySpec(**p))
    kwargs = {k: v for k, v in doc.items() if k != "parties"}
    return SplitConfig(parties=tuple(parties), **kwargs)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment needs: data, sizes, protocol, models, seeds."""

    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    split: SplitConfig = field(
        default_factory=lambda: SplitConfig(
            n_task_rows=300,
            n_task_features=15,
            parties=(PartySpec(n_rows=400, n_features=15, n_shared=200),),
        )
    )
    frl: FrlConfig = field(default_factory=FrlConfig)
    lrd: DistillConfig = field(default_factory=DistillConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    seeds: tuple[int, ...] = tuple(range(10))
    scenario: str = "main"
    party_intervals: PartyIntervals | None = None

    def __post_init__(self):
        try:
            object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        except (TypeError, ValueError):
            raise ConfigError("seeds must be a list of integers") from None
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if self.scenario not in SCENARIOS:
            raise ConfigError(
                f"scenario must be one of {', '.join(SCENARIOS)}, got {self.scenario!r}"
            )

    def to_dict(self) -> dict:
        doc = {
            "dataset": {
                k: getattr(self.dataset, k)
                for k in DatasetConfig.__dataclass_fields__
            },
            "split": {
                "n_task_rows": self.split.n_task_rows,
                "n_task_features": self.split.n_task_features,
                "parties": [
                    {"n_rows": p.n_rows, "n_features": p.n_features,
                     "n_shared": p.n_shared}
                    for p in self.split.parties
                ],
                "shuffle_columns": self.split.shuffle_columns,
                "test_fraction": self.split.test_fraction,
            },
            "frl": {
                k: getattr(self.frl, k)
                for k in FrlConfig.__dataclass_fields__
                if k not in _BLOCKED_KEYS["frl"]
            },
            "lrd": {
                k: getattr(self.lrd, k)
                for k in DistillConfig.__dataclass_fields__
                if k not in _BLOCKED_KEYS["lrd"]
            },
            "classifier": {
                "kind": self.classifier.kind,
                "n_estimators": self.classifier.n_estimators,
                "max_depth": self.classifier.max_depth,
                "n_neighbors": self.classifier.n_neighbors,
                "hidden": list(self.classifier.hidden),
                "alpha": self.classifier.alpha,
                "max_iter": self.classifier.max_iter,
            },
            "seeds": list(self.seeds),
            "scenario": self.scenario,
        }
        if self.party_intervals is not None:
            doc["party_intervals"] = {
                "n_parties": self.party_intervals.n_parties,
                "rows": list(self.party_intervals.rows),
                "features": list(self.party_intervals.features),
                "shared": list(self.party_intervals.shared),
            }
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {"dataset", "split", "frl", "lrd", "classifier", "seeds",
                 "scenario", "party_intervals"}
        for key in doc:
            if key not in known:
                raise ConfigError(f"unknown key {key!r} at the top level")
        kwargs = {}
        for section in ("dataset", "frl", "lrd", "classifier"):
            if section in doc:
                kwargs[section] = _section_from_dict(section, doc[section])
        if "split" in doc:
            kwargs["split"] = _split_from_dict(doc["split"])
        if "seeds" in doc:
            seeds = doc["seeds"]
            if isinstance(seeds, (str, int)) or not hasattr(seeds, "__iter__"):
                raise ConfigError("seeds must be a list of integers")
            kwargs["seeds"] = tuple(seeds)
        if "scenario" in doc:
            kwargs["scenario"] = doc["scenario"]
        if "party_intervals" in doc:
            p = doc["party_intervals"]
            extra = set(p) - {"n_parties", "rows", "features", "shared"}
            if extra:
                raise ConfigError(
                    f"unknown key {sorted(extra)[0]!r} in section 'party_intervals'"
                )
            kwargs["party_intervals"] = PartyIntervals(
                n_parties=p["n_parties"],
                rows=tuple(p["rows"]),
                features=tuple(p["features"]),
                shared=tuple(p["shared"]),
            )
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    def digest(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()


# ------------------------------------------------------------------ results


@dataclass(frozen=True)
class RunRow:
    """One long-format result line: a method's score for one (seed, value)."""

    scenario: str
    seed: int
    method: str
    accuracy: float | None
    axis: str = ""
    axis_value: object = None
    t_frl: float = 0.0
    t_lrd: float = 0.0
    t_downstream: float = 0.0
    transcript_digest: str = ""
    note: str = ""

    def __post_init__(self):
        if self.accuracy is not None and not 0.0 <= self.accuracy <= 1.0:
            raise ConfigError(f"accuracy must lie in [0, 1], got {self.accuracy}")

    @property
    def t_total(self) -> float:
        return self.t_frl + self.t_lrd + self.t_downstream


@dataclass(frozen=True)
class RunResult:
    """A batch of rows with mean/std summaries per method."""

    rows: tuple[RunRow, ...]

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))
        if not self.rows:
            raise ConfigError("a result needs at least one row")

    def select(self, method: str, **match) -> tuple[RunRow, ...]:
        out = []
        for row in self.rows:
            if row.method != method:
                continue
            if any(getattr(row, k) != v for k, v in match.items()):
                continue
            out.append(row)
        return tuple(out)

    def accuracies(self, method: str, **match) -> np.ndarray:
        vals = [r.accuracy for r in self.select(method, **match) if r.accuracy is not None]
        return np.asarray(vals, dtype=float)

    def mean(self, method: str, **match) -> float:
        return float(np.mean(self.accuracies(method, **match)))

    def std(self, method: str, **match) -> float:
        return float(np.std(self.accuracies(method, **match)))

    def summary(self) -> dict:
        out = {}
        for method in sorted({r.method for r in self.rows if r.method != "warning"}):
            acc = self.accuracies(method)
            if acc.size == 0:
                continue
            mean, std = float(np.mean(acc)), float(np.std(acc))
            out[method] = {
                "n": int(acc.size),
                "mean": mean,
                "std": std,
                "display": f"{mean:.4f} ± {std:.4f}",
            }
        return out

    def phase_seconds(self) -> dict:
        rows = [r for r in self.rows if r.method == "vfedtrans"]
        if not rows:
            rows = [r for r in self.rows if r.method != "warning"]
        return {
            "frl": float(np.mean([r.t_frl for r in rows])) if rows else 0.0,
            "lrd": float(np.mean([r.t_lrd for r in rows])) if rows else 0.0,
            "downstream": float(np.mean([r.t_downstream for r in rows])) if rows else 0.0,
        }


# ----------------------------------------------------------- pipeline state


@dataclass(frozen=True)
class StandardScaler:
    """Per-feature affine map frozen from the task hospital's training rows."""

    mean: np.ndarray
    scale: np.ndarray

    def apply(self, x) -> np.ndarray:
        x = check_matrix(x, "x")
        if x.shape[1] != self.mean.shape[0]:
            raise ConfigError(
                f"expected {self.mean.shape[0]} features, got {x.shape[1]}"
            )
        return (x - self.mean) / self.scale

    @classmethod
    def fit(cls, x) -> "StandardScaler":
        x = check_matrix(x, "x")
        scale = x.std(axis=0)
        scale[scale == 0] = 1.0
        return cls(mean=x.mean(axis=0), scale=scale)


def _standardized_view(view: PartyView, scaler: StandardScaler) -> PartyView:
    return PartyView(
        party_id=view.party_id,
        role=view.role,
        ids=view.ids,
        features=scaler.apply(view.features),
        feature_names=view.feature_names,
        labels=view.labels,
    )


@dataclass
class PipelineOutcome:
    """Everything a finished run exposes for follow-up operations."""

    config: ExperimentConfig
    seed: int
    split: ScenarioSplit
    scaler: StandardScaler
    task_std: PartyView
    party_std: tuple[PartyView, ...]
    fed_reps: tuple[FedRepresentation, ...]
    encoders: tuple[EncoderParams, ...]
    loss_curves: tuple[tuple, ...]
    enriched: EnrichedRepresentation
    model: object
    transcript: Transcript
    row: RunRow

    def encoder_digests(self) -> tuple[str, ...]:
        return tuple(e.digest() for e in self.encoders)

    def raw_view_index(self) -> dict:
        """Arrays whose digests must never appear in protocol messages."""
        index = {
            "task/raw": self.split.task.features,
            "task/std": self.task_std.features,
        }
        for view, std_view, shared in zip(
            self.split.data_parties, self.party_std, self.split.shared_ids
        ):
            pid = view.party_id
            index[f"{pid}/raw"] = view.features
            index[f"{pid}/std"] = std_view.features
            index[f"{pid}/shared_std"] = std_view.rows_for(shared)
            index[f"task/shared_std/{pid}"] = self.task_std.rows_for(shared)
        return index


# ------------------------------------------------------------ the pipeline


def _phase(name: str, fn):
    """Run one pipeline phase, timing it and naming it on failure."""
    start = time.perf_counter()
    try:
        value = fn()
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(name, exc) from exc
    return value, time.perf_counter() - start


def resolve_split_config(cfg: ExperimentConfig, seed: int) -> SplitConfig:
    """Fixed party list, or shapes drawn from intervals with a sub-seed."""
    if cfg.party_intervals is None:
        return cfg.split
    rng = _derive_rng(seed, _STREAM_PARTY_DRAW)
    return replace_parties(cfg.split, cfg.party_intervals.draw(rng))


def _train_indices(split: ScenarioSplit, scenario: str, seed: int) -> np.ndarray:
    idx = np.flatnonzero(split.train_mask)
    if scenario == "few_shot":
        rng = _derive_rng(seed, _STREAM_FEW_SHOT)
        n_keep = max(1, round(FEW_SHOT_FRACTION * idx.shape[0]))
        idx = np.sort(rng.choice(idx, size=n_keep, replace=False))
    return idx


def _fit_downstream(cfg: ExperimentConfig, seed: int, matrix, split: ScenarioSplit):
    train_idx = _train_indices(split, cfg.scenario, seed)
    test_idx = np.flatnonzero(split.test_mask)
    labels = split.task.labels
    model = cfg.classifier.make(seed=_derive_int(seed, _STREAM_DOWNSTREAM))
    model.fit(matrix[train_idx], labels[train_idx])
    return model, accuracy(model.predict(matrix[test_idx]), labels[test_idx])


def _run_party_frl(cfg, seed, index, task_std, party_std, shared, transcript):
    s_task = task_std.rows_for(shared)
    s_data = party_std.rows_for(shared)
    rng = _derive_rng(seed, _STREAM_FRL, index)
    return run_frl(
        s_task,
        [s_data],
        cfg.frl,
        rng,
        transcript,
        ids=shared,
        party_labels=[party_std.party_id],
    )


def _train_party_encoder(cfg, seed, index, task_std, fed):
    ids = np.asarray(task_std.ids, dtype=object)
    mask = np.isin(ids, np.asarray(fed.ids, dtype=object))
    dcfg = replace(cfg.lrd, seed=_derive_int(seed, _STREAM_LRD, index))
    return train_distilled_encoder(task_std, mask, fed, dcfg)


def run_pipeline(cfg: ExperimentConfig, seed: int) -> PipelineOutcome:
    """Execute the full run for one seed and return its state and score."""

    def _partition():
        ds = cfg.dataset.load()
        split = partition_scenario(ds, resolve_split_config(cfg, seed), seed)
        scaler = StandardScaler.fit(split.task.features[split.train_mask])
        task_std = _standardized_view(split.task, scaler)
        party_std = tuple(
            _standardized_view(v, StandardScaler.fit(v.features))
            for v in split.data_parties
        )
        return split, scaler, task_std, party_std

    (split, scaler, task_std, party_std), _ = _phase("partition", _partition)

    transcript = Transcript()

    def _frl():
        return tuple(
            _run_party_frl(cfg, seed, i, task_std, party_std[i], shared, transcript)
            for i, shared in enumerate(split.shared_ids)
        )

    fed_reps, t_frl = _phase("frl", _frl)

    def _lrd():
        pairs = [
            _train_party_encoder(cfg, seed, i, task_std, fed)
            for i, fed in enumerate(fed_reps)
        ]
        encoders = tuple(p[0] for p in pairs)
        curves = tuple(tuple(p[1]) for p in pairs)
        enriched = enrich(encoders, task_std.features, ids=task_std.ids)
        return encoders, curves, enriched

    (encoders, curves, enriched), t_lrd = _phase("lrd", _lrd)

    def _downstream():
        return _fit_downstream(cfg, seed, enriched.matrix, split)

    (model, acc), t_downstream = _phase("downstream", _downstream)

    row = RunRow(
        scenario=cfg.scenario,
        seed=seed,
        method="vfedtrans",
        accuracy=acc,
        t_frl=t_frl,
        t_lrd=t_lrd,
        t_downstream=t_downstream,
        transcript_digest=transcript.digest(),
    )
    return PipelineOutcome(
        config=cfg,
        seed=seed,
        split=split,
        scaler=scaler,
        task_std=task_std,
        party_std=party_std,
        fed_reps=fed_reps,
        encoders=encoders,
        loss_curves=curves,
        enriched=enriched,
        model=model,
        transcript=transcript,
        row=row,
    )


@dataclass
class LocalOutcome:
    """State of a baseline run: raw task features only, no collaboration."""

    config: ExperimentConfig
    seed: int
    split: ScenarioSplit
    scaler: StandardScaler
    task_std: PartyView
    model: object
    row: RunRow


def run_local_baseline(cfg: ExperimentConfig, seed: int) -> LocalOutcome:
    """Downstream training on the task hospital's own columns alone."""

    def _partition():
        ds = cfg.dataset.load()
        split = partition_scenario(ds, resolve_split_config(cfg, seed), seed)
        scaler = StandardScaler.fit(split.task.features[split.train_mask])
        return split, scaler, _standardized_view(split.task, scaler)

    (split, scaler, task_std), _ = _phase("partition", _partition)

    def _downstream():
        return _fit_downstream(cfg, seed, task_std.features, split)

    (model, acc), t_downstream = _phase("downstream", _downstream)

    row = RunRow(
        scenario=cfg.scenario,
        seed=seed,
        method="local",
        accuracy=acc,
        t_downstream=t_downstream,
    )
    return LocalOutcome(
        config=cfg, seed=seed, split=split, scaler=scaler,
        task_std=task_std, model=model, row=row,
    )


def _seed_rows(cfg: ExperimentConfig, seed: int) -> tuple[RunRow, RunRow]:
    return run_pipeline(cfg, seed).row, run_local_baseline(cfg, seed).row


def run_experiment(cfg: ExperimentConfig, n_jobs: int = 1) -> RunResult:
    """Both methods across every configured seed."""
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            pairs = list(pool.map(_seed_rows, [cfg] * len(cfg.seeds), cfg.seeds))
    else:
        pairs = [_seed_rows(cfg, seed) for seed in cfg.seeds]
    rows = [row for pair in pairs for row in pair]
    return RunResult(rows=tuple(rows))


def distill_ablation(cfg: ExperimentConfig, n_jobs: int = 1) -> RunResult:
    """The configured run next to an identical one with distillation off.

    Rows from the zero-weight rerun carry note "theta=0"; the baseline rows
    appear once since both variants share it.
    """
    base = run_experiment(cfg, n_jobs=n_jobs)
    zeroed = replace(cfg, lrd=replace(cfg.lrd, theta=0.0))
    zero = run_experiment(zeroed, n_jobs=n_jobs)
    rows = [replace(r, scenario="distill_ablation") for r in base.rows]
    rows.extend(
        replace(r, scenario="distill_ablation", note="theta=0")
        for r in zero.rows
        if r.method == "vfedtrans"
    )
    return RunResult(rows=tuple(rows))


# ------------------------------------------------------------------- sweeps


def apply_axis(cfg: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    """A copy of the config with one swept quantity replaced."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"axis must be one of {', '.join(SWEEP_AXES)}, got {axis!r}")
    value = int(value)
    if axis == "task_features":
        return replace(cfg, split=replace(cfg.split, n_task_features=value))
    if axis == "data_features":
        parties = tuple(replace(p, n_features=value) for p in cfg.split.parties)
        return replace(cfg, split=replace_parties(cfg.split, parties))
    if axis == "shared_samples":
        parties = tuple(replace(p, n_shared=value) for p in cfg.split.parties)
        return replace(cfg, split=replace_parties(cfg.split, parties))
    if cfg.party_intervals is not None:
        return replace(cfg, party_intervals=replace(cfg.party_intervals, n_parties=value))
    if value == 0:
        return replace(cfg, split=replace_parties(cfg.split, ()))
    if not cfg.split.parties:
        raise ConfigError("n_parties sweep needs a template party in the split")
    return replace(cfg, split=replace_parties(cfg.split, (cfg.split.parties[0],) * value))


def sweep(cfg: ExperimentConfig, axis: str, values, n_jobs: int = 1) -> RunResult:
    """One pipeline and one baseline run per (value, seed); infeasible
    combinations become warning rows instead of failures."""
    rows = []
    for value in values:
        try:
            cfg_v = apply_axis(cfg, axis, value)
        except ConfigError as exc:
            rows.append(RunRow(
                scenario=cfg.scenario, seed=cfg.seeds[0], method="warning",
                accuracy=None, axis=axis, axis_value=value, note=str(exc),
            ))
            continue
        for seed in cfg_v.seeds:
            try:
                vfed, local = _seed_rows(cfg_v, seed)
            except (ConfigError, PipelineError) as exc:
                rows.append(RunRow(
                    scenario=cfg.scenario, seed=seed, method="warning",
                    accuracy=None, axis=axis, axis_value=value, note=str(exc),
                ))
                continue
            rows.append(replace(vfed, axis=axis, axis_value=value))
            rows.append(replace(local, axis=axis, axis_value=value))
    return RunResult(rows=tuple(rows))


def timing_report(cfg: ExperimentConfig, axes: dict, n_jobs: int = 1) -> RunResult:
    """Wall-clock per phase across every requested axis."""
    rows = []
    for axis, values in axes.items():
        rows.extend(sweep(cfg, axis, values, n_jobs=n_jobs).rows)
    return RunResult(rows=tuple(rows))


def linear_fit_r2(x, y) -> float:
    """Coefficient of determination of the least-squares line through (x, y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or x.shape[0] < 3:
        raise ConfigError("linear fit needs >= 3 paired points")
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    total = y - y.mean()
    denom = float(total @ total)
    if denom == 0:
        return 1.0
    return 1.0 - float(resid @ resid) / denom


# ------------------------------------------------------- inductive learning


def inductive_eval(cfg: ExperimentConfig, mode: str, n_jobs: int = 1) -> RunResult:
    """Freeze the trained pipeline, then score never-seen samples.

    Emits, per seed and method, one row for the in-distribution test split
    (axis_value "test") and one for the held-out new samples ("new").
    """
    rows = []
    for seed in cfg.seeds:
        rows.extend(_inductive_seed_rows(cfg, mode, seed))
    return RunResult(rows=tuple(rows))


def _inductive_seed_rows(cfg: ExperimentConfig, mode: str, seed: int):
    scenario = f"inductive_{mode}"

    def _partition():
        ds = cfg.dataset.load()
        return inductive_split(ds, resolve_split_config(cfg, seed), seed, mode)

    (split, new_view), _ = _phase("partition", _partition)

    scaler = StandardScaler.fit(split.task.features[split.train_mask])
    task_std = _standardized_view(split.task, scaler)
    party_std = tuple(
        _standardized_view(v, StandardScaler.fit(v.features))
        for v in split.data_parties
    )

    transcript = Transcript()
    fed_reps, _ = _phase("frl", lambda: tuple(
        _run_party_frl(cfg, seed, i, task_std, party_std[i], shared, transcript)
        for i, shared in enumerate(split.shared_ids)
    ))

    def _lrd():
        encoders = tuple(
            _train_party_encoder(cfg, seed, i, task_std, fed)[0]
            for i, fed in enumerate(fed_reps)
        )
        return encoders, enrich(encoders, task_std.features, ids=task_std.ids)

    (encoders, enriched), _ = _phase("lrd", _lrd)

    def _score():
        model_fed, acc_fed = _fit_downstream(cfg, seed, enriched.matrix, split)
        model_loc, acc_loc = _fit_downstream(cfg, seed, task_std.features, split)
        new_std = scaler.apply(new_view.features)
        new_enriched = enrich(encoders, new_std).matrix
        acc_fed_new = accuracy(model_fed.predict(new_enriched), new_view.labels)
        acc_loc_new = accuracy(model_loc.predict(new_std), new_view.labels)
        return acc_fed, acc_loc, acc_fed_new, acc_loc_new

    (acc_fed, acc_loc, acc_fed_new, acc_loc_new), _ = _phase("downstream", _score)

    digest = transcript.digest()
    return [
        RunRow(scenario=scenario, seed=seed, method="vfedtrans", accuracy=acc_fed,
               axis="population", axis_value="test", transcript_digest=digest),
        RunRow(scenario=scenario, seed=seed, method="vfedtrans", accuracy=acc_fed_new,
               axis="population", axis_value="new", transcript_digest=digest),
        RunRow(scenario=scenario, seed=seed, method="local", accuracy=acc_loc,
               axis="population", axis_value="test"),
        RunRow(scenario=scenario, seed=seed, method="local", accuracy=acc_loc_new,
               axis="population", axis_value="new"),
    ]


# --------------------------------------------------------- updating a run


def add_data_hospital(state: PipelineOutcome, new_view: PartyView) -> PipelineOutcome:
    """Extend a finished run with one more data hospital.

    Runs representation learning and distillation for the new party only,
    appends its encoder output to the enriched representation, and retrains
    the downstream model. Existing encoders are reused byte-for-byte, and the
    new party's messages append to the same transcript.
    """
    cfg, seed = state.config, state.seed
    shared = psi_intersect(state.split.task.ids, new_view.ids)
    if not shared:
        raise ProtocolError(
            f"party {new_view.party_id} shares no samples with the task hospital"
        )
    index = len(state.encoders)
    new_std = _standardized_view(new_view, StandardScaler.fit(new_view.features))

    def _frl():
        return _run_party_frl(
            cfg, seed, index, state.task_std, new_std, shared, state.transcript
        )

    fed, t_frl = _phase("frl", _frl)

    def _lrd():
        enc, curve = _train_party_encoder(cfg, seed, index, state.task_std, fed)
        encoders = (*state.encoders, enc)
        return encoders, (*state.loss_curves, tuple(curve)), enrich(
            encoders, state.task_std.features, ids=state.task_std.ids
        )

    (encoders, curves, enriched), t_lrd = _phase("lrd", _lrd)

    def _downstream():
        return _fit_downstream(cfg, seed, enriched.matrix, state.split)

    (model, acc), t_downstream = _phase("downstream", _downstream)

    row = RunRow(
        scenario="new_data_hospital",
        seed=seed,
        method="vfedtrans",
        accuracy=acc,
        t_frl=t_frl,
        t_lrd=t_lrd,
        t_downstream=t_downstream,
        transcript_digest=state.transcript.digest(),
    )
    new_split = ScenarioSplit(
        task=state.split.task,
        data_parties=(*state.split.data_parties, new_view),
        shared_ids=(*state.split.shared_ids, shared),
        train_mask=state.split.train_mask,
        test_mask=state.split.test_mask,
    )
    return PipelineOutcome(
        config=cfg,
        seed=seed,
        split=new_split,
        scaler=state.scaler,
        task_std=state.task_std,
        party_std=(*state.party_std, new_std),
        fed_reps=(*state.fed_reps, fed),
        encoders=encoders,
        loss_curves=curves,
        enriched=enriched,
        model=model,
        transcript=state.transcript,
        row=row,
    )


def retrain_for_new_task(state: PipelineOutcome, new_labels) -> tuple[RunRow, object]:
    """Swap the label column and redo downstream training only.

    No encoder is touched and no message is exchanged; the caller can verify
    both through encoder digests and the transcript length.
    """
    labels = check_labels(new_labels, state.split.task.n_samples, "new_labels")
    split = ScenarioSplit(
        task=PartyView(
            party_id=state.split.task.party_id,
            role="task",
            ids=state.split.task.ids,
            features=state.split.task.features,
            feature_names=state.split.task.feature_names,
            labels=labels,
        ),
        data_parties=state.split.data_parties,
        shared_ids=state.split.shared_ids,
        train_mask=state.split.train_mask,
        test_mask=state.split.test_mask,
    )

    def _downstream():
        return _fit_downstream(state.config, state.seed, state.enriched.matrix, split)

    (model, acc), t_downstream = _phase("downstream", _downstream)
    row = RunRow(
        scenario=state.config.scenario,
        seed=state.seed,
        method="vfedtrans",
        accuracy=acc,
        t_downstream=t_downstream,
        transcript_digest=state.transcript.digest(),
        note="new_task",
    )
    return row, model


def local_incremental(state: PipelineOutcome, extra_ids, extra_features
                      ) -> tuple[EncoderParams, ...]:
    """Retrain every encoder after the task hospital gains new local rows.

    The added rows are standardized with the frozen scaler and carry no
    distillation targets, so training happens entirely at the task hospital:
    the transcript gains zero messages.
    """
    extra = state.scaler.apply(extra_features)
    extra_ids = tuple(extra_ids)
    if len(extra_ids) != extra.shape[0]:
        raise ConfigError(
            f"{len(extra_ids)} ids for {extra.shape[0]} added rows"
        )
    overlap = set(extra_ids) & set(state.task_std.ids)
    if overlap:
        raise ConfigError(f"added row id {sorted(overlap)[0]!r} already present")
    # Unlabeled carrier view: distillation training never reads labels.
    extended = PartyView(
        party_id=state.task_std.party_id,
        role="data",
        ids=(*state.task_std.ids, *extra_ids),
        features=np.vstack([state.task_std.features, extra]),
        feature_names=state.task_std.feature_names,
    )
    ids = np.asarray(extended.ids, dtype=object)

    def _lrd():
        encoders = []
        for i, fed in enumerate(state.fed_reps):
            mask = np.isin(ids, np.asarray(fed.ids, dtype=object))
            dcfg = replace(
                state.config.lrd, seed=_derive_int(state.seed, _STREAM_LRD, i)
            )
            enc, _ = train_distilled_encoder(extended, mask, fed, dcfg)
            encoders.append(enc)
        return tuple(encoders)

    encoders, _ = _phase("lrd", _lrd)
    return encoders


# ------------------------------------------------------------------- audit


# Which message kinds may travel on which edges: the key generator only
# distributes masks, parties only upload masked blocks or eigen pairs, and
# the server only returns SVD factors or aggregated vectors.
_KIND_RULES = {
    "masking_keys": lambda s, r: s == "keygen" and r != "server",
    "masked_matrix": lambda s, r: s != "keygen" and s != "server" and r == "server",
    "svd_result": lambda s, r: s == "server" and r == "task",
    "eigen_pair": lambda s, r: s != "keygen" and s != "server" and r == "server",
    "aggregated_vector": lambda s, r: s == "server" and r != "server",
}


@dataclass(frozen=True)
class AuditViolation:
    step: int
    sender: str
    receiver: str
    kind: str
    detail: str

    def to_dict(self) -> dict:
        return {"step": self.step, "sender": self.sender,
                "receiver": self.receiver, "kind": self.kind,
                "detail": self.detail}


@dataclass(frozen=True)
class AuditReport:
    """Outcome of a transcript privacy audit."""

    violations: tuple[AuditViolation, ...]
    edge_kinds: dict

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "violations": [v.to_dict() for v in self.violations],
            "edges": {
                f"{s}->{r}": sorted(kinds)
                for (s, r), kinds in sorted(self.edge_kinds.items())
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _raw_digest_index(raw_views: dict) -> dict:
    index = {}
    for name, arr in raw_views.items():
        arr = np.asarray(arr, dtype=np.float64)
        index[array_digest(arr)] = name
        if arr.ndim == 2:
            for j in range(arr.shape[1]):
                col = np.ascontiguousarray(arr[:, j])
                index[array_digest(col)] = f"{name}[:, {j}]"
                index[array_digest(col.reshape(-1, 1))] = f"{name}[:, {j}]"
    return index


def audit_transcript(transcript: Transcript, raw_views: dict) -> AuditReport:
    """Check every recorded message against the privacy rules.

    Flags (a) any payload part whose digest equals a raw matrix or raw
    column digest, and (b) any message kind on an edge the protocols never
    use. The report also lists every payload kind observed per edge.
    """
    raw_index = _raw_digest_index(raw_views)
    violations = []
    edge_kinds = {}
    for record in transcript:
        edge = (record.sender, record.receiver)
        edge_kinds.setdefault(edge, set()).add(record.kind)
        rule = _KIND_RULES.get(record.kind)
        if rule is None:
            violations.append(AuditViolation(
                step=record.step, sender=record.sender, receiver=record.receiver,
                kind=record.kind, detail="unknown payload kind",
            ))
        elif not rule(record.sender.split(":")[0], record.receiver.split(":")[0]):
            violations.append(AuditViolation(
                step=record.step, sender=record.sender, receiver=record.receiver,
                kind=record.kind, detail="payload kind not allowed on this edge",
            ))
        for part, digest in enumerate(record.digests):
            if digest in raw_index:
                violations.append(AuditViolation(
                    step=record.step, sender=record.sender,
                    receiver=record.receiver, kind=record.kind,
                    detail=f"part {part} matches raw view {raw_index[digest]}",
                ))
    return AuditReport(violations=tuple(violations), edge_kinds=edge_kinds)


# ------------------------------------------------------------- CSV output


_RESULT_FIELDS = ("scenario", "axis", "axis_value", "seed", "method",
                  "accuracy", "transcript_digest", "note")
_TIMING_FIELDS = ("scenario", "axis", "axis_value", "seed", "method",
                  "t_frl", "t_lrd", "t_downstream", "t_total")


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def results_to_csv(result: RunResult, path) -> None:
    """Deterministic long-format scores; timings live in their own file."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_RESULT_FIELDS)
        for row in result.rows:
            writer.writerow([_cell(getattr(row, f)) for f in _RESULT_FIELDS])


def timings_to_csv(result: RunResult, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_TIMING_FIELDS)
        for row in result.rows:
            if row.method == "warning":
                continue
            writer.writerow([_cell(getattr(row, f)) for f in _TIMING_FIELDS])


def results_from_csv(path) -> RunResult:
    rows = []
    with open(path, newline="") as fh:
        for record in csv.DictReader(fh):
            rows.append(RunRow(
                scenario=record["scenario"],
                seed=int(record["seed"]),
                method=record["method"],
                accuracy=float(record["accuracy"]) if record["accuracy"] else None,
                axis=record["axis"],
                axis_value=record["axis_value"] or None,
                transcript_digest=record["transcript_digest"],
                note=record["note"],
            ))
    return RunResult(rows=tuple(rows))
