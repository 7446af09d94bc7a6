"""Command-line entry point.

Subcommands: generate scenario files, run an experiment, sweep an axis,
evaluate inductively, audit a transcript, and summarize results. Every
command reads one JSON config document, writes its artifacts under an
output directory, and records them in a manifest next to the config digest
and seed list. Exit codes: 0 success, 1 config or validation error,
2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import importlib.util
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .datasets import export_scenario, partition_scenario
from .exceptions import ConfigError, DataFormatError
from .orchestrator import (
    ExperimentConfig,
    audit_transcript,
    distill_ablation,
    inductive_eval,
    resolve_split_config,
    results_from_csv,
    results_to_csv,
    run_experiment,
    run_local_baseline,
    run_pipeline,
    sweep,
    timings_to_csv,
)
from .transcript import Transcript

log = logging.getLogger("fedistill")

_OUT_ENV = "FEDISTILL_OUT"


class _Parser(argparse.ArgumentParser):
    """Invocation mistakes are validation errors, so they exit 1."""

    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="fedistill",
        description="Simulate cross-hospital knowledge transfer experiments.",
    )
    parser.add_argument(
        "-v", "--verbose", action="store_true", help="log progress to stderr"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def _common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument(
            "--out", default=None,
            help=f"output directory (default: ${_OUT_ENV} or ./out)",
        )

    p = sub.add_parser("generate", help="write scenario CSV files for one seed")
    _common(p)
    p.add_argument("--seed", type=int, default=None,
                   help="partition seed (default: first configured seed)")

    p = sub.add_parser("run", help="run the experiment for every seed")
    _common(p)
    p.add_argument("--seeds", type=int, default=None,
                   help="override: use seeds 0..N-1")
    p.add_argument("--parallel-seeds", type=int, default=1, metavar="N",
                   help="run up to N seeds concurrently")

    p = sub.add_parser("sweep", help="repeat the run across axis values")
    _common(p)
    p.add_argument("--axis", required=True,
                   choices=("task_features", "data_features", "shared_samples",
                            "n_parties"))
    p.add_argument("--values", required=True,
                   help="comma-separated integers, e.g. 50,100,200")
    p.add_argument("--parallel-seeds", type=int, default=1, metavar="N")

    p = sub.add_parser("inductive", help="score frozen models on unseen samples")
    _common(p)
    p.add_argument("--mode", required=True, choices=("iid", "noniid"))

    p = sub.add_parser("audit", help="check a transcript for privacy violations")
    p.add_argument("--transcript", required=True, help="transcript JSON file")
    p.add_argument("--views", required=True,
                   help="directory of raw view CSV files")
    p.add_argument("--out", default=None)

    p = sub.add_parser("report", help="summarize a results CSV")
    p.add_argument("--results", required=True, help="results.csv from a run")
    p.add_argument("--out", default=None)
    p.add_argument("--plot", action="store_true",
                   help="also write a PNG bar chart (needs the plot extra)")
    return parser


def _outdir(args) -> Path:
    out = args.out or os.environ.get(_OUT_ENV) or "out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    try:
        return ExperimentConfig.from_dict(doc)
    except KeyError as exc:
        raise ConfigError(f"config {path} is missing key {exc.args[0]!r}") from exc


def _write_manifest(out: Path, command: str, cfg: ExperimentConfig | None,
                    artifacts: list[str]) -> None:
    doc = {
        "command": command,
        "config_digest": cfg.digest() if cfg is not None else None,
        "seeds": list(cfg.seeds) if cfg is not None else [],
        "artifacts": sorted(artifacts),
        "created_unix": time.time(),
    }
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
    log.info("wrote %s", out / "manifest.json")


def _write(out: Path, name: str, text: str, artifacts: list[str]) -> None:
    (out / name).write_text(text)
    artifacts.append(name)
    log.info("wrote %s", out / name)


def _print_summary(result) -> None:
    for method, stats in result.summary().items():
        print(f"{method}: {stats['display']} over {stats['n']} runs")


def _write_result_files(out: Path, result, artifacts: list[str]) -> None:
    results_to_csv(result, out / "results.csv")
    artifacts.append("results.csv")
    timings_to_csv(result, out / "timings.csv")
    artifacts.append("timings.csv")


def _cmd_generate(args) -> int:
    cfg = _load_config(args.config)
    out = _outdir(args)
    seed = cfg.seeds[0] if args.seed is None else args.seed
    ds = cfg.dataset.load()
    split = partition_scenario(ds, resolve_split_config(cfg, seed), seed)
    files = export_scenario(split, out)
    _write_manifest(out, "generate", cfg, [Path(f).name for f in files])
    print(f"wrote {len(files)} scenario files to {out}")
    return 0


def _cmd_run(args) -> int:
    cfg = _load_config(args.config)
    if args.seeds is not None:
        if args.seeds < 1:
            raise ConfigError(f"--seeds must be >= 1, got {args.seeds}")
        cfg = replace(cfg, seeds=tuple(range(args.seeds)))
    out = _outdir(args)
    n_jobs = args.parallel_seeds

    if cfg.scenario in ("inductive_iid", "inductive_noniid"):
        result = inductive_eval(cfg, cfg.scenario.removeprefix("inductive_"))
    elif cfg.scenario == "distill_ablation":
        result = distill_ablation(cfg, n_jobs=n_jobs)
    else:
        result = run_experiment(cfg, n_jobs=n_jobs)

    artifacts: list[str] = []
    _write_result_files(out, result, artifacts)

    if cfg.scenario not in ("inductive_iid", "inductive_noniid"):
        seed = cfg.seeds[0]
        outcome = run_pipeline(cfg, seed)
        baseline = run_local_baseline(cfg, seed)
        _write(out, f"transcript_seed{seed}.json",
               outcome.transcript.to_json(), artifacts)
        report = audit_transcript(outcome.transcript, outcome.raw_view_index())
        _write(out, "audit.json", report.to_json(), artifacts)
        for i, enc in enumerate(outcome.encoders):
            _write(out, f"encoder_seed{seed}_party{i}.json", enc.to_json(), artifacts)
        _write(out, f"model_seed{seed}_vfedtrans.json",
               outcome.model.to_json(), artifacts)
        _write(out, f"model_seed{seed}_local.json",
               baseline.model.to_json(), artifacts)

    _write_manifest(out, "run", cfg, artifacts)
    _print_summary(result)
    return 0


def _cmd_sweep(args) -> int:
    cfg = _load_config(args.config)
    try:
        values = [int(v) for v in args.values.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"--values must be comma-separated integers: {exc}")
    if not values:
        raise ConfigError("--values must name at least one integer")
    out = _outdir(args)
    result = sweep(cfg, args.axis, values, n_jobs=args.parallel_seeds)
    artifacts: list[str] = []
    _write_result_files(out, result, artifacts)
    _write_manifest(out, "sweep", cfg, artifacts)
    warned = [r for r in result.rows if r.method == "warning"]
    for row in warned:
        print(f"warning: {args.axis}={row.axis_value} skipped: {row.note}",
              file=sys.stderr)
    _print_summary(result)
    return 0


def _cmd_inductive(args) -> int:
    cfg = _load_config(args.config)
    out = _outdir(args)
    result = inductive_eval(cfg, args.mode)
    artifacts: list[str] = []
    _write_result_files(out, result, artifacts)
    _write_manifest(out, "inductive", cfg, artifacts)
    _print_summary(result)
    return 0


def _load_view_matrix(path: Path):
    """Numeric columns of a view CSV, skipping ids and non-numeric columns."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return None
        rows = list(reader)
    if not rows:
        return None
    keep = []
    for j, name in enumerate(header):
        if name == "id":
            continue
        try:
            for row in rows:
                float(row[j])
        except (ValueError, IndexError):
            continue
        keep.append(j)
    if not keep:
        return None
    return np.array([[float(row[j]) for j in keep] for row in rows])


def _cmd_audit(args) -> int:
    try:
        transcript = Transcript.from_json(Path(args.transcript).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read transcript {args.transcript}: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"transcript {args.transcript} is not valid JSON: {exc}")
    views_dir = Path(args.views)
    if not views_dir.is_dir():
        raise ConfigError(f"--views {args.views} is not a directory")
    views = {}
    for path in sorted(views_dir.glob("*.csv")):
        matrix = _load_view_matrix(path)
        if matrix is not None:
            views[path.stem] = matrix
    out = _outdir(args)
    report = audit_transcript(transcript, views)
    (out / "audit.json").write_text(report.to_json())
    _write_manifest(out, "audit", None, ["audit.json"])
    print(f"audited {len(transcript)} messages against {len(views)} views: "
          f"{len(report.violations)} violation(s)")
    return 0 if report.ok else 2


def _cmd_report(args) -> int:
    result = results_from_csv(Path(args.results))
    out = _outdir(args)
    summary = result.summary()
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    artifacts = ["summary.json"]
    if args.plot:
        if importlib.util.find_spec("matplotlib") is None:
            raise ConfigError(
                "plotting requires matplotlib; install the 'plot' extra"
            )
        artifacts.append(_write_plot(summary, out / "summary.png"))
    _write_manifest(out, "report", None, artifacts)
    _print_summary(result)
    return 0


def _write_plot(summary: dict, path: Path) -> str:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    methods = sorted(summary)
    means = [summary[m]["mean"] for m in methods]
    stds = [summary[m]["std"] for m in methods]
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.bar(methods, means, yerr=stds, capsize=4)
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path.name


_COMMANDS = {
    "generate": _cmd_generate,
    "run": _cmd_run,
    "sweep": _cmd_sweep,
    "inductive": _cmd_inductive,
    "audit": _cmd_audit,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help exits through here
        return int(exc.code or 0)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, DataFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failures carry phase context
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
