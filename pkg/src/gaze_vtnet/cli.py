"""Command-line front end: synth, evaluate, gradcheck, summarize, report.

Exit codes: 0 success, 1 runtime failure, 2 usage error. All randomness
flows from --seed; no wall-clock entropy anywhere, so repeated invocations
with identical flags produce byte-identical outputs. Every run writes
resolved_config.json into its output directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

from gaze_vtnet import __version__, baselines, evalharness, gazedata, preprocess, synthgen, vtnet

MODEL_CHOICES = ("vtnet", "vtnet-att", "gnb", "logreg")


class UsageError(Exception):
    pass


def _default_jobs() -> int:
    raw = os.environ.get("GAZE_VTNET_JOBS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _parse_cutoff(text: str) -> int | None:
    if text == "none":
        return None
    try:
        value = int(text)
    except ValueError:
        raise UsageError(f"--cutoff must be 'none' or a positive integer, got {text!r}") from None
    if value < 1:
        raise UsageError("--cutoff must be positive")
    return value


def _write_resolved_config(out_dir: Path, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = dict(payload, package_version=__version__)
    (out_dir / "resolved_config.json").write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def cmd_synth(args) -> int:
    try:
        config = synthgen.SynthConfig(
            n_patients=args.patients,
            n_controls=args.controls,
            task=args.task,
            epsilon=args.epsilon,
            seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out_dir = Path(args.out)
    _, manifest_path = synthgen.gen_dataset(config, out_dir)
    _write_resolved_config(
        out_dir,
        {
            "command": "synth",
            "task": args.task,
            "patients": args.patients,
            "controls": args.controls,
            "epsilon": args.epsilon,
            "seed": args.seed,
        },
    )
    print(manifest_path)
    return 0


def _load_model_config(path: str | None) -> vtnet.VTNetConfig:
    if path is None:
        return vtnet.VTNetConfig()
    try:
        doc = json.loads(Path(path).read_text())
        return vtnet.VTNetConfig(**doc.get("model", doc))
    except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
        raise UsageError(f"bad --config file: {exc}") from None


def classifier_label(model: str, cutoff: int | None) -> str:
    if model == "gnb":
        return "GNB"
    if model == "logreg":
        return "LogReg"
    label = "VTNet_full" if cutoff is None else f"VTNet_{cutoff}"
    return label + "_att" if model == "vtnet-att" else label


def _build_spec(model: str, cutoff: int | None, config: vtnet.VTNetConfig):
    label = classifier_label(model, cutoff)
    if model == "gnb":
        spec = baselines.GnbSpec()
    elif model == "logreg":
        spec = baselines.LogRegSpec()
    else:
        config = replace(config, attention_enabled=(model == "vtnet-att"))
        spec = vtnet.VTNetSpec(config)
    spec.name = label
    return spec


def cmd_evaluate(args) -> int:
    cutoff = _parse_cutoff(args.cutoff)
    if args.folds < 2:
        raise UsageError("--folds must be at least 2")
    if args.runs < 1:
        raise UsageError("--runs must be at least 1")
    model_config = _load_model_config(args.config)
    spec = _build_spec(args.model, cutoff, model_config)

    manifest = gazedata.load_manifest(args.manifest)
    recordings, _ = gazedata.load_recordings(manifest)
    by_task: dict[str, list] = {}
    for rec in recordings:
        by_task.setdefault(rec.task, []).append(rec)

    for task, recs in sorted(by_task.items()):
        users = {r.user_id for r in recs}
        if args.folds > len(users):
            raise UsageError(f"k={args.folds} exceeds user count {len(users)} for task {task}")

    out_dir = Path(args.out)
    reports = []
    all_datapoints = []
    image_size = (model_config.image_h, model_config.image_w)
    for task in sorted(by_task):
        kept, _ = gazedata.remove_length_outliers(by_task[task], task)
        datapoints = preprocess.build_datapoints(kept, k=4, cutoff=cutoff, image_size=image_size)
        all_datapoints.extend(datapoints)
        reports.append(
            evalharness.run_cv(
                datapoints,
                spec,
                runs=args.runs,
                k=args.folds,
                master_seed=args.seed,
                jobs=args.jobs,
                user_level=args.user_level,
                fold_pooling=args.fold_pooling,
                config_info={"model": args.model, "cutoff": cutoff, "config": asdict(model_config)},
            )
        )
    report = evalharness.merge_reports(reports)
    paths = evalharness.emit_report(report, out_dir)
    if args.dump_features:
        baselines.dump_features_csv(all_datapoints, out_dir / "features.csv")
    if args.svg:
        from gaze_vtnet import figures

        figures.render_metric_means(report, out_dir / "metrics.svg")
    _write_resolved_config(
        out_dir,
        {
            "command": "evaluate",
            "manifest": str(args.manifest),
            "model": args.model,
            "cutoff": args.cutoff,
            "runs": args.runs,
            "folds": args.folds,
            "seed": args.seed,
            "jobs": args.jobs,
            "user_level": args.user_level,
            "fold_pooling": args.fold_pooling,
            "svg": bool(args.svg),
            "dump_features": bool(args.dump_features),
            "model_config": asdict(model_config),
        },
    )
    print(paths["summary"].read_text(), end="")
    return 0


def cmd_gradcheck(args) -> int:
    from gaze_vtnet import gradchecks

    results = gradchecks.run_suite(seed=args.seed, fault=args.inject_fault)
    failed = False
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:<16} max_rel_err={r.max_err:.3e} threshold={r.threshold:.0e} {status}")
        failed |= not r.passed
    return 1 if failed else 0


def cmd_summarize(args) -> int:
    manifest = gazedata.load_manifest(args.manifest)
    recordings, _ = gazedata.load_recordings(manifest)
    rows = gazedata.summarize_lengths(recordings)
    header = ("task", "group", "n", "mean", "std", "median", "min", "max")
    formatted = [
        (
            r.task,
            r.group,
            str(r.n),
            f"{r.mean:.6g}",
            f"{r.std:.6g}",
            f"{r.median:.6g}",
            str(r.min),
            str(r.max),
        )
        for r in rows
    ]
    widths = [max(len(h), *(len(f[i]) for f in formatted)) for i, h in enumerate(header)]
    print("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    for f in formatted:
        print("  ".join(v.ljust(w) for v, w in zip(f, widths)))
    if args.csv:
        lines = [",".join(header)] + [",".join(f) for f in formatted]
        Path(args.csv).write_text("\n".join(lines) + "\n")
    return 0


def cmd_report(args) -> int:
    from gaze_vtnet import figures

    report_path = Path(args.report)
    if report_path.is_dir():
        report_path = report_path / "report.json"
    doc = json.loads(report_path.read_text())
    blocks = []
    for b in doc["blocks"]:
        block = evalharness.ResultBlock(classifier=b["classifier"], task=b["task"], runs=[])
        block.mean = b["mean"]
        block.std = b["std"]
        blocks.append(block)
    report = evalharness.ExperimentReport(
        blocks=blocks,
        k=doc["k"],
        n_runs=doc["runs"],
        master_seed=doc["master_seed"],
        fingerprint=doc["fingerprint"],
    )
    out = figures.render_metric_means(report, report_path.parent / "metrics.svg")
    print(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gaze-vtnet", description="gaze sequence classification toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    p.add_argument("--out", required=True)
    p.add_argument("--task", required=True, choices=gazedata.TASKS)
    p.add_argument("--patients", type=int, default=20)
    p.add_argument("--controls", type=int, default=20)
    p.add_argument("--epsilon", type=float, default=1.0, help="class separability in [0, 1]")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("evaluate", help="cross-validate a model on a dataset")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True, choices=MODEL_CHOICES)
    p.add_argument("--cutoff", default="none", help="'none' or a positive integer (e.g. 1000, 2000)")
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=_default_jobs())
    p.add_argument("--config", default=None, help="JSON file with model-config overrides")
    p.add_argument("--user-level", action="store_true", help="also report user-level metrics")
    p.add_argument("--fold-pooling", choices=("run", "fold"), default="run")
    p.add_argument("--svg", action="store_true", help="render a metric-means bar chart")
    p.add_argument("--dump-features", action="store_true",
                   help="also write features.csv (one summary-feature row per datapoint)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradient kernels")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-fault", action="store_true", help="test hook: corrupt one backward")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("summarize", help="sequence-length statistics for a dataset")
    p.add_argument("--manifest", required=True)
    p.add_argument("--csv", default=None, help="also write the table to this CSV path")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("report", help="render the metric-means figure from an existing report")
    p.add_argument("--report", required=True, help="report.json or the directory containing it")
    p.add_argument("--svg", action="store_true", help="SVG is the only output format")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (gazedata.ParseError, vtnet.CheckpointError, vtnet.TrainingDiverged, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
