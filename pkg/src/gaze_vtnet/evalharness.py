"""User-grouped stratified cross-validation, metrics and report emission.

Folds partition users, never datapoints, so all datapoints from one user
land on the same side of every train/test split. Per-channel normalization
statistics are fitted inside each fold on training users only. Runs and
folds are independent; with ``jobs > 1`` they execute in worker processes
and are merged in a deterministic order, so parallel and serial execution
produce identical bytes.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from gaze_vtnet.preprocess import Datapoint, fit_channel_stats

METRICS = ("auc", "sensitivity", "specificity")

_MASK64 = (1 << 64) - 1


def splitmix64(seed: int, index: int) -> int:
    """Deterministic 64-bit stream-splitting mix of (seed, index)."""
    z = (seed + (index + 1) * 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


@dataclass
class FoldPlan:
    k: int
    seed: int
    folds: list[list[str]]               # sorted user ids per fold
    class_counts: list[dict[str, int]]   # per-fold stratification report

    def test_users(self, fold: int) -> frozenset[str]:
        return frozenset(self.folds[fold])


def stratified_group_kfold(users: list[tuple[str, str]], k: int, seed: int) -> FoldPlan:
    """Shuffle users within class by seed, then deal them round-robin into folds.

    The folds partition the user set and per-fold class counts deviate from
    exact proportionality by at most one.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    if k > len(users):
        raise ValueError(f"k={k} exceeds user count {len(users)}")
    if len({u for u, _ in users}) != len(users):
        raise ValueError("duplicate user ids")
    labels = {lab for _, lab in users}
    if not labels <= {"patient", "control"}:
        raise ValueError(f"unknown labels {labels}")
    if len(labels) < 2:
        raise ValueError("need at least one user per class")

    rng = np.random.default_rng(seed)
    folds: list[list[str]] = [[] for _ in range(k)]
    counts = [{"patient": 0, "control": 0} for _ in range(k)]
    for label in ("control", "patient"):
        ids = sorted(u for u, lab in users if lab == label)
        rng.shuffle(ids)
        for i, uid in enumerate(ids):
            folds[i % k].append(uid)
            counts[i % k][label] += 1
    return FoldPlan(k=k, seed=seed, folds=[sorted(f) for f in folds], class_counts=counts)


def roc_auc(scores, labels) -> float:
    """Probability a random positive outscores a random negative (ties count 0.5).

    Computed from tie-averaged ranks, which equals the exhaustive pairwise
    count exactly.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = int(scores.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("need at least one positive and one negative")
    order = np.argsort(scores, kind="mergesort")
    s = scores[order]
    ranks_sorted = np.empty(s.size, dtype=np.float64)
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and s[j + 1] == s[i]:
            j += 1
        ranks_sorted[i : j + 1] = 0.5 * (i + j) + 1.0
        i = j + 1
    ranks = np.empty(s.size, dtype=np.float64)
    ranks[order] = ranks_sorted
    u_stat = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_stat / (n_pos * n_neg))


def sensitivity_specificity(predicted, labels) -> tuple[float, float]:
    """(true positive rate over patients, true negative rate over controls)."""
    predicted = np.asarray(predicted)
    labels = np.asarray(labels)
    pos = labels == 1
    if not pos.any() or pos.all():
        raise ValueError("need at least one positive and one negative label")
    sensitivity = float((predicted[pos] == 1).mean())
    specificity = float((predicted[~pos] == 0).mean())
    return sensitivity, specificity


@dataclass
class ScoredRow:
    fold: int
    user_id: str
    split_index: int
    label: int
    score: float
    predicted: int


@dataclass
class RunResult:
    run_index: int
    seed: int
    rows: list[ScoredRow]
    metrics: dict[str, float]
    user_metrics: dict[str, float] | None = None


@dataclass
class ResultBlock:
    classifier: str
    task: str
    runs: list[RunResult]
    mean: dict[str, float] = field(default_factory=dict)
    std: dict[str, float] = field(default_factory=dict)

    def finalize(self) -> None:
        for m in METRICS:
            vals = np.array([r.metrics[m] for r in self.runs], dtype=np.float64)
            self.mean[m] = float(vals.mean())
            self.std[m] = float(vals.std())


@dataclass
class ExperimentReport:
    blocks: list[ResultBlock]
    k: int
    n_runs: int
    master_seed: int
    fingerprint: str


def _fingerprint(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()


def _execute_fold(datapoints, spec, run_idx, fold_idx, test_users, fit_seed):
    train = [dp for dp in datapoints if dp.user_id not in test_users]
    test = [dp for dp in datapoints if dp.user_id in test_users]
    stats = fit_channel_stats(train, fold_id=f"run{run_idx}/fold{fold_idx}")
    fitted = spec.fit(train, stats, fit_seed)
    test = sorted(test, key=lambda dp: (dp.user_id, dp.split_index))
    if hasattr(spec, "score_batch"):
        scores = spec.score_batch(fitted, test)
    else:
        scores = [spec.score(fitted, dp) for dp in test]
    rows = [
        ScoredRow(
            fold=fold_idx,
            user_id=dp.user_id,
            split_index=dp.split_index,
            label=1 if dp.label == "patient" else 0,
            score=float(s),
            predicted=int(float(s) > 0.5),
        )
        for dp, s in zip(test, scores)
    ]
    return run_idx, fold_idx, rows


_WORKER_CTX: dict = {}


def _init_worker(datapoints, spec) -> None:
    _WORKER_CTX["datapoints"] = datapoints
    _WORKER_CTX["spec"] = spec


def _fold_task(args):
    return _execute_fold(_WORKER_CTX["datapoints"], _WORKER_CTX["spec"], *args)


def _pool_metrics(rows: list[ScoredRow]) -> dict[str, float]:
    labels = [r.label for r in rows]
    sens, spec_ = sensitivity_specificity([r.predicted for r in rows], labels)
    return {"auc": roc_auc([r.score for r in rows], labels), "sensitivity": sens, "specificity": spec_}


def _fold_averaged_metrics(rows: list[ScoredRow]) -> dict[str, float]:
    per_fold = []
    for fold in sorted({r.fold for r in rows}):
        fold_rows = [r for r in rows if r.fold == fold]
        labels = {r.label for r in fold_rows}
        if labels == {0, 1}:
            per_fold.append(_pool_metrics(fold_rows))
    if not per_fold:
        raise ValueError("no fold contains both classes; use run-level pooling")
    return {m: float(np.mean([f[m] for f in per_fold])) for m in METRICS}


def _user_metrics(rows: list[ScoredRow]) -> dict[str, float]:
    by_user: dict[str, list[ScoredRow]] = {}
    for r in rows:
        by_user.setdefault(r.user_id, []).append(r)
    scores, labels = [], []
    for uid in sorted(by_user):
        rs = by_user[uid]
        scores.append(float(np.mean([r.score for r in rs])))
        labels.append(rs[0].label)
    predicted = [int(s > 0.5) for s in scores]
    sens, spec_ = sensitivity_specificity(predicted, labels)
    return {"auc": roc_auc(scores, labels), "sensitivity": sens, "specificity": spec_}


def run_cv(
    datapoints: list[Datapoint],
    spec,
    runs: int = 10,
    k: int = 10,
    master_seed: int = 0,
    jobs: int = 1,
    user_level: bool = False,
    fold_pooling: str = "run",
    config_info: dict | None = None,
) -> ExperimentReport:
    """Repeated user-grouped stratified k-fold CV of one model spec.

    Per run: derive an independent seed, plan folds over users, then per fold
    fit fold-local channel statistics and the model on training users and
    score every datapoint of the held-out users. Metrics are computed on the
    run's pooled predictions by default (``fold_pooling="fold"`` averages
    per-fold metrics instead, for sensitivity analysis).
    """
    if not datapoints:
        raise ValueError("no datapoints")
    tasks_present = {dp.task for dp in datapoints}
    if len(tasks_present) != 1:
        raise ValueError(f"datapoints span multiple tasks {sorted(tasks_present)}; run one task at a time")
    if fold_pooling not in ("run", "fold"):
        raise ValueError("fold_pooling must be 'run' or 'fold'")
    task = tasks_present.pop()
    user_labels: dict[str, str] = {}
    for dp in datapoints:
        prev = user_labels.setdefault(dp.user_id, dp.label)
        if prev != dp.label:
            raise ValueError(f"conflicting labels for user {dp.user_id}")
    users = sorted(user_labels.items())

    plans = []
    worklist = []
    for r in range(runs):
        seed_r = splitmix64(master_seed, r)
        plan = stratified_group_kfold(users, k, seed_r)
        plans.append(plan)
        for f in range(k):
            worklist.append((r, f, plan.test_users(f), splitmix64(seed_r, f + 1)))

    if jobs > 1:
        with ProcessPoolExecutor(
            max_workers=jobs, initializer=_init_worker, initargs=(datapoints, spec)
        ) as pool:
            outcomes = list(pool.map(_fold_task, worklist))
    else:
        outcomes = [_execute_fold(datapoints, spec, *w) for w in worklist]

    by_run: dict[int, list[ScoredRow]] = {r: [] for r in range(runs)}
    for run_idx, fold_idx, rows in sorted(outcomes, key=lambda o: (o[0], o[1])):
        by_run[run_idx].extend(rows)

    run_results = []
    for r in range(runs):
        rows = by_run[r]
        metrics = _pool_metrics(rows) if fold_pooling == "run" else _fold_averaged_metrics(rows)
        run_results.append(
            RunResult(
                run_index=r,
                seed=plans[r].seed,
                rows=rows,
                metrics=metrics,
                user_metrics=_user_metrics(rows) if user_level else None,
            )
        )

    block = ResultBlock(classifier=getattr(spec, "name", type(spec).__name__), task=task, runs=run_results)
    block.finalize()
    fingerprint = _fingerprint(
        {
            "classifier": block.classifier,
            "task": task,
            "runs": runs,
            "k": k,
            "master_seed": master_seed,
            "fold_pooling": fold_pooling,
            "config": config_info or {},
        }
    )
    return ExperimentReport(blocks=[block], k=k, n_runs=runs, master_seed=master_seed, fingerprint=fingerprint)


def merge_reports(reports: list[ExperimentReport]) -> ExperimentReport:
    """Combine single-model reports produced under the same harness settings."""
    if not reports:
        raise ValueError("nothing to merge")
    first = reports[0]
    for rep in reports[1:]:
        if (rep.k, rep.n_runs, rep.master_seed) != (first.k, first.n_runs, first.master_seed):
            raise ValueError("cannot merge reports with different harness settings")
    blocks = [b for rep in reports for b in rep.blocks]
    fingerprint = _fingerprint({"merged": [rep.fingerprint for rep in reports]})
    return ExperimentReport(
        blocks=blocks, k=first.k, n_runs=first.n_runs, master_seed=first.master_seed, fingerprint=fingerprint
    )


def report_as_dict(report: ExperimentReport) -> dict:
    return {
        "schema_version": 1,
        "k": report.k,
        "runs": report.n_runs,
        "master_seed": report.master_seed,
        "fingerprint": report.fingerprint,
        "blocks": [
            {
                "classifier": b.classifier,
                "task": b.task,
                "mean": b.mean,
                "std": b.std,
                "runs": [asdict(r) for r in b.runs],
            }
            for b in report.blocks
        ],
    }


def emit_report(report: ExperimentReport, out_dir: str | Path) -> dict[str, Path]:
    """Write report.json, summary.csv and per_run.csv; byte-stable for fixed inputs."""
    if not report.blocks or any(not b.runs for b in report.blocks):
        raise ValueError("report contains an empty run list")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    report_path = out_dir / "report.json"
    report_path.write_text(json.dumps(report_as_dict(report), sort_keys=True, indent=2) + "\n")

    summary_lines = ["classifier,task,metric,mean,std"]
    for b in report.blocks:
        for m in METRICS:
            summary_lines.append(f"{b.classifier},{b.task},{m},{b.mean[m]!r},{b.std[m]!r}")
    summary_path = out_dir / "summary.csv"
    summary_path.write_text("\n".join(summary_lines) + "\n")

    per_run_lines = ["classifier,task,run," + ",".join(METRICS)]
    for b in report.blocks:
        for r in b.runs:
            vals = ",".join(repr(r.metrics[m]) for m in METRICS)
            per_run_lines.append(f"{b.classifier},{b.task},{r.run_index},{vals}")
    per_run_path = out_dir / "per_run.csv"
    per_run_path.write_text("\n".join(per_run_lines) + "\n")

    return {"report": report_path, "summary": summary_path, "per_run": per_run_path}
