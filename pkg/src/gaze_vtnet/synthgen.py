"""Seeded synthetic gaze cohorts with controllable class separability.

Recordings are pure functions of (label, task, separability, rng stream).
Base behavior per task: a central fixation with jitter (calibration),
left-to-right fixation sweeps with line returns (reading), and dwell hops
among a handful of latent regions (picture). Patient effects are scaled by
the separability knob epsilon: square-wave-jerk insertions, a higher
regression/refixation probability, a slower sweep, and noisier pupils. At
epsilon = 0 patients and controls are drawn from identical distributions,
consuming identical rng streams.

Sequence lengths are lognormal, moment-matched to per-task mean/std targets;
lengths are long right tails, so a lognormal is the natural family. Motif
magnitudes exist to create learnable class structure, not to model clinical
oculomotor dynamics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from gaze_vtnet.evalharness import splitmix64
from gaze_vtnet.gazedata import (
    LABELS,
    SAMPLE_INTERVAL_MS,
    TASKS,
    DatasetManifest,
    Recording,
    serialize_recording,
)

# per-task sequence-length targets: (mean, std)
TASK_LENGTH_TARGETS: dict[str, tuple[float, float]] = {
    "calibration": (1403.0, 249.0),
    "picture": (7948.0, 4626.0),
    "reading": (7080.0, 2719.0),
}

MIN_LENGTH = 8

# patient-effect magnitudes (scaled by epsilon)
SWJ_RATE_PER_SAMPLE = 0.004          # insertion rate at epsilon = 1
SWJ_AMPLITUDE = (0.02, 0.04)         # normalized horizontal offset
SWJ_DURATION_MS = (20.0, 80.0)
REGRESSION_DELTA = 0.10              # added regression probability
SWEEP_SLOWDOWN = 0.3                 # sweep speed factor = 1 - 0.3 * epsilon
PUPIL_NOISE_SCALE = 1.0              # pupil noise std factor = 1 + epsilon

BASE_REGRESSION_PROB = 0.04
BASE_ADVANCE = 0.035                 # normalized x per reading fixation
FIXATION_JITTER = 0.006

HEAD_DISTANCE_MM = 650.0
PUPIL_MM = 3.5


@dataclass(frozen=True)
class SynthConfig:
    n_patients: int
    n_controls: int
    task: str
    epsilon: float
    seed: int
    length_mean: float | None = None
    length_std: float | None = None

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.n_patients < 1 or self.n_controls < 1:
            raise ValueError("class counts must be at least 1")

    def length_targets(self) -> tuple[float, float]:
        mean, std = TASK_LENGTH_TARGETS[self.task]
        return (self.length_mean or mean, self.length_std or std)


def lognormal_params(mean: float, std: float) -> tuple[float, float]:
    """(mu, sigma) of a lognormal with the given mean and std (moment matching)."""
    sigma2 = np.log1p((std / mean) ** 2)
    return float(np.log(mean) - sigma2 / 2.0), float(np.sqrt(sigma2))


def _draw_length(rng: np.random.Generator, mean: float, std: float) -> int:
    mu, sigma = lognormal_params(mean, std)
    return max(MIN_LENGTH, int(round(rng.lognormal(mu, sigma))))


def _ar1(n: int, phi: float, sd: float, rng: np.random.Generator) -> np.ndarray:
    innovations = rng.normal(0.0, sd, n).tolist()
    out = []
    prev = 0.0
    for w in innovations:
        prev = phi * prev + w
        out.append(prev)
    return np.asarray(out)


def _insert_square_wave_jerks(gx: np.ndarray, eff: float, rng: np.random.Generator) -> None:
    n = gx.shape[0]
    n_events = int(round(n * SWJ_RATE_PER_SAMPLE * eff))
    for _ in range(n_events):
        start = int(rng.integers(0, n))
        dur_ms = rng.uniform(*SWJ_DURATION_MS)
        dur = max(1, int(round(dur_ms / SAMPLE_INTERVAL_MS)))
        amp = rng.uniform(*SWJ_AMPLITUDE) * (1.0 if rng.random() < 0.5 else -1.0)
        gx[start : start + dur] += amp


def _gaze_calibration(n: int, eff: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    gx = 0.5 + rng.normal(0.0, 0.008, n)
    gy = 0.5 + rng.normal(0.0, 0.008, n)
    _insert_square_wave_jerks(gx, eff, rng)
    return gx, gy


def _gaze_reading(n: int, eff: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    gx = np.empty(n)
    gy = np.empty(n)
    x_left, x_right = 0.08, 0.92
    line_ys = np.linspace(0.15, 0.85, 9)
    advance = BASE_ADVANCE * (1.0 - SWEEP_SLOWDOWN * eff)
    p_reg = BASE_REGRESSION_PROB + REGRESSION_DELTA * eff
    x = x_left
    line = 0
    i = 0
    while i < n:
        dwell = max(3, int(round(rng.normal(22.0, 6.0))))
        dwell = min(dwell, n - i)
        gx[i : i + dwell] = x + rng.normal(0.0, FIXATION_JITTER, dwell)
        gy[i : i + dwell] = line_ys[line] + rng.normal(0.0, FIXATION_JITTER, dwell)
        i += dwell
        if rng.random() < p_reg:
            x = max(x_left, x - (0.05 + 0.10 * rng.random()))  # regression / re-fixation
        else:
            x += advance * (0.8 + 0.4 * rng.random())
        if x > x_right:
            x = x_left
            line = (line + 1) % len(line_ys)
    _insert_square_wave_jerks(gx, eff, rng)
    return gx, gy


def _gaze_picture(n: int, eff: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    regions = rng.uniform(0.12, 0.88, size=(8, 2))
    p_refix = 0.10 + 0.20 * eff
    gx = np.empty(n)
    gy = np.empty(n)
    current = int(rng.integers(0, len(regions)))
    previous = current
    i = 0
    while i < n:
        dwell = max(6, int(round(rng.lognormal(np.log(55.0), 0.45))))  # ~300-800 ms dwells
        dwell = min(dwell, n - i)
        cx, cy = regions[current]
        gx[i : i + dwell] = cx + rng.normal(0.0, 0.01, dwell)
        gy[i : i + dwell] = cy + rng.normal(0.0, 0.01, dwell)
        i += dwell
        nxt = int(rng.integers(0, len(regions)))
        if rng.random() < p_refix:
            nxt = previous  # return to the region just left
        previous, current = current, nxt
    _insert_square_wave_jerks(gx, eff, rng)
    return gx, gy


_TRACES = {
    "calibration": _gaze_calibration,
    "reading": _gaze_reading,
    "picture": _gaze_picture,
}


def gen_recording(
    label: str,
    task: str,
    epsilon: float,
    rng: np.random.Generator,
    length_targets: tuple[float, float] | None = None,
) -> Recording:
    """One synthetic recording; identical rng streams give identical output.

    Patient effects scale with epsilon; for controls (or epsilon = 0) every
    effect magnitude is zero while the rng consumption pattern is unchanged,
    so at epsilon = 0 the two classes are draw-for-draw identical.
    """
    if label not in LABELS:
        raise ValueError(f"unknown label {label!r}")
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    eff = epsilon if label == "patient" else 0.0
    mean, std = length_targets or TASK_LENGTH_TARGETS[task]
    n = _draw_length(rng, mean, std)
    t = np.arange(n, dtype=np.float64) * SAMPLE_INTERVAL_MS

    gx, gy = _TRACES[task](n, eff, rng)

    hd_l = HEAD_DISTANCE_MM + rng.normal(0.0, 4.0) + _ar1(n, 0.995, 0.25, rng)
    hd_r = hd_l + 2.0 + rng.normal(0.0, 0.2, n)
    pupil_sd = 0.02 * (1.0 + PUPIL_NOISE_SCALE * eff)
    p_l = PUPIL_MM + rng.normal(0.0, 0.1) + _ar1(n, 0.98, pupil_sd, rng)
    p_l = p_l + rng.normal(0.0, pupil_sd, n)
    p_r = p_l + 0.05 + rng.normal(0.0, pupil_sd, n)

    channels = np.column_stack([gx, gy, np.maximum(hd_l, 1.0), np.maximum(hd_r, 1.0),
                                np.maximum(p_l, 0.1), np.maximum(p_r, 0.1)])
    return Recording(user_id="", task=task, label=label, t=t, channels=channels)


def gen_cohort(config: SynthConfig) -> list[Recording]:
    """All recordings of a cohort, with per-user seeds derived from the master seed."""
    recordings = []
    roster = [("patient", f"p{i:03d}") for i in range(config.n_patients)]
    roster += [("control", f"c{i:03d}") for i in range(config.n_controls)]
    for index, (label, user_id) in enumerate(roster):
        rng = np.random.default_rng(splitmix64(config.seed, index))
        rec = gen_recording(label, config.task, config.epsilon, rng, config.length_targets())
        rec.user_id = user_id
        recordings.append(rec)
    return recordings


def gen_dataset(config: SynthConfig, out_dir: str | Path) -> tuple[DatasetManifest, Path]:
    """Write canonical CSVs plus a manifest; regeneration is byte-identical."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for rec in gen_cohort(config):
        filename = f"{rec.user_id}_{rec.task}.csv"
        (out_dir / filename).write_text(serialize_recording(rec), encoding="utf-8")
        entries.append({"user_id": rec.user_id, "label": rec.label, "task": rec.task, "path": filename})
    provenance = (
        f"synthetic cohort: task={config.task} epsilon={config.epsilon} seed={config.seed} "
        f"patients={config.n_patients} controls={config.n_controls}"
    )
    doc = {"version": 1, "provenance": provenance, "entries": entries}
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return (
        DatasetManifest(version=1, entries=entries, provenance=provenance, root=out_dir),
        manifest_path,
    )
