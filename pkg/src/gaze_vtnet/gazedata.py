"""Parsing, validation and summary statistics for raw gaze recordings.

A recording is a time-ordered sequence of 6-channel samples captured at a
nominal 120 Hz: normalized gaze coordinates (gx, gy), head distance of each
eye in millimeters (hd_l, hd_r) and pupil diameter of each eye in
millimeters (p_l, p_r). The canonical on-disk format is a CSV with header
``t_ms,gx,gy,hd_l_mm,hd_r_mm,p_l_mm,p_r_mm``, one row per sample, LF line
endings and ``.`` as the decimal separator. Datasets are described by a JSON
manifest mapping (user, task) pairs to recording files.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable

import numpy as np

CSV_HEADER = "t_ms,gx,gy,hd_l_mm,hd_r_mm,p_l_mm,p_r_mm"
CHANNELS = ("gx", "gy", "hd_l", "hd_r", "p_l", "p_r")
N_CHANNELS = len(CHANNELS)

TASKS = ("calibration", "picture", "reading")
LABELS = ("control", "patient")

SAMPLE_RATE_HZ = 120.0
SAMPLE_INTERVAL_MS = 1000.0 / SAMPLE_RATE_HZ

MANIFEST_VERSION = 1


class ParseError(ValueError):
    """Raised when a recording stream or manifest cannot be ingested."""


@dataclass(frozen=True)
class RawSample:
    """One gaze sample. All channels finite; distances and pupils positive."""

    t: float
    gx: float
    gy: float
    hd_l: float
    hd_r: float
    p_l: float
    p_r: float


@dataclass
class Recording:
    """An ordered per-user, per-task sample sequence.

    ``t`` holds the strictly increasing timestamps in milliseconds and
    ``channels`` the T x 6 matrix in :data:`CHANNELS` order.
    """

    user_id: str
    task: str
    label: str
    t: np.ndarray
    channels: np.ndarray

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.label not in LABELS:
            raise ValueError(f"unknown label {self.label!r}")
        self.t = np.asarray(self.t, dtype=np.float64)
        self.channels = np.asarray(self.channels, dtype=np.float64)
        if self.t.ndim != 1 or self.channels.shape != (self.t.size, N_CHANNELS):
            raise ValueError("timestamps and channels disagree in shape")
        if self.t.size < 1:
            raise ValueError("recording must contain at least one sample")
        if not np.all(np.diff(self.t) > 0):
            raise ValueError("non-monotonic timestamps")
        if not np.all(np.isfinite(self.channels)):
            raise ValueError("non-finite channel value")

    def __len__(self) -> int:
        return int(self.t.size)

    def sample(self, i: int) -> RawSample:
        return RawSample(float(self.t[i]), *(float(v) for v in self.channels[i]))


@dataclass
class DatasetManifest:
    """Index of recording files: unique (user_id, task) entries that exist on disk."""

    version: int
    entries: list[dict]
    provenance: str = ""
    root: Path = field(default_factory=Path)


def parse_recording(
    stream: IO[str] | str, user_id: str, task: str, label: str
) -> tuple[Recording, int]:
    """Parse a canonical recording CSV into a validated :class:`Recording`.

    Rows with a missing or non-finite field, or with a non-positive head
    distance or pupil diameter, are dropped rather than interpolated. Returns
    the recording plus the number of dropped rows. Raises :class:`ParseError`
    on a malformed header, a non-numeric field, non-monotonic timestamps
    after filtering, or zero retained rows.
    """
    text = stream if isinstance(stream, str) else stream.read()
    lines = text.split("\n")
    if not lines or lines[0].strip("\r") != CSV_HEADER:
        raise ParseError(f"malformed header; expected {CSV_HEADER!r}")

    rows: list[list[float]] = []
    dropped = 0
    for lineno, line in enumerate(lines[1:], start=2):
        line = line.strip("\r")
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != 1 + N_CHANNELS:
            raise ParseError(f"line {lineno}: expected {1 + N_CHANNELS} fields, got {len(fields)}")
        if any(f == "" for f in fields):
            dropped += 1
            continue
        try:
            values = [float(f) for f in fields]
        except ValueError as exc:
            raise ParseError(f"line {lineno}: non-numeric field ({exc})") from None
        if not all(math.isfinite(v) for v in values):
            dropped += 1
            continue
        # hd_* and p_* must be strictly positive to be physically meaningful
        if any(v <= 0.0 for v in values[3:]):
            dropped += 1
            continue
        rows.append(values)

    if not rows:
        raise ParseError("zero rows retained")
    arr = np.asarray(rows, dtype=np.float64)
    t = arr[:, 0]
    if not np.all(np.diff(t) > 0):
        raise ParseError("non-monotonic timestamps")
    return Recording(user_id=user_id, task=task, label=label, t=t, channels=arr[:, 1:]), dropped


def serialize_recording(recording: Recording) -> str:
    """Render a recording back to the canonical CSV text (LF endings)."""
    out = [CSV_HEADER]
    for i in range(len(recording)):
        vals = [recording.t[i], *recording.channels[i]]
        out.append(",".join(repr(float(v)) for v in vals))
    return "\n".join(out) + "\n"


def remove_length_outliers(
    recordings: list[Recording], task: str
) -> tuple[list[Recording], list[Recording]]:
    """Drop recordings whose length deviates more than 3 sigma from the mean.

    Single pass: mean and population std are computed once over the input
    list and not recomputed after removal. Requires at least two recordings.
    """
    if any(r.task != task for r in recordings):
        raise ValueError("all recordings must share the given task")
    if len(recordings) < 2:
        raise ValueError("need at least 2 recordings to estimate length spread")
    lengths = np.array([len(r) for r in recordings], dtype=np.float64)
    mean = float(lengths.mean())
    std = float(lengths.std())  # population std (N denominator)
    kept, removed = [], []
    for rec, length in zip(recordings, lengths):
        (removed if abs(length - mean) > 3.0 * std else kept).append(rec)
    return kept, removed


@dataclass(frozen=True)
class LengthSummaryRow:
    task: str
    group: str  # "patient" | "control" | "total"
    n: int
    mean: float
    std: float
    median: float
    min: int
    max: int


def _summary_row(task: str, group: str, lengths: list[int]) -> LengthSummaryRow:
    arr = np.asarray(sorted(lengths), dtype=np.float64)
    n = arr.size
    mid = n // 2
    median = float(arr[mid]) if n % 2 else float((arr[mid - 1] + arr[mid]) / 2.0)
    return LengthSummaryRow(
        task=task,
        group=group,
        n=int(n),
        mean=float(arr.mean()),
        std=float(arr.std()),
        median=median,
        min=int(arr.min()),
        max=int(arr.max()),
    )


def summarize_lengths(recordings: Iterable[Recording]) -> list[LengthSummaryRow]:
    """Sequence-length statistics per (task, label) plus a total row per task."""
    by_task: dict[str, dict[str, list[int]]] = {}
    for rec in recordings:
        by_task.setdefault(rec.task, {}).setdefault(rec.label, []).append(len(rec))
    if not by_task:
        raise ValueError("no recordings to summarize")
    rows: list[LengthSummaryRow] = []
    for task in sorted(by_task):
        groups = by_task[task]
        for label in ("patient", "control"):
            if label in groups:
                rows.append(_summary_row(task, label, groups[label]))
        all_lengths = [x for lens in groups.values() for x in lens]
        rows.append(_summary_row(task, "total", all_lengths))
    return rows


def load_manifest(path: str | Path) -> DatasetManifest:
    """Load and validate a dataset manifest JSON file.

    Relative entry paths are resolved against the manifest's directory.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read manifest {path}: {exc}") from None
    if doc.get("version") != MANIFEST_VERSION:
        raise ParseError(f"unsupported manifest version {doc.get('version')!r}")
    entries = doc.get("entries")
    if not isinstance(entries, list) or not entries:
        raise ParseError("manifest has no entries")
    seen: set[tuple[str, str]] = set()
    root = path.parent
    for e in entries:
        for key in ("user_id", "label", "task", "path"):
            if key not in e:
                raise ParseError(f"manifest entry missing {key!r}: {e}")
        if e["label"] not in LABELS:
            raise ParseError(f"bad label {e['label']!r}")
        if e["task"] not in TASKS:
            raise ParseError(f"bad task {e['task']!r}")
        ident = (e["user_id"], e["task"])
        if ident in seen:
            raise ParseError(f"duplicate (user_id, task) pair {ident}")
        seen.add(ident)
        if not (root / e["path"]).exists():
            raise ParseError(f"referenced file does not exist: {e['path']}")
    return DatasetManifest(
        version=doc["version"],
        entries=entries,
        provenance=doc.get("provenance", ""),
        root=root,
    )


def load_recordings(manifest: DatasetManifest) -> tuple[list[Recording], int]:
    """Parse every manifest entry. Returns recordings plus total dropped rows."""
    recordings: list[Recording] = []
    dropped = 0
    for e in manifest.entries:
        text = (manifest.root / e["path"]).read_text(encoding="utf-8")
        rec, d = parse_recording(text, e["user_id"], e["task"], e["label"])
        recordings.append(rec)
        dropped += d
    return recordings, dropped
