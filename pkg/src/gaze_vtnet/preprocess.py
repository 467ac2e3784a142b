"""Turn recordings into model-ready datapoints.

The pipeline is: cyclical splitting (every k-th sample into the same
subsequence, multiplying the number of datapoints by k while dividing their
length), an optional head cutoff, and rasterization of the gaze trace into a
small grayscale scanpath image. Per-channel normalization is fit per
cross-validation fold at train time, never here.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from gaze_vtnet.gazedata import N_CHANNELS, Recording

DEFAULT_SPLIT = 4
DEFAULT_IMAGE = (64, 64)

STAMP_VALUE = 1.0
LINE_VALUE = 0.5


@dataclass
class Datapoint:
    """One preprocessed sequence with its scanpath image and label.

    ``seq`` is T x 6 (timestep rows, channel columns), ``scanpath`` an H x W
    grayscale image in [0, 1] rendered from exactly this sequence, and
    ``split_index`` identifies which of the k cyclic subsequences this is.
    """

    user_id: str
    label: str
    task: str
    seq: np.ndarray
    scanpath: np.ndarray
    split_index: int


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel mean/std fitted on one training split, tagged with its fold."""

    mean: np.ndarray
    std: np.ndarray
    fold_id: str

    def __post_init__(self) -> None:
        if self.mean.shape != (N_CHANNELS,) or self.std.shape != (N_CHANNELS,):
            raise ValueError("stats must cover exactly the 6 channels")
        if np.any(self.std < 0):
            raise ValueError("negative std")


def cyclic_split(seq: np.ndarray, k: int = DEFAULT_SPLIT) -> list[np.ndarray]:
    """Split rows into k interleaved subsequences (row j goes to stream j mod k)."""
    seq = np.asarray(seq)
    if k < 1:
        raise ValueError("k must be positive")
    if seq.shape[0] < k:
        raise ValueError(f"sequence length {seq.shape[0]} shorter than k={k}")
    return [seq[j::k] for j in range(k)]


def interleave(subseqs: list[np.ndarray]) -> np.ndarray:
    """Inverse of :func:`cyclic_split`; rejects length patterns no split produces."""
    if not subseqs:
        raise ValueError("no subsequences")
    lengths = [int(np.asarray(s).shape[0]) for s in subseqs]
    if any(n < 1 for n in lengths):
        raise ValueError("incompatible lengths: empty subsequence")
    if any(a < b for a, b in zip(lengths, lengths[1:])):
        raise ValueError("incompatible lengths: not non-increasing")
    if lengths[0] - lengths[-1] > 1:
        raise ValueError("incompatible lengths: gap larger than 1")
    k = len(subseqs)
    total = sum(lengths)
    first = np.asarray(subseqs[0])
    out = np.empty((total,) + first.shape[1:], dtype=first.dtype)
    for j, s in enumerate(subseqs):
        out[j::k] = s
    return out


def truncate_head(seq: np.ndarray, cutoff: int) -> np.ndarray:
    """Keep at most the first ``cutoff`` rows; order preserved."""
    if cutoff < 1:
        raise ValueError("cutoff must be positive")
    return np.asarray(seq)[:cutoff]


def _to_pixel(v: float, extent: int) -> int:
    # half-up rounding of the clamped coordinate onto [0, extent-1]
    v = min(1.0, max(0.0, v))
    return int(np.floor(v * (extent - 1) + 0.5))


def _line_cells(c0: int, r0: int, c1: int, r1: int) -> list[tuple[int, int]]:
    """Integer cells of the segment (c0,r0)-(c1,r1), Bresenham walk."""
    cells = []
    dc, dr = abs(c1 - c0), -abs(r1 - r0)
    sc = 1 if c0 < c1 else -1
    sr = 1 if r0 < r1 else -1
    err = dc + dr
    c, r = c0, r0
    while True:
        cells.append((c, r))
        if c == c1 and r == r1:
            break
        e2 = 2 * err
        if e2 >= dr:
            err += dr
            c += sc
        if e2 <= dc:
            err += dc
            r += sr
    return cells


def render_scanpath(seq: np.ndarray, width: int, height: int) -> np.ndarray:
    """Rasterize gaze positions and their transitions into an H x W image.

    Each sample's (gx, gy), clamped to [0, 1], lands on pixel
    (col, row) = (round(gx*(W-1)), round(gy*(H-1))) with the y axis pointing
    down, and is stamped as a 3x3 block of intensity 1.0. Consecutive samples
    are connected with integer line cells at intensity 0.5; lines never
    overwrite stamps, so every pixel is exactly 0, 0.5 or 1.0.
    """
    seq = np.asarray(seq)
    if seq.ndim != 2 or seq.shape[0] < 1:
        raise ValueError("empty sequence")
    if width < 8 or height < 8:
        raise ValueError("image must be at least 8x8")

    cols = np.array([_to_pixel(v, width) for v in seq[:, 0]], dtype=np.intp)
    rows = np.array([_to_pixel(v, height) for v in seq[:, 1]], dtype=np.intp)

    stamp = np.zeros((height, width), dtype=bool)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            r = np.clip(rows + dr, 0, height - 1)
            c = np.clip(cols + dc, 0, width - 1)
            stamp[r, c] = True

    line = np.zeros((height, width), dtype=bool)
    for i in range(len(cols) - 1):
        if cols[i] == cols[i + 1] and rows[i] == rows[i + 1]:
            continue
        for c, r in _line_cells(int(cols[i]), int(rows[i]), int(cols[i + 1]), int(rows[i + 1])):
            line[r, c] = True

    img = np.zeros((height, width), dtype=np.float64)
    img[line] = LINE_VALUE
    img[stamp] = STAMP_VALUE
    return img


def write_pgm(image: np.ndarray, path: str | Path) -> None:
    """Debug export: 8-bit binary PGM (P5), value = round(pixel * 255)."""
    image = np.asarray(image)
    h, w = image.shape
    data = np.floor(image * 255.0 + 0.5).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def fit_channel_stats(datapoints: list[Datapoint], fold_id: str = "") -> ChannelStats:
    """Pooled per-channel mean/std (population) over every row of a training set."""
    if not datapoints:
        raise ValueError("empty training set")
    rows = np.concatenate([dp.seq for dp in datapoints], axis=0)
    return ChannelStats(mean=rows.mean(axis=0), std=rows.std(axis=0), fold_id=fold_id)


def apply_normalization(seq: np.ndarray, stats: ChannelStats) -> np.ndarray:
    """Per-channel z-score; channels with near-zero spread map to all zeros."""
    seq = np.asarray(seq, dtype=np.float64)
    degenerate = stats.std < 1e-8
    safe_std = np.where(degenerate, 1.0, stats.std)
    out = (seq - stats.mean) / safe_std
    out[:, degenerate] = 0.0
    return out


def build_datapoints(
    recordings: list[Recording],
    k: int = DEFAULT_SPLIT,
    cutoff: int | None = None,
    image_size: tuple[int, int] = DEFAULT_IMAGE,
) -> list[Datapoint]:
    """Expand each (outlier-filtered) recording into k self-contained datapoints.

    Per recording: cyclic split, then per-subsequence head truncation when a
    cutoff is set, then one scanpath render per subsequence. Normalization is
    deliberately not applied here; it is fold-local at train time.
    """
    height, width = image_size
    out: list[Datapoint] = []
    for rec in recordings:
        for j, sub in enumerate(cyclic_split(rec.channels, k)):
            if cutoff is not None:
                sub = truncate_head(sub, cutoff)
            out.append(
                Datapoint(
                    user_id=rec.user_id,
                    label=rec.label,
                    task=rec.task,
                    seq=np.ascontiguousarray(sub),
                    scanpath=render_scanpath(sub, width, height),
                    split_index=j,
                )
            )
    return out
