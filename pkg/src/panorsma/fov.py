"""Viewport geometry on the equirectangular grid and semantic-level weight maps.

A viewport is an axis-aligned rectangle in ERP coordinates: rows span the
angular height around the pitch row (clipped at the poles), columns span the
angular width around the yaw column and wrap at the +/-180 degree seam.
Weight maps put 1 inside the footprint and a small weight outside, then are
average-pooled down to the feature-grid resolution (1/16 per axis).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

POOL_LEVELS = 4
GRID_DIVISOR = 48  # footprint grids must tile both the pooled map and a 3x3 layout


class TraceFormatError(ValueError):
    """Malformed head-motion trace data."""


@dataclass(frozen=True)
class Viewport:
    yaw_deg: float
    pitch_deg: float
    width_deg: float = 120.0
    height_deg: float = 60.0

    def __post_init__(self):
        if not -180.0 <= self.yaw_deg < 180.0:
            raise ValueError(f"yaw {self.yaw_deg} outside [-180, 180)")
        if not -90.0 <= self.pitch_deg <= 90.0:
            raise ValueError(f"pitch {self.pitch_deg} outside [-90, 90]")
        if not 0.0 < self.width_deg <= 360.0:
            raise ValueError("width must lie in (0, 360]")
        if not 0.0 < self.height_deg <= 180.0:
            raise ValueError("height must lie in (0, 180]")


@dataclass(frozen=True)
class FovMap:
    """Frame-resolution weight map: 1 inside the footprint, xi outside."""

    weights: np.ndarray
    outside_weight: float

    def __post_init__(self):
        if not 0.0 <= self.outside_weight < 1.0:
            raise ValueError("outside weight must lie in [0, 1)")


def _iround(x: float) -> int:
    return int(math.floor(x + 0.5))


def _check_grid(h: int, w: int) -> None:
    if h <= 0 or w <= 0 or h % GRID_DIVISOR or w % GRID_DIVISOR:
        raise ValueError(f"grid {h}x{w} must be positive and divisible by {GRID_DIVISOR}")


def footprint_bounds(v: Viewport, h: int, w: int):
    """(row_start, row_stop, col_start, n_cols) of the footprint, pre-clipping.

    Rows are later clipped to [0, h); columns are taken modulo w.
    """
    n_rows = _iround(v.height_deg / 180.0 * h)
    n_cols = _iround(v.width_deg / 360.0 * w)
    center_row = (90.0 - v.pitch_deg) / 180.0 * h
    center_col = (v.yaw_deg + 180.0) / 360.0 * w
    r0 = _iround(center_row - n_rows / 2.0)
    c0 = _iround(center_col - n_cols / 2.0)
    return r0, r0 + n_rows, c0, n_cols


def viewport_footprint(v: Viewport, h: int, w: int) -> np.ndarray:
    """Boolean ERP mask of the viewport: pole-clipped rows, seam-wrapped columns."""
    _check_grid(h, w)
    r0, r1, c0, n_cols = footprint_bounds(v, h, w)
    mask = np.zeros((h, w), dtype=bool)
    rows = slice(max(0, r0), min(h, r1))
    if rows.stop > rows.start and n_cols > 0:
        cols = (c0 + np.arange(n_cols)) % w
        mask[rows, cols] = True
    return mask


def build_fov_map(region: np.ndarray, xi: float) -> FovMap:
    """Weight map over the frame: 1 inside ``region``, xi elsewhere."""
    if not 0.0 <= xi < 1.0:
        raise ValueError("xi must lie in [0, 1)")
    region = np.asarray(region, dtype=bool)
    weights = np.where(region, 1.0, xi)
    return FovMap(weights=weights, outside_weight=xi)


def pool_to_semantic(fov: FovMap | np.ndarray, levels: int = POOL_LEVELS,
                     kernel: int = 2) -> np.ndarray:
    """Downsample a weight map to feature-grid resolution by repeated stride-2 pooling.

    kernel=2 averages each 2x2 block; kernel=1 keeps the top-left sample of
    each block (pure decimation). ``levels`` halvings give an output of
    (H/2^levels) x (W/2^levels).
    """
    weights = fov.weights if isinstance(fov, FovMap) else np.asarray(fov, dtype=float)
    if kernel not in (1, 2):
        raise ValueError("kernel must be 1 or 2")
    h, w = weights.shape
    factor = 2 ** levels
    if h % factor or w % factor:
        raise ValueError(f"grid {h}x{w} not divisible by 2^{levels}")
    out = weights
    for _ in range(levels):
        hh, ww = out.shape
        if kernel == 2:
            out = out.reshape(hh // 2, 2, ww // 2, 2).mean(axis=(1, 3))
        else:
            out = out[::2, ::2]
    return out


def overlap_region(viewports: list[Viewport], h: int, w: int):
    """Intersection of all footprints plus each user's leftover private region.

    Returns (common, privates): ``common`` is the cell set every user sees;
    ``privates[u]`` is user u's footprint minus the common part, so the three
    kinds of cell (common / private / outside) partition each footprint.
    """
    if not viewports:
        raise ValueError("need at least one viewport")
    footprints = [viewport_footprint(v, h, w) for v in viewports]
    common = footprints[0].copy()
    for fp in footprints[1:]:
        common &= fp
    privates = [fp & ~common for fp in footprints]
    return common, privates


@dataclass(frozen=True)
class HeadTrace:
    """Time-ordered head orientation samples for one user."""

    timestamps_s: np.ndarray
    yaw_deg: np.ndarray
    pitch_deg: np.ndarray

    def __post_init__(self):
        n = len(self.timestamps_s)
        if len(self.yaw_deg) != n or len(self.pitch_deg) != n:
            raise TraceFormatError("trace column lengths differ")
        if n > 1 and np.any(np.diff(self.timestamps_s) <= 0):
            bad = int(np.argmax(np.diff(self.timestamps_s) <= 0)) + 2
            raise TraceFormatError(f"line {bad}: timestamps not strictly increasing")

    def __len__(self) -> int:
        return len(self.timestamps_s)

    def viewport(self, index: int, width_deg: float = 120.0,
                 height_deg: float = 60.0) -> Viewport:
        return Viewport(yaw_deg=float(self.yaw_deg[index]),
                        pitch_deg=float(self.pitch_deg[index]),
                        width_deg=width_deg, height_deg=height_deg)


TRACE_HEADER = ["timestamp_s", "yaw_deg", "pitch_deg"]


def load_head_trace(path) -> HeadTrace:
    """Parse a trace CSV; malformed rows are reported with their line number."""
    ts, yaw, pitch = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRACE_HEADER:
            raise TraceFormatError(f"line 1: expected header {','.join(TRACE_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise TraceFormatError(f"line {lineno}: expected 3 fields, got {len(row)}")
            try:
                t, y, p = (float(v) for v in row)
            except ValueError:
                raise TraceFormatError(f"line {lineno}: non-numeric field") from None
            if not -180.0 <= y < 180.0:
                raise TraceFormatError(f"line {lineno}: yaw {y} outside [-180, 180)")
            if not -90.0 <= p <= 90.0:
                raise TraceFormatError(f"line {lineno}: pitch {p} outside [-90, 90]")
            ts.append(t)
            yaw.append(y)
            pitch.append(p)
    return HeadTrace(np.asarray(ts), np.asarray(yaw), np.asarray(pitch))


def save_head_trace(trace: HeadTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_HEADER)
        for t, y, p in zip(trace.timestamps_s, trace.yaw_deg, trace.pitch_deg):
            writer.writerow([repr(float(t)), repr(float(y)), repr(float(p))])


def synth_head_trace(seed, duration_s: float, dt_s: float,
                     yaw_rate_deg_s: float = 40.0,
                     pitch_rate_deg_s: float = 15.0) -> HeadTrace:
    """Bounded-random-walk trace: yaw wraps at the seam, pitch reflects at the poles."""
    if dt_s <= 0:
        raise ValueError("dt must be positive")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s / dt_s))
    yaw = np.empty(n)
    pitch = np.empty(n)
    y = rng.uniform(-180.0, 180.0)
    p = rng.uniform(-30.0, 30.0)
    for i in range(n):
        yaw[i] = y
        pitch[i] = p
        y += rng.normal(0.0, yaw_rate_deg_s * dt_s)
        y = (y + 180.0) % 360.0 - 180.0
        p += rng.normal(0.0, pitch_rate_deg_s * dt_s)
        while not -90.0 <= p <= 90.0:
            p = 180.0 - p if p > 90.0 else -180.0 - p
    return HeadTrace(np.arange(n) * dt_s, yaw, pitch)


def save_map_pgm(weights: np.ndarray, path) -> None:
    """8-bit binary PGM of a [0, 1] weight map, for quick visual inspection."""
    scaled = np.clip(np.round(np.asarray(weights) * 255.0), 0, 255).astype(np.uint8)
    h, w = scaled.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(scaled.tobytes())


def save_map_csv(weights: np.ndarray, path) -> None:
    np.savetxt(path, np.asarray(weights), delimiter=",", fmt="%.10g")
