"""Clock alignment between a sensor clock and a jittered host clock, and ROI filtering."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .errors import FormatError
from .events import EventStream
from .frames import FrameSequence

ROI_HEADER = ("t_us", "cx", "cy", "hw", "hh", "angle_rad")


@dataclass
class ClockPair:
    """Per-frame stamps from the camera's own clock and from the host at delivery."""

    sensor_ts: np.ndarray
    real_ts: np.ndarray

    def __post_init__(self):
        self.sensor_ts = np.asarray(self.sensor_ts, dtype=np.int64).reshape(-1)
        self.real_ts = np.asarray(self.real_ts, dtype=np.int64).reshape(-1)
        if self.sensor_ts.shape != self.real_ts.shape:
            raise FormatError("sensor and real timestamp sequences differ in length")
        for ts in (self.sensor_ts, self.real_ts):
            if np.any(np.diff(ts) < 0):
                raise FormatError("clock timestamps must be non-decreasing")

    def __len__(self):
        return len(self.sensor_ts)


@dataclass(frozen=True)
class OffsetEstimate:
    offset: int
    window_start: int
    window: int
    interval_gap: float     # |mean dR - mean dS| over the chosen window, us


def estimate_clock_offset(pair: ClockPair, window: int = 30) -> OffsetEstimate:
    """Offset real - sensor, taken where host intervals best match sensor intervals.

    Host delivery stamps drift and spike; the window whose mean host interval
    is closest to the mean sensor interval is the most settled stretch, and the
    median of (real - sensor) over its frames is the offset.
    """
    n = len(pair)
    if window < 1:
        raise ValueError("window must be >= 1")
    if n < window + 1:
        raise ValueError(f"need at least window + 1 = {window + 1} frames, got {n}")
    ds = np.diff(pair.sensor_ts).astype(np.float64)
    dr = np.diff(pair.real_ts).astype(np.float64)
    kernel = np.ones(window) / window
    gap = np.abs(np.convolve(dr, kernel, "valid") - np.convolve(ds, kernel, "valid"))
    i = int(np.argmin(gap))
    diff = pair.real_ts[i:i + window + 1] - pair.sensor_ts[i:i + window + 1]
    return OffsetEstimate(int(round(float(np.median(diff)))), i, window, float(gap[i]))


def format_offset_report(est: OffsetEstimate, n_frames: int) -> str:
    return (f"offset_us={est.offset}\nwindow={est.window}\nwindow_start={est.window_start}\n"
            f"interval_gap_us={est.interval_gap!r}\nframes={n_frames}\n")


def apply_offset(data, offset: int):
    """Shift every timestamp of an EventStream or FrameSequence by ``offset`` us."""
    offset = int(offset)
    if isinstance(data, EventStream):
        t = data.events["t"]
        if len(t) and offset < 0 and int(t.min()) + offset < 0:
            raise ValueError(f"offset {offset} underflows event timestamp {int(t.min())}")
        if len(t) and int(t.max()) + offset >= 2**63:
            raise ValueError("offset overflows the timestamp range")
        ev = data.events.copy()
        ev["t"] = (t.astype(np.int64) + offset).astype(np.uint64)
        return EventStream(data.width, data.height, ev)
    if isinstance(data, FrameSequence):
        ts = data.timestamps
        if len(ts) and offset < 0 and int(ts.min()) + offset < 0:
            raise ValueError(f"offset {offset} underflows frame timestamp {int(ts.min())}")
        shifted = (ts.astype(np.int64) + offset).astype(np.uint64)
        return replace(data, timestamps=shifted, frames=data.frames)
    raise TypeError(f"cannot shift {type(data).__name__}")


@dataclass
class RoiTrack:
    """Poses of a rectangular region: centre, half-extents and rotation over time."""

    t: np.ndarray
    cx: np.ndarray
    cy: np.ndarray
    hw: np.ndarray
    hh: np.ndarray
    angle: np.ndarray

    def __post_init__(self):
        cols = [np.asarray(getattr(self, f), dtype=np.float64).reshape(-1)
                for f in ("t", "cx", "cy", "hw", "hh", "angle")]
        if len({len(c) for c in cols}) != 1:
            raise FormatError("ROI track columns differ in length")
        self.t, self.cx, self.cy, self.hw, self.hh, self.angle = cols
        if len(self.t) == 0:
            raise FormatError("empty ROI track")
        if np.any(np.diff(self.t) <= 0):
            raise FormatError("ROI track timestamps must be strictly increasing")
        if np.any(self.hw <= 0) or np.any(self.hh <= 0):
            raise FormatError("ROI extents must be positive")

    def __len__(self):
        return len(self.t)

    def pose_at(self, t):
        """Interpolated (cx, cy, hw, hh, angle); angles follow the shortest arc."""
        t = np.asarray(t, dtype=np.float64)
        angle = np.unwrap(self.angle)
        return tuple(np.interp(t, self.t, v) for v in (self.cx, self.cy, self.hw, self.hh, angle))


def read_roi_track(path) -> RoiTrack:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or tuple(c.strip() for c in rows[0]) != ROI_HEADER:
        raise FormatError(f"{path}: expected header {','.join(ROI_HEADER)}")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if data.size == 0:
        raise FormatError(f"{path}: empty ROI track")
    if data.shape[1] != len(ROI_HEADER):
        raise FormatError(f"{path}: expected {len(ROI_HEADER)} columns")
    return RoiTrack(*data.T)


def write_roi_track(path, track: RoiTrack) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(ROI_HEADER)
        for row in zip(track.t, track.cx, track.cy, track.hw, track.hh, track.angle):
            w.writerow([int(row[0]) if row[0].is_integer() else repr(row[0])]
                       + [repr(float(v)) for v in row[1:]])


def filter_events_roi(stream: EventStream, track: RoiTrack) -> tuple[EventStream, int]:
    """Keep events inside the interpolated ROI; returns (filtered stream, events outside
    the track's time coverage)."""
    ev = stream.events
    t = ev["t"].astype(np.float64)
    covered = (t >= track.t[0]) & (t <= track.t[-1])
    cx, cy, hw, hh, angle = track.pose_at(t)
    dx = ev["x"] - cx
    dy = ev["y"] - cy
    c, s = np.cos(angle), np.sin(angle)
    # rotate the offset into the ROI frame
    u = c * dx + s * dy
    v = -s * dx + c * dy
    tol = 1e-9
    inside = (np.abs(u) <= hw + tol) & (np.abs(v) <= hh + tol)
    keep = covered & inside
    return EventStream(stream.width, stream.height, ev[keep]), int(np.count_nonzero(~covered))
