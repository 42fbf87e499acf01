"""Event streams: R2EV/CSV serialization, heatmaps, point clouds, interval histograms.

R2EV layout (little-endian)::

    "R2EV" | version u16 | width u16 | height u16 | count u64
    count x ( t u64 | x u16 | y u16 | p u8 )      # 13-byte packed records
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, TruncatedPayloadError

EVENT_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "u1")])
assert EVENT_DTYPE.itemsize == 13

_HEADER = struct.Struct("<4sHHHQ")
HEADER_SIZE = _HEADER.size
_MAGIC = b"R2EV"
_VERSION = 1

ON, OFF = 1, 0


def sort_order(events: np.ndarray) -> np.ndarray:
    return np.lexsort((events["p"], events["x"], events["y"], events["t"]))


def is_sorted(events: np.ndarray) -> bool:
    if len(events) < 2:
        return True
    key = np.stack([events["t"].astype(np.uint64), events["y"].astype(np.uint64),
                    events["x"].astype(np.uint64), events["p"].astype(np.uint64)])
    a, b = key[:, :-1], key[:, 1:]
    # lexicographic a <= b, evaluated from the last key upwards
    le = a[3] <= b[3]
    for i in (2, 1, 0):
        le = (a[i] < b[i]) | ((a[i] == b[i]) & le)
    return bool(np.all(le))


@dataclass
class EventStream:
    width: int
    height: int
    events: np.ndarray

    def __post_init__(self):
        ev = np.asarray(self.events)
        if ev.dtype != EVENT_DTYPE:
            ev = ev.astype(EVENT_DTYPE)
        self.events = ev
        if len(ev) and (int(ev["x"].max()) >= self.width or int(ev["y"].max()) >= self.height):
            raise FormatError("event coordinates outside the sensor")
        if len(ev) and int(ev["p"].max()) > 1:
            raise FormatError("polarity must be 0 or 1")

    @classmethod
    def empty(cls, width, height):
        return cls(width, height, np.zeros(0, EVENT_DTYPE))

    @classmethod
    def from_columns(cls, width, height, t, x, y, p, sort=True):
        ev = np.empty(len(t), EVENT_DTYPE)
        ev["t"], ev["x"], ev["y"], ev["p"] = t, x, y, p
        if sort:
            ev = ev[sort_order(ev)]
        return cls(width, height, ev)

    def __len__(self):
        return len(self.events)

    def __eq__(self, other):
        if not isinstance(other, EventStream):
            return NotImplemented
        return (self.width == other.width and self.height == other.height
                and np.array_equal(self.events, other.events))

    @property
    def t(self):
        return self.events["t"]

    def counts(self):
        """(total, on, off)."""
        on = int(np.count_nonzero(self.events["p"] == ON))
        return len(self), on, len(self) - on


def write_events(path, stream: EventStream, fmt: str | None = None) -> None:
    """Write R2EV (default) or CSV (``fmt="csv"`` or a ``.csv`` suffix)."""
    if not is_sorted(stream.events):
        raise FormatError("event stream is not sorted by (t, y, x, p)")
    path = Path(path)
    if fmt is None:
        fmt = "csv" if path.suffix.lower() == ".csv" else "r2ev"
    if fmt == "csv":
        ev = stream.events
        table = np.column_stack([ev["t"], ev["x"], ev["y"], ev["p"]]).astype(np.uint64)
        with open(path, "w") as f:
            f.write(f"t,x,y,p\n# width={stream.width} height={stream.height}\n")
            np.savetxt(f, table, fmt="%d", delimiter=",")
        return
    with open(path, "wb") as f:
        f.write(_HEADER.pack(_MAGIC, _VERSION, stream.width, stream.height, len(stream)))
        f.write(stream.events.tobytes())


def read_events(path) -> EventStream:
    path = Path(path)
    data = path.read_bytes()
    if path.suffix.lower() == ".csv" or data[:1] == b"#" or data[:5] == b"t,x,y":
        return _read_csv(path, data)
    if len(data) < HEADER_SIZE:
        raise TruncatedPayloadError(f"{path}: truncated header")
    magic, version, width, height, count = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    need = HEADER_SIZE + count * EVENT_DTYPE.itemsize
    if len(data) < need:
        raise TruncatedPayloadError(f"{path}: record truncation ({len(data)} of {need} bytes)")
    if len(data) > need:
        raise FormatError(f"{path}: {len(data) - need} trailing bytes")
    ev = np.frombuffer(data, dtype=EVENT_DTYPE, count=count, offset=HEADER_SIZE).copy()
    return EventStream(width, height, ev)


def _read_csv(path, data: bytes) -> EventStream:
    lines = data.decode("ascii").splitlines()
    width = height = None
    body = []
    for line in lines:
        if line.startswith("#"):
            for tok in line[1:].split():
                key, _, val = tok.partition("=")
                if key == "width":
                    width = int(val)
                elif key == "height":
                    height = int(val)
        elif line.strip() and line.strip() != "t,x,y,p":
            body.append(line)
    table = (np.loadtxt(body, delimiter=",", dtype=np.uint64, ndmin=2) if body
             else np.zeros((0, 4), np.uint64))
    if width is None:
        width = int(table[:, 1].max()) + 1 if len(table) else 0
        height = int(table[:, 2].max()) + 1 if len(table) else 0
    return EventStream.from_columns(width, height, table[:, 0], table[:, 1],
                                    table[:, 2], table[:, 3], sort=False)


def select(stream: EventStream, t_range=None, polarity: str = "both") -> np.ndarray:
    ev = stream.events
    mask = np.ones(len(ev), bool)
    if t_range is not None:
        t0, t1 = t_range
        if t1 < t0:
            raise ValueError("t_range end before start")
        mask &= (ev["t"] >= t0) & (ev["t"] < t1)
    if polarity == "ON":
        mask &= ev["p"] == ON
    elif polarity == "OFF":
        mask &= ev["p"] == OFF
    elif polarity != "both":
        raise ValueError(f"polarity must be ON, OFF or both, got {polarity!r}")
    return ev[mask]


def accumulate_heatmap(stream: EventStream, t_range=None, polarity: str = "both") -> np.ndarray:
    """Per-pixel count of selected events in [t0, t1), indexed [y, x]."""
    ev = select(stream, t_range, polarity)
    grid = np.zeros((stream.height, stream.width), dtype=np.int64)
    np.add.at(grid, (ev["y"].astype(np.intp), ev["x"].astype(np.intp)), 1)
    return grid


def write_heatmap(path, grid: np.ndarray) -> int:
    """Write counts as an 8-bit PGM scaled by the max; the max goes to ``<path>.max.txt``."""
    from .frames import write_pgm

    peak = int(grid.max()) if grid.size else 0
    scaled = np.zeros(grid.shape, np.uint8) if peak == 0 else np.floor(
        grid * 255.0 / peak + 0.5).astype(np.uint8)
    write_pgm(path, scaled, 255)
    Path(str(path) + ".max.txt").write_text(f"max={peak}\n")
    return peak


def export_point_cloud(stream: EventStream, stride: int = 1, path=None) -> np.ndarray:
    """Every ``stride``-th event as an (n, 4) array of x, y, t, p; optionally saved as CSV."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    ev = stream.events[::stride]
    cloud = np.column_stack([ev["x"], ev["y"], ev["t"], ev["p"]]).astype(np.uint64)
    if path is not None:
        np.savetxt(path, cloud, fmt="%d", delimiter=",", header="x,y,t,p", comments="")
    return cloud


def successive_intervals(events: np.ndarray):
    """Time between successive events of the same pixel and polarity.

    Returns (index of the later event in ``events``, interval in us).
    """
    if len(events) < 2:
        return np.zeros(0, np.intp), np.zeros(0, np.float64)
    order = np.lexsort((events["t"], events["p"], events["x"], events["y"]))
    ev = events[order]
    same = ((ev["x"][1:] == ev["x"][:-1]) & (ev["y"][1:] == ev["y"][:-1])
            & (ev["p"][1:] == ev["p"][:-1]))
    dt = ev["t"][1:].astype(np.int64) - ev["t"][:-1].astype(np.int64)
    return order[1:][same], dt[same].astype(np.float64)


@dataclass
class IntervalHistogram:
    edges: np.ndarray
    density: np.ndarray
    n_intervals: int

    @property
    def empty(self) -> bool:
        return self.n_intervals == 0

    def mean_var(self):
        """Mean and variance of the binned distribution (bin centres as support)."""
        centres = 0.5 * (self.edges[1:] + self.edges[:-1])
        mass = self.density * np.diff(self.edges)
        m = float(np.sum(mass * centres))
        return m, float(np.sum(mass * (centres - m) ** 2))


def interval_histogram(stream: EventStream, bin_edges) -> IntervalHistogram:
    """Density of per-pixel, per-polarity inter-event intervals over ``bin_edges``."""
    edges = np.asarray(bin_edges, dtype=np.float64)
    if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("bin_edges must be strictly increasing with >= 2 entries")
    _, tau = successive_intervals(stream.events)
    counts, _ = np.histogram(tau, bins=edges)
    n = int(counts.sum())
    if n == 0:
        return IntervalHistogram(edges, np.zeros(len(edges) - 1), 0)
    return IntervalHistogram(edges, counts / (n * np.diff(edges)), n)


def write_histogram(path, hist: IntervalHistogram) -> None:
    table = np.column_stack([hist.edges[:-1], hist.edges[1:], hist.density])
    np.savetxt(path, table, delimiter=",", header="bin_lo_us,bin_hi_us,density", comments="")
