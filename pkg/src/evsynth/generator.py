"""Frame-to-event conversion.

Each frame interval is simulated pixel by pixel with drift and diffusion held
constant at the interval's mean brightness and brightness rate. Rows are split
into chunks that run on a thread pool; random streams are keyed on
(seed, pixel, interval) so the chunking never changes the output.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import _kernels
from .errors import FormatError
from .events import EVENT_DTYPE, EventStream
from .frames import FrameSequence
from .model import Event, GeneratorConfig, PixelState

_COUNTING_SORT_SPAN = 1 << 24


def default_threads() -> int:
    env = os.environ.get("R2E_THREADS")
    return int(env) if env else 1


class EventGenerator:
    """Streaming converter: feed frames one at a time, get the events of each interval.

    >>> gen = EventGenerator(346, 260, GeneratorConfig())
    >>> gen.push(frame0, 0)          # first frame only primes the state
    >>> events = gen.push(frame1, 33333)
    """

    def __init__(self, width: int, height: int, config: GeneratorConfig,
                 state: PixelState | None = None):
        self.width = width
        self.height = height
        self.config = config
        self.state = state or PixelState(width, height)
        self.interval = 0
        self._prev = None
        self._prev_t = None
        self._params = config.kernel_params()
        self._key = np.uint64(_kernels.seed_key(np.uint64(config.seed)))
        threads = config.threads
        self._chunks = _row_chunks(height, threads)
        self._pool = ThreadPoolExecutor(threads) if threads > 1 else None
        cap = max(1024, width * height // len(self._chunks) // 4)
        self._buffers = [_alloc(cap) for _ in self._chunks]

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def push(self, frame: np.ndarray, t: int) -> np.ndarray:
        """Consume the next frame (luminance, shape (height, width)) taken at ``t`` us."""
        frame = np.asarray(frame)
        if frame.shape != (self.height, self.width):
            raise FormatError(f"frame shape {frame.shape} != {(self.height, self.width)}")
        t = int(t)
        if self._prev is None:
            self._prev, self._prev_t = frame, t
            return np.zeros(0, EVENT_DTYPE)
        if t <= self._prev_t:
            raise FormatError(f"non-monotonic frame timestamp {t} after {self._prev_t}")
        events = self._interval(self._prev, frame, self._prev_t, t)
        self._prev, self._prev_t = frame, t
        self.interval += 1
        return events

    def _interval(self, l0, l1, t0, t1):
        dt = float(t1 - t0)
        v_out = np.empty_like(self.state.v_res)
        tail = (self.width, dt, np.int64(t0), self.interval, self._params, self._key)
        if self._pool is None:
            parts = [self._run_chunk(l0, l1, v_out, a, b, tail, i)
                     for i, (a, b) in enumerate(self._chunks)]
        else:
            futures = [self._pool.submit(self._run_chunk, l0, l1, v_out, a, b, tail, i)
                       for i, (a, b) in enumerate(self._chunks)]
            parts = [f.result() for f in futures]
        self.state.v_res = v_out
        if len(parts) == 1:
            t, x, y, p = parts[0]
        else:
            t, x, y, p = (np.concatenate(c) for c in zip(*parts))
        span = t1 - t0
        if span <= _COUNTING_SORT_SPAN:
            order = _kernels.stable_time_order(t, np.int64(t0), span)
        else:
            order = np.argsort(t, kind="stable")
        out = np.empty(len(t), EVENT_DTYPE)
        out["t"] = t[order]
        out["x"] = x[order]
        out["y"] = y[order]
        out["p"] = p[order]
        return out

    def _run_chunk(self, l0, l1, v_out, row_start, row_stop, tail, i):
        bufs = self._buffers[i]
        while True:
            n = _kernels.simulate_rows(l0, l1, self.state.v_res, v_out, row_start, row_stop,
                                       *tail, *bufs)
            if n <= len(bufs[0]):
                return tuple(b[:n].copy() for b in bufs)
            bufs = self._buffers[i] = _alloc(max(n, 2 * len(bufs[0])))


def _alloc(cap):
    return (np.empty(cap, np.int64), np.empty(cap, np.uint16),
            np.empty(cap, np.uint16), np.empty(cap, np.uint8))


def _row_chunks(height, threads):
    n = max(1, min(threads, height))
    edges = np.linspace(0, height, n + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def generate_events_sequence(frames: FrameSequence, cfg: GeneratorConfig) -> EventStream:
    """Convert a luminance frame sequence into one time-sorted event stream."""
    if frames.bayer_pattern != 0:
        raise FormatError("frames are a Bayer mosaic; reduce them with sequence_to_luma first")
    if len(frames) < 2:
        raise FormatError("need at least two frames")
    parts = []
    with EventGenerator(frames.width, frames.height, cfg) as gen:
        for ts, frame in zip(frames.timestamps, frames.frames):
            parts.append(gen.push(frame, int(ts)))
    events = np.concatenate(parts) if parts else np.zeros(0, EVENT_DTYPE)
    return EventStream(frames.width, frames.height, events)


def generate_events_interval(l_start: float, l_end: float, dt: float, t0: int, pixel,
                             state: PixelState, cfg: GeneratorConfig,
                             interval: int = 0) -> list[Event]:
    """Events of a single pixel over one interval; updates ``state`` in place.

    ``interval`` selects the random stream together with the pixel position,
    so calling this for every pixel and interval reproduces
    :func:`generate_events_sequence` exactly.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    x, y = pixel
    v = float(state.v_res[y, x])
    p = cfg.params
    if not -p.theta_on < v < p.theta_off:
        raise ValueError(f"residual voltage {v} outside (-theta_on, theta_off)")
    key = np.uint64(_kernels.seed_key(np.uint64(cfg.seed)))
    params = cfg.kernel_params()
    pix = y * state.width + x
    cap = 16
    while True:
        out_t = np.empty(cap, np.int64)
        out_p = np.empty(cap, np.uint8)
        n, v_new = _kernels.simulate_pixel(float(l_start), float(l_end), float(dt),
                                           np.int64(t0), pix, interval, v, params, key,
                                           out_t, out_p, 0)
        if n <= cap:
            break
        cap = n
    state.v_res[y, x] = v_new
    return [Event(int(out_t[i]), x, y, int(out_p[i])) for i in range(n)]
