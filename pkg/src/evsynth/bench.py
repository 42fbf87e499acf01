"""Throughput benchmark on a drifting grating (and a silent static scene)."""

from __future__ import annotations

import os
import time
from dataclasses import dataclass

import numpy as np

from . import stimuli
from .generator import EventGenerator
from .model import GeneratorConfig, ModelParams

SILENT = ModelParams(k3=0.0, k4=0.0, k5=0.0, k6=0.0)


@dataclass(frozen=True)
class BenchResult:
    workload: str
    width: int
    height: int
    threads: int
    frames: int         # intervals converted per repeat
    seconds: float      # best repeat
    events: int

    @property
    def fps(self) -> float:
        return self.frames / self.seconds

    @property
    def events_per_s(self) -> float:
        return self.events / self.seconds


def _frames(workload, width, height, n):
    if workload == "grating":
        return stimuli.grating(width, height, n + 1).frames
    if workload == "static":
        return stimuli.static(width, height, n + 1, level=128).frames
    raise ValueError(f"unknown workload {workload!r}")


def measure(width=346, height=260, n_frames=60, threads=1, repeats=3, workload="grating",
            params: ModelParams | None = None, seed=0) -> BenchResult:
    """Best-of-``repeats`` wall time to convert ``n_frames`` intervals.

    The grating runs with the given (default) parameters; the static workload
    uses noise-free parameters so it produces no events at all.
    """
    if params is None:
        params = SILENT if workload == "static" else ModelParams()
    frames = _frames(workload, width, height, n_frames)
    stamps = np.arange(n_frames + 1) * stimuli.FRAME_INTERVAL_US
    cfg = GeneratorConfig(params=params, seed=seed, threads=threads)
    best, events = float("inf"), 0
    with EventGenerator(width, height, cfg) as warm:
        warm.push(frames[0], 0)
        warm.push(frames[1], stamps[1])
    for _ in range(max(1, repeats)):
        with EventGenerator(width, height, cfg) as gen:
            gen.push(frames[0], 0)
            count = 0
            start = time.perf_counter()
            for f, t in zip(frames[1:], stamps[1:]):
                count += len(gen.push(f, t))
            elapsed = time.perf_counter() - start
        if elapsed < best:
            best, events = elapsed, count
    return BenchResult(workload, width, height, threads, n_frames, best, events)


def multi_thread_count() -> int:
    env = os.environ.get("R2E_THREADS")
    return int(env) if env else max(os.cpu_count() or 1, 1)


def run(width=346, height=260, n_frames=60, repeats=3, threads=None):
    """Single- and multi-thread grating runs plus the silent static run."""
    multi = threads or multi_thread_count()
    results = [measure(346, 260, n_frames, 1, repeats)]
    results.append(measure(346, 260, n_frames, multi, repeats))
    results.append(measure(346, 260, n_frames, 1, repeats, workload="static"))
    if (width, height) != (346, 260):
        results.append(measure(width, height, n_frames, 1, repeats))
        results.append(measure(width, height, n_frames, multi, repeats))
    return results


def format_report(results) -> str:
    lines = [f"cpu_count={os.cpu_count()}"]
    for i, r in enumerate(results):
        tag = f"run{i}"
        lines += [f"{tag}.workload={r.workload}", f"{tag}.resolution={r.width}x{r.height}",
                  f"{tag}.threads={r.threads}", f"{tag}.frames={r.frames}",
                  f"{tag}.seconds={r.seconds:.6f}", f"{tag}.fps={r.fps:.2f}",
                  f"{tag}.events={r.events}", f"{tag}.events_per_s={r.events_per_s:.0f}"]
    return "\n".join(lines) + "\n"
