"""Deterministic synthetic frame sequences for benchmarks and tests."""

import numpy as np

from .frames import FrameSequence

FRAME_INTERVAL_US = 33_333


def grating_frame(width, height, k, period=40.0, speed=2.0, mean=128.0, amp=64.0,
                  direction=(0.8, 0.6)):
    """Frame ``k`` of a sinusoidal grating drifting ``speed`` px/frame, 8-bit range."""
    xx = np.arange(width)[None, :]
    yy = np.arange(height)[:, None]
    phase = (direction[0] * xx + direction[1] * yy - speed * k) / period
    return np.floor(mean + amp * np.sin(2 * np.pi * phase) + 0.5).astype(np.uint16)


def grating(width=346, height=260, n=30, dt=FRAME_INTERVAL_US, **kw) -> FrameSequence:
    frames = np.stack([grating_frame(width, height, k, **kw) for k in range(n)])
    return FrameSequence(width, height, 8, np.arange(n, dtype=np.uint64) * dt, frames)


def moving_bar(width=346, height=260, n=30, dt=FRAME_INTERVAL_US, bar=40, speed=4,
               low=60, high=180) -> FrameSequence:
    """A bright bar sliding right with wrap-around; its two edges are mirror images,
    so rising and falling brightness changes are equally frequent."""
    xx = np.arange(width)
    frames = np.empty((n, height, width), np.uint16)
    for k in range(n):
        inside = ((xx - speed * k) % width) < bar
        frames[k] = np.where(inside, high, low)[None, :]
    return FrameSequence(width, height, 8, np.arange(n, dtype=np.uint64) * dt, frames)


def static(width=346, height=260, n=30, level=0, dt=FRAME_INTERVAL_US, bit_depth=8):
    frames = np.full((n, height, width), level, np.uint16)
    return FrameSequence(width, height, bit_depth, np.arange(n, dtype=np.uint64) * dt, frames)


def brightness_sweep(width=96, height=96, n=120, dt=FRAME_INTERVAL_US, low=100, high=1000,
                     rates=(0.03, 0.05, 0.08, 0.12), seed=0) -> FrameSequence:
    """10-bit sweep for calibration: every pixel bounces between ``low`` and ``high``
    along an exponential ramp, so its relative brightness change per frame is a
    constant +-rate. Columns cycle through ``rates``; phases are seeded per pixel.

    Drift then stays nearly constant along each ramp, and the (mean brightness,
    brightness change) plane is covered at many rates.
    """
    span = np.log(high / low)
    rate = np.asarray(rates, dtype=np.float64)[np.arange(width) % len(rates)][None, :]
    phase = np.random.default_rng(seed).uniform(0, 2 * span, size=(height, width))
    k = np.arange(n, dtype=np.float64)[:, None, None]
    pos = np.mod(phase + rate * k, 2 * span)
    tri = np.where(pos < span, pos, 2 * span - pos)
    frames = np.floor(low * np.exp(tri) + 0.5).astype(np.uint16)
    return FrameSequence(width, height, 10, np.arange(n, dtype=np.uint64) * dt, frames)
