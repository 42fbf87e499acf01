"""Align a jittery host clock to the sensor clock, then keep events inside a moving ROI."""

import math

import numpy as np

from evsynth import GeneratorConfig, generate_events_sequence, stimuli
from evsynth.sync import ClockPair, RoiTrack, apply_offset, estimate_clock_offset, filter_events_roi

rng = np.random.default_rng(0)
sensor = np.arange(300, dtype=np.int64) * 33_333
# host stamps: 5 s later, with delivery jitter up to 2 ms and a burst of lag early on
real = sensor + 5_000_000 + rng.integers(0, 2000, sensor.size)
real[20:60] += rng.integers(0, 15_000, 40)
real = np.maximum.accumulate(real)
est = estimate_clock_offset(ClockPair(sensor, real), window=30)
print(f"offset {est.offset} us from frames {est.window_start}..{est.window_start + est.window}")

frames = stimuli.moving_bar(346, 260, n=30)
events = apply_offset(generate_events_sequence(frames, GeneratorConfig(seed=3)), est.offset)

# a 60x40 box sweeping right while turning a quarter turn
t0 = int(events.events["t"].min())
t1 = int(events.events["t"].max())
track = RoiTrack([t0, t1], [80, 260], [130, 130], [30, 30], [20, 20], [0, math.pi / 2])
kept, outside = filter_events_roi(events, track)
print(f"{len(kept)} of {len(events)} events inside the ROI ({outside} outside its time span)")
