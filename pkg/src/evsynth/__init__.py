"""Event-camera simulation from raw or grayscale frames, and its calibration."""

from .errors import CalibrationError, FormatError, TruncatedPayloadError
from .events import EventStream, read_events, write_events
from .frames import FrameSequence, read_frames, write_frames
from .generator import EventGenerator, generate_events_interval, generate_events_sequence
from .model import (DriftDiffusion, Event, GeneratorConfig, ModelParams, PixelState,
                    compute_drift_diffusion, sample_hitting_time)

__version__ = "0.1.0"
