"""Drift-diffusion model of a DVS pixel: parameters, drift/diffusion, hitting times."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _kernels

K_NAMES = ("k1", "k2", "k3", "k4", "k5", "k6")


@dataclass(frozen=True)
class ModelParams:
    """Calibrated constants of the pixel model.

    k1 sensitivity gain, k2 brightness offset (DN), k3 shot-noise gain,
    k4 dark leakage drift (1/us), k5 parasitic photocurrent drift
    (1/(DN us)), k6 baseline diffusion (1/sqrt(us)).
    """

    k1: float = 5.5
    k2: float = 20.0
    k3: float = 1e-4
    k4: float = 5e-8
    k5: float = 5e-8
    k6: float = 5e-5
    theta_on: float = 1.0
    theta_off: float = 1.0

    def __post_init__(self):
        for name in K_NAMES + ("theta_on", "theta_off"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value!r}")
        if self.k2 <= 0:
            raise ValueError(f"k2 must be > 0, got {self.k2}")
        for name in ("k1", "k3", "k4", "k5", "k6"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.theta_on <= 0 or self.theta_off <= 0:
            raise ValueError("thresholds must be > 0")

    def replace(self, **changes) -> ModelParams:
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict[str, float]:
        return dataclasses.asdict(self)


class DriftDiffusion(NamedTuple):
    mu: float
    sigma: float


class Event(NamedTuple):
    t: int
    x: int
    y: int
    p: int


@dataclass(frozen=True)
class GeneratorConfig:
    params: ModelParams = ModelParams()
    seed: int = 0
    mu_epsilon: float = 1e-12
    threads: int = 1

    def __post_init__(self):
        if not self.mu_epsilon > 0:
            raise ValueError("mu_epsilon must be > 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def kernel_params(self) -> tuple:
        p = self.params
        return (float(p.k1), float(p.k2), float(p.k3), float(p.k4), float(p.k5),
                float(p.k6), float(p.theta_on), float(p.theta_off), float(self.mu_epsilon))


class PixelState:
    """Residual model voltage per pixel, carried between frame intervals."""

    def __init__(self, width: int, height: int, v_res: np.ndarray | None = None):
        self.width = width
        self.height = height
        if v_res is None:
            v_res = np.zeros((height, width))
        v_res = np.ascontiguousarray(v_res, dtype=np.float64)
        if v_res.shape != (height, width):
            raise ValueError(f"v_res shape {v_res.shape} != {(height, width)}")
        self.v_res = v_res

    def check(self, params: ModelParams) -> bool:
        v = self.v_res
        return bool(np.all((v > -params.theta_on) & (v < params.theta_off)))


def compute_drift_diffusion(l_bar, k_dl, params: ModelParams):
    """Drift and diffusion of the pixel voltage for brightness ``l_bar`` changing at ``k_dl``.

    Works elementwise on arrays. Units: DN, DN/us -> 1/us, 1/sqrt(us).
    """
    l_bar = np.asarray(l_bar, dtype=np.float64)
    k_dl = np.asarray(k_dl, dtype=np.float64)
    if not (np.all(np.isfinite(l_bar)) and np.all(np.isfinite(k_dl))):
        raise ValueError("brightness inputs must be finite")
    if np.any(l_bar < 0):
        raise ValueError("l_bar must be >= 0")
    p = params
    mu = p.k1 / (l_bar + p.k2) * k_dl + p.k4 + p.k5 * l_bar
    sigma = p.k3 / (l_bar + p.k2) * np.sqrt(l_bar) + p.k6
    if mu.ndim == 0:
        return DriftDiffusion(float(mu), float(sigma))
    return DriftDiffusion(mu, sigma)


def sample_hitting_time(dd: DriftDiffusion, barrier: float, rng: np.random.Generator,
                        size: int | None = None, mu_epsilon: float = 1e-12):
    """Draw first hitting times of ``barrier`` for the process ``dd``.

    Inverse Gaussian with mean barrier/|mu| and shape barrier**2/sigma**2 when
    |mu| > mu_epsilon, Levy with scale barrier**2/sigma**2 otherwise. A process
    with no drift and no diffusion never hits: ``inf`` is returned.
    """
    if not barrier > 0:
        raise ValueError(f"barrier must be > 0, got {barrier}")
    if dd.sigma < 0:
        raise ValueError("sigma must be >= 0")
    n = 1 if size is None else int(size)
    z = rng.standard_normal(n)
    u = rng.random(n)
    # rng.random can return exactly 0; the acceptance test is u <= p so 0 is harmless
    out = _kernels.hit_times(float(dd.mu), float(dd.sigma), float(barrier),
                             float(mu_epsilon), z, u)
    return float(out[0]) if size is None else out

