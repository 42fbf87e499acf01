import math

import numpy as np
import pytest
from scipy import stats

from evsynth import DriftDiffusion, ModelParams, compute_drift_diffusion, sample_hitting_time
from evsynth import _kernels


def test_drift_direct_substitution():
    p = ModelParams(k1=1, k2=1, k3=0, k4=0, k5=0, k6=0)
    dd = compute_drift_diffusion(1.0, 2.0, p)
    assert dd.mu == pytest.approx(1.0)
    assert dd.sigma == 0.0


def test_diffusion_shot_noise_term():
    p = ModelParams(k1=0, k2=1e-9, k3=1, k4=0, k5=0, k6=0)
    assert compute_drift_diffusion(4.0, 0.0, p).sigma == pytest.approx(0.5, rel=1e-8)


def test_zero_brightness_limit():
    p = ModelParams(k1=3, k2=2, k3=7, k4=1e-7, k5=4e-8, k6=3e-5)
    dd = compute_drift_diffusion(0.0, 0.0, p)
    assert dd.mu == pytest.approx(p.k4)
    assert dd.sigma == pytest.approx(p.k6)


def test_drift_vectorised():
    p = ModelParams()
    dd = compute_drift_diffusion(np.array([0.0, 10.0]), np.array([0.0, 1e-3]), p)
    assert dd.mu.shape == (2,)
    assert dd.mu[1] == pytest.approx(p.k1 / (10 + p.k2) * 1e-3 + p.k4 + p.k5 * 10)


@pytest.mark.parametrize("l_bar, k_dl", [(-1.0, 0.0), (math.nan, 0.0), (1.0, math.inf)])
def test_drift_rejects_bad_inputs(l_bar, k_dl):
    with pytest.raises(ValueError):
        compute_drift_diffusion(l_bar, k_dl, ModelParams())


@pytest.mark.parametrize("field, value", [("k2", 0.0), ("k1", -1.0), ("k6", -1e-9),
                                          ("theta_on", 0.0), ("k4", math.nan)])
def test_params_invariants(field, value):
    with pytest.raises(ValueError):
        ModelParams(**{field: value})


def test_ig_sample_mean(rng):
    s = sample_hitting_time(DriftDiffusion(2.0, 1.0), 1.0, rng, size=100_000)
    # IG variance m^3/lambda = 0.125 -> standard error ~1.1e-3
    assert s.mean() == pytest.approx(0.5, abs=5e-3)


def test_vanishing_diffusion_is_deterministic(rng):
    s = sample_hitting_time(DriftDiffusion(1.0, 1e-9), 1.0, rng, size=10_000)
    assert np.all(np.abs(s - 1.0) < 1e-3)
    assert sample_hitting_time(DriftDiffusion(1.0, 0.0), 1.0, rng) == 1.0


def test_negative_drift_uses_magnitude(rng):
    a = sample_hitting_time(DriftDiffusion(-2.0, 0.0), 1.0, rng)
    assert a == pytest.approx(0.5)


def test_ig_matches_analytic_cdf(rng):
    s = sample_hitting_time(DriftDiffusion(1.0, 1.0), 1.0, rng, size=100_000)
    # scipy's invgauss(mu, scale) has mean mu*scale and shape scale
    ks = stats.kstest(s, stats.invgauss(mu=1.0, scale=1.0).cdf).statistic
    assert ks < 0.01


def test_levy_branch_matches_analytic_cdf(rng):
    s = sample_hitting_time(DriftDiffusion(0.0, 2.0), 1.5, rng, size=100_000)
    ks = stats.kstest(s, stats.levy(scale=(1.5 / 2.0) ** 2).cdf).statistic
    assert ks < 0.01


def test_sampler_errors(rng):
    with pytest.raises(ValueError):
        sample_hitting_time(DriftDiffusion(1.0, 1.0), 0.0, rng)
    assert sample_hitting_time(DriftDiffusion(0.0, 0.0), 1.0, rng) == math.inf


def test_counter_normals_are_standard():
    z = _kernels.normals(_kernels.seed_key(np.uint64(99)), 1_000_000)
    assert abs(z.mean()) < 5e-3
    assert z.var() == pytest.approx(1.0, abs=5e-3)
    assert stats.kstest(z, "norm").statistic < 2e-3
    # tail layer of the ziggurat
    assert np.mean(np.abs(z) > 3.5) == pytest.approx(2 * stats.norm.sf(3.5), rel=0.15)


def test_counter_uniforms_in_open_interval():
    key = _kernels.seed_key(np.uint64(7))
    stream = _kernels.stream_key(key, 3, 4)
    u = np.array([_kernels.uniform(stream, i) for i in range(20_000)])
    assert u.min() > 0 and u.max() < 1
    assert stats.kstest(u, "uniform").statistic < 0.015
