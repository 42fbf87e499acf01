"""Compiled per-pixel kernels.

Everything here is ``nogil`` so row chunks can run on a plain thread pool.
Random numbers come from a counter-based hash keyed on
(seed, pixel index, interval index, draw index): output never depends on
how pixels are scheduled.
"""

import math

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_INV53 = 1.0 / 9007199254740992.0  # 2**-53

ON = 1
OFF = 0


@njit(cache=True, nogil=True, inline="always")
def fmix64(z):
    z = np.uint64(z)
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, nogil=True)
def seed_key(seed):
    return fmix64(np.uint64(seed) + _GOLDEN)


@njit(cache=True, nogil=True, inline="always")
def stream_key(key, pix, interval):
    ctr = (np.uint64(interval) << _S32) | np.uint64(pix)
    return fmix64(key ^ fmix64(ctr + _GOLDEN))


@njit(cache=True, nogil=True, inline="always")
def uniform(stream, draw):
    """Uniform variate in the open interval (0, 1)."""
    bits = fmix64(stream + (np.uint64(draw) + _ONE) * _GOLDEN) >> _S11
    return (np.float64(np.int64(bits)) + 0.5) * _INV53


def _ziggurat_tables():
    # Marsaglia & Tsang (2000), 128 layers
    dn, vn, m1 = 3.442619855899, 9.91256303526217e-3, 2147483648.0
    kn = np.zeros(128)
    wn = np.zeros(128)
    fn = np.zeros(128)
    q = vn / math.exp(-0.5 * dn * dn)
    kn[0] = dn / q * m1
    wn[0] = q / m1
    wn[127] = dn / m1
    fn[0] = 1.0
    fn[127] = math.exp(-0.5 * dn * dn)
    tn = dn
    for i in range(126, 0, -1):
        dn = math.sqrt(-2.0 * math.log(vn / dn + math.exp(-0.5 * dn * dn)))
        kn[i + 1] = dn / tn * m1
        tn = dn
        fn[i] = math.exp(-0.5 * dn * dn)
        wn[i] = dn / m1
    return kn, wn, fn


_KN, _WN, _FN = _ziggurat_tables()
_ZIG_R = 3.442619855899
_M7 = np.uint64(127)
_HALF32 = np.int64(2147483648)


@njit(cache=True, nogil=True)
def _normal_tail(stream, draw, hz, iz):
    while True:
        x = hz * _WN[iz]
        if iz == 0:
            while True:
                x = -math.log(uniform(stream, draw)) / _ZIG_R
                y = -math.log(uniform(stream, draw + 1))
                draw += 2
                if y + y >= x * x:
                    break
            return (_ZIG_R + x if hz > 0 else -_ZIG_R - x), draw
        if _FN[iz] + uniform(stream, draw) * (_FN[iz - 1] - _FN[iz]) < math.exp(-0.5 * x * x):
            return x, draw + 1
        bits = fmix64(stream + (np.uint64(draw + 1) + _ONE) * _GOLDEN)
        draw += 2
        iz = np.int64(bits & _M7)
        hz = np.int64(bits >> _S32) - _HALF32
        if abs(hz) < _KN[iz]:
            return hz * _WN[iz], draw


@njit(cache=True, nogil=True, inline="always")
def normal(stream, draw):
    """Standard normal variate via the ziggurat; returns (z, next draw index)."""
    bits = fmix64(stream + (np.uint64(draw) + _ONE) * _GOLDEN)
    iz = np.int64(bits & _M7)
    hz = np.int64(bits >> _S32) - _HALF32
    if abs(hz) < _KN[iz]:
        return hz * _WN[iz], draw + 1
    return _normal_tail(stream, draw + 1, hz, iz)


@njit(cache=True, nogil=True)
def normals(key, n):
    stream = stream_key(key, 0, 0)
    out = np.empty(n)
    draw = 0
    for i in range(n):
        out[i], draw = normal(stream, draw)
    return out


@njit(cache=True, nogil=True, inline="always")
def ig_from_variates(mean, shape, z, u):
    """Michael-Schucany-Haas transform of (z ~ N(0,1), u ~ U(0,1)) into IG(mean, shape).

    Written in the cancellation-free form so that a huge ``shape`` (vanishing
    diffusion) degrades gracefully to ``mean``.
    """
    if not math.isfinite(shape):
        return mean
    my = mean * z * z
    x = mean - 2.0 * mean * my / (my + math.sqrt(4.0 * shape * my + my * my) + 1e-300)
    if x <= 0.0:
        # underflow for extreme z; the reflected root is then ~0 as well
        x = 1e-300
    if u * (mean + x) <= mean:
        return x
    return mean * mean / x


@njit(cache=True, nogil=True, inline="always")
def hit_time(mu_abs, sigma, barrier, eps, z, u):
    """First time a drift-diffusion with |drift| ``mu_abs`` covers ``barrier``."""
    if mu_abs > eps:
        if sigma <= 0.0:
            return barrier / mu_abs
        return ig_from_variates(barrier / mu_abs, (barrier / sigma) ** 2, z, u)
    if sigma <= 0.0:
        return math.inf
    return (barrier / sigma) ** 2 / (z * z + 1e-300)


@njit(cache=True, nogil=True)
def hit_times(mu, sigma, barrier, eps, z, u):
    out = np.empty(z.shape[0])
    for i in range(z.shape[0]):
        out[i] = hit_time(abs(mu), sigma, barrier, eps, z[i], u[i])
    return out


@njit(cache=True, nogil=True, inline="always")
def _clamp_residual(v, theta_on, theta_off):
    lo = -0.999 * theta_on
    hi = 0.999 * theta_off
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


@njit(cache=True, nogil=True, inline="always")
def simulate_pixel(l_start, l_end, dt, t0, pix, interval, v, params, key,
                   out_t, out_p, n_out):
    """Run one pixel across one frame interval.

    ``params`` is (k1, k2, k3, k4, k5, k6, theta_on, theta_off, eps).
    Events go to ``out_t``/``out_p`` starting at ``n_out``; when the buffers
    fill up the remaining events are still counted but not stored.
    Returns (number of events, new residual voltage).
    """
    k1, k2, k3, k4, k5, k6, theta_on, theta_off, eps = params
    lbar = 0.5 * (l_start + l_end)
    inv_l = 1.0 / (lbar + k2)
    mu = k1 * inv_l * (l_end - l_start) / dt + k4 + k5 * lbar
    sigma = k3 * inv_l * math.sqrt(lbar) + k6
    mu_abs = abs(mu)
    if sigma <= 0.0 and mu_abs <= eps:
        return 0, _clamp_residual(v + mu * dt, theta_on, theta_off)

    drifting = mu_abs > eps
    inv_mu = 1.0 / mu_abs if drifting else 0.0
    s2 = sigma * sigma      # can underflow to 0 for subnormal sigma
    inv_s2 = 1.0 / s2 if s2 > 0.0 else math.inf
    stream = stream_key(key, pix, interval)
    t_end = t0 + math.floor(dt)
    elapsed = 0.0
    last = np.int64(-1)
    count = 0
    draw = 0
    cap = out_t.shape[0]
    while True:
        uc = uniform(stream, draw)
        draw += 1
        z = 0.0
        if sigma > 0.0:
            z, draw = normal(stream, draw)
        if drifting:
            up = mu > 0.0
        else:
            up = uc < 0.5
        barrier = theta_off - v if up else theta_on + v
        if drifting and sigma > 0.0:
            tau = ig_from_variates(barrier * inv_mu, barrier * barrier * inv_s2, z, uc)
        else:
            tau = hit_time(mu_abs, sigma, barrier, eps, z, uc)
        remaining = dt - elapsed
        if tau <= remaining:
            stamp = t0 + np.int64(math.floor(elapsed + tau))
            if stamp <= last:
                stamp = last + 1
            if stamp < t_end:
                k = n_out + count
                if k < cap:
                    out_t[k] = stamp
                    out_p[k] = ON if up else OFF
                count += 1
                last = stamp
                elapsed += tau
                v = 0.0
                continue
        v = _clamp_residual(v + mu * remaining, theta_on, theta_off)
        break
    return count, v


@njit(cache=True, nogil=True)
def simulate_rows(l0, l1, v_in, v_out, row_start, row_stop, width, dt, t0, interval,
                  params, key, out_t, out_x, out_y, out_p):
    """Simulate rows [row_start, row_stop) of one frame interval.

    Residual voltages are read from ``v_in`` and written to ``v_out``. Events
    are stored in pixel order (row-major), time-ordered within a pixel.
    Returns the number of events; if that exceeds the buffer length the
    buffers hold garbage and the caller must retry with larger ones.
    """
    cap = out_t.shape[0]
    n = 0
    for y in range(row_start, row_stop):
        for x in range(width):
            count, v_new = simulate_pixel(
                np.float64(l0[y, x]), np.float64(l1[y, x]), dt, t0,
                y * width + x, interval, v_in[y, x], params, key, out_t, out_p, n)
            v_out[y, x] = v_new
            stop = min(n + count, cap)
            for k in range(n, stop):
                out_x[k] = x
                out_y[k] = y
            n += count
    return n


@njit(cache=True, nogil=True)
def stable_time_order(t, t0, span):
    """Stable counting sort of timestamps known to lie in [t0, t0 + span)."""
    counts = np.zeros(span + 1, dtype=np.int64)
    for i in range(t.shape[0]):
        counts[t[i] - t0 + 1] += 1
    for i in range(1, span + 1):
        counts[i] += counts[i - 1]
    order = np.empty(t.shape[0], dtype=np.int64)
    for i in range(t.shape[0]):
        b = t[i] - t0
        order[counts[b]] = i
        counts[b] += 1
    return order
