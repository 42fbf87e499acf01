"""Recover model parameters from a frame recording and its events.

Pipeline: pair every event with the brightness of its bracketing frames,
bin events on a (mean brightness, brightness change) grid, fit the
inter-event intervals of each bin with an inverse Gaussian (or Levy when the
brightness change is near zero), then regress the fitted drifts on
brightness in three stages. The regression result seeds an optional
derivative-free search that scores candidates by a sliced Wasserstein
distance between simulated and reference event clouds.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import stats

from .errors import CalibrationError, FormatError
from .events import EventStream
from .frames import FrameSequence
from .model import K_NAMES, GeneratorConfig, ModelParams

ON, OFF = 1, 0


class EnrichedEvent(NamedTuple):
    t: int
    x: int
    y: int
    p: int
    l_bar: float
    delta_l: float


@dataclass
class EnrichedEvents:
    """Columnar events with the brightness of their bracketing frames."""

    events: np.ndarray          # EVENT_DTYPE records
    l_bar: np.ndarray
    delta_l: np.ndarray
    frame_interval: float       # median frame spacing, us
    dropped: int = 0

    def __len__(self):
        return len(self.events)

    def __getitem__(self, i) -> EnrichedEvent:
        e = self.events[i]
        return EnrichedEvent(int(e["t"]), int(e["x"]), int(e["y"]), int(e["p"]),
                             float(self.l_bar[i]), float(self.delta_l[i]))


def enrich_events(stream: EventStream, frames: FrameSequence) -> EnrichedEvents:
    """Attach (L_i + L_{i+1})/2 and L_{i+1} - L_i from the frames around each event.

    Events before the first or after the last frame are dropped and counted.
    """
    if frames.bayer_pattern != 0:
        raise FormatError("frames must be luminance, not a Bayer mosaic")
    if (stream.width, stream.height) != (frames.width, frames.height):
        raise FormatError(f"event geometry {stream.width}x{stream.height} does not match "
                          f"frames {frames.width}x{frames.height}")
    if len(frames) < 2:
        raise FormatError("need at least two frames")
    ts = frames.timestamps.astype(np.int64)
    ev = stream.events
    t = ev["t"].astype(np.int64)
    idx = np.searchsorted(ts, t, side="right") - 1
    idx = np.where(t == ts[-1], len(ts) - 2, idx)
    keep = (idx >= 0) & (idx <= len(ts) - 2)
    ev, idx = ev[keep], idx[keep]
    x = ev["x"].astype(np.intp)
    y = ev["y"].astype(np.intp)
    l0 = frames.frames[idx, y, x].astype(np.float64)
    l1 = frames.frames[idx + 1, y, x].astype(np.float64)
    return EnrichedEvents(ev, (l0 + l1) / 2, l1 - l0, float(np.median(np.diff(ts))),
                          int(np.count_nonzero(~keep)))


@dataclass(frozen=True)
class BinStat:
    l_bar_mid: float
    delta_l_mid: float
    mu_hat: float       # 1/us, positive for ON
    sigma_hat: float    # 1/sqrt(us)
    n: int
    polarity: str = "merged"
    kind: str = "ig"    # "ig" or "levy"


@dataclass
class BinFit:
    """Output of :func:`bin_and_fit`; iterating yields the merged bins."""

    bins: list
    per_polarity: list
    degenerate: list
    occupancy: np.ndarray       # intervals per cell, [l_bar bin, delta_l bin]
    l_edges: np.ndarray
    dl_edges: np.ndarray
    frame_interval: float
    n_min: int

    def __iter__(self):
        return iter(self.bins)

    def __len__(self):
        return len(self.bins)


def default_grid(enriched: EnrichedEvents, n_l=16, n_dl=16):
    """Uniform grid over the data range, symmetric in brightness change."""
    lo, hi = float(enriched.l_bar.min()), float(enriched.l_bar.max())
    if hi <= lo:
        hi = lo + 1.0
    dmax = float(np.abs(enriched.delta_l).max()) or 1.0
    return np.linspace(lo, hi * (1 + 1e-9), n_l + 1), np.linspace(-dmax, dmax * (1 + 1e-9), n_dl + 1)


def fit_inverse_gaussian(tau):
    """Maximum-likelihood (mean, shape); shape is ``inf`` for zero-variance samples."""
    tau = np.asarray(tau, dtype=np.float64)
    m = tau.mean()
    excess = np.mean(1.0 / tau) - 1.0 / m
    if excess <= 1e-12 / m:
        return m, math.inf
    return m, 1.0 / excess


def fit_levy(tau):
    """Maximum-likelihood scale of a location-0 Levy distribution."""
    tau = np.asarray(tau, dtype=np.float64)
    return len(tau) / np.sum(1.0 / tau)


def _cell_intervals(enriched, li, di):
    """Per-pixel, per-polarity intervals whose two events share a grid cell."""
    ev = enriched.events
    order = np.lexsort((ev["t"], ev["p"], ev["x"], ev["y"]))
    e = ev[order]
    cell_l, cell_d = li[order], di[order]
    same = ((e["x"][1:] == e["x"][:-1]) & (e["y"][1:] == e["y"][:-1])
            & (e["p"][1:] == e["p"][:-1])
            & (cell_l[1:] == cell_l[:-1]) & (cell_d[1:] == cell_d[:-1])
            & (cell_l[1:] >= 0) & (cell_d[1:] >= 0))
    tau = (e["t"][1:].astype(np.int64) - e["t"][:-1].astype(np.int64)).astype(np.float64)
    sel = same & (tau > 0)
    return cell_l[1:][sel], cell_d[1:][sel], e["p"][1:][sel], tau[sel]


def bin_and_fit(enriched: EnrichedEvents, grid=None, n_min: int = 200,
                theta_on: float = 1.0, theta_off: float = 1.0) -> BinFit:
    """Fit drift and diffusion per (mean brightness, brightness change) cell.

    ``grid`` is a pair of bin-edge arrays; cells whose brightness-change
    midpoint lies within one cell width of zero use the Levy fit.
    """
    if grid is None:
        grid = default_grid(enriched)
    l_edges = np.asarray(grid[0], dtype=np.float64)
    dl_edges = np.asarray(grid[1], dtype=np.float64)
    for edges in (l_edges, dl_edges):
        if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
            raise ValueError("grid edges must be strictly increasing")
    n_l, n_dl = len(l_edges) - 1, len(dl_edges) - 1

    def cell(values, edges, n):
        i = np.searchsorted(edges, values, side="right") - 1
        return np.where((i >= 0) & (i < n), i, -1)

    li = cell(enriched.l_bar, l_edges, n_l)
    di = cell(enriched.delta_l, dl_edges, n_dl)
    cl, cd, pol, tau = _cell_intervals(enriched, li, di)
    occupancy = np.zeros((n_l, n_dl), np.int64)
    np.add.at(occupancy, (cl, cd), 1)

    l_mid = 0.5 * (l_edges[1:] + l_edges[:-1])
    d_mid = 0.5 * (dl_edges[1:] + dl_edges[:-1])
    d_width = np.diff(dl_edges)
    key = (cl * n_dl + cd) * 2 + pol
    order = np.argsort(key, kind="stable")
    key, tau = key[order], tau[order]
    starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
    ends = np.r_[starts[1:], len(key)]

    per_pol, degenerate = [], []
    for s, e in zip(starts, ends):
        n = e - s
        k = int(key[s])
        p, c = k % 2, k // 2
        i, j = divmod(c, n_dl)
        if n < n_min:
            continue
        theta = theta_off if p == ON else theta_on
        sign = 1.0 if p == ON else -1.0
        name = "ON" if p == ON else "OFF"
        sample = tau[s:e]
        if abs(d_mid[j]) < d_width[j]:
            c_hat = fit_levy(sample)
            per_pol.append(BinStat(l_mid[i], d_mid[j], 0.0, theta / math.sqrt(c_hat), n,
                                   name, "levy"))
            continue
        m, lam = fit_inverse_gaussian(sample)
        if math.isinf(lam):
            degenerate.append((float(l_mid[i]), float(d_mid[j]), name, int(n), float(m)))
            continue
        per_pol.append(BinStat(l_mid[i], d_mid[j], sign * theta / m, theta / math.sqrt(lam),
                               n, name, "ig"))
    return BinFit(_merge_polarities(per_pol), per_pol, degenerate, occupancy, l_edges,
                  dl_edges, enriched.frame_interval, n_min)


def _merge_polarities(per_pol):
    cells = {}
    for b in per_pol:
        cells.setdefault((b.l_bar_mid, b.delta_l_mid), []).append(b)
    merged = []
    for (lm, dm), group in sorted(cells.items()):
        if len(group) == 1:
            merged.append(BinStat(lm, dm, group[0].mu_hat, group[0].sigma_hat, group[0].n,
                                  "merged", group[0].kind))
            continue
        n = np.array([b.n for b in group], dtype=np.float64)
        mu = float(np.dot(n, [b.mu_hat for b in group]) / n.sum())
        sigma = float(np.dot(n, [b.sigma_hat for b in group]) / n.sum())
        kind = "levy" if all(b.kind == "levy" for b in group) else "ig"
        merged.append(BinStat(lm, dm, mu, sigma, int(n.sum()), "merged", kind))
    return merged


def _wls(design, y, w):
    """Weighted least squares; returns (coef, rank)."""
    sw = np.sqrt(np.asarray(w, dtype=np.float64))
    coef, _, rank, _ = np.linalg.lstsq(design * sw[:, None], y * sw, rcond=None)
    return coef, rank


@dataclass(frozen=True)
class GroupFit:
    l_bar: float
    a: float        # slope of drift on brightness rate
    b: float        # intercept, 1/us
    weight: float
    n_points: int


@dataclass
class Stage1:
    groups: list
    skipped: list = field(default_factory=list)


def regress_stage1(bins, frame_interval: float) -> Stage1:
    """Per mean-brightness group, weighted fit of drift against brightness rate."""
    groups, skipped = {}, []
    for b in bins:
        groups.setdefault(b.l_bar_mid, []).append(b)
    out = []
    for lm in sorted(groups):
        g = groups[lm]
        k_dl = np.array([b.delta_l_mid for b in g]) / frame_interval
        if len(np.unique(k_dl)) < 2:
            skipped.append(lm)
            continue
        mu = np.array([b.mu_hat for b in g])
        w = np.array([b.n for b in g], dtype=np.float64)
        (a, intercept), _ = _wls(np.column_stack([k_dl, np.ones_like(k_dl)]), mu, w)
        out.append(GroupFit(float(lm), float(a), float(intercept), float(w.sum()), len(g)))
    return Stage1(out, skipped)


def regress_stage2(groups) -> tuple[float, float, dict]:
    """Global fit of 1/a_n = L/k1 + k2/k1; returns (k1, k2, diagnostics)."""
    groups = [g for g in groups if g.a != 0 and math.isfinite(g.a)]
    positive = sum(g.weight for g in groups if g.a > 0)
    negative = sum(g.weight for g in groups if g.a < 0)
    sign = 1.0 if positive >= negative else -1.0
    used = [g for g in groups if np.sign(g.a) == sign]
    dropped = [g.l_bar for g in groups if np.sign(g.a) != sign]
    diag = {"groups_used": len(used), "groups_dropped": dropped}
    if len(used) < 2:
        raise CalibrationError("need at least two brightness groups with a consistent slope sign",
                               diag)
    lb = np.array([g.l_bar for g in used])
    inv_a = 1.0 / np.array([g.a for g in used])
    w = np.array([g.weight for g in used])
    (slope, intercept), rank = _wls(np.column_stack([lb, np.ones_like(lb)]), inv_a, w)
    scale = np.abs(inv_a).max() / max(np.ptp(lb), 1e-300)
    if rank < 2 or abs(slope) <= 1e-9 * scale:
        raise CalibrationError("k1 unidentifiable: 1/a_n does not vary with brightness", diag)
    k1 = 1.0 / slope
    diag.update(slope=float(slope), intercept=float(intercept))
    return float(k1), float(intercept * k1), diag


def regress_stage3(bins, k2: float, frame_interval: float) -> tuple[float, float, float]:
    """Multivariate fit mu = k1' c + k5 L + k4 with c = k_dL / (L + k2); returns (k1', k5, k4)."""
    lb = np.array([b.l_bar_mid for b in bins], dtype=np.float64)
    k_dl = np.array([b.delta_l_mid for b in bins], dtype=np.float64) / frame_interval
    mu = np.array([b.mu_hat for b in bins], dtype=np.float64)
    w = np.array([b.n for b in bins], dtype=np.float64)
    design = np.column_stack([k_dl / (lb + k2), lb, np.ones_like(lb)])
    # columns differ by orders of magnitude; normalize before testing rank
    scale = np.abs(design).max(axis=0)
    scale[scale == 0] = 1.0
    coef, rank = _wls(design / scale, mu, w)
    if rank < 3:
        raise CalibrationError("stage-3 design matrix is rank deficient",
                               {"rank": int(rank), "bins": len(bins)})
    k1p, k5, k4 = coef / scale
    return float(k1p), float(k5), float(k4)


def fit_sigma_params(bins, k2: float) -> tuple[float, float]:
    """Fit sigma = k3 sqrt(L)/(L + k2) + k6; both clamped at zero."""
    lb = np.array([b.l_bar_mid for b in bins], dtype=np.float64)
    if len(np.unique(lb)) < 2:
        raise CalibrationError("need at least two distinct brightness groups for the sigma fit")
    sigma = np.array([b.sigma_hat for b in bins], dtype=np.float64)
    w = np.array([b.n for b in bins], dtype=np.float64)
    x = np.sqrt(np.maximum(lb, 0)) / (lb + k2)
    (k3, k6), rank = _wls(np.column_stack([x, np.ones_like(x)]), sigma, w)
    if rank < 2:
        raise CalibrationError("sigma design matrix is rank deficient")
    return max(float(k3), 0.0), max(float(k6), 0.0)


@dataclass
class RegressionResult:
    k1: float
    k2: float
    k4: float
    k5: float
    k1_prime: float
    k3: float = 0.0
    k6: float = 0.0
    groups: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def consistency(self) -> float:
        return self.k1_prime / self.k1

    def to_params(self, base: ModelParams | None = None) -> ModelParams:
        """Clamp into the valid parameter domain (k2 > 0, the rest >= 0)."""
        base = base or ModelParams()
        return base.replace(k1=max(self.k1, 0.0), k2=max(self.k2, 1e-6), k3=max(self.k3, 0.0),
                            k4=max(self.k4, 0.0), k5=max(self.k5, 0.0), k6=max(self.k6, 0.0))


def calibrate(stream: EventStream, frames: FrameSequence, grid=None, n_min: int = 200,
              theta_on: float = 1.0, theta_off: float = 1.0):
    """Run enrichment, binning and all regressions; returns (RegressionResult, BinFit)."""
    enriched = enrich_events(stream, frames)
    fit = bin_and_fit(enriched, grid, n_min, theta_on, theta_off)
    if not fit.bins:
        raise CalibrationError("no grid cell reached n_min intervals",
                               {"n_min": n_min, "max_occupancy": int(fit.occupancy.max())})
    s1 = regress_stage1(fit.bins, fit.frame_interval)
    k1, k2, diag2 = regress_stage2(s1.groups)
    k1p, k5, k4 = regress_stage3(fit.bins, k2, fit.frame_interval)
    try:
        k3, k6 = fit_sigma_params(fit.bins, k2)
    except CalibrationError:
        k3, k6 = 0.0, 0.0
    diag = {"dropped_events": enriched.dropped, "stage1_skipped": s1.skipped, **diag2}
    return RegressionResult(k1, k2, k4, k5, k1p, k3, k6, s1.groups, diag), fit


def _cloud(stream, n_sub, t_min, scales):
    ev = stream.events
    n = len(ev)
    idx = np.arange(n) if n <= n_sub else (np.arange(n_sub) * n) // n_sub
    ev = ev[idx]
    sx, sy, st = scales
    return np.column_stack([ev["x"] / sx, ev["y"] / sy,
                            (ev["t"].astype(np.int64) - t_min) / st])


def emd_distance(a: EventStream, b: EventStream, norm=None, n_sub: int = 4096,
                 n_proj: int = 64, seed: int = 0, directions=None) -> float:
    """Sliced 1-Wasserstein distance between two (x, y, t) event clouds.

    Coordinates are divided by ``norm = (x scale, y scale, t scale)``, which
    defaults to the sensor size and the joint recording duration. Each stream
    is stride-subsampled to at most ``n_sub`` events and projected on
    ``n_proj`` seeded unit directions (or explicit ``directions``).
    """
    if len(a) == 0 or len(b) == 0:
        raise ValueError("emd_distance needs two non-empty streams")
    ta, tb = a.events["t"].astype(np.int64), b.events["t"].astype(np.int64)
    t_min = min(ta.min(), tb.min())
    if norm is None:
        span = max(ta.max(), tb.max()) - t_min
        norm = (max(a.width, b.width, 1), max(a.height, b.height, 1), max(span, 1))
    ca, cb = _cloud(a, n_sub, t_min, norm), _cloud(b, n_sub, t_min, norm)
    if directions is None:
        directions = np.random.default_rng(seed).standard_normal((n_proj, 3))
    directions = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    directions = directions / np.linalg.norm(directions, axis=1, keepdims=True)
    pa, pb = ca @ directions.T, cb @ directions.T
    return float(np.mean([stats.wasserstein_distance(pa[:, k], pb[:, k])
                          for k in range(len(directions))]))


@dataclass(frozen=True)
class Trial:
    index: int
    phase: str          # init, random or refine
    params: ModelParams
    emd: float
    feasible: bool = True


@dataclass
class SearchReport:
    trials: list

    @property
    def best(self) -> Trial:
        return min(self.trials, key=lambda tr: (tr.emd, tr.index))

    @property
    def best_params(self) -> ModelParams:
        return self.best.params

    @property
    def best_emd(self) -> float:
        return self.best.emd

    @property
    def best_so_far(self) -> np.ndarray:
        return np.minimum.accumulate([tr.emd for tr in self.trials])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("trial,phase,feasible,emd," + ",".join(K_NAMES) + "\n")
        for tr in self.trials:
            ks = ",".join(repr(getattr(tr.params, k)) for k in K_NAMES)
            buf.write(f"{tr.index},{tr.phase},{int(tr.feasible)},{tr.emd!r},{ks}\n")
        return buf.getvalue()


def search_params(frames: FrameSequence, reference: EventStream, init, bounds: dict,
                  budget: int = 200, seed: int = 0, gen_seed: int = 0, threads: int = 1,
                  emd_kwargs: dict | None = None, random_fraction: float = 0.5,
                  log=None) -> SearchReport:
    """Derivative-free refinement of ``init`` against ``reference`` events.

    ``bounds`` maps k names to (low, high); other parameters stay at ``init``.
    Trial 0 is ``init`` clipped to the bounds. Then roughly
    ``random_fraction`` of the budget samples log-uniformly within a factor
    of 4 of ``init``, and the rest perturbs the incumbent one coordinate at a
    time by a shrinking multiplicative step. A trial whose generation fails is
    logged with infinite distance.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    base = init.to_params() if isinstance(init, RegressionResult) else init
    for name, (lo, hi) in bounds.items():
        if name not in K_NAMES:
            raise ValueError(f"unknown parameter {name!r}")
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
            raise ValueError(f"bad bounds for {name}: {(lo, hi)}")
    names = sorted(bounds)
    rng = np.random.default_rng(seed)
    emd_kwargs = emd_kwargs or {}
    trials: list[Trial] = []

    def clip(values):
        return {k: float(np.clip(v, *bounds[k])) for k, v in values.items()}

    def run(values, phase):
        try:
            params = base.replace(**values)
            stream = _generate(frames, GeneratorConfig(params=params, seed=gen_seed,
                                                       threads=threads))
            emd = emd_distance(stream, reference, **emd_kwargs)
            tr = Trial(len(trials), phase, params, emd)
        except (ValueError, CalibrationError) as exc:
            tr = Trial(len(trials), phase, base, math.inf, feasible=False)
            if log:
                log(f"trial {len(trials)} infeasible: {exc}")
        trials.append(tr)
        if log:
            log(f"trial {tr.index} {phase} emd={tr.emd:.6g}")
        return tr

    start = clip({k: getattr(base, k) for k in names})
    run(start, "init")
    n_random = int(round((budget - 1) * random_fraction))
    for _ in range(min(n_random, budget - 1)):
        values = {}
        for k in names:
            lo, hi = bounds[k]
            c = start[k]
            a = max(lo, c / 4) if c > 0 else max(lo, hi * 1e-3)
            b = min(hi, c * 4) if c > 0 else hi
            if b <= 0:
                values[k] = 0.0
            elif a <= 0:
                values[k] = float(rng.uniform(0, b))
            else:
                values[k] = float(math.exp(rng.uniform(math.log(a), math.log(max(a, b)))))
        run(clip(values), "random")

    best = min(trials, key=lambda tr: tr.emd)
    incumbent = {k: getattr(best.params, k) for k in names} if best.feasible else start
    best_emd = best.emd
    step = 0.5
    while len(trials) < budget:
        improved = False
        for k in names:
            for factor in (1 + step, 1 / (1 + step)):
                if len(trials) >= budget:
                    break
                cand = dict(incumbent)
                lo, hi = bounds[k]
                cand[k] = cand[k] * factor if cand[k] > 0 else (hi * 1e-3 if factor > 1 else lo)
                cand = clip(cand)
                tr = run(cand, "refine")
                if tr.emd < best_emd:
                    best_emd, incumbent, improved = tr.emd, cand, True
                    break
        if not improved:
            step /= 2
    return SearchReport(trials)


def _generate(frames, cfg):
    from .generator import generate_events_sequence

    stream = generate_events_sequence(frames, cfg)
    if len(stream) == 0:
        raise CalibrationError("candidate produced no events")
    return stream


def format_report(result: RegressionResult, fit: BinFit | None = None,
                  search: SearchReport | None = None) -> str:
    """Calibration report as key=value lines, with the trial log as an embedded CSV block."""
    lines = ["# calibration report"]
    for k in ("k1", "k2", "k3", "k4", "k5", "k6", "k1_prime"):
        lines.append(f"{k}={getattr(result, k)!r}")
    lines.append(f"consistency_k1_prime_over_k1={result.consistency!r}")
    for key, value in result.diagnostics.items():
        lines.append(f"diag.{key}={value}")
    for i, g in enumerate(result.groups):
        lines.append(f"stage1.group{i}=l_bar:{g.l_bar!r};a:{g.a!r};b:{g.b!r};"
                     f"weight:{g.weight:g};points:{g.n_points}")
    if fit is not None:
        lines.append(f"bins.used={len(fit.bins)}")
        lines.append(f"bins.per_polarity={len(fit.per_polarity)}")
        lines.append(f"bins.degenerate={len(fit.degenerate)}")
        lines.append(f"bins.n_min={fit.n_min}")
        lines.append(f"bins.frame_interval_us={fit.frame_interval!r}")
        lines.append("occupancy.l_bar_edges=" + ";".join(f"{v:g}" for v in fit.l_edges))
        lines.append("occupancy.delta_l_edges=" + ";".join(f"{v:g}" for v in fit.dl_edges))
        for i, row in enumerate(fit.occupancy):
            lines.append(f"occupancy.row{i}=" + ";".join(str(int(v)) for v in row))
    if search is not None:
        lines.append(f"search.trials={len(search.trials)}")
        lines.append(f"search.best_trial={search.best.index}")
        lines.append(f"search.best_emd={search.best_emd!r}")
        for k in K_NAMES:
            lines.append(f"search.best_{k}={getattr(search.best_params, k)!r}")
        lines.append("[trials.csv]")
        lines.append(search.to_csv().rstrip("\n"))
    return "\n".join(lines) + "\n"
