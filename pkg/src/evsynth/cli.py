"""``evsynth`` command line: convert, calibrate, sync, filter, viz, bench.

Settings come from an optional ``--config`` file and are overridden by flags.
Exit codes: 0 ok, 1 usage, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
import traceback

import numpy as np

from . import bench, calib
from .config import ConfigError, RunConfig, apply_settings, load_config
from .errors import CalibrationError, FormatError
from .events import (accumulate_heatmap, export_point_cloud, interval_histogram, read_events,
                     write_events, write_heatmap, write_histogram)
from .frames import read_frames, sequence_to_luma, write_frames
from .generator import default_threads, generate_events_sequence
from .model import K_NAMES, GeneratorConfig
from .sync import (ClockPair, apply_offset, estimate_clock_offset, filter_events_roi,
                   format_offset_report, read_roi_track)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# flag dest -> config key; values are passed through as text
_SETTING_FLAGS = {
    "input": "input", "output": "output", "seed": "seed", "threads": "threads",
    "budget": "budget", "grid": "grid", "window": "window", "roi_track": "roi_track",
    "reference": "reference", "n_min": "n_min", "luma_mode": "luma_mode",
    "polarity": "polarity", "t_range": "t_range", "stride": "stride",
    "hist_bins": "hist_bins", "search_seed": "search_seed",
    "sensitivity": "sensitivity", "contrast": "contrast", "bright_leak": "bright_leak",
    "jitter": "jitter", "dark_noise": "dark_noise", "global_noise": "global_noise",
    **{k: k for k in K_NAMES},
    "theta_on": "theta_on", "theta_off": "theta_off",
}


def _common(p):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--input")
    p.add_argument("--output")
    p.add_argument("--seed")
    p.add_argument("--threads", help="worker threads (default: $R2E_THREADS or 1)")
    for k in K_NAMES:
        p.add_argument(f"--{k}")
    p.add_argument("--theta-on", dest="theta_on")
    p.add_argument("--theta-off", dest="theta_off")
    p.add_argument("--sensitivity", help="alias of k1")
    p.add_argument("--contrast", help="alias of k1,k4 given as 'a,b'")
    p.add_argument("--bright-leak", dest="bright_leak", help="alias of k5")
    p.add_argument("--jitter", help="alias of k3,k6 given as 'a,b'")
    p.add_argument("--dark-noise", dest="dark_noise", help="alias of k4")
    p.add_argument("--global-noise", dest="global_noise", help="alias of k6")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="evsynth", description="Frame-to-event simulation and calibration.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("convert", help="frames (R2EF or PGM directory) to events")
    _common(p)
    p.add_argument("--luma-mode", dest="luma_mode", choices=("green-mean", "quad-mean"))

    p = sub.add_parser("calibrate", help="fit model parameters to reference events")
    _common(p)
    p.add_argument("--reference", help="reference events recorded alongside --input frames")
    p.add_argument("--grid", help="'n_l,n_dl' or 'lo,hi,n;lo,hi,n'")
    p.add_argument("--n-min", dest="n_min")
    p.add_argument("--budget", help="search trials; 0 runs the regression only")
    p.add_argument("--search-seed", dest="search_seed")
    p.add_argument("--luma-mode", dest="luma_mode", choices=("green-mean", "quad-mean"))

    p = sub.add_parser("sync", help="estimate the host/sensor clock offset")
    _common(p)
    p.add_argument("--clock", required=True, help="CSV with sensor,real timestamp columns")
    p.add_argument("--window")
    p.add_argument("--shift", help="event or frame file to shift by the offset into --output")

    p = sub.add_parser("filter", help="keep events inside a tracked ROI")
    _common(p)
    p.add_argument("--roi-track", dest="roi_track")

    p = sub.add_parser("viz", help="heatmap, point cloud or interval histogram")
    _common(p)
    p.add_argument("kind", choices=("heatmap", "cloud", "hist"))
    p.add_argument("--polarity", choices=("ON", "OFF", "both"))
    p.add_argument("--t-range", dest="t_range", help="'t0,t1' in us")
    p.add_argument("--stride")
    p.add_argument("--hist-bins", dest="hist_bins", help="'lo,hi,n' in us")

    p = sub.add_parser("bench", help="throughput on a synthetic grating")
    _common(p)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--repeats", type=int)
    return parser


def resolve_config(args) -> RunConfig:
    base = load_config(args.config) if args.config else RunConfig()
    items = [(key, getattr(args, dest)) for dest, key in _SETTING_FLAGS.items()
             if getattr(args, dest, None) is not None]
    cfg = apply_settings(items, base)
    if cfg.threads is None:
        cfg.threads = default_threads()
    return cfg


def _need(cfg, name):
    value = getattr(cfg, name)
    if value is None:
        raise UsageError(f"--{name.replace('_', '-')} is required")
    return value


def _generator_config(cfg):
    return GeneratorConfig(params=cfg.params, seed=cfg.seed, mu_epsilon=cfg.mu_epsilon,
                           threads=cfg.threads)


def cmd_convert(cfg: RunConfig, out) -> int:
    frames = sequence_to_luma(read_frames(_need(cfg, "input")), cfg.luma_mode)
    start = time.perf_counter()
    stream = generate_events_sequence(frames, _generator_config(cfg))
    wall = time.perf_counter() - start
    if cfg.output:
        write_events(cfg.output, stream)
    n, on, off = stream.counts()
    out.write(f"events={n}\non={on}\noff={off}\nframes={len(frames)}\n"
              f"wall_s={wall:.6f}\nevents_per_s={n / wall if wall > 0 else 0.0:.0f}\n")
    return EXIT_OK


def parse_grid(text, enriched):
    """``n_l,n_dl`` picks counts for the data-range grid; ``lo,hi,n;lo,hi,n`` gives edges."""
    if text is None:
        return calib.default_grid(enriched)
    try:
        if ";" in text:
            axes = []
            for part in text.split(";"):
                lo, hi, n = (float(v) for v in part.split(","))
                axes.append(np.linspace(lo, hi, int(n)))
            if len(axes) != 2:
                raise ValueError
            return tuple(axes)
        n_l, n_dl = (int(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"grid: cannot parse {text!r}") from None
    return calib.default_grid(enriched, n_l, n_dl)


def cmd_calibrate(cfg: RunConfig, out) -> int:
    frames = sequence_to_luma(read_frames(_need(cfg, "input")), cfg.luma_mode)
    reference = read_events(_need(cfg, "reference"))
    if len(reference) == 0:
        raise CalibrationError("no events in the reference stream")
    enriched = calib.enrich_events(reference, frames)
    grid = parse_grid(cfg.grid, enriched)
    fit = calib.bin_and_fit(enriched, grid, cfg.n_min, cfg.params.theta_on, cfg.params.theta_off)
    if not fit.bins:
        occupancy = "\n".join(";".join(str(int(v)) for v in row) for row in fit.occupancy)
        raise CalibrationError(f"insufficient bins: no cell reached n_min={cfg.n_min} "
                               f"intervals; occupancy (rows are brightness bins):\n{occupancy}")
    result, fit = calib.calibrate(reference, frames, grid, cfg.n_min,
                                  cfg.params.theta_on, cfg.params.theta_off)
    search = None
    if cfg.budget > 0:
        init = result.to_params(cfg.params)
        bounds = cfg.bounds or {k: (getattr(init, k) / 4, getattr(init, k) * 4 or 1e-7)
                                for k in ("k1", "k2", "k4", "k5")}
        search = calib.search_params(frames, reference, init, bounds, budget=cfg.budget,
                                     seed=cfg.search_seed, gen_seed=cfg.seed,
                                     threads=cfg.threads)
    text = calib.format_report(result, fit, search)
    if cfg.output:
        with open(cfg.output, "w") as f:
            f.write(text)
    out.write(text)
    return EXIT_OK


def read_clock_csv(path) -> ClockPair:
    """Two-column CSV (sensor, real) with a header row."""
    with open(path, newline="") as f:
        rows = [r for r in csv.reader(f) if r]
    if not rows:
        raise FormatError(f"{path}: empty clock file")
    try:
        data = np.array([[int(v) for v in r] for r in rows[1:]], dtype=np.int64)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if data.ndim != 2 or data.shape[1] != 2:
        raise FormatError(f"{path}: expected two columns sensor,real")
    return ClockPair(data[:, 0], data[:, 1])


def cmd_sync(cfg: RunConfig, out, clock, shift=None) -> int:
    pair = read_clock_csv(clock)
    est = estimate_clock_offset(pair, cfg.window)
    out.write(format_offset_report(est, len(pair)))
    if shift:
        target = _need(cfg, "output")
        try:
            write_events(target, apply_offset(read_events(shift), est.offset))
        except FormatError:
            write_frames(target, apply_offset(read_frames(shift), est.offset))
    return EXIT_OK


def cmd_filter(cfg: RunConfig, out) -> int:
    stream = read_events(_need(cfg, "input"))
    kept, outside = filter_events_roi(stream, read_roi_track(_need(cfg, "roi_track")))
    write_events(_need(cfg, "output"), kept)
    out.write(f"events_in={len(stream)}\nevents_out={len(kept)}\n"
              f"outside_track_time={outside}\n")
    return EXIT_OK


def cmd_viz(cfg: RunConfig, out, kind) -> int:
    stream = read_events(_need(cfg, "input"))
    target = _need(cfg, "output")
    if kind == "heatmap":
        peak = write_heatmap(target, accumulate_heatmap(stream, cfg.t_range, cfg.polarity))
        out.write(f"max={peak}\n")
    elif kind == "cloud":
        cloud = export_point_cloud(stream, cfg.stride, target)
        out.write(f"points={len(cloud)}\n")
    else:
        lo, hi, n = cfg.hist_bins
        hist = interval_histogram(stream, np.linspace(lo, hi, int(n) + 1))
        write_histogram(target, hist)
        out.write(f"intervals={hist.n_intervals}\nempty={int(hist.empty)}\n")
    return EXIT_OK


def cmd_bench(cfg: RunConfig, out, width=None, height=None, frames=None, repeats=None) -> int:
    results = bench.run(width or cfg.bench_width, height or cfg.bench_height,
                        frames or cfg.bench_frames, repeats or cfg.bench_repeats)
    out.write(bench.format_report(results))
    return EXIT_OK


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
        if args.command == "convert":
            return cmd_convert(cfg, out)
        if args.command == "calibrate":
            return cmd_calibrate(cfg, out)
        if args.command == "sync":
            return cmd_sync(cfg, out, args.clock, args.shift)
        if args.command == "filter":
            return cmd_filter(cfg, out)
        if args.command == "viz":
            return cmd_viz(cfg, out, args.kind)
        return cmd_bench(cfg, out, args.width, args.height, args.frames, args.repeats)
    except UsageError as exc:
        err.write(f"usage error: {exc}\n")
        return EXIT_USAGE
    except SystemExit as exc:       # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    except (FormatError, CalibrationError, ConfigError, OSError, ValueError) as exc:
        err.write(f"error: {type(exc).__name__}: {exc}\n")
        diag = getattr(exc, "diagnostics", None)
        if diag:
            for key, value in diag.items():
                err.write(f"diag.{key}={value}\n")
        return EXIT_DATA
    except Exception:
        err.write("internal error:\n" + traceback.format_exc())
        return EXIT_INTERNAL


def main_exit():
    sys.exit(main())
