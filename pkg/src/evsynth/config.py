"""Flat ``key=value`` run configuration with user-facing parameter aliases.

Example::

    # model
    sensitivity=6.0
    jitter=1e-4,5e-5        # k3,k6
    seed=7
    bounds.k1=1,10

Aliases: ``sensitivity`` -> k1, ``dark_noise`` -> k4, ``bright_leak`` -> k5,
``global_noise`` -> k6, and two pair aliases taking ``a,b``: ``contrast`` ->
(k1, k4) and ``jitter`` -> (k3, k6). Dashes and underscores are
interchangeable in keys. Setting the same k twice to different values is an
error. Serialization always writes canonical k names.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .model import K_NAMES, ModelParams

ALIASES = {
    "sensitivity": ("k1",),
    "contrast": ("k1", "k4"),
    "bright_leak": ("k5",),
    "jitter": ("k3", "k6"),
    "dark_noise": ("k4",),
    "global_noise": ("k6",),
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    params: ModelParams = field(default_factory=ModelParams)
    seed: int = 0
    threads: int | None = None          # None: R2E_THREADS, else 1
    mu_epsilon: float = 1e-12
    input: str | None = None
    output: str | None = None
    reference: str | None = None
    roi_track: str | None = None
    luma_mode: str = "green-mean"
    grid: str | None = None             # "n_l,n_dl" or "lo,hi,n;lo,hi,n"
    n_min: int = 200
    budget: int = 0
    search_seed: int = 0
    bounds: dict = field(default_factory=dict)
    window: int = 30
    polarity: str = "both"
    t_range: tuple | None = None
    hist_bins: tuple = (0.0, 100_000.0, 50)
    stride: int = 1
    bench_width: int = 346
    bench_height: int = 260
    bench_frames: int = 60
    bench_repeats: int = 3

    def __post_init__(self):
        for name, (lo, hi) in self.bounds.items():
            if name not in K_NAMES:
                raise ConfigError(f"bounds given for unknown parameter {name!r}")
            if lo > hi:
                raise ConfigError(f"bounds.{name}: low {lo} > high {hi}")
            value = getattr(self.params, name)
            if not lo <= value <= hi:
                raise ConfigError(f"{name}={value} outside bounds [{lo}, {hi}]")
        if self.luma_mode not in ("green-mean", "quad-mean"):
            raise ConfigError(f"luma_mode must be green-mean or quad-mean, not {self.luma_mode!r}")
        if self.polarity not in ("ON", "OFF", "both"):
            raise ConfigError(f"polarity must be ON, OFF or both, not {self.polarity!r}")


_PARAM_KEYS = K_NAMES + ("theta_on", "theta_off")
_SIMPLE = {f.name: f for f in dataclasses.fields(RunConfig)
           if f.name not in ("params", "bounds", "t_range", "hist_bins")}


def _floats(text, n, key):
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != n:
        raise ConfigError(f"{key}: expected {n} comma-separated values, got {text!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"{key}: not a number in {text!r}") from None


def _convert(f, text, key):
    kind = f.type if isinstance(f.type, str) else f.type.__name__
    if text.lower() in ("none", ""):
        if "None" in kind:
            return None
        raise ConfigError(f"{key} may not be empty")
    try:
        if kind.startswith("int"):
            return int(text)
        if kind.startswith("float"):
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r}") from None
    return text


def apply_settings(items, base: RunConfig | None = None) -> RunConfig:
    """Build a RunConfig from ``(key, value-text)`` pairs, resolving aliases."""
    base = base or RunConfig()
    ks = base.params.as_dict()
    simple = {}
    bounds = dict(base.bounds)
    t_range, hist_bins = base.t_range, base.hist_bins
    assigned: dict[str, tuple[float, str]] = {}

    def set_k(name, value, key):
        if name in assigned and assigned[name][0] != value:
            raise ConfigError(f"{key} sets {name}={value} but {assigned[name][1]} set "
                              f"{name}={assigned[name][0]}")
        assigned[name] = (value, key)
        ks[name] = value

    for raw_key, text in items:
        key = raw_key.strip().replace("-", "_")
        text = str(text).strip()
        if key in _PARAM_KEYS:
            set_k(key, _floats(text, 1, key)[0], key)
        elif key in ALIASES:
            targets = ALIASES[key]
            for name, value in zip(targets, _floats(text, len(targets), key)):
                set_k(name, value, key)
        elif key.startswith("bounds."):
            bounds[key[len("bounds."):]] = _floats(text, 2, key)
        elif key == "t_range":
            t_range = None if text.lower() == "none" else _floats(text, 2, key)
        elif key == "hist_bins":
            lo, hi, n = _floats(text, 3, key)
            hist_bins = (lo, hi, int(n))
        elif key in _SIMPLE:
            simple[key] = _convert(_SIMPLE[key], text, key)
        else:
            raise ConfigError(f"unknown config key {raw_key!r}")
    try:
        params = ModelParams(**ks)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return dataclasses.replace(base, params=params, bounds=bounds, t_range=t_range,
                               hist_bins=hist_bins, **simple)


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    items = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        items.append((key, value))
    return apply_settings(items, base)


def load_config(path) -> RunConfig:
    with open(path) as f:
        try:
            return parse_config(f.read())
        except ConfigError as exc:
            raise ConfigError(f"{path}: {exc}") from None


def serialize_config(cfg: RunConfig) -> str:
    lines = [f"{k}={getattr(cfg.params, k)!r}" for k in _PARAM_KEYS]
    for name in _SIMPLE:
        value = getattr(cfg, name)
        text = "none" if value is None else value if isinstance(value, str) else repr(value)
        lines.append(f"{name}={text}")
    lines.append("t_range=" + ("none" if cfg.t_range is None
                               else f"{cfg.t_range[0]!r},{cfg.t_range[1]!r}"))
    lo, hi, n = cfg.hist_bins
    lines.append(f"hist_bins={float(lo)!r},{float(hi)!r},{int(n)}")
    for name in sorted(cfg.bounds):
        lo, hi = cfg.bounds[name]
        lines.append(f"bounds.{name}={float(lo)!r},{float(hi)!r}")
    return "\n".join(lines) + "\n"
