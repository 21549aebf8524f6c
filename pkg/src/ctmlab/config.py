"""Experiment configuration files.

The format is INI-style: ``[section]`` headers, ``key = value`` lines and
``#`` comments. Durations take an ``s``, ``h`` or ``d`` suffix (bare numbers
are seconds). Every key is listed in ``KEYS`` with its default; anything
else is rejected.
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .adjoint import AdjointVariant
from .diagnostics import BROADENING_CONVENTIONS, INFLUENCE_FRACTION
from .errors import ConfigError, CtmError
from .grid import Grid, PlumeSpec, plume_mask
from .optimize import MinimizerSpec
from .transport import DiffusionSpec, SchemeSpec
from .wind import BICKLEY_DEFAULTS, BICKLEY_LX, BICKLEY_LY, make_wind

_UNITS = {"s": 1.0, "h": 3600.0, "d": 86400.0}
_DURATION = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([shd]?)\s*$")

# (section, key) -> (default, help); a default of None means "required" or "derived"
KEYS = {
    ("grid", "nx"): (128, "cells in x"),
    ("grid", "ny"): (64, "cells in y"),
    ("grid", "lx"): (BICKLEY_LX, "domain length in x (m)"),
    ("grid", "ly"): (BICKLEY_LY, "domain width in y (m)"),
    ("grid", "x0"): (0.0, "western edge (m)"),
    ("grid", "y0"): (None, "southern edge (m); default -ly/2"),
    ("wind", "kind"): (None, "uniform | shear | bickley_jet | from_file (required)"),
    ("wind", "speed"): (10.0, "uniform: zonal speed (m/s)"),
    ("wind", "rate"): (1e-5, "shear: du/dy (1/s)"),
    ("wind", "y_center"): (None, "shear, bickley_jet: axis (m); default channel middle"),
    ("wind", "u0"): (BICKLEY_DEFAULTS["u0"], "bickley_jet: jet speed (m/s)"),
    ("wind", "length_scale"): (BICKLEY_DEFAULTS["length_scale"], "bickley_jet: jet width (m)"),
    ("wind", "eps"): (BICKLEY_DEFAULTS["eps"], "bickley_jet: wave amplitudes"),
    ("wind", "speed_factors"): (BICKLEY_DEFAULTS["speed_factors"], "bickley_jet: wave speeds / u0"),
    ("wind", "path"): (None, "from_file: wind file"),
    ("plume", "center_x"): (None, "plume center x (m) (required)"),
    ("plume", "center_y"): (None, "plume center y (m) (required)"),
    ("plume", "side_x"): (None, "plume side in x (m) (required)"),
    ("plume", "side_y"): (None, "plume side in y (m) (required)"),
    ("plume", "background"): (1.0, "background concentration"),
    ("plume", "excess_factor"): (2.0, "plume value / background"),
    ("transport", "scheme"): ("vanleer2", "upwind1 | vanleer2"),
    ("transport", "cfl_max"): (0.8, "largest Courant number per sub-step, in (0, 1]"),
    ("transport", "alternate"): (True, "alternate the sweep order every sub-step"),
    ("diffusion", "enabled"): (False, "add explicit horizontal diffusion"),
    ("diffusion", "d_h"): (0.0, "diffusivity (m^2/s)"),
    ("adjoint", "variant"): ("continuous", "continuous | discrete_transpose"),
    ("adjoint", "matrix_cap"): (10_000, "largest grid for discrete_transpose (cells)"),
    ("minimizer", "max_iters"): (99, "iteration limit"),
    ("minimizer", "memory"): (8, "stored correction pairs"),
    ("minimizer", "c1"): (1e-4, "sufficient-decrease constant"),
    ("minimizer", "c2"): (0.9, "curvature constant"),
    ("minimizer", "grad_tol"): (1e-12, "stop when |g|/|g0| falls below"),
    ("minimizer", "cost_tol"): (1e-16, "stop when J/J0 falls below"),
    ("minimizer", "max_line_evals"): (20, "line-search evaluation budget"),
    ("minimizer", "initial_step"): (1.0, "first trial step"),
    ("run", "windows"): (None, "comma-separated assimilation windows (required)"),
    ("run", "t0"): (0.0, "release time (s)"),
    ("run", "dump_cadence"): (None, "forward command: dump interval; default start and end only"),
    ("run", "cache_mb"): (256, "wind cache per window (MiB)"),
    ("run", "output"): (None, "default output directory"),
    ("diagnostics", "influence_fraction"): (INFLUENCE_FRACTION, "influence threshold / initial excess"),
    ("diagnostics", "broadening"): ("round_trip", "round_trip | forward"),
    ("diagnostics", "r_max"): (None, "center-of-mass normalization (m); default max(side_x, side_y)"),
}
SECTIONS = tuple(dict.fromkeys(s for s, _ in KEYS))
REQUIRED_SECTIONS = ("wind", "plume", "run")
_WIND_KEYS = {
    "uniform": ("speed",),
    "shear": ("rate", "y_center"),
    "bickley_jet": ("u0", "length_scale", "eps", "speed_factors", "y_center"),
    "from_file": ("path",),
}


def parse_duration(text):
    """Seconds in ``text`` such as ``90``, ``90s``, ``3h``, ``0.5d``."""
    m = _DURATION.match(str(text))
    if not m:
        raise ConfigError(f"cannot parse duration {text!r}; use a number with an s, h or d suffix")
    value = float(m.group(1)) * _UNITS[m.group(2) or "s"]
    if not math.isfinite(value) or value < 0:
        raise ConfigError(f"duration {text!r} must be finite and nonnegative")
    return value


def parse_windows(text):
    items = [t for t in (s.strip() for s in str(text).split(",")) if t]
    if not items:
        raise ConfigError("windows: list is empty")
    windows = tuple(parse_duration(t) for t in items)
    for a, b in zip(windows, windows[1:]):
        if not b > a:
            raise ConfigError(f"windows: must be strictly increasing, got {a:g}s then {b:g}s")
    return windows


def format_duration(seconds):
    """Hours label used in directory names, e.g. ``0.1h`` or ``168h``."""
    return f"{seconds / 3600:g}h"


@dataclass(frozen=True, eq=False)
class TwinConfig:
    grid: Grid
    wind_kind: str
    wind_params: dict
    plume: PlumeSpec
    scheme: SchemeSpec = SchemeSpec()
    diffusion: DiffusionSpec = DiffusionSpec()
    variant: AdjointVariant = AdjointVariant()
    minimizer: MinimizerSpec = MinimizerSpec()
    windows: tuple = ()
    t0: float = 0.0
    dump_cadence: float | None = None
    cache_bytes: int = 256 * 2**20
    output: str | None = None
    influence_fraction: float = INFLUENCE_FRACTION
    broadening: str = "round_trip"
    r_max: float | None = None
    source: str = field(default="", repr=False)

    def __post_init__(self):
        if not self.windows:
            raise ConfigError("windows: list is empty")
        for a, b in zip(self.windows, self.windows[1:]):
            if not b > a:
                raise ConfigError("windows: must be strictly increasing")
        if not 0 < self.influence_fraction < 1:
            raise ConfigError(f"influence_fraction must lie in (0, 1), got {self.influence_fraction}")
        if self.broadening not in BROADENING_CONVENTIONS:
            raise ConfigError(f"broadening must be one of {BROADENING_CONVENTIONS}, got {self.broadening!r}")
        if self.dump_cadence is not None and not self.dump_cadence > 0:
            raise ConfigError("dump_cadence must be positive")

    @property
    def com_radius(self):
        return self.r_max if self.r_max is not None else max(self.plume.side_x, self.plume.side_y)

    def make_wind(self):
        return make_wind(self.wind_kind, self.wind_params, self.grid)

    def echo(self):
        """Plain-data view of the configuration for manifests."""
        return {
            "grid": {"nx": self.grid.nx, "ny": self.grid.ny, "dx": self.grid.dx, "dy": self.grid.dy,
                     "x0": self.grid.x0, "y0": self.grid.y0},
            "wind": {"kind": self.wind_kind, **{k: list(v) if isinstance(v, tuple) else v
                                                for k, v in self.wind_params.items()}},
            "plume": {"center": list(self.plume.center), "side_x": self.plume.side_x,
                      "side_y": self.plume.side_y, "background": self.plume.background,
                      "excess_factor": self.plume.excess_factor},
            "transport": {"scheme": self.scheme.scheme, "cfl_max": self.scheme.cfl_max,
                          "alternate": self.scheme.alternate},
            "diffusion": {"enabled": self.diffusion.enabled, "d_h": self.diffusion.d_h},
            "adjoint": {"variant": self.variant.variant, "matrix_cap": self.variant.matrix_cap},
            "minimizer": dict(vars(self.minimizer)),
            "run": {"windows": list(self.windows), "t0": self.t0, "dump_cadence": self.dump_cadence,
                    "cache_bytes": self.cache_bytes},
            "diagnostics": {"influence_fraction": self.influence_fraction, "broadening": self.broadening,
                            "r_max": self.com_radius},
        }


def _value(sections, section, key, convert):
    raw = sections.get(section, {}).get(key)
    if raw is None:
        return KEYS[(section, key)][0]
    try:
        return convert(raw)
    except ConfigError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from None
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


def _floats(text):
    return tuple(float(t) for t in text.split(","))


def _require(sections, section, key):
    if key not in sections.get(section, {}):
        raise ConfigError(f"[{section}] {key} is required")


def _build(sections, source):
    for section in REQUIRED_SECTIONS:
        if section not in sections:
            raise ConfigError(f"missing [{section}] section")
    for section, keys in sections.items():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key in keys:
            if (section, key) not in KEYS:
                raise ConfigError(f"[{section}] unknown key {key!r}")

    def get(section, key, convert=float):
        return _value(sections, section, key, convert)

    nx, ny = get("grid", "nx", int), get("grid", "ny", int)
    lx, ly = get("grid", "lx"), get("grid", "ly")
    y0 = get("grid", "y0")
    try:
        grid = Grid.from_extent(nx, ny, lx, ly, get("grid", "x0"), -0.5 * ly if y0 is None else y0)
    except ValueError as exc:
        raise ConfigError(f"[grid] {exc}") from None

    _require(sections, "wind", "kind")
    kind = sections["wind"]["kind"].strip()
    if kind not in _WIND_KEYS:
        raise ConfigError(f"[wind] kind: unknown wind kind {kind!r}; choose from {tuple(_WIND_KEYS)}")
    params = {}
    for key in sections["wind"]:
        if key == "kind":
            continue
        if key not in _WIND_KEYS[kind]:
            raise ConfigError(f"[wind] {key} does not apply to kind {kind}")
        if key == "path":
            p = Path(sections["wind"][key].strip())
            if not p.is_absolute() and source:
                p = Path(source).parent / p
            params[key] = str(p)
        elif key in ("eps", "speed_factors"):
            params[key] = get("wind", key, _floats)
        else:
            params[key] = get("wind", key)

    for key in ("center_x", "center_y", "side_x", "side_y"):
        _require(sections, "plume", key)
    try:
        plume = PlumeSpec((get("plume", "center_x"), get("plume", "center_y")), get("plume", "side_x"),
                          get("plume", "side_y"), get("plume", "background"), get("plume", "excess_factor"))
        plume_mask(grid, plume)
    except ValueError as exc:
        raise ConfigError(f"[plume] {exc}") from None

    def build(section, factory):
        try:
            return factory()
        except (ConfigError, ValueError) as exc:
            raise ConfigError(f"[{section}] {exc}") from None

    scheme = build("transport", lambda: SchemeSpec(
        get("transport", "scheme", str.strip), get("transport", "cfl_max"), get("transport", "alternate", _bool)))
    diffusion = build("diffusion", lambda: DiffusionSpec(get("diffusion", "d_h"), get("diffusion", "enabled", _bool)))
    variant = build("adjoint", lambda: AdjointVariant(
        get("adjoint", "variant", str.strip), get("adjoint", "matrix_cap", int)))
    minimizer = build("minimizer", lambda: MinimizerSpec(
        max_iters=get("minimizer", "max_iters", int), memory=get("minimizer", "memory", int),
        c1=get("minimizer", "c1"), c2=get("minimizer", "c2"), grad_tol=get("minimizer", "grad_tol"),
        cost_tol=get("minimizer", "cost_tol"), max_line_evals=get("minimizer", "max_line_evals", int),
        initial_step=get("minimizer", "initial_step")))

    _require(sections, "run", "windows")
    windows = get("run", "windows", parse_windows)
    cadence = get("run", "dump_cadence", parse_duration)
    output = sections["run"].get("output")
    cfg = build("run", lambda: TwinConfig(
        grid=grid, wind_kind=kind, wind_params=params, plume=plume, scheme=scheme, diffusion=diffusion,
        variant=variant, minimizer=minimizer, windows=windows, t0=get("run", "t0", parse_duration),
        dump_cadence=cadence, cache_bytes=int(get("run", "cache_mb") * 2**20),
        output=output.strip() if output else None,
        influence_fraction=get("diagnostics", "influence_fraction"),
        broadening=get("diagnostics", "broadening", str.strip), r_max=get("diagnostics", "r_max"),
        source=str(source or "")))
    try:
        cfg.make_wind()
    except CtmError as exc:
        raise ConfigError(f"[wind] {exc}") from None
    return cfg


def parse_config_text(text, source="<string>"):
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",),
                                       comment_prefixes=("#",), empty_lines_in_values=False)
    parser.optionxform = str
    try:
        parser.read_string(text, source=str(source))
    except configparser.Error as exc:
        raise ConfigError(f"{source}: syntax error: {exc}") from None
    sections = {name: dict(parser[name]) for name in parser.sections()}
    return _build(sections, source)


def parse_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    return parse_config_text(text, source=str(path))


def defaults_help():
    """Text listing every configuration key with its default."""
    lines = ["configuration keys (defaults in brackets):"]
    for section in SECTIONS:
        lines.append(f"  [{section}]")
        for (sec, key), (default, text) in KEYS.items():
            if sec != section:
                continue
            shown = "-" if default is None else (",".join(map(str, default)) if isinstance(default, tuple)
                                                 else default)
            lines.append(f"    {key:<20} {text} [{shown}]")
    return "\n".join(lines)
