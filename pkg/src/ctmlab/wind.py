"""Divergence-free staggered winds.

Face velocities come from differences of a streamfunction evaluated at cell
corners, ``u = -dpsi/dy`` on x-faces and ``v = dpsi/dx`` on y-faces, so the
discrete divergence of every cell is a telescoping sum of corner values and
vanishes up to rounding. Corner values along each wall are replaced by their
zonal mean, which makes the wall-normal velocity exactly zero without
breaking that property.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, IngestionError, TimeRangeError
from .fieldio import format_block, parse_header_line, parse_row
from .grid import Grid, ordered_sum

DIVERGENCE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Faces:
    """Staggered velocities: ``u`` is ``(ny, nx+1)`` on x-faces, ``v`` is ``(ny+1, nx)`` on y-faces."""

    u: np.ndarray
    v: np.ndarray

    def __neg__(self):
        return Faces(-self.u, -self.v)

    def __add__(self, other):
        return Faces(self.u + other.u, self.v + other.v)

    def scaled(self, a):
        return Faces(a * self.u, a * self.v)

    @property
    def max_speed(self):
        return float(max(np.max(np.abs(self.u)), np.max(np.abs(self.v))))


def zero_faces(grid):
    return Faces(np.zeros((grid.ny, grid.nx + 1)), np.zeros((grid.ny + 1, grid.nx)))


def divergence(faces, grid):
    """Cell divergence ``du/dx + dv/dy`` in s^-1."""
    return np.diff(faces.u, axis=1) / grid.dx + np.diff(faces.v, axis=0) / grid.dy


def divergence_defect(faces, grid):
    """Largest cell divergence expressed as a velocity (times the smaller cell size)."""
    return float(np.max(np.abs(divergence(faces, grid)))) * min(grid.dx, grid.dy)


def is_divergence_free(faces, grid, tol=DIVERGENCE_TOL):
    return divergence_defect(faces, grid) <= tol * faces.max_speed


@dataclass(frozen=True)
class Streamfunction:
    """Analytic streamfunction ``psi(x, y, t)``; ``rule`` must broadcast over arrays."""

    rule: object
    params: dict = field(default_factory=dict)

    def __call__(self, x, y, t):
        return self.rule(x, y, t, **self.params)


def winds_from_streamfunction(psi, grid, t, walls=True):
    xx, yy = np.meshgrid(grid.xf, grid.yf)
    corners = np.array(np.broadcast_to(psi(xx, yy, t), xx.shape), dtype=np.float64)
    corners[:, -1] = corners[:, 0]
    if walls:
        corners[0, :] = ordered_sum(corners[0, :-1]) / grid.nx
        corners[-1, :] = ordered_sum(corners[-1, :-1]) / grid.nx
    u = -(corners[1:, :] - corners[:-1, :]) / grid.dy
    v = (corners[:, 1:] - corners[:, :-1]) / grid.dx
    return Faces(u, v)


def _psi_uniform(x, y, t, speed):
    return -speed * y + 0.0 * x


def _psi_shear(x, y, t, rate, y_center):
    return -0.5 * rate * (y - y_center) ** 2 + 0.0 * x


def _psi_bickley(x, y, t, u0, length_scale, eps, speeds, wavenumbers, y_center, half_width):
    eta = (y - y_center) / length_scale
    # wave envelope tapered to vanish on the walls so they stay streamlines
    sech2 = np.maximum(1.0 / np.cosh(eta) ** 2 - 1.0 / np.cosh(half_width / length_scale) ** 2, 0.0)
    waves = 0.0
    for e, c, k in zip(eps, speeds, wavenumbers):
        waves = waves + e * np.cos(k * x - k * c * t)
    return -u0 * length_scale * np.tanh(eta) + u0 * length_scale * sech2 * waves


BICKLEY_DEFAULTS = {
    "u0": 62.66,
    "length_scale": 1.77e6,
    "eps": (0.075, 0.4, 0.3),
    "speed_factors": (0.1446, 0.205, 0.461),
}

EARTH_RADIUS = 6.371e6
# pi * r_e, so that k_n = 2 pi n / Lx equals the benchmark's 2 n / r_e
BICKLEY_LX = np.pi * EARTH_RADIUS
BICKLEY_LY = 6.0e6


@dataclass(frozen=True, eq=False)
class WindField:
    grid: Grid
    kind: str
    params: dict
    psi: Streamfunction | None = None
    snapshots: tuple = ()

    def sample(self, t):
        return sample_wind(self, t)

    @property
    def time_range(self):
        if self.kind == "from_file":
            return self.snapshots[0][0], self.snapshots[-1][0]
        return -np.inf, np.inf

    def covers(self, t0, t1):
        lo, hi = self.time_range
        return lo <= min(t0, t1) and max(t0, t1) <= hi


def make_wind(kind, params, grid):
    params = dict(params or {})
    y_mid = grid.y0 + 0.5 * grid.ly
    if kind == "uniform":
        speed = float(params.pop("speed", params.pop("U", 10.0)))
        _reject_extra(kind, params)
        psi = Streamfunction(_psi_uniform, {"speed": speed})
        return WindField(grid, kind, {"speed": speed}, psi)
    if kind == "shear":
        rate = float(params.pop("rate", 1e-5))
        y_center = float(params.pop("y_center", y_mid))
        _reject_extra(kind, params)
        psi = Streamfunction(_psi_shear, {"rate": rate, "y_center": y_center})
        return WindField(grid, kind, {"rate": rate, "y_center": y_center}, psi)
    if kind == "bickley_jet":
        p = {**BICKLEY_DEFAULTS, "y_center": y_mid}
        for key in list(params):
            if key not in p:
                raise ConfigError(f"unknown bickley_jet parameter {key!r}")
            p[key] = params[key]
        eps = tuple(float(e) for e in p["eps"])
        factors = tuple(float(f) for f in p["speed_factors"])
        if len(eps) != len(factors):
            raise ConfigError("bickley_jet eps and speed_factors need the same length")
        u0 = float(p["u0"])
        rule_params = {
            "u0": u0,
            "length_scale": float(p["length_scale"]),
            "eps": eps,
            "speeds": tuple(f * u0 for f in factors),
            "wavenumbers": tuple(2.0 * np.pi * (n + 1) / grid.lx for n in range(len(eps))),
            "y_center": float(p["y_center"]),
            "half_width": 0.5 * grid.ly,
        }
        record = {"u0": u0, "length_scale": rule_params["length_scale"], "eps": eps,
                  "speed_factors": factors, "y_center": rule_params["y_center"]}
        return WindField(grid, kind, record, Streamfunction(_psi_bickley, rule_params))
    if kind == "from_file":
        if "path" not in params:
            raise ConfigError("from_file wind needs a 'path'")
        w = load_wind_file(params["path"])
        if w.grid.nx != grid.nx or w.grid.ny != grid.ny or w.grid.dx != grid.dx or w.grid.dy != grid.dy:
            raise ConfigError("wind file grid does not match the configured grid")
        return WindField(grid, kind, w.params, None, w.snapshots)
    raise ConfigError(f"unknown wind kind {kind!r}")


def _reject_extra(kind, params):
    if params:
        raise ConfigError(f"unknown {kind} parameter(s): {', '.join(sorted(params))}")


def sample_wind(w, t):
    if w.psi is not None:
        return winds_from_streamfunction(w.psi, w.grid, t)
    times = [s[0] for s in w.snapshots]
    if not times[0] <= t <= times[-1]:
        raise TimeRangeError(f"t={t} outside wind snapshot range [{times[0]}, {times[-1]}]")
    k = bisect.bisect_left(times, t)
    if times[k] == t:
        return w.snapshots[k][1]
    (ta, fa), (tb, fb) = w.snapshots[k - 1], w.snapshots[k]
    a = (tb - t) / (tb - ta)
    return fa.scaled(a) + fb.scaled(1.0 - a)


def write_wind_file(path, grid, snapshots):
    """Write ``[(time, Faces), ...]`` in the wind-file text layout."""
    parts = [f"# nx={grid.nx}\n# ny={grid.ny}\n# dx={grid.dx:.17g}\n# dy={grid.dy:.17g}\n"]
    for t, faces in snapshots:
        parts.append(f"# time={t:.17g}\n")
        parts.append(format_block(faces.u))
        parts.append(format_block(faces.v))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(parts))
    return path


def load_wind_file(path):
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"{path}: no such file")
    header = {}
    records = []
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, value = parse_header_line(line, lineno)
            if key == "time":
                try:
                    records.append((float(value), lineno))
                except ValueError:
                    raise IngestionError(f"{path}:{lineno}: bad time {value!r}") from None
                rows.append([])
            else:
                header[key] = value
            continue
        if not records:
            raise IngestionError(f"{path}:{lineno}: data before the first '# time=' record")
        try:
            nx = int(header["nx"])
        except (KeyError, ValueError):
            raise IngestionError(f"{path}: missing '# nx=' header") from None
        width = nx + 1 if len(rows[-1]) < int(header["ny"]) else nx
        rows[-1].append(parse_row(line, lineno, width))
    try:
        grid = Grid(int(header["nx"]), int(header["ny"]), float(header["dx"]), float(header["dy"]))
    except (KeyError, ValueError) as exc:
        raise IngestionError(f"{path}: bad or missing grid header ({exc})") from None
    if not records:
        raise IngestionError(f"{path}: no snapshots")
    snapshots = []
    for (t, lineno), block in zip(records, rows):
        if len(block) != 2 * grid.ny + 1:
            raise IngestionError(f"{path}: snapshot at t={t} (line {lineno}) has {len(block)} rows, "
                                 f"expected {2 * grid.ny + 1}")
        faces = Faces(np.array(block[: grid.ny]), np.array(block[grid.ny:]))
        if snapshots and t <= snapshots[-1][0]:
            raise IngestionError(f"{path}: snapshot at t={t} (line {lineno}) is not after t={snapshots[-1][0]}")
        if not is_divergence_free(faces, grid):
            raise IngestionError(f"{path}: snapshot at t={t} (line {lineno}) is not divergence-free "
                                 f"(defect {divergence_defect(faces, grid):.3e} m/s)")
        snapshots.append((t, faces))
    return WindField(grid, "from_file", {"path": str(path)}, None, tuple(snapshots))


def interpolate_velocity(faces, grid, x, y):
    """Bilinear interpolation of staggered velocities at points ``(x, y)``.

    x is wrapped periodically; y is clamped to the channel.
    """
    xi = np.mod(np.asarray(x, dtype=float) - grid.x0, grid.lx) / grid.dx
    yi = np.clip((np.asarray(y, dtype=float) - grid.y0) / grid.dy, 0.0, grid.ny)

    # u lives at (face i, center j): x index xi, y index yi - 0.5
    uy = np.clip(yi - 0.5, 0.0, grid.ny - 1)
    i0 = np.minimum(np.floor(xi).astype(int), grid.nx - 1)
    j0 = np.minimum(np.floor(uy).astype(int), grid.ny - 2)
    fx, fy = xi - i0, uy - j0
    U = faces.u
    u = ((1 - fx) * (1 - fy) * U[j0, i0] + fx * (1 - fy) * U[j0, i0 + 1]
         + (1 - fx) * fy * U[j0 + 1, i0] + fx * fy * U[j0 + 1, i0 + 1])

    # v lives at (center i, face j): x index xi - 0.5 (periodic), y index yi
    vx = xi - 0.5
    k0 = np.floor(vx).astype(int)
    gx = vx - k0
    k0 %= grid.nx
    k1 = (k0 + 1) % grid.nx
    m0 = np.minimum(np.floor(yi).astype(int), grid.ny - 1)
    gy = yi - m0
    V = faces.v
    v = ((1 - gx) * (1 - gy) * V[m0, k0] + gx * (1 - gy) * V[m0, k1]
         + (1 - gx) * gy * V[m0 + 1, k0] + gx * gy * V[m0 + 1, k1])
    return u, v
