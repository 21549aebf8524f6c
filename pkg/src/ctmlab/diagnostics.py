"""Reconstruction metrics and numerical-diffusion estimators.

Covers the error metrics of a twin experiment, the numerical region of
influence (one backward integration of the observations), finite-time
Lyapunov exponents, the effective diffusivity built from them, the
broadening and loss-of-information estimates, and the reconstructible
length scale.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adjoint import integrate_adjoint
from .errors import DegenerateReferenceError, ShapeError, TimeRangeError, UndefinedCenterError
from .grid import ScalarField, ordered_sum, plume_mask, rel_l2_error, total_mass
from .transport import DiffusionSpec, SchemeSpec, WindSampler, build_schedule
from .wind import interpolate_velocity

INFLUENCE_FRACTION = 0.01
REPORT_COLUMNS = (
    "window_hours",
    "rel_l2_pct",
    "com_err_pct",
    "mass_err_pct",
    "area_ratio_measured",
    "area_ratio_estimated",
    "loss_est_pct",
    "cost_reduction_orders",
    "iterations",
)
BROADENING_CONVENTIONS = ("round_trip", "forward")


class ShrinkageWarning(UserWarning):
    """The measured region of influence came out smaller than the true plume."""


@dataclass(frozen=True, eq=False)
class InfluenceRegion:
    mask: np.ndarray
    area: float
    threshold: float

    @property
    def cells(self):
        return int(np.count_nonzero(self.mask))


@dataclass(frozen=True)
class DiffusivityEstimate:
    lam: float
    plume_width: float
    boundary_scale: float
    d_h: float


@dataclass(frozen=True)
class DiagnosticsReport:
    window: float
    rel_l2_pct: float
    com_err_pct: float
    mass_err_pct: float
    area_ratio_measured: float
    area_ratio_estimated: float
    loss_est_pct: float
    cost_reduction_orders: float
    iterations: int

    def row(self):
        values = (self.window / 3600.0, self.rel_l2_pct, self.com_err_pct, self.mass_err_pct,
                  self.area_ratio_measured, self.area_ratio_estimated, self.loss_est_pct,
                  self.cost_reduction_orders)
        return [repr(float(v)) for v in values] + [str(int(self.iterations))]


# --- region of influence -------------------------------------------------


def influence_mask(field, plume, fraction=INFLUENCE_FRACTION):
    """Cells whose excess exceeds ``fraction`` of the plume's initial excess."""
    threshold = fraction * (plume.peak - plume.background)
    mask = (field.values - plume.background) > threshold
    return InfluenceRegion(mask, mask.sum() * field.grid.cell_area, threshold)


def area_of_influence(obs, w, window, spec=SchemeSpec(), plume=None, *, t0=0.0, d=DiffusionSpec(),
                      fraction=INFLUENCE_FRACTION, schedule=None, sampler=None):
    """Numerical region of influence of the observations at the release time.

    ``obs`` (the plume after ``window`` seconds of forward transport) is
    carried back to ``t0`` by one continuous-adjoint integration and
    thresholded at ``fraction`` of the initial excess.
    """
    if plume is None:
        raise ValueError("area_of_influence needs the plume spec for its threshold")
    if sampler is None:
        sampler = WindSampler(w, cache_bytes=0)
    if schedule is None:
        schedule = build_schedule(w, t0, t0 + window, spec, d, sampler=sampler)
    back = integrate_adjoint(obs, w, t0, t0 + window, spec, "continuous", d=d, schedule=schedule,
                             sampler=sampler)
    return influence_mask(back, plume, fraction)


def footprint(grid, plume):
    mask = plume_mask(grid, plume)
    return InfluenceRegion(mask, mask.sum() * grid.cell_area, INFLUENCE_FRACTION * (plume.peak - plume.background))


def broadening_estimate(plume, d_h, t):
    """Area growth when every side of the plume gains ``2 sqrt(d_h t)``."""
    if d_h < 0 or t < 0:
        raise ValueError("d_h and t must be nonnegative")
    grow = 2.0 * math.sqrt(d_h * t)
    return (plume.side_x + grow) * (plume.side_y + grow) / (plume.side_x * plume.side_y)


def broadening_time(window, convention="round_trip"):
    """Diffusion time for a window: forward plus backward, or forward only."""
    if convention == "round_trip":
        return 2.0 * window
    if convention == "forward":
        return float(window)
    raise ValueError(f"unknown broadening convention {convention!r}; choose from {BROADENING_CONVENTIONS}")


def loss_estimate(area_true, area_influence):
    """Percent of the source that cannot be recovered, ``100 (1 - A / A_h)``.

    A region of influence smaller than the truth is measurement noise; the
    estimate is clamped to 0 and a ``ShrinkageWarning`` is emitted.
    """
    if not area_true > 0:
        raise ValueError("area_true must be positive")
    if area_influence < area_true:
        warnings.warn(f"region of influence {area_influence:.4g} m^2 is smaller than the plume "
                      f"{area_true:.4g} m^2; loss clamped to 0", ShrinkageWarning, stacklevel=2)
        return 0.0
    return 100.0 * (1.0 - area_true / area_influence)


# --- reconstruction errors ------------------------------------------------


def center_of_mass(c, background):
    """Center of the positive excess; x is averaged on the periodic circle."""
    g = c.grid
    weight = np.maximum(c.values - background, 0.0)
    total = ordered_sum(weight)
    if not total > 0:
        raise UndefinedCenterError("field has no positive excess over background")
    theta = 2.0 * np.pi * (g.xc - g.x0) / g.lx
    col = weight.sum(axis=0)
    ang = math.atan2(ordered_sum(col * np.sin(theta)), ordered_sum(col * np.cos(theta)))
    x = g.x0 + (ang / (2.0 * np.pi) % 1.0) * g.lx
    y = ordered_sum(weight.sum(axis=1) * g.yc) / total
    return x, y


def center_of_mass_error(estimate, truth, background, r_max):
    """Distance between excess centers as a percentage of ``r_max``."""
    if estimate.grid != truth.grid:
        raise ShapeError("fields live on different grids")
    if not total_mass(truth, background) > 0:
        raise DegenerateReferenceError("truth has no excess over background")
    xt, yt = center_of_mass(truth, background)
    xe, ye = center_of_mass(estimate, background)
    lx = truth.grid.lx
    ddx = (xe - xt + 0.5 * lx) % lx - 0.5 * lx
    return 100.0 * math.hypot(ddx, ye - yt) / r_max


def total_mass_error(estimate, truth, background):
    """Signed percent error in excess mass; positive means over-estimated."""
    m_true = total_mass(truth, background)
    if not m_true > 0:
        raise DegenerateReferenceError("truth has no excess over background")
    return 100.0 * (total_mass(estimate, background) - m_true) / m_true


def reconstruction_metrics(estimate, truth, background, r_max):
    """``(rel_l2_pct, com_err_pct, mass_err_pct)``; the center error is NaN if undefined."""
    try:
        com = center_of_mass_error(estimate, truth, background, r_max)
    except UndefinedCenterError:
        com = math.nan
    return (rel_l2_error(estimate, truth, background), com, total_mass_error(estimate, truth, background))


# --- finite-time Lyapunov exponents ---------------------------------------


def _rk4(vel, t, x, y, h):
    u1, v1 = vel(t, x, y)
    u2, v2 = vel(t + 0.5 * h, x + 0.5 * h * u1, y + 0.5 * h * v1)
    u3, v3 = vel(t + 0.5 * h, x + 0.5 * h * u2, y + 0.5 * h * v2)
    u4, v4 = vel(t + h, x + h * u3, y + h * v3)
    return (x + h / 6.0 * (u1 + 2 * u2 + 2 * u3 + u4),
            y + h / 6.0 * (v1 + 2 * v2 + 2 * v3 + v4))


def _reflect(y, lo, hi):
    y = np.where(y < lo, 2 * lo - y, y)
    return np.where(y > hi, 2 * hi - y, y)


def ftle_points(vel, t0, horizon, x, y, spacing, n_steps, y_bounds=None):
    """FTLE at seed points for a velocity callable ``vel(t, x, y) -> (u, v)``.

    Each seed carries a four-point cluster at distance ``spacing``; x is
    left unwrapped so separations stay meaningful across the periodic seam,
    and y is reflected at ``y_bounds`` when given.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    offs = np.array([[spacing, 0.0], [-spacing, 0.0], [0.0, spacing], [0.0, -spacing]])
    px = (x[None, :] + offs[:, 0:1]).ravel()
    py = (y[None, :] + offs[:, 1:2]).ravel()
    if y_bounds is not None:
        py = _reflect(py, *y_bounds)
    h = horizon / n_steps
    for k in range(n_steps):
        px, py = _rk4(vel, t0 + k * h, px, py, h)
        if y_bounds is not None:
            py = _reflect(py, *y_bounds)
    px = px.reshape(4, -1)
    py = py.reshape(4, -1)
    two = 2.0 * spacing
    a = (px[0] - px[1]) / two
    b = (px[2] - px[3]) / two
    c = (py[0] - py[1]) / two
    d = (py[2] - py[3]) / two
    # largest eigenvalue of the 2x2 Cauchy-Green tensor F^T F
    p = a * a + c * c
    q = a * b + c * d
    r = b * b + d * d
    lam = 0.5 * (p + r) + np.sqrt(0.25 * (p - r) ** 2 + q * q)
    return np.log(np.maximum(lam, 1.0)) / (2.0 * horizon)


def ftle_field(w, t0, horizon, spacing=None, mask=None, sampler=None, courant_target=0.5):
    """Finite-time Lyapunov exponents (s^-1) seeded at every cell center.

    Velocities come from bilinear interpolation of the face winds, sampled
    at each stage time. ``mask`` restricts the seeds; other cells are 0.
    """
    g = w.grid
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if not w.covers(t0, t0 + horizon):
        lo, hi = w.time_range
        raise TimeRangeError(f"window [{t0}, {t0 + horizon}] exceeds wind range [{lo}, {hi}]")
    if spacing is None:
        spacing = g.dx / 10.0
    if sampler is None:
        sampler = WindSampler(w, cache_bytes=0)
    vmax = max(sampler(t).max_speed for t in (t0, t0 + 0.5 * horizon, t0 + horizon))
    n_steps = max(1, math.ceil(horizon * vmax / (courant_target * min(g.dx, g.dy))))
    sel = np.ones(g.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if sel.shape != g.shape:
        raise ShapeError("seed mask does not match the grid")
    yy, xx = np.meshgrid(g.yc, g.xc, indexing="ij")

    def vel(t, x, y):
        return interpolate_velocity(sampler(t), g, x, y)

    out = np.zeros(g.shape)
    if sel.any():
        out[sel] = ftle_points(vel, t0, horizon, xx[sel], yy[sel], spacing, n_steps,
                               y_bounds=(g.y0, g.y0 + g.ly))
    return ScalarField(g, out)


def effective_diffusivity(lam, plume_width, boundary_scale):
    """Numerical diffusivity set by flow stretching, ``lam * W * r_b``."""
    if lam < 0 or plume_width < 0 or boundary_scale < 0:
        raise ValueError("lambda, plume width and boundary scale must be nonnegative")
    return DiffusivityEstimate(lam, plume_width, boundary_scale, lam * plume_width * boundary_scale)


def plume_diffusivity(w, plume, t0, horizon, sampler=None):
    """Effective diffusivity of a plume from the mean FTLE over its footprint.

    The width is the plume's narrow side and the boundary scale one zonal
    grid cell.
    """
    g = w.grid
    mask = plume_mask(g, plume)
    lam = ftle_field(w, t0, horizon, mask=mask, sampler=sampler).values[mask]
    return effective_diffusivity(ordered_sum(lam) / lam.size, min(plume.side_x, plume.side_y), g.dx)


# --- length scale -----------------------------------------------------------


def reconstructible_length_scale(mean_speed, time_scale):
    """Downwind distance (m) beyond which a source cannot be reconstructed."""
    if mean_speed < 0 or time_scale < 0:
        raise ValueError("speed and time scale must be nonnegative")
    return mean_speed * time_scale


def length_in_boxes(length, box_size):
    return length / box_size


# --- report CSV ---------------------------------------------------------------


def write_report(path, reports):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for rep in reports:
            writer.writerow(rep.row())
    return path


def read_report(path):
    with Path(path).open() as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [{k: float(v) for k, v in row.items()} for row in reader]
