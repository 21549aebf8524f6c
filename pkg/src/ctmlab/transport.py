"""Conservative finite-volume transport on the channel grid.

Advection is directionally split. Each step runs an x sweep and a y sweep in
flux form; the order alternates from one step to the next. A pseudo air
density rides along with the tracer through the two sweeps. It starts at 1,
picks up the one-dimensional divergence of the first sweep and returns to 1
after the second because the winds are divergence free. Carrying it is what
keeps a uniform field uniform under split sweeps whose individual
divergence is not zero.

Face values are either donor cell (``upwind1``) or van Leer limited linear
reconstructions with the Lax-Wendroff time-centering factor (``vanleer2``).
The Courant number in that factor is taken relative to the pseudo density of
the upwind cell. With the outflow bound enforced by :func:`step_bounds` this
guarantees nonnegative output for nonnegative input.
"""

from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, PreconditionError, TimeRangeError
from .grid import ordered_sum

SCHEMES = ("upwind1", "vanleer2")
_EPS_BOUND = 1e-12


@dataclass(frozen=True)
class SchemeSpec:
    scheme: str = "vanleer2"
    cfl_max: float = 0.8
    alternate: bool = True

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if not 0 < self.cfl_max <= 1:
            raise ConfigError(f"cfl_max must lie in (0, 1], got {self.cfl_max}")

    @property
    def limited(self):
        return self.scheme == "vanleer2"


@dataclass(frozen=True)
class DiffusionSpec:
    d_h: float = 0.0
    enabled: bool = False

    def __post_init__(self):
        if self.d_h < 0:
            raise ConfigError(f"d_h must be nonnegative, got {self.d_h}")

    @property
    def active(self):
        return self.enabled and self.d_h > 0


@dataclass
class TransportLog:
    steps: int = 0
    dt: float = 0.0
    max_cfl: float = 0.0
    mass_before: float = 0.0
    mass_after: float = 0.0
    mass_drift: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def max_step_drift(self):
        return max(self.mass_drift, default=0.0)

    @property
    def total_drift(self):
        if self.mass_before == 0.0:
            return abs(self.mass_after)
        return abs(self.mass_after - self.mass_before) / abs(self.mass_before)


# ---------------------------------------------------------------------------
# one-dimensional sweeps
# ---------------------------------------------------------------------------

def _vanleer_slope(dm, dp):
    prod = dm * dp
    denom = dm + dp
    safe = np.where(prod > 0, denom, 1.0)
    return np.where(prod > 0, 2.0 * prod / safe, 0.0)


def _pad_faces(a, periodic):
    """Values of the cells left and right of each of the n+1 faces along the last axis."""
    if periodic:
        left = np.concatenate((a[..., -1:], a), axis=-1)
        right = np.concatenate((a, a[..., :1]), axis=-1)
    else:
        left = np.concatenate((a[..., :1], a), axis=-1)
        right = np.concatenate((a, a[..., -1:]), axis=-1)
    return left, right


def _sweep(c, rho, q, nu, periodic, limited):
    """Flux-form update along the last axis.

    ``c`` is the mixing ratio, ``rho`` the pseudo density, ``q`` the tracer
    mass per cell and ``nu`` the signed face Courant numbers (n+1 faces).
    Returns the updated ``(q, rho)``.
    """
    nu_l = nu[..., :-1]
    nu_r = nu[..., 1:]
    c_l, c_r = _pad_faces(c, periodic)
    rho_l, rho_r = _pad_faces(rho, periodic)
    pos = nu > 0
    if limited:
        if periodic:
            cm, cp = np.roll(c, 1, axis=-1), np.roll(c, -1, axis=-1)
        else:
            cm = np.concatenate((c[..., :1], c[..., :-1]), axis=-1)
            cp = np.concatenate((c[..., 1:], c[..., -1:]), axis=-1)
        s = _vanleer_slope(c - cm, cp - c)
        # a cell draining through both faces gets no slope
        s = np.where((nu_l < 0) & (nu_r > 0), 0.0, s)
        s_l, s_r = _pad_faces(s, periodic)
        nut = nu / np.where(pos, rho_l, rho_r)
        cf = np.where(pos, c_l + 0.5 * (1.0 - nut) * s_l, c_r - 0.5 * (1.0 + nut) * s_r)
    else:
        cf = np.where(pos, c_l, c_r)
    flux = nu * cf
    q_new = q - (flux[..., 1:] - flux[..., :-1])
    rho_new = rho - (nu_r - nu_l)
    return q_new, rho_new


def _sweep_x(c, rho, q, nu_x, limited):
    return _sweep(c, rho, q, nu_x, True, limited)


def _sweep_y(c, rho, q, nu_y, limited):
    qn, rn = _sweep(c.T, rho.T, q.T, nu_y.T, False, limited)
    return qn.T, rn.T


def _advect(values, nu_x, nu_y, limited, order):
    ones = np.ones_like(values)
    if order == "xy":
        q1, rho1 = _sweep_x(values, ones, values, nu_x, limited)
        q2, _ = _sweep_y(q1 / rho1, rho1, q1, nu_y, limited)
    else:
        q1, rho1 = _sweep_y(values, ones, values, nu_y, limited)
        q2, _ = _sweep_x(q1 / rho1, rho1, q1, nu_x, limited)
    return q2


def courant(faces, dt, grid):
    return faces.u * (dt / grid.dx), faces.v * (dt / grid.dy)


def _outflow(nu):
    return np.maximum(nu[..., 1:], 0.0) - np.minimum(nu[..., :-1], 0.0)


def step_bounds(nu_x, nu_y):
    """Return ``(max |Courant|, max outflow fraction)`` for a split step in either order.

    The outflow fraction is the share of a cell's pseudo mass leaving through
    its faces within one sweep; keeping it at or below 1 keeps the sweep
    positive.
    """
    cmax = float(max(np.max(np.abs(nu_x)), np.max(np.abs(nu_y))))
    out_x = _outflow(nu_x)
    out_y = _outflow(nu_y.T).T
    rho_after_x = 1.0 - np.diff(nu_x, axis=1)
    rho_after_y = 1.0 - np.diff(nu_y, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        frac_xy = np.where(rho_after_x > 0, out_y / rho_after_x, np.inf)
        frac_yx = np.where(rho_after_y > 0, out_x / rho_after_y, np.inf)
    outflow = float(max(out_x.max(), out_y.max(), frac_xy.max(), frac_yx.max()))
    return cmax, outflow


def _check_bounds(nu_x, nu_y, cfl_max):
    cmax, outflow = step_bounds(nu_x, nu_y)
    if cmax > cfl_max * (1 + _EPS_BOUND):
        raise PreconditionError(f"Courant number {cmax:.4f} exceeds cfl_max={cfl_max}")
    if outflow > 1 + _EPS_BOUND:
        raise PreconditionError(f"outflow fraction {outflow:.4f} exceeds 1; reduce dt")
    return cmax


def advect_step(c, faces, dt, spec, order="xy"):
    """Advance ``c`` by one split advection step of length ``dt``.

    Raises :class:`PreconditionError` instead of clipping when the step is
    not CFL safe.
    """
    if order not in ("xy", "yx"):
        raise ValueError(f"order must be 'xy' or 'yx', got {order!r}")
    nu_x, nu_y = courant(faces, dt, c.grid)
    _check_bounds(nu_x, nu_y, spec.cfl_max)
    return c.with_values(_advect(c.values, nu_x, nu_y, spec.limited, order))


def _diffuse(values, kx, ky):
    fx = kx * (np.roll(values, -1, axis=1) - values)
    out = values + fx - np.roll(fx, 1, axis=1)
    fy = np.zeros((values.shape[0] + 1, values.shape[1]))
    fy[1:-1] = ky * (values[1:] - values[:-1])
    return out + fy[1:] - fy[:-1]


def diffusion_number(d, dt, grid):
    return dt * d.d_h * (1.0 / grid.dx**2 + 1.0 / grid.dy**2)


def diffuse_step(c, d, dt):
    """Explicit five-point conservative diffusion (periodic x, no-flux walls)."""
    if not d.active or dt == 0:
        return c
    g = c.grid
    if diffusion_number(d, dt, g) > 0.5 * (1 + _EPS_BOUND):
        raise PreconditionError(
            f"explicit diffusion unstable: dt*d_h*(1/dx^2+1/dy^2)={diffusion_number(d, dt, g):.4f} > 0.5")
    return c.with_values(_diffuse(c.values, d.d_h * dt / g.dx**2, d.d_h * dt / g.dy**2))


# ---------------------------------------------------------------------------
# time stepping
# ---------------------------------------------------------------------------

class WindSampler:
    """Memoizes face winds by sample time, up to ``cache_bytes`` of storage."""

    def __init__(self, wind, cache_bytes=256 * 2**20):
        self.wind = wind
        self.cache_bytes = cache_bytes
        self._cache = {}
        self._used = 0

    def __call__(self, t):
        faces = self._cache.get(t)
        if faces is None:
            faces = self.wind.sample(t)
            size = faces.u.nbytes + faces.v.nbytes
            if self._used + size <= self.cache_bytes:
                self._cache[t] = faces
                self._used += size
        return faces


@dataclass(frozen=True)
class Schedule:
    """Uniform sub-step plan for one window; replayed in reverse by the adjoint."""

    t0: float
    tf: float
    n_steps: int
    max_cfl: float = 0.0

    @property
    def dt(self):
        return (self.tf - self.t0) / self.n_steps if self.n_steps else 0.0

    def start(self, k):
        return self.t0 + k * self.dt

    def midpoint(self, k):
        return self.t0 + (k + 0.5) * self.dt

    @staticmethod
    def order(k, spec):
        return "yx" if (spec.alternate and k % 2) else "xy"


def _ensure_sampler(w, sampler):
    if sampler is None:
        return WindSampler(w, cache_bytes=0)
    if sampler.wind is not w:
        raise ValueError("sampler wraps a different wind field")
    return sampler


def build_schedule(w, t0, tf, spec, d=DiffusionSpec(), max_dt=None, sampler=None):
    """Pick the fewest uniform sub-steps meeting the CFL, outflow and diffusion bounds."""
    if tf < t0:
        raise TimeRangeError(f"tf={tf} precedes t0={t0}")
    if not w.covers(t0, tf):
        lo, hi = w.time_range
        raise TimeRangeError(f"window [{t0}, {tf}] exceeds wind range [{lo}, {hi}]")
    span = tf - t0
    if span == 0:
        return Schedule(t0, tf, 0)
    sampler = _ensure_sampler(w, sampler)
    g = w.grid
    n = 1
    if max_dt is not None:
        n = max(n, math.ceil(span / max_dt - 1e-9))
    if d.active:
        n = max(n, math.ceil(span * d.d_h * (1 / g.dx**2 + 1 / g.dy**2) / 0.5 - 1e-9))
    rate = 0.0
    for t in (t0, 0.5 * (t0 + tf), tf):
        f = w.sample(t)
        rate = max(rate, np.max(np.abs(f.u)) / g.dx, np.max(np.abs(f.v)) / g.dy)
    n = max(n, math.ceil(span * rate / spec.cfl_max - 1e-9))
    for _ in range(50):
        sched = Schedule(t0, tf, n)
        worst_c, worst_ratio = 0.0, 0.0
        for k in range(n):
            nu_x, nu_y = courant(sampler(sched.midpoint(k)), sched.dt, g)
            cmax, outflow = step_bounds(nu_x, nu_y)
            worst_c = max(worst_c, cmax)
            worst_ratio = max(worst_ratio, cmax / spec.cfl_max, outflow)
        if worst_ratio <= 1.0:
            return Schedule(t0, tf, n, worst_c)
        n = max(n + 1, math.ceil(n * worst_ratio * 1.02))
    raise PreconditionError("could not find a stable sub-step")


def _check_schedule(schedule, t0, tf):
    if schedule.t0 != t0 or schedule.tf != tf:
        raise TimeRangeError(
            f"schedule covers [{schedule.t0}, {schedule.tf}] but the run asks for [{t0}, {tf}]")


def _step_values(values, grid, schedule, k, spec, d, sampler):
    dt = schedule.dt
    nu_x, nu_y = courant(sampler(schedule.midpoint(k)), dt, grid)
    values = _advect(values, nu_x, nu_y, spec.limited, Schedule.order(k, spec))
    if d.active:
        values = _diffuse(values, d.d_h * dt / grid.dx**2, d.d_h * dt / grid.dy**2)
    return values


def _forward_values(values, grid, schedule, spec, d, sampler, states=None):
    for k in range(schedule.n_steps):
        if states is not None:
            states.append(values)
        values = _step_values(values, grid, schedule, k, spec, d, sampler)
    return values


def integrate_forward(c0, w, t0, tf, spec=SchemeSpec(), d=DiffusionSpec(), *,
                      max_dt=None, schedule=None, sampler=None, record_mass=True):
    """Integrate from ``t0`` to ``tf``; returns ``(field, TransportLog)``.

    Winds are sampled at sub-step midpoints. Pass a prebuilt ``schedule`` and
    a caching ``sampler`` to replay the same plan cheaply.
    """
    if tf < t0:
        raise TimeRangeError(f"tf={tf} precedes t0={t0}")
    sampler = _ensure_sampler(w, sampler)
    if schedule is None:
        schedule = build_schedule(w, t0, tf, spec, d, max_dt=max_dt, sampler=sampler)
    else:
        _check_schedule(schedule, t0, tf)
    clock = _time.perf_counter()
    grid = c0.grid
    mass0 = ordered_sum(c0.values) * grid.cell_area
    log = TransportLog(steps=schedule.n_steps, dt=schedule.dt, max_cfl=schedule.max_cfl,
                       mass_before=mass0)
    values = c0.values
    if not record_mass:
        values = _forward_values(values, grid, schedule, spec, d, sampler)
    else:
        prev = mass0
        for k in range(schedule.n_steps):
            values = _step_values(values, grid, schedule, k, spec, d, sampler)
            mass = ordered_sum(values) * grid.cell_area
            log.mass_drift.append(abs(mass - prev) / abs(prev) if prev else abs(mass))
            prev = mass
    log.mass_after = ordered_sum(values) * grid.cell_area
    log.wall_time = _time.perf_counter() - clock
    return c0.with_values(values), log


def forward_states(c0, schedule, spec, d, sampler):
    """Field at the start of every sub-step (used to linearize limited schemes)."""
    states = []
    _forward_values(c0.values, c0.grid, schedule, spec, d, sampler, states)
    return states
