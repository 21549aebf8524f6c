"""Backward-in-time adjoint transport.

Two variants are provided. ``continuous`` reruns the forward machinery with
negated winds, replaying the forward sub-step schedule in reverse (each
step's sweeps in reverse order). ``discrete_transpose`` assembles the sparse
matrix of every forward step and applies the transposes, which is exact but
only affordable on small grids.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import CapacityError, ConfigError, PairingError
from .grid import ScalarField, inner_product, l2_norm
from .transport import (
    DiffusionSpec,
    Schedule,
    SchemeSpec,
    _advect,
    _check_bounds,
    _diffuse,
    _ensure_sampler,
    build_schedule,
    courant,
    forward_states,
    integrate_forward,
)

VARIANTS = ("continuous", "discrete_transpose")
DEFAULT_MATRIX_CAP = 10_000
# relative forward-difference step for linearizing the limited scheme
PROBE_STEP = 1e-7


@dataclass(frozen=True)
class AdjointVariant:
    variant: str = "continuous"
    matrix_cap: int = DEFAULT_MATRIX_CAP

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown adjoint variant {self.variant!r}; choose from {VARIANTS}")
        if self.matrix_cap < 1:
            raise ConfigError("matrix_cap must be positive")

    def check_capacity(self, grid):
        if self.variant == "discrete_transpose" and grid.size > self.matrix_cap:
            raise CapacityError(
                f"{grid.nx}x{grid.ny} grid has {grid.size} cells; discrete_transpose is capped at "
                f"{self.matrix_cap}")


@dataclass(frozen=True, eq=False)
class StepMatrix:
    """Sparse matrix ``M`` with ``advect_step(c) = M @ c`` on row-major flattened fields."""

    matrix: sparse.csr_matrix
    dt: float
    order: str

    def apply(self, c):
        return c.with_values((self.matrix @ c.values.ravel()).reshape(c.grid.shape))

    def apply_transpose(self, c):
        return c.with_values((self.matrix.T @ c.values.ravel()).reshape(c.grid.shape))


def _reverse(order):
    return "yx" if order == "xy" else "xy"


def _color_period(n, width, periodic):
    if not periodic:
        return min(width, n)
    for p in range(width, n + 1):
        if n % p == 0:
            return p
    return n


def assemble_step_matrix(grid, faces, dt, spec, order="xy", about=None, cap=DEFAULT_MATRIX_CAP,
                         colored=True):
    """Matrix of one advection step, built by probing with basis fields.

    ``upwind1`` is linear and the matrix is exact. ``vanleer2`` is linearized
    about the field ``about`` with forward differences. With ``colored`` the
    probes reuse every evaluation for many well-separated cells at once;
    otherwise each unit basis field is applied separately.
    """
    if grid.size > cap:
        raise CapacityError(f"grid has {grid.size} cells, matrix assembly is capped at {cap}")
    nu_x, nu_y = courant(faces, dt, grid)
    _check_bounds(nu_x, nu_y, spec.cfl_max)
    limited = spec.limited
    if limited and about is None:
        raise ValueError("the limited scheme must be linearized about a field")
    base = about.values if about is not None else np.zeros(grid.shape)
    h = PROBE_STEP * max(1.0, float(np.max(np.abs(base))))
    base_out = _advect(base, nu_x, nu_y, limited, order) if limited else None

    def respond(probe):
        if limited:
            return (_advect(base + h * probe, nu_x, nu_y, limited, order) - base_out) / h
        return _advect(probe, nu_x, nu_y, limited, order)

    radius = 2 if limited else 1
    ny, nx = grid.shape
    if colored:
        px = _color_period(nx, 2 * radius + 1, True)
        py = _color_period(ny, 2 * radius + 1, False)
    else:
        px, py = nx, ny
    jj, ii = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    offs = np.arange(-radius, radius + 1)
    dj, di = (a.ravel() for a in np.meshgrid(offs, offs, indexing="ij"))
    rows, cols, vals = [], [], []
    groups = [(a, b) for a in range(py) for b in range(px)] if colored else None
    for group in (groups if colored else range(grid.size)):
        probe = np.zeros(grid.shape)
        if colored:
            sel = (jj % py == group[0]) & (ii % px == group[1])
        else:
            sel = np.zeros(grid.shape, dtype=bool)
            sel.flat[group] = True
        probe[sel] = 1.0
        out = respond(probe)
        sj, si = jj[sel], ii[sel]
        tj = sj[:, None] + dj[None, :]
        ti = (si[:, None] + di[None, :]) % nx
        ok = (tj >= 0) & (tj < ny)
        src = np.broadcast_to((sj * nx + si)[:, None], tj.shape)
        rows.append((tj * nx + ti)[ok])
        cols.append(src[ok])
        vals.append(out[tj[ok], ti[ok]])
    m = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.size, grid.size),
    ).tocsr()
    m.eliminate_zeros()
    return StepMatrix(m, dt, order)


def reversed_step(c, faces, dt, spec, order="xy"):
    """Continuous-adjoint counterpart of one forward step taken with ``order``."""
    nu_x, nu_y = courant(-faces, dt, c.grid)
    return c.with_values(_advect(c.values, nu_x, nu_y, spec.limited, _reverse(order)))


def _continuous_values(values, grid, schedule, spec, d, sampler):
    dt = schedule.dt
    kx = d.d_h * dt / grid.dx**2
    ky = d.d_h * dt / grid.dy**2
    for k in reversed(range(schedule.n_steps)):
        if d.active:
            values = _diffuse(values, kx, ky)
        nu_x, nu_y = courant(sampler(schedule.midpoint(k)), dt, grid)
        values = _advect(values, -nu_x, -nu_y, spec.limited, _reverse(Schedule.order(k, spec)))
    return values


def _transpose_values(values, grid, schedule, spec, d, sampler, variant, c0):
    dt = schedule.dt
    kx = d.d_h * dt / grid.dx**2
    ky = d.d_h * dt / grid.dy**2
    states = None
    if spec.limited:
        if c0 is None:
            raise PairingError("discrete_transpose of vanleer2 needs the forward initial field c0")
        states = forward_states(c0, schedule, spec, d, sampler)
    for k in reversed(range(schedule.n_steps)):
        if d.active:
            # the explicit five-point operator is symmetric
            values = _diffuse(values, kx, ky)
        about = c0.with_values(states[k]) if states is not None else None
        m = assemble_step_matrix(grid, sampler(schedule.midpoint(k)), dt, spec,
                                 Schedule.order(k, spec), about=about, cap=variant.matrix_cap)
        values = (m.matrix.T @ values.ravel()).reshape(grid.shape)
    return values


def integrate_adjoint(lambda_f, w, t0, tf, spec=SchemeSpec(), variant=AdjointVariant(), *,
                      d=DiffusionSpec(), schedule=None, sampler=None, c0=None):
    """Carry ``lambda_f`` from ``tf`` back to ``t0``.

    Seeded with the residual ``C(tf) - y`` the result is the gradient of
    ``0.5 * ||C(tf) - y||^2`` with respect to the initial field. ``schedule``
    must be the plan of the paired forward run; it is rebuilt
    deterministically when omitted.
    """
    if isinstance(variant, str):
        variant = AdjointVariant(variant)
    variant.check_capacity(lambda_f.grid)
    sampler = _ensure_sampler(w, sampler)
    if schedule is None:
        schedule = build_schedule(w, t0, tf, spec, d, sampler=sampler)
    elif schedule.t0 != t0 or schedule.tf != tf:
        raise PairingError(
            f"forward schedule covers [{schedule.t0}, {schedule.tf}], adjoint asked for [{t0}, {tf}]")
    grid = lambda_f.grid
    if variant.variant == "continuous":
        values = _continuous_values(lambda_f.values, grid, schedule, spec, d, sampler)
    else:
        values = _transpose_values(lambda_f.values, grid, schedule, spec, d, sampler, variant, c0)
    return lambda_f.with_values(values)


def dot_product_test(grid, faces, dt, spec=SchemeSpec("upwind1"), trials=10, variant="discrete_transpose",
                     order="xy", seed=0, about=None):
    """Largest ``|<Mu, v> - <u, M*v>| / (||u|| ||v||)`` over random field pairs.

    ``M*`` is the assembled transpose for ``discrete_transpose`` and the
    reversed-wind step for ``continuous``. For the limited scheme ``M`` is
    the linearization about ``about``.
    """
    rng = np.random.default_rng(seed)
    if spec.limited and about is None:
        about = ScalarField(grid, 1.0 + rng.random(grid.shape))
    m = assemble_step_matrix(grid, faces, dt, spec, order, about=about)
    worst = 0.0
    for _ in range(trials):
        u = ScalarField(grid, rng.standard_normal(grid.shape))
        v = ScalarField(grid, rng.standard_normal(grid.shape))
        if variant == "discrete_transpose":
            adj_v = m.apply_transpose(v)
        elif variant == "continuous":
            adj_v = reversed_step(v, faces, dt, spec, order)
        else:
            raise ConfigError(f"unknown adjoint variant {variant!r}")
        lhs = inner_product(m.apply(u), v)
        rhs = inner_product(u, adj_v)
        worst = max(worst, abs(lhs - rhs) / (l2_norm(u) * l2_norm(v)))
    return worst


def round_trip_error(c0, w, t0, tf, spec=SchemeSpec(), background=0.0, sampler=None):
    """Relative distance between ``c0`` and its forward-then-continuous-adjoint image."""
    sampler = _ensure_sampler(w, sampler)
    schedule = build_schedule(w, t0, tf, spec, sampler=sampler)
    fwd, _ = integrate_forward(c0, w, t0, tf, spec, schedule=schedule, sampler=sampler, record_mass=False)
    back = integrate_adjoint(fwd, w, t0, tf, spec, schedule=schedule, sampler=sampler)
    ref = l2_norm(c0.with_values(c0.values - background))
    return l2_norm(back.with_values(back.values - c0.values)) / ref
