import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctmlab.diagnostics import influence_mask
from ctmlab.errors import ConfigError, PreconditionError, TimeRangeError
from ctmlab.grid import Grid, ScalarField, l2_norm, make_plume, ordered_sum
from ctmlab.transport import (
    DiffusionSpec,
    Schedule,
    SchemeSpec,
    WindSampler,
    advect_step,
    build_schedule,
    courant,
    diffuse_step,
    integrate_forward,
    step_bounds,
)
from ctmlab.wind import make_wind, write_wind_file, zero_faces

from conftest import centered_plume


def _mass(c):
    return ordered_sum(c.values) * c.grid.cell_area


def _stable_dt(faces, grid, cfl=0.8):
    rate = max(np.abs(faces.u).max() / grid.dx, np.abs(faces.v).max() / grid.dy)
    return cfl / rate


class TestSpecs:
    @pytest.mark.parametrize("cfl", [0.0, -0.1, 1.5])
    def test_cfl_bounds(self, cfl):
        with pytest.raises(ConfigError, match="cfl_max"):
            SchemeSpec(cfl_max=cfl)

    def test_unknown_scheme(self):
        with pytest.raises(ConfigError):
            SchemeSpec("lin_rood")

    def test_negative_diffusivity(self):
        with pytest.raises(ConfigError):
            DiffusionSpec(d_h=-1.0, enabled=True)

    def test_defaults(self):
        s = SchemeSpec()
        assert (s.scheme, s.cfl_max, s.alternate) == ("vanleer2", 0.8, True)
        assert not DiffusionSpec().active


class TestAdvectStep:
    @pytest.mark.parametrize("scheme", ["upwind1", "vanleer2"])
    @pytest.mark.parametrize("order", ["xy", "yx"])
    def test_uniform_field_is_fixed_point(self, bickley_grid, bickley, scheme, order):
        f = bickley.sample(2.0e4)
        dt = _stable_dt(f, bickley_grid, 0.79)
        c = ScalarField.constant(bickley_grid, 3.7)
        out = advect_step(c, f, dt, SchemeSpec(scheme), order)
        assert np.abs(out.values - 3.7).max() <= 1e-14 * 3.7

    def test_donor_cell_spike(self, grid):
        nu = 0.3
        speed = 10.0
        f = make_wind("uniform", {"speed": speed}, grid).sample(0.0)
        vals = np.zeros(grid.shape)
        vals[5, 7] = 1.0
        out = advect_step(ScalarField(grid, vals), f, nu * grid.dx / speed, SchemeSpec("upwind1"))
        assert out.values[5, 7] == pytest.approx(1.0 - nu, abs=1e-15)
        assert out.values[5, 8] == pytest.approx(nu, abs=1e-15)
        assert np.count_nonzero(np.abs(out.values) > 1e-15) == 2

    def test_periodic_wrap(self, grid):
        f = make_wind("uniform", {"speed": -5.0}, grid).sample(0.0)
        vals = np.zeros(grid.shape)
        vals[2, 0] = 1.0
        out = advect_step(ScalarField(grid, vals), f, 0.5 * grid.dx / 5.0, SchemeSpec("upwind1"))
        assert out.values[2, -1] == pytest.approx(0.5)

    def test_cfl_violation_is_an_error(self, grid):
        f = make_wind("uniform", {"speed": 10.0}, grid).sample(0.0)
        with pytest.raises(PreconditionError, match="Courant"):
            advect_step(ScalarField.constant(grid, 1.0), f, 0.81 * grid.dx / 10.0, SchemeSpec())

    def test_bad_order(self, grid):
        with pytest.raises(ValueError):
            advect_step(ScalarField.constant(grid, 1.0), zero_faces(grid), 1.0, SchemeSpec(), "zx")

    @pytest.mark.parametrize("scheme", ["upwind1", "vanleer2"])
    def test_mass_per_step(self, bickley_grid, bickley, rng, scheme):
        f = bickley.sample(0.0)
        c = ScalarField(bickley_grid, rng.random(bickley_grid.shape))
        out = advect_step(c, f, _stable_dt(f, bickley_grid, 0.75), SchemeSpec(scheme))
        assert abs(_mass(out) - _mass(c)) <= 1e-12 * _mass(c)

    def test_no_new_extrema_in_one_dimension(self, grid, rng):
        f = make_wind("uniform", {"speed": 7.0}, grid).sample(0.0)
        vals = np.repeat(rng.random((1, grid.nx)), grid.ny, axis=0)
        c = ScalarField(grid, vals)
        for _ in range(20):
            c = advect_step(c, f, 0.8 * grid.dx / 7.0, SchemeSpec())
            assert c.values.min() >= vals.min() - 1e-15
            assert c.values.max() <= vals.max() + 1e-15

    def test_vanleer_beats_upwind_over_one_circuit(self):
        g = Grid(64, 4, 1.0e6 / 64, 1.0e5)
        w = make_wind("uniform", {"speed": 10.0}, g)
        prof = np.exp(-((g.xc - 5e5) / 1e5) ** 2)
        c0 = ScalarField(g, np.broadcast_to(prof, g.shape))
        errs = {}
        for scheme in ("upwind1", "vanleer2"):
            c, _ = integrate_forward(c0, w, 0.0, g.lx / 10.0, SchemeSpec(scheme, 0.5), record_mass=False)
            errs[scheme] = l2_norm(c.with_values(c.values - c0.values))
        assert errs["vanleer2"] < 0.25 * errs["upwind1"]


def _circuit_error(scheme, n):
    length = 1.0e6
    g = Grid(n, 4, length / n, 8 * length / n)
    w = make_wind("uniform", {"speed": 10.0}, g)
    prof = np.exp(-((g.xc - 0.5 * length) / (0.1 * length)) ** 2)
    c0 = ScalarField(g, np.broadcast_to(prof, g.shape))
    c, _ = integrate_forward(c0, w, 0.0, length / 10.0, SchemeSpec(scheme, 0.5), record_mass=False)
    return l2_norm(c.with_values(c.values - c0.values)) / l2_norm(c0)


def test_convergence_order():
    assert _circuit_error("vanleer2", 64) / _circuit_error("vanleer2", 128) >= 3.0
    ratio = _circuit_error("upwind1", 128) / _circuit_error("upwind1", 256)
    assert 1.5 <= ratio <= 2.2


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), t=st.floats(0.0, 1.0e6), frac=st.floats(0.05, 1.0),
       order=st.sampled_from(["xy", "yx"]))
def test_positivity(seed, t, frac, order):
    g = Grid.from_extent(32, 16, 2.0e7, 6.0e6, 0.0, -3.0e6)
    w = make_wind("bickley_jet", {}, g)
    rng = np.random.default_rng(seed)
    vals = rng.random(g.shape) * (rng.random(g.shape) < 0.3)
    f = w.sample(t)
    dt = frac * _stable_dt(f, g, 0.8)
    nu_x, nu_y = courant(f, dt, g)
    if step_bounds(nu_x, nu_y)[1] > 1.0:
        return
    out = advect_step(ScalarField(g, vals), f, dt, SchemeSpec("vanleer2"), order)
    assert out.values.min() >= 0.0


class TestDiffusion:
    def test_disabled_is_identity(self, grid, rng):
        c = ScalarField(grid, rng.random(grid.shape))
        assert diffuse_step(c, DiffusionSpec(0.0, True), 100.0) == c
        assert diffuse_step(c, DiffusionSpec(1e6, False), 100.0) == c

    def test_uniform_unchanged(self, grid):
        c = ScalarField.constant(grid, 2.0)
        out = diffuse_step(c, DiffusionSpec(1e6, True), 1000.0)
        np.testing.assert_array_equal(out.values, c.values)

    def test_spike_stencil(self):
        g = Grid(5, 5, 2.0, 1.0)
        vals = np.zeros(g.shape)
        vals[2, 2] = 1.0
        d, dt = 0.5, 0.4
        kx, ky = d * dt / 4.0, d * dt / 1.0
        out = diffuse_step(ScalarField(g, vals), DiffusionSpec(d, True), dt).values
        assert out[2, 2] == pytest.approx(1 - 2 * kx - 2 * ky)
        assert out[2, 1] == pytest.approx(kx) and out[2, 3] == pytest.approx(kx)
        assert out[1, 2] == pytest.approx(ky) and out[3, 2] == pytest.approx(ky)
        assert out.sum() == pytest.approx(1.0, abs=1e-15)

    def test_walls_are_no_flux(self):
        g = Grid(5, 5, 1.0, 1.0)
        vals = np.zeros(g.shape)
        vals[0, 2] = 1.0
        out = diffuse_step(ScalarField(g, vals), DiffusionSpec(0.1, True), 1.0).values
        assert out[0, 2] == pytest.approx(1 - 0.3)
        assert out.sum() == pytest.approx(1.0, abs=1e-15)

    def test_max_principle_and_mass(self, grid, rng):
        c = ScalarField(grid, rng.random(grid.shape))
        d = DiffusionSpec(1e6, True)
        dt = 0.5 / (d.d_h * (1 / grid.dx**2 + 1 / grid.dy**2))
        out = diffuse_step(c, d, dt)
        assert out.values.min() >= c.values.min() and out.values.max() <= c.values.max()
        assert abs(_mass(out) - _mass(c)) <= 1e-12 * _mass(c)

    def test_unstable_step_rejected(self, grid):
        d = DiffusionSpec(1e6, True)
        dt = 0.51 / (d.d_h * (1 / grid.dx**2 + 1 / grid.dy**2))
        with pytest.raises(PreconditionError):
            diffuse_step(ScalarField.constant(grid, 1.0), d, dt)


class TestSchedule:
    def test_fewest_steps(self, bickley_grid, bickley):
        spec = SchemeSpec()
        s = build_schedule(bickley, 0.0, 86400.0, spec)
        assert 0 < s.max_cfl <= spec.cfl_max
        fewer = Schedule(0.0, 86400.0, s.n_steps - 1)
        worst = 0.0
        for k in range(fewer.n_steps):
            nu_x, nu_y = courant(bickley.sample(fewer.midpoint(k)), fewer.dt, bickley_grid)
            worst = max(worst, step_bounds(nu_x, nu_y)[0] / spec.cfl_max, step_bounds(nu_x, nu_y)[1])
        assert worst > 1.0

    def test_uniform_substeps(self):
        s = Schedule(10.0, 110.0, 4)
        assert s.dt == 25.0
        assert s.start(2) == 60.0 and s.midpoint(0) == 22.5

    def test_alternating_order(self):
        assert [Schedule.order(k, SchemeSpec()) for k in range(4)] == ["xy", "yx", "xy", "yx"]
        assert Schedule.order(1, SchemeSpec(alternate=False)) == "xy"

    def test_diffusion_limits_step(self, grid):
        w = make_wind("uniform", {"speed": 1e-3}, grid)
        d = DiffusionSpec(1e6, True)
        s = build_schedule(w, 0.0, 1e5, SchemeSpec(), d)
        assert s.dt * d.d_h * (1 / grid.dx**2 + 1 / grid.dy**2) <= 0.5

    def test_max_dt(self, grid):
        w = make_wind("uniform", {"speed": 1.0}, grid)
        assert build_schedule(w, 0.0, 1000.0, SchemeSpec(), max_dt=100.0).n_steps == 10

    def test_reversed_interval(self, grid):
        with pytest.raises(TimeRangeError):
            build_schedule(make_wind("uniform", {}, grid), 10.0, 0.0, SchemeSpec())

    def test_sampler_caches(self, bickley):
        sampler = WindSampler(bickley)
        assert sampler(5.0) is sampler(5.0)
        assert WindSampler(bickley, cache_bytes=0)(5.0) is not WindSampler(bickley, cache_bytes=0)(5.0)


class TestIntegrateForward:
    def test_zero_window(self, bickley_grid, bickley):
        c0 = make_plume(bickley_grid, centered_plume(bickley_grid, 4, 4))
        out, log = integrate_forward(c0, bickley, 100.0, 100.0)
        assert out == c0 and log.steps == 0

    def test_translation(self, grid):
        speed = 10.0
        w = make_wind("uniform", {"speed": speed}, grid)
        c0 = make_plume(grid, centered_plume(grid, 4, 4, background=0.0 + 1e-9, excess_factor=1e9))
        T = 5.3 * grid.dx / speed
        out, _ = integrate_forward(c0, w, 0.0, T, SchemeSpec())

        def com_x(c):
            wgt = c.values.sum(axis=0)
            return (wgt * grid.xc).sum() / wgt.sum()

        assert abs(com_x(out) - com_x(c0) - speed * T) <= grid.dx

    def test_mass_over_thousand_steps(self, bickley_grid, bickley):
        c0 = make_plume(bickley_grid, centered_plume(bickley_grid, 6, 4))
        out, log = integrate_forward(c0, bickley, 0.0, 1.0e7, SchemeSpec(), max_dt=1.0e4)
        assert log.steps >= 1000
        assert log.max_step_drift <= 1e-12
        assert log.total_drift <= 1e-12

    def test_log_fields(self, bickley_grid, bickley):
        c0 = ScalarField.constant(bickley_grid, 1.0)
        _, log = integrate_forward(c0, bickley, 0.0, 86400.0)
        assert log.steps == len(log.mass_drift) > 0
        assert 0 < log.max_cfl <= 0.8
        assert log.dt * log.steps == pytest.approx(86400.0)
        assert log.wall_time >= 0.0

    def test_bit_reproducible(self, bickley_grid, bickley, rng):
        c0 = ScalarField(bickley_grid, rng.random(bickley_grid.shape))
        a, _ = integrate_forward(c0, bickley, 0.0, 43200.0)
        b, _ = integrate_forward(c0, bickley, 0.0, 43200.0)
        np.testing.assert_array_equal(a.values, b.values)

    def test_wind_range_enforced(self, tmp_path, grid):
        f = make_wind("uniform", {}, grid).sample(0.0)
        w = make_wind("from_file", {"path": str(write_wind_file(tmp_path / "w.txt", grid,
                                                                 [(0.0, f), (100.0, f)]))}, grid)
        with pytest.raises(TimeRangeError):
            integrate_forward(ScalarField.constant(grid, 1.0), w, 0.0, 200.0)

    def test_plume_area_grows(self, bickley_grid, bickley):
        plume = centered_plume(bickley_grid, 6, 4)
        c = make_plume(bickley_grid, plume)
        areas = [influence_mask(c, plume).area]
        for k in range(6):
            c, _ = integrate_forward(c, bickley, k * 43200.0, (k + 1) * 43200.0)
            areas.append(influence_mask(c, plume).area)
        assert all(b >= a for a, b in zip(areas, areas[1:]))
        assert areas[-1] > areas[0]
