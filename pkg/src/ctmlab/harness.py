"""Identical-twin experiments and window sweeps driven by a TwinConfig.

Every window runs the same pipeline: build the truth, transport it to make
observations, measure the numerical region of influence with one backward
integration, invert from the uniform background, and score the result.
Windows are independent, so a sweep may farm them out to worker processes;
each window writes only into its own directory and the report is assembled
afterwards in window order, so the outputs do not depend on the worker
count.
"""

from __future__ import annotations

import json
import logging
import os
import time
import traceback
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import format_duration
from .diagnostics import (
    DiagnosticsReport,
    ShrinkageWarning,
    area_of_influence,
    broadening_estimate,
    broadening_time,
    footprint,
    loss_estimate,
    plume_diffusivity,
    reconstruction_metrics,
    write_report,
)
from .errors import CtmError
from .fieldio import write_field
from .grid import ScalarField, make_plume
from .inversion import CostSpec, TransportModel, minimize, write_cost_history
from .transport import integrate_forward

log = logging.getLogger(__name__)

THREADS_ENV = "CTM_THREADS"
DUMP_NAMES = {
    "truth": "truth.txt",
    "observations": "observations.txt",
    "influence_mask": "influence_mask.txt",
    "reconstruction": "reconstruction.txt",
    "cost_history": "cost_history.csv",
}


@dataclass
class WindowOutcome:
    window: float
    report: DiagnosticsReport | None = None
    paths: dict = field(default_factory=dict)
    steps: int = 0
    max_cfl: float = 0.0
    termination: str | None = None
    iterations: int = 0
    loss_clamped: bool = False
    wall_time: float = 0.0
    error: str | None = None

    @property
    def ok(self):
        return self.error is None

    def manifest_entry(self):
        return {
            "window_s": self.window,
            "status": "ok" if self.ok else "failed",
            "paths": self.paths,
            "steps": self.steps,
            "max_cfl": self.max_cfl,
            "termination": self.termination,
            "iterations": self.iterations,
            "loss_clamped": self.loss_clamped,
            "wall_time_s": self.wall_time,
            "error": self.error,
        }


@dataclass
class RunManifest:
    config: dict
    version: str
    started: str
    finished: str = ""
    report: str | None = None
    windows: list = field(default_factory=list)

    @property
    def ok(self):
        return all(w["status"] == "ok" for w in self.windows)

    def to_dict(self):
        return {"config": self.config, "version": self.version, "started": self.started,
                "finished": self.finished, "report": self.report, "windows": self.windows}

    def write(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def window_dir(out, window):
    return Path(out) / f"window_{format_duration(window)}"


def run_twin(config, window, out=None):
    """Run one identical-twin experiment; returns ``(InversionResult, DiagnosticsReport, WindowOutcome)``.

    When ``out`` is given the truth, observations, influence mask,
    reconstruction and cost history are written under ``out/window_<h>h``.
    """
    started = time.perf_counter()
    plume = config.plume
    bg = plume.background
    wind = config.make_wind()
    grid = wind.grid
    t0 = config.t0
    model = TransportModel(wind, t0, t0 + window, config.scheme, config.diffusion, config.variant,
                           config.cache_bytes)
    truth = make_plume(grid, plume)
    obs, flog = model.forward_with_log(truth, record_mass=False)

    influence = area_of_influence(obs, wind, window, config.scheme, plume, t0=t0, d=config.diffusion,
                                  fraction=config.influence_fraction, schedule=model.schedule,
                                  sampler=model.sampler)
    true_area = footprint(grid, plume).area
    measured = influence.area / true_area
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ShrinkageWarning)
        loss = loss_estimate(true_area, influence.area)
    clamped = any(issubclass(w.category, ShrinkageWarning) for w in caught)
    if window > 0:
        d_eff = plume_diffusivity(wind, plume, t0, window, sampler=model.sampler)
        estimated = broadening_estimate(plume, d_eff.d_h, broadening_time(window, config.broadening))
    else:
        estimated = 1.0

    result = minimize(ScalarField.constant(grid, bg), CostSpec(obs, bg), model, config.minimizer)
    rel, com, mass = reconstruction_metrics(result.c0_hat, truth, bg, config.com_radius)
    report = DiagnosticsReport(
        window=float(window),
        rel_l2_pct=rel,
        com_err_pct=com,
        mass_err_pct=mass,
        area_ratio_measured=measured,
        area_ratio_estimated=estimated,
        loss_est_pct=loss,
        cost_reduction_orders=result.cost_reduction_orders,
        iterations=result.iterations,
    )
    outcome = WindowOutcome(window=float(window), report=report, steps=model.schedule.n_steps,
                            max_cfl=flog.max_cfl, termination=result.termination,
                            iterations=result.iterations, loss_clamped=clamped)
    if out is not None:
        d = window_dir(out, window)
        d.mkdir(parents=True, exist_ok=True)
        tf = t0 + window
        write_field(d / DUMP_NAMES["truth"], truth, t0)
        write_field(d / DUMP_NAMES["observations"], obs, tf)
        write_field(d / DUMP_NAMES["influence_mask"], ScalarField(grid, influence.mask.astype(float)), t0)
        write_field(d / DUMP_NAMES["reconstruction"], result.c0_hat, t0)
        write_cost_history(d / DUMP_NAMES["cost_history"], result)
        outcome.paths = {k: str(d / v) for k, v in DUMP_NAMES.items()}
    outcome.wall_time = time.perf_counter() - started
    log.info("window %s: rel_l2 %.2f%%, ratio %.2f, %d iterations (%s), %.1fs", format_duration(window),
             rel, measured, result.iterations, result.termination, outcome.wall_time)
    return result, report, outcome


def _safe_twin(config, window, out):
    try:
        return run_twin(config, window, out)[2]
    except (CtmError, ArithmeticError, ValueError, OSError, MemoryError) as exc:
        log.error("window %s failed: %s", format_duration(window), exc)
        return WindowOutcome(window=float(window),
                             error=f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}")


def worker_count(n_windows, threads=None):
    """Workers for a sweep: ``threads`` or ``$CTM_THREADS``, capped by the window count."""
    if threads is None:
        raw = os.environ.get(THREADS_ENV, "").strip()
        if raw:
            try:
                threads = int(raw)
            except ValueError:
                raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
        else:
            threads = 1
    if threads < 1:
        raise ValueError(f"worker count must be positive, got {threads}")
    return max(1, min(threads, n_windows))


def run_sweep(config, out, threads=None, windows=None):
    """Run every configured window and write ``report.csv`` and ``manifest.json`` under ``out``.

    Returns ``(reports, manifest)``; failed windows are left out of the
    report and marked in the manifest.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    windows = tuple(config.windows if windows is None else windows)
    manifest = RunManifest(config=config.echo(), version=__version__, started=_now())
    workers = worker_count(len(windows), threads)
    if workers == 1:
        outcomes = [_safe_twin(config, w, out) for w in windows]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_safe_twin, [config] * len(windows), windows, [out] * len(windows)))
    reports = [o.report for o in outcomes if o.ok]
    manifest.report = str(write_report(out / "report.csv", reports))
    manifest.windows = [o.manifest_entry() for o in outcomes]
    manifest.finished = _now()
    manifest.write(out / "manifest.json")
    return reports, manifest


def record_twin(config, out, outcome):
    """Report and manifest for a single ``run_twin`` call."""
    out = Path(out)
    manifest = RunManifest(config=config.echo(), version=__version__, started=_now())
    manifest.report = str(write_report(out / "report.csv", [outcome.report] if outcome.ok else []))
    manifest.windows = [outcome.manifest_entry()]
    manifest.finished = _now()
    manifest.write(out / "manifest.json")
    return manifest


def read_manifest(path):
    return json.loads(Path(path).read_text())


def forward_dumps(config, window, out, cadence=None):
    """Forward transport of the truth, dumped at ``cadence`` (default: start and end only)."""
    wind = config.make_wind()
    c = make_plume(wind.grid, config.plume)
    t0, tf = config.t0, config.t0 + window
    cadence = cadence or config.dump_cadence
    times = [t0]
    if cadence:
        n = int(np.floor(window / cadence + 1e-9))
        times += [t0 + k * cadence for k in range(1, n + 1) if t0 + k * cadence < tf]
    if tf > t0:
        times.append(tf)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = [write_field(out / "forward_0000.txt", c, t0)]
    for k, (a, b) in enumerate(zip(times, times[1:]), start=1):
        c, _ = integrate_forward(c, wind, a, b, config.scheme, config.diffusion, record_mass=False)
        paths.append(write_field(out / f"forward_{k:04d}.txt", c, b))
    return paths
