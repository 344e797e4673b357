"""Classical RK4 for the coupled (u, F, one-form, loop) system and the run loop."""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diagnostics import LOOP_INTERPOLATION, compute_diagnostics, kelvin_residual, MaterialLoop
from .dynamics import (ModelParams, SimState, advect_F_rhs, advect_oneform_rhs, aaee_rhs)
from .grid_fields import Grid2D, Interpolator, OneFormField, SymTensorField, VectorField
from .operators import SPDError

VELOCITY_FLOOR = 1e-12


@dataclass(frozen=True)
class StepController:
    cfl: float
    dt_max: float
    t_end: float

    def __post_init__(self):
        if not 0 < self.cfl <= 1:
            raise ValueError("cfl must lie in (0, 1]")
        if not self.dt_max > 0:
            raise ValueError("dt_max must be positive")
        if not self.t_end >= 0:
            raise ValueError("t_end must be >= 0")

    def next_dt(self, u: VectorField, t: float) -> float:
        """CFL step, shortened so the last step lands on ``t_end``."""
        dt = stable_dt(u, u.grid, self.cfl, self.dt_max)
        remaining = self.t_end - t
        # avoid a sliver of a final step
        if dt >= remaining or remaining - dt < 1e-9 * max(1.0, self.t_end):
            return remaining
        return dt


def stable_dt(u: VectorField, grid: Grid2D, cfl: float, dt_max: float = 0.05) -> float:
    """``cfl * min(dx, dy) / max |u|``, clamped to ``dt_max``."""
    umax = max(float(np.max(np.abs(u.data))), VELOCITY_FLOOR)
    return min(cfl * min(grid.dx, grid.dy) / umax, dt_max)


def _tendencies(state: SimState, params: ModelParams, x0=None):
    op = params.operator(state.F)
    du = aaee_rhs(state, params, op=op, x0=x0)
    dF = advect_F_rhs(state.F, state.u)
    dxi = None if state.xi_flat is None else advect_oneform_rhs(state.xi_flat, state.u)
    dloop = None
    if state.loop is not None:
        xy = MaterialLoop(state.loop).wrapped(state.grid)
        dloop = Interpolator(state.grid, state.u.data, LOOP_INTERPOLATION)(xy[:, 0], xy[:, 1]).T
    return du.data, dF.data, (None if dxi is None else dxi.data), dloop


def _combine(state: SimState, incs, scale: float) -> SimState:
    g = state.grid
    du, dF, dxi, dloop = incs
    return SimState(
        t=state.t,
        u=VectorField(g, state.u.data + scale * du),
        F=SymTensorField(g, state.F.data + scale * dF),
        xi_flat=None if dxi is None else OneFormField(g, state.xi_flat.data + scale * dxi),
        loop=None if dloop is None else state.loop + scale * dloop,
    )


def rk4_step(state: SimState, dt: float, params: ModelParams, reproject: bool = True) -> SimState:
    """Advance every carried field by one classical Runge-Kutta step.

    Raises:
        SPDError: the updated fluctuation tensor is no longer SPD above the floor.
        SolverError: an elliptic solve failed to converge.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    k1 = _tendencies(state, params)
    k2 = _tendencies(_combine(state, k1, dt / 2), params, x0=k1[0])
    k3 = _tendencies(_combine(state, k2, dt / 2), params, x0=k2[0])
    k4 = _tendencies(_combine(state, k3, dt), params, x0=k3[0])

    def blend(i):
        if k1[i] is None:
            return None
        return (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]) / 6

    new = _combine(state, tuple(blend(i) for i in range(4)), dt)
    new = new.replace(t=state.t + dt)
    F = new.F
    min_det = float(np.min(F.det().data))
    if not (F.is_finite() and np.all(F.data[0] > 0) and min_det >= params.detF_floor):
        raise SPDError(f"fluctuation tensor lost positive definiteness at t={new.t:.6g}: "
                       f"min det F = {min_det:.3e}, floor {params.detF_floor:.1e}")
    if reproject and params.alpha > 0:
        op = params.operator(F)
        v, _ = op.solve_divfree(op.apply(new.u.data), x0=new.u.data)
        new = new.replace(u=VectorField(new.grid, v))
    elif reproject:
        new = new.replace(u=VectorField(new.grid, new.grid.leray(new.u.data)))
    if not new.u.is_finite():
        raise FloatingPointError(f"non-finite velocity at t={new.t:.6g}")
    return new


def maybe_resample(state: SimState) -> SimState:
    if state.loop is None:
        return state
    loop = MaterialLoop(state.loop)
    if loop.needs_resampling(state.grid):
        return state.replace(loop=loop.resampled().points)
    return state


class SimulationError(RuntimeError):
    """A run aborted; carries the time and step of the failure."""

    def __init__(self, cause: BaseException, t: float, step: int):
        super().__init__(f"step {step}, t={t:.9g}: {type(cause).__name__}: {cause}")
        self.cause = cause
        self.t = t
        self.step = step

    def record(self) -> dict:
        return {"error": type(self.cause).__name__, "message": str(self.cause),
                "t": self.t, "step": self.step}


@dataclass
class RunResult:
    state: SimState
    steps: int
    records: list


def run_simulation(config, out_dir=None, write: bool = True) -> RunResult:
    """Integrate from t = 0 to ``config.t_end``.

    Diagnostics rows are emitted at step 0, every ``diag_every`` steps and
    at the final step; a row is written one step late so the circulation
    balance can be centred on it.  Snapshots follow the same rule with
    ``snap_every``.  On failure an ``error.json`` with the time and step is
    written and :class:`SimulationError` is raised.
    """
    from .config import initial_state
    from .io import append_diagnostics_row, write_snapshot

    params = config.params
    out = Path(config.output_dir if out_dir is None else out_dir)
    if write:
        out.mkdir(parents=True, exist_ok=True)
        csv = out / "diagnostics.csv"
        if csv.exists():
            csv.unlink()
    ctrl = StepController(config.cfl, config.dt_max, config.t_end)
    records = []
    step, state = 0, None

    def emit(rec):
        records.append(rec)
        if write:
            append_diagnostics_row(rec, out / "diagnostics.csv")

    try:
        state = initial_state(config)
        window = deque([state], maxlen=3)
        pending = compute_diagnostics(state, params)  # row for step 0, waits one step
        if write:
            write_snapshot(state, out / f"snapshot_{0:06d}.aae")
        while state.t < config.t_end:
            dt = ctrl.next_dt(state.u, state.t)
            new = rk4_step(state, dt, params)
            step += 1
            window.append(new)
            if pending is not None:
                if len(window) == 3 and state.loop is not None:
                    pending = _with_kelvin(pending, window, params)
                emit(pending)
                pending = None
            final = new.t >= config.t_end
            if step % config.diag_every == 0 or final:
                pending = compute_diagnostics(new, params)
            if write and (step % config.snap_every == 0 or final):
                write_snapshot(new, out / f"snapshot_{step:06d}.aae")
            state = maybe_resample(new)
            if state is not new:
                # circulation differences across a resampling are not centred
                window.clear()
                window.append(state)
        if pending is not None:
            emit(pending)
    except Exception as exc:  # noqa: BLE001 - recorded and re-raised
        t = 0.0 if state is None else float(state.t)
        err = SimulationError(exc, t, step)
        if write:
            try:
                (out / "error.json").write_text(json.dumps(err.record(), indent=2) + "\n")
            except OSError:
                pass
        raise err from exc
    return RunResult(state=state, steps=step, records=records)


def _with_kelvin(record, window, params):
    from dataclasses import replace

    r = kelvin_residual(window, params)
    return replace(record, kelvin_residual=r if math.isfinite(r) else None)
