"""Conserved quantities, material loops and the circulation balance."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np
from scipy.interpolate import CubicSpline

from .dynamics import ModelParams, SimState, _forcing, _Kinematics
from .grid_fields import Grid2D, Interpolator, SymTensorField, VectorField
from .operators import MomentumOperator, def_components

LOOP_INTERPOLATION = "spectral"


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    energy: float
    detF_min: float
    detF_max: float
    div_norm: float
    enstrophy: float
    circulation: float | None = None
    kelvin_residual: float | None = None

    COLUMNS = ("t", "energy", "detF_min", "detF_max", "div_norm", "enstrophy",
               "circulation", "kelvin_residual")

    def values(self) -> list:
        return [getattr(self, f.name) for f in fields(self)]

    def is_finite(self) -> bool:
        return all(v is None or math.isfinite(v) for v in self.values())


# -- field integrals ------------------------------------------------------------


def energy(u: VectorField, F: SymTensorField, alpha: float) -> float:
    """Averaged kinetic energy ``1/2 int |u|^2 + alpha^2 int F : (Def u)^2``.

    The integrand is at most cubic in band-limited fields, so summing it on
    the refined grid gives the exact integral of the discrete fields.
    """
    g = u.grid
    uf = g.to_fine(u.data)
    total = 0.5 * np.sum(uf * uf)
    if alpha:
        a, b, c = g.to_fine(def_components(g.grad(u.data)))
        D2 = (a * a + b * b, b * (a + c), b * b + c * c)
        Ff = g.to_fine(F.data)
        total += alpha ** 2 * np.sum(Ff[0] * D2[0] + 2 * Ff[1] * D2[1] + Ff[2] * D2[2])
    return float(total * g.cell_area * 0.25)


def vorticity(u: VectorField) -> np.ndarray:
    d = u.grid.grad(u.data)
    return d[1, 0] - d[0, 1]


def enstrophy(u: VectorField) -> float:
    w = vorticity(u)
    return 0.5 * u.grid.integrate(w * w)


# -- material loops ---------------------------------------------------------------


class MaterialLoop:
    """Closed marker curve stored with unwrapped plane coordinates."""

    MIN_MARKERS = 16

    def __init__(self, points):
        pts = np.array(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError("loop markers must have shape (m, 2)")
        if len(pts) < self.MIN_MARKERS:
            raise ValueError(f"a loop needs at least {self.MIN_MARKERS} markers")
        self.points = pts

    @classmethod
    def circle(cls, cx: float, cy: float, radius: float, markers: int) -> "MaterialLoop":
        s = 2 * np.pi * np.arange(markers) / markers
        return cls(np.column_stack([cx + radius * np.cos(s), cy + radius * np.sin(s)]))

    def __len__(self):
        return len(self.points)

    def wrapped(self, grid: Grid2D) -> np.ndarray:
        return np.column_stack([np.mod(self.points[:, 0], grid.lx),
                                np.mod(self.points[:, 1], grid.ly)])

    def spacing(self) -> np.ndarray:
        d = np.roll(self.points, -1, axis=0) - self.points
        return np.hypot(d[:, 0], d[:, 1])

    def needs_resampling(self, grid: Grid2D) -> bool:
        return bool(np.max(self.spacing()) > 2 * max(grid.dx, grid.dy))

    def resampled(self, markers: int | None = None) -> "MaterialLoop":
        """Equal-arclength resampling through a periodic cubic spline."""
        m = len(self) if markers is None else markers
        closed = np.vstack([self.points, self.points[:1]])
        s = np.concatenate([[0.0], np.cumsum(self.spacing())])
        spline = CubicSpline(s, closed, bc_type="periodic")
        return MaterialLoop(spline(np.linspace(0.0, s[-1], m, endpoint=False)))

    def tangents(self) -> np.ndarray:
        """Derivative of the marker positions w.r.t. a parameter on [0, 2 pi).

        The closed curve is periodic in the marker index, so the trigonometric
        derivative is spectrally accurate for smooth parameterizations.
        """
        m = len(self)
        k = np.fft.fftfreq(m, d=1.0 / m)
        if m % 2 == 0:
            k[m // 2] = 0.0
        ph = np.fft.fft(self.points, axis=0)
        return np.fft.ifft(1j * k[:, None] * ph, axis=0).real


def loop_integral(grid: Grid2D, oneform: np.ndarray, loop: MaterialLoop,
                  method: str = LOOP_INTERPOLATION) -> float:
    """``oint_loop w`` for a one-form given by its components on the grid.

    Periodic trapezoid rule in the marker parameter with spectral tangents.
    """
    xy = loop.wrapped(grid)
    w = Interpolator(grid, oneform, method)(xy[:, 0], xy[:, 1])
    tang = loop.tangents()
    return float(np.sum(w[0] * tang[:, 0] + w[1] * tang[:, 1]) * 2 * np.pi / len(loop))


def _require_loop(state: SimState) -> MaterialLoop:
    if state.loop is None:
        raise ValueError("state carries no material loop")
    return MaterialLoop(state.loop)


def circulation(state: SimState, params: ModelParams, op: MomentumOperator | None = None,
                method: str = LOOP_INTERPOLATION) -> float:
    """``oint ((1 - alpha^2 C) u)_flat`` along the state's loop."""
    loop = _require_loop(state)
    op = params.operator(state.F) if op is None else op
    return loop_integral(state.grid, op.apply(state.u.data), loop, method)


def circulation_forcing(state: SimState, params: ModelParams,
                        method: str = LOOP_INTERPOLATION) -> float:
    """Predicted rate of change of the circulation, ``oint (-X + nu Lap u)_flat``."""
    loop = _require_loop(state)
    g = state.grid
    k = _Kinematics(g, state.u.data, state.F.data)
    w = -_forcing(k, params.alpha)
    if params.nu:
        w = w + params.nu * g.laplacian(state.u.data)
    return loop_integral(g, w, loop, method)


def kelvin_residual(history, params: ModelParams, signed: bool = False,
                    method: str = LOOP_INTERPOLATION) -> float:
    """Mismatch between the differenced circulation and its predicted rate.

    Args:
        history: the last three consecutive states (older entries ignored);
            the time derivative at the middle state uses the three-point
            second-order formula, which also covers unequal steps.
        params: model parameters.
        signed: return the signed residual instead of its magnitude.
    """
    history = list(history)
    if len(history) < 3:
        raise ValueError("kelvin_residual needs at least three consecutive states")
    s0, s1, s2 = history[-3:]
    h0, h1 = s1.t - s0.t, s2.t - s1.t
    if h0 <= 0 or h1 <= 0:
        raise ValueError("states must be in increasing time order")
    c0, c1, c2 = (circulation(s, params, method=method) for s in (s0, s1, s2))
    dcdt = (-h1 / (h0 * (h0 + h1)) * c0 + (h1 - h0) / (h0 * h1) * c1
            + h0 / (h1 * (h0 + h1)) * c2)
    r = dcdt - circulation_forcing(s1, params, method)
    return float(r if signed else abs(r))


def compute_diagnostics(state: SimState, params: ModelParams,
                        op: MomentumOperator | None = None) -> DiagnosticsRecord:
    g = state.grid
    det = state.F.det().data
    circ = None
    if state.loop is not None:
        circ = circulation(state, params, op)
    return DiagnosticsRecord(
        t=float(state.t),
        energy=energy(state.u, state.F, params.alpha),
        detF_min=float(np.min(det)),
        detF_max=float(np.max(det)),
        div_norm=float(np.max(np.abs(g.div(state.u.data)))),
        enstrophy=enstrophy(state.u),
        circulation=circ,
    )
