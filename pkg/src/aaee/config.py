"""Flat ``key = value`` run configuration and initial-state construction.

Grammar: one ``key = value`` per line, ``#`` starts a comment, blank lines
are ignored, keys are dotted names from the table below.  Unknown keys,
duplicates and malformed values are errors that carry the line number.

Required: ``grid.nx grid.ny grid.lx grid.ly alpha t_end ic f0``.

=========================  =============  =========================================
key                        default        meaning
=========================  =============  =========================================
nu                         0              viscosity
cfl                        0.25           CFL number in (0, 1]
dt_max                     0.05           upper bound on the step
ic                         (required)     taylor_green | shear | random_seeded
ic.amplitude               1              velocity scale
ic.seed                    0              seed for random_seeded
ic.kmax                    4              largest index wavenumber for random_seeded
f0                         (required)     identity | constant_spd | from_samples
f0.a, f0.b, f0.c           1, 0, 1        components of constant_spd
f0.samples                 (none)         .npz with ``weights`` (m,) and ``xi`` (m, 2, ny, nx)
corrector                  off            on | off
corrector.xi0              e1             e1 | e2 | cellular
loop                       none           none | circle
loop.cx, loop.cy           domain centre  circle centre
loop.radius                1              circle radius
loop.markers               128            marker count (>= 16)
solver.momentum_tol        1e-10          relative tolerance of momentum solves
solver.pressure_tol        1e-9           relative tolerance of pressure solves
solver.max_iter            500            CG iteration cap
solver.detF_floor          1e-8           abort when min det F drops below this
diag_every                 1              diagnostics cadence in steps
snap_every                 10             snapshot cadence in steps
output_dir                 out            artifact directory
=========================  =============  =========================================

``random_seeded`` draws streamfunction coefficients from SplitMix64 with a
counter: the n-th draw is ``splitmix64(seed + n * 0x9E3779B97F4A7C15)``
mapped to ``[-1, 1)`` as ``(x >> 11) * 2**-52 - 1``.  Modes ``(kx, ky)`` with
``0 <= kx <= kmax`` and ``-kmax <= ky <= kmax`` (kx = 0 only for ky > 0) are
visited with ky innermost; each takes two draws ``(a, b)`` and contributes
``(a cos + b sin)(kx x' + ky y') / |k|^2`` with ``x' = 2 pi x / lx``.  The
velocity is scaled to ``max |u| = amplitude``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import ModelParams, SimState
from .grid_fields import Grid2D, OneFormField, SymTensorField, VectorField, make_grid


class ConfigError(ValueError):
    def __init__(self, message, line=None, key=None):
        where = f"line {line}: " if line is not None else ""
        keypart = f"{key}: " if key is not None else ""
        super().__init__(f"{where}{keypart}{message}")
        self.line = line
        self.key = key


def _positive(v):
    return None if v > 0 else "must be > 0"


def _nonneg(v):
    return None if v >= 0 else "must be >= 0"


def _even8(v):
    return None if v >= 8 and v % 2 == 0 else "must be an even integer >= 8"


def _cfl(v):
    return None if 0 < v <= 1 else "must be in (0, 1]"


def _min16(v):
    return None if v >= 16 else "must be >= 16"


def _choice(*options):
    def check(v):
        return None if v in options else f"must be one of {', '.join(options)}"
    return check


_SCHEMA = {
    "grid.nx": (int, _even8), "grid.ny": (int, _even8),
    "grid.lx": (float, _positive), "grid.ly": (float, _positive),
    "alpha": (float, _nonneg), "nu": (float, _nonneg), "t_end": (float, _nonneg),
    "cfl": (float, _cfl), "dt_max": (float, _positive),
    "ic": (str, _choice("taylor_green", "shear", "random_seeded")),
    "ic.amplitude": (float, None), "ic.seed": (int, _nonneg), "ic.kmax": (int, _positive),
    "f0": (str, _choice("identity", "constant_spd", "from_samples")),
    "f0.a": (float, None), "f0.b": (float, None), "f0.c": (float, None),
    "f0.samples": (str, None),
    "corrector": (str, _choice("on", "off")),
    "corrector.xi0": (str, _choice("e1", "e2", "cellular")),
    "loop": (str, _choice("none", "circle")),
    "loop.cx": (float, None), "loop.cy": (float, None),
    "loop.radius": (float, _positive), "loop.markers": (int, _min16),
    "solver.momentum_tol": (float, _positive), "solver.pressure_tol": (float, _positive),
    "solver.max_iter": (int, _positive), "solver.detF_floor": (float, _positive),
    "diag_every": (int, _positive), "snap_every": (int, _positive),
    "output_dir": (str, None),
}

_REQUIRED = ("grid.nx", "grid.ny", "grid.lx", "grid.ly", "alpha", "t_end", "ic", "f0")

_DEFAULTS = {
    "nu": 0.0, "cfl": 0.25, "dt_max": 0.05, "ic.amplitude": 1.0, "ic.seed": 0,
    "ic.kmax": 4, "f0.a": 1.0, "f0.b": 0.0, "f0.c": 1.0, "f0.samples": None,
    "corrector": "off", "corrector.xi0": "e1", "loop": "none", "loop.cx": None,
    "loop.cy": None, "loop.radius": 1.0, "loop.markers": 128,
    "solver.momentum_tol": 1e-10, "solver.pressure_tol": 1e-9, "solver.max_iter": 500,
    "solver.detF_floor": 1e-8, "diag_every": 1, "snap_every": 10, "output_dir": "out",
}


@dataclass(frozen=True)
class SimConfig:
    nx: int
    ny: int
    lx: float
    ly: float
    alpha: float
    t_end: float
    ic: str
    f0: str
    nu: float = 0.0
    cfl: float = 0.25
    dt_max: float = 0.05
    ic_amplitude: float = 1.0
    ic_seed: int = 0
    ic_kmax: int = 4
    f0_a: float = 1.0
    f0_b: float = 0.0
    f0_c: float = 1.0
    f0_samples: str | None = None
    corrector: bool = False
    corrector_xi0: str = "e1"
    loop: str = "none"
    loop_cx: float | None = None
    loop_cy: float | None = None
    loop_radius: float = 1.0
    loop_markers: int = 128
    momentum_tol: float = 1e-10
    pressure_tol: float = 1e-9
    max_iter: int = 500
    detF_floor: float = 1e-8
    diag_every: int = 1
    snap_every: int = 10
    output_dir: str = "out"

    @property
    def grid(self) -> Grid2D:
        return make_grid(self.nx, self.ny, self.lx, self.ly)

    @property
    def params(self) -> ModelParams:
        return ModelParams(alpha=self.alpha, nu=self.nu, momentum_tol=self.momentum_tol,
                           pressure_tol=self.pressure_tol, max_iter=self.max_iter,
                           detF_floor=self.detF_floor)

    def with_changes(self, **kw) -> "SimConfig":
        from dataclasses import replace
        return replace(self, **kw)


def _convert(kind, raw):
    if kind is str:
        return raw
    if kind is int:
        v = float(raw) if any(c in raw for c in ".eE") else int(raw, 10)
        if isinstance(v, float):
            if not v.is_integer():
                raise ValueError("expected an integer")
            v = int(v)
        return v
    v = float(raw)
    if not math.isfinite(v):
        raise ValueError("expected a finite number")
    return v


def parse_config(text: str) -> SimConfig:
    values: dict = {}
    lines: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError("expected 'key = value'", line=lineno)
        key, raw = (part.strip() for part in body.split("=", 1))
        if not key:
            raise ConfigError("missing key", line=lineno)
        if key not in _SCHEMA:
            raise ConfigError("unknown key", line=lineno, key=key)
        if key in values:
            raise ConfigError(f"duplicate key (first set on line {lines[key]})",
                              line=lineno, key=key)
        if not raw:
            raise ConfigError("missing value", line=lineno, key=key)
        kind, check = _SCHEMA[key]
        try:
            v = _convert(kind, raw)
        except ValueError:
            raise ConfigError(f"invalid {kind.__name__} value {raw!r}", line=lineno, key=key)
        if check is not None:
            problem = check(v)
            if problem:
                raise ConfigError(problem, line=lineno, key=key)
        values[key] = v
        lines[key] = lineno

    for key in _REQUIRED:
        if key not in values:
            raise ConfigError("required key is missing", key=key)
    merged = {**_DEFAULTS, **values}

    if merged["f0"] == "constant_spd":
        a, b, c = merged["f0.a"], merged["f0.b"], merged["f0.c"]
        if a <= 0:
            raise ConfigError("must be > 0 for constant_spd", line=lines.get("f0.a"), key="f0.a")
        if a * c - b * b <= 0:
            raise ConfigError("constant_spd needs f0.a * f0.c - f0.b^2 > 0",
                              line=lines.get("f0.c"), key="f0.c")
    if merged["f0"] == "from_samples" and not merged["f0.samples"]:
        raise ConfigError("f0 = from_samples needs f0.samples", line=lines.get("f0"), key="f0.samples")

    return SimConfig(
        nx=merged["grid.nx"], ny=merged["grid.ny"], lx=merged["grid.lx"], ly=merged["grid.ly"],
        alpha=merged["alpha"], t_end=merged["t_end"], ic=merged["ic"], f0=merged["f0"],
        nu=merged["nu"], cfl=merged["cfl"], dt_max=merged["dt_max"],
        ic_amplitude=merged["ic.amplitude"], ic_seed=merged["ic.seed"], ic_kmax=merged["ic.kmax"],
        f0_a=merged["f0.a"], f0_b=merged["f0.b"], f0_c=merged["f0.c"],
        f0_samples=merged["f0.samples"], corrector=merged["corrector"] == "on",
        corrector_xi0=merged["corrector.xi0"], loop=merged["loop"], loop_cx=merged["loop.cx"],
        loop_cy=merged["loop.cy"], loop_radius=merged["loop.radius"],
        loop_markers=merged["loop.markers"], momentum_tol=merged["solver.momentum_tol"],
        pressure_tol=merged["solver.pressure_tol"], max_iter=merged["solver.max_iter"],
        detF_floor=merged["solver.detF_floor"], diag_every=merged["diag_every"],
        snap_every=merged["snap_every"], output_dir=merged["output_dir"],
    )


def load_config(path) -> SimConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError(f"not valid UTF-8: {exc}")
    return parse_config(text)


# -- initial data -------------------------------------------------------------------

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    z = (x + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def counter_uniform(seed: int, n: int) -> float:
    """The n-th value in ``[-1, 1)`` of the counter-based stream for ``seed``."""
    x = splitmix64((seed + n * _GOLDEN) & _MASK64)
    return (x >> 11) * 2.0 ** -52 - 1.0


def random_seeded_velocity(grid: Grid2D, seed: int, kmax: int, amplitude: float) -> VectorField:
    X, Y = grid.coords()
    xs, ys = 2 * np.pi * X / grid.lx, 2 * np.pi * Y / grid.ly
    psi = np.zeros(grid.shape)
    n = 0
    for kx in range(0, kmax + 1):
        for ky in range(-kmax, kmax + 1):
            if kx == 0 and ky <= 0:
                continue
            a, b = counter_uniform(seed, n), counter_uniform(seed, n + 1)
            n += 2
            phase = kx * xs + ky * ys
            psi += (a * np.cos(phase) + b * np.sin(phase)) / (kx * kx + ky * ky)
    d = grid.grad(psi)
    u = np.array([d[1], -d[0]])
    peak = np.max(np.abs(u))
    return VectorField(grid, u * (amplitude / peak if peak > 0 else 0.0))


def initial_velocity(cfg: SimConfig) -> VectorField:
    g = cfg.grid
    X, Y = g.coords()
    kx, ky = 2 * np.pi / g.lx, 2 * np.pi / g.ly
    A = cfg.ic_amplitude
    if cfg.ic == "taylor_green":
        u = A * np.array([np.sin(kx * X) * np.cos(ky * Y), -np.cos(kx * X) * np.sin(ky * Y)])
        # keep it divergence-free on non-square domains
        u = g.leray(u)
    elif cfg.ic == "shear":
        u = A * np.array([np.sin(ky * Y), np.zeros_like(Y)])
    else:
        return random_seeded_velocity(g, cfg.ic_seed, cfg.ic_kmax, A)
    return VectorField(g, u)


def initial_tensor(cfg: SimConfig) -> SymTensorField:
    from .grid_fields import build_F_from_samples

    g = cfg.grid
    if cfg.f0 == "identity":
        return SymTensorField.identity(g)
    if cfg.f0 == "constant_spd":
        return SymTensorField.constant(g, cfg.f0_a, cfg.f0_b, cfg.f0_c)
    try:
        with np.load(cfg.f0_samples) as data:
            weights, xi = data["weights"], data["xi"]
    except KeyError as exc:
        raise ConfigError(f"samples file lacks array {exc}", key="f0.samples")
    if xi.ndim != 4 or xi.shape[1:] != (2,) + g.shape or len(weights) != len(xi):
        raise ConfigError(f"samples must have shape (m, 2, {g.ny}, {g.nx})", key="f0.samples")
    try:
        return build_F_from_samples(
            (w, VectorField(g, x)) for w, x in zip(weights.tolist(), xi))
    except ValueError as exc:
        raise ConfigError(str(exc), key="f0.samples")


def initial_oneform(cfg: SimConfig) -> OneFormField:
    g = cfg.grid
    X, Y = g.coords()
    one, zero = np.ones(g.shape), np.zeros(g.shape)
    if cfg.corrector_xi0 == "e1":
        xi = [one, zero]
    elif cfg.corrector_xi0 == "e2":
        xi = [zero, one]
    else:
        xi = [np.cos(2 * np.pi * Y / g.ly), np.sin(2 * np.pi * X / g.lx)]
    return OneFormField(g, np.array(xi))


def initial_loop(cfg: SimConfig) -> np.ndarray | None:
    from .diagnostics import MaterialLoop

    if cfg.loop == "none":
        return None
    cx = cfg.lx / 2 if cfg.loop_cx is None else cfg.loop_cx
    cy = cfg.ly / 2 if cfg.loop_cy is None else cfg.loop_cy
    return MaterialLoop.circle(cx, cy, cfg.loop_radius, cfg.loop_markers).points


def initial_state(cfg: SimConfig) -> SimState:
    F = initial_tensor(cfg)
    if not F.is_spd(cfg.detF_floor):
        raise ConfigError("initial fluctuation tensor is not SPD above the det floor", key="f0")
    return SimState(
        t=0.0, u=initial_velocity(cfg), F=F,
        xi_flat=initial_oneform(cfg) if cfg.corrector else None,
        loop=initial_loop(cfg),
    )
