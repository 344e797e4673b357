"""Periodic 2D grid, sampled field containers and spectral machinery.

Fields are stored in physical space as real arrays indexed ``[iy, ix]``
(row-major, x fastest).  Derivatives are pseudo-spectral with the Nyquist
wavenumbers zeroed, which keeps every derivative exactly skew-adjoint under
the grid inner product.  Nonlinear products are formed on a grid refined by
a factor of two and truncated back, which is exact for the band-limited
triple products appearing in the equations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

rfft2 = np.fft.rfft2
irfft2 = np.fft.irfft2


@dataclass(frozen=True, eq=False)
class Grid2D:
    """Uniform periodic grid on ``[0, lx) x [0, ly)``."""

    nx: int
    ny: int
    lx: float
    ly: float

    def __post_init__(self):
        for name in ("nx", "ny"):
            n = getattr(self, name)
            if int(n) != n or n < 8 or n % 2:
                raise ValueError(f"{name} must be an even integer >= 8, got {n!r}")
        for name in ("lx", "ly"):
            if not np.isfinite(getattr(self, name)) or getattr(self, name) <= 0:
                raise ValueError(f"{name} must be a positive length")

    def __eq__(self, other):
        return isinstance(other, Grid2D) and (self.nx, self.ny, self.lx, self.ly) == (
            other.nx, other.ny, other.lx, other.ly)

    def __hash__(self):
        return hash((self.nx, self.ny, self.lx, self.ly))

    @property
    def dx(self) -> float:
        return self.lx / self.nx

    @property
    def dy(self) -> float:
        return self.ly / self.ny

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    @cached_property
    def fine(self) -> "Grid2D":
        """The 2x refined grid used for dealiased products."""
        return Grid2D(2 * self.nx, 2 * self.ny, self.lx, self.ly)

    @cached_property
    def kx(self) -> np.ndarray:
        """x wavenumbers of the rfft layout, shape ``(1, nx//2 + 1)``."""
        return (2 * np.pi / self.lx * np.arange(self.nx // 2 + 1))[None, :]

    @cached_property
    def ky(self) -> np.ndarray:
        """y wavenumbers, shape ``(ny, 1)``; index ny/2 is the Nyquist mode."""
        return (2 * np.pi * np.fft.fftfreq(self.ny, d=self.dy))[:, None]

    @cached_property
    def ikx(self) -> np.ndarray:
        k = self.kx.copy()
        k[0, -1] = 0.0
        return 1j * k

    @cached_property
    def iky(self) -> np.ndarray:
        k = self.ky.copy()
        k[self.ny // 2, 0] = 0.0
        return 1j * k

    @cached_property
    def k2(self) -> np.ndarray:
        """|k|^2 built from the Nyquist-zeroed derivative symbols."""
        return -(self.ikx ** 2 + self.iky ** 2).real

    @cached_property
    def inv_k2(self) -> np.ndarray:
        k2 = self.k2
        out = np.zeros_like(k2)
        np.divide(1.0, k2, out=out, where=k2 > 0)
        return out

    @cached_property
    def nyquist_mask(self) -> np.ndarray:
        """1 on retained modes, 0 on the Nyquist row/column."""
        m = np.ones((self.ny, self.nx // 2 + 1))
        m[self.ny // 2, :] = 0.0
        m[:, -1] = 0.0
        return m

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinates as 2D arrays ``(X, Y)`` of shape ``(ny, nx)``."""
        x = np.arange(self.nx) * self.dx
        y = np.arange(self.ny) * self.dy
        return np.meshgrid(x, y, indexing="xy")

    # -- transforms ---------------------------------------------------------

    def fft(self, a: np.ndarray) -> np.ndarray:
        return rfft2(a)

    def ifft(self, ah: np.ndarray) -> np.ndarray:
        return irfft2(ah, s=self.shape)

    def pad_hat(self, ah: np.ndarray) -> np.ndarray:
        """Coarse spectral coefficients -> values on the 2x refined grid."""
        ny, nx, h = self.ny, self.nx, self.ny // 2
        out = np.zeros(ah.shape[:-2] + (2 * ny, nx + 1), dtype=complex)
        out[..., :h, : nx // 2] = ah[..., :h, : nx // 2]
        out[..., 2 * ny - h + 1:, : nx // 2] = ah[..., h + 1:, : nx // 2]
        return irfft2(out, s=(2 * ny, 2 * nx)) * 4.0

    def to_fine(self, a: np.ndarray) -> np.ndarray:
        return self.pad_hat(rfft2(a))

    def fine_to_hat(self, b: np.ndarray) -> np.ndarray:
        """Values on the refined grid -> truncated coarse coefficients."""
        ny, nx, h = self.ny, self.nx, self.ny // 2
        bh = rfft2(b)
        out = np.zeros(b.shape[:-2] + (ny, nx // 2 + 1), dtype=complex)
        out[..., :h, : nx // 2] = bh[..., :h, : nx // 2]
        out[..., h + 1:, : nx // 2] = bh[..., 2 * ny - h + 1:, : nx // 2]
        return out * 0.25

    def from_fine(self, b: np.ndarray) -> np.ndarray:
        return irfft2(self.fine_to_hat(b), s=self.shape)

    # -- calculus -----------------------------------------------------------

    def grad(self, a: np.ndarray) -> np.ndarray:
        """Gradient of (a stack of) scalars; a new axis of length 2 is
        inserted before the spatial axes: ``out[..., j, :, :] = d_j a``."""
        ah = rfft2(a)
        return np.stack([self.ifft(self.ikx * ah), self.ifft(self.iky * ah)], axis=-3)

    def grad_hat(self, ah: np.ndarray) -> np.ndarray:
        return np.stack([self.ikx * ah, self.iky * ah], axis=-3)

    def div(self, v: np.ndarray) -> np.ndarray:
        """Divergence over the axis just before the spatial axes."""
        vh = rfft2(v)
        return self.ifft(self.ikx * vh[..., 0, :, :] + self.iky * vh[..., 1, :, :])

    def laplacian(self, a: np.ndarray) -> np.ndarray:
        return self.ifft(-self.k2 * rfft2(a))

    def integrate(self, a: np.ndarray) -> float:
        return float(np.sum(a) * self.cell_area)

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        """Discrete L2 pairing, summed over all components."""
        return float(np.sum(a * b) * self.cell_area)

    def norm(self, a: np.ndarray) -> float:
        return float(np.sqrt(np.sum(a * a) * self.cell_area))

    def fine_integrate(self, b: np.ndarray) -> float:
        """Integral of a function sampled on the refined grid."""
        return float(np.sum(b) * self.cell_area * 0.25)

    def leray(self, v: np.ndarray) -> np.ndarray:
        """Flat-metric Helmholtz-Leray projection onto divergence-free fields."""
        vh = rfft2(v)
        d = (self.ikx * vh[0] + self.iky * vh[1]) * self.inv_k2
        return np.stack([self.ifft(vh[0] + self.ikx * d), self.ifft(vh[1] + self.iky * d)])

    def band_limit(self, a: np.ndarray) -> np.ndarray:
        """Remove the Nyquist row/column."""
        return self.ifft(rfft2(a) * self.nyquist_mask)


def make_grid(nx: int, ny: int, lx: float, ly: float) -> Grid2D:
    return Grid2D(nx, ny, float(lx), float(ly))


# -- field containers -------------------------------------------------------


@dataclass(frozen=True, eq=False)
class _Field:
    grid: Grid2D
    data: np.ndarray = field(repr=False)

    _ncomp: int = 0  # overridden by subclasses

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        expected = self.grid.shape if self._ncomp == 0 else (self._ncomp,) + self.grid.shape
        if data.shape != expected:
            raise ValueError(f"{type(self).__name__} expects shape {expected}, got {data.shape}")
        object.__setattr__(self, "data", data)

    def _new(self, data):
        return type(self)(self.grid, data, **self._extra())

    def _extra(self) -> dict:
        return {}

    def __add__(self, other):
        return self._new(self.data + other.data)

    def __sub__(self, other):
        return self._new(self.data - other.data)

    def __mul__(self, c):
        return self._new(self.data * c)

    __rmul__ = __mul__

    def __neg__(self):
        return self._new(-self.data)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))

    def norm(self) -> float:
        return self.grid.norm(self.data)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.data)))


@dataclass(frozen=True, eq=False)
class ScalarField(_Field):
    _ncomp: int = field(default=0, init=False, repr=False)


@dataclass(frozen=True, eq=False)
class VectorField(_Field):
    """Contravariant vector field ``(u^1, u^2)``."""

    _ncomp: int = field(default=2, init=False, repr=False)

    def flat(self) -> "OneFormField":
        return OneFormField(self.grid, self.data.copy())

    def div(self) -> ScalarField:
        return ScalarField(self.grid, self.grid.div(self.data))


@dataclass(frozen=True, eq=False)
class OneFormField(_Field):
    """Covariant one-form ``(xi_1, xi_2)``."""

    _ncomp: int = field(default=2, init=False, repr=False)

    def sharp(self) -> VectorField:
        return VectorField(self.grid, self.data.copy())


@dataclass(frozen=True, eq=False)
class SymTensorField(_Field):
    """Symmetric 2-tensor stored as ``(T11, T12, T22)``.

    ``covariant`` distinguishes lowered-index tensors (Def u, (Def u)^2)
    from the contravariant fluctuation tensor; on the flat torus the
    components coincide, the flag only records intent.
    """

    covariant: bool = False
    _ncomp: int = field(default=3, init=False, repr=False)

    def _extra(self):
        return {"covariant": self.covariant}

    def det(self) -> ScalarField:
        a, b, c = self.data
        return ScalarField(self.grid, a * c - b * b)

    def trace(self) -> ScalarField:
        return ScalarField(self.grid, self.data[0] + self.data[2])

    def min_eigenvalue(self) -> np.ndarray:
        a, b, c = self.data
        return 0.5 * (a + c) - np.sqrt(0.25 * (a - c) ** 2 + b * b)

    def is_spd(self, floor: float = 0.0) -> bool:
        return bool(np.all(self.data[0] > 0) and np.all(self.det().data > floor))

    def matrix(self) -> np.ndarray:
        """Full component array of shape ``(2, 2, ny, nx)``."""
        a, b, c = self.data
        return np.array([[a, b], [b, c]])

    @classmethod
    def identity(cls, grid: Grid2D) -> "SymTensorField":
        one = np.ones(grid.shape)
        return cls(grid, np.array([one, 0 * one, one]))

    @classmethod
    def constant(cls, grid: Grid2D, a: float, b: float, c: float) -> "SymTensorField":
        one = np.ones(grid.shape)
        return cls(grid, np.array([a * one, b * one, c * one]))


# -- operations -------------------------------------------------------------


def spectral_deriv(f: ScalarField, axis: str) -> ScalarField:
    """Exact derivative of the trigonometric interpolant of ``f``."""
    if axis not in ("x", "y"):
        raise ValueError("axis must be 'x' or 'y'")
    if not f.is_finite():
        raise ValueError("field contains non-finite values")
    g = f.grid
    sym = g.ikx if axis == "x" else g.iky
    return ScalarField(g, g.ifft(sym * g.fft(f.data)))


class Interpolator:
    """Periodic evaluation of one or more stacked scalar arrays at points.

    ``method="bicubic"`` is Hermite bicubic with node derivatives taken
    spectrally (C1, fourth order); ``method="spectral"`` evaluates the
    trigonometric interpolant exactly.
    """

    def __init__(self, grid: Grid2D, values: np.ndarray, method: str = "bicubic"):
        if method not in ("bicubic", "spectral"):
            raise ValueError(f"unknown interpolation method {method!r}")
        self.grid = grid
        self.method = method
        values = np.asarray(values, dtype=float)
        self._scalar = values.ndim == 2
        self.values = values[None] if self._scalar else values
        if method == "bicubic":
            vh = rfft2(self.values)
            # derivatives w.r.t. the unit-spaced index coordinates
            self.fx = grid.ifft(grid.ikx * vh) * grid.dx
            self.fy = grid.ifft(grid.iky * vh) * grid.dy
            self.fxy = grid.ifft(grid.ikx * grid.iky * vh) * grid.dx * grid.dy
        else:
            self.vh = np.fft.fft2(self.values) / (grid.nx * grid.ny)
            # symmetric treatment of Nyquist modes keeps the interpolant real
            self._kx = 2 * np.pi * np.fft.fftfreq(grid.nx, d=grid.dx)
            self._ky = 2 * np.pi * np.fft.fftfreq(grid.ny, d=grid.dy)

    def __call__(self, x, y) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        out = self._bicubic(x, y) if self.method == "bicubic" else self._spectral(x, y)
        return out[0] if self._scalar else out

    def _bicubic(self, x, y):
        g = self.grid
        sx = np.mod(x, g.lx) / g.dx
        sy = np.mod(y, g.ly) / g.dy
        i0 = np.floor(sx).astype(int) % g.nx
        j0 = np.floor(sy).astype(int) % g.ny
        tx = sx - np.floor(sx)
        ty = sy - np.floor(sy)
        i1 = (i0 + 1) % g.nx
        j1 = (j0 + 1) % g.ny

        def hermite(t):
            t2, t3 = t * t, t * t * t
            return (2 * t3 - 3 * t2 + 1, t3 - 2 * t2 + t, -2 * t3 + 3 * t2, t3 - t2)

        h0x, h1x, h2x, h3x = hermite(tx)
        h0y, h1y, h2y, h3y = hermite(ty)
        out = 0.0
        for jj, (hv, hd) in ((j0, (h0y, h1y)), (j1, (h2y, h3y))):
            for ii, (gv, gd) in ((i0, (h0x, h1x)), (i1, (h2x, h3x))):
                out = out + (
                    self.values[:, jj, ii] * gv * hv
                    + self.fx[:, jj, ii] * gd * hv
                    + self.fy[:, jj, ii] * gv * hd
                    + self.fxy[:, jj, ii] * gd * hd
                )
        return out

    def _spectral(self, x, y):
        g = self.grid
        ex = np.exp(1j * np.outer(x, self._kx))  # (m, nx)
        ey = np.exp(1j * np.outer(y, self._ky))  # (m, ny)
        nyq_x = np.cos(g.nx // 2 * 2 * np.pi / g.lx * x)
        nyq_y = np.cos(g.ny // 2 * 2 * np.pi / g.ly * y)
        ex[:, g.nx // 2] = nyq_x
        ey[:, g.ny // 2] = nyq_y
        # sum_{j,i} vh[c, j, i] ey[m, j] ex[m, i]
        t = np.einsum("cji,mi->cmj", self.vh, ex)
        return np.einsum("cmj,mj->cm", t, ey).real


def interpolate(f: ScalarField, x, y, method: str = "bicubic"):
    """Periodic interpolation of a scalar field at ``(x, y)``.

    Scalars in give a scalar out; arrays give arrays.
    """
    scalar_in = np.ndim(x) == 0 and np.ndim(y) == 0
    out = Interpolator(f.grid, f.data, method)(x, y)
    return float(out[0]) if scalar_in else out


def build_F_from_samples(samples) -> SymTensorField:
    """Fluctuation tensor ``F^{ij} = sum_theta w_theta xi^i xi^j``.

    Args:
        samples: iterable of ``(weight, VectorField)`` pairs.

    Returns:
        Contravariant SymTensorField, pointwise positive semi-definite.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("at least one fluctuation sample is required")
    weights = np.array([float(w) for w, _ in samples])
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ValueError("sample weights must be finite and non-negative")
    if weights.sum() <= 0:
        raise ValueError("sample weights must sum to a positive number")
    grid = samples[0][1].grid
    out = np.zeros((3,) + grid.shape)
    for w, xi in samples:
        if xi.grid != grid:
            raise ValueError("all samples must live on the same grid")
        a, b = xi.data
        out[0] += w * a * a
        out[1] += w * a * b
        out[2] += w * b * b
    return SymTensorField(grid, out)


def random_band_limited(grid: Grid2D, rng: np.random.Generator, kmax: int,
                        ncomp: int | None = None) -> np.ndarray:
    """Random real field with Fourier modes ``|k_i| <= kmax`` (index units)."""
    shape = grid.shape if ncomp is None else (ncomp,) + grid.shape
    hat_shape = shape[:-2] + (grid.ny, grid.nx // 2 + 1)
    kx_idx = np.arange(grid.nx // 2 + 1)[None, :]
    ky_idx = np.fft.fftfreq(grid.ny, d=1.0 / grid.ny)[:, None]
    mask = (np.abs(kx_idx) <= kmax) & (np.abs(ky_idx) <= kmax)
    coef = (rng.standard_normal(hat_shape) + 1j * rng.standard_normal(hat_shape)) * mask
    return irfft2(coef, s=grid.shape) * (grid.nx * grid.ny) / (2 * kmax + 1)


def random_divfree(grid: Grid2D, rng: np.random.Generator, kmax: int) -> VectorField:
    """Random divergence-free velocity from a band-limited streamfunction."""
    psi = random_band_limited(grid, rng, kmax)
    d = grid.grad(psi)
    return VectorField(grid, np.array([d[1], -d[0]]))


def random_spd(grid: Grid2D, rng: np.random.Generator, kmax: int,
               amplitude: float = 0.3) -> SymTensorField:
    """Random smooth SPD tensor: identity plus a bounded smooth perturbation."""
    p = random_band_limited(grid, rng, kmax, ncomp=3)
    p = amplitude * p / max(np.max(np.abs(p)), 1e-300)
    base = np.array([1.0, 0.0, 1.0])[:, None, None]
    return SymTensorField(grid, base + p)
