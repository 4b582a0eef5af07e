"""Flat-torus spectral geometry.

Fourier analysis/synthesis in the orthonormal exponential basis
``e_k(x) = exp(i k.(2 pi / L) x) / sqrt(prod L)``, Sobolev multipliers,
rank-ordered frequency projectors and smooth observation windows.

Coefficient arrays are stored in numpy FFT order. All array helpers accept
arbitrary leading batch dimensions; the trailing ``d`` axes are the modes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when array sizes or geometries do not match."""


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class TorusGeometry:
    """Flat torus of dimension 1 or 2 with an ``N_1 x ... x N_d`` grid."""

    sizes: tuple[int, ...]
    lengths: tuple[float, ...] = ()

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.sizes)
        lengths = tuple(float(x) for x in self.lengths) or (2 * math.pi,) * len(sizes)
        if len(sizes) not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {len(sizes)}")
        if len(lengths) != len(sizes):
            raise ValueError("sizes and lengths must have the same length")
        if not all(_is_pow2(n) for n in sizes):
            raise ValueError(f"grid sizes must be powers of two, got {sizes}")
        if any(L <= 0 for L in lengths):
            raise ValueError("side lengths must be positive")
        if math.prod(sizes) < 4:
            raise ValueError("need at least 4 modes in total")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "lengths", lengths)

    @classmethod
    def line(cls, n: int, length: float = 2 * math.pi) -> "TorusGeometry":
        return cls((n,), (length,))

    @classmethod
    def square(cls, n: int, length: float = 2 * math.pi) -> "TorusGeometry":
        return cls((n, n), (length, length))

    @property
    def dim(self) -> int:
        return len(self.sizes)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.sizes

    @property
    def n_modes(self) -> int:
        return math.prod(self.sizes)

    @property
    def volume(self) -> float:
        return math.prod(self.lengths)

    @property
    def axes(self) -> tuple[int, ...]:
        return tuple(range(-self.dim, 0))

    @cached_property
    def indices(self) -> tuple[np.ndarray, ...]:
        """Integer mode indices ``k_i`` on the grid, one array per axis."""
        ks = [np.rint(np.fft.fftfreq(n) * n).astype(np.int64) for n in self.sizes]
        return tuple(np.meshgrid(*ks, indexing="ij"))

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        return tuple(k * (2 * math.pi / L) for k, L in zip(self.indices, self.lengths))

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        """Laplacian eigenvalues ``lambda_k = sum_i (2 pi k_i / L_i)^2``."""
        lam = sum(xi**2 for xi in self.wavenumbers)
        lam.setflags(write=False)
        return lam

    @cached_property
    def rank(self) -> np.ndarray:
        """Rank of every mode: ascending eigenvalue, ties by lexicographic ``k``."""
        lam = np.round(self.eigenvalues.ravel(), 9)
        keys = [k.ravel() for k in reversed(self.indices)] + [lam]
        order = np.lexsort(keys)
        rank = np.empty(self.n_modes, dtype=np.int64)
        rank[order] = np.arange(self.n_modes)
        rank = rank.reshape(self.shape)
        rank.setflags(write=False)
        return rank

    @cached_property
    def modes_by_rank(self) -> np.ndarray:
        """Flat mode positions sorted by rank."""
        return np.argsort(self.rank.ravel())

    def points(self, shape: Sequence[int] | None = None) -> tuple[np.ndarray, ...]:
        """Physical grid coordinates (``x_i = j L_i / M_i``) on a grid of ``shape``."""
        shape = tuple(shape or self.shape)
        xs = [np.arange(m) * (L / m) for m, L in zip(shape, self.lengths)]
        return tuple(np.meshgrid(*xs, indexing="ij"))

    def check_coeffs(self, c: np.ndarray) -> None:
        if c.shape[-self.dim:] != self.shape:
            raise ShapeError(f"coefficient shape {c.shape} does not end in {self.shape}")


# --- padded transforms -----------------------------------------------------


@lru_cache(maxsize=None)
def _embed(sizes: tuple[int, ...], shape: tuple[int, ...]):
    idx = []
    for n, m in zip(sizes, shape):
        k = np.rint(np.fft.fftfreq(n) * n).astype(np.int64)
        idx.append(k % m)
    return (Ellipsis,) + np.ix_(*idx)


def pad(c: np.ndarray, geom: TorusGeometry, shape: Sequence[int]) -> np.ndarray:
    """Zero-pad coefficients onto a larger mode grid (FFT order kept)."""
    shape = tuple(shape)
    if shape == geom.shape:
        return c
    out = np.zeros(c.shape[: c.ndim - geom.dim] + shape, dtype=complex)
    out[_embed(geom.shape, shape)] = c
    return out


def truncate(c: np.ndarray, geom: TorusGeometry, shape: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`pad`: keep only the geometry's modes."""
    shape = tuple(shape)
    if shape == geom.shape:
        return c
    return c[_embed(geom.shape, shape)]


def _fft(u, dim):
    return np.fft.fft(u) if dim == 1 else np.fft.fft2(u)


def _ifft(c, dim):
    return np.fft.ifft(c) if dim == 1 else np.fft.ifft2(c)


def synthesize(c: np.ndarray, geom: TorusGeometry, shape: Sequence[int] | None = None) -> np.ndarray:
    """Physical samples of ``sum_k c_k e_k`` on a grid (default: the native one)."""
    shape = tuple(shape) if shape is not None else geom.shape
    m = math.prod(shape)
    return _ifft(pad(c, geom, shape), geom.dim) * (m / math.sqrt(geom.volume))


def analyze(u: np.ndarray, geom: TorusGeometry) -> np.ndarray:
    """Orthonormal-basis coefficients of physical samples; truncated to the geometry."""
    shape = u.shape[-geom.dim:]
    m = math.prod(shape)
    c = _fft(u, geom.dim) * (math.sqrt(geom.volume) / m)
    return truncate(c, geom, shape)


def padded_shape(geom: TorusGeometry, factor: int) -> tuple[int, ...]:
    return tuple(factor * n for n in geom.shape)


# --- fields and scales -------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SpectralField:
    """A state on the torus, stored as orthonormal Fourier coefficients."""

    geometry: TorusGeometry
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.shape != self.geometry.shape:
            raise ShapeError(f"expected {self.geometry.shape} coefficients, got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("non-finite coefficients")
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, geom: TorusGeometry) -> "SpectralField":
        return cls(geom, np.zeros(geom.shape, dtype=complex))

    @classmethod
    def mode(cls, geom: TorusGeometry, k: Sequence[int] | int, amplitude: complex = 1.0) -> "SpectralField":
        """Single basis mode ``amplitude * e_k`` (unit L2 norm for amplitude 1)."""
        k = (k,) if np.isscalar(k) else tuple(k)
        c = np.zeros(geom.shape, dtype=complex)
        c[tuple(int(ki) % n for ki, n in zip(k, geom.shape))] = amplitude
        return cls(geom, c)

    def _same(self, other: "SpectralField") -> None:
        if other.geometry != self.geometry:
            raise ShapeError("fields live on different geometries")

    def __add__(self, other: "SpectralField") -> "SpectralField":
        self._same(other)
        return SpectralField(self.geometry, self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        self._same(other)
        return SpectralField(self.geometry, self.coeffs - other.coeffs)

    def __mul__(self, a: complex) -> "SpectralField":
        return SpectralField(self.geometry, a * self.coeffs)

    __rmul__ = __mul__

    def __neg__(self) -> "SpectralField":
        return SpectralField(self.geometry, -self.coeffs)

    def norm(self, s: float = 0.0) -> float:
        return math.sqrt(sobolev_inner(self, self, s).real)


@dataclass(frozen=True)
class SobolevScale:
    """Sobolev exponent ``s``; per-mode weights ``(1 + lambda_k)^s``."""

    s: float = 0.0

    def __post_init__(self):
        if self.s < 0:
            raise ValueError("Sobolev exponent must be non-negative")

    def weights(self, geom: TorusGeometry) -> np.ndarray:
        return (1.0 + geom.eigenvalues) ** self.s


def _scale(s: SobolevScale | float) -> float:
    return s.s if isinstance(s, SobolevScale) else float(s)


def to_spectral(samples: np.ndarray, geom: TorusGeometry) -> SpectralField:
    """Fourier analysis of physical samples on the native grid."""
    samples = np.asarray(samples)
    if samples.shape != geom.shape:
        raise ShapeError(f"expected {geom.shape} samples, got {samples.shape}")
    return SpectralField(geom, analyze(samples, geom))


def to_physical(u: SpectralField) -> np.ndarray:
    return synthesize(u.coeffs, u.geometry)


def sobolev_inner(u: SpectralField, v: SpectralField, s: SobolevScale | float = 0.0) -> complex:
    """``sum_k (1 + lambda_k)^s u_k conj(v_k)``."""
    u._same(v)
    w = (1.0 + u.geometry.eigenvalues) ** _scale(s)
    return complex(np.sum(w * u.coeffs * np.conj(v.coeffs)))


def real_inner(u: SpectralField, v: SpectralField, s: SobolevScale | float = 0.0) -> float:
    """Inner product of the real Hilbert structure (C viewed as R^2)."""
    return sobolev_inner(u, v, s).real


def multiplier(geom: TorusGeometry, s: float) -> np.ndarray:
    return (1.0 + geom.eigenvalues) ** (s / 2)


def apply_multiplier(u: SpectralField, s: float) -> SpectralField:
    """Bessel potential ``Lambda_s = (1 - Laplacian)^{s/2}``."""
    return SpectralField(u.geometry, multiplier(u.geometry, s) * u.coeffs)


def hs_norm(c: np.ndarray, geom: TorusGeometry, s: float) -> np.ndarray:
    """H^s norms of coefficient arrays, reducing the mode axes only."""
    w = (1.0 + geom.eigenvalues) ** s
    return np.sqrt(np.sum(w * np.abs(c) ** 2, axis=geom.axes))


# --- frequency split ---------------------------------------------------------


@dataclass(frozen=True)
class FrequencySplit:
    """``P_n`` keeps the ``n`` lowest-ranked modes, ``Q_n = I - P_n`` the rest."""

    geometry: TorusGeometry
    n: int

    def __post_init__(self):
        if not 0 <= self.n <= self.geometry.n_modes:
            raise ValueError(f"cutoff rank {self.n} outside [0, {self.geometry.n_modes}]")

    @cached_property
    def low_mask(self) -> np.ndarray:
        m = self.geometry.rank < self.n
        m.setflags(write=False)
        return m

    @cached_property
    def high_mask(self) -> np.ndarray:
        m = ~self.low_mask
        m.setflags(write=False)
        return m

    @property
    def n_high(self) -> int:
        return self.geometry.n_modes - self.n

    @cached_property
    def high_modes(self) -> np.ndarray:
        """Flat positions of the high-band modes in rank order."""
        return self.geometry.modes_by_rank[self.n:]

    def low(self, c: np.ndarray) -> np.ndarray:
        return np.where(self.low_mask, c, 0)

    def high(self, c: np.ndarray) -> np.ndarray:
        return np.where(self.high_mask, c, 0)


def project_low(u: SpectralField, split: FrequencySplit) -> SpectralField:
    if u.geometry != split.geometry:
        raise ShapeError("split and field geometries differ")
    return SpectralField(u.geometry, split.low(u.coeffs))


def project_high(u: SpectralField, split: FrequencySplit) -> SpectralField:
    if u.geometry != split.geometry:
        raise ShapeError("split and field geometries differ")
    return SpectralField(u.geometry, split.high(u.coeffs))


# --- observation windows -----------------------------------------------------


def smoothstep(t: np.ndarray) -> np.ndarray:
    """C-infinity transition: 0 for t <= 0, 1 for t >= 1, built from exp(-1/t)."""
    t = np.asarray(t, dtype=float)
    a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
    b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


@dataclass(frozen=True)
class Arc:
    """Periodic interval ``(lo, lo + length)`` with a centred plateau."""

    lo: float
    length: float
    plateau: float

    def __post_init__(self):
        if not 0 < self.plateau < self.length:
            raise ValueError("need 0 < plateau < length")

    @property
    def plateau_lo(self) -> float:
        return self.lo + 0.5 * (self.length - self.plateau)

    def profile(self, x: np.ndarray, period: float) -> np.ndarray:
        t = np.mod(x - self.lo, period)
        ramp = 0.5 * (self.length - self.plateau)
        up = smoothstep(t / ramp)
        down = smoothstep((self.length - t) / ramp)
        return np.where(t < self.length, np.minimum(up, down), 0.0)


@dataclass(frozen=True)
class Box:
    """Product of arcs; ``None`` means the whole circle in that coordinate."""

    arcs: tuple[Arc | None, ...]


@dataclass(frozen=True)
class ObservationWindow:
    """Smooth cutoff ``b`` with ``b = 1`` on the plateau set and ``0`` off ``omega``.

    ``omega`` and its plateau are unions of boxes; ``b = 1 - prod(1 - b_box)``.
    """

    geometry: TorusGeometry
    boxes: tuple[Box, ...] = ()
    everywhere: bool = False

    @classmethod
    def full(cls, geom: TorusGeometry) -> "ObservationWindow":
        return cls(geom, (), everywhere=True)

    @classmethod
    def empty(cls, geom: TorusGeometry) -> "ObservationWindow":
        return cls(geom, ())

    @classmethod
    def interval(cls, geom: TorusGeometry, lo: float, length: float, plateau_fraction: float = 0.5):
        if geom.dim != 1:
            raise ValueError("interval windows are one-dimensional")
        return cls(geom, (Box((Arc(lo, length, plateau_fraction * length),)),))

    @classmethod
    def strip(cls, geom: TorusGeometry, axis: int, lo: float, width: float, plateau_fraction: float = 0.5):
        arcs: list[Arc | None] = [None] * geom.dim
        arcs[axis] = Arc(lo, width, plateau_fraction * width)
        return cls(geom, (Box(tuple(arcs)),))

    @classmethod
    def cross(cls, geom: TorusGeometry, lo: float, width: float, plateau_fraction: float = 0.5):
        """Union of a vertical (``x_1``) and a horizontal (``x_2``) strip."""
        a = cls.strip(geom, 0, lo, width, plateau_fraction)
        b = cls.strip(geom, 1, lo, width, plateau_fraction)
        return cls(geom, a.boxes + b.boxes)

    @property
    def is_empty(self) -> bool:
        return not self.everywhere and not self.boxes

    def samples(self, shape: Sequence[int] | None = None) -> np.ndarray:
        """Values of ``b`` on a uniform grid (default: the native grid)."""
        pts = self.geometry.points(shape)
        if self.everywhere:
            return np.ones_like(pts[0])
        miss = np.ones_like(pts[0])
        for box in self.boxes:
            val = np.ones_like(pts[0])
            for arc, x, L in zip(box.arcs, pts, self.geometry.lengths):
                if arc is not None:
                    val = val * arc.profile(x, L)
            miss = miss * (1.0 - val)
        return 1.0 - miss

    def to_dict(self) -> dict:
        if self.everywhere:
            return {"kind": "full"}
        return {
            "kind": "boxes",
            "boxes": [
                [None if a is None else [a.lo, a.length, a.plateau] for a in box.arcs]
                for box in self.boxes
            ],
        }


def observe_coeffs(c: np.ndarray, window: ObservationWindow, factor: int = 2) -> np.ndarray:
    """``P_N(b u)`` on coefficient arrays, product formed on a padded grid."""
    geom = window.geometry
    if window.everywhere:
        return np.array(c, dtype=complex)
    if window.is_empty:
        return np.zeros_like(c, dtype=complex)
    shape = padded_shape(geom, factor)
    b = _window_cache(window, shape)
    return analyze(b * synthesize(c, geom, shape), geom)


_WINDOW_SAMPLES: dict = {}


def _window_cache(window: ObservationWindow, shape: tuple[int, ...]) -> np.ndarray:
    key = (window, shape)
    if key not in _WINDOW_SAMPLES:
        if len(_WINDOW_SAMPLES) > 64:
            _WINDOW_SAMPLES.clear()
        _WINDOW_SAMPLES[key] = window.samples(shape)
    return _WINDOW_SAMPLES[key]


def observe(u: SpectralField, window: ObservationWindow) -> SpectralField:
    """Pointwise multiplication by the window cutoff, returned spectrally."""
    if u.geometry != window.geometry:
        raise ShapeError("window and field geometries differ")
    return SpectralField(u.geometry, observe_coeffs(u.coeffs, window))
