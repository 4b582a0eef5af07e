"""NLS vector field, its linearization and time evolution.

The equation is ``i u_t + Laplacian u = f(u)`` with ``f(u) = P'(|u|^2) u``.
In first-order form ``u_t = A u + F(u)`` with ``A = i Laplacian`` and
``F = -i f``; the linearized high-band flow is

    w_t = A w + Q_n DF(v(t)) w + Q_n h(t).

Pointwise products are formed on a zero-padded grid large enough that the
Galerkin projection of the polynomial nonlinearity is exact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np
import scipy.linalg

from .spectral import (
    FrequencySplit,
    ObservationWindow,
    ShapeError,
    SpectralField,
    TorusGeometry,
    analyze,
    hs_norm,
    padded_shape,
    synthesize,
)

BLOWUP_THRESHOLD = 1e6


class BlowUpError(FloatingPointError):
    def __init__(self, step: int, value: float):
        super().__init__(f"solution left the bounded regime at step {step} (sup |u| = {value:.3g})")
        self.step = step
        self.value = value


class ConditioningError(np.linalg.LinAlgError):
    pass


# --- nonlinearity ------------------------------------------------------------


@dataclass(frozen=True)
class NonlinearitySpec:
    """``P'(r) = constant + sum_j coeffs[j-1] r^j`` for ``j = 1..m``.

    ``NonlinearitySpec((1.0,))`` is the defocusing cubic equation;
    ``NonlinearitySpec((), defocusing=False)`` switches the nonlinearity off.
    """

    coeffs: tuple[float, ...] = (1.0,)
    constant: float = 0.0
    defocusing: bool = True

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coeffs)
        while coeffs and coeffs[-1] == 0.0:
            coeffs = coeffs[:-1]
        object.__setattr__(self, "coeffs", coeffs)
        if self.defocusing and not (coeffs and coeffs[-1] > 0):
            raise ValueError("defocusing nonlinearity needs a positive leading coefficient")

    @classmethod
    def cubic(cls, g: float = 1.0) -> "NonlinearitySpec":
        return cls((g,), defocusing=g > 0)

    @classmethod
    def zero(cls) -> "NonlinearitySpec":
        return cls((), defocusing=False)

    @property
    def degree(self) -> int:
        """Degree of ``P'`` in ``r``."""
        return len(self.coeffs)

    @property
    def is_zero(self) -> bool:
        return not self.coeffs and self.constant == 0.0

    @property
    def pad_factor(self) -> int:
        # f has total degree 2p+1 in (u, conj u); (p+1)N points alias nothing onto |k| < N/2
        return self.degree + 1

    def dP(self, r):
        out = self.constant + 0 * r
        for j, c in enumerate(self.coeffs, start=1):
            out = out + c * r**j
        return out

    def d2P(self, r):
        out = 0 * r
        for j, c in enumerate(self.coeffs, start=1):
            out = out + j * c * r ** (j - 1)
        return out

    def P(self, r):
        out = self.constant * r
        for j, c in enumerate(self.coeffs, start=1):
            out = out + c * r ** (j + 1) / (j + 1)
        return out


def _grid(geom: TorusGeometry, nl: NonlinearitySpec) -> tuple[int, ...]:
    return padded_shape(geom, max(nl.pad_factor, 1))


def f_coeffs(c: np.ndarray, geom: TorusGeometry, nl: NonlinearitySpec) -> np.ndarray:
    if nl.is_zero:
        return np.zeros_like(c, dtype=complex)
    shape = _grid(geom, nl)
    u = synthesize(c, geom, shape)
    return analyze(nl.dP(np.abs(u) ** 2) * u, geom)


def df_kernel(vc: np.ndarray, geom: TorusGeometry, nl: NonlinearitySpec):
    """Physical multipliers ``(a, b)`` with ``Df(v) w = a w + b conj(w)`` on the padded grid."""
    shape = _grid(geom, nl)
    v = synthesize(vc, geom, shape)
    r = np.abs(v) ** 2
    d2 = nl.d2P(r)
    return nl.dP(r) + d2 * r, d2 * v**2


def apply_kernel(kernel, wc: np.ndarray, geom: TorusGeometry, nl: NonlinearitySpec) -> np.ndarray:
    a, b = kernel
    w = synthesize(wc, geom, _grid(geom, nl))
    return analyze(a * w + b * np.conj(w), geom)


def df_coeffs(vc: np.ndarray, wc: np.ndarray, geom: TorusGeometry, nl: NonlinearitySpec) -> np.ndarray:
    if nl.is_zero:
        return np.zeros_like(wc, dtype=complex)
    return apply_kernel(df_kernel(vc, geom, nl), wc, geom, nl)


def h_coeffs(vc: np.ndarray, wc: np.ndarray, geom: TorusGeometry, nl: NonlinearitySpec) -> np.ndarray:
    """Taylor remainder ``int_0^1 [Df(v + tau w) - Df(v)] w dtau`` by exact Gauss-Legendre."""
    if nl.is_zero or nl.degree == 0:
        return np.zeros_like(wc, dtype=complex)
    shape = _grid(geom, nl)
    v = synthesize(vc, geom, shape)
    w = synthesize(wc, geom, shape)
    # integrand has degree 2p in tau
    nodes, weights = np.polynomial.legendre.leggauss(math.ceil((2 * nl.degree + 1) / 2))
    tau = 0.5 * (nodes + 1.0)
    weights = 0.5 * weights
    r0 = np.abs(v) ** 2
    a0 = nl.dP(r0) + nl.d2P(r0) * r0
    b0 = nl.d2P(r0) * v**2
    acc = np.zeros(np.broadcast_shapes(v.shape, w.shape), dtype=complex)
    wbar = np.conj(w)
    for t, q in zip(tau, weights):
        z = v + t * w
        r = np.abs(z) ** 2
        d2 = nl.d2P(r)
        acc += q * ((nl.dP(r) + d2 * r - a0) * w + (d2 * z**2 - b0) * wbar)
    return analyze(acc, geom)


def eval_f(u: SpectralField, nl: NonlinearitySpec) -> SpectralField:
    """``f(u) = P'(|u|^2) u``, Galerkin-projected."""
    return SpectralField(u.geometry, f_coeffs(u.coeffs, u.geometry, nl))


def eval_df(v: SpectralField, w: SpectralField, nl: NonlinearitySpec) -> SpectralField:
    """Real-linear derivative ``Df(v) w = [P' + P'' |v|^2] w + P'' v^2 conj(w)``."""
    v._same(w)
    return SpectralField(v.geometry, df_coeffs(v.coeffs, w.coeffs, v.geometry, nl))


def eval_h(v: SpectralField, w: SpectralField, nl: NonlinearitySpec) -> SpectralField:
    v._same(w)
    return SpectralField(v.geometry, h_coeffs(v.coeffs, w.coeffs, v.geometry, nl))


def phases(geom: TorusGeometry, t: float) -> np.ndarray:
    return np.exp(-1j * geom.eigenvalues * t)


def linear_propagator(u: SpectralField, t: float) -> SpectralField:
    """Free Schrodinger group ``exp(t i Laplacian)``."""
    return SpectralField(u.geometry, phases(u.geometry, t) * u.coeffs)


def conserved_quantities(u: SpectralField, nl: NonlinearitySpec) -> tuple[float, float]:
    """Mass ``||u||^2`` and energy ``||grad u||^2 + int P(|u|^2)``."""
    geom = u.geometry
    c = u.coeffs
    mass = float(np.sum(np.abs(c) ** 2))
    kinetic = float(np.sum(geom.eigenvalues * np.abs(c) ** 2))
    if nl.is_zero:
        return mass, kinetic
    # P(|u|^2) has degree 2p+2; (p+2)N points integrate it exactly
    shape = padded_shape(geom, nl.degree + 2)
    x = synthesize(c, geom, shape)
    potential = float(np.mean(nl.P(np.abs(x) ** 2)).real) * geom.volume
    return mass, kinetic + potential


# --- paths -------------------------------------------------------------------


def trapezoid_weights(n_nodes: int, dt: float) -> np.ndarray:
    q = np.full(n_nodes, dt)
    q[0] = q[-1] = 0.5 * dt
    return q


@dataclass(frozen=True, eq=False)
class PotentialPath:
    """Fields on a uniform time grid ``t_j = t0 + j dt``.

    Between nodes the path is interpolated in the interaction picture:
    ``exp(-tA) v`` is interpolated and rotated back, with cubic Lagrange
    weights through four nodes (``"cubic"``, the default) or linear weights
    (``"phase"``). ``"linear"`` interpolates the coefficients directly.
    """

    geometry: TorusGeometry
    dt: float
    coeffs: np.ndarray
    t0: float = 0.0
    interpolation: str = "cubic"

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.ndim != self.geometry.dim + 1 or c.shape[1:] != self.geometry.shape:
            raise ShapeError(f"path coefficients must have shape (M+1, {self.geometry.shape}), got {c.shape}")
        if c.shape[0] < 2:
            raise ValueError("a path needs at least two nodes")
        if not self.dt > 0:
            raise ValueError("time step must be positive")
        if self.interpolation not in ("phase", "linear", "cubic"):
            raise ValueError(f"unknown interpolation rule {self.interpolation!r}")
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def constant(cls, u: SpectralField, T: float, n_steps: int) -> "PotentialPath":
        c = np.broadcast_to(u.coeffs, (n_steps + 1,) + u.geometry.shape)
        return cls(u.geometry, T / n_steps, np.array(c))

    @classmethod
    def free(cls, u: SpectralField, T: float, n_steps: int) -> "PotentialPath":
        """Free Schrodinger evolution of ``u`` sampled on the grid."""
        dt = T / n_steps
        t = np.arange(n_steps + 1) * dt
        lam = u.geometry.eigenvalues
        c = np.exp(-1j * lam[None] * t.reshape((-1,) + (1,) * u.geometry.dim)) * u.coeffs
        return cls(u.geometry, dt, c)

    @classmethod
    def zeros(cls, geom: TorusGeometry, T: float, n_steps: int) -> "PotentialPath":
        return cls(geom, T / n_steps, np.zeros((n_steps + 1,) + geom.shape, dtype=complex))

    def like(self, coeffs: np.ndarray) -> "PotentialPath":
        return PotentialPath(self.geometry, self.dt, coeffs, self.t0, self.interpolation)

    @property
    def n_nodes(self) -> int:
        return self.coeffs.shape[0]

    @property
    def n_steps(self) -> int:
        return self.n_nodes - 1

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_nodes)

    @property
    def T(self) -> float:
        return self.dt * self.n_steps

    def field(self, j: int) -> SpectralField:
        return SpectralField(self.geometry, self.coeffs[j])

    @property
    def final(self) -> SpectralField:
        return self.field(-1)

    def same_grid(self, other: "PotentialPath") -> bool:
        return (self.geometry == other.geometry and self.n_nodes == other.n_nodes
                and math.isclose(self.dt, other.dt, rel_tol=1e-12)
                and math.isclose(self.t0, other.t0, rel_tol=1e-12, abs_tol=1e-14))

    def check_grid(self, other: "PotentialPath") -> None:
        if not self.same_grid(other):
            raise ShapeError("paths live on different time grids")

    def __add__(self, other: "PotentialPath") -> "PotentialPath":
        self.check_grid(other)
        return self.like(self.coeffs + other.coeffs)

    def __sub__(self, other: "PotentialPath") -> "PotentialPath":
        self.check_grid(other)
        return self.like(self.coeffs - other.coeffs)

    def __mul__(self, a: complex) -> "PotentialPath":
        return self.like(a * self.coeffs)

    __rmul__ = __mul__

    def __neg__(self) -> "PotentialPath":
        return self.like(-self.coeffs)

    def low(self, split: FrequencySplit) -> "PotentialPath":
        return self.like(split.low(self.coeffs))

    def high(self, split: FrequencySplit) -> "PotentialPath":
        return self.like(split.high(self.coeffs))

    def norms(self, s: float = 0.0) -> np.ndarray:
        return hs_norm(self.coeffs, self.geometry, s)

    def c0_norm(self, s: float = 0.0) -> float:
        return float(np.max(self.norms(s)))

    def l2_norm(self, s: float = 0.0) -> float:
        q = trapezoid_weights(self.n_nodes, self.dt)
        return float(np.sqrt(np.sum(q * self.norms(s) ** 2)))

    def l1_norm(self, s: float = 0.0) -> float:
        q = trapezoid_weights(self.n_nodes, self.dt)
        return float(np.sum(q * self.norms(s)))

    def node_index(self, t: float) -> int:
        j = (t - self.t0) / self.dt
        k = int(round(j))
        if abs(j - k) > 1e-9 or not 0 <= k < self.n_nodes:
            raise ValueError(f"time {t} is not a node of the path grid")
        return k

    def interval_sampler(self, j: int) -> Callable[[float], np.ndarray]:
        """Interpolant on ``[t_j, t_{j+1}]`` as a function of the offset ``tau``."""
        return lambda tau: interpolate(self, j, tau, lambda t: phases(self.geometry, t))

    def at(self, t: float) -> SpectralField:
        j = min(max(int(math.floor((t - self.t0) / self.dt)), 0), self.n_steps - 1)
        return SpectralField(self.geometry, self.interval_sampler(j)(t - self.t0 - j * self.dt))


def interpolate(path: PotentialPath, j: int, tau: float,
                ph: Callable[[float], np.ndarray]) -> np.ndarray:
    """Value of ``path`` at ``t_j + tau``; ``ph(t)`` returns ``exp(tA)`` as a multiplier."""
    c0, c1 = path.coeffs[j], path.coeffs[j + 1]
    theta = tau / path.dt
    if path.interpolation == "linear":
        return (1 - theta) * c0 + theta * c1
    if path.interpolation == "cubic" and path.n_nodes >= 4:
        # Lagrange through four nodes, each rotated to t by the free flow
        lo = min(max(j - 1, 0), path.n_nodes - 4)
        x = theta + j - lo
        out = 0
        for a in range(4):
            wgt = 1.0
            for b in range(4):
                if b != a:
                    wgt *= (x - b) / (a - b)
            out = out + wgt * ph(tau - (lo + a - j) * path.dt) * path.coeffs[lo + a]
        return out
    return (1 - theta) * ph(tau) * c0 + theta * ph(tau - path.dt) * c1


# --- full nonlinear evolution ----------------------------------------------


def _n_steps(T: float, dt: float) -> int:
    if not dt > 0 or not T > 0:
        raise ValueError("T and dt must be positive")
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * T:
        raise ValueError(f"T/dt = {T / dt} is not an integer")
    return n


def evolve_nls(u0: SpectralField, nl: NonlinearitySpec, T: float, dt: float, substeps: int = 1) -> PotentialPath:
    """Strang split-step integration, sampled every ``dt``.

    The nonlinear substep is the exact phase rotation
    ``u -> u exp(-i P'(|u|^2) tau)`` on the native collocation grid. With
    ``substeps > 1`` the internal step is ``dt / substeps``.
    """
    geom = u0.geometry
    n = _n_steps(T, dt)
    h = dt / substeps
    half = phases(geom, h / 2)
    out = np.empty((n + 1,) + geom.shape, dtype=complex)
    c = u0.coeffs.copy()
    out[0] = c
    step = 0
    for j in range(1, n + 1):
        for _ in range(substeps):
            step += 1
            c = half * c
            if not nl.is_zero:
                u = synthesize(c, geom)
                sup = float(np.max(np.abs(u)))
                if not np.isfinite(sup) or sup > BLOWUP_THRESHOLD:
                    raise BlowUpError(step, sup)
                u = u * np.exp(-1j * nl.dP(np.abs(u) ** 2) * h)
                c = analyze(u, geom)
            c = half * c
        out[j] = c
    return PotentialPath(geom, dt, out)


def evolve_galerkin(u0: SpectralField, nl: NonlinearitySpec, T: float, dt: float, substeps: int = 1) -> PotentialPath:
    """Lawson RK4 for the dealiased Galerkin system ``u_t = A u - i P_N f(u)``.

    Fourth order in time and free of aliasing; used as the reference
    trajectory when the high band must be resolved to near roundoff.
    """
    geom = u0.geometry
    n = _n_steps(T, dt)
    h = dt / substeps
    E_half = phases(geom, h / 2)
    E_full = E_half * E_half

    def rhs(c):
        return -1j * f_coeffs(c, geom, nl)

    out = np.empty((n + 1,) + geom.shape, dtype=complex)
    y = u0.coeffs.copy()
    out[0] = y
    for j in range(1, n + 1):
        for _ in range(substeps):
            k1 = rhs(y)
            k2 = rhs(E_half * (y + 0.5 * h * k1))
            k3 = rhs(E_half * y + 0.5 * h * k2)
            k4 = rhs(E_full * y + h * E_half * k3)
            y = E_full * y + (h / 6) * (E_full * k1 + 2 * E_half * (k2 + k3) + k4)
        sup = float(np.max(np.abs(y)))
        if not np.isfinite(sup) or sup > BLOWUP_THRESHOLD:
            raise BlowUpError(j * substeps, sup)
        out[j] = y
    return PotentialPath(geom, dt, out)


# --- linearized evolution (Lawson RK4) ---------------------------------------


class LinearizedFlow:
    """High-band linearized flow ``w_t = A w + Q_n[-i Df(v(t)) w + h(t)]`` along a fixed path.

    Lawson (integrating-factor) RK4: in the interaction picture the bounded
    remainder is integrated by classical RK4 while ``exp(tA)`` is applied
    exactly. The multipliers of ``Df(v)`` at every stage time are cached, so
    repeated solves along the same ``v`` (Gramian columns, Picard iterates)
    only pay for the transforms of ``w``.
    """

    def __init__(self, split: FrequencySplit, v: PotentialPath, nl: NonlinearitySpec, substeps: int = 1):
        if v.geometry != split.geometry:
            raise ShapeError("potential path and split geometries differ")
        self.split = split
        self.v = v
        self.nl = nl
        self.substeps = int(substeps)
        self.geometry = split.geometry
        self.h = v.dt / self.substeps
        self.E_half = phases(self.geometry, self.h / 2)
        self.E_full = self.E_half * self.E_half
        self.mask = split.high_mask.astype(float)
        self.active = not nl.is_zero
        self._kernels: dict[tuple[int, int], tuple] = {}
        self._phase: dict[float, np.ndarray] = {}

    def _ph(self, tau: float) -> np.ndarray:
        key = round(tau / self.h, 9)
        if key not in self._phase:
            self._phase[key] = phases(self.geometry, tau)
        return self._phase[key]

    def path_value(self, path: PotentialPath, j: int, tau: float) -> np.ndarray:
        return interpolate(path, j, tau, self._ph)

    def kernel(self, j: int, stage: int):
        """Df multipliers at ``t_j + stage * h / 2`` (stage counts half substeps)."""
        if stage == 2 * self.substeps and j + 1 < self.v.n_steps:
            j, stage = j + 1, 0
        key = (j, stage)
        k = self._kernels.get(key)
        if k is None:
            k = df_kernel(self.path_value(self.v, j, stage * self.h / 2), self.geometry, self.nl)
            self._kernels[key] = k
        return k

    def nodes(self, w0: np.ndarray, source: PotentialPath | Callable | None = None,
              start: int = 0) -> Iterator[tuple[int, np.ndarray]]:
        """Yield ``(j, w(t_j))``; ``w0`` may carry leading batch axes.

        ``source`` is either a path (interpolated between nodes) or a callable
        ``source(j, stage)`` returning the forcing at ``t_j + stage * h / 2``.
        """
        if isinstance(source, PotentialPath):
            self.v.check_grid(source)
            path = source
            source = lambda j, stage: self.path_value(path, j, stage * self.h / 2)
        geom, nl, h = self.geometry, self.nl, self.h
        E_half, E_full, mask = self.E_half, self.E_full, self.mask
        y = np.array(w0, dtype=complex)
        yield start, y.copy()
        for j in range(start, self.v.n_steps):
            for sub in range(self.substeps):
                def rhs(stage, z):
                    out = -1j * apply_kernel(self.kernel(j, stage), z, geom, nl) if self.active else 0
                    if source is not None:
                        out = out + source(j, stage)
                    return mask * out

                st = 2 * sub
                k1 = rhs(st, y)
                a = E_half * (y + 0.5 * h * k1)
                k2 = rhs(st + 1, a)
                b = E_half * y + 0.5 * h * k2
                k3 = rhs(st + 1, b)
                c = E_full * y + h * E_half * k3
                k4 = rhs(st + 2, c)
                y = E_full * y + (h / 6) * (E_full * k1 + 2 * E_half * (k2 + k3) + k4)
            yield j + 1, y

    def trajectory(self, w0: np.ndarray, source: PotentialPath | Callable | None = None, start: int = 0) -> np.ndarray:
        """Stacked node values, shape ``(n_nodes - start,) + w0.shape``."""
        w0 = np.asarray(w0, dtype=complex)
        out = np.empty((self.v.n_nodes - start,) + w0.shape, dtype=complex)
        for j, y in self.nodes(w0, source, start):
            out[j - start] = y
        return out

    def solve(self, w_s: np.ndarray, source: PotentialPath | Callable | None = None, start: int = 0) -> PotentialPath:
        _check_high(self.split, w_s)
        traj = self.trajectory(w_s, source, start)
        v = self.v
        return PotentialPath(v.geometry, v.dt, traj, v.t0 + start * v.dt, v.interpolation)


def _check_high(split: FrequencySplit, c: np.ndarray) -> None:
    if np.any(c[..., split.low_mask] != 0):
        raise ValueError("initial state must lie in the high band Q_n")


def evolve_linearized(split: FrequencySplit, v: PotentialPath, w_s: SpectralField, s: float,
                      nl: NonlinearitySpec, substeps: int = 1) -> PotentialPath:
    """``S_n(v)(t, s) w_s`` for ``t`` in ``[s, T]`` on the grid of ``v``."""
    return evolve_with_source(split, v, w_s, None, nl, s=s, substeps=substeps)


def evolve_with_source(split: FrequencySplit, v: PotentialPath, w_s: SpectralField,
                       h: PotentialPath | None, nl: NonlinearitySpec, s: float | None = None,
                       substeps: int = 1) -> PotentialPath:
    """Duhamel solution of ``w_t = (A + Q_n DF(v)) w + Q_n h``, ``w(s) = w_s``."""
    start = v.node_index(v.t0 if s is None else s)
    return LinearizedFlow(split, v, nl, substeps).solve(w_s.coeffs, h, start)


# --- damped evolution --------------------------------------------------------


@dataclass(frozen=True)
class DampingSpec:
    """Damping coefficient ``a = amplitude * b`` for a smooth window cutoff ``b``."""

    window: ObservationWindow
    amplitude: float = 1.0

    @property
    def geometry(self) -> TorusGeometry:
        return self.window.geometry

    def samples(self, shape=None) -> np.ndarray:
        if self.window.is_empty:
            return np.zeros(tuple(shape or self.geometry.shape))
        return self.amplitude * self.window.samples(shape)


def damping_operator(damping: DampingSpec) -> np.ndarray:
    """Dense matrix of ``B = a (1 - Laplacian)^{-1} a`` on flattened coefficients."""
    geom = damping.geometry
    n = geom.n_modes
    shape = padded_shape(geom, 2)
    a = damping.samples(shape)
    eye = np.eye(n, dtype=complex).reshape((n,) + geom.shape)
    Ma = analyze(a * synthesize(eye, geom, shape), geom).reshape(n, n).T
    K = 1.0 / (1.0 + geom.eigenvalues.ravel())
    return Ma @ (K[:, None] * Ma)


@dataclass(frozen=True, eq=False)
class DampedRun:
    path: PotentialPath
    h1_norms: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return self.path.times


def evolve_damped(u0: SpectralField, nl: NonlinearitySpec, damping: DampingSpec, T: float, dt: float,
                  record_every: int = 1) -> DampedRun:
    """RK4 for ``u_t = (i - B)^{-1} (f(u) - Laplacian u)``.

    ``(i - B)`` is LU-factored once. The H^1 norm is recorded every step; the
    path keeps every ``record_every``-th state.
    """
    geom = u0.geometry
    if damping.geometry != geom:
        raise ShapeError("damping and state geometries differ")
    n = _n_steps(T, dt)
    if n % record_every:
        raise ValueError("record_every must divide the number of steps")
    B = damping_operator(damping)
    M = 1j * np.eye(geom.n_modes) - B
    lu = scipy.linalg.lu_factor(M)
    if np.min(np.abs(np.diag(lu[0]))) < 1e-12 * np.max(np.abs(np.diag(lu[0]))):
        raise ConditioningError("(i - B) is numerically singular")
    lam = geom.eigenvalues.ravel()
    shp = geom.shape

    def rhs(c):
        r = f_coeffs(c.reshape(shp), geom, nl).ravel() + lam * c
        return scipy.linalg.lu_solve(lu, r)

    c = u0.coeffs.ravel().astype(complex)
    norms = np.empty(n + 1)
    states = [c.reshape(shp).copy()]
    w1 = 1.0 + lam
    norms[0] = math.sqrt(float(np.sum(w1 * np.abs(c) ** 2)))
    for j in range(1, n + 1):
        k1 = rhs(c)
        k2 = rhs(c + 0.5 * dt * k1)
        k3 = rhs(c + 0.5 * dt * k2)
        k4 = rhs(c + dt * k3)
        c = c + (dt / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        nrm = math.sqrt(float(np.sum(w1 * np.abs(c) ** 2)))
        if not np.isfinite(nrm) or nrm > BLOWUP_THRESHOLD:
            raise BlowUpError(j, nrm)
        norms[j] = nrm
        if j % record_every == 0:
            states.append(c.reshape(shp).copy())
    return DampedRun(PotentialPath(geom, dt * record_every, np.array(states)), norms)
