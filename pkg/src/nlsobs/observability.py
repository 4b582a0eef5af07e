"""Observation operators, Gramians and the observed Cauchy solver.

Every operator on the high band is real-linear (``Df`` contains a
``conj(w)`` term), so it is represented on real coordinates: the real and
imaginary parts of each high-band coefficient, scaled by
``(1 + lambda_k)^{s/2}``. Euclidean products of these coordinates are
H^s inner products of the real structure, and adjoints are transposes.
Observed traces are flattened the same way over all modes, with an extra
``sqrt(q_j)`` factor from the trapezoid weights, so that Euclidean products
realize the ``L^2([0, T], H^s)`` pairing.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import LinearizedFlow, NonlinearitySpec, PotentialPath, trapezoid_weights
from .spectral import (
    FrequencySplit,
    ObservationWindow,
    ShapeError,
    SobolevScale,
    SpectralField,
    TorusGeometry,
    observe_coeffs,
)

DEFAULT_RCOND = 1e-10


class ObservabilityError(np.linalg.LinAlgError):
    """The Gramian is (numerically) singular: GCC fails or the cutoff is too low."""

    def __init__(self, lambda_min: float, lambda_max: float, rcond: float):
        super().__init__(f"observability fails: lambda_min = {lambda_min:.3e} "
                         f"<= {rcond:.1e} * lambda_max = {rcond * lambda_max:.3e}")
        self.lambda_min = lambda_min
        self.lambda_max = lambda_max


def _s(scale) -> float:
    return scale.s if isinstance(scale, SobolevScale) else float(scale)


# --- real coordinates ---------------------------------------------------------


class HighBandCoordinates:
    """Real coordinates on ``Q_n H^s``: ``(Re, Im)`` pairs per high mode, in rank order."""

    def __init__(self, split: FrequencySplit, s: float):
        self.split = split
        self.geometry = split.geometry
        self.s = _s(s)
        self.positions = split.high_modes
        self.weight = (1.0 + self.geometry.eigenvalues.ravel()[self.positions]) ** (self.s / 2)

    @property
    def dim(self) -> int:
        return 2 * len(self.positions)

    def to_real(self, c: np.ndarray) -> np.ndarray:
        lead = c.shape[: c.ndim - self.geometry.dim]
        z = c.reshape(lead + (-1,))[..., self.positions] * self.weight
        return np.stack([z.real, z.imag], axis=-1).reshape(lead + (self.dim,))

    def from_real(self, x: np.ndarray) -> np.ndarray:
        lead = x.shape[:-1]
        pairs = x.reshape(lead + (-1, 2))
        z = (pairs[..., 0] + 1j * pairs[..., 1]) / self.weight
        out = np.zeros(lead + (self.geometry.n_modes,), dtype=complex)
        out[..., self.positions] = z
        return out.reshape(lead + self.geometry.shape)

    def basis(self) -> np.ndarray:
        """Coefficient arrays of the real basis vectors, shape ``(2m,) + grid``."""
        return self.from_real(np.eye(self.dim))


def field_coords(c: np.ndarray, geom: TorusGeometry, s: float) -> np.ndarray:
    """Weighted real coordinates of full fields (all modes), shape ``lead + (2N,)``."""
    lead = c.shape[: c.ndim - geom.dim]
    w = ((1.0 + geom.eigenvalues) ** (s / 2)).ravel()
    z = c.reshape(lead + (-1,)) * w
    return np.stack([z.real, z.imag], axis=-1).reshape(lead + (2 * geom.n_modes,))


def field_from_coords(x: np.ndarray, geom: TorusGeometry, s: float) -> np.ndarray:
    lead = x.shape[:-1]
    w = ((1.0 + geom.eigenvalues) ** (s / 2)).ravel()
    pairs = x.reshape(lead + (-1, 2))
    z = (pairs[..., 0] + 1j * pairs[..., 1]) / w
    return z.reshape(lead + geom.shape)


# --- traces -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ObservedTrace:
    """Observation samples on the time grid, with trapezoid quadrature weights."""

    geometry: TorusGeometry
    dt: float
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.shape[1:] != self.geometry.shape or c.shape[0] < 2:
            raise ShapeError(f"trace must have shape (M+1, {self.geometry.shape}), got {c.shape}")
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def of(cls, path: PotentialPath, window: ObservationWindow) -> "ObservedTrace":
        """``C w`` sampled along a path."""
        if path.geometry != window.geometry:
            raise ShapeError("window and path geometries differ")
        return cls(path.geometry, path.dt, observe_coeffs(path.coeffs, window))

    @classmethod
    def zeros_like(cls, path: PotentialPath) -> "ObservedTrace":
        return cls(path.geometry, path.dt, np.zeros_like(path.coeffs))

    @property
    def n_nodes(self) -> int:
        return self.coeffs.shape[0]

    @property
    def T(self) -> float:
        return self.dt * (self.n_nodes - 1)

    @property
    def weights(self) -> np.ndarray:
        return trapezoid_weights(self.n_nodes, self.dt)

    def vector(self, s: float) -> np.ndarray:
        x = field_coords(self.coeffs, self.geometry, _s(s))
        return (np.sqrt(self.weights)[:, None] * x).ravel()

    @classmethod
    def from_vector(cls, y: np.ndarray, geom: TorusGeometry, dt: float, s: float) -> "ObservedTrace":
        y = y.reshape(-1, 2 * geom.n_modes)
        q = trapezoid_weights(y.shape[0], dt)
        return cls(geom, dt, field_from_coords(y / np.sqrt(q)[:, None], geom, _s(s)))

    def norm(self, s: float) -> float:
        """``L^2([0, T], H^s)`` norm by trapezoid quadrature."""
        return float(np.linalg.norm(self.vector(s)))

    def __add__(self, other: "ObservedTrace") -> "ObservedTrace":
        return ObservedTrace(self.geometry, self.dt, self.coeffs + other.coeffs)

    def __sub__(self, other: "ObservedTrace") -> "ObservedTrace":
        return ObservedTrace(self.geometry, self.dt, self.coeffs - other.coeffs)

    def __mul__(self, a: float) -> "ObservedTrace":
        return ObservedTrace(self.geometry, self.dt, a * self.coeffs)

    __rmul__ = __mul__


# --- observation operator and Gramian -------------------------------------------


@dataclass(eq=False)
class ObservationOperator:
    """``O = C S_n(v)(., 0)`` from high-band real coordinates to weighted trace coordinates.

    ``matrix`` has shape ``(n_nodes * 2N, 2m)`` and is ``None`` when the
    operator was assembled in streaming mode (Gramian only).
    """

    split: FrequencySplit
    v: PotentialPath
    window: ObservationWindow
    s: float
    nl: NonlinearitySpec
    flow: LinearizedFlow
    coords: HighBandCoordinates
    gram: np.ndarray
    matrix: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return (self.v.n_nodes * 2 * self.split.geometry.n_modes, self.coords.dim)

    def trace_of(self, path: PotentialPath) -> ObservedTrace:
        return ObservedTrace.of(path, self.window)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Matrix-free ``O x``: evolve, observe, flatten."""
        traj = self.flow.trajectory(self.coords.from_real(x))
        path = self.v.like(traj)
        return ObservedTrace.of(path, self.window).vector(self.s)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        if self.matrix is None:
            raise ValueError("operator was assembled without storing its matrix")
        return self.matrix.T @ y

    def forward(self, x: np.ndarray) -> np.ndarray:
        if self.matrix is None:
            return self.apply(x)
        return self.matrix @ x


def assemble_observation(split: FrequencySplit, v: PotentialPath, window: ObservationWindow,
                         s: SobolevScale | float, nl: NonlinearitySpec, store_matrix: bool = True,
                         substeps: int = 1) -> ObservationOperator:
    """Evolve every real basis vector of ``Q_n H^s`` along ``v`` and record its observed trace.

    The Gramian ``O^T O`` is accumulated node by node, so the full matrix is
    only kept when ``store_matrix`` is set.
    """
    s = _s(s)
    geom = split.geometry
    if window.geometry != geom or v.geometry != geom:
        raise ShapeError("split, window and path must share one geometry")
    if split.n >= geom.n_modes:
        raise ValueError("the high band is empty")
    coords = HighBandCoordinates(split, s)
    flow = LinearizedFlow(split, v, nl, substeps)
    q = trapezoid_weights(v.n_nodes, v.dt)
    m2 = coords.dim
    rows = 2 * geom.n_modes
    gram = np.zeros((m2, m2))
    matrix = np.empty((v.n_nodes, rows, m2)) if store_matrix else None
    for j, y in flow.nodes(coords.basis()):
        Y = field_coords(observe_coeffs(y, window), geom, s)  # (2m, 2N)
        gram += q[j] * (Y @ Y.T)
        if matrix is not None:
            matrix[j] = math.sqrt(q[j]) * Y.T
    gram = 0.5 * (gram + gram.T)
    return ObservationOperator(split, v, window, s, nl, flow, coords, gram,
                               None if matrix is None else matrix.reshape(-1, m2))


@dataclass(frozen=True, eq=False)
class GramianOperator:
    """Symmetric PSD ``G = O^T O`` with its eigendecomposition."""

    matrix: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_matrix(cls, G: np.ndarray, meta: dict | None = None) -> "GramianOperator":
        G = np.asarray(G, dtype=float)
        if G.ndim != 2 or G.shape[0] != G.shape[1]:
            raise ShapeError("Gramian must be square")
        G = 0.5 * (G + G.T)
        lam, vec = np.linalg.eigh(G)
        return cls(G, lam, vec, dict(meta or {}))

    @property
    def lambda_min(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[-1])

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


def assemble_gramian(O: ObservationOperator | np.ndarray) -> GramianOperator:
    """``G = O^T O`` in the weighted real coordinates."""
    if isinstance(O, ObservationOperator):
        G = O.matrix.T @ O.matrix if O.matrix is not None else O.gram
        meta = {"n": O.split.n, "s": O.s, "T": O.v.T, "dt": O.v.dt}
        return GramianOperator.from_matrix(G, meta)
    O = np.asarray(O, dtype=float)
    return GramianOperator.from_matrix(O.T @ O)


def gramian(split, v, window, s, nl, substeps: int = 1) -> GramianOperator:
    """Streaming Gramian assembly (the observation matrix is never stored)."""
    return assemble_gramian(assemble_observation(split, v, window, s, nl, store_matrix=False, substeps=substeps))


@dataclass(frozen=True, eq=False)
class GramianInverse:
    matrix: np.ndarray
    lambda_min: float
    lambda_max: float

    def __matmul__(self, x):
        return self.matrix @ x


def gramian_inverse(G: GramianOperator, rcond: float = DEFAULT_RCOND) -> GramianInverse:
    """Inverse through the eigendecomposition; refuses near-singular Gramians."""
    lo, hi = G.lambda_min, G.lambda_max
    if not hi > 0 or lo <= rcond * hi:
        raise ObservabilityError(lo, hi, rcond)
    V = G.eigenvectors
    inv = (V / G.eigenvalues) @ V.T
    return GramianInverse(0.5 * (inv + inv.T), lo, hi)


def observability_constant(G: GramianOperator) -> float:
    """``C_obs = lambda_min^{-1/2}``: the best constant in ``|w0|^2 <= C_obs^2 <G w0, w0>``."""
    if G.lambda_min <= 0:
        raise ObservabilityError(G.lambda_min, G.lambda_max, 0.0)
    return 1.0 / math.sqrt(G.lambda_min)


def apply_projector(trace: ObservedTrace | np.ndarray, O: ObservationOperator, Ginv: GramianInverse):
    """Orthogonal projection onto ``range(O)``: ``O G^{-1} O^T``."""
    if isinstance(trace, ObservedTrace):
        y = trace.vector(O.s)
        if y.shape[0] != O.shape[0]:
            raise ShapeError("trace and observation operator sizes differ")
        py = O.forward(Ginv @ O.adjoint(y))
        return ObservedTrace.from_vector(py, trace.geometry, trace.dt, O.s)
    y = np.asarray(trace)
    if y.shape[0] != O.shape[0]:
        raise ShapeError("trace and observation operator sizes differ")
    return O.forward(Ginv @ O.adjoint(y))


# --- observed Cauchy problem ----------------------------------------------------


class ObservedCauchySolver:
    """``F_n(v)(g, h)``: the high-band solution whose projected observation matches ``g``.

    ``w(t) = S_n(v)(t, 0) w0 + I_v(t) Q_n h`` with
    ``w0 = G^{-1} O^T [g - C I_v Q_n h]``.
    """

    def __init__(self, O: ObservationOperator, rcond: float = DEFAULT_RCOND):
        if O.matrix is None:
            raise ValueError("the observed Cauchy solver needs the stored observation matrix")
        self.O = O
        self.G = assemble_gramian(O)
        self.Ginv = gramian_inverse(self.G, rcond)
        self.c_obs = observability_constant(self.G)

    @classmethod
    def build(cls, split, v, window, s, nl, rcond: float = DEFAULT_RCOND, substeps: int = 1):
        return cls(assemble_observation(split, v, window, s, nl, store_matrix=True, substeps=substeps), rcond)

    @property
    def split(self) -> FrequencySplit:
        return self.O.split

    @property
    def s(self) -> float:
        return self.O.s

    def initial_state(self, g: ObservedTrace, h=None) -> np.ndarray:
        y = g.vector(self.s)
        if y.shape[0] != self.O.shape[0]:
            raise ShapeError("trace grid does not match the potential path")
        if h is not None:
            z = self.O.flow.trajectory(np.zeros(self.split.geometry.shape, dtype=complex), h)
            y = y - ObservedTrace.of(self.O.v.like(z), self.O.window).vector(self.s)
        x0 = self.Ginv @ (self.O.matrix.T @ y)
        return self.O.coords.from_real(x0)

    def solve(self, g: ObservedTrace, h=None) -> tuple[SpectralField, PotentialPath]:
        w0 = self.initial_state(g, h)
        traj = self.O.flow.solve(w0, h)
        return SpectralField(self.split.geometry, w0), traj

    def project(self, trace: ObservedTrace) -> ObservedTrace:
        return apply_projector(trace, self.O, self.Ginv)

    def estimate_ratio(self, g: ObservedTrace, h: PotentialPath | None = None) -> float:
        """``||F(g, h)||_{C0 H^s} / (||Pi g|| + ||Q_n h||_{L1 H^s})``."""
        _, w = self.solve(g, h)
        denom = self.project(g).norm(self.s)
        if h is not None:
            denom += h.high(self.split).l1_norm(self.s)
        return w.c0_norm(self.s) / denom


def solve_observed_cauchy(split: FrequencySplit, v: PotentialPath, window: ObservationWindow,
                          g: ObservedTrace, h: PotentialPath | None, nl: NonlinearitySpec,
                          s: SobolevScale | float, rcond: float = DEFAULT_RCOND):
    """One-shot ``F_n(v)(g, h)``; returns ``(w0, trajectory)``."""
    return ObservedCauchySolver.build(split, v, window, s, nl, rcond).solve(g, h)


# --- Gramian cache ---------------------------------------------------------------

CACHE_ENV = "NLSOBS_CACHE_DIR"
_MAGIC = b"NLSOBS-GRAMIAN 1\n"


def canonical_text(params: dict) -> str:
    return json.dumps(params, sort_keys=True, separators=(",", ":"), allow_nan=False)


def path_digest(path: PotentialPath) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(path.coeffs, dtype="<c16").tobytes())
    h.update(struct.pack("<dd", path.dt, path.t0))
    h.update(path.interpolation.encode())
    return h.hexdigest()


def gramian_params(split: FrequencySplit, v: PotentialPath, window: ObservationWindow, s: float,
                   nl: NonlinearitySpec) -> dict:
    geom = split.geometry
    return {
        "sizes": list(geom.sizes),
        "lengths": [float(x).hex() for x in geom.lengths],
        "n": split.n,
        "window": window.to_dict(),
        "potential": path_digest(v),
        "s": float(s).hex(),
        "T": float(v.T).hex(),
        "dt": float(v.dt).hex(),
        "nonlinearity": [float(c).hex() for c in nl.coeffs] + [float(nl.constant).hex()],
    }


def cache_key(params: dict) -> str:
    return hashlib.sha256(canonical_text(params).encode()).hexdigest()


def write_gramian_cache(path: str | os.PathLike, params: dict, G: np.ndarray) -> None:
    """Header (magic, canonical params, shape), then row-major little-endian float64."""
    G = np.ascontiguousarray(G, dtype="<f8")
    header = _MAGIC + canonical_text(params).encode() + b"\n" + f"{G.shape[0]} {G.shape[1]}\n".encode()
    Path(path).write_bytes(header + G.tobytes(order="C"))


def read_gramian_cache(path: str | os.PathLike) -> tuple[dict, np.ndarray]:
    data = Path(path).read_bytes()
    if not data.startswith(_MAGIC):
        raise ValueError(f"{path} is not a Gramian cache file")
    rest = data[len(_MAGIC):]
    text, rest = rest.split(b"\n", 1)
    dims, body = rest.split(b"\n", 1)
    r, c = (int(x) for x in dims.split())
    G = np.frombuffer(body, dtype="<f8", count=r * c).reshape(r, c)
    return json.loads(text), G.astype(float)


def cached_gramian(split, v, window, s, nl, cache_dir: str | os.PathLike | None = None) -> GramianOperator:
    """Streaming Gramian, read from / written to ``cache_dir`` (or ``$NLSOBS_CACHE_DIR``)."""
    cache_dir = cache_dir or os.environ.get(CACHE_ENV)
    params = gramian_params(split, v, window, _s(s), nl)
    if cache_dir:
        f = Path(cache_dir) / f"{cache_key(params)}.gram"
        if f.exists():
            stored, G = read_gramian_cache(f)
            if stored == params:
                return GramianOperator.from_matrix(G)
    G = gramian(split, v, window, s, nl)
    if cache_dir:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        write_gramian_cache(f, params, G.matrix)
    return G
