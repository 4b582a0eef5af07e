"""High-frequency reconstruction by Picard iteration.

Given a low-frequency path ``v`` and an observation ``g``, the high band
``w`` solves

    w_t = A w + Q_n F(v + w) + Q_n h,      Pi C w = Pi g,

and is the fixed point of ``Phi(w) = F_n(v)(g, F(v) + H(v, w) + h)`` where
``F = -i f`` and ``H`` is the Taylor remainder of ``F`` around ``v``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dynamics import (
    LinearizedFlow,
    NonlinearitySpec,
    PotentialPath,
    f_coeffs,
    df_coeffs,
    h_coeffs,
)
from .observability import ObservedCauchySolver, ObservedTrace
from .spectral import FrequencySplit, ObservationWindow, ShapeError, smoothstep


def default_gate(x: float) -> float:
    """Smooth cutoff: 1 on ``|x| <= 1/2``, 0 for ``|x| >= 1``, monotone in between."""
    return float(smoothstep(2.0 - 2.0 * abs(x)))


def suggested_radius(c_solver: float, lipschitz: float, T: float, outer_radius: float) -> float:
    """Ball radius ``min{1/(4 C L), 1/(2 T L), R0}`` for which the Picard map contracts."""
    if lipschitz <= 0:
        return outer_radius
    return min(1.0 / (4 * c_solver * lipschitz), 1.0 / (2 * T * lipschitz), outer_radius)


@dataclass(frozen=True)
class ReconstructionConfig:
    """Thresholds for the reconstruction map.

    ``eta`` bounds the admissible observation norm, ``radius`` the high band
    (in ``C^0 H^s``) and ``outer_radius`` the potential path.
    """

    eta: float = 1.0
    radius: float = 0.5
    outer_radius: float = 1.0
    s: float = 1.0
    max_iter: int = 100
    tol: float = 1e-10
    gate: Callable[[float], float] = default_gate
    rcond: float = 1e-10
    substeps: int = 1

    def __post_init__(self):
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if not 0 < self.radius <= self.outer_radius:
            raise ValueError("need 0 < radius <= outer_radius")
        if self.max_iter < 1 or not self.tol > 0:
            raise ValueError("max_iter >= 1 and tol > 0 required")


@dataclass
class FixedPointReport:
    iterations: int = 0
    increments: list[float] = field(default_factory=list)
    contraction: list[float] = field(default_factory=list)
    converged: bool = False
    duhamel_residual: float = math.nan
    observation_residual: float = math.nan
    max_norm: float = 0.0

    @property
    def kappa(self) -> float:
        """Largest empirical contraction factor (nan before two increments exist)."""
        return max(self.contraction) if self.contraction else math.nan

    def record(self, increment: float) -> None:
        if self.increments and self.increments[-1] > 0:
            self.contraction.append(increment / self.increments[-1])
        self.increments.append(increment)
        self.iterations += 1


class ContractionError(RuntimeError):
    def __init__(self, report: FixedPointReport):
        last = report.increments[-1] if report.increments else math.nan
        super().__init__(f"Picard iteration did not converge in {report.iterations} iterations "
                         f"(last increment {last:.3e}, kappa {report.kappa:.3f}); "
                         "increase n or shrink the radius")
        self.report = report


def nonlinear_source(v: PotentialPath, w: PotentialPath, nl: NonlinearitySpec,
                     h: PotentialPath | None = None) -> PotentialPath:
    """``F(v) + H(v, w) + h`` on the nodes, with ``F = -i f``."""
    geom = v.geometry
    src = -1j * (f_coeffs(v.coeffs, geom, nl) + h_coeffs(v.coeffs, w.coeffs, geom, nl))
    if h is not None:
        src = src + h.coeffs
    return v.like(src)


class StageSource:
    """``F(v(t)) + H(v(t), w(t)) + h(t)`` evaluated at integrator stage times.

    ``v`` and ``w`` are interpolated and the nonlinearity is formed at each
    stage, so the fast combination frequencies of the products are kept; the
    ``F(v)`` part is cached across Picard iterates.
    """

    def __init__(self, flow: LinearizedFlow, nl: NonlinearitySpec, w: PotentialPath | None,
                 h: PotentialPath | None = None, cache: dict | None = None):
        self.flow = flow
        self.nl = nl
        self.w = w
        self.h = h
        self.cache = {} if cache is None else cache

    def _v_part(self, j: int, stage: int):
        key = (j, stage)
        hit = self.cache.get(key)
        if hit is None:
            vc = self.flow.path_value(self.flow.v, j, stage * self.flow.h / 2)
            hit = (vc, -1j * f_coeffs(vc, self.flow.geometry, self.nl))
            self.cache[key] = hit
        return hit

    def __call__(self, j: int, stage: int) -> np.ndarray:
        if stage == 2 * self.flow.substeps and j + 1 < self.flow.v.n_steps:
            j, stage = j + 1, 0
        tau = stage * self.flow.h / 2
        vc, fv = self._v_part(j, stage)
        out = fv
        if self.w is not None:
            wc = self.flow.path_value(self.w, j, tau)
            out = out - 1j * h_coeffs(vc, wc, self.flow.geometry, self.nl)
        if self.h is not None:
            out = out + self.flow.path_value(self.h, j, tau)
        return out


class Reconstructor:
    """Picard solver for one fixed ``(split, v, window)``; the Gramian is built once."""

    def __init__(self, split: FrequencySplit, v: PotentialPath, window: ObservationWindow,
                 nl: NonlinearitySpec, cfg: ReconstructionConfig = ReconstructionConfig(),
                 solver: ObservedCauchySolver | None = None):
        self.split = split
        self.v = v
        self.window = window
        self.nl = nl
        self.cfg = cfg
        self.solver = solver or ObservedCauchySolver.build(split, v, window, cfg.s, nl, cfg.rcond,
                                                                substeps=cfg.substeps)
        self._fv_cache: dict = {}

    def source(self, w: PotentialPath, h: PotentialPath | None = None) -> StageSource:
        self.v.check_grid(w)
        if h is not None:
            self.v.check_grid(h)
        return StageSource(self.solver.O.flow, self.nl, w, h, self._fv_cache)

    def phi(self, w: PotentialPath, g: ObservedTrace, h: PotentialPath | None = None) -> PotentialPath:
        return self.solver.solve(g, self.source(w, h))[1]

    def solve(self, g: ObservedTrace, h: PotentialPath | None = None,
              start: PotentialPath | None = None) -> tuple[PotentialPath, FixedPointReport]:
        cfg = self.cfg
        s = cfg.s
        w = start.high(self.split) if start is not None else self.v.like(np.zeros_like(self.v.coeffs))
        report = FixedPointReport()
        for _ in range(cfg.max_iter):
            new = self.phi(w, g, h)
            inc = (new - w).c0_norm(s)
            w = new
            report.record(inc)
            report.max_norm = max(report.max_norm, w.c0_norm(s))
            if not math.isfinite(inc):
                break
            if inc <= cfg.tol:
                report.converged = True
                break
        if not report.converged:
            raise ContractionError(report)
        report.duhamel_residual, report.observation_residual = self.residuals(w, g, h)
        return w, report

    def residuals(self, w: PotentialPath, g: ObservedTrace, h: PotentialPath | None = None) -> tuple[float, float]:
        """Duhamel and projected-observation residuals of a candidate fixed point."""
        s = self.cfg.s
        again = self.solver.O.flow.solve(w.coeffs[0], self.source(w, h))
        duhamel = (again - w).c0_norm(s)
        miss = ObservedTrace.of(w, self.window) - g
        obs = self.solver.project(miss).norm(s)
        return duhamel, obs


def phi_map(split, v, window, g, h, w, nl, cfg: ReconstructionConfig = ReconstructionConfig()) -> PotentialPath:
    """One application of ``Phi``."""
    return Reconstructor(split, v, window, nl, cfg).phi(w, g, h)


def fixed_point_solve(split, v, window, g, h, nl, cfg: ReconstructionConfig = ReconstructionConfig(),
                      start: PotentialPath | None = None):
    """Picard iteration of ``Phi`` from ``start`` (default 0); returns ``(w, report)``."""
    return Reconstructor(split, v, window, nl, cfg).solve(g, h, start)


def gate_value(v_low: PotentialPath, window: ObservationWindow, cfg: ReconstructionConfig) -> tuple[float, float]:
    """``(||C v||_{L^2 H^s}, chi(||C v|| / eta))``."""
    nrm = ObservedTrace.of(v_low, window).norm(cfg.s)
    return nrm, cfg.gate(nrm / cfg.eta)


def reconstruct(split, v_low: PotentialPath, h1: PotentialPath | None, h2: PotentialPath | None,
                window: ObservationWindow, nl: NonlinearitySpec,
                cfg: ReconstructionConfig = ReconstructionConfig()):
    """High band of a solution with ``C u = 0`` from its low band, through the gate.

    Solves with potential ``v_low + h1``, source ``h2`` and observation
    ``-chi(||C v_low|| / eta) C v_low``; returns ``(w, report)``.
    """
    if np.any(v_low.coeffs[:, split.high_mask] != 0):
        raise ValueError("v_low must lie in the low band P_n")
    _, chi = gate_value(v_low, window, cfg)
    g = ObservedTrace.of(v_low, window) * (-chi)
    v = v_low if h1 is None else v_low + h1
    return fixed_point_solve(split, v, window, g, h2, nl, cfg)


@dataclass
class Verification:
    relative_error: float
    report: FixedPointReport | None
    preconditions_met: bool
    message: str
    observation_norm: float
    high_norm: float
    c_obs: float = math.nan
    reconstructed: PotentialPath | None = None
    absolute_error: float = math.nan


def verify_reconstruction(u_traj: PotentialPath, split: FrequencySplit, window: ObservationWindow,
                          nl: NonlinearitySpec, cfg: ReconstructionConfig = ReconstructionConfig(),
                          start: PotentialPath | None = None) -> Verification:
    """Recover ``Q_n u`` from ``P_n u`` and ``g = C Q_n u``; compare with the truth.

    When the observation exceeds ``eta`` or the high band exceeds the radius
    no solve is attempted and the result says so.
    """
    s = cfg.s
    v = u_traj.low(split)
    truth = u_traj.high(split)
    g = ObservedTrace.of(truth, window)
    g_norm = g.norm(s)
    high = truth.c0_norm(s)
    problems = []
    if g_norm > cfg.eta:
        problems.append(f"observation norm {g_norm:.3e} exceeds eta {cfg.eta:.3e}")
    if high > cfg.radius:
        problems.append(f"high band norm {high:.3e} exceeds radius {cfg.radius:.3e}")
    if problems:
        return Verification(math.nan, None, False, "; ".join(problems) + "; try a larger n",
                            g_norm, high)
    rec = Reconstructor(split, v, window, nl, cfg)
    w, report = rec.solve(g, None, start)
    abs_err = (w - truth).c0_norm(s)
    err = abs_err / high if high > 0 else abs_err
    return Verification(err, report, True, "ok", g_norm, high, rec.solver.c_obs, w, abs_err)


# --- determining modes ------------------------------------------------------------


@dataclass(frozen=True)
class GapReport:
    state_gap: float
    observation_gap: float
    low_mode_gap: float


def determining_modes_gap(u1: PotentialPath, u2: PotentialPath, split: FrequencySplit,
                          window: ObservationWindow, s: float) -> GapReport:
    """``||u1 - u2||_{C0 H^s}``, ``||C(u1 - u2)||_{L2 H^s}`` and ``||P_n(u1 - u2)||_{C0 H^s}``."""
    u1.check_grid(u2)
    z = u1 - u2
    return GapReport(z.c0_norm(s), ObservedTrace.of(z, window).norm(s), z.low(split).c0_norm(s))


@dataclass(frozen=True)
class StabilityDecomposition:
    """Split of the high-band gap into the part explained linearly and the rest.

    ``linear`` is ``F_n(u2)(C z - C P_n z, DF(u2) P_n z)``; the remainder
    ``Q_n z - linear`` is driven by the quadratic Taylor term only.
    """

    gaps: GapReport
    high_gap: float
    linear_norm: float
    remainder: float

    @property
    def quadratic_constant(self) -> float:
        return self.remainder / self.gaps.state_gap**2


def stability_decomposition(u1: PotentialPath, u2: PotentialPath, split: FrequencySplit,
                            window: ObservationWindow, nl: NonlinearitySpec, s: float,
                            solver: ObservedCauchySolver | None = None) -> StabilityDecomposition:
    gaps = determining_modes_gap(u1, u2, split, window, s)
    solver = solver or ObservedCauchySolver.build(split, u2, window, s, nl)
    z = u1 - u2
    zl = z.low(split)
    g = ObservedTrace.of(z, window) - ObservedTrace.of(zl, window)
    flow = solver.O.flow

    def src(j: int, stage: int) -> np.ndarray:
        tau = stage * flow.h / 2
        return -1j * df_coeffs(flow.path_value(u2, j, tau), flow.path_value(zl, j, tau),
                               u2.geometry, nl)

    _, lin = solver.solve(g, src)
    zh = z.high(split)
    return StabilityDecomposition(gaps, zh.c0_norm(s), lin.c0_norm(s), (zh - lin).c0_norm(s))
