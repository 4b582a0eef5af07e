"""Geometric control check by ray sampling on flat tori.

Geodesics are straight lines ``x(t) = x0 + t theta``. For every sampled ray
the first time it enters the plateau set of the window is computed exactly
from per-coordinate periodic crossing intervals, so the verdict does not
depend on a time step and is monotone in ``T0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .spectral import Arc, ObservationWindow


@dataclass(frozen=True)
class RaySampling:
    """Deterministic ray family: a position lattice times an angle grid.

    In 2D the angle grid is ``2 pi j / n_directions`` (axis directions are
    included when ``n_directions`` is a multiple of 4) and ``n_random`` extra
    rays are drawn from ``seed``.
    """

    n_positions: int = 32
    n_directions: int = 64
    n_random: int = 0
    seed: int = 0


@dataclass(frozen=True)
class GCCReport:
    passed: bool
    T0: float
    n_rays: int
    worst_time: float  # inf when some ray never enters
    worst_origin: tuple[float, ...]
    worst_direction: tuple[float, ...]

    def summary(self) -> str:
        verdict = "pass" if self.passed else "fail"
        o = ", ".join(f"{x:.6g}" for x in self.worst_origin)
        d = ", ".join(f"{x:.6g}" for x in self.worst_direction)
        return (f"{verdict}: {self.n_rays} rays, T0={self.T0:.6g}, worst entry time "
                f"{self.worst_time:.6g} for ray from ({o}) along ({d})")


def _arc_times(x0: float, v: float, arc: Arc | None, period: float, horizon: float):
    """Open time intervals in ``(0, horizon)`` during which one coordinate lies in the plateau."""
    if arc is None:
        return [(0.0, horizon)]
    lo = arc.plateau_lo
    hi = lo + arc.plateau
    if v == 0.0:
        t = (x0 - lo) % period
        return [(0.0, horizon)] if 0 < t < arc.plateau else []
    # solve x0 + v t in (lo + m L, hi + m L)
    if v > 0:
        start = (lo - x0) / v
    else:
        start = (hi - x0) / v
    dur = arc.plateau / abs(v)
    per = period / abs(v)
    m0 = math.floor(-start / per) - 1
    out = []
    m = m0
    while True:
        a = start + m * per
        if a >= horizon:
            break
        b = a + dur
        if b > 0:
            out.append((max(a, 0.0), min(b, horizon)))
        m += 1
    return out


def _intersect(a, b):
    out = []
    i = j = 0
    while i < len(a) and j < len(b):
        lo = max(a[i][0], b[j][0])
        hi = min(a[i][1], b[j][1])
        if lo < hi:
            out.append((lo, hi))
        if a[i][1] < b[j][1]:
            i += 1
        else:
            j += 1
    return out


def entry_time(window: ObservationWindow, origin, direction, horizon: float) -> float:
    """First time in ``[0, horizon)`` the ray sits inside the plateau set (inf if never)."""
    if window.everywhere:
        return 0.0
    best = math.inf
    lengths = window.geometry.lengths
    for box in window.boxes:
        times = [(0.0, horizon)]
        for arc, x0, v, L in zip(box.arcs, origin, direction, lengths):
            times = _intersect(times, _arc_times(x0, v, arc, L, horizon))
            if not times:
                break
        if times:
            best = min(best, times[0][0])
    return best


def _rays(window: ObservationWindow, sampling: RaySampling):
    geom = window.geometry
    if geom.dim == 1:
        L = geom.lengths[0]
        xs = (np.arange(sampling.n_positions) + 0.5) * (L / sampling.n_positions)
        for x in xs:
            for d in (1.0, -1.0):
                yield (float(x),), (d,)
        return
    L1, L2 = geom.lengths
    p = sampling.n_positions
    g1 = (np.arange(p) + 0.5) * (L1 / p)
    g2 = (np.arange(p) + 0.5) * (L2 / p)
    angles = 2 * math.pi * np.arange(sampling.n_directions) / sampling.n_directions
    dirs = [(_clean(math.cos(a)), _clean(math.sin(a))) for a in angles]
    for x in g1:
        for y in g2:
            for d in dirs:
                yield (float(x), float(y)), d
    if sampling.n_random:
        rng = np.random.default_rng(sampling.seed)
        pos = rng.random((sampling.n_random, 2)) * [L1, L2]
        ang = rng.random(sampling.n_random) * 2 * math.pi
        for (x, y), a in zip(pos, ang):
            yield (float(x), float(y)), (math.cos(a), math.sin(a))


def _clean(c: float) -> float:
    # exact zeros for axis directions so constant-coordinate rays are detected
    return 0.0 if abs(c) < 1e-12 else c


def gcc_ray_check(window: ObservationWindow, T0: float, sampling: RaySampling = RaySampling()) -> GCCReport:
    """Check that every sampled unit-speed ray meets the plateau set within ``T0``."""
    if T0 <= 0:
        raise ValueError("T0 must be positive")
    # among rays that never enter, prefer those with a constant coordinate:
    # they miss the window for every horizon, not just up to T0
    worst = ((-1.0, 0), (), ())
    n = 0
    if window.is_empty:
        origin = tuple(0.0 for _ in window.geometry.sizes)
        direction = (1.0,) + (0.0,) * (window.geometry.dim - 1)
        return GCCReport(False, T0, 0, math.inf, origin, direction)
    for origin, direction in _rays(window, sampling):
        n += 1
        t = entry_time(window, origin, direction, T0)
        key = (t, sum(c == 0.0 for c in direction) if t == math.inf else 0)
        if key > worst[0]:
            worst = (key, origin, direction)
    (t, _), origin, direction = worst
    return GCCReport(bool(t < T0), T0, n, t, origin, direction)
