"""Config-driven experiments with deterministic seeding and byte-stable export.

A config is a JSON object with a ``schema`` field. Each experiment kind
produces a result table (column names plus rows of numbers or strings) and a
small summary dictionary; both are exported with floats rendered to 17
significant digits so that reruns with equal config and seed give identical
files.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from .dynamics import (
    BlowUpError,
    ConditioningError,
    DampingSpec,
    NonlinearitySpec,
    PotentialPath,
    conserved_quantities,
    evolve_damped,
    evolve_galerkin,
    evolve_nls,
    phases,
)
from .gcc import GCCReport, RaySampling, gcc_ray_check
from .observability import ObservabilityError, ObservedCauchySolver, cached_gramian
from .reconstruction import (
    ContractionError,
    ReconstructionConfig,
    stability_decomposition,
    verify_reconstruction,
)
from .spectral import FrequencySplit, ObservationWindow, SpectralField, TorusGeometry, hs_norm

SCHEMA_VERSION = 1
KINDS = ("decay", "gramian-scan", "reconstruct", "determining-modes", "convergence")
NUMERICAL_FAILURES = (BlowUpError, ObservabilityError, ContractionError, ConditioningError,
                      np.linalg.LinAlgError, FloatingPointError)


class ConfigError(ValueError):
    """Malformed or out-of-range experiment configuration."""


# --- config ------------------------------------------------------------------------


@dataclass(frozen=True)
class WindowConfig:
    kind: str = "interval"  # interval | strip | cross | full | empty
    lo: float = math.pi - 0.5
    length: float = 1.0
    axis: int = 0
    plateau_fraction: float = 0.5

    def build(self, geom: TorusGeometry) -> ObservationWindow:
        if self.kind == "interval":
            return ObservationWindow.interval(geom, self.lo, self.length, self.plateau_fraction)
        if self.kind == "strip":
            return ObservationWindow.strip(geom, self.axis, self.lo, self.length, self.plateau_fraction)
        if self.kind == "cross":
            return ObservationWindow.cross(geom, self.lo, self.length, self.plateau_fraction)
        if self.kind == "full":
            return ObservationWindow.full(geom)
        return ObservationWindow.empty(geom)

    def validate(self, dim: int) -> None:
        if self.kind not in ("interval", "strip", "cross", "full", "empty"):
            raise ConfigError(f"unknown window kind {self.kind!r}")
        if self.kind == "interval" and dim != 1:
            raise ConfigError("interval windows need a one-dimensional geometry")
        if self.kind == "cross" and dim != 2:
            raise ConfigError("cross windows need a two-dimensional geometry")
        if self.kind == "strip" and not 0 <= self.axis < dim:
            raise ConfigError(f"strip axis {self.axis} out of range")
        if not self.length > 0 or not 0 < self.plateau_fraction < 1:
            raise ConfigError("window length must be positive and 0 < plateau_fraction < 1")


@dataclass(frozen=True)
class InitialConfig:
    """Seeded initial datum: Gaussian coefficients times ``exp(-decay |k|)``, scaled to ``norm`` in H^s."""

    norm: float = 1.0
    decay: float = 0.5


@dataclass(frozen=True)
class PotentialConfig:
    """Seeded potentials: free evolutions of random fields with ``|k| <= band``, H^{s+1} norm ``radius``."""

    count: int = 5
    band: float = 3.0
    radius: float = 1.0


@dataclass(frozen=True)
class ReconstructionSection:
    eta: float = 10.0
    radius: float = 0.9
    outer_radius: float = 1.0
    max_iter: int = 100
    tol: float = 1e-10
    rcond: float = 1e-10
    substeps: int = 1
    reference_substeps: int = 4
    check_uniqueness: bool = True


@dataclass(frozen=True)
class DecaySection:
    amplitude: float = 1.0
    transient: float = 0.5
    fit_start: float = 1.0
    fit_end: float = 10.0
    sample_every: int = 10
    envelope_width: float = 0.5


@dataclass(frozen=True)
class DeterminingSection:
    epsilons: tuple[float, ...] = (1e-3, 1e-4)
    reference_substeps: int = 2


@dataclass(frozen=True)
class ConvergenceSection:
    levels: int = 3


@dataclass(frozen=True)
class GCCSection:
    T0: float = 2 * math.pi
    n_positions: int = 32
    n_directions: int = 64
    n_random: int = 0


_SECTIONS = {
    "window": WindowConfig,
    "initial": InitialConfig,
    "potentials": PotentialConfig,
    "reconstruction": ReconstructionSection,
    "decay": DecaySection,
    "determining": DeterminingSection,
    "convergence": ConvergenceSection,
    "gcc": GCCSection,
}


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    sizes: tuple[int, ...] = (64,)
    lengths: tuple[float, ...] = ()
    window: WindowConfig = WindowConfig()
    nonlinearity: tuple[float, ...] = (1.0,)
    nonlinearity_constant: float = 0.0
    T: float = 1.0
    dt: float = 1e-3
    ranks: tuple[int, ...] = (8, 16, 32)
    s: float = 1.0
    seed: int = 0
    output: str = "results/run"
    workers: int = 1
    initial: InitialConfig = InitialConfig()
    potentials: PotentialConfig = PotentialConfig()
    reconstruction: ReconstructionSection = ReconstructionSection()
    decay: DecaySection = DecaySection()
    determining: DeterminingSection = DeterminingSection()
    convergence: ConvergenceSection = ConvergenceSection()
    gcc: GCCSection = GCCSection()
    schema: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.schema != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema version {self.schema}")
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        try:
            geom = self.geometry
            self.nl
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        self.window.validate(geom.dim)
        if not (self.T > 0 and self.dt > 0) or abs(round(self.T / self.dt) * self.dt - self.T) > 1e-9 * self.T:
            raise ConfigError("T and dt must be positive with T/dt an integer")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if any(not 1 <= n < geom.n_modes for n in self.ranks):
            raise ConfigError(f"split ranks must lie in [1, {geom.n_modes - 1}]")
        if self.s < 0 or self.workers < 1:
            raise ConfigError("need s >= 0 and workers >= 1")
        if self.potentials.count < 1 or self.convergence.levels < 1:
            raise ConfigError("potential count and convergence levels must be >= 1")
        if any(not e > 0 for e in self.determining.epsilons):
            raise ConfigError("perturbation sizes must be positive")
        if self.decay.sample_every < 1 or not self.decay.fit_end > self.decay.fit_start:
            raise ConfigError("decay fit window must be non-empty and sample_every >= 1")

    @property
    def geometry(self) -> TorusGeometry:
        return TorusGeometry(self.sizes, self.lengths)

    @property
    def nl(self) -> NonlinearitySpec:
        coeffs = tuple(self.nonlinearity)
        return NonlinearitySpec(coeffs, self.nonlinearity_constant,
                                defocusing=bool(coeffs) and coeffs[-1] > 0)

    def build_window(self) -> ObservationWindow:
        return self.window.build(self.geometry)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return _build(cls, data, "config")

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        """Raises ``OSError`` if unreadable and ``ConfigError`` if malformed."""
        text = Path(path).read_text(encoding="utf-8")
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        """Canonical form with every default filled in."""
        return json.loads(json.dumps(dataclasses.asdict(self)))


def _build(cls, data: dict, where: str):
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        f = names[key]
        sub = _SECTIONS.get(key) if cls is ExperimentConfig else None
        if sub is not None:
            if not isinstance(value, dict):
                raise ConfigError(f"{where}.{key} must be an object")
            kwargs[key] = _build(sub, value, f"{where}.{key}")
        else:
            kwargs[key] = _coerce(value, f.default, f"{where}.{key}")
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _coerce(value, default, where: str):
    """Cast to the type of the field default (tuples element-wise)."""
    if default is dataclasses.MISSING:
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string")
        return value
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(default, tuple):
            if not isinstance(value, list):
                raise TypeError
            kind = type(default[0]) if default else float
            return tuple(_scalar(v, kind) for v in value)
        return _scalar(value, type(default))
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: cannot use {value!r} here (expected {type(default).__name__})") from None


def _scalar(v, kind):
    if isinstance(v, bool) and kind is not bool:
        raise TypeError
    if kind is int:
        if isinstance(v, float) and v.is_integer():
            v = int(v)
        if not isinstance(v, int):
            raise TypeError
        return v
    if kind is float:
        if not isinstance(v, (int, float)) or not math.isfinite(v):
            raise TypeError
        return float(v)
    if kind is str:
        if not isinstance(v, str):
            raise TypeError
        return v
    return kind(v)


# --- seeded data -----------------------------------------------------------------


def rng_for(seed: int, *tags: int) -> np.random.Generator:
    """Independent stream per ``(seed, tags)``, stable across worker layouts."""
    return np.random.default_rng(np.random.SeedSequence([seed, *tags]))


def random_field(geom: TorusGeometry, rng: np.random.Generator, decay: float, norm: float,
                 s: float, band: float | None = None) -> SpectralField:
    kabs = np.sqrt(geom.eigenvalues)
    c = (rng.standard_normal(geom.shape) + 1j * rng.standard_normal(geom.shape)) * np.exp(-decay * kabs)
    if band is not None:
        c = c * (kabs <= band)
    return SpectralField(geom, c * (norm / float(hs_norm(c, geom, s))))


def random_potential(geom: TorusGeometry, rng: np.random.Generator, pot: PotentialConfig, s: float,
                     T: float, dt: float) -> PotentialPath:
    """Free evolution of a random low-band field in the H^{s+1} ball."""
    u = random_field(geom, rng, 0.0, pot.radius, s + 1.0, band=pot.band)
    n = int(round(T / dt))
    times = dt * np.arange(n + 1)
    coeffs = np.stack([phases(geom, t) * u.coeffs for t in times])
    return PotentialPath(geom, dt, coeffs)


def initial_datum(cfg: ExperimentConfig, *tags: int) -> SpectralField:
    return random_field(cfg.geometry, rng_for(cfg.seed, *tags), cfg.initial.decay, cfg.initial.norm, cfg.s)


# --- decay fitting ---------------------------------------------------------------


@dataclass(frozen=True)
class DecayFit:
    gamma: float
    r2: float
    start: float
    end: float
    n_points: int


def fit_decay(t: np.ndarray, y: np.ndarray, start: float, end: float) -> DecayFit:
    """Least squares ``log y = c - gamma t`` on ``start <= t <= end``."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    m = (t >= start - 1e-12) & (t <= end + 1e-12)
    if m.sum() < 3:
        raise ValueError("need at least three samples in the fit window")
    A = np.column_stack([np.ones(m.sum()), t[m]])
    z = np.log(y[m])
    coef, *_ = np.linalg.lstsq(A, z, rcond=None)
    resid = z - A @ coef
    ss = float(np.sum((z - z.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss if ss > 0 else 1.0
    return DecayFit(float(-coef[1]), r2, float(t[m][0]), float(t[m][-1]), int(m.sum()))


def block_envelope(t: np.ndarray, y: np.ndarray, start: float, width: float) -> np.ndarray:
    """Maxima of ``y`` over consecutive blocks ``[start + k w, start + (k+1) w]``."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    out = []
    a = start
    while a < t[-1] - 1e-12:
        m = (t >= a - 1e-12) & (t <= a + width + 1e-12)
        if m.any():
            out.append(float(y[m].max()))
        a += width
    return np.array(out)


# --- experiments -----------------------------------------------------------------


@dataclass
class RunRecord:
    config: dict
    version: str
    duration: float
    columns: list[str]
    rows: list[list]
    summary: dict = field(default_factory=dict)
    status: str = "ok"
    diagnostics: str = ""

    def to_dict(self, include_duration: bool = False) -> dict:
        out = {
            "config": self.config,
            "version": self.version,
            "columns": list(self.columns),
            "rows": [list(r) for r in self.rows],
            "summary": self.summary,
            "status": self.status,
            "diagnostics": self.diagnostics,
        }
        if include_duration:
            out["duration"] = self.duration
        return out


def version_string() -> str:
    return f"v{__version__}"


class _Table:
    def __init__(self, columns: Sequence[str]):
        self.columns = list(columns)
        self.rows: list[list] = []
        self.summary: dict = {}

    def add(self, *values) -> None:
        self.rows.append([_plain(v) for v in values])


def _plain(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return float(v)
    return v


def _sweep(fn: Callable, points: list, workers: int) -> list:
    """Evaluate ``fn`` on every point; results come back in point order."""
    if workers <= 1 or len(points) <= 1:
        return [fn(p) for p in points]
    with ProcessPoolExecutor(max_workers=min(workers, len(points))) as pool:
        return list(pool.map(fn, points))


def _decay(cfg: ExperimentConfig, tab: _Table) -> None:
    d = cfg.decay
    geom = cfg.geometry
    u0 = initial_datum(cfg, 0)
    n = int(round(cfg.T / cfg.dt))
    run = evolve_damped(u0, cfg.nl, DampingSpec(cfg.build_window(), d.amplitude), cfg.T, cfg.dt, record_every=n)
    t = cfg.dt * np.arange(n + 1)
    for j in range(0, n + 1, d.sample_every):
        tab.add(t[j], run.h1_norms[j])
    fit = fit_decay(t, run.h1_norms, d.fit_start, min(d.fit_end, cfg.T))
    env = block_envelope(t, run.h1_norms, d.transient, d.envelope_width)
    rise = float(np.max(np.diff(env))) if env.size > 1 else 0.0
    tab.summary.update(gamma=fit.gamma, r2=fit.r2, fit_start=fit.start, fit_end=fit.end,
                       envelope_max_rise=rise, envelope_non_increasing=rise <= 0.0,
                       grid=list(geom.sizes))


def _gramian_point(args) -> list:
    cfg_dict, n, p = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    geom = cfg.geometry
    v = random_potential(geom, rng_for(cfg.seed, 1, p), cfg.potentials, cfg.s, cfg.T, cfg.dt)
    G = cached_gramian(FrequencySplit(geom, n), v, cfg.build_window(), cfg.s, cfg.nl)
    lo = G.lambda_min
    return [n, p, lo, G.lambda_max, lo ** -0.5 if lo > 0 else math.inf]


def _gramian_scan(cfg: ExperimentConfig, tab: _Table) -> None:
    points = [(cfg.to_dict(), n, p) for n in cfg.ranks for p in range(cfg.potentials.count)]
    rows = sorted(_sweep(_gramian_point, points, cfg.workers), key=lambda r: (r[0], r[1]))
    for r in rows:
        tab.add(*r)
    lam = [r[2] for r in rows]
    cobs = [r[4] for r in rows]
    tab.summary.update(min_lambda=min(lam), all_positive=min(lam) > 0,
                       c_obs_spread=max(cobs) / min(cobs))


def _reference(cfg: ExperimentConfig, u0: SpectralField, substeps: int) -> PotentialPath:
    return evolve_galerkin(u0, cfg.nl, cfg.T, cfg.dt, substeps=substeps)


def _recon_cfg(cfg: ExperimentConfig) -> ReconstructionConfig:
    r = cfg.reconstruction
    return ReconstructionConfig(eta=r.eta, radius=r.radius, outer_radius=r.outer_radius, s=cfg.s,
                                max_iter=r.max_iter, tol=r.tol, rcond=r.rcond, substeps=r.substeps)


def _reconstruct_point(args) -> list:
    cfg_dict, n = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    geom = cfg.geometry
    u = _reference(cfg, initial_datum(cfg, 0), cfg.reconstruction.reference_substeps)
    split = FrequencySplit(geom, n)
    rc = _recon_cfg(cfg)
    res = verify_reconstruction(u, split, cfg.build_window(), cfg.nl, rc)
    if not res.preconditions_met:
        return [n, res.high_norm, res.observation_norm, math.nan, math.nan, 0, math.nan, math.nan,
                math.nan, res.message]
    gap = math.nan
    if cfg.reconstruction.check_uniqueness:
        w1 = random_field(geom, rng_for(cfg.seed, 2, n), 0.0, 1.0, cfg.s)
        w1 = SpectralField(geom, split.high(w1.coeffs))
        w1 = w1 * (0.5 * rc.radius / w1.norm(cfg.s))
        start = PotentialPath(geom, u.dt, np.broadcast_to(w1.coeffs, u.coeffs.shape).copy())
        other = verify_reconstruction(u, split, cfg.build_window(), cfg.nl, rc, start=start)
        gap = (other.reconstructed - res.reconstructed).c0_norm(cfg.s)
    r = res.report
    return [n, res.high_norm, res.observation_norm, res.relative_error, res.absolute_error,
            r.iterations, r.kappa, res.c_obs, gap, res.message]


def _reconstruct(cfg: ExperimentConfig, tab: _Table) -> None:
    rows = sorted(_sweep(_reconstruct_point, [(cfg.to_dict(), n) for n in cfg.ranks], cfg.workers),
                  key=lambda r: r[0])
    for r in rows:
        tab.add(*r)
    errs = [r[3] for r in rows if r[-1] == "ok"]
    tab.summary.update(max_relative_error=max(errs) if errs else math.nan,
                       max_kappa=max((r[6] for r in rows if r[-1] == "ok"), default=math.nan),
                       error_decreasing=all(b < a for a, b in zip(errs, errs[1:])))


def _determining(cfg: ExperimentConfig, tab: _Table) -> None:
    geom = cfg.geometry
    window = cfg.build_window()
    u0 = initial_datum(cfg, 0)
    sub = cfg.determining.reference_substeps
    u2 = _reference(cfg, u0, sub)
    rng = rng_for(cfg.seed, 3)
    direction = random_field(geom, rng, cfg.initial.decay, 1.0, cfg.s).coeffs
    for n in cfg.ranks:
        split = FrequencySplit(geom, n)
        d = split.high(direction)
        d = d / float(hs_norm(d, geom, cfg.s))
        solver = ObservedCauchySolver.build(split, u2, window, cfg.s, cfg.nl, cfg.reconstruction.rcond)
        consts = []
        for eps in cfg.determining.epsilons:
            u1 = _reference(cfg, SpectralField(geom, u0.coeffs + eps * d), sub)
            dec = stability_decomposition(u1, u2, split, window, cfg.nl, cfg.s, solver)
            g = dec.gaps
            residual = g.state_gap - solver.c_obs * g.observation_gap
            tab.add(n, eps, g.state_gap, g.observation_gap, g.low_mode_gap, dec.high_gap,
                    dec.linear_norm, dec.remainder, dec.quadratic_constant, residual, solver.c_obs)
            consts.append((eps, dec.remainder, dec.quadratic_constant))
        for (e1, r1, q1), (e2, r2, q2) in zip(consts, consts[1:]):
            tab.summary[f"n{n}_remainder_ratio_{e1:g}_{e2:g}"] = r1 / r2
            tab.summary[f"n{n}_constant_ratio_{e1:g}_{e2:g}"] = q1 / q2


def _convergence(cfg: ExperimentConfig, tab: _Table) -> None:
    geom = cfg.geometry
    u0 = initial_datum(cfg, 0)
    m0, e0 = conserved_quantities(u0, cfg.nl)
    levels = cfg.convergence.levels
    for name, fn in (("split-step", evolve_nls), ("galerkin", evolve_galerkin)):
        ref = fn(u0, cfg.nl, cfg.T, cfg.dt / 2**levels).coeffs[-1]
        errs = []
        for j in range(levels):
            dt = cfg.dt / 2**j
            path = fn(u0, cfg.nl, cfg.T, dt)
            end = path.field(path.n_steps)
            m, e = conserved_quantities(end, cfg.nl)
            err = float(hs_norm(end.coeffs - ref, geom, cfg.s))
            errs.append(err)
            tab.add(name, dt, err, abs(m - m0) / m0, abs(e - e0) / abs(e0))
        for j in range(levels - 1):
            tab.summary[f"{name}_order_{j}"] = math.log2(errs[j] / errs[j + 1]) if errs[j + 1] > 0 else math.inf


_EXPERIMENTS = {
    "decay": (_decay, ["t", "h1_norm"]),
    "gramian-scan": (_gramian_scan, ["n", "potential", "lambda_min", "lambda_max", "c_obs"]),
    "reconstruct": (_reconstruct, ["n", "high_norm", "observation_norm", "relative_error",
                                   "absolute_error", "iterations", "kappa", "c_obs",
                                   "uniqueness_gap", "status"]),
    "determining-modes": (_determining, ["n", "epsilon", "state_gap", "observation_gap", "low_mode_gap",
                                         "high_gap", "linear_norm", "remainder", "quadratic_constant",
                                         "residual", "c_obs"]),
    "convergence": (_convergence, ["integrator", "dt", "error", "mass_drift", "energy_drift"]),
}


def run_experiment(cfg: ExperimentConfig) -> RunRecord:
    """Run one experiment; numerical failures are recorded rather than raised."""
    fn, columns = _EXPERIMENTS[cfg.kind]
    tab = _Table(columns)
    status, diag = "ok", ""
    t0 = time.perf_counter()
    try:
        fn(cfg, tab)
    except NUMERICAL_FAILURES as exc:
        status, diag = "failed", f"{type(exc).__name__}: {exc}"
    return RunRecord(cfg.to_dict(), version_string(), time.perf_counter() - t0, tab.columns,
                     tab.rows, tab.summary, status, diag)


def check_gcc(cfg: ExperimentConfig) -> GCCReport:
    g = cfg.gcc
    return gcc_ray_check(cfg.build_window(), g.T0, RaySampling(g.n_positions, g.n_directions, g.n_random, cfg.seed))


# --- export ----------------------------------------------------------------------


def format_float(x: float) -> str:
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format_float(v)
    return str(v)


def dumps_json(obj: Any) -> str:
    """JSON with sorted keys and 17-significant-digit floats; non-finite floats become null."""
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return format(obj, ".17g") if math.isfinite(obj) else "null"
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        items = sorted(obj.items())
        return "{" + ", ".join(f"{json.dumps(str(k), ensure_ascii=False)}: {dumps_json(v)}" for k, v in items) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(dumps_json(v) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def record_csv(record: RunRecord) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(record.columns)
    for row in record.rows:
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


def export_record(record: RunRecord, path: str | Path, fmt: str) -> Path:
    """Write ``record`` as ``csv`` (result table) or ``json`` (whole record minus timing)."""
    path = Path(path)
    if fmt == "csv":
        data = record_csv(record)
    elif fmt == "json":
        data = dumps_json(record.to_dict()) + "\n"
    else:
        raise ValueError(f"unknown export format {fmt!r}")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(data)
    return path
