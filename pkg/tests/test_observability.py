import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlsobs.dynamics import NonlinearitySpec, PotentialPath, evolve_galerkin
from nlsobs.observability import (
    GramianOperator,
    HighBandCoordinates,
    ObservabilityError,
    ObservedCauchySolver,
    ObservedTrace,
    assemble_gramian,
    assemble_observation,
    cache_key,
    cached_gramian,
    gramian,
    gramian_inverse,
    gramian_params,
    observability_constant,
    read_gramian_cache,
    solve_observed_cauchy,
    write_gramian_cache,
)
from nlsobs.spectral import FrequencySplit, ObservationWindow, TorusGeometry, project_high

from conftest import random_field

CUBIC = NonlinearitySpec.cubic()


@pytest.fixture(scope="module")
def setup():
    """Small nonlinear setting shared by the solver tests."""
    g = TorusGeometry.line(32)
    rng = np.random.default_rng(7)
    u0 = random_field(g, rng, 0.5, 1.0, 1.0)
    v = evolve_galerkin(u0, CUBIC, 0.5, 2e-3)
    split = FrequencySplit(g, 8)
    window = ObservationWindow.interval(g, math.pi - 0.5, 1.0)
    solver = ObservedCauchySolver.build(split, v.low(split), window, 1.0, CUBIC)
    return split, v.low(split), window, solver


def test_coordinates_roundtrip_and_isometry(line32, rng):
    sp = FrequencySplit(line32, 8)
    coords = HighBandCoordinates(sp, 1.0)
    w = project_high(random_field(line32, rng), sp)
    x = coords.to_real(w.coeffs)
    assert x.shape == (coords.dim,) and coords.dim == 2 * (32 - 8)
    assert np.allclose(coords.from_real(x), w.coeffs, atol=1e-14)
    assert np.linalg.norm(x) == pytest.approx(w.norm(1.0), rel=1e-13)


def test_trace_vector_realizes_l2_norm(line32, rng):
    v = PotentialPath(line32, 0.1, np.stack([random_field(line32, rng).coeffs for _ in range(6)]))
    tr = ObservedTrace.of(v, ObservationWindow.full(line32))
    q = tr.weights
    direct = math.sqrt(sum(q[j] * v.field(j).norm(1.0) ** 2 for j in range(6)))
    assert tr.norm(1.0) == pytest.approx(direct, rel=1e-12)
    back = ObservedTrace.from_vector(tr.vector(1.0), line32, 0.1, 1.0)
    assert np.allclose(back.coeffs, tr.coeffs, atol=1e-13)


@pytest.mark.parametrize("s", [0.0, 1.0])
def test_free_flow_full_window_gramian_is_T_identity(line32, s):
    sp = FrequencySplit(line32, 8)
    v = PotentialPath.zeros(line32, 0.5, 100)
    G = gramian(sp, v, ObservationWindow.full(line32), s, CUBIC)
    assert np.allclose(G.matrix, 0.5 * np.eye(G.size), atol=1e-12)
    assert observability_constant(G) == pytest.approx(0.5**-0.5, rel=1e-12)


def test_empty_window_gives_zero_gramian(line32):
    sp = FrequencySplit(line32, 8)
    v = PotentialPath.zeros(line32, 0.2, 20)
    G = gramian(sp, v, ObservationWindow.empty(line32), 1.0, CUBIC)
    assert np.all(G.matrix == 0)
    with pytest.raises(ObservabilityError):
        gramian_inverse(G)
    with pytest.raises(ObservabilityError):
        observability_constant(G)


def test_streaming_matches_stored(setup):
    split, v, window, solver = setup
    G = gramian(split, v, window, 1.0, CUBIC)
    assert np.allclose(G.matrix, solver.G.matrix, atol=1e-12 * solver.G.lambda_max)


def test_matrix_free_apply_matches_matrix(setup, rng):
    O = setup[3].O
    x = rng.standard_normal(O.coords.dim)
    assert np.allclose(O.apply(x), O.matrix @ x, atol=1e-12 * np.linalg.norm(O.matrix @ x))


@settings(max_examples=20)
@given(st.integers(0, 2**32 - 1))
def test_quadratic_form_identity(setup, seed):
    solver = setup[3]
    x = np.random.default_rng(seed).standard_normal(solver.O.coords.dim)
    lhs = x @ solver.G.matrix @ x
    rhs = np.linalg.norm(solver.O.matrix @ x) ** 2
    assert lhs == pytest.approx(rhs, rel=1e-10)
    assert solver.G.lambda_min > 0


def test_gramian_symmetric_psd(setup):
    G = setup[3].G
    assert np.array_equal(G.matrix, G.matrix.T)
    assert G.lambda_min > 0


def test_inverse_examples():
    G = GramianOperator.from_matrix(np.diag([2.0, 4.0]))
    Gi = gramian_inverse(G)
    assert np.allclose(Gi.matrix, np.diag([0.5, 0.25]))
    with pytest.raises(ObservabilityError):
        gramian_inverse(GramianOperator.from_matrix(np.diag([1.0, 1e-12])))


def test_observability_constant_examples():
    G = GramianOperator.from_matrix(np.diag([0.25, 1.0]))
    assert observability_constant(G) == pytest.approx(2.0)
    G4 = GramianOperator.from_matrix(4 * G.matrix)
    assert observability_constant(G4) == pytest.approx(1.0)


def test_projector_laws(setup, rng):
    split, v, window, solver = setup
    g = ObservedTrace(split.geometry, v.dt, rng.standard_normal(v.coeffs.shape) + 1j * rng.standard_normal(v.coeffs.shape))
    p = solver.project(g)
    pp = solver.project(p)
    assert (pp - p).norm(1.0) <= 1e-10 * p.norm(1.0)
    # orthogonal: the residual is perpendicular to the range
    r = (g - p).vector(1.0)
    assert abs(r @ p.vector(1.0)) <= 1e-10 * g.norm(1.0) ** 2
    assert p.norm(1.0) <= g.norm(1.0)
    x = rng.standard_normal(solver.O.coords.dim)
    y = solver.O.matrix @ x
    assert np.allclose(solver.O.forward(solver.Ginv @ solver.O.adjoint(y)), y, atol=1e-9 * np.linalg.norm(y))


def test_cauchy_recovers_initial_state(setup, rng):
    split, v, window, solver = setup
    w0 = project_high(random_field(split.geometry, rng, 0.3, 1.0, 1.0), split)
    traj = v.like(solver.O.flow.trajectory(w0.coeffs))
    g = ObservedTrace.of(traj, window)
    got, path = solver.solve(g)
    assert (got - w0).norm(1.0) <= 1e-10
    assert (path - traj).c0_norm(1.0) <= 1e-10


def test_cauchy_zero_data_gives_zero(setup):
    split, v, window, solver = setup
    w0, path = solver.solve(ObservedTrace.zeros_like(v))
    assert w0.norm(1.0) == 0.0 and path.c0_norm(1.0) == 0.0


def test_cauchy_manufactured_with_source(setup, rng):
    split, v, window, solver = setup
    w0 = project_high(random_field(split.geometry, rng, 0.3, 0.5, 1.0), split)
    hc = np.cos(3 * v.times)[:, None] * random_field(split.geometry, rng, 0.3, 1.0, 1.0).coeffs
    h = v.like(split.high(hc))
    truth = solver.O.flow.solve(w0.coeffs, h)
    g = ObservedTrace.of(truth, window)
    got, path = solver.solve(g, h)
    assert (got - w0).norm(1.0) <= 1e-9
    assert (path - truth).c0_norm(1.0) <= 1e-9
    ratio = solver.estimate_ratio(g, h)
    assert 0 < ratio < 100


def test_one_shot_solver_matches(setup, rng):
    split, v, window, solver = setup
    g = ObservedTrace(split.geometry, v.dt, rng.standard_normal(v.coeffs.shape) + 0j)
    a, _ = solver.solve(g)
    b, _ = solve_observed_cauchy(split, v, window, g, None, CUBIC, 1.0)
    assert np.allclose(a.coeffs, b.coeffs, atol=1e-12)


def test_trace_shape_mismatch(setup, line64):
    split, v, window, solver = setup
    short = ObservedTrace(split.geometry, v.dt, np.zeros((3,) + split.geometry.shape))
    with pytest.raises(ValueError):
        solver.solve(short)


def test_gramian_cache_roundtrip(tmp_path, setup):
    split, v, window, solver = setup
    params = gramian_params(split, v, window, 1.0, CUBIC)
    f = tmp_path / "g.gram"
    write_gramian_cache(f, params, solver.G.matrix)
    stored, G = read_gramian_cache(f)
    assert stored == params
    assert np.array_equal(G, solver.G.matrix)
    assert len(cache_key(params)) == 64


def test_cached_gramian_reuses_file(tmp_path, setup):
    split, v, window, solver = setup
    a = cached_gramian(split, v, window, 1.0, CUBIC, cache_dir=tmp_path)
    files = list(tmp_path.glob("*.gram"))
    assert len(files) == 1
    b = cached_gramian(split, v, window, 1.0, CUBIC, cache_dir=tmp_path)
    assert np.array_equal(a.matrix, b.matrix)
    # a different potential gets its own entry
    cached_gramian(split, v.like(0.5 * v.coeffs), window, 1.0, CUBIC, cache_dir=tmp_path)
    assert len(list(tmp_path.glob("*.gram"))) == 2


def test_assemble_gramian_from_array():
    O = np.array([[1.0, 0.0], [0.0, 2.0], [0.0, 0.0]])
    G = assemble_gramian(O)
    assert np.allclose(G.matrix, np.diag([1.0, 4.0]))
