from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glc_lab.dynamics import (
    CglScheme,
    ControlField,
    Direction,
    SolverError,
    SystemParams,
    TridiagonalMatrix,
    adjoint_solve,
    assemble_step_matrix,
    duality_defect,
    forward_solve,
    manufactured_convergence,
    residual,
    scheme_for,
    solve_tridiagonal,
    weighted_norm_sq,
)
from glc_lab.grid import SpaceSet, build_meshes, space_weights
from glc_lab.samples import complex_gaussian
from glc_lab.weights import RegimeError


def residual_scale(sys: SystemParams, meshes, values: np.ndarray) -> float:
    space, time = meshes
    return float(np.max(np.abs(values))) * (1.0 / time.dt + 4.0 * abs(complex(sys.alpha, sys.beta)) / space.dx**2)


def random_control(sys, meshes, rng) -> ControlField:
    zero = ControlField.zeros(sys, *meshes)
    values = complex_gaussian(rng, zero.values.size).reshape(zero.values.shape)
    return ControlField(zero.indices, values, *meshes)


def test_system_rejects_omega0_outside_omega():
    with pytest.raises(ValueError, match="omega0"):
        SystemParams(1.0, 0.0, 0.0, 0.0, 1.0, omega=(0.3, 0.6), omega0=(0.2, 0.5))


def test_zero_pivot_is_reported_by_row():
    matrix = TridiagonalMatrix(lower=np.array([1.0 + 0j]), diag=np.array([0.0 + 0j, 1.0 + 0j]), upper=np.array([1.0 + 0j]))
    with pytest.raises(SolverError, match="row 0"):
        matrix.factorize()


def test_tridiagonal_solve_matches_dense(rng):
    n = 12
    lower, upper = complex_gaussian(rng, n - 1), complex_gaussian(rng, n - 1)
    diag = 6.0 + complex_gaussian(rng, n)
    matrix = TridiagonalMatrix(lower, diag, upper)
    rhs = complex_gaussian(rng, n)
    np.testing.assert_allclose(solve_tridiagonal(matrix, rhs), np.linalg.solve(matrix.to_dense(), rhs), rtol=1e-12, atol=1e-13)
    np.testing.assert_allclose(matrix.matvec(rhs), matrix.to_dense() @ rhs, rtol=1e-13, atol=1e-13)


def test_adjoint_matrix_is_weighted_conjugate_transpose(system, small_meshes):
    space, time = small_meshes
    forward = assemble_step_matrix(system, space, time.dt, Direction.FORWARD).to_dense()
    adjoint = assemble_step_matrix(system, space, time.dt, Direction.ADJOINT).to_dense()
    W = np.diag(space_weights(space, SpaceSet.CLOSURE))
    expected = np.linalg.solve(W, forward.conj().T @ W)
    assert np.max(np.abs(adjoint - expected)) <= 1e-14 * np.max(np.abs(forward))


def test_large_reaction_step_is_refused(system):
    with pytest.raises(RegimeError):
        CglScheme(replace(system, gamma=4.0), *build_meshes(7, 4, 1.0))


def test_solves_satisfy_the_scheme(system, medium_meshes, rng):
    g = complex_gaussian(rng, medium_meshes[0].M + 2)
    y = forward_solve(system, medium_meshes, g, random_control(system, medium_meshes, rng))
    assert residual(y, system, medium_meshes) <= 1e-12 * residual_scale(system, medium_meshes, y.values)
    q = adjoint_solve(system, medium_meshes, complex_gaussian(rng, medium_meshes[0].M + 2))
    assert residual(q, system, medium_meshes) <= 1e-12 * residual_scale(system, medium_meshes, q.values)


def test_constant_state_follows_scalar_recurrence(system, medium_meshes):
    space, time = medium_meshes
    y = forward_solve(system, medium_meshes, np.ones(space.M + 2))
    factor = 1.0 + time.dt * complex(system.c, system.gamma)
    exact = factor ** -np.arange(time.N + 1, dtype=float)
    np.testing.assert_allclose(y.values, np.repeat(exact[:, None], space.M + 2, axis=1), rtol=1e-13)


def test_constant_state_recurrence_holds_on_the_default_mesh(system):
    space, time = build_meshes(31, 64, 1.0)
    y = forward_solve(system, (space, time), np.ones(space.M + 2))
    factor = 1.0 + time.dt * complex(system.c, system.gamma)
    exact = factor ** -np.arange(time.N + 1, dtype=float)
    assert np.max(np.abs(y.values - exact[:, None]) / np.abs(exact[:, None])) <= 1e-13


def test_adjoint_constant_follows_conjugate_recurrence(system, medium_meshes):
    space, time = medium_meshes
    q = adjoint_solve(system, medium_meshes, np.ones(space.M + 2))
    factor = 1.0 + time.dt * complex(system.c, -system.gamma)
    exact = factor ** -(time.N - np.arange(time.N + 1, dtype=float))
    assert np.max(np.abs(q.values - exact[:, None]) / np.abs(exact[:, None])) <= 1e-13


def test_free_evolution_is_dissipative(system, medium_meshes, rng):
    space = medium_meshes[0]
    for _ in range(20):
        y = forward_solve(system, medium_meshes, complex_gaussian(rng, space.M + 2))
        norms = np.array([weighted_norm_sq(space, row) for row in y.values])
        assert np.all(norms[1:] <= norms[:-1] * (1.0 + 1e-12))


def test_forward_solve_is_linear(system, medium_meshes, rng):
    space = medium_meshes[0]
    g1, g2 = complex_gaussian(rng, space.M + 2), complex_gaussian(rng, space.M + 2)
    v1, v2 = random_control(system, medium_meshes, rng), random_control(system, medium_meshes, rng)
    both = ControlField(v1.indices, v1.values + v2.values, *medium_meshes)
    combined = forward_solve(system, medium_meshes, g1 + g2, both).values
    separate = forward_solve(system, medium_meshes, g1, v1).values + forward_solve(system, medium_meshes, g2, v2).values
    rest = forward_solve(system, medium_meshes, np.zeros(space.M + 2)).values
    assert np.max(np.abs(combined - separate + rest)) <= 1e-12 * np.max(np.abs(combined))


def test_residual_detects_a_unit_perturbation(system, medium_meshes, rng):
    y = forward_solve(system, medium_meshes, complex_gaussian(rng, medium_meshes[0].M + 2))
    values = y.values.copy()
    values[2, 5] += 1.0
    assert residual(replace(y, values=values), system, medium_meshes) >= 0.5 / medium_meshes[1].dt


def test_control_acts_only_inside_omega(system, medium_meshes):
    q = adjoint_solve(system, medium_meshes, np.ones(medium_meshes[0].M + 2))
    control = ControlField.from_adjoint(system, q)
    x = medium_meshes[0].primal_nodes[control.indices]
    assert np.all((x >= 0.3) & (x < 0.6))
    grid = control.to_grid().values
    outside = np.setdiff1d(np.arange(medium_meshes[0].M + 2), control.indices)
    assert np.all(grid[:, outside] == 0)


def test_scheme_cache_returns_the_same_factorization(system, medium_meshes):
    assert scheme_for(system, *medium_meshes) is scheme_for(system, *medium_meshes)


def test_slice_length_is_checked(system, medium_meshes):
    with pytest.raises(SolverError, match="closure mesh"):
        forward_solve(system, medium_meshes, np.ones(3))


@pytest.mark.property
@settings(max_examples=30, deadline=None)
@given(
    M=st.integers(min_value=2, max_value=63),
    N=st.integers(min_value=8, max_value=64),
    seed=st.integers(min_value=0, max_value=2**32 - 1),
)
def test_duality_is_exact(M, N, seed):
    system = SystemParams(1.0, 0.5, 0.5, 1.0, 1.0, (0.3, 0.6), (0.35, 0.55))
    meshes = build_meshes(M, N, 1.0)
    rng = np.random.default_rng(seed)
    g, q_T = complex_gaussian(rng, M + 2), complex_gaussian(rng, M + 2)
    v = random_control(system, meshes, rng)
    terms = scheme_for(system, *meshes).duality_terms(g, v, q_T)
    assert terms.relative <= 1e-12
    assert duality_defect(system, meshes, g, v, q_T) == terms.defect


def test_manufactured_solution_converges_at_first_order(system):
    report = manufactured_convergence(system)
    assert report.min_time_order >= 0.8
    assert report.min_space_order >= 0.8


def test_space_family_must_double():
    sys = SystemParams(1.0, 0.0, 0.0, 0.0, 1.0, (0.3, 0.6), (0.35, 0.55))
    with pytest.raises(SolverError, match="double"):
        manufactured_convergence(sys, space_sizes=(7, 14))
