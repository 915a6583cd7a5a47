from __future__ import annotations

import math

import numpy as np
import pytest

from glc_lab.carleman import (
    LHS_TERMS,
    RHS_TERMS,
    CarlemanBreakdown,
    SweepCell,
    apply_P,
    apply_boundary_ops,
    conjugation_report,
    evaluate_carleman,
    sweep_carleman,
)
from glc_lab.dynamics import adjoint_solve
from glc_lab.grid import SpaceSet, TimeSet, build_meshes, random_field
from glc_lab.samples import complex_gaussian
from glc_lab.weights import RegimeError, WeightParams, build_psi, build_weights


def weights_for(system, params: WeightParams, M: int, N: int):
    meshes = build_meshes(M, N, system.T)
    psi = build_psi(system.omega0, params.c0, params.k_margin, meshes[0])
    return build_weights(params, psi, meshes), meshes


def in_regime_params() -> WeightParams:
    return WeightParams(lam=1.0, tau=2.0, delta=0.5, c0=0.1, epsilon0=0.9)


@pytest.mark.parametrize("M, N", [(5, 4), (31, 32)])
@pytest.mark.parametrize("tau, lam", [(1.0, 1.0), (5.0, 2.0)])
def test_conjugation_is_exact(system, rng, M, N, tau, lam):
    params = WeightParams(lam=lam, tau=tau, delta=0.25, c0=0.1, epsilon0=0.9)
    weights, meshes = weights_for(system, params, M, N)
    for _ in range(5):
        q = random_field(rng, meshes[0], SpaceSet.CLOSURE, meshes[1], TimeSet.DUAL_CLOSURE)
        records = conjugation_report(q, weights, system, meshes)
        assert {r.identity for r in records} == {"conjugation_interior", "conjugation_boundary_0", "conjugation_boundary_1"}
        assert max(r.relative for r in records) <= 1e-11


def test_adjoint_solution_leaves_only_zeroth_order_terms(system, rng):
    meshes = build_meshes(15, 16, 1.0)
    q = adjoint_solve(system, meshes, complex_gaussian(rng, 17))
    grid = q.as_grid()
    expected = -complex(system.c, -system.gamma) * grid.values[:-1, 1:-1]
    np.testing.assert_allclose(apply_P(q, system, meshes).values, expected, rtol=1e-9, atol=1e-9 * np.max(np.abs(expected)))
    left, right = apply_boundary_ops(q, system, meshes)
    np.testing.assert_allclose(left.values, complex(system.c, -system.gamma) * grid.values[:-1, 0], rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(right.values, complex(system.c, -system.gamma) * grid.values[:-1, -1], rtol=1e-9, atol=1e-9)


def test_out_of_regime_evaluation_is_refused(system, rng):
    weights, meshes = weights_for(system, WeightParams(lam=1.0, tau=1.0, delta=0.5, c0=0.1, epsilon0=0.9), 7, 300)
    q = adjoint_solve(system, meshes, complex_gaussian(rng, 9))
    with pytest.raises(RegimeError, match="tau_lower"):
        evaluate_carleman(q, weights, system, meshes)


def test_breakdown_terms_are_nonnegative_and_homogeneous(system, rng):
    weights, meshes = weights_for(system, in_regime_params(), 7, 300)
    q = adjoint_solve(system, meshes, complex_gaussian(rng, 9))
    base = evaluate_carleman(q, weights, system, meshes)
    assert set(base.lhs_terms) == set(LHS_TERMS)
    assert set(base.rhs_terms) == set(RHS_TERMS)
    assert min(base.lhs_terms.values()) >= 0
    assert min(base.rhs_terms.values()) >= 0
    assert 0 < base.ratio < math.inf
    scaled = evaluate_carleman(q.as_grid() * complex(-1.5, 2.0), weights, system, meshes)
    assert abs(scaled.ratio - base.ratio) <= 1e-12 * base.ratio


def test_zero_adjoint_gives_zero_ratio(system):
    weights, meshes = weights_for(system, in_regime_params(), 7, 300)
    breakdown = evaluate_carleman(np.zeros((301, 9), dtype=complex), weights, system, meshes)
    assert breakdown.ratio == 0.0


def test_breakdown_ratio_edge_cases():
    assert CarlemanBreakdown({"a": 1.0}, {"b": 0.0}).ratio == math.inf
    assert CarlemanBreakdown({"a": 2.0}, {"b": 4.0}).as_row()["ratio"] == 0.5


def test_sweep_keeps_cell_order_and_skips_out_of_regime_cells(system):
    params = in_regime_params()
    cells = [SweepCell(tau=2.0, lam=1.0, M=7, N=300), SweepCell(tau=1.0, lam=1.0, M=7, N=300), SweepCell(tau=2.0, lam=1.0, M=7, N=300, beta=0.0)]
    results = sweep_carleman(cells, system, params, samples=3, seed=11, workers=3)
    assert [r.cell_id for r in results] == [0, 1, 2]
    assert results[1].skipped and "tau_lower" in results[1].skipped
    assert not results[0].skipped and len(results[0].rows) == 3
    assert all(row["beta"] == 0.0 for row in results[2].rows)
    again = sweep_carleman(cells[:1], system, params, samples=3, seed=11, workers=1)
    assert [r["ratio"] for r in again[0].rows] == [r["ratio"] for r in results[0].rows]
