from __future__ import annotations

import math

import numpy as np
import pytest

from glc_lab.grid import SpaceSet, build_meshes, space_operator
from glc_lab.weights import (
    CARLEMAN_CONDITIONS,
    PsiError,
    PsiProfile,
    RegimeError,
    WeightError,
    WeightParams,
    audit_weight_lemmas,
    build_psi,
    build_weights,
    regime_time_steps,
    require_regime,
    theta,
    validate_regime,
    weighted_stencil,
    window_diagnostics,
)


OMEGA0 = (0.35, 0.55)


def audit_params(**overrides) -> WeightParams:
    values = dict(lam=1.0, tau=1.0, delta=0.5, c0=0.1, epsilon0=0.9)
    values.update(overrides)
    return WeightParams(**values)


def weights_for(params: WeightParams, M: int, N: int):
    meshes = build_meshes(M, N, 1.0)
    psi = build_psi(OMEGA0, params.c0, params.k_margin, meshes[0])
    return build_weights(params, psi, meshes), meshes


def test_delta_outside_range_is_rejected():
    with pytest.raises(WeightError, match=r"delta must lie in \(0, 1/2\]"):
        audit_params(delta=0.7)


def test_psi_rejects_wrong_boundary_slope():
    mesh, _ = build_meshes(15, 4, 1.0)
    rising = PsiProfile(value=lambda x: 1.0 + x, derivative=lambda x: np.ones_like(x), second_derivative=lambda x: 0.0 * x)
    with pytest.raises(PsiError, match="x=1"):
        build_psi(OMEGA0, 0.1, 0.1, mesh, rising)


def test_psi_rejects_flat_slope_outside_omega0():
    mesh, _ = build_meshes(15, 4, 1.0)
    with pytest.raises(PsiError, match="c0"):
        build_psi(OMEGA0, 5.0, 0.1, mesh)


def test_psi_reports_admissible_c0():
    mesh, _ = build_meshes(31, 4, 1.0)
    psi = build_psi(OMEGA0, 0.1, 0.1, mesh)
    assert psi.c0_admissible > 0.1
    assert psi.derivative[SpaceSet.CLOSURE][0] > 0 > psi.derivative[SpaceSet.CLOSURE][-1]


def test_K_must_exceed_max_psi():
    with pytest.raises(WeightError, match="must exceed"):
        weights_for(audit_params(K=0.5), 15, 8)


def test_overflowing_weight_is_refused():
    with pytest.raises(WeightError, match="overflows"):
        weights_for(audit_params(lam=1000.0), 15, 8)


def test_theta_is_positive_and_bounded():
    T, delta = 1.0, 0.25
    t = np.linspace(0.0, T + 0.01, 200)
    values = theta(t, T, delta)
    assert np.all(values > 0)
    assert np.max(values) <= 2.0 / (delta * T * T) + 1e-12


def test_theta_is_symmetric_about_half_horizon():
    T, delta = 2.0, 0.25
    t = np.linspace(0.0, T, 41)
    np.testing.assert_allclose(theta(t, T, delta), theta(T - t, T, delta), rtol=1e-14)
    assert np.argmin(theta(t, T, delta)) == 20


def test_r_and_rho_are_reciprocal():
    weights, _ = weights_for(audit_params(), 15, 8)
    for space in (SpaceSet.CLOSURE, SpaceSet.INTERIOR, SpaceSet.DUAL, SpaceSet.BOUNDARY):
        product = weights.r(space).values * weights.rho(space).values
        np.testing.assert_allclose(product, 1.0, rtol=1e-14)


def test_r_decreases_as_tau_grows():
    low, _ = weights_for(audit_params(tau=1.0), 15, 8)
    high, _ = weights_for(audit_params(tau=2.0), 15, 8)
    for space in (SpaceSet.CLOSURE, SpaceSet.DUAL):
        assert np.all(high.r(space).values.real < low.r(space).values.real)


def test_regime_flags_tau_below_lower_bound():
    meshes = build_meshes(15, 4552, 1.0)
    report = validate_regime(audit_params(tau=1.0, delta=0.25), meshes)
    assert not report["tau_lower"].passed
    with pytest.raises(RegimeError, match="tau_lower"):
        require_regime(report, CARLEMAN_CONDITIONS, "test")


def test_regime_time_steps_is_the_smallest_admissible_count():
    params = WeightParams(lam=2.0, tau=2.0, delta=0.25, c0=0.1, epsilon0=0.9)
    N = regime_time_steps(params, 1.0)
    assert N == 4552
    assert not validate_regime(params, build_meshes(15, N, 1.0)).failures(CARLEMAN_CONDITIONS)
    assert not validate_regime(params, build_meshes(15, N - 1, 1.0))["carleman_dt"].passed


def test_weighted_stencil_matches_direct_product():
    weights, meshes = weights_for(audit_params(), 15, 8)
    rho = weights.rho(SpaceSet.CLOSURE).values
    for ops, target in (("DD", SpaceSet.INTERIOR), ("AD", SpaceSet.INTERIOR), ("D", SpaceSet.DUAL)):
        direct = weights.r(target).values * (space_operator(meshes[0], ops) @ rho.T).T
        np.testing.assert_allclose(weighted_stencil(weights, ops), direct, rtol=1e-10, atol=1e-12)


def test_weight_audit_rows_are_finite():
    family = [(15, 8), (31, 8), (63, 8)]
    rows = audit_weight_lemmas(audit_params(), OMEGA0, 1.0, family)
    lemmas = {row.lemma for row in rows}
    assert lemmas == {"weight_stencil", "weighted_product", "time_weight", "theta_power", "theta_prime", "time_stencil"}
    assert all(math.isfinite(row.ratio) for row in rows)
    assert {row.case for row in rows if row.lemma == "time_stencil"} == {"sigma1", "sigma2", "sigma3"}


def test_weight_audit_refuses_out_of_regime_mesh():
    with pytest.raises(RegimeError):
        audit_weight_lemmas(audit_params(), OMEGA0, 1.0, [(15, 2)])


def test_window_floor_holds_in_regime():
    weights, _ = weights_for(audit_params(), 31, 16)
    diag = window_diagnostics(weights)
    assert diag.K0 >= diag.k0 > 0
    assert diag.holds
