from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glc_lab.grid import (
    GridError,
    GridFn,
    Shift,
    SpaceSet,
    TimeSet,
    avg_x,
    build_meshes,
    check_identities,
    diff2_x,
    diff_t,
    diff_x,
    norm_sq,
    random_field,
    restrict,
    shift_space,
    shift_t,
    space_operator,
    trace_normal,
)


EXPECTED_IDENTITIES = {
    "leibniz_diff_x",
    "leibniz_avg_x",
    "avg_square",
    "commute_avg_diff",
    "sbp_diff_x",
    "sbp_avg_x",
    "closure_norm_split",
    "shift_pairing_t",
    "sbp_t",
    "sbp_t_dual",
    "sbp_t_primal",
}


@pytest.mark.parametrize("M, N, T", [(1, 4, 1.0), (4, 1, 1.0), (4, 4, 0.0)])
def test_build_meshes_rejects_degenerate_sizes(M, N, T):
    with pytest.raises(GridError):
        build_meshes(M, N, T)


def test_shape_must_match_tags():
    space, _ = build_meshes(4, 4, 1.0)
    with pytest.raises(GridError, match="does not match"):
        GridFn(np.zeros(5), SpaceSet.CLOSURE, None, space)


def test_tag_mismatch_is_rejected(rng):
    space, _ = build_meshes(6, 4, 1.0)
    u = random_field(rng, space, SpaceSet.CLOSURE)
    w = random_field(rng, space, SpaceSet.DUAL)
    with pytest.raises(GridError, match="tag mismatch"):
        u + w


def test_shift_off_the_mesh_names_the_missing_node(rng):
    space, _ = build_meshes(6, 4, 1.0)
    u = random_field(rng, space, SpaceSet.INTERIOR)
    with pytest.raises(GridError, match="leaves the mesh"):
        shift_space(u, Shift.PLUS)


def test_difference_and_average_are_exact_on_linear_fields():
    space, _ = build_meshes(9, 4, 1.0)
    u = GridFn.sample(lambda x: 3.0 * x - 1.0, space, SpaceSet.CLOSURE)
    np.testing.assert_allclose(diff_x(u).values, 3.0, rtol=1e-13)
    np.testing.assert_allclose(avg_x(u).values, 3.0 * space.nodes(SpaceSet.DUAL) - 1.0, atol=1e-14)


def test_differences_are_exact_on_quadratics():
    space, time = build_meshes(9, 8, 2.0)
    u = GridFn.sample(lambda x: x * x, space, SpaceSet.CLOSURE)
    np.testing.assert_allclose(diff_x(u).values, 2.0 * space.nodes(SpaceSet.DUAL), rtol=1e-13, atol=1e-14)
    np.testing.assert_allclose(diff2_x(u).values, 2.0, rtol=1e-11)
    q = GridFn.sample(lambda t: t * t, time_mesh=time, time=TimeSet.DUAL_CLOSURE)
    np.testing.assert_allclose(diff_t(q).values, 2.0 * time.nodes(TimeSet.PRIMAL), rtol=1e-13)
    y = GridFn.sample(lambda t: t * t, time_mesh=time, time=TimeSet.PRIMAL_CLOSURE)
    np.testing.assert_allclose(diff_t(y).values, 2.0 * time.nodes(TimeSet.DUAL), rtol=1e-13)


def test_trace_normal_takes_end_values_and_outward_signs(rng):
    space, time = build_meshes(6, 4, 1.0)
    u = random_field(rng, space, SpaceSet.DUAL, time, TimeSet.PRIMAL)
    trace, normal = trace_normal(u)
    assert trace.space == SpaceSet.BOUNDARY and trace.time == TimeSet.PRIMAL
    np.testing.assert_array_equal(trace.values[:, 0], u.values[:, 0])
    np.testing.assert_array_equal(trace.values[:, 1], u.values[:, -1])
    np.testing.assert_array_equal(normal.values, [-1.0, 1.0])
    with pytest.raises(GridError, match="dual-node"):
        trace_normal(random_field(rng, space, SpaceSet.CLOSURE))


def test_time_shifts_follow_node_sets(rng):
    space, time = build_meshes(4, 6, 2.0)
    q = random_field(rng, space, SpaceSet.CLOSURE, time, TimeSet.DUAL_CLOSURE)
    assert shift_t(q, Shift.PLUS).time == TimeSet.PRIMAL
    assert shift_t(q, Shift.PLUS, TimeSet.BOUNDARY).values.shape == (2, space.M + 2)
    np.testing.assert_array_equal(shift_t(q, Shift.PLUS, TimeSet.BOUNDARY).values[1], q.values[-1])
    y = random_field(rng, space, SpaceSet.CLOSURE, time, TimeSet.PRIMAL_CLOSURE)
    assert diff_t(y).time == TimeSet.DUAL
    with pytest.raises(GridError):
        shift_t(restrict(y, time=TimeSet.PRIMAL), Shift.PLUS)


def test_space_operator_matches_grid_operators(rng):
    space, _ = build_meshes(11, 4, 1.0)
    u = random_field(rng, space, SpaceSet.CLOSURE)
    np.testing.assert_allclose(space_operator(space, "DA") @ u.values, diff_x(avg_x(u)).values, rtol=1e-13, atol=1e-12)
    np.testing.assert_allclose(space_operator(space, "AA") @ u.values, avg_x(avg_x(u)).values, rtol=1e-13, atol=1e-13)


def test_closure_norm_weights_boundary_nodes_by_one():
    space, _ = build_meshes(9, 4, 1.0)
    ones = GridFn.sample(lambda x: 1.0, space, SpaceSet.CLOSURE)
    assert norm_sq(ones) == pytest.approx(space.M * space.dx + 2.0, rel=1e-14)


def test_identities_hold_for_constant_fields():
    def constants(rng, space, time):
        return (
            GridFn.sample(lambda x: 2.0 - 1.0j, space, SpaceSet.CLOSURE),
            GridFn.sample(lambda x: 0.5j, space, SpaceSet.CLOSURE),
            GridFn.sample(lambda x: 1.5, space, SpaceSet.DUAL),
            GridFn.sample(lambda t: 1.0 + 1.0j, time_mesh=time, time=TimeSet.DUAL_CLOSURE),
            GridFn.sample(lambda t: -3.0, time_mesh=time, time=TimeSet.DUAL_CLOSURE),
            GridFn.sample(lambda t: 0.25, time_mesh=time, time=TimeSet.PRIMAL_CLOSURE),
        )

    records = check_identities(6, 5, 1.0, seed=0, fields=constants)
    assert max(r.relative for r in records) <= 1e-13


@pytest.mark.parametrize("M, N", [(4, 5), (17, 32), (64, 5)])
def test_identities_on_reference_meshes(M, N):
    records = check_identities(M, N, 1.0, seed=[7, 1, M, N], samples=10)
    assert EXPECTED_IDENTITIES <= {r.identity for r in records}
    assert max(r.relative for r in records) <= 1e-13


@pytest.mark.property
@settings(max_examples=25, deadline=None)
@given(
    M=st.integers(min_value=2, max_value=40),
    N=st.integers(min_value=2, max_value=30),
    T=st.floats(min_value=0.1, max_value=5.0),
    seed=st.integers(min_value=0, max_value=2**32 - 1),
)
def test_identities_hold_for_random_fields(M, N, T, seed):
    records = check_identities(M, N, T, seed=seed)
    assert max(r.relative for r in records) <= 1e-12
