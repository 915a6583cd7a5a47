"""Term-by-term evaluation of the discrete Carleman inequality for the adjoint operator."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
import logging
import math
import time
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from glc_lab.dynamics import AdjointTrajectory, Direction, SystemParams, adjoint_solve
from glc_lab.grid import (
    GridFn,
    IdentityResidual,
    Shift,
    SpaceMesh,
    SpaceSet,
    TimeMesh,
    TimeSet,
    avg_x,
    build_meshes,
    diff2_x,
    diff_t,
    diff_x,
    integral,
    restrict,
    shift_t,
    trace_normal,
)
from glc_lab.samples import CARLEMAN_FAMILY, SampleKind, Stream, sample_family
from glc_lab.weights import (
    CARLEMAN_CONDITIONS,
    WeightParams,
    WeightSet,
    build_psi,
    build_weights,
    require_regime,
    validate_regime,
    weighted_stencil,
)


logger = logging.getLogger(__name__)

LHS_TERMS = (
    "d2x_interior",
    "dt_interior",
    "axdx_interior",
    "dx_dual",
    "zeroth_interior",
    "dt_boundary",
    "dx_trace",
    "zeroth_boundary",
)
RHS_TERMS = ("interior_source", "boundary_source_0", "boundary_source_1", "local", "time_boundary")

QLike = Union[AdjointTrajectory, GridFn, np.ndarray]


def _as_q(q: QLike, meshes: Tuple[SpaceMesh, TimeMesh]) -> GridFn:
    if isinstance(q, GridFn):
        if q.tags != (SpaceSet.CLOSURE, TimeSet.DUAL_CLOSURE):
            raise ValueError(f"q must live on closure x extended dual times, got {q.tags}")
        return q
    values = q.values if isinstance(q, AdjointTrajectory) else q
    return GridFn(values, SpaceSet.CLOSURE, TimeSet.DUAL_CLOSURE, *meshes)


def apply_P(q: QLike, sys: SystemParams, meshes: Tuple[SpaceMesh, TimeMesh]) -> GridFn:
    """P(q) = −D_t q − (α−iβ) D_x² t^−(q) on ℳ × 𝒩."""
    q = _as_q(q, meshes)
    return -restrict(diff_t(q), space=SpaceSet.INTERIOR) - diff2_x(shift_t(q, Shift.MINUS)) * sys.diffusion(Direction.ADJOINT)


def _boundary_ops(q: GridFn, sys: SystemParams) -> GridFn:
    flux, normal = trace_normal(diff_x(shift_t(q, Shift.MINUS)))
    return restrict(diff_t(q), space=SpaceSet.BOUNDARY) - flux * normal.values * sys.diffusion(Direction.ADJOINT)


def apply_boundary_ops(q: QLike, sys: SystemParams, meshes: Tuple[SpaceMesh, TimeMesh]) -> Tuple[GridFn, GridFn]:
    """(B_Γ0(q), B_Γ1(q)) on 𝒩."""
    both = _boundary_ops(_as_q(q, meshes), sys)
    time_mesh = meshes[1]
    return (
        GridFn(both.values[:, 0], None, TimeSet.PRIMAL, None, time_mesh),
        GridFn(both.values[:, 1], None, TimeSet.PRIMAL, None, time_mesh),
    )


def _residual(name: str, lhs: np.ndarray, rhs: np.ndarray, *pieces: np.ndarray) -> IdentityResidual:
    residual = float(np.max(np.abs(lhs - rhs))) if lhs.size else 0.0
    scale = max([1e-300, float(np.max(np.abs(lhs), initial=0.0))] + [float(np.max(np.abs(p), initial=0.0)) for p in pieces])
    return IdentityResidual(name, residual, scale)


def conjugation_report(
    q: QLike, weights: WeightSet, sys: SystemParams, meshes: Tuple[SpaceMesh, TimeMesh]
) -> List[IdentityResidual]:
    """Both sides of the z = rq rewriting of P, B_Γ0 and B_Γ1, before any asymptotic substitution."""
    q = _as_q(q, meshes)
    dt, dx = meshes[1].dt, meshes[0].dx
    coeff = sys.diffusion(Direction.ADJOINT)
    z = q * weights.r(SpaceSet.CLOSURE)
    zv = z.values
    a = weights.log_rho[SpaceSet.CLOSURE]
    r_dt_rho = np.expm1(a[1:] - a[:-1]) / dt
    r_minus = weights.r(SpaceSet.CLOSURE).values[:-1]

    lhs = (shift_t(weights.r(SpaceSet.INTERIOR), Shift.MINUS) * apply_P(q, sys, meshes)).values
    dt_z = diff_t(z).values
    t_plus_z = zv[1:]
    time_part = r_dt_rho[:, 1:-1] * t_plus_z[:, 1:-1]
    second = weighted_stencil(weights, "DD") * avg_x(avg_x(z)).values
    mixed = 2.0 * weighted_stencil(weights, "AD") * avg_x(diff_x(z)).values
    leading = weighted_stencil(weights, "AA") * diff2_x(z).values
    space_part = (second + mixed + leading)[:-1]
    rhs = -dt_z[:, 1:-1] - time_part - coeff * space_part
    pieces = [coeff * part[:-1] for part in (second, mixed, leading)]
    records = [_residual("conjugation_interior", lhs, rhs, dt_z, time_part, coeff * space_part, *pieces)]

    # r at the end node times D_x ρ and A_x ρ at the adjacent dual node
    inner = {0: 1, 1: -2}
    ends = {0: 0, 1: -1}
    boundary = _boundary_ops(q, sys).values
    for side in (0, 1):
        e, k = ends[side], inner[side]
        ratio = np.exp(a[:, k] - a[:, e])
        sign = 1.0 if side == 0 else -1.0
        d_rho = sign * (ratio - 1.0) / dx
        a_rho = 0.5 * (ratio + 1.0)
        d_z = sign * (zv[:, k] - zv[:, e]) / dx
        a_z = 0.5 * (zv[:, k] + zv[:, e])
        flux_rho, flux_z = (d_rho * a_z)[:-1], (a_rho * d_z)[:-1]
        flux = flux_rho + flux_z
        lhs = r_minus[:, e] * boundary[:, side]
        t_term = r_dt_rho[:, e] * t_plus_z[:, e]
        rhs = dt_z[:, e] + t_term + (coeff if side == 0 else -coeff) * flux
        records.append(
            _residual(f"conjugation_boundary_{side}", lhs, rhs, dt_z[:, e], t_term, coeff * flux_rho, coeff * flux_z)
        )
    return records


def conjugation_residual(
    q: QLike, weights: WeightSet, sys: SystemParams, meshes: Tuple[SpaceMesh, TimeMesh]
) -> float:
    return max(r.residual for r in conjugation_report(q, weights, sys, meshes))


@dataclass
class CarlemanBreakdown:
    lhs_terms: Dict[str, float]
    rhs_terms: Dict[str, float]
    C_lambda_local: float = 1.0

    @property
    def lhs_sum(self) -> float:
        return float(sum(self.lhs_terms.values()))

    @property
    def rhs_sum(self) -> float:
        return float(sum(self.rhs_terms.values()))

    @property
    def ratio(self) -> float:
        lhs, rhs = self.lhs_sum, self.rhs_sum
        if rhs == 0.0:
            return 0.0 if lhs == 0.0 else math.inf
        return lhs / rhs

    def as_row(self) -> Dict[str, float]:
        row = {f"lhs_{k}": v for k, v in self.lhs_terms.items()}
        row["lhs_sum"] = self.lhs_sum
        row.update({f"rhs_{k}": v for k, v in self.rhs_terms.items()})
        row["rhs_sum"] = self.rhs_sum
        row["ratio"] = self.ratio
        return row


def _real(value: complex) -> float:
    return float(np.real(value))


def evaluate_carleman(
    q: QLike,
    weights: WeightSet,
    sys: SystemParams,
    meshes: Tuple[SpaceMesh, TimeMesh],
    C_lambda_local: float = 1.0,
) -> CarlemanBreakdown:
    require_regime(validate_regime(weights.params, meshes), CARLEMAN_CONDITIONS, "Carleman evaluation")
    q = _as_q(q, meshes)
    space, time_mesh = meshes
    M, N = space.M, time_mesh.N
    I, B, D = SpaceSet.INTERIOR, SpaceSet.BOUNDARY, SpaceSet.DUAL
    r2 = {kind: weights.r(kind, power=2.0) for kind in (I, B, D)}
    s = {kind: weights.s_field(kind) for kind in (I, B, D)}
    s_inv_r2 = {kind: r2[kind] / s[kind] for kind in (I, B)}
    s3_r2 = {kind: weights.s_field(kind, 3.0) * r2[kind] for kind in (I, B)}

    q_int = restrict(q, space=I)
    q_bnd = restrict(q, space=B)
    dt_q = diff_t(q)
    dxq = diff_x(q)
    dx_trace, _ = trace_normal(dxq.abs2())

    lhs = {
        "d2x_interior": integral(r2[I] / s[I] * diff2_x(q).abs2(), time=TimeSet.DUAL),
        "dt_interior": integral(shift_t(s_inv_r2[I], Shift.MINUS) * restrict(dt_q, space=I).abs2()),
        "axdx_interior": integral(s[I] * r2[I] * avg_x(dxq).abs2(), time=TimeSet.DUAL),
        "dx_dual": integral(s[D] * r2[D] * dxq.abs2(), time=TimeSet.DUAL),
        "zeroth_interior": integral(s3_r2[I] * q_int.abs2(), time=TimeSet.DUAL),
        "dt_boundary": integral(shift_t(s_inv_r2[B], Shift.MINUS) * restrict(dt_q, space=B).abs2()),
        "dx_trace": integral(s[B] * r2[B] * dx_trace, time=TimeSet.DUAL),
        "zeroth_boundary": integral(s3_r2[B] * q_bnd.abs2(), time=TimeSet.DUAL),
    }

    t_minus_r2 = shift_t(r2[B], Shift.MINUS).values
    boundary = _boundary_ops(q, sys).values
    dt = time_mesh.dt
    omega = sys.omega_indices(space) - 1
    local = (s3_r2[I] * q_int.abs2()).values[:-1, omega]

    r2_closure = weights.r(SpaceSet.CLOSURE, power=2.0)
    edge = shift_t(r2_closure * q.abs2(), Shift.PLUS, TimeSet.BOUNDARY)
    rhs = {
        "interior_source": integral(shift_t(r2[I], Shift.MINUS) * apply_P(q, sys, meshes).abs2()),
        "boundary_source_0": dt * float(np.sum(np.real(t_minus_r2[:, 0]) * np.abs(boundary[:, 0]) ** 2)),
        "boundary_source_1": dt * float(np.sum(np.real(t_minus_r2[:, 1]) * np.abs(boundary[:, 1]) ** 2)),
        "local": C_lambda_local * space.dx * dt * float(np.sum(np.real(local))),
        "time_boundary": integral(edge) / space.dx**2,
    }
    breakdown = CarlemanBreakdown(
        {k: _real(v) for k, v in lhs.items()},
        {k: _real(v) for k, v in rhs.items()},
        C_lambda_local,
    )
    logger.debug("carleman M=%d N=%d lhs=%.4e rhs=%.4e ratio=%.4e", M, N, breakdown.lhs_sum, breakdown.rhs_sum, breakdown.ratio)
    return breakdown


@dataclass(frozen=True)
class SweepCell:
    tau: float
    lam: float
    M: int
    N: int
    beta: Optional[float] = None


@dataclass
class CellResult:
    cell_id: int
    cell: SweepCell
    dx: float
    dt: float
    rows: List[Dict[str, object]] = field(default_factory=list)
    margins: Dict[str, float] = field(default_factory=dict)
    skipped: Optional[str] = None
    wall_time: float = 0.0

    @property
    def max_ratio(self) -> float:
        ratios = [float(r["ratio"]) for r in self.rows]
        return max(ratios) if ratios else math.nan


def _run_cell(
    cell_id: int,
    cell: SweepCell,
    sys: SystemParams,
    params: WeightParams,
    samples: int,
    seed: int,
    kinds: Sequence[SampleKind],
    C_lambda_local: float,
) -> CellResult:
    started = time.perf_counter()
    meshes = build_meshes(cell.M, cell.N, sys.T)
    result = CellResult(cell_id, cell, meshes[0].dx, meshes[1].dt)
    cell_params = replace(params, tau=cell.tau, lam=cell.lam)
    cell_sys = sys if cell.beta is None else replace(sys, beta=cell.beta)
    report = validate_regime(cell_params, meshes)
    result.margins = {c.name: c.margin for c in report.conditions}
    failed = report.failures(CARLEMAN_CONDITIONS)
    if failed:
        result.skipped = "out of regime: " + ", ".join(c.name for c in failed)
        logger.warning("carleman cell %d skipped tau=%.4g M=%d N=%d reason=%s", cell_id, cell.tau, cell.M, cell.N, result.skipped)
        return result
    psi = build_psi(sys.omega0, cell_params.c0, cell_params.k_margin, meshes[0])
    weights = build_weights(cell_params, psi, meshes)
    for sample_id, kind, q_T in sample_family(kinds, samples, meshes[0], seed, Stream.CARLEMAN, cell_id):
        q = adjoint_solve(cell_sys, meshes, q_T)
        breakdown = evaluate_carleman(q, weights, cell_sys, meshes, C_lambda_local)
        row: Dict[str, object] = {
            "cell_id": cell_id,
            "tau": cell.tau,
            "lambda": cell.lam,
            "beta": cell_sys.beta,
            "dx": meshes[0].dx,
            "dt": meshes[1].dt,
            "sample_id": sample_id,
            "sample_kind": kind.value,
        }
        row.update(breakdown.as_row())
        result.rows.append(row)
    result.wall_time = time.perf_counter() - started
    logger.info("carleman cell %d tau=%.4g lambda=%.4g M=%d N=%d max_ratio=%.4e", cell_id, cell.tau, cell.lam, cell.M, cell.N, result.max_ratio)
    return result


def sweep_carleman(
    cells: Sequence[SweepCell],
    sys: SystemParams,
    params: WeightParams,
    samples: int,
    seed: int,
    workers: int = 1,
    kinds: Sequence[SampleKind] = CARLEMAN_FAMILY,
    C_lambda_local: float = 1.0,
) -> List[CellResult]:
    """Evaluate every cell over its sample family; results come back ordered by cell id."""
    if not cells:
        return []
    results: List[CellResult] = []
    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        future_map = {
            executor.submit(_run_cell, i, cell, sys, params, samples, seed, kinds, C_lambda_local): i
            for i, cell in enumerate(cells)
        }
        for future in as_completed(future_map):
            results.append(future.result())
    results.sort(key=lambda r: r.cell_id)
    return results
