"""Energy estimate, observability quotient and penalized HUM control synthesis."""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from glc_lab.dynamics import (
    AdjointTrajectory,
    CglScheme,
    ControlField,
    StateTrajectory,
    SystemParams,
    scheme_for,
    weighted_inner,
    weighted_norm_sq,
)
from glc_lab.grid import (
    GridFn,
    Shift,
    SpaceMesh,
    SpaceSet,
    TimeMesh,
    build_meshes,
    diff_t,
    diff_x,
    integral_space,
    shift_t,
)
from glc_lab.weights import RegimeError


logger = logging.getLogger(__name__)

Meshes = Tuple[SpaceMesh, TimeMesh]


class CgStagnationError(RuntimeError):
    def __init__(self, message: str, history: List[float]) -> None:
        super().__init__(message)
        self.history = history


@dataclass
class EnergyReport:
    step_ratios: np.ndarray
    step_bound: float
    worst_step_margin: float
    worst_aggregate_margin: float
    balance_residual: float
    balance_scale: float

    @property
    def worst_margin(self) -> float:
        return min(self.worst_step_margin, self.worst_aggregate_margin)


def energy_check(sys: SystemParams, meshes: Meshes, q_T) -> EnergyReport:
    """Per-step growth bound, aggregate bound with C = e^{4|c|t^n} and the exact energy balance.

    Margins are relative to the bounded side, so they are comparable across samples.
    """
    space, time = meshes
    dt = time.dt
    if 2.0 * abs(sys.c) * dt > 0.5:
        raise RegimeError(f"energy estimate needs 2|c|dt <= 1/2, got {2.0 * abs(sys.c) * dt:.4g}")
    q = scheme_for(sys, space, time).adjoint(q_T)
    norms = np.array([weighted_norm_sq(space, slice_) for slice_ in q.values])
    step_bound = 1.0 / (1.0 - 2.0 * abs(sys.c) * dt)

    later, earlier = norms[1:], norms[:-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(later > 0, earlier / later, 0.0)
        step_margins = np.where(later > 0, (step_bound * later - earlier) / later, 0.0)
        # ‖q^{1/2}‖² against e^{4|c|t^n}‖q^{n+1/2}‖², n = 0..N
        bound = np.exp(4.0 * abs(sys.c) * time.primal_times) * norms
        aggregate = np.where(bound > 0, (bound - norms[0]) / bound, 0.0)

    residual, scale = energy_balance(sys, q)
    report = EnergyReport(
        step_ratios=ratios,
        step_bound=step_bound,
        worst_step_margin=float(np.min(step_margins)),
        worst_aggregate_margin=float(np.min(aggregate)),
        balance_residual=residual,
        balance_scale=scale,
    )
    logger.debug("energy check c=%.3g worst_step=%.3e worst_aggregate=%.3e balance=%.3e", sys.c, report.worst_step_margin, report.worst_aggregate_margin, residual)
    return report


def energy_balance(sys: SystemParams, q: AdjointTrajectory) -> Tuple[float, float]:
    """Residual of −½∫D_t|q|² + ½Δt∫|D_t q|² + α∫_ℳ*|D_x t^−q|² + c∫|t^−q|² = 0 on 𝒩."""
    field_ = q.as_grid()
    dt = q.time_mesh.dt
    q_minus = shift_t(field_, Shift.MINUS)
    pieces = [
        -0.5 * integral_space(diff_t(field_.abs2())).real,
        0.5 * dt * integral_space(diff_t(field_).abs2()).real,
        sys.alpha * integral_space(diff_x(q_minus).abs2()).real,
        sys.c * integral_space(q_minus.abs2()).real,
    ]
    total = np.sum(pieces, axis=0)
    scale = max(1e-300, max(float(np.max(np.abs(p))) for p in pieces))
    return float(np.max(np.abs(total))), scale


def penalty_phi(dx: float, vartheta: float, C_pen: float) -> float:
    return math.exp(-C_pen / dx ** min(vartheta / 4.0, 1.0))


def dx_tilde(sys: SystemParams, vartheta: float, constant: float = 1.0) -> float:
    rho = sys.zeroth_order_bound
    return constant * (1.0 + 1.0 / sys.T + rho ** (2.0 / 3.0)) ** (-max(1.0, 4.0 / vartheta))


def dt_bound(sys: SystemParams, dx: float, vartheta: float) -> float:
    rho = sys.zeroth_order_bound
    reaction = math.inf if rho == 0 else 1.0 / (4.0 * rho)
    return min(dx**vartheta / sys.T**2, reaction)


def observability_time_steps(sys: SystemParams, M: int, vartheta: float) -> int:
    """Smallest N with T/N <= dt_bound on the mesh with M interior nodes."""
    bound = dt_bound(sys, 1.0 / (M + 1), vartheta)
    N = max(1, math.ceil(sys.T / bound))
    while sys.T / N > bound:
        N += 1
    return N


def obs_trend(sys: SystemParams, c_obs: float) -> float:
    rho = sys.zeroth_order_bound
    if c_obs <= 0:
        return math.nan
    return math.log(c_obs) / (1.0 + 1.0 / sys.T + rho ** (2.0 / 3.0) + sys.T * rho)


@dataclass
class ObservabilityReport:
    vartheta: float
    quotient: float
    penalty_phi: float
    initial_energy: float
    omega_energy: float
    terminal_energy: float
    dx: float
    dt: float
    dx_tilde: float
    dt_bound: float
    dx_ok: bool
    dt_ok: bool

    @property
    def in_regime(self) -> bool:
        return self.dx_ok and self.dt_ok


def omega_energy(sys: SystemParams, q: AdjointTrajectory) -> float:
    """∬_{ω×𝒩*} |q|²."""
    idx = sys.omega_indices(q.space_mesh)
    return float(q.space_mesh.dx * q.time_mesh.dt * np.sum(np.abs(q.values[:-1, idx]) ** 2))


def observability_quotient(
    sys: SystemParams,
    meshes: Meshes,
    q_T,
    vartheta: float,
    C_pen: float,
    dx_hat: float = 1.0,
    dx_tilde_constant: float = 1.0,
) -> ObservabilityReport:
    if vartheta < 1:
        raise ValueError(f"vartheta must be >= 1 (got {vartheta})")
    space, time = meshes
    q = scheme_for(sys, space, time).adjoint(q_T)
    phi = penalty_phi(space.dx, vartheta, C_pen)
    initial = weighted_norm_sq(space, q.initial)
    local = omega_energy(sys, q)
    terminal = weighted_norm_sq(space, q.terminal)
    denominator = local + phi * terminal
    quotient = 0.0 if denominator == 0.0 else initial / denominator
    tilde = dx_tilde(sys, vartheta, dx_tilde_constant)
    bound = dt_bound(sys, space.dx, vartheta)
    report = ObservabilityReport(
        vartheta=vartheta,
        quotient=quotient,
        penalty_phi=phi,
        initial_energy=initial,
        omega_energy=local,
        terminal_energy=terminal,
        dx=space.dx,
        dt=time.dt,
        dx_tilde=tilde,
        dt_bound=bound,
        dx_ok=space.dx <= min(dx_hat, tilde),
        dt_ok=time.dt <= bound,
    )
    if not report.in_regime:
        logger.warning("observability out of regime dx=%.4g (<= %.4g?) dt=%.4g (<= %.4g?)", space.dx, min(dx_hat, tilde), time.dt, bound)
    return report


def _gramian(scheme: CglScheme, q_T: np.ndarray) -> np.ndarray:
    q = scheme.adjoint(q_T)
    control = ControlField.from_adjoint(scheme.sys, q)
    return scheme.forward(np.zeros(scheme.space.M + 2, dtype=np.complex128), control).terminal


def gramian_apply(sys: SystemParams, meshes: Meshes, q_T) -> GridFn:
    """Λ q_T = y^N driven from rest by the control q|_{ω×𝒩*}."""
    values = q_T.values if isinstance(q_T, GridFn) else np.asarray(q_T, dtype=np.complex128)
    return GridFn(_gramian(scheme_for(sys, *meshes), values), SpaceSet.CLOSURE, None, meshes[0])


@dataclass
class CgResult:
    solution: np.ndarray
    iterations: int
    relative_residual: float
    history: List[float]


def conjugate_gradient(operator, rhs: np.ndarray, inner, tol: float, maxiter: int) -> CgResult:
    """CG for a self-adjoint positive operator in the real inner product Re(inner).

    When the recursive residual reaches ``tol`` the true residual is recomputed;
    if it has drifted above ``tol`` iteration restarts from it.
    """
    def dot(u: np.ndarray, v: np.ndarray) -> float:
        return float(np.real(inner(u, v)))

    b_norm = math.sqrt(dot(rhs, rhs))
    x = np.zeros_like(rhs)
    if b_norm == 0.0:
        return CgResult(x, 0, 0.0, [0.0])
    r = rhs.copy()
    p = r.copy()
    rs = dot(r, r)
    history = [math.sqrt(rs) / b_norm]
    for it in range(1, maxiter + 1):
        Ap = operator(p)
        curvature = dot(p, Ap)
        if curvature <= 0:
            raise CgStagnationError(f"non-positive curvature {curvature:.3e} at iteration {it}", history)
        step = rs / curvature
        x = x + step * p
        r = r - step * Ap
        rs_new = dot(r, r)
        history.append(math.sqrt(rs_new) / b_norm)
        if history[-1] <= tol:
            r = rhs - operator(x)
            rs_new = dot(r, r)
            true_rel = math.sqrt(rs_new) / b_norm
            if true_rel <= tol:
                return CgResult(x, it, true_rel, history)
            history[-1] = true_rel
            p = r.copy()
            rs = rs_new
            continue
        p = r + (rs_new / rs) * p
        rs = rs_new
    raise CgStagnationError(f"CG reached maxiter={maxiter} with relative residual {history[-1]:.3e}", history)


@dataclass
class HumResult:
    q_hat: np.ndarray
    control: ControlField
    trajectory: StateTrajectory
    free_terminal: np.ndarray
    terminal_norm: float
    control_norm: float
    epsilon: float
    cg_iterations: int
    cg_relative_residual: float
    cost: float
    residual_history: List[float] = field(default_factory=list)

    def as_record(self) -> Dict[str, float]:
        return {
            "epsilon": self.epsilon,
            "terminal_norm": self.terminal_norm,
            "control_norm": self.control_norm,
            "free_terminal_norm": math.sqrt(weighted_norm_sq(self.trajectory.space_mesh, self.free_terminal)),
            "cost": self.cost,
            "cg_iterations": self.cg_iterations,
            "cg_relative_residual": self.cg_relative_residual,
        }


def hum_cost(scheme: CglScheme, q_T: np.ndarray, g: np.ndarray, epsilon: float) -> float:
    """J_ε(q_T) = ½∬_{ω×𝒩*}|q|² + (ε/2)‖q_T‖²_w + Re⟨g, q^{1/2}⟩_w."""
    q = scheme.adjoint(q_T)
    return (
        0.5 * omega_energy(scheme.sys, q)
        + 0.5 * epsilon * weighted_norm_sq(scheme.space, q_T)
        + float(np.real(weighted_inner(scheme.space, g, q.initial)))
    )


def hum_gradient(scheme: CglScheme, q_T: np.ndarray, free_terminal: np.ndarray, epsilon: float) -> np.ndarray:
    return epsilon * q_T + _gramian(scheme, q_T) + free_terminal


def hum_solve(
    sys: SystemParams,
    meshes: Meshes,
    g,
    epsilon: float,
    cg_tol: float = 1e-10,
    cg_maxiter: int = 500,
) -> HumResult:
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive (got {epsilon})")
    scheme = scheme_for(sys, *meshes)
    space = meshes[0]
    g = np.asarray(g.values if isinstance(g, GridFn) else g, dtype=np.complex128)
    free_terminal = scheme.forward(g).terminal

    def inner(u: np.ndarray, v: np.ndarray) -> complex:
        return weighted_inner(space, u, v)

    cg = conjugate_gradient(lambda p: epsilon * p + _gramian(scheme, p), -free_terminal, inner, cg_tol, cg_maxiter)
    q = scheme.adjoint(cg.solution)
    control = ControlField.from_adjoint(sys, q)
    trajectory = scheme.forward(g, control)
    result = HumResult(
        q_hat=cg.solution,
        control=control,
        trajectory=trajectory,
        free_terminal=free_terminal,
        terminal_norm=math.sqrt(weighted_norm_sq(space, trajectory.terminal)),
        control_norm=math.sqrt(control.norm_sq()),
        epsilon=epsilon,
        cg_iterations=cg.iterations,
        cg_relative_residual=cg.relative_residual,
        cost=hum_cost(scheme, cg.solution, g, epsilon),
        residual_history=cg.history,
    )
    logger.info(
        "hum solve M=%d N=%d eps=%.3e iterations=%d residual=%.3e |y^N|=%.3e |v|=%.3e",
        space.M, meshes[1].N, epsilon, cg.iterations, cg.relative_residual, result.terminal_norm, result.control_norm,
    )
    return result


@dataclass
class ControllabilityVerdict:
    hum: HumResult
    g_norm: float
    terminal_constant: Optional[float]
    control_constant: Optional[float]
    certificate_lhs: float
    certificate_rhs: float

    @property
    def applicable(self) -> bool:
        return self.g_norm > 0

    @property
    def certificate_margin(self) -> float:
        return self.certificate_rhs - self.certificate_lhs


def controllability_at(
    sys: SystemParams,
    meshes: Meshes,
    g,
    eps: float,
    cg_tol: float = 1e-10,
    cg_maxiter: int = 500,
) -> ControllabilityVerdict:
    """Run HUM at the given ε and measure both controllability constants.

    At the minimizer J_ε ≤ 0 and ‖v‖² + ‖y^N‖²/ε = −2J_ε, so the certificate
    compares ‖y^N‖² with 2ε|J_ε|.
    """
    space = meshes[0]
    hum = hum_solve(sys, meshes, g, eps, cg_tol, cg_maxiter)
    g_values = np.asarray(g.values if isinstance(g, GridFn) else g, dtype=np.complex128)
    g_norm = math.sqrt(weighted_norm_sq(space, g_values))
    terminal_constant = hum.terminal_norm / (math.sqrt(eps) * g_norm) if g_norm > 0 else None
    control_constant = hum.control_norm / g_norm if g_norm > 0 else None
    return ControllabilityVerdict(
        hum=hum,
        g_norm=g_norm,
        terminal_constant=terminal_constant,
        control_constant=control_constant,
        certificate_lhs=hum.terminal_norm**2,
        certificate_rhs=2.0 * eps * abs(hum.cost),
    )


def verify_relaxed_controllability(
    sys: SystemParams,
    meshes: Meshes,
    g,
    vartheta: float,
    C_pen: float,
    cg_tol: float = 1e-10,
    cg_maxiter: int = 500,
) -> ControllabilityVerdict:
    """Controllability constants at the penalty ε = penalty_phi(Δx)."""
    eps = penalty_phi(meshes[0].dx, vartheta, C_pen)
    return controllability_at(sys, meshes, g, eps, cg_tol, cg_maxiter)


def epsilon_ladder(
    sys: SystemParams,
    meshes: Meshes,
    g,
    epsilons: Sequence[float],
    cg_tol: float = 1e-10,
    cg_maxiter: int = 500,
) -> List[Dict[str, float]]:
    rows: List[Dict[str, float]] = []
    for eps in sorted(epsilons, reverse=True):
        verdict = controllability_at(sys, meshes, g, eps, cg_tol, cg_maxiter)
        row = verdict.hum.as_record()
        row.update(
            {
                "M": meshes[0].M,
                "N": meshes[1].N,
                "certificate_lhs": verdict.certificate_lhs,
                "certificate_rhs": verdict.certificate_rhs,
                "certificate_margin": verdict.certificate_margin,
            }
        )
        rows.append(row)
    return rows


def refinement_table(
    sys: SystemParams,
    family: Sequence[Tuple[int, int]],
    initial,
    vartheta: float,
    C_pen: float,
    cg_tol: float = 1e-10,
    cg_maxiter: int = 500,
    dx_hat: float = 1.0,
    dx_tilde_constant: float = 1.0,
) -> List[Dict[str, object]]:
    """HUM at ε = penalty_phi(Δx) on each mesh; ``initial`` maps a space mesh to g."""
    rows: List[Dict[str, object]] = []
    for M, N in family:
        meshes = build_meshes(M, N, sys.T)
        verdict = verify_relaxed_controllability(sys, meshes, initial(meshes[0]), vartheta, C_pen, cg_tol, cg_maxiter)
        dx, dt = meshes[0].dx, meshes[1].dt
        row: Dict[str, object] = dict(verdict.hum.as_record())
        row.update(
            {
                "M": M,
                "N": N,
                "dx": dx,
                "dt": dt,
                "g_norm": verdict.g_norm,
                "terminal_constant": verdict.terminal_constant,
                "control_constant": verdict.control_constant,
                "certificate_margin": verdict.certificate_margin,
                "dx_ok": dx <= min(dx_hat, dx_tilde(sys, vartheta, dx_tilde_constant)),
                "dt_ok": dt <= dt_bound(sys, dx, vartheta),
            }
        )
        rows.append(row)
    return rows
