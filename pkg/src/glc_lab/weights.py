"""Carleman weights, the parameter regime and numerical audits of the weight lemmas.

All weights are produced from log ρ = −s·varφ (non-negative), exponentiated once
per use, so discrete stencils of ρ are evaluated as exp(log ρ_src − log ρ_tgt).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
import logging
import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from glc_lab.grid import (
    GridFn,
    SpaceMesh,
    SpaceSet,
    TimeMesh,
    TimeSet,
    build_meshes,
    space_operator,
    target_set,
)


logger = logging.getLogger(__name__)

_EXP_LIMIT = 700.0


class PsiError(ValueError):
    pass


class WeightError(ValueError):
    pass


class RegimeError(ValueError):
    pass


@dataclass(frozen=True)
class WeightParams:
    lam: float
    tau: float
    delta: float
    c0: float
    epsilon0: float
    tau0: float = 1.0
    k_margin: float = 0.1
    K: Optional[float] = None

    def __post_init__(self) -> None:
        if self.lam < 1:
            raise WeightError(f"lambda must be >= 1 (got {self.lam})")
        if self.tau <= 0:
            raise WeightError(f"tau must be positive (got {self.tau})")
        if not 0 < self.delta <= 0.5:
            raise WeightError(f"delta must lie in (0, 1/2] (got {self.delta})")
        if self.c0 <= 0:
            raise WeightError(f"c0 must be positive (got {self.c0})")
        if not 0 < self.epsilon0 < 1:
            raise WeightError(f"epsilon0 must lie in (0, 1) (got {self.epsilon0})")
        if self.tau0 < 1:
            raise WeightError(f"tau0 must be >= 1 (got {self.tau0})")
        if self.k_margin <= 0:
            raise WeightError(f"k_margin must be positive (got {self.k_margin})")

    def with_tau(self, tau: float) -> "WeightParams":
        return replace(self, tau=tau)


@dataclass(frozen=True)
class PsiProfile:
    value: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]
    second_derivative: Callable[[np.ndarray], np.ndarray]

    @classmethod
    def quadratic(cls, x_star: float) -> "PsiProfile":
        return cls(
            value=lambda x: 1.0 + x_star**2 - (x - x_star) ** 2,
            derivative=lambda x: 2.0 * (x_star - x),
            second_derivative=lambda x: np.full_like(np.asarray(x, dtype=float), -2.0),
        )


@dataclass(frozen=True)
class PsiField:
    x_star: float
    omega0: Tuple[float, float]
    mesh: SpaceMesh
    values: Dict[SpaceSet, np.ndarray]
    derivative: Dict[SpaceSet, np.ndarray]
    second_derivative: Dict[SpaceSet, np.ndarray]
    c0_admissible: float
    margin: float

    @property
    def max_value(self) -> float:
        return float(max(np.max(v) for v in self.values.values()))


def build_psi(
    omega0: Tuple[float, float],
    c0: float,
    margin: float,
    mesh: SpaceMesh,
    profile: Optional[PsiProfile] = None,
) -> PsiField:
    """Sample ψ on ℳ̄ and ℳ* and validate the three sign/gradient conditions.

    The default profile is ψ(x) = 1 + x*² − (x − x*)² peaking at the midpoint x* of ω0.
    ``margin`` is the gap between max ψ and the default K.
    """
    a, b = omega0
    if not 0 < a < b < 1:
        raise PsiError(f"omega0 must be an open subinterval of (0, 1), got {omega0}")
    x_star = 0.5 * (a + b)
    profile = profile or PsiProfile.quadratic(x_star)

    values: Dict[SpaceSet, np.ndarray] = {}
    derivative: Dict[SpaceSet, np.ndarray] = {}
    second: Dict[SpaceSet, np.ndarray] = {}
    for kind in (SpaceSet.CLOSURE, SpaceSet.DUAL):
        x = mesh.nodes(kind)
        values[kind] = np.broadcast_to(np.asarray(profile.value(x), dtype=float), x.shape).copy()
        derivative[kind] = np.broadcast_to(np.asarray(profile.derivative(x), dtype=float), x.shape).copy()
        second[kind] = np.broadcast_to(np.asarray(profile.second_derivative(x), dtype=float), x.shape).copy()

    for kind in (SpaceSet.CLOSURE, SpaceSet.DUAL):
        bad = np.flatnonzero(values[kind] <= 0)
        if bad.size:
            x = mesh.nodes(kind)[bad[0]]
            raise PsiError(f"psi > 0 fails at x={x:.6g} ({kind.value} node {bad[0]}): psi={values[kind][bad[0]]:.6g}")
    d_closure = derivative[SpaceSet.CLOSURE]
    if not d_closure[0] > 0:
        raise PsiError(f"psi_x(0) > 0 fails at x=0: psi_x={d_closure[0]:.6g}")
    if not d_closure[-1] < 0:
        raise PsiError(f"psi_x(1) < 0 fails at x=1: psi_x={d_closure[-1]:.6g}")

    outside: List[float] = []
    for kind in (SpaceSet.CLOSURE, SpaceSet.DUAL):
        x = mesh.nodes(kind)
        mask = (x < a) | (x > b)
        slopes = np.abs(derivative[kind][mask])
        outside.extend(slopes.tolist())
        weak = np.flatnonzero(slopes <= c0)
        if weak.size:
            node = x[mask][weak[0]]
            raise PsiError(
                f"|psi_x| > c0 outside closure of omega0 fails at x={node:.6g}: "
                f"|psi_x|={slopes[weak[0]]:.6g} <= c0={c0:.6g}"
            )
    c0_admissible = float(min(outside)) if outside else math.inf
    logger.info("build_psi x_star=%.4f max_psi=%.4f c0_admissible=%.4f", x_star, float(np.max(values[SpaceSet.CLOSURE])), c0_admissible)
    return PsiField(x_star, (a, b), mesh, values, derivative, second, c0_admissible, margin)


def theta(t: np.ndarray, T: float, delta: float) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return 1.0 / ((t + delta * T) * (T + delta * T - t))


def theta_prime(t: np.ndarray, T: float, delta: float) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return theta(t, T, delta) ** 2 * (2.0 * t - T)


@dataclass(frozen=True)
class WeightSet:
    """Weights sampled on {ℳ̄, ℳ*} × 𝒩̄*; space-only factors are kept per space set."""

    params: WeightParams
    psi: PsiField
    space_mesh: SpaceMesh
    time_mesh: TimeMesh
    K: float
    theta: np.ndarray
    phi: Dict[SpaceSet, np.ndarray]
    varphi: Dict[SpaceSet, np.ndarray]
    log_rho: Dict[SpaceSet, np.ndarray]

    @property
    def s(self) -> np.ndarray:
        return self.params.tau * self.theta

    @property
    def times(self) -> np.ndarray:
        return self.time_mesh.nodes(TimeSet.DUAL_CLOSURE)

    def _field(self, values: np.ndarray, space: SpaceSet) -> GridFn:
        return GridFn(values, space, TimeSet.DUAL_CLOSURE, self.space_mesh, self.time_mesh)

    def _stored(self, space: SpaceSet) -> Tuple[SpaceSet, slice]:
        if space == SpaceSet.DUAL:
            return SpaceSet.DUAL, slice(None)
        if space == SpaceSet.INTERIOR:
            return SpaceSet.CLOSURE, slice(1, -1)
        if space == SpaceSet.BOUNDARY:
            return SpaceSet.CLOSURE, [0, -1]
        return SpaceSet.CLOSURE, slice(None)

    def log_rho_on(self, space: SpaceSet) -> np.ndarray:
        stored, index = self._stored(space)
        return self.log_rho[stored][:, index]

    def r(self, space: SpaceSet, power: float = 1.0) -> GridFn:
        return self._field(np.exp(-power * self.log_rho_on(space)), space)

    def rho(self, space: SpaceSet) -> GridFn:
        return self._field(np.exp(self.log_rho_on(space)), space)

    def s_field(self, space: SpaceSet, power: float = 1.0) -> GridFn:
        n = len(self.space_mesh.nodes(space))
        return self._field(np.repeat((self.s**power)[:, None], n, axis=1), space)

    def static(self, values: Dict[SpaceSet, np.ndarray], space: SpaceSet) -> np.ndarray:
        stored, index = self._stored(space)
        return values[stored][index]


def build_weights(params: WeightParams, psi: PsiField, meshes: Tuple[SpaceMesh, TimeMesh]) -> WeightSet:
    space, time = meshes
    if psi.mesh != space:
        raise WeightError("psi was sampled on a different space mesh")
    max_psi = psi.max_value
    K = params.K if params.K is not None else max_psi + psi.margin
    if K <= max_psi:
        raise WeightError(f"K={K:.6g} must exceed max psi={max_psi:.6g} so that varphi < 0")
    if params.lam * K > _EXP_LIMIT:
        raise WeightError(f"e^(lambda*K) overflows: lambda*K={params.lam * K:.4g}; use a smaller lambda or K")

    T, delta = time.T, params.delta
    if time.dt > delta * T:
        raise WeightError(f"dt={time.dt:.6g} exceeds delta*T={delta * T:.6g}; theta is not bounded by 2/(delta T^2)")
    th = theta(time.nodes(TimeSet.DUAL_CLOSURE), T, delta)
    if np.any(th <= 0) or np.max(th) > 2.0 / (delta * T * T):
        raise WeightError(f"theta out of range on [0, T + dt/2]: min={np.min(th):.6g} max={np.max(th):.6g}")

    phi: Dict[SpaceSet, np.ndarray] = {}
    varphi: Dict[SpaceSet, np.ndarray] = {}
    log_rho: Dict[SpaceSet, np.ndarray] = {}
    s = params.tau * th
    for kind in (SpaceSet.CLOSURE, SpaceSet.DUAL):
        phi[kind] = np.exp(params.lam * psi.values[kind])
        varphi[kind] = phi[kind] - math.exp(params.lam * K)
        log_rho[kind] = -np.outer(s, varphi[kind])
    worst = max(float(np.max(v)) for v in log_rho.values())
    if worst > _EXP_LIMIT:
        raise WeightError(f"rho = e^(-s varphi) overflows: max s|varphi|={worst:.4g}; reduce tau or lambda")
    logger.info("build_weights tau=%.4g lambda=%.4g K=%.4f max_log_rho=%.3f", params.tau, params.lam, K, worst)
    return WeightSet(params, psi, space, time, K, th, phi, varphi, log_rho)


@dataclass(frozen=True)
class RegimeCondition:
    name: str
    value: float
    bound: float
    margin: float
    passed: bool

    @classmethod
    def upper(cls, name: str, value: float, bound: float) -> "RegimeCondition":
        margin = float(bound) - float(value)
        return cls(name, float(value), float(bound), margin, margin >= 0)

    @classmethod
    def lower(cls, name: str, value: float, bound: float) -> "RegimeCondition":
        margin = float(value) - float(bound)
        return cls(name, float(value), float(bound), margin, margin >= 0)


@dataclass
class RegimeReport:
    conditions: List[RegimeCondition]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions)

    def __getitem__(self, name: str) -> RegimeCondition:
        for condition in self.conditions:
            if condition.name == name:
                return condition
        raise KeyError(name)

    def failures(self, names: Optional[Sequence[str]] = None) -> List[RegimeCondition]:
        return [c for c in self.conditions if not c.passed and (names is None or c.name in names)]

    def as_records(self) -> List[Dict[str, object]]:
        return [asdict(c) for c in self.conditions]


CARLEMAN_CONDITIONS = ("tau_lower", "carleman_dx", "carleman_dt", "dt_delta")
LEMMA_CONDITIONS = ("lemma_dx", "lemma_dt", "dt_delta")


def validate_regime(params: WeightParams, meshes: Tuple[SpaceMesh, TimeMesh]) -> RegimeReport:
    space, time = meshes
    tau, delta, T = params.tau, params.delta, time.T
    dx, dt = space.dx, time.dt
    conditions = [
        RegimeCondition.lower("tau_lower", tau, params.tau0 * (T + T * T)),
        RegimeCondition.upper("carleman_dx", tau * dx / (delta * T**2), params.epsilon0),
        RegimeCondition.upper("carleman_dt", tau**4 * dt / (delta**4 * T**6), params.epsilon0),
        RegimeCondition.upper("lemma_dx", tau * dx / (delta * T**2), 1.0),
        RegimeCondition.upper("lemma_dt", tau * dt / (delta**2 * T**3), 0.5),
        RegimeCondition.upper("dt_unit", dt, 1.0),
        RegimeCondition.upper("dt_delta", dt, delta * T),
    ]
    report = RegimeReport(conditions)
    for failed in report.failures():
        logger.debug("regime condition %s fails value=%.4g bound=%.4g", failed.name, failed.value, failed.bound)
    return report


def require_regime(report: RegimeReport, names: Sequence[str], context: str) -> None:
    failed = report.failures(names)
    if failed:
        detail = ", ".join(f"{c.name} (value={c.value:.4g}, bound={c.bound:.4g})" for c in failed)
        raise RegimeError(f"{context} requires the weight regime: {detail}")


def regime_time_steps(params: WeightParams, T: float) -> int:
    """Smallest N keeping every Δt-dependent condition of the Carleman regime."""
    delta, tau = params.delta, params.tau
    dt_max = min(
        params.epsilon0 * delta**4 * T**6 / tau**4,
        0.5 * delta**2 * T**3 / tau,
        delta * T,
        1.0,
    )
    N = max(2, math.ceil(T / dt_max))
    while (T / N) > dt_max:
        N += 1
    return N


def _log_derivatives(weights: WeightSet, kind: SpaceSet) -> Dict[str, np.ndarray]:
    """g_k = r ∂_x^k ρ and ∂_x g_1 on (𝒩̄*, kind), in closed form."""
    lam = weights.params.lam
    s = weights.s[:, None]
    phi = weights.static(weights.phi, kind)[None, :]
    psi_x = weights.static(weights.psi.derivative, kind)[None, :]
    psi_xx = weights.static(weights.psi.second_derivative, kind)[None, :]
    g1 = -s * lam * phi * psi_x
    g1_prime = -s * lam * phi * (lam * psi_x**2 + psi_xx)
    shape = (len(weights.s), phi.shape[1])
    return {
        "g0": np.ones(shape),
        "g1": np.broadcast_to(g1, shape),
        "g2": g1**2 + g1_prime,
        "g1_prime": np.broadcast_to(g1_prime, shape),
    }


def weighted_stencil(
    weights: WeightSet,
    ops: str,
    source: SpaceSet = SpaceSet.CLOSURE,
    source_factor: Optional[np.ndarray] = None,
) -> np.ndarray:
    """r(target)·(word of A_x, D_x applied to ρ·source_factor), shape (N+1, |target|).

    Each stencil entry contributes data·exp(log ρ_src − log ρ_tgt); nothing of
    size ρ is ever formed.
    """
    matrix = space_operator(weights.space_mesh, ops, source).tocoo()
    target = target_set(ops, source)
    log_src = weights.log_rho_on(source)
    log_tgt = weights.log_rho_on(target)
    terms = matrix.data[None, :] * np.exp(log_src[:, matrix.col] - log_tgt[:, matrix.row])
    if source_factor is not None:
        terms = terms * source_factor[:, matrix.col]
    gather = sp.csr_matrix(
        (np.ones(matrix.nnz), (matrix.row, np.arange(matrix.nnz))),
        shape=(matrix.shape[0], matrix.nnz),
    )
    return np.asarray((gather @ terms.T).T)


@dataclass(frozen=True)
class AuditRow:
    lemma: str
    case: str
    dx: float
    dt: float
    tau: float
    lam: float
    ratio: float


def _restrict_static(values: np.ndarray, source: SpaceSet, target: SpaceSet) -> np.ndarray:
    if source == target:
        return values
    if source == SpaceSet.CLOSURE and target == SpaceSet.INTERIOR:
        return values[:, 1:-1]
    raise WeightError(f"cannot move {source.value} values onto {target.value}")


def _space_lemma_rows(weights: WeightSet) -> List[Tuple[str, str, float]]:
    rows: List[Tuple[str, str, float]] = []
    s = weights.s[:, None]
    dx = weights.space_mesh.dx
    closure = _log_derivatives(weights, SpaceSet.CLOSURE)

    for m in range(3):
        for n in range(3 - m):
            for alpha in range(3 - n):
                ops = "A" * m + "D" * n
                target = target_set(ops)
                factor = None if alpha == 0 else closure[f"g{alpha}"]
                lhs = weighted_stencil(weights, ops, SpaceSet.CLOSURE, factor)
                ref = _log_derivatives(weights, target)[f"g{n + alpha}"]
                bound = s ** (n + alpha) * (s * dx) ** 2
                rows.append(("weight_stencil", f"m={m},n={n},alpha={alpha}", float(np.max(np.abs(lhs - ref) / bound))))

    interior = _log_derivatives(weights, SpaceSet.INTERIOR)
    nested = (
        ("A", "D", interior["g1"], 1),
        ("D", "D", interior["g1_prime"], 1),
        ("D", "A", np.zeros_like(interior["g0"]), 0),
    )
    for outer, inner, ref, n in nested:
        inner_values = weighted_stencil(weights, inner)
        outer_matrix = space_operator(weights.space_mesh, outer, SpaceSet.DUAL)
        lhs = np.asarray((outer_matrix @ inner_values.T).T)
        bound = s**n * (s * dx) ** 2
        rows.append(("weighted_product", f"outer={outer},inner={inner}", float(np.max(np.abs(lhs - ref) / bound))))
    return rows


def _time_lemma_rows(weights: WeightSet) -> List[Tuple[str, str, float]]:
    rows: List[Tuple[str, str, float]] = []
    params = weights.params
    tau, delta = params.tau, params.delta
    T, dt = weights.time_mesh.T, weights.time_mesh.dt
    t_half = weights.times

    # t^-(r) D_t rho against -tau t^-(theta') varphi
    a = weights.log_rho[SpaceSet.CLOSURE]
    lhs = np.expm1(a[1:] - a[:-1]) / dt
    ref = -tau * theta_prime(t_half[:-1], T, delta)[:, None] * weights.varphi[SpaceSet.CLOSURE][None, :]
    bound = dt * (tau / (delta**3 * T**4) + tau**2 / (delta**4 * T**6))
    rows.append(("time_weight", "r D_t rho", float(np.max(np.abs(lhs - ref)) / bound)))

    th = weights.theta
    for l in (1, 2):
        d_theta = np.diff(th**l) / dt
        slack = np.abs(d_theta) - l * T * th[:-1] ** (l + 1)
        measured = max(0.0, float(np.max(slack)) / (dt / (delta ** (l + 2) * T ** (2 * l + 2))))
        rows.append(("theta_power", f"l={l}", measured))

    d_prime = np.diff(theta_prime(t_half, T, delta)) / dt
    scale = T**2 * th[:-1] ** 3 + dt / (delta**4 * T**5)
    rows.append(("theta_prime", "D_t theta'", max(0.0, float(np.max(d_prime / scale)))))

    s_minus = weights.s[:-1, None]
    th_minus = th[:-1, None]
    dx = weights.space_mesh.dx
    eps_x = tau * dx / (delta * T**2)
    sigma_bounds = {
        "DD": (
            "sigma1",
            T * s_minus**2 * th_minus + tau**2 * dt / (delta**4 * T**6) + tau * dt / (delta**3 * T**4) * eps_x**3,
        ),
        "AA": ("sigma2", T * (s_minus * dx) ** 2 * th_minus + tau * dt / (delta**3 * T**4) * eps_x),
        "AD": (
            "sigma3",
            T * s_minus * th_minus * (1 + (s_minus * dx) ** 2) * (1 + dt * T * th_minus),
        ),
    }
    for ops, (label, bound) in sigma_bounds.items():
        values = weighted_stencil(weights, ops)
        d_values = np.diff(values, axis=0) / dt
        rows.append(("time_stencil", label, float(np.max(np.abs(d_values) / bound))))
    return rows


def audit_weight_lemmas(
    params: WeightParams,
    omega0: Tuple[float, float],
    T: float,
    family: Sequence[Tuple[int, int]],
    profile: Optional[PsiProfile] = None,
) -> List[AuditRow]:
    """Remainder ratios of the weight lemmas per mesh of ``family``.

    Every ratio divides the discrete-minus-analytic difference by the claimed
    remainder order; bounded ratios across refinements confirm the order.
    """
    rows: List[AuditRow] = []
    for M, N in family:
        meshes = build_meshes(M, N, T)
        require_regime(validate_regime(params, meshes), LEMMA_CONDITIONS, f"weight audit at M={M} N={N}")
        psi = build_psi(omega0, params.c0, params.k_margin, meshes[0], profile)
        weights = build_weights(params, psi, meshes)
        for lemma, case, ratio in _space_lemma_rows(weights) + _time_lemma_rows(weights):
            rows.append(AuditRow(lemma, case, meshes[0].dx, meshes[1].dt, params.tau, params.lam, ratio))
        logger.info("weight audit M=%d N=%d rows=%d", M, N, len(rows))
    return rows


@dataclass(frozen=True)
class WindowDiagnostics:
    K0: float
    k0: float
    floor: float
    min_window_r2: float

    @property
    def holds(self) -> bool:
        return self.min_window_r2 >= self.floor


def window_diagnostics(weights: WeightSet) -> WindowDiagnostics:
    """K_0, k_0 and the floor of t^+(r²) on ℳ̄ × (T/4, 3T/4)."""
    minus_varphi = -weights.varphi[SpaceSet.CLOSURE]
    K0, k0 = float(np.max(minus_varphi)), float(np.min(minus_varphi))
    T = weights.time_mesh.T
    floor = math.exp(-32.0 * weights.params.tau * K0 / (3.0 * T * T))
    t_primal = weights.time_mesh.primal_times
    window = (t_primal > T / 4) & (t_primal < 3 * T / 4)
    if not np.any(window):
        return WindowDiagnostics(K0, k0, floor, math.inf)
    # t^+ on 𝒩̄ reads slice n+1/2, i.e. row n of the 𝒩̄* storage
    r2 = np.exp(-2.0 * weights.log_rho[SpaceSet.CLOSURE][window])
    return WindowDiagnostics(K0, k0, floor, float(np.min(r2)))
