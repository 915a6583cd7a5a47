"""Implicit forward and adjoint Ginzburg–Landau schemes with dynamic boundary rows."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import solve_banded

from glc_lab.grid import GridFn, SpaceMesh, SpaceSet, TimeMesh, TimeSet, build_meshes, space_weights
from glc_lab.weights import RegimeError


logger = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class Direction(str, Enum):
    FORWARD = "forward"
    ADJOINT = "adjoint"


@dataclass(frozen=True)
class SystemParams:
    alpha: float
    beta: float
    c: float
    gamma: float
    T: float
    omega: Tuple[float, float]
    omega0: Tuple[float, float]

    def __post_init__(self) -> None:
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive (got {self.alpha})")
        if not self.T > 0:
            raise ValueError(f"T must be positive (got {self.T})")
        a, b = self.omega
        a0, b0 = self.omega0
        if not 0 <= a < a0 < b0 < b <= 1:
            raise ValueError(f"need closure of omega0={self.omega0} inside omega={self.omega} inside (0, 1)")
        object.__setattr__(self, "omega", (float(a), float(b)))
        object.__setattr__(self, "omega0", (float(a0), float(b0)))

    @property
    def zeroth_order_bound(self) -> float:
        return max(abs(self.c), abs(self.gamma))

    def diffusion(self, direction: Direction) -> complex:
        return complex(self.alpha, self.beta if direction == Direction.FORWARD else -self.beta)

    def reaction(self, direction: Direction) -> complex:
        return complex(self.c, self.gamma if direction == Direction.FORWARD else -self.gamma)

    def omega_indices(self, mesh: SpaceMesh) -> np.ndarray:
        """Closure indices j of interior nodes with x_j in [a, b)."""
        a, b = self.omega
        x = mesh.primal_nodes
        j = np.arange(1, mesh.M + 1)
        return j[(x[j] >= a) & (x[j] < b)]


@dataclass(frozen=True)
class TridiagonalMatrix:
    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray

    @property
    def size(self) -> int:
        return len(self.diag)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        out = self.diag * x
        out[:-1] += self.upper * x[1:]
        out[1:] += self.lower * x[:-1]
        return out

    def to_dense(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.upper, 1) + np.diag(self.lower, -1)

    def weighted_adjoint(self, w: np.ndarray) -> "TridiagonalMatrix":
        """W^{-1} A^H W for the diagonal weight W."""
        return TridiagonalMatrix(
            lower=np.conj(self.upper) * w[:-1] / w[1:],
            diag=np.conj(self.diag),
            upper=np.conj(self.lower) * w[1:] / w[:-1],
        )

    def increment_matvec(self, x: np.ndarray, excess: complex) -> np.ndarray:
        """(A − I)x for a matrix whose rows sum to 1 + ``excess``, written with neighbour differences.

        Spatially constant x only sees ``excess``; no diagonal entry is formed.
        """
        out = excess * x
        out[:-1] += self.upper * (x[1:] - x[:-1])
        out[1:] += self.lower * (x[:-1] - x[1:])
        return out

    def dominance_margin(self) -> float:
        off = np.zeros(self.size)
        off[:-1] += np.abs(self.upper)
        off[1:] += np.abs(self.lower)
        return float(np.min(np.abs(self.diag) - off))

    def factorize(self) -> "FactorizedTridiagonal":
        """Thomas pivot sweep and banded storage; the first vanishing pivot is reported by row.

        The sweep only validates the pivots. ``solve`` hands the banded storage to LAPACK,
        which eliminates again on every call.
        """
        diag = self.diag.astype(np.complex128)
        scale = float(np.max(np.abs(diag))) or 1.0
        pivot = diag[0]
        for i in range(self.size):
            if i > 0:
                pivot = diag[i] - self.lower[i - 1] * self.upper[i - 1] / pivot
            if abs(pivot) <= 1e-14 * scale:
                raise SolverError(f"zero pivot at row {i} (|pivot|={abs(pivot):.3e})")
        ab = np.zeros((3, self.size), dtype=np.complex128)
        ab[0, 1:] = self.upper
        ab[1] = diag
        ab[2, :-1] = self.lower
        return FactorizedTridiagonal(self, ab)


@dataclass(frozen=True)
class FactorizedTridiagonal:
    matrix: TridiagonalMatrix
    banded: np.ndarray

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return solve_banded((1, 1), self.banded, rhs, check_finite=False)


def solve_tridiagonal(matrix: TridiagonalMatrix, rhs: np.ndarray) -> np.ndarray:
    return matrix.factorize().solve(np.asarray(rhs, dtype=np.complex128))


def assemble_step_matrix(sys: SystemParams, mesh: SpaceMesh, dt: float, direction: Direction) -> TridiagonalMatrix:
    """Implicit step matrix on ℳ̄; adjoint rows carry conjugate coefficients."""
    n = mesh.M + 2
    dx = mesh.dx
    diffusion = sys.diffusion(direction)
    base = 1.0 + dt * sys.reaction(direction)
    bulk = dt * diffusion / dx**2
    flux = dt * diffusion / dx

    diag = np.full(n, base + 2.0 * bulk, dtype=np.complex128)
    lower = np.full(n - 1, -bulk, dtype=np.complex128)
    upper = np.full(n - 1, -bulk, dtype=np.complex128)
    # dynamic boundary rows; with conjugated coefficients this is exactly W^{-1} A^H W
    diag[[0, -1]] = base + flux
    upper[0] = -flux
    lower[-1] = -flux
    matrix = TridiagonalMatrix(lower, diag, upper)
    margin = matrix.dominance_margin()
    if margin < 0:
        logger.warning("step matrix not diagonally dominant direction=%s M=%d dt=%.3e margin=%.3e", direction.value, mesh.M, dt, margin)
    return matrix


@dataclass(frozen=True)
class ControlField:
    """v on (ω ∩ ℳ) × 𝒩*; ``values[n]`` drives the step t^n → t^{n+1}."""

    indices: np.ndarray
    values: np.ndarray
    space_mesh: SpaceMesh
    time_mesh: TimeMesh

    @classmethod
    def zeros(cls, sys: SystemParams, space: SpaceMesh, time: TimeMesh) -> "ControlField":
        idx = sys.omega_indices(space)
        return cls(idx, np.zeros((time.N, len(idx)), dtype=np.complex128), space, time)

    @classmethod
    def from_adjoint(cls, sys: SystemParams, q: "AdjointTrajectory") -> "ControlField":
        idx = sys.omega_indices(q.space_mesh)
        return cls(idx, q.values[:-1, idx].copy(), q.space_mesh, q.time_mesh)

    def scaled(self, factor: complex) -> "ControlField":
        return ControlField(self.indices, self.values * factor, self.space_mesh, self.time_mesh)

    def to_grid(self) -> GridFn:
        full = np.zeros((self.time_mesh.N, self.space_mesh.M + 2), dtype=np.complex128)
        full[:, self.indices] = self.values
        return GridFn(full, SpaceSet.CLOSURE, TimeSet.DUAL, self.space_mesh, self.time_mesh)

    def norm_sq(self) -> float:
        return float(self.space_mesh.dx * self.time_mesh.dt * np.sum(np.abs(self.values) ** 2))


@dataclass(frozen=True)
class StateTrajectory:
    values: np.ndarray
    control: ControlField
    source: Optional[np.ndarray]
    space_mesh: SpaceMesh
    time_mesh: TimeMesh

    @property
    def terminal(self) -> np.ndarray:
        return self.values[-1]

    def as_grid(self) -> GridFn:
        return GridFn(self.values, SpaceSet.CLOSURE, TimeSet.PRIMAL_CLOSURE, self.space_mesh, self.time_mesh)


@dataclass(frozen=True)
class AdjointTrajectory:
    """q^{1/2}..q^{N+1/2}; row n of ``values`` is the slice at t^{n+1/2}."""

    values: np.ndarray
    space_mesh: SpaceMesh
    time_mesh: TimeMesh

    @property
    def terminal(self) -> np.ndarray:
        return self.values[-1]

    @property
    def initial(self) -> np.ndarray:
        return self.values[0]

    def as_grid(self) -> GridFn:
        return GridFn(self.values, SpaceSet.CLOSURE, TimeSet.DUAL_CLOSURE, self.space_mesh, self.time_mesh)


def weighted_inner(mesh: SpaceMesh, u: np.ndarray, v: np.ndarray) -> complex:
    """⟨u, v⟩_w on ℳ̄: Δx on interior nodes, 1 on the two boundary nodes."""
    return complex(np.sum(space_weights(mesh, SpaceSet.CLOSURE) * u * np.conj(v)))


def weighted_norm_sq(mesh: SpaceMesh, u: np.ndarray) -> float:
    return float(np.sum(space_weights(mesh, SpaceSet.CLOSURE) * np.abs(u) ** 2))


def _as_slice(data, mesh: SpaceMesh) -> np.ndarray:
    values = data.values if isinstance(data, GridFn) else np.asarray(data)
    values = np.asarray(values, dtype=np.complex128)
    if values.shape != (mesh.M + 2,):
        raise SolverError(f"expected a slice on the closure mesh of length {mesh.M + 2}, got shape {values.shape}")
    return values


@dataclass(frozen=True)
class DualityTerms:
    """The three pairings of the duality identity and their Cauchy–Schwarz magnitude."""

    terminal: complex
    initial: complex
    control: complex
    scale: float

    @property
    def defect(self) -> float:
        return abs(self.terminal - self.initial - self.control)

    @property
    def relative(self) -> float:
        return self.defect / self.scale if self.scale > 0 else 0.0


class CglScheme:
    """Forward/adjoint matrices for one (system, mesh, Δt), assembled and pivot-checked once, shared read-only."""

    def __init__(self, sys: SystemParams, space: SpaceMesh, time: TimeMesh) -> None:
        if not math.isclose(time.T, sys.T, rel_tol=1e-14):
            raise SolverError(f"time mesh horizon {time.T} differs from system T={sys.T}")
        bound = time.dt * sys.zeroth_order_bound
        if bound > 0.25:
            raise RegimeError(f"dt*max(|c|,|gamma|)={bound:.4g} exceeds 1/4 (dt={time.dt:.4g})")
        self.sys = sys
        self.space = space
        self.time = time
        self.omega = sys.omega_indices(space)
        self.weights = space_weights(space, SpaceSet.CLOSURE)
        self.forward_matrix = assemble_step_matrix(sys, space, time.dt, Direction.FORWARD)
        self.adjoint_matrix = assemble_step_matrix(sys, space, time.dt, Direction.ADJOINT)
        self._forward = self.forward_matrix.factorize()
        self._adjoint = self.adjoint_matrix.factorize()
        self._forward_excess = time.dt * sys.reaction(Direction.FORWARD)
        self._adjoint_excess = time.dt * sys.reaction(Direction.ADJOINT)
        self._logger = logging.getLogger(__name__)

    def forward(self, g, v: Optional[ControlField] = None, source: Optional[np.ndarray] = None) -> StateTrajectory:
        """y^0 = g, A y^{n+1} = y^n + Δt(1_ω v^{n+1/2} + f^{n+1}).

        Each step solves for the increment y^{n+1} − y^n, so constants follow the scalar recurrence.
        ``source`` (shape (N, M+2)) adds f at t^{n+1} to every row, boundary rows included.
        """
        N, dt = self.time.N, self.time.dt
        v = v if v is not None else ControlField.zeros(self.sys, self.space, self.time)
        if source is not None and source.shape != (N, self.space.M + 2):
            raise SolverError(f"source must have shape {(N, self.space.M + 2)}, got {source.shape}")
        y = np.empty((N + 1, self.space.M + 2), dtype=np.complex128)
        y[0] = _as_slice(g, self.space)
        for n in range(N):
            rhs = -self.forward_matrix.increment_matvec(y[n], self._forward_excess)
            rhs[v.indices] += dt * v.values[n]
            if source is not None:
                rhs += dt * source[n]
            y[n + 1] = y[n] + self._forward.solve(rhs)
        self._logger.debug("forward solve M=%d N=%d |y^N|=%.3e", self.space.M, N, float(np.max(np.abs(y[-1]))))
        return StateTrajectory(y, v, source, self.space, self.time)

    def adjoint(self, q_T) -> AdjointTrajectory:
        N = self.time.N
        q = np.empty((N + 1, self.space.M + 2), dtype=np.complex128)
        q[N] = _as_slice(q_T, self.space)
        for n in range(N, 0, -1):
            q[n - 1] = q[n] - self._adjoint.solve(self.adjoint_matrix.increment_matvec(q[n], self._adjoint_excess))
        self._logger.debug("adjoint solve M=%d N=%d |q^1/2|=%.3e", self.space.M, N, float(np.max(np.abs(q[0]))))
        return AdjointTrajectory(q, self.space, self.time)

    def forward_residual(self, traj: StateTrajectory) -> float:
        dt = self.time.dt
        worst = 0.0
        for n in range(self.time.N):
            rhs = traj.values[n].copy()
            rhs[traj.control.indices] += dt * traj.control.values[n]
            if traj.source is not None:
                rhs += dt * traj.source[n]
            defect = self.forward_matrix.matvec(traj.values[n + 1]) - rhs
            worst = max(worst, float(np.max(np.abs(defect))) / dt)
        return worst

    def adjoint_residual(self, traj: AdjointTrajectory) -> float:
        dt = self.time.dt
        worst = 0.0
        for n in range(self.time.N, 0, -1):
            defect = self.adjoint_matrix.matvec(traj.values[n - 1]) - traj.values[n]
            worst = max(worst, float(np.max(np.abs(defect))) / dt)
        return worst

    def duality_terms(self, g, v: ControlField, q_T) -> "DualityTerms":
        y = self.forward(g, v)
        q = self.adjoint(q_T)
        g = _as_slice(g, self.space)
        q_omega = q.values[:-1, v.indices]
        cell = self.space.dx * self.time.dt
        control_bound = math.sqrt(v.norm_sq() * cell * float(np.sum(np.abs(q_omega) ** 2)))
        return DualityTerms(
            terminal=weighted_inner(self.space, y.terminal, q.terminal),
            initial=weighted_inner(self.space, g, q.initial),
            control=complex(cell * np.sum(v.values * np.conj(q_omega))),
            scale=math.sqrt(weighted_norm_sq(self.space, y.terminal) * weighted_norm_sq(self.space, q.terminal))
            + math.sqrt(weighted_norm_sq(self.space, g) * weighted_norm_sq(self.space, q.initial))
            + control_bound,
        )

    def duality_defect(self, g, v: ControlField, q_T) -> float:
        return self.duality_terms(g, v, q_T).defect


@lru_cache(maxsize=32)
def scheme_for(sys: SystemParams, space: SpaceMesh, time: TimeMesh) -> CglScheme:
    return CglScheme(sys, space, time)


def forward_solve(
    sys: SystemParams,
    meshes: Tuple[SpaceMesh, TimeMesh],
    g,
    v: Optional[ControlField] = None,
    source: Optional[np.ndarray] = None,
) -> StateTrajectory:
    return scheme_for(sys, *meshes).forward(g, v, source)


def adjoint_solve(sys: SystemParams, meshes: Tuple[SpaceMesh, TimeMesh], q_T) -> AdjointTrajectory:
    return scheme_for(sys, *meshes).adjoint(q_T)


def duality_defect(sys: SystemParams, meshes: Tuple[SpaceMesh, TimeMesh], g, v: ControlField, q_T) -> float:
    return scheme_for(sys, *meshes).duality_defect(g, v, q_T)


def residual(traj, sys: SystemParams, meshes: Tuple[SpaceMesh, TimeMesh]) -> float:
    """Largest defect of any scheme equation, in equation units (divided by Δt)."""
    scheme = scheme_for(sys, *meshes)
    if isinstance(traj, AdjointTrajectory):
        return scheme.adjoint_residual(traj)
    return scheme.forward_residual(traj)


def manufactured_solution(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    return np.exp(-t) * np.cos(np.pi * x)


def manufactured_source(sys: SystemParams, space: SpaceMesh, time: TimeMesh) -> np.ndarray:
    """Interior and dynamic-boundary sources at t^{n+1} making e^{−t}cos(πx) exact."""
    tt, xx = np.meshgrid(time.primal_times[1:], space.primal_nodes, indexing="ij")
    y = manufactured_solution(xx, tt)
    reaction = sys.reaction(Direction.FORWARD)
    source = (-1.0 + sys.diffusion(Direction.FORWARD) * np.pi**2 + reaction) * y
    # y_x vanishes at both ends, so only the time derivative and reaction remain
    source[:, [0, -1]] = (-1.0 + reaction) * y[:, [0, -1]]
    return source


@dataclass(frozen=True)
class ConvergenceReport:
    time_steps: List[int]
    time_increments: List[float]
    time_orders: List[float]
    space_sizes: List[int]
    space_increments: List[float]
    space_orders: List[float]

    @property
    def min_time_order(self) -> float:
        return min(self.time_orders)

    @property
    def min_space_order(self) -> float:
        return min(self.space_orders)


def _orders(increments: Sequence[float]) -> List[float]:
    return [math.log2(increments[k] / increments[k + 1]) for k in range(len(increments) - 1)]


def manufactured_convergence(
    sys: SystemParams,
    space_sizes: Sequence[int] = (7, 15, 31, 63),
    time_steps: Sequence[int] = (16, 32, 64, 128),
    fixed_M: int = 63,
    fixed_N: int = 64,
) -> ConvergenceReport:
    """Richardson self-convergence orders of the terminal slice in Δt and in Δx.

    ``space_sizes`` must double M+1 at each level so coarse node j sits on fine node 2j.
    """
    for coarse, fine in zip(space_sizes, space_sizes[1:]):
        if fine + 1 != 2 * (coarse + 1):
            raise SolverError(f"space family must double M+1: {coarse} -> {fine}")

    def terminal(M: int, N: int) -> np.ndarray:
        space, time = build_meshes(M, N, sys.T)
        g = manufactured_solution(space.primal_nodes, 0.0)
        return forward_solve(sys, (space, time), g, source=manufactured_source(sys, space, time)).terminal

    levels = [terminal(fixed_M, N) for N in time_steps]
    time_inc = [float(np.max(np.abs(a - b))) for a, b in zip(levels, levels[1:])]

    levels = [terminal(M, fixed_N) for M in space_sizes]
    space_inc = [float(np.max(np.abs(a - b[::2]))) for a, b in zip(levels, levels[1:])]

    report = ConvergenceReport(
        list(time_steps), time_inc, _orders(time_inc), list(space_sizes), space_inc, _orders(space_inc)
    )
    logger.info("manufactured convergence time_orders=%s space_orders=%s", report.time_orders, report.space_orders)
    return report
