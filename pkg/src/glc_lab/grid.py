"""Staggered space-time meshes, node-set tagged grid functions and discrete calculus.

Space nodes are stored on the closure x_0..x_{M+1}; the dual set holds the
half nodes x_{j+1/2}, j = 0..M. Time slices are stored time-major, so a single
slice ``values[n]`` is contiguous. Half shifts are index arithmetic on that
storage, never interpolation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
import logging
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp


logger = logging.getLogger(__name__)


class GridError(ValueError):
    pass


class SpaceSet(str, Enum):
    INTERIOR = "interior"
    CLOSURE = "closure"
    DUAL = "dual"
    BOUNDARY = "boundary"


class TimeSet(str, Enum):
    PRIMAL = "primal"
    PRIMAL_CLOSURE = "primal_closure"
    DUAL = "dual"
    DUAL_CLOSURE = "dual_closure"
    BOUNDARY = "boundary"


class Shift(str, Enum):
    PLUS = "+"
    MINUS = "-"


def space_cardinality(kind: SpaceSet, M: int) -> int:
    return {
        SpaceSet.INTERIOR: M,
        SpaceSet.CLOSURE: M + 2,
        SpaceSet.DUAL: M + 1,
        SpaceSet.BOUNDARY: 2,
    }[kind]


def time_cardinality(kind: TimeSet, N: int) -> int:
    return {
        TimeSet.PRIMAL: N,
        TimeSet.PRIMAL_CLOSURE: N + 1,
        TimeSet.DUAL: N,
        TimeSet.DUAL_CLOSURE: N + 1,
        TimeSet.BOUNDARY: 2,
    }[kind]


@dataclass(frozen=True)
class SpaceMesh:
    M: int

    @property
    def dx(self) -> float:
        return 1.0 / (self.M + 1)

    @property
    def primal_nodes(self) -> np.ndarray:
        return np.arange(self.M + 2) * self.dx

    def nodes(self, kind: SpaceSet) -> np.ndarray:
        x = self.primal_nodes
        if kind == SpaceSet.CLOSURE:
            return x
        if kind == SpaceSet.INTERIOR:
            return x[1:-1]
        if kind == SpaceSet.DUAL:
            return (np.arange(self.M + 1) + 0.5) * self.dx
        return np.array([0.0, 1.0])


@dataclass(frozen=True)
class TimeMesh:
    N: int
    T: float

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def primal_times(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.dt

    @property
    def dual_times(self) -> np.ndarray:
        return (np.arange(self.N + 1) + 0.5) * self.dt

    def nodes(self, kind: TimeSet) -> np.ndarray:
        if kind == TimeSet.PRIMAL_CLOSURE:
            return self.primal_times
        if kind == TimeSet.PRIMAL:
            return self.primal_times[1:]
        if kind == TimeSet.DUAL_CLOSURE:
            return self.dual_times
        if kind == TimeSet.DUAL:
            return self.dual_times[:-1]
        return np.array([0.0, self.T])


def build_meshes(M: int, N: int, T: float) -> Tuple[SpaceMesh, TimeMesh]:
    if int(M) != M or M < 2:
        raise GridError(f"M must be an integer >= 2 (got {M}); the dual structure needs two interior nodes")
    if int(N) != N or N < 2:
        raise GridError(f"N must be an integer >= 2 (got {N})")
    if not T > 0:
        raise GridError(f"T must be positive (got {T})")
    return SpaceMesh(int(M)), TimeMesh(int(N), float(T))


@dataclass(frozen=True, eq=False)
class GridFn:
    """Complex field on a (space set) x (time set) product; either factor may be absent.

    ``values`` has shape (n_time, n_space), (n_space,) for static fields or
    (n_time,) for pure time functions.
    """

    values: np.ndarray
    space: Optional[SpaceSet] = None
    time: Optional[TimeSet] = None
    space_mesh: Optional[SpaceMesh] = field(default=None, repr=False)
    time_mesh: Optional[TimeMesh] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.space is None and self.time is None:
            raise GridError("a grid function needs a space tag, a time tag or both")
        values = np.array(self.values, dtype=np.complex128)
        expected: List[int] = []
        if self.time is not None:
            if self.time_mesh is None:
                raise GridError("time-tagged field without a time mesh")
            expected.append(time_cardinality(self.time, self.time_mesh.N))
        if self.space is not None:
            if self.space_mesh is None:
                raise GridError("space-tagged field without a space mesh")
            expected.append(space_cardinality(self.space, self.space_mesh.M))
        if values.shape != tuple(expected):
            raise GridError(
                f"value shape {values.shape} does not match tags space={self.space} time={self.time} "
                f"(expected {tuple(expected)})"
            )
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def sample(
        cls,
        fn: Callable[..., Union[np.ndarray, complex, float]],
        space_mesh: Optional[SpaceMesh] = None,
        space: Optional[SpaceSet] = None,
        time_mesh: Optional[TimeMesh] = None,
        time: Optional[TimeSet] = None,
    ) -> "GridFn":
        """Sample ``fn(x)``, ``fn(t)`` or ``fn(x, t)`` on the tagged nodes."""
        if space is not None and time is not None:
            tt, xx = np.meshgrid(time_mesh.nodes(time), space_mesh.nodes(space), indexing="ij")
            data = fn(xx, tt)
            shape = xx.shape
        elif space is not None:
            nodes = space_mesh.nodes(space)
            data, shape = fn(nodes), nodes.shape
        else:
            nodes = time_mesh.nodes(time)
            data, shape = fn(nodes), nodes.shape
        return cls(np.broadcast_to(np.asarray(data, dtype=np.complex128), shape), space, time, space_mesh, time_mesh)

    def with_values(self, values: np.ndarray, space: Optional[SpaceSet] = None, time: Optional[TimeSet] = None) -> "GridFn":
        return GridFn(
            values,
            self.space if space is None else space,
            self.time if time is None else time,
            self.space_mesh,
            self.time_mesh,
        )

    @property
    def tags(self) -> Tuple[Optional[SpaceSet], Optional[TimeSet]]:
        return self.space, self.time

    def _check_partner(self, other: "GridFn") -> None:
        if self.tags != other.tags:
            raise GridError(f"tag mismatch: {self.tags} vs {other.tags}")
        if self.space_mesh != other.space_mesh or self.time_mesh != other.time_mesh:
            raise GridError("grid functions live on different meshes")

    def _binary(self, other: Union["GridFn", complex, float, np.ndarray], op: Callable) -> "GridFn":
        if isinstance(other, GridFn):
            self._check_partner(other)
            return self.with_values(op(self.values, other.values))
        return self.with_values(op(self.values, other))

    def __add__(self, other):
        return self._binary(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __rsub__(self, other):
        return self._binary(other, lambda a, b: b - a)

    def __mul__(self, other):
        return self._binary(other, np.multiply)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._binary(other, np.divide)

    def __neg__(self) -> "GridFn":
        return self.with_values(-self.values)

    def conj(self) -> "GridFn":
        return self.with_values(np.conj(self.values))

    def abs2(self) -> "GridFn":
        return self.with_values(np.abs(self.values) ** 2)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0


def _space_axis(u: GridFn) -> int:
    if u.space is None:
        raise GridError("space operator applied to a pure time function")
    return u.values.ndim - 1


def _time_axis(u: GridFn) -> int:
    if u.time is None:
        raise GridError("time operator applied to a static field")
    return 0


def _take(values: np.ndarray, axis: int, index) -> np.ndarray:
    sl = [slice(None)] * values.ndim
    sl[axis] = index
    return values[tuple(sl)]


_SHIFT_TARGET = {SpaceSet.CLOSURE: SpaceSet.DUAL, SpaceSet.DUAL: SpaceSet.INTERIOR}


def shift_space(u: GridFn, direction: Shift) -> GridFn:
    """s_±: closure → dual, dual → interior."""
    axis = _space_axis(u)
    target = _SHIFT_TARGET.get(u.space)
    if target is None:
        mesh = u.space_mesh
        if u.space == SpaceSet.INTERIOR:
            node = f"x_{mesh.M + 1} = 1" if direction == Shift.PLUS else "x_0 = 0"
        else:
            node = "x = 0 - dx/2" if direction == Shift.MINUS else "x = 1 + dx/2"
        raise GridError(f"s{direction.value} of a field on {u.space.value} leaves the mesh: needs {node}")
    index = slice(1, None) if direction == Shift.PLUS else slice(None, -1)
    return u.with_values(_take(u.values, axis, index), space=target)


def avg_x(u: GridFn) -> GridFn:
    return (shift_space(u, Shift.PLUS) + shift_space(u, Shift.MINUS)) * 0.5


def diff_x(u: GridFn) -> GridFn:
    return (shift_space(u, Shift.PLUS) - shift_space(u, Shift.MINUS)) / u.space_mesh.dx


def diff2_x(u: GridFn) -> GridFn:
    return diff_x(diff_x(u))


def shift_t(u: GridFn, direction: Shift, onto: Optional[TimeSet] = None) -> GridFn:
    """t^±.

    𝒩̄* → 𝒩 and 𝒩̄ → 𝒩* by default. A field on 𝒩̄* may also be shifted by t^+
    onto 𝒩̄ (t^+q(t^n) = q^{n+1/2}, n = 0..N) or onto ∂𝒩 = {0, T}.
    """
    axis = _time_axis(u)
    N = u.time_mesh.N
    if u.time == TimeSet.DUAL_CLOSURE:
        if onto in (None, TimeSet.PRIMAL):
            index = slice(1, None) if direction == Shift.PLUS else slice(None, -1)
            return u.with_values(_take(u.values, axis, index), time=TimeSet.PRIMAL)
        if direction == Shift.PLUS and onto == TimeSet.PRIMAL_CLOSURE:
            return u.with_values(u.values, time=TimeSet.PRIMAL_CLOSURE)
        if direction == Shift.PLUS and onto == TimeSet.BOUNDARY:
            return u.with_values(_take(u.values, axis, [0, N]), time=TimeSet.BOUNDARY)
    elif u.time == TimeSet.PRIMAL_CLOSURE and onto in (None, TimeSet.DUAL):
        index = slice(1, None) if direction == Shift.PLUS else slice(None, -1)
        return u.with_values(_take(u.values, axis, index), time=TimeSet.DUAL)
    raise GridError(f"t{direction.value} is not defined from {u.time} onto {onto}")


def diff_t(u: GridFn) -> GridFn:
    return (shift_t(u, Shift.PLUS) - shift_t(u, Shift.MINUS)) / u.time_mesh.dt


def restrict(u: GridFn, space: Optional[SpaceSet] = None, time: Optional[TimeSet] = None) -> GridFn:
    """Restrict closures to their interior or boundary parts."""
    out = u
    if space is not None and space != out.space:
        axis = _space_axis(out)
        M = out.space_mesh.M
        if out.space != SpaceSet.CLOSURE or space not in (SpaceSet.INTERIOR, SpaceSet.BOUNDARY):
            raise GridError(f"cannot restrict {out.space} to {space}")
        index = slice(1, -1) if space == SpaceSet.INTERIOR else [0, M + 1]
        out = out.with_values(_take(out.values, axis, index), space=space)
    if time is not None and time != out.time:
        axis = _time_axis(out)
        N = out.time_mesh.N
        if out.time == TimeSet.PRIMAL_CLOSURE and time == TimeSet.PRIMAL:
            index = slice(1, None)
        elif out.time == TimeSet.PRIMAL_CLOSURE and time == TimeSet.BOUNDARY:
            index = [0, N]
        elif out.time == TimeSet.DUAL_CLOSURE and time == TimeSet.DUAL:
            index = slice(None, -1)
        else:
            raise GridError(f"cannot restrict {out.time} to {time}")
        out = out.with_values(_take(out.values, axis, index), time=time)
    return out


def space_weights(mesh: SpaceMesh, kind: SpaceSet) -> np.ndarray:
    """Quadrature weights: Δx on interior and dual nodes, 1 on boundary nodes."""
    if kind == SpaceSet.BOUNDARY:
        return np.ones(2)
    if kind == SpaceSet.CLOSURE:
        w = np.full(mesh.M + 2, mesh.dx)
        w[[0, -1]] = 1.0
        return w
    return np.full(space_cardinality(kind, mesh.M), mesh.dx)


def time_weights(mesh: TimeMesh, kind: TimeSet) -> np.ndarray:
    if kind == TimeSet.BOUNDARY:
        return np.ones(2)
    if kind in (TimeSet.PRIMAL, TimeSet.DUAL):
        return np.full(mesh.N, mesh.dt)
    raise GridError(f"no discrete integral is defined over {kind.value}")


def _resolve_space(u: GridFn, over: Optional[SpaceSet]) -> GridFn:
    if over is None or over == u.space:
        return u
    return restrict(u, space=over)


def _resolve_time(u: GridFn, over: Optional[TimeSet]) -> GridFn:
    if over is None or over == u.time:
        return u
    return restrict(u, time=over)


def integral_space(u: GridFn, over: Optional[SpaceSet] = None) -> Union[complex, np.ndarray]:
    """∫ over a space set; the closure integral is interior plus boundary.

    Returns a complex number for static fields and one value per time slice otherwise.
    """
    u = _resolve_space(u, over)
    w = space_weights(u.space_mesh, u.space)
    result = u.values @ w
    return complex(result) if u.time is None else result


def integral_time(u: GridFn, over: Optional[TimeSet] = None) -> Union[complex, np.ndarray]:
    u = _resolve_time(u, over)
    w = time_weights(u.time_mesh, u.time)
    result = np.tensordot(w, u.values, axes=(0, 0))
    return complex(result) if u.space is None else result


def integral(u: GridFn, space: Optional[SpaceSet] = None, time: Optional[TimeSet] = None) -> complex:
    """Full discrete integral over every axis the field carries."""
    u = _resolve_time(_resolve_space(u, space), time)
    if u.space is None:
        return integral_time(u)
    if u.time is None:
        return integral_space(u)
    ws = space_weights(u.space_mesh, u.space)
    wt = time_weights(u.time_mesh, u.time)
    return complex(wt @ u.values @ ws)


def inner_product(u: GridFn, v: GridFn, space: Optional[SpaceSet] = None, time: Optional[TimeSet] = None) -> complex:
    u._check_partner(v)
    return integral(u * v.conj(), space, time)


def norm_sq(u: GridFn, space: Optional[SpaceSet] = None, time: Optional[TimeSet] = None) -> float:
    return float(integral(u.abs2(), space, time).real)


def trace_normal(u: GridFn) -> Tuple[GridFn, GridFn]:
    """Trace on ∂ℳ of a dual-node field and the outward normal (−1 at x = 0, +1 at x = 1)."""
    if u.space != SpaceSet.DUAL:
        raise GridError(f"trace is defined for dual-node fields, got {u.space}")
    axis = _space_axis(u)
    trace = u.with_values(_take(u.values, axis, [0, -1]), space=SpaceSet.BOUNDARY)
    normal = GridFn(np.array([-1.0, 1.0]), SpaceSet.BOUNDARY, None, u.space_mesh)
    return trace, normal


def space_operator(mesh: SpaceMesh, ops: str, source: SpaceSet = SpaceSet.CLOSURE) -> sp.csr_matrix:
    """Sparse matrix of a word in ``A`` and ``D`` (applied right to left) starting from ``source``.

    Every factor is a pair of index selections s_± combined with weights 1/2 or ±1/Δx.
    """
    matrix = sp.identity(space_cardinality(source, mesh.M), format="csr", dtype=float)
    kind = source
    for op in reversed(ops):
        if kind not in _SHIFT_TARGET:
            raise GridError(f"operator word {ops!r} leaves the mesh from {source.value}")
        n_in = space_cardinality(kind, mesh.M)
        n_out = n_in - 1
        plus = sp.eye(n_out, n_in, k=1, format="csr")
        minus = sp.eye(n_out, n_in, k=0, format="csr")
        if op == "A":
            step = 0.5 * (plus + minus)
        elif op == "D":
            step = (plus - minus) / mesh.dx
        else:
            raise GridError(f"unknown operator letter {op!r}")
        matrix = (step @ matrix).tocsr()
        kind = _SHIFT_TARGET[kind]
    return matrix


def target_set(ops: str, source: SpaceSet = SpaceSet.CLOSURE) -> SpaceSet:
    kind = source
    for _ in ops:
        kind = _SHIFT_TARGET[kind]
    return kind


def random_field(
    rng: np.random.Generator,
    space_mesh: Optional[SpaceMesh] = None,
    space: Optional[SpaceSet] = None,
    time_mesh: Optional[TimeMesh] = None,
    time: Optional[TimeSet] = None,
) -> GridFn:
    """Complex Gaussian field with unit variance per component."""
    shape = []
    if time is not None:
        shape.append(time_cardinality(time, time_mesh.N))
    if space is not None:
        shape.append(space_cardinality(space, space_mesh.M))
    values = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return GridFn(values, space, time, space_mesh, time_mesh)


@dataclass(frozen=True)
class IdentityResidual:
    identity: str
    residual: float
    scale: float

    @property
    def relative(self) -> float:
        return self.residual / self.scale if self.scale > 0 else 0.0


def _record(records: Dict[str, IdentityResidual], name: str, lhs, rhs, *pieces) -> None:
    lhs_v = np.asarray(lhs.values if isinstance(lhs, GridFn) else lhs)
    rhs_v = np.asarray(rhs.values if isinstance(rhs, GridFn) else rhs)
    residual = float(np.max(np.abs(lhs_v - rhs_v))) if lhs_v.size else 0.0
    scale = max([1.0, float(np.max(np.abs(lhs_v), initial=0.0))] + [
        float(np.max(np.abs(np.asarray(p.values if isinstance(p, GridFn) else p)), initial=0.0)) for p in pieces
    ])
    previous = records.get(name)
    if previous is None or residual / scale > previous.relative:
        records[name] = IdentityResidual(name, residual, scale)


def check_identities(
    M: int,
    N: int,
    T: float,
    seed: Union[int, Sequence[int]],
    samples: int = 1,
    fields: Optional[Callable[[np.random.Generator, SpaceMesh, TimeMesh], Tuple[GridFn, GridFn, GridFn, GridFn, GridFn, GridFn]]] = None,
) -> List[IdentityResidual]:
    """Evaluate both sides of the discrete product rules and summation-by-parts identities.

    Each sample draws fresh complex Gaussian fields; the worst relative residual
    per identity is kept. ``fields`` replaces the random draw (used for the
    constant-field check).
    """
    space, time = build_meshes(M, N, T)
    rng = np.random.default_rng(seed)
    dx, dt = space.dx, time.dt
    records: Dict[str, IdentityResidual] = {}
    for _ in range(samples):
        if fields is not None:
            u, v, w, f, g, h = fields(rng, space, time)
        else:
            u = random_field(rng, space, SpaceSet.CLOSURE)
            v = random_field(rng, space, SpaceSet.CLOSURE)
            w = random_field(rng, space, SpaceSet.DUAL)
            f = random_field(rng, time_mesh=time, time=TimeSet.DUAL_CLOSURE)
            g = random_field(rng, time_mesh=time, time=TimeSet.DUAL_CLOSURE)
            h = random_field(rng, time_mesh=time, time=TimeSet.PRIMAL_CLOSURE)
        h2 = h.with_values(h.values[::-1].copy())

        lhs = diff_x(u * v)
        rhs = diff_x(u) * avg_x(v) + avg_x(u) * diff_x(v)
        _record(records, "leibniz_diff_x", lhs, rhs, diff_x(u) * avg_x(v))

        lhs = avg_x(u * v)
        rhs = avg_x(u) * avg_x(v) + diff_x(u) * diff_x(v) * (dx * dx / 4.0)
        _record(records, "leibniz_avg_x", lhs, rhs, avg_x(u) * avg_x(v))

        lhs = avg_x(avg_x(u))
        rhs = restrict(u, space=SpaceSet.INTERIOR) + diff2_x(u) * (dx * dx / 4.0)
        _record(records, "avg_square", lhs, rhs, diff2_x(u) * (dx * dx / 4.0))

        _record(records, "commute_avg_diff", diff_x(avg_x(u)), avg_x(diff_x(u)), diff_x(avg_x(u)))

        tr_w, n_x = trace_normal(w)
        u_int = restrict(u, space=SpaceSet.INTERIOR)
        u_bnd = restrict(u, space=SpaceSet.BOUNDARY)
        lhs = integral(u_int * diff_x(w))
        rhs = -integral(w * diff_x(u)) + integral(u_bnd * tr_w * n_x)
        _record(records, "sbp_diff_x", lhs, rhs, integral(w * diff_x(u)))

        lhs = integral(u_int * avg_x(w))
        rhs = integral(w * avg_x(u)) - dx / 2.0 * integral(u_bnd * tr_w)
        _record(records, "sbp_avg_x", lhs, rhs, integral(w * avg_x(u)))

        closure = norm_sq(u, SpaceSet.CLOSURE)
        split = norm_sq(u, SpaceSet.INTERIOR) + norm_sq(u, SpaceSet.BOUNDARY)
        _record(records, "closure_norm_split", closure, split, closure)

        for label, a, b in (("dual", f, g), ("primal", h, h2)):
            lhs = diff_t(a * b)
            first = diff_t(a) * shift_t(b, Shift.MINUS) + shift_t(a, Shift.PLUS) * diff_t(b)
            second = diff_t(a) * shift_t(b, Shift.PLUS) + shift_t(a, Shift.MINUS) * diff_t(b)
            _record(records, f"leibniz_t_{label}_a", lhs, first, diff_t(a) * shift_t(b, Shift.MINUS))
            _record(records, f"leibniz_t_{label}_b", lhs, second, diff_t(a) * shift_t(b, Shift.PLUS))

            mod2 = a * a.conj()
            da = diff_t(a)
            lhs = shift_t(a, Shift.PLUS) * da.conj() + shift_t(a.conj(), Shift.PLUS) * da
            rhs = diff_t(mod2) + da.abs2() * dt
            _record(records, f"energy_t_plus_{label}", lhs, rhs, da.abs2() * dt)
            lhs = shift_t(a, Shift.MINUS) * da.conj() + shift_t(a.conj(), Shift.MINUS) * da
            rhs = diff_t(mod2) - da.abs2() * dt
            _record(records, f"energy_t_minus_{label}", lhs, rhs, da.abs2() * dt)

        lhs = integral(h.with_values(h.values[1:], time=TimeSet.PRIMAL) * shift_t(f, Shift.MINUS))
        rhs = integral(shift_t(h, Shift.PLUS) * restrict(f, time=TimeSet.DUAL))
        _record(records, "shift_pairing_t", lhs, rhs, lhs)

        h_primal = restrict(h, time=TimeSet.PRIMAL)
        h_bnd = restrict(h, time=TimeSet.BOUNDARY)
        n_t = GridFn(np.array([-1.0, 1.0]), None, TimeSet.BOUNDARY, None, time)
        lhs = integral(h_primal * diff_t(f))
        rhs = -integral(restrict(f, time=TimeSet.DUAL) * diff_t(h)) + integral(h_bnd * shift_t(f, Shift.PLUS, TimeSet.BOUNDARY) * n_t)
        _record(records, "sbp_t", lhs, rhs, integral(restrict(f, time=TimeSet.DUAL) * diff_t(h)))

        lhs = integral(shift_t(f, Shift.MINUS) * diff_t(g))
        rhs = -integral(diff_t(f) * shift_t(g, Shift.PLUS)) + integral(shift_t(f * g, Shift.PLUS, TimeSet.BOUNDARY) * n_t)
        _record(records, "sbp_t_dual", lhs, rhs, integral(diff_t(f) * shift_t(g, Shift.PLUS)))

        lhs = integral(shift_t(h, Shift.PLUS) * diff_t(h2))
        rhs = -integral(shift_t(h2, Shift.MINUS) * diff_t(h)) + integral(restrict(h * h2, time=TimeSet.BOUNDARY) * n_t)
        _record(records, "sbp_t_primal", lhs, rhs, integral(shift_t(h2, Shift.MINUS) * diff_t(h)))

    logger.info("identities M=%d N=%d seed=%s samples=%d worst=%.3e", M, N, seed, samples,
                max(r.relative for r in records.values()))
    return sorted(records.values(), key=lambda r: r.identity)
