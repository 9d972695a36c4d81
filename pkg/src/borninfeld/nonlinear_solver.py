"""Method-of-lines evolution of the full Born-Infeld equation.

The first-order system u_t = v,

    v_t = [u_xx (1 - v^2) + 2 v u_x v_x] / (1 + u_x^2),

is discretised with second-order central differences (u_tx taken as the
spatial derivative of v) and advanced with classical RK4.

Two choices keep the scheme stable and conservative.  The right-hand side
is evaluated in flux form, Q^{3/2} [D1(u_x / sqrt Q) + v u_x Q^{-3/2} D1 v]
/ (1 + u_x^2) with Q = 1 - v^2 + u_x^2, which is the same expression
rewritten so that the node densities v / sqrt(Q) change by a discrete
divergence.  Every second derivative is then a product of two D1
operators; the compact three-point u_xx would give growing modes at the
grid scale wherever |u_t| > 1.
"""

from __future__ import annotations

import enum
import math
import logging
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numba
import numpy as np

from .exact_family import SelfSimilarParams, eval_uk
from .geometry import DomainError, Grid1D

log = logging.getLogger(__name__)

DEFAULT_CFL = 0.4
BLOWUP_GRADIENT = 1e6


class NonTimelikeError(RuntimeError):
    """The radicand 1 - u_t^2 + u_x^2 turned negative somewhere."""


class NonFiniteError(FloatingPointError):
    pass


class Termination(enum.Enum):
    REACHED_T_END = "ReachedTEnd"
    NON_TIMELIKE = "NonTimelike"
    NON_FINITE = "NonFinite"
    GRADIENT_BLOWUP = "GradientBlowup"


@dataclass
class FieldState:
    grid: Grid1D
    t: float
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        n = self.grid.n + 1
        if self.u.shape != (n,) or self.v.shape != (n,):
            raise ValueError(f"arrays must have length {n}")

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v)))


class BoundaryCondition(Protocol):
    periodic: bool

    def apply(self, t: float, u: np.ndarray, v: np.ndarray) -> None: ...


class Periodic:
    """Periodic closure; node n duplicates node 0."""

    periodic = True

    def apply(self, t, u, v):
        u[-1] = u[0]
        v[-1] = v[0]


class Dirichlet:
    """Dirichlet traces of u at both ends; v is the time derivative of the trace.

    ``left``/``right`` map t to (u, u_t) or to (u, u_t, u_x).  A supplied u_x
    replaces the one-sided difference at that end.  This second condition is
    needed wherever both characteristics enter the domain (|u_t| > 1 at the
    boundary); without it the discrete solution converges to some other
    solution sharing the same trace.
    """

    periodic = False

    def __init__(self, left: Callable[[float], tuple],
                 right: Callable[[float], tuple]):
        self.left = left
        self.right = right

    def values(self, t) -> tuple[tuple, tuple]:
        return self.left(t), self.right(t)

    def apply(self, t, u, v, values=None):
        lt, rt = values or self.values(t)
        u[0], v[0] = lt[0], lt[1]
        u[-1], v[-1] = rt[0], rt[1]

    def slopes(self, t, values=None) -> tuple[float | None, float | None]:
        lt, rt = values or self.values(t)
        return (lt[2] if len(lt) > 2 else None, rt[2] if len(rt) > 2 else None)


def zero_dirichlet() -> Dirichlet:
    return Dirichlet(lambda t: (0.0, 0.0), lambda t: (0.0, 0.0))


def exact_trace_bc(p: SelfSimilarParams, grid: Grid1D, with_slope: bool = True) -> Dirichlet:
    """Dirichlet data (u, u_t and, by default, u_x) read from u_k at the grid ends."""

    k, T = p.k, p.T

    def at(x):
        def trace(t):
            sv = T - t
            if sv <= 0 or abs(x) >= sv:
                raise DomainError("boundary point left the light cone")
            D = sv * sv - x * x
            u = k * (math.log1p(x / sv) - math.log1p(-x / sv))
            if with_slope:
                return u, 2 * k * x / D, 2 * k * sv / D
            return u, 2 * k * x / D
        return trace

    return Dirichlet(at(grid.x_min), at(grid.x_max))


def exact_state(p: SelfSimilarParams, grid: Grid1D, t: float = 0.0) -> FieldState:
    jet = eval_uk(p, t, grid.nodes)
    return FieldState(grid, t, jet.u, jet.u_t)


def _dx(f: np.ndarray, h: float, periodic: bool) -> np.ndarray:
    out = np.empty_like(f)
    out[1:-1] = (f[2:] - f[:-2]) / (2 * h)
    if periodic:
        out[0] = out[-1] = (f[1] - f[-2]) / (2 * h)
    else:
        out[0] = (-3 * f[0] + 4 * f[1] - f[2]) / (2 * h)
        out[-1] = (3 * f[-1] - 4 * f[-2] + f[-3]) / (2 * h)
    return out


def _ux(u, h, periodic, slopes=None):
    ux = _dx(u, h, periodic)
    if slopes is not None:
        if slopes[0] is not None:
            ux[0] = slopes[0]
        if slopes[1] is not None:
            ux[-1] = slopes[1]
    return ux


def _slopes(bc, t):
    fn = getattr(bc, "slopes", None)
    return fn(t) if fn is not None else None


def _accel(u, v, h, periodic, slopes=None):
    """v_t at all nodes (boundary entries meaningful only when periodic)."""
    ux = _ux(u, h, periodic, slopes)
    vx = _dx(v, h, periodic)
    return _flux_accel_nb(np.asarray(v, dtype=float), ux, vx, h, periodic)


def bi_rhs(state: FieldState, bc: BoundaryCondition | None = None) -> np.ndarray:
    """u_tt from the Born-Infeld equation at the grid nodes.

    Spatial derivatives are second-order central differences, one-sided at
    the ends of a non-periodic grid unless the boundary condition supplies
    u_x there.  Boundary entries of a Dirichlet problem are diagnostic only;
    the caller's trace overrides them during time stepping.

    The error is O(h^2) away from the ends.  The node next to a non-periodic
    end carries an O(h) local error, because the outer D1 of D1 D1 u sees
    the end value of u_x with a different error than the central ones; the
    evolved solution still converges at second order.
    """
    periodic = bool(bc is not None and bc.periodic)
    slopes = _slopes(bc, state.t) if bc is not None else None
    ux = _ux(state.u, state.grid.h, periodic, slopes)
    vx = _dx(state.v, state.grid.h, periodic)
    out = _flux_accel_nb(state.v, ux, vx, state.grid.h, periodic)
    if not periodic:
        # restore the diagnostic boundary values zeroed for time stepping
        uxx = _dx(ux, state.grid.h, False)
        v = state.v
        for i in (0, -1):
            out[i] = (uxx[i] * (1 - v[i] ** 2) + 2 * v[i] * ux[i] * vx[i]) / (1 + ux[i] ** 2)
    return out


@numba.njit(cache=True)
def _dx_nb(f, h, periodic, left, right):
    n = f.shape[0]
    out = np.empty(n)
    for i in range(1, n - 1):
        out[i] = (f[i + 1] - f[i - 1]) / (2 * h)
    if periodic:
        out[0] = (f[1] - f[n - 2]) / (2 * h)
        out[n - 1] = out[0]
    else:
        out[0] = left if not np.isnan(left) else (-3 * f[0] + 4 * f[1] - f[2]) / (2 * h)
        out[n - 1] = right if not np.isnan(right) else (3 * f[n - 1] - 4 * f[n - 2] + f[n - 3]) / (2 * h)
    return out


@numba.njit(cache=True)
def _stage_nb(u, v, h, periodic, ends):
    """Apply boundary values ``ends`` (2 x 3: u, u_t, u_x per end) and
    return the acceleration; u and v are modified in place."""
    n = u.shape[0]
    nan = np.nan
    if periodic:
        u[n - 1] = u[0]
        v[n - 1] = v[0]
        ux = _dx_nb(u, h, True, nan, nan)
        vx = _dx_nb(v, h, True, nan, nan)
    else:
        u[0] = ends[0, 0]
        v[0] = ends[0, 1]
        u[n - 1] = ends[1, 0]
        v[n - 1] = ends[1, 1]
        ux = _dx_nb(u, h, False, ends[0, 2], ends[1, 2])
        vx = _dx_nb(v, h, False, nan, nan)
    return _flux_accel_nb(v, ux, vx, h, periodic)


@numba.njit(cache=True)
def _flux_accel_nb(v, ux, vx, h, periodic):
    """Acceleration written through the conserved density P = v / sqrt(Q).

    With F = u_x / sqrt(Q) the node values satisfy dP_i/dt = (D1 F)_i, so
    the periodic sum of P is conserved by the semi-discrete system.
    """
    n = v.shape[0]
    q = 1 - v * v + ux * ux
    flux = ux / np.sqrt(q)
    fx = _dx_nb(flux, h, periodic, np.nan, np.nan)
    out = np.empty(n)
    for i in range(n):
        q32 = q[i] * np.sqrt(q[i])
        out[i] = (q32 * fx[i] + v[i] * ux[i] * vx[i]) / (1 + ux[i] * ux[i])
    if not periodic:
        out[0] = 0.0
        out[n - 1] = 0.0
    return out


@numba.njit(cache=True)
def _rk4_nb(u0, v0, h, dt, periodic, ends):
    """One RK4 step; ends[k] holds boundary data at t, t + dt/2, t + dt."""
    u = u0.copy()
    v = v0.copy()
    k1v = _stage_nb(u, v, h, periodic, ends[0])
    k1u = v.copy()
    u = u0 + 0.5 * dt * k1u
    v = v0 + 0.5 * dt * k1v
    k2v = _stage_nb(u, v, h, periodic, ends[1])
    k2u = v.copy()
    u = u0 + 0.5 * dt * k2u
    v = v0 + 0.5 * dt * k2v
    k3v = _stage_nb(u, v, h, periodic, ends[1])
    k3u = v.copy()
    u = u0 + dt * k3u
    v = v0 + dt * k3v
    k4v = _stage_nb(u, v, h, periodic, ends[2])
    k4u = v.copy()
    u1 = u0 + dt / 6 * (k1u + 2 * k2u + 2 * k3u + k4u)
    v1 = v0 + dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
    _stage_nb(u1, v1, h, periodic, ends[2])
    return u1, v1


@numba.njit(cache=True)
def _speed_scan_nb(u, v, h, periodic):
    """(min radicand, max |characteristic speed|) over the nodes."""
    ux = _dx_nb(u, h, periodic, np.nan, np.nan)
    qmin = np.inf
    vmax = 0.0
    for i in range(u.shape[0]):
        q = 1 - v[i] * v[i] + ux[i] * ux[i]
        qmin = min(qmin, q)
        if q >= 0:
            r = np.sqrt(q)
            den = 1 + ux[i] * ux[i]
            vmax = max(vmax, abs(v[i] * ux[i] - r) / den, abs(v[i] * ux[i] + r) / den)
    return qmin, vmax


def characteristic_speeds(state: FieldState, periodic: bool = False):
    """Speeds (u_t u_x +- sqrt(1 - u_t^2 + u_x^2)) / (1 + u_x^2) per node."""
    ux = _dx(state.u, state.grid.h, periodic)
    v = state.v
    q = 1 - v * v + ux * ux
    if np.any(q < 0):
        raise NonTimelikeError(f"min radicand {q.min():.3e} < 0 at t={state.t}")
    r = np.sqrt(q)
    den = 1 + ux * ux
    return (v * ux - r) / den, (v * ux + r) / den


def cfl_dt(state: FieldState, cfl: float = DEFAULT_CFL, periodic: bool = False) -> float:
    if not state.is_finite():
        raise NonFiniteError("state is not finite")
    qmin, vmax = _speed_scan_nb(state.u, state.v, state.grid.h, periodic)
    if qmin < 0:
        raise NonTimelikeError(f"min radicand {qmin:.3e} < 0 at t={state.t}")
    return cfl * state.grid.h / max(1.0, vmax)


def _ends(bc, t) -> np.ndarray:
    out = np.full((2, 3), np.nan)
    if bc.periodic:
        return out
    for row, val in zip(out, bc.values(t)):
        row[:len(val)] = val
    return out


def _rk4(state: FieldState, bc: BoundaryCondition, dt: float) -> FieldState:
    t = state.t
    if bc.periodic or hasattr(bc, "values"):
        ends = np.stack([_ends(bc, t), _ends(bc, t + dt / 2), _ends(bc, t + dt)])
        u1, v1 = _rk4_nb(state.u, state.v, state.grid.h, dt, bool(bc.periodic), ends)
    else:
        u1, v1 = _rk4_generic(state, bc, dt)
    new = FieldState(state.grid, t + dt, u1, v1)
    if not new.is_finite():
        raise NonFiniteError(f"non-finite values after step to t={t + dt}")
    return new


def _rk4_generic(state: FieldState, bc: BoundaryCondition, dt: float):
    """RK4 for boundary providers that expose only ``apply``."""
    h, per, t = state.grid.h, bc.periodic, state.t

    def f(tt, u, v):
        u = u.copy()
        v = v.copy()
        bc.apply(tt, u, v)
        return v, _accel(u, v, h, per)

    u0, v0 = state.u, state.v
    k1u, k1v = f(t, u0, v0)
    k2u, k2v = f(t + dt / 2, u0 + dt / 2 * k1u, v0 + dt / 2 * k1v)
    k3u, k3v = f(t + dt / 2, u0 + dt / 2 * k2u, v0 + dt / 2 * k2v)
    k4u, k4v = f(t + dt, u0 + dt * k3u, v0 + dt * k3v)
    u1 = u0 + dt / 6 * (k1u + 2 * k2u + 2 * k3u + k4u)
    v1 = v0 + dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
    bc.apply(t + dt, u1, v1)
    return u1, v1


def step(state: FieldState, bc: BoundaryCondition, dt: float,
         cfl: float = DEFAULT_CFL) -> FieldState:
    """One RK4 step; dt must respect the CFL bound of the current state."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    limit = cfl_dt(state, cfl, bc.periodic)
    if dt > limit * (1 + 1e-12):
        raise ValueError(f"dt={dt:.3e} exceeds the CFL bound {limit:.3e}")
    return _rk4(state, bc, dt)


def gradient_at(state: FieldState, x0: float = 0.0, periodic: bool = False) -> float:
    """Second-order u_x at the node nearest x0 (one-sided at an endpoint)."""
    g = state.grid
    i = int(round((x0 - g.x_min) / g.h))
    i = min(max(i, 0), g.n)
    u, h = state.u, g.h
    if 0 < i < g.n:
        return (u[i + 1] - u[i - 1]) / (2 * h)
    if periodic:
        return (u[1] - u[-2]) / (2 * h)
    if i == 0:
        return (-3 * u[0] + 4 * u[1] - u[2]) / (2 * h)
    return (3 * u[-1] - 4 * u[-2] + u[-3]) / (2 * h)


def discrete_mass(state: FieldState, periodic: bool = False) -> float:
    """Trapezoid rule for the conserved integral of u_t / sqrt(1 - u_t^2 + u_x^2)."""
    ux = _dx(state.u, state.grid.h, periodic)
    with np.errstate(invalid="ignore"):
        dens = state.v / np.sqrt(1 - state.v**2 + ux**2)
    h = state.grid.h
    if periodic:
        return float(h * np.sum(dens[:-1]))
    return float(h * (np.sum(dens) - 0.5 * (dens[0] + dens[-1])))


@dataclass
class EvolutionReport:
    times: np.ndarray
    grad_at_origin: np.ndarray
    mass: np.ndarray
    cfl_dt_history: np.ndarray
    terminated: Termination
    final: FieldState
    message: str = ""

    def rows(self):
        """(t, grad_at_origin, mass, dt) rows; dt is the step that led to t
        (the admissible CFL step for the initial row)."""
        return zip(self.times, self.grad_at_origin, self.mass, self.cfl_dt_history)


@dataclass
class _Recorder:
    x0: float
    periodic: bool
    every: int
    times: list = field(default_factory=list)
    grad: list = field(default_factory=list)
    mass: list = field(default_factory=list)
    dts: list = field(default_factory=list)

    def record(self, state: FieldState, dt: float):
        self.times.append(state.t)
        self.grad.append(gradient_at(state, self.x0, self.periodic))
        self.mass.append(discrete_mass(state, self.periodic))
        self.dts.append(dt)


def evolve(initial: FieldState, bc: BoundaryCondition, t_end: float,
           observers: list[Callable[[FieldState, float], None]] | None = None,
           cfl: float = DEFAULT_CFL, x0: float = 0.0, record_every: int = 1,
           max_gradient: float = BLOWUP_GRADIENT) -> EvolutionReport:
    """Adaptive-step RK4 evolution with blow-up and mass observers.

    Termination by loss of timelike character, non-finite values or gradient
    blow-up is reported in the result instead of raised.
    """
    if t_end <= initial.t:
        raise ValueError("t_end must exceed the initial time")
    per = bc.periodic
    rec = _Recorder(x0, per, max(1, record_every))
    state = initial
    cause, msg = Termination.REACHED_T_END, ""
    try:
        rec.record(state, cfl_dt(state, cfl, per))
    except NonTimelikeError as exc:
        rec.record(state, float("nan"))
        cause, msg = Termination.NON_TIMELIKE, str(exc)
    nstep = 0
    while cause is Termination.REACHED_T_END and state.t < t_end - 1e-14 * max(1.0, abs(t_end)):
        try:
            dt = min(cfl_dt(state, cfl, per), t_end - state.t)
            state = _rk4(state, bc, dt)
        except NonTimelikeError as exc:
            cause, msg = Termination.NON_TIMELIKE, str(exc)
            break
        except NonFiniteError as exc:
            cause, msg = Termination.NON_FINITE, str(exc)
            break
        nstep += 1
        last = state.t >= t_end - 1e-14 * max(1.0, abs(t_end))
        if nstep % rec.every == 0 or last:
            rec.record(state, dt)
            for obs in observers or ():
                obs(state, dt)
        if np.max(np.abs(_dx(state.u, state.grid.h, per))) > max_gradient:
            cause, msg = Termination.GRADIENT_BLOWUP, f"|u_x| > {max_gradient:g}"
            break
    if cause is not Termination.REACHED_T_END:
        log.info("evolution stopped at t=%.6g: %s", state.t, msg)
    return EvolutionReport(
        times=np.array(rec.times), grad_at_origin=np.array(rec.grad),
        mass=np.array(rec.mass), cfl_dt_history=np.array(rec.dts),
        terminated=cause, final=state, message=msg)


# Evolution on the shrinking slice B_t = [0, delta (T - t)].
#
# With xi = x / s, s = T - t, and U(t, xi) = u(t, s xi), the evolved velocity
# is P = dU/dt at fixed xi, so u_t = P + xi u_x and u_x = U_xi / s.  For u_k
# the pair (U, P) = (k ln((1 + xi)/(1 - xi)), 0) is a steady state, and the
# principal coefficient of U_xi xi is (1 - xi^2) / (s^2 (1 + u_x^2)) > 0 on the
# whole slice.  This is why P is used instead of u_t: with u_t as unknown the
# coefficient splits into a negative part (1 - u_t^2) on the diagonal and a
# positive part reached only through two first differences, and the node next
# to a pinned end grows at a rate ~1/h wherever |u_t| > 1.


@dataclass
class SliceState:
    """(U, P) on the xi nodes of [0, delta] at time t."""

    t: float
    xi: np.ndarray
    U: np.ndarray
    P: np.ndarray

    @property
    def h(self) -> float:
        return float(self.xi[1] - self.xi[0])

    def physical(self, T: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(x, u, u_t) with centred u_x in the interior and one-sided at the ends."""
        s = T - self.t
        ux = np.gradient(self.U, self.h, edge_order=2) / s
        return self.xi * s, self.U, self.P + self.xi * ux


def slice_rhs(t: float, U: np.ndarray, P: np.ndarray, xi: np.ndarray, T: float):
    """(dU/dt, dP/dt) at fixed xi; both end nodes are held (exact trace)."""
    s = T - t
    h = xi[1] - xi[0]
    D1U = np.zeros_like(U)
    D2U = np.zeros_like(U)
    D1P = np.zeros_like(P)
    D1U[1:-1] = (U[2:] - U[:-2]) / (2 * h)
    D2U[1:-1] = (U[2:] - 2 * U[1:-1] + U[:-2]) / (h * h)
    D1P[1:-1] = (P[2:] - P[:-2]) / (2 * h)
    ux = D1U / s
    ut = P + xi * ux
    uxx = D2U / (s * s)
    utx = (D1P + D1U / s + xi * D2U / s) / s
    # u_tt at fixed x, minus the frame terms of d/dt at fixed xi
    accel = ((1 - ut**2) * uxx + 2 * ut * ux * utx) / (1 + ux**2)
    dP = accel - 2 * xi * D1P / s - 2 * xi * D1U / (s * s) - xi * xi * D2U / (s * s)
    dU = P.copy()
    dU[[0, -1]] = 0.0
    dP[[0, -1]] = 0.0
    return dU, dP


def slice_speed(state: SliceState, T: float) -> tuple[float, float]:
    """(min radicand Q, max |characteristic speed| in xi per unit time)."""
    s = T - state.t
    ux = np.gradient(state.U, state.h, edge_order=2) / s
    ut = state.P + state.xi * ux
    q = 1 - ut**2 + ux**2
    lam = (np.abs(ut * ux) + np.sqrt(np.maximum(q, 0.0))) / (1 + ux**2)
    return float(q.min()), float(np.max(lam + state.xi) / s)


def exact_slice_state(p: SelfSimilarParams, delta: float, n: int) -> SliceState:
    """u_k on n cells of [0, delta] (time independent in these variables)."""
    if not 0 < delta < 1:
        raise DomainError("delta must lie in (0, 1)")
    xi = np.linspace(0.0, delta, n + 1)
    return SliceState(0.0, xi, p.k * (np.log1p(xi) - np.log1p(-xi)), np.zeros(n + 1))


@dataclass
class SliceReport:
    times: np.ndarray
    terminated: Termination
    final: SliceState
    message: str = ""


def evolve_slice(initial: SliceState, T: float, t_end: float,
                 observers: list[Callable[[SliceState], None]] | None = None,
                 cfl: float = DEFAULT_CFL) -> SliceReport:
    """RK4 on the xi slice with the end values held; observers see every step."""
    if not initial.t < t_end < T:
        raise ValueError("need t0 < t_end < T")
    state = initial
    times = [state.t]
    cause, msg = Termination.REACHED_T_END, ""
    for obs in observers or ():
        obs(state)
    xi, h = state.xi, state.h
    while state.t < t_end - 1e-14:
        q, speed = slice_speed(state, T)
        if q < 0:
            cause, msg = Termination.NON_TIMELIKE, f"min radicand {q:.3e} < 0 at t={state.t}"
            break
        dt = min(cfl * h / speed, t_end - state.t)
        t, U, P = state.t, state.U, state.P
        k1 = slice_rhs(t, U, P, xi, T)
        k2 = slice_rhs(t + dt / 2, U + dt / 2 * k1[0], P + dt / 2 * k1[1], xi, T)
        k3 = slice_rhs(t + dt / 2, U + dt / 2 * k2[0], P + dt / 2 * k2[1], xi, T)
        k4 = slice_rhs(t + dt, U + dt * k3[0], P + dt * k3[1], xi, T)
        U = U + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        P = P + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        if not (np.all(np.isfinite(U)) and np.all(np.isfinite(P))):
            cause, msg = Termination.NON_FINITE, f"non-finite values after step to t={t + dt}"
            break
        state = SliceState(t + dt, xi, U, P)
        times.append(state.t)
        for obs in observers or ():
            obs(state)
    if cause is not Termination.REACHED_T_END:
        log.info("slice evolution stopped at t=%.6g: %s", state.t, msg)
    return SliceReport(np.array(times), cause, state, msg)
