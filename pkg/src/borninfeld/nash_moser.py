"""Nash-Moser iteration for the perturbation of u_1 with small Cauchy data.

The data (eps w0, eps w1) are absorbed by the shift W = w0(x) + t w1(x):
psi = w - eps W has zero Cauchy data and solves

    Lin0(psi) + j [N(psi + eps W) - N(eps W)] = F,   F := -res(eps W),

where res is the perturbation residual of u_1 + w and Lin0 its linear part
about w = 0.  The residual of this equation at psi equals res(psi + eps W)
exactly.  The smoothed operator passes the bracket through Pi_{N_m}
slice by slice in xi, with N_m = N0^m.

Each step solves L h = -E with zero data on the mixed-solver grid, where L
is the Jacobian at w = psi + eps W and E is the discrete residual.  The
linear part of E uses the solver's own stencils, so a step removes the
linear residual up to round-off and the decay seen in E is the one coming
from the nonlinear remainder.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .exact_family import Jet2
from .geometry import SpaceTimeGrid
from .linearization import (
    base_terms,
    coefficients,
    linear_part0,
    nonlinear_block,
    perturbation_residual,
)
from .mixed_solver import (
    LinearProblem,
    assemble,
    degenerate_nodes,
    pde_row_nodes,
    phys_dt,
    phys_dx,
    solve_system,
)
from .smoothing_sobolev import c2s_norm, smooth

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """The iterate left the ball B_R; the trace so far is attached."""

    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace


@dataclass(frozen=True)
class Profile:
    """A data profile of x with its first two derivatives."""

    value: Callable
    first: Callable
    second: Callable

    @classmethod
    def zero(cls) -> "Profile":
        z = lambda x: np.zeros_like(np.asarray(x, dtype=float))
        return cls(z, z, z)

    @classmethod
    def polynomial_bump(cls, width: float, scale: float = 1.0) -> "Profile":
        """scale * x^2 (width - x)^2, vanishing to second order at both ends."""
        L = width
        return cls(
            lambda x: scale * x**2 * (L - x) ** 2,
            lambda x: scale * 2 * x * (L - x) * (L - 2 * x),
            lambda x: scale * (2 * L * L - 12 * L * x + 12 * x * x),
        )

    @classmethod
    def unit_h2_bump(cls, width: float) -> "Profile":
        """x^2 (width - x)^2 scaled to unit H^2 norm on [0, width]."""
        L = width
        # exact integrals of f^2, f'^2, f''^2 for f = x^2 (L - x)^2
        sq = L**9 / 630 + 2 * L**7 / 105 + 4 * L**5 / 5
        return cls.polynomial_bump(L, 1.0 / math.sqrt(sq))


def shift_jet(w0: Profile, w1: Profile, eps: float, t, x) -> Jet2:
    """Jet of eps (w0(x) + t w1(x))."""
    t = np.asarray(t, dtype=float)
    v1, d1, s1 = w1.value(x), w1.first(x), w1.second(x)
    return Jet2(
        u=eps * (w0.value(x) + t * v1),
        u_t=eps * v1 + 0 * t,
        u_x=eps * (w0.first(x) + t * d1),
        u_tt=0 * (t + x),
        u_tx=eps * d1 + 0 * t,
        u_xx=eps * (w0.second(x) + t * s1),
    )


def grid_jet(psi: np.ndarray, grid: SpaceTimeGrid) -> Jet2:
    """Physical-variable jet of a grid function by grid differences."""
    pt = phys_dt(psi, grid)
    return Jet2(u=psi, u_t=pt, u_x=phys_dx(psi, grid), u_tt=phys_dt(pt, grid),
                u_tx=phys_dx(pt, grid), u_xx=phys_dx(psi, grid, 2))


@dataclass
class AuxiliaryProblem:
    """Zero-data problem for psi on a grid with forcing F."""

    grid: SpaceTimeGrid
    epsilon: float
    shift: Jet2
    F: np.ndarray
    terms: dict

    def reduced_residual_jet(self, psi: Jet2) -> np.ndarray:
        """Pointwise residual of the reduced equation for an exact jet of psi."""
        return reduced_residual(psi, self.shift, self.terms, self.F)


def reduced_residual(psi: Jet2, shift: Jet2, terms: dict, F, theta: float | None = None,
                     length: float | None = None):
    """Lin0(psi) + j Pi[N(psi + shift) - N(shift)] - F (Pi = identity if theta is None)."""
    bracket = nonlinear_block(psi + shift, terms) - nonlinear_block(shift, terms)
    if theta is not None:
        bracket = smooth(bracket, theta, length)
    return linear_part0(psi, terms) + terms["j"] * bracket - F


def auxiliary_shift(w0: Profile, w1: Profile, epsilon: float, grid: SpaceTimeGrid) -> AuxiliaryProblem:
    """Forcing F = -res(eps W) on the grid and the zero-data problem for psi."""
    tt, _, xx = grid.mesh()
    shift = shift_jet(w0, w1, epsilon, tt, xx)
    F = -perturbation_residual(shift, tt, xx, grid.dom.T)
    return AuxiliaryProblem(grid, epsilon, shift, np.asarray(F, dtype=float),
                            base_terms(tt, xx, grid.dom.T))


@dataclass(frozen=True)
class IterationConfig:
    epsilon: float
    R: float = 0.1
    N0: int = 2
    s_bar: int = 2
    s: int = 4
    d: float = 0.1
    max_m: int = 4
    kappa: float = 1e-4
    theta: float = 1e-4
    floor_factor: float = 1e-2
    stop_at_floor: bool = True

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if not 0 < self.R < 1:
            raise ValueError("R must lie in (0, 1)")
        if self.N0 < 2 or self.s_bar < 2 or self.s <= self.s_bar:
            raise ValueError("need N0 >= 2, s_bar >= 2 and s > s_bar")
        if not 0 < self.d < 1:
            raise ValueError("d must lie in (0, 1)")
        if self.max_m < 1:
            raise ValueError("max_m must be positive")

    def N(self, m: int) -> float:
        return float(self.N0) ** m

    def s_m(self, m: int) -> float:
        return self.s_bar + (self.s - self.s_bar) / 2**m

    def norm_order(self, m: int) -> int:
        """Integer Sobolev order used to measure step m."""
        return max(self.s_bar, int(math.floor(self.s_m(m))))

    def smallness_chain(self) -> bool:
        """0 < eps < N0^-8 d^2 < R."""
        gate = self.N0 ** -8 * self.d**2
        return 0 < self.epsilon < gate < self.R


@dataclass
class StepRecord:
    m: int
    N_m: float
    s_m: float
    h_norm: float
    E_norm: float
    psi_norm: float
    ratio: float
    quadratic_constant: float
    below_floor: bool


@dataclass
class IterationTrace:
    steps: list[StepRecord] = field(default_factory=list)
    E0_norm: float = 0.0
    floor: float = 0.0
    final_residual: float = 0.0
    psi: np.ndarray | None = None

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.steps])

    def quadratic_constant(self) -> float:
        vals = [r.quadratic_constant for r in self.steps if np.isfinite(r.quadratic_constant)]
        return max(vals) if vals else 0.0

    def pre_floor_ratios(self) -> np.ndarray:
        return np.array([r.ratio for r in self.steps if not r.below_floor and np.isfinite(r.ratio)])


class _Discrete:
    """Discrete residual of the smoothed operator on the mixed-solver rows."""

    def __init__(self, aux: AuxiliaryProblem):
        self.aux = aux
        g = aux.grid
        tt, _, xx = g.mesh()
        cf0 = coefficients(Jet2(), tt, xx, g.dom.T)
        zero = np.zeros(g.shape)
        self.A0, _ = assemble(LinearProblem(g, cf0, zero, kappa=0.0, theta=0.0))
        self.rows, self.n, self.i = pde_row_nodes(g)
        self.tt, self.xx = tt, xx

    def field(self, psi: np.ndarray, theta: float | None) -> np.ndarray:
        """E on the grid: zero on constraint nodes and on the levels t = 0, T_bar."""
        aux, g = self.aux, self.aux.grid
        jet = grid_jet(psi, g)
        bracket = (nonlinear_block(jet + aux.shift, aux.terms)
                   - nonlinear_block(aux.shift, aux.terms))
        if theta is not None:
            bracket = smooth(bracket, theta, g.dom.delta)
        nl = aux.terms["j"] * bracket - aux.F
        lin = self.A0 @ psi.ravel()
        out = np.zeros(g.shape)
        out[self.n, self.i] = lin[self.rows] + nl[self.n, self.i]
        return out

    def vector(self, E: np.ndarray) -> np.ndarray:
        v = np.zeros(self.A0.shape[0])
        v[self.rows] = E[self.n, self.i]
        return v


def smoothed_operator(aux: AuxiliaryProblem, psi: np.ndarray, m: int | None,
                      N0: int = 2) -> np.ndarray:
    """Discrete residual field of the smoothed operator at step m (None: no smoothing)."""
    theta = None if m is None else float(N0) ** m
    if theta is not None and theta < 1:
        raise ValueError("m must be non-negative")
    return _Discrete(aux).field(np.asarray(psi, dtype=float), theta)


def _interior(E: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
    """E on the PDE-row levels and columns, with the node dropped for the
    degenerate row at each level filled by linear interpolation."""
    out = E[1:-1, 1:-1].copy()
    istar = degenerate_nodes(grid)[2:] - 1
    for n, i in enumerate(istar):
        lo, hi = max(i - 1, 0), min(i + 1, out.shape[1] - 1)
        out[n, i] = 0.5 * (out[n, lo] + out[n, hi])
    return out


def c2_norm(u: np.ndarray, grid: SpaceTimeGrid, order: int) -> float:
    """Discrete C^2_s norm on xi slices."""
    return c2s_norm(u, order, grid.dt, grid.dxi)


def iterate(config: IterationConfig, w0: Profile, w1: Profile, grid: SpaceTimeGrid,
            aux: AuxiliaryProblem | None = None) -> IterationTrace:
    """Run the smoothed Newton iteration from psi^(0) = 0."""
    if not config.smallness_chain():
        log.warning("smallness chain 0 < eps < N0^-8 d^2 < R fails for %s", config)
    aux = aux or auxiliary_shift(w0, w1, config.epsilon, grid)
    disc = _Discrete(aux)
    floor = config.floor_factor * grid.dxi**2
    psi = np.zeros(grid.shape)
    E = disc.field(psi, config.N(0))
    trace = IterationTrace(floor=floor, psi=psi)
    prev = c2_norm(_interior(E, grid), grid, config.norm_order(0))
    trace.E0_norm = prev
    ncol = grid.nx + 1
    for m in range(1, config.max_m + 1):
        if prev == 0.0:
            trace.steps.append(StepRecord(m, config.N(m), config.s_m(m), 0.0, 0.0, 0.0,
                                          np.nan, 0.0, True))
            continue
        w = grid_jet(psi, grid) + aux.shift
        cf = coefficients(w, disc.tt, disc.xx, grid.dom.T)
        E = disc.field(psi, config.N(m))
        prob = LinearProblem(grid, cf, np.zeros(grid.shape), kappa=config.kappa,
                             theta=config.theta)
        A, _ = assemble(prob)
        h, _ = solve_system(A, -disc.vector(E), ncol)
        h = h.reshape(grid.shape)
        psi = psi + h
        order = config.norm_order(m)
        E = disc.field(psi, config.N(m))
        En = c2_norm(_interior(E, grid), grid, order)
        hn = c2_norm(h, grid, order)
        pn = c2_norm(psi, grid, config.s_bar)
        ratio = math.log(En) / math.log(prev) if 0 < En and 0 < prev < 1 else np.nan
        C = En / (config.N(m) ** 4 * hn**2) if hn > 0 else np.inf
        below = En < floor
        trace.steps.append(StepRecord(m, config.N(m), config.s_m(m), hn, En, pn, ratio, C, below))
        log.info("m=%d |h|=%.3e |E|=%.3e ratio=%.3f", m, hn, En, ratio)
        trace.psi = psi
        if pn > config.R:
            raise DivergenceError(f"psi left B_R at m = {m}: {pn:.3e} > {config.R}", trace)
        prev = En
        if below and config.stop_at_floor:
            break
    trace.final_residual = final_residual(aux, psi)
    return trace


def final_residual(aux: AuxiliaryProblem, psi: np.ndarray) -> float:
    """Max pointwise perturbation residual of w = psi + eps W away from the grid edges."""
    g = aux.grid
    jet = grid_jet(psi, g) + aux.shift
    tt, _, xx = g.mesh()
    r = perturbation_residual(jet, tt, xx, g.dom.T)
    return float(np.max(np.abs(r[2:-2, 2:-2])))
