"""Regularised space-time solver for the linearised operator and energy monitors.

The unknown H(t, xi) lives on the rectangle image of the shrinking cone,
x = xi * s with s = T - t.  Physical derivatives become

    d_x = s^-1 d_xi,        d_t|_x = d_t + (xi / s) d_xi,

so the operator a h_tt - b h_xx - c h_t + d h_x - e h_tx turns into

    a H_tt + P H_txi + Q H_xixi + Rt H_t + Rxi H_xi

with P = (2 a xi - e)/s, Q = (a xi^2 - e xi - b)/s^2, Rt = -c and
Rxi = (2 a xi - e)/s^2 - c xi/s + d/s.

Every row of the discrete system is one of

* initial value  H = h0 on t = 0,
* initial velocity, a one-sided second-order difference of the physical h_t,
* Dirichlet H = 0 on xi = 0 and xi = delta,
* degenerate-curve rows: BDF2 in time for the physical h_t at the node
  nearest xi*(t_n), equal to g (zero by default),
* the PDE centred at (t_n, xi_i) with second differences in time and the
  spatial terms averaged 1/4, 1/2, 1/4 over the levels n-1, n, n+1.

The PDE row centred at (n - 1, i*(n)) is dropped for every degenerate row at
level n, so the system is square and block lower triangular in time.  It
is factorised once with a sparse LU and polished by one refinement pass.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from math import comb

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .geometry import SpaceTimeGrid, degenerate_xi
from .linearization import Coefficients
from .smoothing_sobolev import ResolutionError, derivative

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-8


class SingularSystemError(RuntimeError):
    """The sparse factorisation failed."""


class RefinementError(RuntimeError):
    """Iterative refinement did not reach the residual tolerance."""


@dataclass
class LinearProblem:
    """a h_tt - b h_xx - c h_t + d h_x - e h_tx = f on the grid, with data.

    ``h0`` and ``h1`` are the physical h and h_t on t = 0 sampled at the xi
    nodes.  ``g`` is the value of h_t imposed on the degenerate curve,
    one entry per time level (zero when omitted).
    """

    grid: SpaceTimeGrid
    cf: Coefficients
    rhs: np.ndarray
    h0: np.ndarray | None = None
    h1: np.ndarray | None = None
    kappa: float = 1e-4
    theta: float = 1e-4
    g: np.ndarray | None = None

    def __post_init__(self):
        if self.kappa < 0 or self.theta < 0:
            raise ValueError("kappa and theta must be non-negative")
        shape = self.grid.shape
        nx1 = shape[1]
        self.rhs = np.asarray(self.rhs, dtype=float)
        if self.rhs.shape != shape:
            raise ValueError(f"rhs has shape {self.rhs.shape}, grid is {shape}")
        for name in ("a", "b", "c", "d", "e"):
            if np.shape(getattr(self.cf, name)) != shape:
                raise ValueError(f"coefficient {name} is not sampled on the grid")
        self.h0 = np.zeros(nx1) if self.h0 is None else np.asarray(self.h0, dtype=float)
        self.h1 = np.zeros(nx1) if self.h1 is None else np.asarray(self.h1, dtype=float)
        self.g = np.zeros(shape[0]) if self.g is None else np.asarray(self.g, dtype=float)
        scale = 1.0 + float(np.max(np.abs(self.h0)))
        if abs(self.h0[0]) > 1e-12 * scale or abs(self.h0[-1]) > 1e-12 * scale:
            raise ValueError("h0 must vanish at xi = 0 and xi = delta")

    def regularised_b(self) -> np.ndarray:
        """b + kappa where b >= 0 and b - theta where b < 0."""
        b = self.cf.b
        return np.where(b >= 0, b + self.kappa, b - self.theta)


def degenerate_nodes(grid: SpaceTimeGrid) -> np.ndarray:
    """Index of the xi node nearest the degenerate curve at each level."""
    xs = degenerate_xi(grid.t, grid.dom.T)
    idx = np.rint(xs / grid.dxi).astype(int)
    return np.clip(idx, 1, grid.nx - 1)


def rectangle_coefficients(grid: SpaceTimeGrid, cf: Coefficients, b: np.ndarray) -> dict:
    """Coefficients of the operator written in the (t, xi) variables."""
    tt, xi, _ = grid.mesh()
    s = grid.dom.T - tt
    a, c, d, e = cf.a, cf.c, cf.d, cf.e
    return dict(
        tt=a,
        txi=(2 * a * xi - e) / s,
        xixi=(a * xi * xi - e * xi - b) / s**2,
        t=-c,
        xi=(2 * a * xi - e) / s**2 - c * xi / s + d / s,
    )


def assemble(problem: LinearProblem) -> tuple[sparse.csr_matrix, np.ndarray]:
    """Global sparse system A H = r for the problem (unknowns in C order)."""
    grid = problem.grid
    nt, nx = grid.nt, grid.nx
    dt, dxi = grid.dt, grid.dxi
    ncol = nx + 1
    N = (nt + 1) * ncol
    k = rectangle_coefficients(grid, problem.cf, problem.regularised_b())
    s = grid.s()
    xi = grid.xi
    istar = degenerate_nodes(grid)
    rows, cols, vals = [], [], []
    rhs = np.zeros(N)
    row = 0

    def put(r, n, i, v):
        rows.append(r)
        cols.append(n * ncol + i)
        vals.append(v)

    # t = 0: values
    for i in range(ncol):
        put(row, 0, i, 1.0)
        rhs[row] = problem.h0[i]
        row += 1
    # Dirichlet rows at xi = 0, delta on every later level
    for n in range(1, nt + 1):
        for i in (0, nx):
            put(row, n, i, 1.0)
            row += 1
    # initial velocity: physical h_t = H_t + (xi/s) H_xi at t = 0
    for i in range(1, nx):
        for off, w in ((0, -3.0), (1, 4.0), (2, -1.0)):
            put(row, off, i, w / (2 * dt))
        adv = xi[i] / s[0] / (2 * dxi)
        put(row, 0, i + 1, adv)
        put(row, 0, i - 1, -adv)
        rhs[row] = problem.h1[i]
        row += 1
    # degenerate-curve rows, BDF2 for the physical h_t
    for n in range(2, nt + 1):
        i = istar[n]
        for off, w in ((0, 3.0), (1, -4.0), (2, 1.0)):
            put(row, n - off, i, w / (2 * dt))
        adv = xi[i] / s[n] / (2 * dxi)
        put(row, n, i + 1, adv)
        put(row, n, i - 1, -adv)
        rhs[row] = problem.g[n]
        row += 1
    # PDE rows
    avg = ((-1, 0.25), (0, 0.5), (1, 0.25))
    for n in range(1, nt):
        skip = istar[n + 1]
        for i in range(1, nx):
            if i == skip:
                continue
            ctt, ctx = k["tt"][n, i], k["txi"][n, i]
            cxx, ct, cx = k["xixi"][n, i], k["t"][n, i], k["xi"][n, i]
            put(row, n + 1, i, ctt / dt**2 + ct / (2 * dt))
            put(row, n, i, -2 * ctt / dt**2)
            put(row, n - 1, i, ctt / dt**2 - ct / (2 * dt))
            q = ctx / (4 * dt * dxi)
            put(row, n + 1, i + 1, q)
            put(row, n + 1, i - 1, -q)
            put(row, n - 1, i + 1, -q)
            put(row, n - 1, i - 1, q)
            for off, w in avg:
                put(row, n + off, i + 1, w * (cxx / dxi**2 + cx / (2 * dxi)))
                put(row, n + off, i, -2 * w * cxx / dxi**2)
                put(row, n + off, i - 1, w * (cxx / dxi**2 - cx / (2 * dxi)))
            rhs[row] = problem.rhs[n, i]
            row += 1
    if row != N:
        raise AssertionError(f"assembled {row} rows for {N} unknowns")
    A = sparse.csr_matrix((vals, (rows, cols)), shape=(N, N))
    return A, rhs


def pde_row_nodes(grid: SpaceTimeGrid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(row, n, i) of every PDE row of ``assemble``, in assembly order."""
    nt, nx = grid.nt, grid.nx
    start = (nx + 1) + 2 * nt + (nx - 1) + (nt - 1)
    istar = degenerate_nodes(grid)
    n_idx, i_idx = [], []
    for n in range(1, nt):
        for i in range(1, nx):
            if i != istar[n + 1]:
                n_idx.append(n)
                i_idx.append(i)
    n_idx, i_idx = np.array(n_idx), np.array(i_idx)
    return start + np.arange(n_idx.size), n_idx, i_idx


def _pivot_location(A: sparse.csr_matrix, ncol: int) -> str:
    empty_rows = np.flatnonzero(np.diff(A.indptr) == 0)
    empty_cols = np.setdiff1d(np.arange(A.shape[1]), A.indices)
    if empty_cols.size:
        n, i = divmod(int(empty_cols[0]), ncol)
        return f"unknown (t index {n}, xi index {i}) appears in no row"
    if empty_rows.size:
        return f"row {int(empty_rows[0])} is empty"
    return "no structurally empty row or column; numerically singular"


@dataclass
class SolveResult:
    h: np.ndarray
    residual: float
    energy: "EnergyTrace"


def solve_system(A: sparse.csr_matrix, r: np.ndarray, ncol: int) -> tuple[np.ndarray, float]:
    """Direct sparse solve with one refinement pass; returns (x, relative residual)."""
    A = A.tocsr()
    A.eliminate_zeros()
    if np.any(np.diff(A.indptr) == 0) or np.unique(A.indices).size < A.shape[1]:
        raise SingularSystemError(f"structurally singular: {_pivot_location(A, ncol)}")
    try:
        lu = spla.splu(A.tocsc())
    except RuntimeError as exc:
        raise SingularSystemError(f"{exc}: {_pivot_location(A, ncol)}") from exc
    udiag = np.abs(lu.U.diagonal())
    if np.any(udiag == 0):
        k = int(lu.perm_c[np.argmin(udiag)])
        n, i = divmod(k, ncol)
        raise SingularSystemError(f"zero pivot at unknown (t index {n}, xi index {i})")
    x = lu.solve(r)
    x += lu.solve(r - A @ x)
    scale = float(np.max(np.abs(r)))
    res = float(np.max(np.abs(A @ x - r)))
    rel = res / scale if scale > 0 else res
    if not np.isfinite(rel) or rel > RESIDUAL_TOL:
        raise RefinementError(f"relative residual {rel:.3e} exceeds {RESIDUAL_TOL:g}")
    return x, rel


def solve(problem: LinearProblem, weights: "EnergyWeights | None" = None) -> SolveResult:
    """Solve the regularised problem and attach its energy trace."""
    A, r = assemble(problem)
    x, rel = solve_system(A, r, problem.grid.nx + 1)
    h = x.reshape(problem.grid.shape)
    log.debug("mixed solve on %s grid: relative residual %.2e", problem.grid.shape, rel)
    trace = energy_monitor(h, problem.cf, problem.grid, problem.rhs, weights or EnergyWeights(),
                           h0=problem.h0, h1=problem.h1).trace
    return SolveResult(h, rel, trace)


# ---------------------------------------------------------------------------
# physical derivatives on the (t, xi) grid


def _d_xi(F, grid: SpaceTimeGrid, order: int = 1):
    return derivative(F, order, grid.dxi)


def _d_t_fixed_xi(F, grid: SpaceTimeGrid):
    return derivative(np.swapaxes(F, 0, 1), 1, grid.dt).swapaxes(0, 1)


def phys_dx(F, grid: SpaceTimeGrid, order: int = 1):
    """d^order/dx^order at fixed t."""
    s = grid.s()[:, None]
    return _d_xi(F, grid, order) / s**order


def phys_dt(F, grid: SpaceTimeGrid):
    """d/dt at fixed x."""
    _, xi, _ = grid.mesh()
    s = grid.s()[:, None]
    return _d_t_fixed_xi(F, grid) + xi / s * _d_xi(F, grid)


def _integrate_x(F, grid: SpaceTimeGrid, mask=None):
    """Per-slice trapezoid integral over x (dx = s dxi) of F restricted to mask."""
    G = F if mask is None else np.where(mask, F, 0.0)
    return np.trapezoid(G, dx=grid.dxi, axis=1) * grid.s()


def _integrate_tx(F, grid: SpaceTimeGrid, mask=None) -> float:
    return float(np.trapezoid(_integrate_x(F, grid, mask), dx=grid.dt))


# ---------------------------------------------------------------------------
# energy monitors


@dataclass(frozen=True)
class EnergyWeights:
    nu: float = 50.0
    chi: float = 6.0
    mu: float = 10.0

    def __post_init__(self):
        if min(self.nu, self.chi, self.mu) <= 0:
            raise ValueError("weights must be positive")


@dataclass
class EnergyTrace:
    """Per-level energies on the two regions.

    ``log_weight`` is -nu / s^chi; the weighted hyperbolic energy is
    exp(log_weight) * hyp, kept separate because the weight underflows.
    ``ell`` is the quadratic form differentiated in time in the elliptic
    estimate, with weight nu / s^2.
    """

    t: np.ndarray
    log_weight: np.ndarray
    hyp: np.ndarray
    ell: np.ndarray
    flux_axis: np.ndarray
    flux_interface: np.ndarray
    flux_outer: np.ndarray

    def weighted_hyp(self) -> np.ndarray:
        return np.exp(self.log_weight) * self.hyp

    def finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in
                   (self.log_weight, self.hyp, self.ell, self.flux_axis,
                    self.flux_interface, self.flux_outer))


@dataclass
class EnergyReport:
    trace: EnergyTrace
    margins: dict[str, float]
    margin_location: dict[str, tuple]
    constants: dict[str, float]
    sides: dict[str, tuple[float, float]] = field(default_factory=dict)

    @property
    def verdict(self) -> bool:
        return all(m > 0 for m in self.margins.values())


def region_masks(cf: Coefficients) -> tuple[np.ndarray, np.ndarray]:
    """(hyperbolic b >= 0, elliptic b < 0) node masks."""
    hyp = cf.b >= 0
    return hyp, ~hyp


def multiplier_margins(cf: Coefficients, grid: SpaceTimeGrid, weights: EnergyWeights) -> dict:
    """Pointwise multiplier expressions of the two energy estimates.

    Hyperbolic side (weight exp(-nu/s^chi) h_t):
      m_t = -2c - 2 a_t + chi nu a / s^(chi+1) + e_x - |d| - |b_x| - 1
      m_x = -b_t + chi nu b / s^(chi+1) - |d| - |b_x|
    Elliptic side (multipliers -nu h_t / s^2 and nu mu h_x / s^2, bt = -b):
      n_t = 2c + a_t + 2 nu a / s - e_x + mu a_x - mu |c| - |d| - |bt_x| - 1
      n_x = -mu bt_x + 2 mu d + mu e_t + 2 nu mu e / s - bt_t - 2 nu bt / s
            - mu |c| - |d| - |bt_x| - mu
    """
    nu, chi, mu = weights.nu, weights.chi, weights.mu
    s = grid.s()[:, None]
    a, b, c, d, e = cf.a, cf.b, cf.c, cf.d, cf.e
    a_t, a_x = phys_dt(a, grid), phys_dx(a, grid)
    b_t, b_x = phys_dt(b, grid), phys_dx(b, grid)
    e_t, e_x = phys_dt(e, grid), phys_dx(e, grid)
    W = chi * nu / s ** (chi + 1)
    return dict(
        hyp_t=-2 * c - 2 * a_t + W * a + e_x - np.abs(d) - np.abs(b_x) - 1,
        hyp_x=-b_t + W * b - np.abs(d) - np.abs(b_x),
        ell_t=2 * c + a_t + 2 * nu * a / s - e_x + mu * a_x - mu * np.abs(c) - np.abs(d)
        - np.abs(b_x) - 1,
        ell_x=mu * b_x + 2 * mu * d + mu * e_t + 2 * nu * mu * e / s + b_t + 2 * nu * b / s
        - mu * np.abs(c) - np.abs(d) - np.abs(b_x) - mu,
    )


def _ratio(lhs: float, rhs: float) -> float:
    if rhs > 0:
        return lhs / rhs
    return 0.0 if lhs == 0 else np.inf


def energy_monitor(h: np.ndarray, cf: Coefficients, grid: SpaceTimeGrid, f: np.ndarray | None = None,
                   weights: EnergyWeights | None = None, h0=None, h1=None) -> EnergyReport:
    """Energies, multiplier margins and the discrete energy-inequality constants.

    The constants are the smallest C with
      int int_region (h_t^2 + h_x^2) <= C [int_region(0) (h1^2 + (h0)_x^2) + int int_region f^2]
    for the hyperbolic (b >= 0) and elliptic (b < 0) regions.
    """
    weights = weights or EnergyWeights()
    h = np.asarray(h, dtype=float)
    f = np.zeros_like(h) if f is None else np.asarray(f, dtype=float)
    s = grid.s()
    ht, hx = phys_dt(h, grid), phys_dx(h, grid)
    h0 = h[0] if h0 is None else np.asarray(h0, dtype=float)
    h1 = ht[0] if h1 is None else np.asarray(h1, dtype=float)
    a, b, e = cf.a, cf.b, cf.e
    hyp, ell = region_masks(cf)

    dens_hyp = a * ht**2 + b * hx**2
    bt = -b
    dens_ell = a * ht**2 + (e - weights.mu * bt) * hx**2 - 2 * weights.mu * a * hx * ht
    istar = degenerate_nodes(grid)
    flux = 2 * b * ht * hx + e * ht**2
    trace = EnergyTrace(
        t=grid.t.copy(),
        log_weight=-weights.nu / s**weights.chi,
        hyp=_integrate_x(dens_hyp, grid, hyp),
        ell=weights.nu / s**2 * _integrate_x(dens_ell, grid, ell),
        flux_axis=flux[:, 0].copy(),
        flux_interface=flux[np.arange(grid.nt + 1), istar],
        flux_outer=flux[:, -1].copy(),
    )

    m = multiplier_margins(cf, grid, weights)
    margins, where = {}, {}
    for name, field_ in m.items():
        mask = hyp if name.startswith("hyp") else ell
        if not mask.any():
            continue
        masked = np.where(mask, field_, np.inf)
        idx = np.unravel_index(int(np.argmin(masked)), masked.shape)
        margins[name] = float(masked[idx])
        where[name] = (float(grid.t[idx[0]]), float(grid.xi[idx[1]]))

    h0x = derivative(h0, 1, grid.dxi) / s[0]
    constants, sides = {}, {}
    for name, mask in (("hyp", hyp), ("ell", ell)):
        lhs = _integrate_tx(ht**2 + hx**2, grid, mask)
        init = float(np.trapezoid(np.where(mask[0], h1**2 + h0x**2, 0.0), dx=grid.dxi) * s[0])
        src = _integrate_tx(f**2, grid, mask)
        constants[name] = _ratio(lhs, init + src)
        sides[name] = (lhs, init + src)
    return EnergyReport(trace, margins, where, constants, sides)



# ---------------------------------------------------------------------------
# higher-order monitor


def mixed_derivative(F, grid: SpaceTimeGrid, k: int):
    """d_t d_x^k F in physical variables."""
    return phys_dt(phys_dx(F, grid, k), grid)


def _dxk(F, grid, k):
    return F if k == 0 else phys_dx(F, grid, k)


def _dtdxk(F, grid, k):
    return phys_dt(_dxk(F, grid, k), grid)


def operator_apply(cf: Coefficients, h: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
    """a h_tt - b h_xx - c h_t + d h_x - e h_tx by grid differences."""
    ht, hx = phys_dt(h, grid), phys_dx(h, grid)
    return (cf.a * phys_dt(ht, grid) - cf.b * phys_dx(h, grid, 2) - cf.c * ht
            + cf.d * hx - cf.e * phys_dx(ht, grid))


def commuted_source(h: np.ndarray, f: np.ndarray, cf: Coefficients, grid: SpaceTimeGrid,
                    k: int) -> np.ndarray:
    """f_k = d^{k+1} f minus every Leibniz term of d^{k+1}(L h) with a
    derivative on a coefficient, d^{k+1} = d_t d_x^k."""
    ht, hx = phys_dt(h, grid), phys_dx(h, grid)
    # (coefficient, sign in L, factor it multiplies)
    terms = ((cf.a, 1.0, phys_dt(ht, grid)), (cf.b, -1.0, phys_dx(h, grid, 2)),
             (cf.c, -1.0, ht), (cf.d, 1.0, hx), (cf.e, -1.0, phys_dx(ht, grid)))
    out = _dtdxk(f, grid, k)
    for coef, sign, g in terms:
        for j in range(k + 1):
            w = comb(k, j)
            # d_t lands on the coefficient
            out = out - sign * w * _dtdxk(coef, grid, j) * _dxk(g, grid, k - j)
            if j > 0:
                out = out - sign * w * _dxk(coef, grid, j) * _dtdxk(g, grid, k - j)
    return out


@dataclass
class HigherOrderReport:
    k: int
    lhs: dict[str, float]
    initial: dict[str, float]
    source: dict[str, float]
    constants: dict[str, float]


def higher_order_monitor(h: np.ndarray, cf: Coefficients, grid: SpaceTimeGrid, k: int,
                         f: np.ndarray | None = None) -> HigherOrderReport:
    """Discrete constants of the commuted energy inequality for d_t d_x^k h.

    For each region the left side is int int (|d_t D h|^2 + |d_x D h|^2) with
    D = d_t d_x^k; the right side is the same density at t = 0 plus
    int int |D f|^2.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    need = k + 2
    if need > (grid.nx - 1) // 4 or 2 > (grid.nt - 1) // 4:
        raise ResolutionError(f"grid too coarse for {need} derivatives")
    h = np.asarray(h, dtype=float)
    f = np.zeros_like(h) if f is None else np.asarray(f, dtype=float)
    Dh = mixed_derivative(h, grid, k)
    dens = phys_dt(Dh, grid) ** 2 + phys_dx(Dh, grid) ** 2
    Df2 = mixed_derivative(f, grid, k) ** 2
    hyp, ell = region_masks(cf)
    out = HigherOrderReport(k, {}, {}, {}, {})
    for name, mask in (("hyp", hyp), ("ell", ell)):
        lhs = _integrate_tx(dens, grid, mask)
        init = float(_integrate_x(dens, grid, mask)[0])
        src = _integrate_tx(Df2, grid, mask)
        out.lhs[name], out.initial[name], out.source[name] = lhs, init, src
        out.constants[name] = _ratio(lhs, init + src)
    return out


# ---------------------------------------------------------------------------
# manufactured problem


def apply_rectangle(grid: SpaceTimeGrid, cf: Coefficients, H_t, H_tt, H_xi, H_xixi, H_txi,
                    b: np.ndarray | None = None) -> np.ndarray:
    """The operator applied to H given its exact (t, xi) derivatives."""
    k = rectangle_coefficients(grid, cf, cf.b if b is None else b)
    return (k["tt"] * H_tt + k["txi"] * H_txi + k["xixi"] * H_xixi
            + k["t"] * H_t + k["xi"] * H_xi)


def manufactured_problem(grid: SpaceTimeGrid, cf: Coefficients, kappa: float = 1e-4,
                         theta: float = 1e-4) -> tuple[LinearProblem, np.ndarray]:
    """Problem whose exact solution is H = t^2 xi (delta - xi).

    The forcing is the unregularised operator applied analytically.
    """
    tt, xi, _ = grid.mesh()
    s = grid.dom.T - tt
    dl = grid.dom.delta
    H = tt**2 * xi * (dl - xi)
    H_t = 2 * tt * xi * (dl - xi)
    H_xi = tt**2 * (dl - 2 * xi)
    f = apply_rectangle(grid, cf, H_t=H_t, H_tt=2 * xi * (dl - xi), H_xi=H_xi,
                        H_xixi=-2 * tt**2, H_txi=2 * tt * (dl - 2 * xi))
    h_t = H_t + xi / s * H_xi
    istar = degenerate_nodes(grid)
    g = h_t[np.arange(grid.nt + 1), istar]
    prob = LinearProblem(grid, cf, f, h0=H[0].copy(), h1=h_t[0].copy(), kappa=kappa,
                         theta=theta, g=g)
    return prob, H
