"""Perturbation equation around u_1 and its linearisation.

Writing u = u_1 + w and dividing the Born-Infeld operator by 1 + (u_1)_x^2
gives

    w_tt - b0 w_xx - c0 w_t + d0 w_x - e0 w_tx + j N(w) = 0

with s = T - t, D = s^2 - x^2, den = D^2 + 4 s^2 and

    b0 = (D^2 - 4x^2)/den,  c0 = 8s/den,  d0 = 8x/den,  e0 = 8xs/den,
    j  = D^2/den,

    N(w) = (A + w_tt) w_x^2 + (A + w_xx) w_t^2 - 2 (P w_t + Q w_x) w_tx
           + 2 (P w_tt - S w_t) w_x + 2 (Q w_xx - w_x w_tx) w_t,

    A = 4xs/D^2,  P = 2s/D,  Q = 2x/D,  S = 2(s^2 + x^2)/D^2.

The coefficients a..e returned by :func:`coefficients` are the exact
partial derivatives of this residual with respect to the second-order jet
of w, so that a h_tt - b h_xx - c h_t + d h_x - e h_tx is its Frechet
derivative at the background w_bar.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .exact_family import Jet2
from .geometry import ConeDomain, DomainError, SpaceTimeGrid, degenerate_x

DEGENERATE_TOL = 1e-12


def _check(t, x, T):
    s = T - np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any(s <= 0) or np.any(x < -1e-14) or np.any(x >= s):
        raise DomainError("point outside the half cone 0 <= x < T - t")
    return s, x


def base_terms(t, x, T: float = 1.0) -> dict:
    """Background-only quantities of the perturbation equation."""
    s, x = _check(t, x, T)
    D = s * s - x * x
    den = D * D + 4 * s * s
    return dict(
        s=s, x=x, D=D, den=den,
        j=D * D / den,
        b0=(D * D - 4 * x * x) / den,
        c0=8 * s / den,
        d0=8 * x / den,
        e0=8 * x * s / den,
        A=4 * x * s / D**2,
        P=2 * s / D,
        Q=2 * x / D,
        S=2 * (s * s + x * x) / D**2,
    )


def nonlinear_block(w: Jet2, bt: dict):
    """The bracket N(w) multiplied by j in the perturbation equation."""
    A, P, Q, S = bt["A"], bt["P"], bt["Q"], bt["S"]
    return ((A + w.u_tt) * w.u_x**2 + (A + w.u_xx) * w.u_t**2
            - 2 * (P * w.u_t + Q * w.u_x) * w.u_tx
            + 2 * (P * w.u_tt - S * w.u_t) * w.u_x
            + 2 * (Q * w.u_xx - w.u_x * w.u_tx) * w.u_t)


def linear_part0(w: Jet2, bt: dict):
    """w_tt - b0 w_xx - c0 w_t + d0 w_x - e0 w_tx."""
    return (w.u_tt - bt["b0"] * w.u_xx - bt["c0"] * w.u_t
            + bt["d0"] * w.u_x - bt["e0"] * w.u_tx)


def perturbation_residual(w: Jet2, t, x, T: float = 1.0):
    """Left-hand side of the perturbation equation at (t, x)."""
    bt = base_terms(t, x, T)
    return linear_part0(w, bt) + bt["j"] * nonlinear_block(w, bt)


@dataclass
class Coefficients:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    e: np.ndarray
    j: np.ndarray

    def apply(self, h: Jet2):
        return (self.a * h.u_tt - self.b * h.u_xx - self.c * h.u_t
                + self.d * h.u_x - self.e * h.u_tx)


def coefficients_from_terms(wb: Jet2, bt: dict) -> Coefficients:
    A, P, Q, S, j = bt["A"], bt["P"], bt["Q"], bt["S"], bt["j"]
    wt, wx, wtt, wtx, wxx = wb.u_t, wb.u_x, wb.u_tt, wb.u_tx, wb.u_xx
    a = 1 + j * (wx**2 + 2 * P * wx)
    b = bt["b0"] - j * (wt**2 + 2 * Q * wt)
    c = bt["c0"] - j * (2 * wt * (A + wxx) - 2 * P * wtx - 2 * S * wx
                        + 2 * (Q * wxx - wx * wtx))
    d = bt["d0"] + j * (2 * A * wx + 2 * wtt * (wx + P) - 2 * Q * wtx
                        - 2 * S * wt - 2 * wtx * wt)
    e = bt["e0"] + 2 * j * (P * wt + Q * wx + wx * wt)
    shape = np.broadcast(bt["s"], bt["x"]).shape
    return Coefficients(*(np.broadcast_to(np.asarray(v, dtype=float), shape).copy()
                          for v in (a, b, c, d, e, j)))


def coefficients(bg: Jet2, t, x, T: float = 1.0) -> Coefficients:
    """Coefficients a, b, c, d, e, j of the linearised operator at background bg."""
    return coefficients_from_terms(bg, base_terms(t, x, T))


ZERO_JET = Jet2()


class PointType(enum.Enum):
    HYPERBOLIC = "hyperbolic"
    DEGENERATE = "degenerate"
    ELLIPTIC = "elliptic"


def classify_point(bg: Jet2, t: float, x: float, T: float = 1.0,
                   tol: float = DEGENERATE_TOL) -> PointType:
    """Type of the operator at (t, x), read off the sign of b."""
    b = float(coefficients(bg, t, x, T).b)
    if abs(b) <= tol:
        return PointType.DEGENERATE
    return PointType.HYPERBOLIC if b > 0 else PointType.ELLIPTIC


def principal_discriminant(cf: Coefficients):
    """e^2/4 + a b: positive where the principal symbol a p^2 - e p q - b q^2
    has two distinct real characteristic directions."""
    return 0.25 * cf.e**2 + cf.a * cf.b


@dataclass
class BackgroundField:
    """A background w_bar sampled on a space-time grid, with its derivatives.

    Derivatives are with respect to the physical (t, x) variables.
    """

    grid: SpaceTimeGrid
    jet: Jet2
    R: float = 0.1

    @classmethod
    def zero(cls, grid: SpaceTimeGrid, R: float = 0.1) -> "BackgroundField":
        z = np.zeros(grid.shape)
        return cls(grid, Jet2(z, z, z, z, z, z), R)

    @classmethod
    def from_function(cls, grid: SpaceTimeGrid, fn, R: float = 0.1) -> "BackgroundField":
        """fn(t, x) -> Jet2 of arrays, evaluated on the grid nodes."""
        tt, _, xx = grid.mesh()
        return cls(grid, fn(tt, xx), R)

    def sup_norm(self) -> float:
        return float(max(np.max(np.abs(v)) for v in self.jet.entries()))

    def in_ball(self) -> bool:
        return self.sup_norm() <= self.R


def coefficient_field(bg: BackgroundField) -> Coefficients:
    tt, _, xx = bg.grid.mesh()
    return coefficients(bg.jet, tt, xx, bg.grid.dom.T)


def sign_change_positions(b_row: np.ndarray, x_row: np.ndarray) -> np.ndarray:
    """Linearly interpolated zero crossings of b along one time slice."""
    sb = np.sign(b_row)
    idx = np.nonzero(sb[:-1] * sb[1:] < 0)[0]
    x0, x1 = x_row[idx], x_row[idx + 1]
    b0, b1 = b_row[idx], b_row[idx + 1]
    return x0 - b0 * (x1 - x0) / (b1 - b0)


def coefficient_envelopes(bg: Jet2, s) -> dict:
    """Right-hand sides of the coefficient bounds, without the constant."""
    wt, wx, wtt, wtx, wxx = (np.abs(v) for v in (bg.u_t, bg.u_x, bg.u_tt, bg.u_tx, bg.u_xx))
    inv = 1 / s
    return dict(
        a=(1 + inv) * (1 + wx + wx**2),
        b=(1 + inv) * (1 + wt + wt**2),
        c=(1 + inv**2) * (1 + wt + wx + wtx + wxx + wx**2 + wxx**2),
        d=1 + inv**3 * (1 + wx + wtt + wtx + wt**2 + wx**2 + wtt**2 + wtx**2),
        # the printed bound for e carries unbarred w; read as the background
        e=1 + inv * (1 + wt + wx + wt**2 + wx**2),
        j=np.ones_like(inv),
    )


@dataclass
class CoefficientBoundsReport:
    constants: dict
    j_range: tuple[float, float]

    @property
    def ok(self) -> bool:
        return (all(np.isfinite(c) for c in self.constants.values())
                and 0 < self.j_range[0] and self.j_range[1] < 1)


def check_coefficient_bounds(cf: Coefficients, bg: BackgroundField) -> CoefficientBoundsReport:
    """Smallest constant C per coefficient with |coef| <= C * envelope on the grid."""
    tt, _, _ = bg.grid.mesh()
    s = bg.grid.dom.T - tt
    env = coefficient_envelopes(bg.jet, s)
    consts = {name: float(np.max(np.abs(getattr(cf, name)) / env[name]))
              for name in ("a", "b", "c", "d", "e", "j")}
    return CoefficientBoundsReport(consts, (float(cf.j.min()), float(cf.j.max())))


def d_growth_exponent(T: float, times, bg_fn=None) -> float:
    """Least-squares slope of log max|d(t, 0)| against log(1/(T - t))."""
    times = np.asarray(times, dtype=float)
    vals = []
    for t in times:
        wb = ZERO_JET if bg_fn is None else bg_fn(t, 0.0)
        vals.append(abs(float(coefficients(wb, t, 0.0, T).d)) + 1e-300)
    slope, _ = np.polyfit(np.log(1 / (T - times)), np.log(vals), 1)
    return float(slope)


def type_atlas(grid: SpaceTimeGrid, bg: BackgroundField | None = None) -> dict:
    """Sign of b on the grid and the located zero crossing per time slice."""
    bg = bg or BackgroundField.zero(grid)
    cf = coefficient_field(bg)
    _, _, xx = grid.mesh()
    crossings = []
    for n, t in enumerate(grid.t):
        pos = sign_change_positions(cf.b[n], xx[n])
        crossings.append(pos)
    return dict(coefficients=cf, crossings=crossings,
                x_star=degenerate_x(grid.t, grid.dom.T))


__all__ = [
    "BackgroundField", "Coefficients", "ConeDomain", "CoefficientBoundsReport", "PointType",
    "ZERO_JET", "base_terms", "check_coefficient_bounds", "classify_point",
    "coefficient_field", "coefficients", "d_growth_exponent", "degenerate_x",
    "coefficient_envelopes", "linear_part0", "nonlinear_block", "perturbation_residual",
    "principal_discriminant", "sign_change_positions", "type_atlas",
]
