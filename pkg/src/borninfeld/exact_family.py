"""Explicit self-similar blow-up family u_k = k ln((T-t+x)/(T-t-x)).

Second derivatives (s = T - t, D = s^2 - x^2):

    u_xx = u_tt = 4 k s x / D^2,    u_tx = 2 k (s^2 + x^2) / D^2,

so u_tt - u_xx = 0 identically.  They are checked against finite
differences in the test suite.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, fields

import numpy as np

from .geometry import DomainError

LIGHTLIKE_TOL = 1e-10


@dataclass(frozen=True)
class SelfSimilarParams:
    k: float = 1.0
    T: float = 1.0

    def __post_init__(self):
        if self.k == 0:
            raise ValueError("k must be nonzero (k in R \\ {0})")
        if self.T <= 0:
            raise ValueError("T must be positive")


@dataclass(frozen=True)
class Jet2:
    """Value and derivatives up to second order at one point.

    Entries may also be numpy arrays of equal shape (vectorised jets).
    """

    u: float = 0.0
    u_t: float = 0.0
    u_x: float = 0.0
    u_tt: float = 0.0
    u_tx: float = 0.0
    u_xx: float = 0.0

    def entries(self) -> tuple:
        return tuple(getattr(self, f.name) for f in fields(self))

    def max_abs(self):
        return np.max(np.abs(np.stack(np.broadcast_arrays(*self.entries()))), axis=0)

    def __add__(self, other: "Jet2") -> "Jet2":
        return Jet2(*(a + b for a, b in zip(self.entries(), other.entries())))

    def scaled(self, c: float) -> "Jet2":
        return Jet2(*(c * a for a in self.entries()))


class Singularity(enum.Enum):
    TIMELIKE = "timelike"
    SPACELIKE = "spacelike"
    LIGHTLIKE = "lightlike"


def _check_cone(T, t, x):
    s = T - np.asarray(t, dtype=float)
    if np.any(s <= 0) or np.any(np.abs(x) >= s):
        raise DomainError("eval_uk needs t < T and |x| < T - t")
    return s


def eval_uk(p: SelfSimilarParams, t, x) -> Jet2:
    """Jet of u_k at (t, x); vectorised over array arguments."""
    x = np.asarray(x, dtype=float)
    s = _check_cone(p.T, t, x)
    k = p.k
    D = s * s - x * x
    u = k * (np.log1p(x / s) - np.log1p(-x / s))
    u_x = 2 * k * s / D
    u_t = 2 * k * x / D
    u_xx = 4 * k * s * x / D**2
    u_tx = 2 * k * (s * s + x * x) / D**2
    return Jet2(u=u, u_t=u_t, u_x=u_x, u_tt=u_xx, u_tx=u_tx, u_xx=u_xx)


def bi_residual(j: Jet2):
    """Born-Infeld operator u_tt(1+u_x^2) - u_xx(1-u_t^2) - 2 u_t u_x u_tx."""
    return (j.u_tt * (1 + j.u_x**2) - j.u_xx * (1 - j.u_t**2)
            - 2 * j.u_t * j.u_x * j.u_tx)


def wave_residual(j: Jet2):
    return j.u_tt - j.u_xx


def timelike_q(j: Jet2):
    return 1 - j.u_t**2 + j.u_x**2


def classify_singularity(j: Jet2, tol: float = LIGHTLIKE_TOL) -> Singularity:
    q = timelike_q(j)
    if q > tol:
        return Singularity.TIMELIKE
    if q < -tol:
        return Singularity.SPACELIKE
    return Singularity.LIGHTLIKE


def steady_profile(k: float, rho):
    rho = np.asarray(rho, dtype=float)
    if np.any(np.abs(rho) >= 1):
        raise DomainError("steady profile needs |rho| < 1")
    return k * (np.log1p(rho) - np.log1p(-rho))


def steady_ode_residual(k: float, rho):
    """(rho^2 - 1) v'' + 2 rho v' for v = k ln((1+rho)/(1-rho))."""
    rho = np.asarray(rho, dtype=float)
    if np.any(np.abs(rho) >= 1):
        raise DomainError("steady ODE needs |rho| < 1")
    one_m = 1 - rho * rho
    vp = 2 * k / one_m
    vpp = 4 * k * rho / one_m**2
    out = (rho * rho - 1) * vpp + 2 * rho * vp
    return float(out) if out.ndim == 0 else out


def scaling_orbit(j: Jet2, lam: float) -> Jet2:
    """Jet of u_lam(t, x) = u(lam t, lam x) / lam, given the jet of u at (lam t, lam x)."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    return Jet2(u=j.u / lam, u_t=j.u_t, u_x=j.u_x,
                u_tt=lam * j.u_tt, u_tx=lam * j.u_tx, u_xx=lam * j.u_xx)


def similarity_profile(p: SelfSimilarParams, tau: float, rho):
    """u_k read through the similarity coordinates (independent of tau)."""
    s = math.exp(-tau)
    t = p.T - s
    return eval_uk(p, t, np.asarray(rho) * s).u
