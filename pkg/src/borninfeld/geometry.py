"""Grids, cone domains and the similarity change of variables.

The stability experiments live on the truncated backward light cone

    B_t = {(t, x) : 0 <= t <= T_bar, 0 <= x <= delta * (T - t)},

which is mapped onto the fixed rectangle [0, T_bar] x [0, delta] through
xi = x / (T - t).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class DomainError(ValueError):
    """A point lies outside the region where an operation is defined."""


@dataclass(frozen=True)
class Grid1D:
    x_min: float
    x_max: float
    n: int

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise ValueError(f"x_min={self.x_min} must be < x_max={self.x_max}")
        if self.n < 8:
            raise ValueError(f"need at least 8 cells, got n={self.n}")

    @property
    def h(self) -> float:
        return (self.x_max - self.x_min) / self.n

    @property
    def nodes(self) -> np.ndarray:
        return self.x_min + self.h * np.arange(self.n + 1)

    @property
    def length(self) -> float:
        return self.x_max - self.x_min


@dataclass(frozen=True)
class ConeDomain:
    """Truncated cone B_t with apex at (T, 0)."""

    T: float = 1.0
    delta: float = 0.9
    T_bar: float = 0.9

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError("T must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not 0 < self.T_bar < self.T:
            raise ValueError("T_bar must lie in (0, T)")

    @property
    def delta_bar(self) -> float:
        return self.T - self.T_bar

    def half_width(self, t):
        return self.delta * (self.T - np.asarray(t, dtype=float))

    def contains(self, t: float, x: float, slack: float = 1e-12) -> bool:
        return (-slack <= t <= self.T_bar + slack
                and -slack <= x <= self.delta * (self.T - t) + slack)


@dataclass(frozen=True)
class SimilarityPoint:
    tau: float
    rho: float

    def __post_init__(self):
        if not abs(self.rho) < 1:
            raise DomainError(f"|rho| must be < 1, got rho={self.rho}")


def to_similarity(t: float, x: float, T: float) -> SimilarityPoint:
    """Map (t, x) inside the backward light cone to (tau, rho)."""
    s = T - t
    if s <= 0:
        raise DomainError(f"t={t} is not before the blow-up time T={T}")
    if abs(x) >= s:
        raise DomainError(f"x={x} is outside the light cone |x| < {s}")
    return SimilarityPoint(tau=-math.log(s), rho=x / s)


def from_similarity(p: SimilarityPoint, T: float) -> tuple[float, float]:
    s = math.exp(-p.tau)
    return T - s, p.rho * s


def cone_to_rectangle(t: float, x: float, dom: ConeDomain) -> tuple[float, float]:
    """Return (t, xi) with xi = x / (T - t) in [0, delta].

    Derivatives transform as d/dx = (T-t)^-1 d/dxi and
    d/dt|_x = d/dt|_xi + xi (T-t)^-1 d/dxi.
    """
    if not dom.contains(t, x):
        raise DomainError(f"({t}, {x}) is outside B_t for {dom}")
    xi = x / (dom.T - t)
    return t, min(max(xi, 0.0), dom.delta)


def rectangle_to_cone(t, xi, dom: ConeDomain):
    return t, np.asarray(xi) * (dom.T - np.asarray(t))


def degenerate_x(t, T: float):
    """Curve x*(t) = -1 + sqrt(1 + (T-t)^2) on which b vanishes (w_bar = 0).

    Written as s^2 / (1 + sqrt(1 + s^2)) to avoid cancellation as t -> T.
    """
    s = T - np.asarray(t, dtype=float)
    if np.any(s <= 0):
        raise DomainError("degenerate_x requires t < T")
    out = s * s / (1.0 + np.sqrt(1.0 + s * s))
    return float(out) if out.ndim == 0 else out


def degenerate_xi(t, T: float):
    s = T - np.asarray(t, dtype=float)
    return degenerate_x(t, T) / s


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform (t, xi) grid on the rectangle image of B_t."""

    dom: ConeDomain
    nt: int
    nx: int

    def __post_init__(self):
        if self.nt < 16 or self.nx < 16:
            raise ValueError("SpaceTimeGrid needs nt, nx >= 16")

    @property
    def dt(self) -> float:
        return self.dom.T_bar / self.nt

    @property
    def dxi(self) -> float:
        return self.dom.delta / self.nx

    @property
    def t(self) -> np.ndarray:
        return self.dt * np.arange(self.nt + 1)

    @property
    def xi(self) -> np.ndarray:
        return self.dxi * np.arange(self.nx + 1)

    @property
    def shape(self) -> tuple[int, int]:
        return self.nt + 1, self.nx + 1

    def mesh(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (t, xi, x) arrays of shape (nt+1, nx+1)."""
        tt, xx = np.meshgrid(self.t, self.xi, indexing="ij")
        return tt, xx, xx * (self.dom.T - tt)

    def s(self) -> np.ndarray:
        return self.dom.T - self.t
