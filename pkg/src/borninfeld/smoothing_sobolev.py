"""Discrete Sobolev norms and cosine-truncation smoothing operators.

Norms use second-order difference stencils for each derivative order
(central inside, one-sided at the ends) and the trapezoid rule.  The
smoothing operator Pi_theta expands a grid function on [0, L] in the cosine modes cos(k pi x / L) of
its even extension (a DCT-I of the samples) and keeps the modes with

    k pi / L <= theta,

so theta is an angular frequency.  This rule is the single place where
theta is tied to a mode index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import fft, sparse


class ResolutionError(ValueError):
    """The grid cannot resolve the requested number of derivatives."""


def _check_order(n_nodes: int, s: int):
    if s < 0 or int(s) != s:
        raise ValueError(f"order must be a non-negative integer, got {s}")
    if s > (n_nodes - 1) // 4:
        raise ResolutionError(f"order {s} exceeds the resolution limit {(n_nodes - 1) // 4}")


def _weights(offsets: np.ndarray, order: int) -> np.ndarray:
    """Finite-difference weights for d^order/dx^order on integer offsets."""
    k = np.arange(offsets.size)
    V = offsets[None, :].astype(float) ** k[:, None]
    rhs = np.zeros(offsets.size)
    rhs[order] = math.factorial(order)
    return np.linalg.solve(V, rhs)


@lru_cache(maxsize=64)
def _diff_matrix(n_nodes: int, order: int) -> sparse.csr_matrix:
    """Unit-spacing D^order: central in the interior, one-sided near the ends,
    second order everywhere."""
    half = (order + 1) // 2
    one_sided = order + 2
    rows, cols, vals = [], [], []
    for i in range(n_nodes):
        if half <= i < n_nodes - half:
            offs = np.arange(-half, half + 1)
        elif i < half:
            offs = np.arange(one_sided) - i
        else:
            offs = np.arange(-one_sided + 1, 1) + (n_nodes - 1 - i)
        w = _weights(offs, order)
        rows.extend([i] * offs.size)
        cols.extend(i + offs)
        vals.extend(w)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n_nodes, n_nodes))


def derivative(f: np.ndarray, order: int, h: float) -> np.ndarray:
    """D^order f along the last axis (second-order accurate)."""
    f = np.asarray(f, dtype=float)
    if order == 0:
        return f
    D = _diff_matrix(f.shape[-1], order)
    return (D @ f.reshape(-1, f.shape[-1]).T).T.reshape(f.shape) / h**order


def derivative_stack(f: np.ndarray, s: int, h: float) -> list[np.ndarray]:
    """[f, D f, ..., D^s f] along the last axis."""
    return [derivative(f, i, h) for i in range(s + 1)]


def squared_norm(f: np.ndarray, s: int, h: float) -> np.ndarray:
    """Sum over i <= s of the trapezoid integral of |D^i f|^2 (per slice)."""
    f = np.asarray(f, dtype=float)
    _check_order(f.shape[-1], s)
    return sum(np.trapezoid(d * d, dx=h, axis=-1) for d in derivative_stack(f, s, h))


def h_norm(f: np.ndarray, s: int, h: float):
    """Discrete H^s norm of samples f with spacing h."""
    return np.sqrt(squared_norm(f, s, h))


def c2s_norm(u: np.ndarray, s: int, dt: float, h: float) -> float:
    """sqrt of sup_t sum_{i=0..2} ||d_t^i u(t)||^2_{H^{s-i}} over stored slices.

    ``u`` has shape (time levels, nodes); time derivatives are second-order
    differences along axis 0.
    """
    u = np.asarray(u, dtype=float)
    if s < 2:
        raise ValueError("the C^s_2 norm needs s >= 2")
    if u.shape[0] < 3:
        raise ResolutionError("need at least three time levels")
    ut = np.gradient(u, dt, axis=0, edge_order=2)
    utt = np.gradient(ut, dt, axis=0, edge_order=2)
    total = squared_norm(u, s, h) + squared_norm(ut, s - 1, h) + squared_norm(utt, s - 2, h)
    return float(np.sqrt(np.max(total)))


@dataclass(frozen=True)
class SobolevNorm:
    order: int
    h: float

    def __call__(self, f):
        return h_norm(f, self.order, self.h)


def cutoff_index(theta: float, length: float) -> int:
    """Largest kept mode index: k pi / L <= theta."""
    return int(np.floor(theta * length / np.pi + 1e-12))


def smooth(f: np.ndarray, theta: float, length: float) -> np.ndarray:
    """Pi_theta f along the last axis of samples on [0, length]."""
    if theta < 1:
        raise ValueError("theta must be >= 1")
    f = np.asarray(f, dtype=float)
    coef = fft.dct(f, type=1, axis=-1)
    kmax = cutoff_index(theta, length)
    if kmax + 1 < coef.shape[-1]:
        coef[..., kmax + 1:] = 0.0
    return fft.idct(coef, type=1, axis=-1)


@dataclass(frozen=True)
class SmoothingOperator:
    theta: float
    length: float

    def __post_init__(self):
        if self.theta < 1:
            raise ValueError("theta must be >= 1")

    def __call__(self, f):
        return smooth(f, self.theta, self.length)


def cosine_corpus(n: int, length: float, count: int, max_mode: int, rng) -> list[np.ndarray]:
    """Random band-limited samples: cosine sums with modes k <= max_mode."""
    x = np.linspace(0.0, length, n + 1)
    k = np.arange(max_mode + 1)
    basis = np.cos(np.outer(k, x) * np.pi / length)
    out = []
    for _ in range(count):
        a = rng.normal(size=max_mode + 1) / (1 + k) ** rng.uniform(0.0, 1.5)
        out.append(a @ basis)
    return out


@dataclass
class AxiomReport:
    """Smallest constants making the three smoothing inequalities hold."""

    constants: dict[str, float]
    thetas: tuple
    orders: tuple
    worst: dict[str, tuple] = field(default_factory=dict)

    @property
    def C(self) -> float:
        return max(self.constants.values())

    def holds(self, bound: float = 10.0) -> bool:
        return self.C <= bound


def axiom_sweep(corpus, length: float, thetas=(2, 4, 8, 16, 32), orders=(0, 1, 2, 3),
                dtheta_frac: float = 0.25) -> AxiomReport:
    """Fit the constants of the three smoothing inequalities over a corpus.

    (i)   ||Pi f||_{s1} <= C theta^{(s1-s2)+} ||f||_{s2}
    (ii)  ||Pi f - f||_{s1} <= C theta^{s1-s2} ||f||_{s2},  s1 <= s2
    (iii) ||d/dtheta Pi f||_{s1} <= C theta^{s1-s2-1} ||f||_{s2}

    The theta-derivative is the forward difference with step
    dtheta_frac * theta.
    """
    consts = {"bounded": 0.0, "approximation": 0.0, "derivative": 0.0}
    worst: dict[str, tuple] = {}

    def bump(name, val, where):
        if val > consts[name]:
            consts[name] = val
            worst[name] = where

    for idx, f in enumerate(corpus):
        h = length / (f.shape[-1] - 1)
        nf = {s: float(h_norm(f, s, h)) for s in orders}
        for th in thetas:
            pf = smooth(f, th, length)
            dth = dtheta_frac * th
            dpf = (smooth(f, th + dth, length) - pf) / dth
            for s1 in orders:
                n_pf = float(h_norm(pf, s1, h))
                n_err = float(h_norm(pf - f, s1, h))
                n_d = float(h_norm(dpf, s1, h))
                for s2 in orders:
                    if nf[s2] == 0:
                        continue
                    where = (idx, th, s1, s2)
                    bump("bounded", n_pf / (th ** max(s1 - s2, 0) * nf[s2]), where)
                    if s1 <= s2:
                        bump("approximation", n_err / (th ** (s1 - s2) * nf[s2]), where)
                    bump("derivative", n_d / (th ** (s1 - s2 - 1) * nf[s2]), where)
    return AxiomReport(consts, tuple(thetas), tuple(orders), worst)


def rate_check(corpus, length: float, m_values=(1, 2, 3, 4, 5), orders=(0, 1, 2, 3)) -> float:
    """Fitted C in ||Pi_{N_m} f||_{s1} <= C N_m^{s1-s2} ||f||_{s2}, s1 >= s2, N_m = 2^m."""
    worst = 0.0
    for f in corpus:
        h = length / (f.shape[-1] - 1)
        for m in m_values:
            N = 2.0**m
            pf = smooth(f, N, length)
            for s1 in orders:
                for s2 in orders:
                    if s1 < s2:
                        continue
                    nf = float(h_norm(f, s2, h))
                    if nf > 0:
                        worst = max(worst, float(h_norm(pf, s1, h)) / (N ** (s1 - s2) * nf))
    return worst
