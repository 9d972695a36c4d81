import math

import numpy as np
import pytest

from borninfeld.exact_family import (
    Jet2,
    SelfSimilarParams,
    Singularity,
    bi_residual,
    classify_singularity,
    eval_uk,
    scaling_orbit,
    similarity_profile,
    steady_ode_residual,
    steady_profile,
    timelike_q,
    wave_residual,
)
from borninfeld.geometry import DomainError


def random_cone_points(rng, n, T):
    t = rng.uniform(-1.0, T * 0.98, n)
    x = rng.uniform(-0.98, 0.98, n) * (T - t)
    return t, x


def odd_cubic_jet(t, x):
    """Jet of g(t + x) - g(t - x) with g(s) = s^3."""
    a, b = t + x, t - x
    return Jet2(u=a**3 - b**3, u_t=3 * a**2 - 3 * b**2, u_x=3 * a**2 + 3 * b**2,
                u_tt=6 * a - 6 * b, u_tx=6 * a + 6 * b, u_xx=6 * a - 6 * b)


class TestParams:
    def test_k_zero_rejected(self):
        with pytest.raises(ValueError):
            SelfSimilarParams(k=0.0)

    def test_T_positive(self):
        with pytest.raises(ValueError):
            SelfSimilarParams(k=1.0, T=0.0)


class TestEvalUk:
    def test_origin(self):
        j = eval_uk(SelfSimilarParams(), 0.0, 0.0)
        assert (j.u, j.u_t, j.u_x) == (0.0, 0.0, 2.0)

    def test_half(self):
        j = eval_uk(SelfSimilarParams(), 0.0, 0.5)
        assert j.u == pytest.approx(math.log(3), abs=1e-12)
        assert j.u_t == pytest.approx(4 / 3, abs=1e-12)
        assert j.u_x == pytest.approx(8 / 3, abs=1e-12)

    def test_gradient_at_origin(self):
        # the closed form gives u_x(t, 0) = 2k / (T - t)
        p = SelfSimilarParams(k=1.5, T=2.0)
        for t in (0.0, 1.0, 1.9, 1.999):
            j = eval_uk(p, t, 0.0)
            assert j.u == 0.0
            assert j.u_x * (p.T - t) == pytest.approx(2 * p.k, rel=1e-14)

    @pytest.mark.parametrize("t,x", [(1.0, 0.0), (0.0, 1.0), (0.5, -0.6)])
    def test_outside_cone(self, t, x):
        with pytest.raises(DomainError):
            eval_uk(SelfSimilarParams(), t, x)

    def test_second_derivatives_match_differences(self):
        p = SelfSimilarParams(k=-1.3, T=1.2)
        t0, x0 = 0.3, 0.4
        exact = eval_uk(p, t0, x0)
        errs = []
        for h in (1e-3, 5e-4):
            f = lambda dt, dx: float(eval_uk(p, t0 + dt, x0 + dx).u)
            utt = (f(h, 0) - 2 * f(0, 0) + f(-h, 0)) / h**2
            uxx = (f(0, h) - 2 * f(0, 0) + f(0, -h)) / h**2
            utx = (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4 * h * h)
            errs.append(np.array([utt - exact.u_tt, uxx - exact.u_xx, utx - exact.u_tx]))
        ratio = np.abs(errs[0]) / np.abs(errs[1])
        assert np.all((ratio > 3.5) & (ratio < 4.5))


class TestResiduals:
    def test_family_solves_both_equations(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            k = rng.choice([-1, 1]) * rng.uniform(0.1, 5.0)
            T = rng.uniform(0.5, 2.0)
            t, x = random_cone_points(rng, 1000, T)
            j = eval_uk(SelfSimilarParams(k, T), t, x)
            scale = 1 + j.max_abs() ** 2
            assert np.all(np.abs(bi_residual(j)) <= 1e-9 * scale)
            assert np.all(np.abs(wave_residual(j)) <= 1e-9 * scale)

    def test_zero_jet(self):
        assert bi_residual(Jet2()) == 0.0
        assert wave_residual(Jet2()) == 0.0

    def test_odd_cubic_solves_wave(self):
        rng = np.random.default_rng(2)
        t, x = rng.uniform(-1, 1, 200), rng.uniform(-1, 1, 200)
        assert np.max(np.abs(wave_residual(odd_cubic_jet(t, x)))) < 1e-12

    def test_odd_combination_bi_defect(self):
        # for u = g(t+x) - g(t-x) the BI operator reduces to
        # 4 (g''(a) g'(b)^2 - g''(b) g'(a)^2); a cubic g does not solve BI
        rng = np.random.default_rng(2)
        t, x = rng.uniform(-1, 1, 200), rng.uniform(-1, 1, 200)
        a, b = t + x, t - x
        defect = 4 * (6 * a * (3 * b**2) ** 2 - 6 * b * (3 * a**2) ** 2)
        assert np.allclose(bi_residual(odd_cubic_jet(t, x)), defect, atol=1e-10)
        assert np.max(np.abs(defect)) > 1.0

    def test_odd_logarithm_solves_bi(self):
        # g(y) = -k ln(T - y) reproduces u_k; these are the only smooth odd
        # combinations (besides linear g) that solve BI
        rng = np.random.default_rng(5)
        p = SelfSimilarParams(k=0.8, T=1.0)
        t, x = random_cone_points(rng, 200, p.T)
        j = eval_uk(p, t, x)
        assert np.max(np.abs(bi_residual(j)) / (1 + j.max_abs() ** 3)) < 1e-12

    def test_wave_residual_polynomials(self):
        assert wave_residual(Jet2(u_tt=2.0, u_xx=2.0)) == 0.0
        assert wave_residual(Jet2(u_tt=2.0)) == 2.0


class TestClassification:
    def test_examples(self):
        j = eval_uk(SelfSimilarParams(), 0.0, 0.5)
        assert timelike_q(j) == pytest.approx(1 + 4 / 0.75)
        assert classify_singularity(j) is Singularity.TIMELIKE
        assert classify_singularity(Jet2()) is Singularity.TIMELIKE
        assert classify_singularity(Jet2(u_t=1.0)) is Singularity.LIGHTLIKE
        assert classify_singularity(Jet2(u_t=2.0)) is Singularity.SPACELIKE

    def test_q_closed_form(self):
        rng = np.random.default_rng(3)
        k, T = -2.5, 1.7
        t, x = random_cone_points(rng, 500, T)
        q = timelike_q(eval_uk(SelfSimilarParams(k, T), t, x))
        D = (T - t) ** 2 - x**2
        assert np.all(q > 0)
        assert np.max(np.abs(q - (1 + 4 * k * k / D)) / (1 + 4 * k * k / D)) < 1e-10


class TestSteadyProfile:
    @pytest.mark.parametrize("k,rho", [(2.0, 0.0), (1.0, 0.7), (-3.0, -0.9)])
    def test_residual_vanishes(self, k, rho):
        assert abs(steady_ode_residual(k, rho)) <= 1e-12

    def test_grid(self):
        rho = np.linspace(-0.99, 0.99, 1001)
        assert np.max(np.abs(steady_ode_residual(1.0, rho))) <= 1e-12

    def test_domain(self):
        with pytest.raises(DomainError):
            steady_ode_residual(1.0, 1.0)

    def test_profile_is_tau_independent(self):
        p = SelfSimilarParams(k=0.7, T=1.0)
        rho = np.linspace(-0.95, 0.95, 101)
        ref = steady_profile(p.k, rho)
        for tau in (-1.0, 0.0, 2.0, 8.0):
            assert np.max(np.abs(similarity_profile(p, tau, rho) - ref)) <= 1e-10


class TestScaling:
    def test_identity(self):
        j = Jet2(1, 2, 3, 4, 5, 6)
        assert scaling_orbit(j, 1.0) == j

    @pytest.mark.parametrize("lam", [0.5, 2.0])
    def test_residual_homogeneity(self, lam):
        rng = np.random.default_rng(4)
        for _ in range(50):
            j = Jet2(*rng.normal(size=6))
            assert bi_residual(scaling_orbit(j, lam)) == pytest.approx(lam * bi_residual(j))

    def test_orbit_of_family(self):
        p, lam = SelfSimilarParams(k=1.2, T=1.0), 2.0
        # lam^-1 u_k(lam t, lam x) is the member with (k / lam, T / lam)
        q = SelfSimilarParams(k=p.k / lam, T=p.T / lam)
        for t, x in [(0.1, 0.1), (0.3, -0.1), (-0.5, 0.6)]:
            a = scaling_orbit(eval_uk(p, lam * t, lam * x), lam)
            b = eval_uk(q, t, x)
            assert np.allclose(a.entries(), b.entries(), atol=1e-10, rtol=1e-10)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            scaling_orbit(Jet2(), 0.0)
