import numpy as np
import pytest

from borninfeld.exact_family import Jet2
from borninfeld.geometry import ConeDomain, SpaceTimeGrid, degenerate_xi
from borninfeld.linearization import BackgroundField, Coefficients, coefficient_field
from borninfeld.mixed_solver import (
    EnergyWeights,
    LinearProblem,
    SingularSystemError,
    apply_rectangle,
    assemble,
    commuted_source,
    degenerate_nodes,
    energy_monitor,
    higher_order_monitor,
    manufactured_problem,
    mixed_derivative,
    operator_apply,
    pde_row_nodes,
    rectangle_coefficients,
    solve,
)
from borninfeld.smoothing_sobolev import ResolutionError


def zero_cf(n):
    g = SpaceTimeGrid(ConeDomain(), n, n)
    return g, coefficient_field(BackgroundField.zero(g))


def random_background(g, rng, R=0.05):
    amp = rng.uniform(0.1, 0.2) * R
    a, p = rng.uniform(0.5, 1.5), rng.uniform(0, np.pi)

    def fn(t, x):
        S, C = np.sin(a * x + p), np.cos(a * x + p)
        q, qt = (t + 0.5) ** 2 / 2.25, 2 * (t + 0.5) / 2.25
        return Jet2(u=amp * S * q, u_t=amp * S * qt, u_x=amp * a * C * q,
                    u_tt=amp * S * 2 / 2.25, u_tx=amp * a * C * qt, u_xx=-amp * a * a * S * q)

    bg = BackgroundField.from_function(g, fn, R=R)
    assert bg.in_ball()
    return bg


def sine_cubic(g, cf):
    tt, xi, _ = g.mesh()
    w = 3 * np.pi
    S, C = np.sin(w * xi), np.cos(w * xi)
    h = S * tt**3
    f = apply_rectangle(g, cf, 3 * tt**2 * S, 6 * tt * S, w * C * tt**3,
                        -w * w * S * tt**3, 3 * w * C * tt**2)
    return h, f


class TestAssemble:
    def test_square_and_sparse(self):
        g, cf = zero_cf(16)
        A, r = assemble(LinearProblem(g, cf, np.zeros(g.shape)))
        assert A.shape == (17 * 17, 17 * 17) and r.shape == (17 * 17,)
        assert A.nnz < 20 * A.shape[0]

    def test_pde_row_layout(self):
        g, cf = zero_cf(16)
        f = np.arange(float(np.prod(g.shape))).reshape(g.shape) + 1.0
        _, r = assemble(LinearProblem(g, cf, f))
        rows, n, i = pde_row_nodes(g)
        assert np.array_equal(r[rows], f[n, i])
        assert rows[-1] == r.size - 1

    def test_regularised_b(self):
        g, cf = zero_cf(16)
        p = LinearProblem(g, cf, np.zeros(g.shape), kappa=1e-3, theta=2e-3)
        rb = p.regularised_b()
        pos = cf.b >= 0
        assert np.allclose(rb[pos], cf.b[pos] + 1e-3)
        assert np.allclose(rb[~pos], cf.b[~pos] - 2e-3)

    def test_rejects_bad_input(self):
        g, cf = zero_cf(16)
        with pytest.raises(ValueError):
            LinearProblem(g, cf, np.zeros(g.shape), kappa=-1.0)
        with pytest.raises(ValueError):
            LinearProblem(g, cf, np.zeros((3, 3)))
        with pytest.raises(ValueError):
            LinearProblem(g, cf, np.zeros(g.shape), h0=np.ones(17))

    def test_singular_reported(self):
        g, _ = zero_cf(16)
        z = np.zeros(g.shape)
        cf = Coefficients(z, z, z, z, z, z)
        with pytest.raises(SingularSystemError):
            solve(LinearProblem(g, cf, z, kappa=0.0, theta=0.0))

    def test_degenerate_nodes_track_curve(self):
        g, _ = zero_cf(64)
        idx = degenerate_nodes(g)
        assert np.all(np.abs(idx * g.dxi - degenerate_xi(g.t, 1.0)) <= 0.5 * g.dxi + 1e-12)


class TestSolve:
    def test_zero_data_zero_solution(self):
        g, cf = zero_cf(32)
        res = solve(LinearProblem(g, cf, np.zeros(g.shape)))
        assert np.max(np.abs(res.h)) <= 1e-10

    def test_zero_data_random_backgrounds(self):
        rng = np.random.default_rng(0)
        g = SpaceTimeGrid(ConeDomain(), 32, 32)
        for _ in range(5):
            cf = coefficient_field(random_background(g, rng))
            res = solve(LinearProblem(g, cf, np.zeros(g.shape)))
            assert np.max(np.abs(res.h)) <= 1e-10

    def test_manufactured_second_order(self):
        errs = []
        for n in (32, 64, 128):
            g, cf = zero_cf(n)
            p, H = manufactured_problem(g, cf, kappa=0.0, theta=0.0)
            res = solve(p)
            assert res.residual <= 1e-8
            errs.append(np.max(np.abs(res.h - H)))
        slope = np.polyfit(np.log([32, 64, 128]), np.log(errs), 1)[0]
        assert slope == pytest.approx(-2.0, abs=0.3)

    def test_kappa_bias_is_linear(self):
        g, cf = zero_cf(64)
        p0, _ = manufactured_problem(g, cf, 0.0, 0.0)
        h0 = solve(p0).h
        d = [np.max(np.abs(solve(manufactured_problem(g, cf, k, 0.0)[0]).h - h0))
             for k in (1e-4, 1e-3)]
        assert d[1] / d[0] == pytest.approx(10.0, rel=0.1)

    def test_theta_makes_rectangle_operator_elliptic_near_outer_edge(self):
        # b - theta flips the sign of the (t, xi) discriminant in a band at
        # xi = delta, where the characteristics are nearly tangent to it
        g, cf = zero_cf(64)
        for theta, expect in ((0.0, False), (1e-3, True)):
            p = LinearProblem(g, cf, np.zeros(g.shape), kappa=0.0, theta=theta)
            k = rectangle_coefficients(g, cf, p.regularised_b())
            bad = k["txi"] ** 2 - 4 * k["tt"] * k["xixi"] < 0
            assert bad.any() == expect
            for row in bad:
                # the band is contiguous and ends at xi = delta
                if row.any():
                    first = np.argmax(row)
                    assert row[first:].all()

    def test_small_background_smoke(self):
        rng = np.random.default_rng(1)
        g = SpaceTimeGrid(ConeDomain(), 32, 32)
        cf = coefficient_field(random_background(g, rng))
        _, H = manufactured_problem(g, cf)
        res = solve(manufactured_problem(g, cf)[0])
        assert np.all(np.isfinite(res.h)) and res.energy.finite()
        assert np.max(np.abs(res.h - H)) < 1e-2


class TestEnergyMonitor:
    def test_zero(self):
        g, cf = zero_cf(32)
        rep = energy_monitor(np.zeros(g.shape), cf, g)
        assert rep.sides["hyp"] == (0.0, 0.0) and rep.sides["ell"] == (0.0, 0.0)
        assert rep.constants == {"hyp": 0.0, "ell": 0.0}
        assert np.all(rep.trace.hyp == 0) and np.all(rep.trace.ell == 0)
        assert rep.trace.finite() and np.all(np.isfinite(rep.trace.log_weight))

    def test_constants_refinement_stable(self):
        consts = []
        for n in (32, 64, 128):
            g, cf = zero_cf(n)
            p, _ = manufactured_problem(g, cf)
            h = solve(p).h
            consts.append(energy_monitor(h, cf, g, p.rhs, h0=p.h0, h1=p.h1).constants)
        for name in ("hyp", "ell"):
            vals = [c[name] for c in consts]
            assert 0 < min(vals) and max(vals) / min(vals) <= 2.0

    def test_margins_signs(self):
        g, cf = zero_cf(64)
        rep = energy_monitor(np.zeros(g.shape), cf, g, weights=EnergyWeights(50, 6, 10))
        for name in ("hyp_t", "ell_t", "ell_x"):
            assert rep.margins[name] > 0
        # at b = 0 the weight term vanishes and -b_t - |d| - |b_x| < 0
        t, xi = rep.margin_location["hyp_x"]
        assert rep.margins["hyp_x"] < 0
        assert abs(xi - degenerate_xi(t, 1.0)) <= 2 * g.dxi
        assert not rep.verdict

    def test_weights_validated(self):
        with pytest.raises(ValueError):
            EnergyWeights(nu=0.0)


class TestHigherOrder:
    def test_quadratic_in_x_vanishes(self):
        g, cf = zero_cf(64)
        _, _, xx = g.mesh()
        rep = higher_order_monitor(xx**2 + 3 * xx, cf, g, 2)
        assert all(v <= 1e-10 for v in rep.lhs.values())

    def test_sine_cubic_stable(self):
        consts = []
        for n in (32, 64, 128):
            g, cf = zero_cf(n)
            h, f = sine_cubic(g, cf)
            rep = higher_order_monitor(h, cf, g, 2, f)
            assert all(np.isfinite(v) for v in rep.constants.values())
            consts.append(rep.constants)
        for name in ("hyp", "ell"):
            vals = [c[name] for c in consts]
            assert max(vals) / min(vals) <= 2.0

    def test_commuted_source_leibniz(self):
        errs = []
        for n in (64, 128):
            g, cf = zero_cf(n)
            h, f = sine_cubic(g, cf)
            fk = commuted_source(h, f, cf, g, 2)
            lhs = operator_apply(cf, mixed_derivative(h, g, 2), g)
            q = n // 4
            inner = (slice(q, -q), slice(q, -q))
            errs.append(np.max(np.abs(fk - lhs)[inner]) / np.max(np.abs(lhs)[inner]))
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.2)

    def test_resolution_and_order(self):
        g, cf = zero_cf(16)
        with pytest.raises(ResolutionError):
            higher_order_monitor(np.zeros(g.shape), cf, g, 2)
        with pytest.raises(ValueError):
            higher_order_monitor(np.zeros(g.shape), cf, g, 1)
