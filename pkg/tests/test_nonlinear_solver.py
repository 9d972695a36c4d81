import numpy as np
import pytest

from borninfeld.exact_family import SelfSimilarParams, eval_uk
from borninfeld.geometry import Grid1D
from borninfeld.geometry import DomainError
from borninfeld.nonlinear_solver import (
    Dirichlet,
    FieldState,
    NonTimelikeError,
    Periodic,
    SliceState,
    Termination,
    bi_rhs,
    cfl_dt,
    discrete_mass,
    evolve,
    evolve_slice,
    exact_slice_state,
    exact_state,
    exact_trace_bc,
    gradient_at,
    slice_rhs,
    step,
    zero_dirichlet,
)

P1 = SelfSimilarParams(k=1.0, T=1.0)


def bump(x, c=0.0, w=0.3):
    r = (x - c) / w
    out = np.zeros_like(x)
    m = np.abs(r) < 1
    out[m] = np.exp(-1 / (1 - r[m] ** 2))
    return out


def bi_formula(u_t, u_x, u_tx, u_xx):
    return (u_xx * (1 - u_t**2) + 2 * u_t * u_x * u_tx) / (1 + u_x**2)


class TestRhs:
    def test_zero(self):
        g = Grid1D(0, 1, 16)
        st = FieldState(g, 0.0, np.zeros(17), np.zeros(17))
        assert np.all(bi_rhs(st, zero_dirichlet()) == 0)

    def test_exact_family_second_order(self):
        errs = []
        for n in (512, 1024):
            g = Grid1D(0, 0.5, n)
            jet = eval_uk(P1, 0.0, g.nodes)
            rhs = bi_rhs(exact_state(P1, g), exact_trace_bc(P1, g))
            errs.append(np.max(np.abs(rhs - jet.u_tt)[2:-2]))
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)

    def test_odd_sine_combination_second_order(self):
        # u = sin(t + x) - sin(t - x) at t = 0.3; rhs is compared with the BI
        # formula evaluated on the analytic derivatives
        t = 0.3
        errs = []
        for n in (256, 512):
            g = Grid1D(-1, 1, n)
            a, b = t + g.nodes, t - g.nodes
            u = np.sin(a) - np.sin(b)
            v = np.cos(a) - np.cos(b)
            u_x = np.cos(a) + np.cos(b)
            u_tx = -np.sin(a) - np.sin(b)
            u_xx = -np.sin(a) + np.sin(b)
            exact = bi_formula(v, u_x, u_tx, u_xx)
            rhs = bi_rhs(FieldState(g, t, u, v), zero_dirichlet())
            errs.append(np.max(np.abs(rhs - exact)[2:-2]))
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.15)


class TestCfl:
    def test_zero_state(self):
        g = Grid1D(0, 1, 100)
        st = FieldState(g, 0.0, np.zeros(101), np.zeros(101))
        assert cfl_dt(st, 0.4) == pytest.approx(0.4 * g.h)

    def test_non_timelike(self):
        g = Grid1D(0, 1, 16)
        st = FieldState(g, 0.0, np.zeros(17), np.full(17, 2.0))
        with pytest.raises(NonTimelikeError):
            cfl_dt(st)

    def test_exact_state_near_blowup(self):
        # the spec speeds stay O(1) as t -> T, so dt stays near cfl * h
        g = Grid1D(0, 0.045, 256)
        dts = [cfl_dt(exact_state(P1, g, t)) for t in (0.0, 0.5, 0.95)]
        assert all(0.1 * 0.4 * g.h <= dt <= 0.4 * g.h for dt in dts)


class TestStep:
    def test_zero_state_stays_zero(self):
        g = Grid1D(0, 1, 32)
        st = FieldState(g, 0.0, np.zeros(33), np.zeros(33))
        out = step(st, zero_dirichlet(), 0.01)
        assert np.all(out.u == 0) and np.all(out.v == 0) and out.t == 0.01

    def test_rejects_large_dt(self):
        g = Grid1D(0, 1, 32)
        st = FieldState(g, 0.0, np.zeros(33), np.zeros(33))
        with pytest.raises(ValueError):
            step(st, zero_dirichlet(), 0.1)
        with pytest.raises(ValueError):
            step(st, zero_dirichlet(), -0.01)

    def test_exact_data_long_run(self):
        g = Grid1D(0, 0.45, 1024)
        rep = evolve(exact_state(P1, g), exact_trace_bc(P1, g), 0.5, record_every=1000)
        assert rep.terminated is Termination.REACHED_T_END
        assert np.max(np.abs(rep.final.u - eval_uk(P1, 0.5, g.nodes).u)) <= 1e-4

    def test_generic_boundary_provider(self):
        class Pinned:
            periodic = False

            def apply(self, t, u, v):
                u[0] = u[-1] = 0.0
                v[0] = v[-1] = 0.0

        g = Grid1D(-1, 1, 64)
        st = FieldState(g, 0.0, 0.1 * bump(g.nodes), np.zeros(65))
        a = step(st, Pinned(), 0.01)
        b = step(st, zero_dirichlet(), 0.01)
        assert np.allclose(a.u, b.u, atol=1e-14) and np.allclose(a.v, b.v, atol=1e-14)


class TestEvolve:
    def test_zero_data(self):
        g = Grid1D(0, 1, 32)
        rep = evolve(FieldState(g, 0.0, np.zeros(33), np.zeros(33)), zero_dirichlet(), 0.2)
        assert rep.terminated is Termination.REACHED_T_END
        assert np.all(rep.grad_at_origin == 0) and np.all(rep.mass == 0)
        n = len(rep.times)
        assert len(rep.mass) == len(rep.cfl_dt_history) == len(rep.grad_at_origin) == n
        assert np.all(np.diff(rep.times) > 0)

    def test_convergence_order(self):
        errs = []
        for n in (256, 512, 1024):
            g = Grid1D(0, 0.25, n)
            rep = evolve(exact_state(P1, g), exact_trace_bc(P1, g), 0.5, record_every=1000)
            errs.append(np.max(np.abs(rep.final.u - eval_uk(P1, 0.5, g.nodes).u)))
        slope = np.polyfit(np.log([256, 512, 1024]), np.log(errs), 1)[0]
        assert slope == pytest.approx(-2.0, abs=0.3)

    def test_trace_without_slope_is_underdetermined(self):
        # beyond the degenerate curve both characteristics enter at the right
        # end; a u-trace alone leaves an n-independent error
        errs = []
        for n in (256, 512):
            g = Grid1D(0, 0.25, n)
            rep = evolve(exact_state(P1, g), exact_trace_bc(P1, g, with_slope=False), 0.5,
                         record_every=1000)
            errs.append(np.max(np.abs(rep.final.u - eval_uk(P1, 0.5, g.nodes).u)))
        assert errs[0] / errs[1] < 1.5

    def test_blowup_rate_short(self):
        g = Grid1D(0, 0.045, 256)
        rep = evolve(exact_state(P1, g), exact_trace_bc(P1, g), 0.95, record_every=20)
        ratio = rep.grad_at_origin * (1 - rep.times) / P1.k
        assert rep.terminated is Termination.REACHED_T_END
        assert np.all(np.abs(ratio - 2.0) <= 0.05 * 2.0)

    def test_mass_conserved_periodic(self):
        g = Grid1D(-1, 1, 512)
        x = g.nodes
        st = FieldState(g, 0.0, 0.5 * bump(x), 0.25 * bump(x, 0.2))
        rep = evolve(st, Periodic(), 0.5)
        assert rep.terminated is Termination.REACHED_T_END
        m0 = rep.mass[0]
        assert np.max(np.abs(rep.mass - m0)) <= 1e-6 * (1 + abs(m0))

    def test_non_timelike_reported(self):
        g = Grid1D(0, 1, 16)
        st = FieldState(g, 0.0, np.zeros(17), np.full(17, 2.0))
        rep = evolve(st, Dirichlet(lambda t: (0.0, 2.0), lambda t: (0.0, 2.0)), 0.1)
        assert rep.terminated is Termination.NON_TIMELIKE


class TestObservers:
    def test_gradient_endpoint_one_sided(self):
        g = Grid1D(0, 1, 64)
        u = g.nodes**2 + 3 * g.nodes
        st = FieldState(g, 0.0, u, np.zeros_like(u))
        assert gradient_at(st, 0.0) == pytest.approx(3.0)
        assert gradient_at(st, 1.0) == pytest.approx(5.0)
        assert gradient_at(st, 0.5) == pytest.approx(4.0)

    def test_mass_of_uniform_velocity(self):
        g = Grid1D(0, 1, 64)
        st = FieldState(g, 0.0, np.zeros(65), np.full(65, 0.6))
        assert discrete_mass(st) == pytest.approx(0.6 / 0.8)


class TestSlice:
    def test_exact_state_matches_family(self):
        st = exact_slice_state(P1, 0.9, 64)
        x, u, ut = st.physical(P1.T)
        jet = eval_uk(P1, 0.0, x)
        assert np.allclose(u, jet.u, atol=1e-14)
        assert np.allclose(ut[1:-1], jet.u_t[1:-1], rtol=1e-2)

    def test_rhs_of_exact_state_second_order(self):
        errs = []
        for n in (128, 256):
            st = exact_slice_state(P1, 0.9, n)
            dU, dP = slice_rhs(0.3, st.U, st.P, st.xi, P1.T)
            assert np.all(dU == 0)
            errs.append(np.max(np.abs(dP)))
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)

    def test_exact_evolution_converges(self):
        errs = []
        for n in (128, 256):
            st = exact_slice_state(P1, 0.9, n)
            rep = evolve_slice(st, P1.T, 0.5)
            assert rep.terminated is Termination.REACHED_T_END
            errs.append(np.max(np.abs(rep.final.U - st.U)))
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.2)

    def test_small_noise_stays_bounded(self):
        # the node next to the held outer end must not carry a growing mode
        rng = np.random.default_rng(0)
        st = exact_slice_state(P1, 0.9, 128)
        noise = 1e-8 * rng.standard_normal(st.U.shape)
        noise[[0, -1]] = 0
        rep = evolve_slice(SliceState(0.0, st.xi, st.U + noise, st.P.copy()), P1.T, 0.9)
        assert rep.terminated is Termination.REACHED_T_END
        assert np.max(np.abs(rep.final.U - st.U)) < 1e-2

    def test_observers_and_ends_held(self):
        st = exact_slice_state(P1, 0.9, 64)
        seen = []
        rep = evolve_slice(st, P1.T, 0.2, [lambda s: seen.append(s.t)])
        assert seen[0] == 0.0 and seen[-1] == pytest.approx(0.2)
        assert len(seen) == len(rep.times)
        assert rep.final.U[0] == st.U[0] and rep.final.U[-1] == st.U[-1]

    def test_non_timelike_reported(self):
        st = exact_slice_state(P1, 0.9, 32)
        bad = SliceState(0.0, st.xi, st.U, np.full_like(st.P, 50.0))
        rep = evolve_slice(bad, P1.T, 0.5)
        assert rep.terminated is Termination.NON_TIMELIKE

    def test_rejects_bad_arguments(self):
        with pytest.raises(DomainError):
            exact_slice_state(P1, 1.0, 32)
        with pytest.raises(ValueError):
            evolve_slice(exact_slice_state(P1, 0.9, 32), P1.T, 1.0)
