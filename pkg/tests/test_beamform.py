import numpy as np
import pytest

from starisac import beamform as bf
from starisac import model
from starisac.linalg import InvalidInputError, rank_one_residual
from starisac.scenario import Scenario, gen_channels
from conftest import make_rng, rand_psd, rand_cvec


def random_surface(rng, m):
    return model.StarRisState.from_coeffs(rng.uniform(0, 1, m),
                                          rng.uniform(0, 2 * np.pi, m),
                                          rng.uniform(0, 2 * np.pi, m))


class TestSrocrUpdate:
    def test_rank_one_zero_step(self):
        rng = make_rng(1)
        w = rand_cvec(rng, 3)
        W = np.outer(w, np.conj(w))
        assert bf.srocr_update(W, 0.0) == pytest.approx(1.0)

    def test_identity_with_step(self):
        assert bf.srocr_update(np.eye(2, dtype=complex), 0.25) \
            == pytest.approx(0.75)

    def test_clamped_at_one(self):
        assert bf.srocr_update(np.eye(3, dtype=complex), 1.5) == 1.0

    def test_rejects_zero_trace(self):
        with pytest.raises(InvalidInputError):
            bf.srocr_update(np.zeros((2, 2), dtype=complex), 0.1)

    def test_rejects_negative_step(self):
        with pytest.raises(InvalidInputError):
            bf.srocr_update(np.eye(2, dtype=complex), -0.1)


class TestSrocrState:
    def test_init_delta_midpoint(self):
        st = bf.SrocrState()
        st.set_reference("W", np.diag([3.0, 1.0]).astype(complex))
        st.init_delta("W")
        # e_max/Tr = 0.75, admissible interval (0, 0.25), midpoint 0.125
        assert st.delta["W"] == pytest.approx(0.125)

    def test_zero_matrix_is_rank_one(self):
        st = bf.SrocrState()
        st.set_reference("W", np.zeros((2, 2), dtype=complex))
        assert st.tau["W"] == 1.0 and st.u["W"] is None

    def test_halving_and_convergence(self):
        st = bf.SrocrState()
        st.set_reference("W", np.diag([3.0, 1.0]).astype(complex))
        st.init_delta("W")
        st.update_tau("W")
        assert st.tau["W"] == pytest.approx(0.875)
        st.halve_deltas()
        assert st.delta["W"] == pytest.approx(0.0625)
        st.tau["W"] = 1.0 - 1e-6
        assert st.converged(1e-5)


class TestUpdateOmega:
    def test_trivials(self):
        assert bf.update_omega(np.eye(2), np.zeros((2, 2)), 2) == 1.0
        assert bf.update_omega(np.zeros((2, 2)), np.eye(2), 2) == 0.0

    def test_equals_sensing_sinr(self, tiny_scenario, tiny_channels):
        rng = make_rng(2)
        ris = random_surface(rng, tiny_scenario.n_elements)
        Q = rand_psd(rng, tiny_scenario.n_antennas)
        G_a, G_b = model.sensing_trace_coeffs(tiny_channels, ris.Phi_t,
                                              tiny_scenario)
        omega = bf.update_omega(G_a @ Q, G_b @ Q, tiny_scenario.n_antennas)
        gamma = model.sensing_sinr(tiny_channels, ris.Phi_t, Q, tiny_scenario)
        assert omega == pytest.approx(gamma, rel=1e-9)


class TestReconstructNoSensing:
    def test_zero_w0_identity(self):
        rng = make_rng(3)
        W_c, W_p = rand_psd(rng, 3), [rand_psd(rng, 3)]
        Wc2, Wp2 = bf.reconstruct_no_sensing(W_c, W_p, None, 1.0, [0.0])
        assert np.array_equal(Wc2, W_c) and np.array_equal(Wp2[0], W_p[0])

    def test_all_mass_to_common(self):
        rng = make_rng(4)
        W_c, W_p, W_0 = rand_psd(rng, 3), [rand_psd(rng, 3)], rand_psd(rng, 3)
        Wc2, _ = bf.reconstruct_no_sensing(W_c, W_p, W_0, 1.0, [0.0])
        assert np.allclose(Wc2, W_c + W_0)

    def test_preserves_q_and_rates(self, tiny_scenario, tiny_channels):
        rng = make_rng(5)
        n, K = tiny_scenario.n_antennas, tiny_scenario.n_users
        ris = random_surface(rng, tiny_scenario.n_elements)
        W_c = rand_psd(rng, n, 0.1)
        W_p = [rand_psd(rng, n, 0.1) for _ in range(K)]
        W_0 = rand_psd(rng, n, 0.1)
        st1 = model.BeamformingState(W_c=W_c, W_p=W_p, W_0=W_0,
                                     c=np.zeros(K))
        Wc2, Wp2 = bf.reconstruct_no_sensing(W_c, W_p, W_0, 0.4, [0.3, 0.3])
        st2 = model.BeamformingState(W_c=Wc2, W_p=Wp2, W_0=None,
                                     c=np.zeros(K))
        assert np.max(np.abs(st1.q_total() - st2.q_total())) < 1e-12
        g1 = model.sensing_sinr(tiny_channels, ris.Phi_t, st1.q_total(),
                                tiny_scenario)
        g2 = model.sensing_sinr(tiny_channels, ris.Phi_t, st2.q_total(),
                                tiny_scenario)
        assert g1 == pytest.approx(g2, rel=1e-12)
        Rc1, Rp1 = bf.exact_rates(tiny_channels, ris.Phi_r, tiny_scenario, st1)
        Rc2, Rp2 = bf.exact_rates(tiny_channels, ris.Phi_r, tiny_scenario, st2)
        assert np.all(Rc2 >= Rc1 - 1e-12)
        assert np.all(Rp2 >= Rp1 - 1e-12)

    def test_rejects_bad_weights(self):
        rng = make_rng(6)
        W = rand_psd(rng, 2)
        with pytest.raises(InvalidInputError):
            bf.reconstruct_no_sensing(W, [W], W, 0.5, [0.2])
        with pytest.raises(InvalidInputError):
            bf.reconstruct_no_sensing(W, [W], W, -0.5, [1.5])


class TestTaylorTouchPoint:
    def test_linearized_rows_tight_at_expansion(self, tiny_scenario,
                                                tiny_channels):
        """Each linearized rate row holds with equality at its own
        expansion point when the slacks equal the exact achieved values."""
        scn, ch = tiny_scenario, tiny_channels
        rng = make_rng(7)
        ris = random_surface(rng, scn.n_elements)
        state = bf.initial_beamforming(ch, ris.Phi_r, scn, with_w0=False)
        srocr = bf.SrocrState()
        prob = bf.build_b1_problem(ch, ris.Phi_t, ris.Phi_r, scn, 0.5, srocr,
                                   a_ref=state.a, b_ref=state.b, c_ref=state.c,
                                   with_w0=False)
        point = {"W_c": state.W_c}
        for k, W in enumerate(state.W_p):
            point[f"W_p{k}"] = W
        for k in range(scn.n_users):
            point[f"a{k}"] = state.a[k]
            point[f"b{k}"] = state.b[k]
            point[f"c{k}"] = state.c[k]
        # rows 1 (numerator, (13)-shape) and 3 ((15)-shape) per user are
        # tangent constraints: exactly active at the expansion point
        rows = prob.ineq_constraints[1:]  # row 0 is the power budget
        per_user = 5
        for k in range(scn.n_users):
            for idx in (0, 2):
                e, rhs = rows[k * per_user + idx]
                assert e.value(point) == pytest.approx(rhs, abs=1e-9)
            # denominator rows ((14)/(16)-shape) are satisfied at the point
            for idx in (1, 3):
                e, rhs = rows[k * per_user + idx]
                assert e.value(point) <= rhs + 1e-9


class TestNomaOrder:
    def test_descending_gain(self, tiny_scenario, tiny_channels):
        rng = make_rng(8)
        ris = random_surface(rng, tiny_scenario.n_elements)
        order = bf.noma_order(tiny_channels, ris.Phi_r, tiny_scenario.n_users)
        gains = [np.linalg.norm(
            model.composite_gt_channel(tiny_channels, ris.Phi_r, k)) ** 2
            for k in range(tiny_scenario.n_users)]
        assert gains[order[0]] >= gains[order[-1]]
        assert sorted(order) == list(range(tiny_scenario.n_users))


class TestSolveB1:
    def desk(self, **kw):
        base = dict(n_antennas=3, n_elements=4, n_users=2, n_scatterers=1,
                    p_max=1.0, rate_threshold=(0.5, 0.5), seed=21)
        base.update(kw)
        return Scenario(**base)

    def test_converges_and_audits(self):
        scn = self.desk()
        ch = gen_channels(scn)
        rng = make_rng(9)
        ris = random_surface(rng, scn.n_elements)
        state, srocr = bf.solve_b1(ch, ris.Phi_t, ris.Phi_r, scn,
                                   with_w0=True, max_iters=40)
        assert state.total_power() <= scn.p_max * (1 + 1e-6)
        Rc, Rp = bf.exact_rates(ch, ris.Phi_r, scn, state)
        assert np.all(state.c + Rp >= np.asarray(scn.rate_threshold) - 1e-6)
        assert np.sum(state.c) <= np.min(Rc) + 1e-6
        floor = 1e-6 * scn.p_max
        for _, W in state.tracked():
            if np.real(np.trace(W)) > floor:
                assert rank_one_residual(W) <= 1e-3

    def test_improves_over_initialization(self):
        scn = self.desk(seed=22)
        ch = gen_channels(scn)
        rng = make_rng(10)
        ris = random_surface(rng, scn.n_elements)
        init = bf.initial_beamforming(ch, ris.Phi_r, scn)
        g0 = model.sensing_sinr(ch, ris.Phi_t, init.q_total(), scn)
        state, _ = bf.solve_b1(ch, ris.Phi_t, ris.Phi_r, scn, max_iters=40)
        g1 = model.sensing_sinr(ch, ris.Phi_t, state.q_total(), scn)
        assert g1 >= g0 - 1e-9

    def test_impossible_rates_stall(self):
        scn = self.desk(p_max=1e-12, rate_threshold=(5.0, 5.0))
        ch = gen_channels(scn)
        rng = make_rng(11)
        ris = random_surface(rng, scn.n_elements)
        with pytest.raises(bf.StallError):
            bf.solve_b1(ch, ris.Phi_t, ris.Phi_r, scn, max_iters=15)

    def test_trace_is_recorded(self):
        scn = self.desk(seed=23)
        ch = gen_channels(scn)
        rng = make_rng(12)
        ris = random_surface(rng, scn.n_elements)
        trace = bf.B1Trace()
        bf.solve_b1(ch, ris.Phi_t, ris.Phi_r, scn, max_iters=10, trace=trace)
        assert len(trace.omega) >= 1
        assert len(trace.omega) == len(trace.feasible) == len(trace.tau)


class TestRepairCommonAllocation:
    def test_minimal_allocation(self, tiny_scenario, tiny_channels):
        rng = make_rng(13)
        ris = random_surface(rng, tiny_scenario.n_elements)
        state = bf.initial_beamforming(tiny_channels, ris.Phi_r, tiny_scenario)
        c, ok = bf.repair_common_allocation(tiny_channels, ris.Phi_r,
                                            tiny_scenario, state)
        _, Rp = bf.exact_rates(tiny_channels, ris.Phi_r, tiny_scenario, state)
        expect = np.maximum(0.0, np.asarray(tiny_scenario.rate_threshold) - Rp)
        assert np.allclose(c, expect)
