import math

import numpy as np
import pytest

from starisac import model
from starisac.scenario import ChannelSet, Scenario, gen_channels
from conftest import make_rng, rand_psd, rand_cvec


def rank_one(rng, n, scale=1.0):
    w = scale * rand_cvec(rng, n)
    return np.outer(w, np.conj(w)), w


def random_surface(rng, m, beta_t=None):
    bt = rng.uniform(0, 1, m) if beta_t is None else beta_t * np.ones(m)
    return model.StarRisState.from_coeffs(bt, rng.uniform(0, 2 * np.pi, m),
                                          rng.uniform(0, 2 * np.pi, m))


class TestStarRisState:
    def test_from_coeffs_invariants(self):
        rng = make_rng(1)
        ris = random_surface(rng, 5)
        bt, br = ris.amplitudes()
        assert np.allclose(bt + br, 1.0, atol=1e-12)
        assert abs(ris.nu_t[-1] - 1.0) < 1e-15
        assert np.allclose(np.diag(ris.V_t)[:-1], bt, atol=1e-12)
        assert abs(ris.V_t[-1, -1] - 1.0) < 1e-15

    def test_lift_consistency(self):
        rng = make_rng(2)
        ris = random_surface(rng, 4)
        assert np.allclose(ris.V_r, np.outer(ris.nu_r, np.conj(ris.nu_r)))


class TestBeamformingState:
    def test_power_and_q(self):
        rng = make_rng(3)
        W_c = rand_psd(rng, 3)
        W_p = [rand_psd(rng, 3), rand_psd(rng, 3)]
        W_0 = rand_psd(rng, 3)
        st = model.BeamformingState(W_c=W_c, W_p=W_p, W_0=W_0)
        assert st.total_power() == pytest.approx(
            np.real(np.trace(W_c + sum(W_p) + W_0)))
        assert np.allclose(st.q_total(), W_c + sum(W_p) + W_0)
        assert [lbl for lbl, _ in st.tracked()] == ["W_c", "W_p0", "W_p1", "W_0"]


class TestCompositeChannels:
    def test_zero_coefficients_gives_direct_link(self, tiny_scenario, tiny_channels):
        m = tiny_scenario.n_elements
        phi0 = np.zeros((m, m), dtype=complex)
        assert np.allclose(
            model.composite_gt_channel(tiny_channels, phi0, 0),
            tiny_channels.h_bk[0])
        assert np.allclose(
            model.composite_target_channel(tiny_channels, phi0),
            tiny_channels.h_bt)

    def test_single_element_hand_expansion(self):
        s = Scenario(n_antennas=2, n_elements=1, n_users=1, n_scatterers=0,
                     p_max=1.0, seed=5)
        ch = gen_channels(s)
        phi = np.diag([0.3 * np.exp(1j * 0.7)])
        got = model.composite_gt_channel(ch, phi, 0)
        expect = ch.h_bk[0] + ch.H_br[:, 0] * phi[0, 0] * ch.h_rk[0][0]
        assert np.allclose(got, expect)

    def test_linearity_in_coefficients(self, tiny_channels):
        rng = make_rng(4)
        m = 4
        p1 = np.diag(rand_cvec(rng, m))
        p2 = np.diag(rand_cvec(rng, m))
        h1 = model.composite_target_channel(tiny_channels, p1)
        h2 = model.composite_target_channel(tiny_channels, p2)
        h12 = model.composite_target_channel(tiny_channels, p1 + p2)
        assert np.allclose(h12, h1 + h2 - tiny_channels.h_bt)


def unit_channelset(h):
    """K=1, M=0 channel set with a prescribed direct channel."""
    n = len(h)
    z = np.zeros(0, dtype=complex)
    return ChannelSet(h_bk=[h], h_rk=[z], H_br=np.zeros((n, 0), dtype=complex),
                      h_bt=np.zeros(n, dtype=complex), h_rt=z, h_bi=[], h_ri=[])


class TestRates:
    def test_common_rate_closed_form(self):
        ch = unit_channelset(np.array([1.0, 0.0], dtype=complex))
        W_c = np.diag([1.0, 0.0]).astype(complex)
        r = model.common_rate(0, ch, None, W_c, [np.zeros((2, 2), complex)],
                              None, 1.0)
        assert r == pytest.approx(1.0)

    def test_zero_covariance_zero_rate(self):
        ch = unit_channelset(np.array([1.0, 1.0], dtype=complex))
        z = np.zeros((2, 2), dtype=complex)
        assert model.common_rate(0, ch, None, z, [z], None, 1.0) == 0.0

    def test_covariance_equals_magnitude_form(self, tiny_scenario, tiny_channels):
        rng = make_rng(6)
        scn, ch = tiny_scenario, tiny_channels
        ris = random_surface(rng, scn.n_elements)
        for _ in range(50):
            Wc, wc = rank_one(rng, scn.n_antennas, 1e-3)
            Wp, wp = zip(*[rank_one(rng, scn.n_antennas, 1e-3)
                           for _ in range(scn.n_users)])
            k = 0
            h = model.composite_gt_channel(ch, ris.Phi_r, k)
            sig = abs(np.conj(h) @ wc) ** 2
            itf = sum(abs(np.conj(h) @ w) ** 2 for w in wp)
            direct = math.log2(1 + sig / (itf + scn.noise_gt[k]))
            covar = model.common_rate(k, ch, ris.Phi_r, Wc, list(Wp), None,
                                      scn.noise_gt[k])
            assert covar == pytest.approx(direct, rel=1e-9)

    def test_private_rate_single_user_no_interference(self):
        ch = unit_channelset(np.array([1.0, 0.0], dtype=complex))
        W = np.diag([3.0, 0.0]).astype(complex)
        r = model.private_rate(0, ch, None, [W], None, 1.0)
        assert r == pytest.approx(2.0)


class TestSensingSinr:
    def test_zero_covariance(self, tiny_scenario, tiny_channels):
        rng = make_rng(7)
        ris = random_surface(rng, tiny_scenario.n_elements)
        q0 = np.zeros((tiny_scenario.n_antennas,) * 2, dtype=complex)
        assert model.sensing_sinr(tiny_channels, ris.Phi_t, q0, tiny_scenario) == 0.0

    def test_scalar_expansion(self):
        # N=1, I=0: gamma = |h|^4 |beta0|^2 q / sigma_s^2
        s = Scenario(n_antennas=1, n_elements=0, n_users=1, n_scatterers=0,
                     p_max=1.0, noise_sensing=0.5, seed=8,
                     reflect_target=0.7 + 0.1j)
        ch = gen_channels(s)
        q = 1.3
        got = model.sensing_sinr(ch, None, np.array([[q]], dtype=complex), s)
        h = ch.h_bt[0]
        expect = abs(h) ** 4 * abs(0.7 + 0.1j) ** 2 * q / 0.5
        assert got == pytest.approx(expect, rel=1e-9)

    def test_direct_equals_trace_form(self, tiny_scenario, tiny_channels):
        rng = make_rng(9)
        for _ in range(20):
            ris = random_surface(rng, tiny_scenario.n_elements)
            Q = rand_psd(rng, tiny_scenario.n_antennas)
            g1 = model.sensing_sinr(tiny_channels, ris.Phi_t, Q, tiny_scenario)
            g2 = model.sensing_sinr_trace_form(tiny_channels, ris.Phi_t, Q,
                                               tiny_scenario)
            assert g2 == pytest.approx(g1, rel=1e-9)

    def test_numerator_scales_linearly_without_clutter(self):
        s = Scenario(n_antennas=3, n_elements=0, n_users=1, n_scatterers=0,
                     p_max=1.0, seed=10)
        ch = gen_channels(s)
        Q = rand_psd(make_rng(11), 3)
        g1 = model.sensing_sinr(ch, None, Q, s)
        g3 = model.sensing_sinr(ch, None, 3.0 * Q, s)
        assert g3 == pytest.approx(3.0 * g1, rel=1e-9)


class TestLiftedBlocks:
    def test_a1_b1_oracle(self, tiny_scenario, tiny_channels):
        rng = make_rng(12)
        ris = random_surface(rng, tiny_scenario.n_elements)
        Q = rand_psd(rng, tiny_scenario.n_antennas)
        A1, B1 = model.build_A1_B1(tiny_channels, Q)
        h_t = model.composite_target_channel(tiny_channels, ris.Phi_t)
        nu = ris.nu_t
        assert np.conj(nu) @ A1 @ nu == pytest.approx(
            np.linalg.norm(h_t) ** 2, rel=1e-9)
        assert np.real(np.conj(nu) @ B1 @ nu) == pytest.approx(
            np.real(np.conj(h_t) @ Q @ h_t), rel=1e-9)

    def test_a1_b1_hermitian(self, tiny_channels):
        Q = rand_psd(make_rng(13), 3)
        A1, B1 = model.build_A1_B1(tiny_channels, Q)
        for X in (A1, B1):
            assert np.max(np.abs(X - np.conj(X).T)) <= 1e-12 * max(
                1.0, np.abs(X).max())

    def test_zero_ris_target_link(self, tiny_scenario, tiny_channels):
        ch = tiny_channels
        ch2 = ChannelSet(h_bk=ch.h_bk, h_rk=ch.h_rk, H_br=ch.H_br,
                         h_bt=ch.h_bt, h_rt=np.zeros_like(ch.h_rt),
                         h_bi=ch.h_bi, h_ri=ch.h_ri)
        Q = rand_psd(make_rng(14), tiny_scenario.n_antennas)
        A1, B1 = model.build_A1_B1(ch2, Q)
        m = tiny_scenario.n_elements
        assert np.allclose(A1[:m, :], 0.0) and np.allclose(A1[:, :m], 0.0)
        assert A1[m, m] == pytest.approx(np.linalg.norm(ch.h_bt) ** 2)
        assert B1[m, m] == pytest.approx(
            np.real(np.conj(ch.h_bt) @ Q @ ch.h_bt))

    def test_scatterer_blocks_match_composite(self, tiny_scenario, tiny_channels):
        rng = make_rng(15)
        ris = random_surface(rng, tiny_scenario.n_elements)
        Q = rand_psd(rng, tiny_scenario.n_antennas)
        Ai, Bi = model.build_Ai1_Bi1(tiny_channels, Q, 0)
        h_i = model.composite_scatterer_channel(tiny_channels, ris.Phi_t, 0)
        nu = ris.nu_t
        assert np.real(np.conj(nu) @ Ai @ nu) == pytest.approx(
            np.linalg.norm(h_i) ** 2, rel=1e-9)
        assert np.real(np.conj(nu) @ Bi @ nu) == pytest.approx(
            np.real(np.conj(h_i) @ Q @ h_i), rel=1e-9)


class TestLiftedRateMatrices:
    def test_zero_private_covariances(self, tiny_channels):
        z = np.zeros((3, 3), dtype=complex)
        W_c = rand_psd(make_rng(16), 3)
        M1, M2, M3 = model.build_MQ(tiny_channels, 0, W_c, [z, z])
        assert np.allclose(M2, 0.0) and np.allclose(M3, 0.0)

    def test_rank_one_oracle(self, tiny_scenario, tiny_channels):
        rng = make_rng(17)
        ris = random_surface(rng, tiny_scenario.n_elements)
        W_c = rand_psd(rng, 3)
        W_p = [rand_psd(rng, 3) for _ in range(2)]
        M1, M2, M3 = model.build_MQ(tiny_channels, 1, W_c, W_p)
        V_r = np.outer(ris.nu_r, np.conj(ris.nu_r))
        h = model.composite_gt_channel(tiny_channels, ris.Phi_r, 1)
        for Mx, Q in ((M1, W_c + sum(W_p)), (M2, sum(W_p)), (M3, W_p[0])):
            assert np.real(np.trace(Mx @ V_r)) == pytest.approx(
                np.real(np.conj(h) @ Q @ h), rel=1e-9)

    def test_single_user_empty_interference(self):
        s = Scenario(n_antennas=2, n_elements=2, n_users=1, n_scatterers=0,
                     p_max=1.0, seed=18)
        ch = gen_channels(s)
        W_c = rand_psd(make_rng(19), 2)
        W_p = [rand_psd(make_rng(20), 2)]
        _, _, M3 = model.build_MQ(ch, 0, W_c, W_p)
        assert np.allclose(M3, 0.0)

    def test_w0_folds_into_interference(self, tiny_channels):
        rng = make_rng(21)
        W_c = rand_psd(rng, 3)
        W_p = [rand_psd(rng, 3) for _ in range(2)]
        W_0 = rand_psd(rng, 3)
        _, M2a, M3a = model.build_MQ(tiny_channels, 0, W_c, W_p, None)
        _, M2b, M3b = model.build_MQ(tiny_channels, 0, W_c, W_p, W_0)
        M0 = model.build_M_of(tiny_channels, 0, W_0)
        assert np.allclose(M2b, M2a + M0, atol=1e-12)
        assert np.allclose(M3b, M3a + M0, atol=1e-12)
