"""Deterministic evaluation of every physical quantity used by the optimizer.

Composite channels, RSMA rates in both magnitude and covariance form, the
sensing SINR, and the lifted (M+1)x(M+1) helper matrices that the surface
subproblem is written in.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import InvalidInputError, herm, hermitize
from .scenario import response_matrix


@dataclass
class BeamformingState:
    """Transmit covariances and rate bookkeeping for one iterate."""

    W_c: np.ndarray
    W_p: list                      # K Hermitian PSD N x N
    W_0: np.ndarray = None         # optional dedicated-sensing covariance
    c: np.ndarray = None           # common-rate allocation per user
    a: np.ndarray = None           # common-rate numerator slack (log2 domain)
    b: np.ndarray = None           # private-rate numerator slack (log2 domain)

    def total_power(self):
        p = float(np.real(np.trace(self.W_c)))
        p += sum(float(np.real(np.trace(W))) for W in self.W_p)
        if self.W_0 is not None:
            p += float(np.real(np.trace(self.W_0)))
        return p

    def q_total(self):
        """Q = W_c + sum_k W_p,k (+ W_0): the covariance the radar sees."""
        Q = self.W_c + sum(self.W_p)
        if self.W_0 is not None:
            Q = Q + self.W_0
        return hermitize(Q)

    def tracked(self):
        """(label, matrix) pairs subject to rank-one recovery."""
        out = [("W_c", self.W_c)] + [(f"W_p{k}", W) for k, W in enumerate(self.W_p)]
        if self.W_0 is not None:
            out.append(("W_0", self.W_0))
        return out


@dataclass
class StarRisState:
    """Surface coefficients in both lifted and extracted form."""

    V_t: np.ndarray = None         # (M+1) x (M+1) Hermitian PSD
    V_r: np.ndarray = None
    nu_t: np.ndarray = None        # length M+1, last entry 1
    nu_r: np.ndarray = None
    Phi_t: np.ndarray = None       # diag(sqrt(beta_t) e^{j theta_t}), M x M
    Phi_r: np.ndarray = None

    @classmethod
    def from_coeffs(cls, beta_t, theta_t, theta_r):
        """Energy-splitting state with beta_r = 1 - beta_t per element."""
        beta_t = np.asarray(beta_t, dtype=float)
        bt = np.sqrt(np.clip(beta_t, 0.0, 1.0))
        br = np.sqrt(np.clip(1.0 - beta_t, 0.0, 1.0))
        phi_t = bt * np.exp(1j * np.asarray(theta_t))
        phi_r = br * np.exp(1j * np.asarray(theta_r))
        nu_t = np.concatenate([phi_t, [1.0 + 0.0j]])
        nu_r = np.concatenate([phi_r, [1.0 + 0.0j]])
        return cls(V_t=np.outer(nu_t, np.conj(nu_t)), V_r=np.outer(nu_r, np.conj(nu_r)),
                   nu_t=nu_t, nu_r=nu_r,
                   Phi_t=np.diag(phi_t), Phi_r=np.diag(phi_r))

    def amplitudes(self):
        """(beta_t, beta_r) per element, from the extracted coefficients."""
        bt = np.abs(np.diag(self.Phi_t)) ** 2
        br = np.abs(np.diag(self.Phi_r)) ** 2
        return bt, br


def composite_gt_channel(ch, Phi_r, k):
    """h_k = h_bk + H_br Phi_r h_rk (reflection side)."""
    if Phi_r is None or ch.H_br.shape[1] == 0:
        return ch.h_bk[k].copy()
    return ch.h_bk[k] + ch.H_br @ (Phi_r @ ch.h_rk[k])


def composite_target_channel(ch, Phi_t):
    """h_t = h_bt + H_br Phi_t h_rt (transmission side)."""
    if Phi_t is None or ch.H_br.shape[1] == 0:
        return ch.h_bt.copy()
    return ch.h_bt + ch.H_br @ (Phi_t @ ch.h_rt)


def composite_scatterer_channel(ch, Phi_t, i):
    if Phi_t is None or ch.H_br.shape[1] == 0:
        return ch.h_bi[i].copy()
    return ch.h_bi[i] + ch.H_br @ (Phi_t @ ch.h_ri[i])


def _sinr_log2(signal, interference, noise):
    return math.log2(1.0 + signal / (interference + noise))


def common_rate(k, ch, Phi_r, W_c, W_p, W_0, noise):
    """Rate at user k for decoding the shared common stream (covariance form)."""
    h = composite_gt_channel(ch, Phi_r, k)
    H = np.outer(h, np.conj(h))
    sig = float(np.real(np.trace(H @ W_c)))
    itf = sum(float(np.real(np.trace(H @ W))) for W in W_p)
    if W_0 is not None:
        itf += float(np.real(np.trace(H @ W_0)))
    return _sinr_log2(max(sig, 0.0), max(itf, 0.0), noise)


def private_rate(k, ch, Phi_r, W_p, W_0, noise):
    """Rate at user k for its own private stream after common-stream SIC."""
    h = composite_gt_channel(ch, Phi_r, k)
    H = np.outer(h, np.conj(h))
    sig = float(np.real(np.trace(H @ W_p[k])))
    itf = sum(float(np.real(np.trace(H @ W_p[j]))) for j in range(len(W_p)) if j != k)
    if W_0 is not None:
        itf += float(np.real(np.trace(H @ W_0)))
    return _sinr_log2(max(sig, 0.0), max(itf, 0.0), noise)


def sensing_sinr(ch, Phi_t, Q, scn):
    """Echo SINR at the BS receive array for transmit covariance Q."""
    n = scn.n_antennas
    h_t = composite_target_channel(ch, Phi_t)
    A0 = response_matrix(scn.theta_target, scn.reflect_target, n)
    num = np.linalg.norm(h_t) ** 2 * float(np.real(
        np.trace(np.outer(h_t, np.conj(h_t)) @ A0 @ Q @ herm(A0))))
    den = scn.noise_sensing * n
    for i in range(scn.n_scatterers):
        h_i = composite_scatterer_channel(ch, Phi_t, i)
        Ai = response_matrix(scn.theta_scatterers[i], scn.reflect_scatterers[i], n)
        den += np.linalg.norm(h_i) ** 2 * float(np.real(
            np.trace(np.outer(h_i, np.conj(h_i)) @ Ai @ Q @ herm(Ai))))
    return max(num, 0.0) / den


def sensing_trace_coeffs(ch, Phi_t, scn):
    """Hermitian G_a, G_b with Tr(A_t) = Tr(G_a Q), Tr(B_t) = Tr(G_b Q).

    A_t / B_t are the Dinkelbach numerator/denominator matrices; gamma_i is
    1/noise_sensing for the target and every scatterer, so that
    gamma_bs = Tr(A_t) / (Tr(B_t) + N).
    """
    n = scn.n_antennas
    gamma = 1.0 / scn.noise_sensing
    h_t = composite_target_channel(ch, Phi_t)
    A0 = response_matrix(scn.theta_target, scn.reflect_target, n)
    Ht2 = np.linalg.norm(h_t) ** 2 * np.outer(h_t, np.conj(h_t))  # = H_t H_t^H
    G_a = hermitize(gamma * herm(A0) @ Ht2 @ A0)
    G_b = np.zeros((n, n), dtype=complex)
    for i in range(scn.n_scatterers):
        h_i = composite_scatterer_channel(ch, Phi_t, i)
        Ai = response_matrix(scn.theta_scatterers[i], scn.reflect_scatterers[i], n)
        Hi2 = np.linalg.norm(h_i) ** 2 * np.outer(h_i, np.conj(h_i))
        G_b = G_b + gamma * herm(Ai) @ Hi2 @ Ai
    return G_a, hermitize(G_b)


def sensing_sinr_trace_form(ch, Phi_t, Q, scn):
    """Tr(A_t) / Tr(B_t + I_N); must agree with sensing_sinr."""
    G_a, G_b = sensing_trace_coeffs(ch, Phi_t, scn)
    num = float(np.real(np.trace(G_a @ Q)))
    den = float(np.real(np.trace(G_b @ Q))) + scn.n_antennas
    return max(num, 0.0) / den


def lift_basis_target(ch):
    """G with h_t = G nu_t, columns [H_br diag(h_rt), h_bt]."""
    return np.hstack([ch.H_br @ np.diag(ch.h_rt), ch.h_bt[:, None]])


def lift_basis_scatterer(ch, i):
    return np.hstack([ch.H_br @ np.diag(ch.h_ri[i]), ch.h_bi[i][:, None]])


def lift_basis_gt(ch, k):
    return np.hstack([ch.H_br @ np.diag(ch.h_rk[k]), ch.h_bk[k][:, None]])


def build_A1_B1(ch, Q):
    """Target-side lifted blocks: A_1 = G^H G, B_1 = G^H Q G."""
    G = lift_basis_target(ch)
    return hermitize(herm(G) @ G), hermitize(herm(G) @ Q @ G)


def build_Ai1_Bi1(ch, Q, i):
    """Scatterer-side lifted blocks for scatterer i."""
    G = lift_basis_scatterer(ch, i)
    return hermitize(herm(G) @ G), hermitize(herm(G) @ Q @ G)


def build_MQ(ch, k, W_c, W_p, W_0=None):
    """Lifted rate matrices for user k: Tr(M_Qj V_r) = h_k^H Q_j h_k.

    Q_1 = W_c + sum_i W_p,i, Q_2 = sum_i W_p,i, Q_3 = sum_{j != k} W_p,j;
    W_0, when present, is folded into all three (it is interference to both
    decoding stages and also adds to the total received power).
    """
    G = lift_basis_gt(ch, k)
    Q2 = sum(W_p) if W_p else np.zeros_like(W_c)
    Q3 = sum(W_p[j] for j in range(len(W_p)) if j != k) if len(W_p) > 1 \
        else np.zeros_like(W_c)
    if W_0 is not None:
        Q2 = Q2 + W_0
        Q3 = Q3 + W_0
    Q1 = W_c + Q2
    mk = lambda Q: hermitize(herm(G) @ Q @ G)
    return mk(Q1), mk(Q2), mk(Q3)


def build_M_of(ch, k, Q):
    """Single lifted matrix for an arbitrary covariance Q at user k."""
    G = lift_basis_gt(ch, k)
    return hermitize(herm(G) @ Q @ G)
