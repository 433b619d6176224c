"""Surface-coefficient subproblem (Algorithm 2).

With the transmit covariances frozen, the sensing objective is a quartic in
the lifted coefficient vector nu_t.  It is linearized around the current
iterate (majorization-minimization style), lifted to the PSD matrices
V_t = nu_t nu_t^H and V_r = nu_r nu_r^H, and solved with SROCR rows driving
both matrices back to rank one.  Rank-one coefficients are then extracted,
clipped and re-projected onto the energy-conservation constraint.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import (InvalidInputError, herm, hermitian_eig_max, hermitize,
                     kron, rank_one_ratio, unvec, vec)
from .conic import ConicProblem, LinExpr, solve
from .beamform import SrocrState, StallError
from . import model


class ExtractionError(RuntimeError):
    """Lifted matrix too far from rank one to extract coefficients."""


@dataclass
class Surrogate:
    """Linearized sensing objective around the expansion point nu_ref."""

    delta_psi: np.ndarray       # (M+1) x (M+1), conjugate-unvec of psi
    constant: float             # -(nu_hat_ref)^H F nu_hat_ref, real part
    nu_ref: np.ndarray
    omega: float
    F: np.ndarray = None        # full (M+1)^2 quadratic form; built on demand

    @property
    def psi(self):
        """Gradient vector F vec(nu_ref nu_ref^H); satisfies
        Tr(V (dpsi + dpsi^H)) = 2 Re(psi^H vec(V)) for Hermitian V."""
        return vec(herm(self.delta_psi))

    def symmetric(self):
        return hermitize(self.delta_psi + herm(self.delta_psi))

    def value(self, nu):
        """Surrogate evaluated at nu (touches the quartic at nu_ref)."""
        return float(np.real(np.conj(nu) @ self.symmetric() @ nu)) + self.constant


def quartic_objective(ch, Q, omega, nu, scn):
    """omega*Tr(B_t) - Tr(A_t) in the lifted coefficient form (no +N term)."""
    gamma = 1.0 / scn.noise_sensing
    A1, B1 = model.build_A1_B1(ch, Q)
    val = -gamma * float(np.real(np.conj(nu) @ A1 @ nu)) \
        * float(np.real(np.conj(nu) @ B1 @ nu))
    for i in range(scn.n_scatterers):
        Ai, Bi = model.build_Ai1_Bi1(ch, Q, i)
        val += omega * gamma * float(np.real(np.conj(nu) @ Ai @ nu)) \
            * float(np.real(np.conj(nu) @ Bi @ nu))
    return val


def kron_form(ch, Q, omega, scn):
    """Explicit F = sum_i omega*gamma_i (B_i1^T kron A_i1) - gamma_0 (B_1^T kron A_1).

    Quadratic in vec(V_t); only needed by the oracle tests -- the solver path
    uses the closed-form gradient in build_surrogate.
    """
    gamma = 1.0 / scn.noise_sensing
    A1, B1 = model.build_A1_B1(ch, Q)
    F = -gamma * kron(B1.T, A1)
    for i in range(scn.n_scatterers):
        Ai, Bi = model.build_Ai1_Bi1(ch, Q, i)
        F = F + omega * gamma * kron(Bi.T, Ai)
    return F


def build_surrogate(ch, Q, omega, nu_ref, scn):
    """Closed-form linearization of the quartic objective at nu_ref."""
    nu_ref = np.asarray(nu_ref, dtype=complex)
    if abs(nu_ref[-1] - 1.0) > 1e-6:
        raise InvalidInputError("expansion point must have trailing entry 1")
    gamma = 1.0 / scn.noise_sensing
    X = np.outer(nu_ref, np.conj(nu_ref))
    A1, B1 = model.build_A1_B1(ch, Q)
    dpsi = -gamma * (B1 @ X @ A1)
    for i in range(scn.n_scatterers):
        Ai, Bi = model.build_Ai1_Bi1(ch, Q, i)
        dpsi = dpsi + omega * gamma * (Bi @ X @ Ai)
    const = -quartic_objective(ch, Q, omega, nu_ref, scn)
    return Surrogate(delta_psi=dpsi, constant=const, nu_ref=nu_ref, omega=omega)


# ---------------------------------------------------------------------------
# constraint assembly

def _rsma_vr_constraints(prob, ch, scn, state):
    """Lifted common/private rate constraints (36)/(37) with c fixed."""
    sum_c = float(np.sum(state.c))
    for k in range(scn.n_users):
        rho = 1.0 / scn.noise_gt[k]
        M1, M2, M3 = model.build_MQ(ch, k, state.W_c, state.W_p, state.W_0)
        g_c = 2.0 ** sum_c
        e = LinExpr(mats={"V_r": hermitize(rho * (g_c * M2 - M1))})
        prob.ineq_constraints.append((e, 1.0 - g_c))
        g_p = 2.0 ** (scn.rate_threshold[k] - float(state.c[k]))
        e = LinExpr(mats={"V_r": hermitize(rho * (g_p * M3 - M2))})
        prob.ineq_constraints.append((e, 1.0 - g_p))


def _sdma_vr_constraints(prob, ch, scn, state):
    for k in range(scn.n_users):
        rho = 1.0 / scn.noise_gt[k]
        g = 2.0 ** scn.rate_threshold[k] - 1.0
        Mk = model.build_M_of(ch, k, state.W_p[k])
        itf = sum(state.W_p[j] for j in range(scn.n_users) if j != k) \
            if scn.n_users > 1 else np.zeros_like(state.W_c)
        if state.W_0 is not None:
            itf = itf + state.W_0
        Mi = model.build_M_of(ch, k, itf)
        e = LinExpr(mats={"V_r": hermitize(rho * (g * Mi - Mk))})
        prob.ineq_constraints.append((e, -g))


def _noma_vr_constraints(prob, ch, scn, state, order):
    n = scn.n_antennas
    for i in range(len(order)):
        ki = order[i]
        g = 2.0 ** scn.rate_threshold[ki] - 1.0
        itf = sum(state.W_p[order[j]] for j in range(i)) if i > 0 \
            else np.zeros((n, n), dtype=complex)
        if state.W_0 is not None:
            itf = itf + state.W_0
        for m in range(i + 1):
            km = order[m]
            rho = 1.0 / scn.noise_gt[km]
            Mk = model.build_M_of(ch, km, state.W_p[ki])
            Mi = model.build_M_of(ch, km, itf)
            e = LinExpr(mats={"V_r": hermitize(rho * (g * Mi - Mk))})
            prob.ineq_constraints.append((e, -g))


def build_b2_problem(surrogate, ch, scn, state, srocr, *,
                     rate_model="rsma", order=None, masks=None):
    """Assemble the lifted surface program.

    masks, when given, is (mask_t, mask_r) of fixed per-element amplitudes
    (traditional-RIS split); otherwise the energy-conservation pairing
    [V_t]_mm + [V_r]_mm = 1 is enforced.
    """
    m1 = scn.n_elements + 1
    prob = ConicProblem(psd_vars=[("V_t", m1), ("V_r", m1)])
    prob.objective = LinExpr(mats={"V_t": surrogate.symmetric()},
                             const=surrogate.constant)

    def e_mm(m):
        E = np.zeros((m1, m1), dtype=complex)
        E[m, m] = 1.0
        return E

    # unit lifting entry
    prob.eq_constraints.append((LinExpr(mats={"V_t": e_mm(m1 - 1)}), 1.0))
    prob.eq_constraints.append((LinExpr(mats={"V_r": e_mm(m1 - 1)}), 1.0))
    for m in range(scn.n_elements):
        if masks is None:
            prob.eq_constraints.append(
                (LinExpr(mats={"V_t": e_mm(m), "V_r": e_mm(m)}), 1.0))
            prob.ineq_constraints.append((LinExpr(mats={"V_t": e_mm(m)}), 1.0))
            prob.ineq_constraints.append((LinExpr(mats={"V_r": e_mm(m)}), 1.0))
        else:
            mask_t, mask_r = masks
            prob.eq_constraints.append(
                (LinExpr(mats={"V_t": e_mm(m)}), float(mask_t[m])))
            prob.eq_constraints.append(
                (LinExpr(mats={"V_r": e_mm(m)}), float(mask_r[m])))

    if rate_model == "rsma":
        _rsma_vr_constraints(prob, ch, scn, state)
    elif rate_model == "sdma":
        _sdma_vr_constraints(prob, ch, scn, state)
    elif rate_model == "noma":
        _noma_vr_constraints(prob, ch, scn, state, order)
    else:
        raise InvalidInputError(f"unknown rate model {rate_model}")

    for label in ("V_t", "V_r"):
        tau = srocr.tau.get(label, 0.0)
        u = srocr.u.get(label)
        if tau <= 0.0 or u is None:
            continue
        e = LinExpr(mats={label: hermitize(
            tau * np.eye(m1, dtype=complex) - np.outer(u, np.conj(u)))})
        prob.ineq_constraints.append((e, 0.0))
    return prob


# ---------------------------------------------------------------------------
# rank-one recovery

def _principal_coeff_vector(V, min_ratio=0.9):
    ratio = rank_one_ratio(V)
    if ratio < min_ratio:
        raise ExtractionError(f"rank-one ratio {ratio:.4f} below {min_ratio}")
    lam, u = hermitian_eig_max(V)
    nu = math.sqrt(max(lam, 0.0)) * u
    last = nu[-1]
    if abs(last) < 1e-8:
        raise ExtractionError("vanishing lifting entry; cannot fix the phase gauge")
    nu = nu * (np.conj(last) / abs(last))
    nu[-1] = 1.0
    return nu


def extract_coeffs(V_t, V_r, masks=None, min_ratio=0.9):
    """Recover (Phi_t, Phi_r, nu_t, nu_r) from near-rank-one lifted matrices.

    Amplitudes are clipped to [0, 1] and re-projected so that
    beta_t + beta_r = 1 holds exactly per element (or onto the fixed masks
    when given); phases are preserved.
    """
    nu_t = _principal_coeff_vector(V_t, min_ratio)
    nu_r = _principal_coeff_vector(V_r, min_ratio)
    m = len(nu_t) - 1
    th_t = np.angle(nu_t[:m])
    th_r = np.angle(nu_r[:m])
    bt = np.clip(np.abs(nu_t[:m]) ** 2, 0.0, 1.0)
    br = np.clip(np.abs(nu_r[:m]) ** 2, 0.0, 1.0)
    if masks is None:
        s = bt + br
        safe = s > 1e-12
        bt = np.where(safe, bt / np.where(safe, s, 1.0), 0.5)
        br = np.where(safe, br / np.where(safe, s, 1.0), 0.5)
    else:
        bt = np.asarray(masks[0], dtype=float)
        br = np.asarray(masks[1], dtype=float)
    phi_t = np.sqrt(bt) * np.exp(1j * th_t)
    phi_r = np.sqrt(br) * np.exp(1j * th_r)
    nu_t = np.concatenate([phi_t, [1.0 + 0.0j]])
    nu_r = np.concatenate([phi_r, [1.0 + 0.0j]])
    return np.diag(phi_t), np.diag(phi_r), nu_t, nu_r


@dataclass
class B2Trace:
    objective: list = field(default_factory=list)
    tau: list = field(default_factory=list)
    feasible: list = field(default_factory=list)


def solve_b2(ch, scn, state, ris, omega, *,
             rate_model="rsma", order=None, masks=None,
             eps1=None, eps2=None, max_iters=40, solver_tol=1e-8,
             trace=None):
    """Algorithm 2: MM + SROCR loop over the lifted surface matrices.

    Returns a StarRisState carrying the final V matrices and the extracted,
    re-projected coefficients.  Keeps the incoming coefficients on stall.
    """
    eps1 = scn.epsilon_1 if eps1 is None else eps1
    eps2 = scn.epsilon_2 if eps2 is None else eps2
    Q = state.q_total()

    V_t, V_r = ris.V_t, ris.V_r
    nu_ref = ris.nu_t
    srocr = SrocrState()
    for label, V in (("V_t", V_t), ("V_r", V_r)):
        srocr.set_reference(label, V)
        srocr.tau[label] = 0.0
        srocr.delta[label] = 0.0

    prev_obj = None
    accepted_any = False
    deltas_ready = False
    for it in range(max_iters):
        surrogate = build_surrogate(ch, Q, omega, nu_ref, scn)
        prob = build_b2_problem(surrogate, ch, scn, state, srocr,
                                rate_model=rate_model, order=order, masks=masks)
        sol = solve(prob, tol=solver_tol)
        feasible = sol.optimal
        if feasible:
            V_t, V_r = sol.values["V_t"], sol.values["V_r"]
            accepted_any = True
            for label, V in (("V_t", V_t), ("V_r", V_r)):
                srocr.set_reference(label, V)
            if not deltas_ready:
                for label in srocr.ref:
                    srocr.init_delta(label)
                deltas_ready = True
            # refresh the expansion point from the dominant direction
            try:
                nu_ref = _principal_coeff_vector(V_t, min_ratio=0.0)
            except ExtractionError:
                pass
        else:
            if accepted_any and srocr.converged(eps1):
                break           # rank-one already reached; keep best iterate
            srocr.halve_deltas()
            if srocr.max_delta() < 1e-12 and not srocr.converged(eps1):
                if accepted_any:
                    break
                raise StallError(
                    "surface subproblem stayed infeasible",
                    {"iteration": it, "status": sol.status,
                     "tau": dict(srocr.tau)})
        for label in srocr.ref:
            srocr.update_tau(label)

        if trace is not None:
            trace.objective.append(sol.objective if feasible else float("nan"))
            trace.tau.append(dict(srocr.tau))
            trace.feasible.append(feasible)

        if feasible and srocr.converged(eps1) and prev_obj is not None \
                and abs(sol.objective - prev_obj) <= eps2 * max(1.0, abs(prev_obj)):
            break
        if feasible:
            prev_obj = sol.objective

    phi_t, phi_r, nu_t, nu_r = extract_coeffs(V_t, V_r, masks=masks)
    return model.StarRisState(V_t=V_t, V_r=V_r, nu_t=nu_t, nu_r=nu_r,
                              Phi_t=phi_t, Phi_r=phi_r), srocr
