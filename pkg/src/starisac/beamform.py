"""Transmit-covariance subproblem (Algorithm 1).

With the surface coefficients frozen, the sensing-SINR maximization over
{W_c, W_p,k (, W_0), c_k} is convexified by Dinkelbach's transform on the
fractional objective, tangent linearization of the exponential rate slacks,
and SROCR rows for the rank-one requirements.  The resulting linear conic
program is handed to the conic layer; infeasible subproblems trigger the
step-size halving backtrack.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import (InvalidInputError, herm, hermitian_eig_max, hermitize,
                     rank_one_ratio)
from .conic import ConicProblem, LinExpr, solve
from . import model

LN2 = math.log(2.0)


class StallError(RuntimeError):
    """Raised when repeated infeasibility exhausts the SROCR step size."""

    def __init__(self, msg, diagnostics=None):
        super().__init__(msg)
        self.diagnostics = diagnostics or {}


@dataclass
class SrocrState:
    """Per-matrix rank-one relaxation bookkeeping."""

    tau: dict = field(default_factory=dict)
    delta: dict = field(default_factory=dict)
    u: dict = field(default_factory=dict)      # largest eigenvector of the reference
    ref: dict = field(default_factory=dict)

    def set_reference(self, label, W, power_floor=0.0):
        """Record W as the reference matrix and refresh its eigen direction."""
        tr = float(np.real(np.trace(W)))
        self.ref[label] = W
        if tr <= power_floor:
            # (numerically) zero matrix is already rank <= 1
            self.u[label] = None
            self.tau[label] = 1.0
            return
        _, u = hermitian_eig_max(W)
        self.u[label] = u

    def init_delta(self, label, power_floor=0.0):
        """Midpoint of the admissible interval (0, 1 - e_max/Tr)."""
        W = self.ref[label]
        tr = float(np.real(np.trace(W)))
        if tr <= power_floor:
            self.delta[label] = 0.0
            return
        self.delta[label] = max(0.0, 0.5 * (1.0 - rank_one_ratio(W)))

    def update_tau(self, label, power_floor=0.0):
        W = self.ref[label]
        tr = float(np.real(np.trace(W)))
        if tr <= power_floor:
            self.tau[label] = 1.0
            return
        self.tau[label] = srocr_update(W, self.delta[label])

    def halve_deltas(self):
        for label in self.delta:
            self.delta[label] = 0.5 * self.delta[label]

    def max_delta(self):
        return max(self.delta.values()) if self.delta else 0.0

    def converged(self, eps1):
        return all(abs(1.0 - t) <= eps1 for t in self.tau.values())


def srocr_update(W, delta):
    """tau = min(1, e_max(W)/Tr(W) + delta)."""
    tr = float(np.real(np.trace(W)))
    if tr <= 0:
        raise InvalidInputError("srocr_update needs Tr(W) > 0")
    if delta < 0:
        raise InvalidInputError("srocr_update needs delta >= 0")
    return min(1.0, rank_one_ratio(W) + delta)


def update_omega(A_t, B_t, n):
    """Dinkelbach ratio Tr(A_t) / Tr(B_t + I_N)."""
    num = float(np.real(np.trace(A_t)))
    den = float(np.real(np.trace(B_t))) + n
    return max(num, 0.0) / den


def reconstruct_no_sensing(W_c, W_p, W_0, zeta_c, zeta):
    """Fold the dedicated-sensing covariance into the communication ones.

    Returns (W_c_bar, W_p_bar) with W_0_bar = 0 implied; the total transmit
    covariance Q (hence the sensing SINR) is preserved exactly and no rate
    constraint degrades.
    """
    zeta = list(zeta)
    if len(zeta) != len(W_p):
        raise InvalidInputError("zeta must have one entry per private stream")
    if any(z < 0 for z in zeta) or zeta_c < 0:
        raise InvalidInputError("zeta weights must be nonnegative")
    if abs(zeta_c + sum(zeta) - 1.0) > 1e-9:
        raise InvalidInputError("zeta weights must sum to 1")
    if W_0 is None:
        return W_c.copy(), [W.copy() for W in W_p]
    return (hermitize(W_c + zeta_c * W_0),
            [hermitize(W_p[k] + zeta[k] * W_0) for k in range(len(W_p))])


# ---------------------------------------------------------------------------
# problem assembly

def _gt_outer_products(ch, phi_r, K):
    Hs = []
    for k in range(K):
        h = model.composite_gt_channel(ch, phi_r, k)
        Hs.append(np.outer(h, np.conj(h)))
    return Hs


def _w_names(K, with_w0):
    names = ["W_c"] + [f"W_p{k}" for k in range(K)]
    if with_w0:
        names.append("W_0")
    return names


def _rsma_rate_constraints(prob, Hs, scn, a_ref, b_ref, c_ref, with_w0):
    """Tangent-linearized common/private rate constraints at the reference."""
    K = scn.n_users
    sum_c_ref = float(np.sum(c_ref))
    for k in range(K):
        rho = 1.0 / scn.noise_gt[k]
        rH = rho * Hs[k]
        p_names = [f"W_p{i}" for i in range(K)]
        itf_names = p_names + (["W_0"] if with_w0 else [])

        # common stream numerator: 2^{a_k} <= rho Tr(H_k Q1) + 1, tangent at a_ref
        ea = 2.0 ** a_ref[k]
        e = LinExpr()
        e.add_scalar(f"a{k}", LN2 * ea)
        for nm in ["W_c"] + itf_names:
            e.add_mat(nm, -rH)
        prob.ineq_constraints.append((e, ea * (LN2 * a_ref[k] - 1.0) + 1.0))

        # common stream denominator, Taylor in (a_k, sum c)
        A = a_ref[k] - sum_c_ref
        beta = LN2 * 2.0 ** A
        e = LinExpr()
        for nm in itf_names:
            e.add_mat(nm, rH)
        e.add_scalar(f"a{k}", -beta)
        for j in range(K):
            e.add_scalar(f"c{j}", beta)
        prob.ineq_constraints.append(
            (e, 2.0 ** A - 1.0 - beta * a_ref[k] + beta * sum_c_ref))

        # private stream numerator: 2^{b_k} <= rho Tr(H_k Q2) + 1, tangent at b_ref
        eb = 2.0 ** b_ref[k]
        e = LinExpr()
        e.add_scalar(f"b{k}", LN2 * eb)
        for nm in itf_names:
            e.add_mat(nm, -rH)
        prob.ineq_constraints.append((e, eb * (LN2 * b_ref[k] - 1.0) + 1.0))

        # private stream denominator, Taylor in (b_k, c_k)
        B = b_ref[k] + c_ref[k] - scn.rate_threshold[k]
        beta = LN2 * 2.0 ** B
        e = LinExpr()
        for nm in [f"W_p{j}" for j in range(K) if j != k] + (["W_0"] if with_w0 else []):
            e.add_mat(nm, rH)
        e.add_scalar(f"b{k}", -beta)
        e.add_scalar(f"c{k}", -beta)
        prob.ineq_constraints.append(
            (e, 2.0 ** B - 1.0 - beta * (b_ref[k] + c_ref[k])))

        # c_k >= 0
        prob.ineq_constraints.append((LinExpr(scalars={f"c{k}": -1.0}), 0.0))


def _sdma_rate_constraints(prob, Hs, scn, with_w0):
    """Tr(H_k W_p,k) >= (2^Rth - 1)(interference + noise): linear, no slacks."""
    K = scn.n_users
    for k in range(K):
        g = 2.0 ** scn.rate_threshold[k] - 1.0
        e = LinExpr()
        e.add_mat(f"W_p{k}", -Hs[k])
        for j in range(K):
            if j != k:
                e.add_mat(f"W_p{j}", g * Hs[k])
        if with_w0:
            e.add_mat("W_0", g * Hs[k])
        prob.ineq_constraints.append((e, -g * scn.noise_gt[k]))


def noma_order(ch, phi_r, K):
    """SIC decoding order: descending composite channel gain."""
    gains = [np.linalg.norm(model.composite_gt_channel(ch, phi_r, k)) ** 2
             for k in range(K)]
    return list(np.argsort(gains)[::-1])


def noma_user_rates(ch, phi_r, scn, state, order):
    """Achievable rate per user under successive decoding at every receiver.

    The message of the user at order position i must be decoded by all
    receivers at positions <= i; its rate is the worst decoder's.
    """
    K = scn.n_users
    rates = np.zeros(K)
    hs = [model.composite_gt_channel(ch, phi_r, k) for k in range(K)]
    for i in range(K):
        ki = order[i]
        vals = []
        for m in range(i + 1):
            km = order[m]
            h = hs[km]
            sig = float(np.real(np.conj(h) @ state.W_p[ki] @ h))
            itf = sum(float(np.real(np.conj(h) @ state.W_p[order[j]] @ h))
                      for j in range(i))
            if state.W_0 is not None:
                itf += float(np.real(np.conj(h) @ state.W_0 @ h))
            vals.append(math.log2(1.0 + max(sig, 0.0)
                                  / (max(itf, 0.0) + scn.noise_gt[km])))
        rates[ki] = min(vals)
    return rates


def _principal_component(W):
    vals, vecs = np.linalg.eigh(W)
    u = vecs[:, -1]
    return max(float(vals[-1]), 0.0) * np.outer(u, np.conj(u))


def _round_rank_one(state, power_floor):
    """Keep only the principal component of every significant covariance."""
    def rnd(W):
        if W is None or float(np.real(np.trace(W))) <= power_floor:
            return W
        return _principal_component(W)

    return model.BeamformingState(
        W_c=rnd(state.W_c), W_p=[rnd(W) for W in state.W_p],
        W_0=rnd(state.W_0), c=state.c, a=state.a, b=state.b)


def _exact_feasible(ch, phi_r, scn, state, rate_model, order, rate_tol=5e-7):
    """True (non-linearized) feasibility of an iterate's covariances."""
    if state.total_power() > scn.p_max * (1.0 + 1e-6):
        return False
    if rate_model == "rsma":
        _, ok = repair_common_allocation(ch, phi_r, scn, state)
        return ok
    if rate_model == "noma":
        rates = noma_user_rates(ch, phi_r, scn, state, order)
    else:
        _, rates = exact_rates(ch, phi_r, scn, state)
    return bool(np.all(rates >= np.asarray(scn.rate_threshold) - rate_tol))


def _noma_rate_constraints(prob, Hs, scn, order, with_w0):
    """Message of the i-th ordered user must be decodable at every stronger user."""
    K = scn.n_users
    for i in range(K):
        ki = order[i]
        g = 2.0 ** scn.rate_threshold[ki] - 1.0
        for m in range(i + 1):
            km = order[m]
            e = LinExpr()
            e.add_mat(f"W_p{ki}", -Hs[km])
            for j in range(i):
                e.add_mat(f"W_p{order[j]}", g * Hs[km])
            if with_w0:
                e.add_mat("W_0", g * Hs[km])
            prob.ineq_constraints.append((e, -g * scn.noise_gt[km]))


def build_b1_problem(ch, phi_t, phi_r, scn, omega, srocr, *,
                     a_ref=None, b_ref=None, c_ref=None,
                     with_w0=False, rate_model="rsma", order=None):
    """Assemble the convexified transmit-covariance program."""
    K = scn.n_users
    n = scn.n_antennas
    has_common = rate_model == "rsma"
    Hs = _gt_outer_products(ch, phi_r, K)
    G_a, G_b = model.sensing_trace_coeffs(ch, phi_t, scn)
    obj_coeff = hermitize(omega * G_b - G_a)

    prob = ConicProblem()
    w_names = []
    if has_common:
        w_names.append("W_c")
    w_names += [f"W_p{k}" for k in range(K)]
    if with_w0:
        w_names.append("W_0")
    prob.psd_vars = [(nm, n) for nm in w_names]
    if has_common:
        prob.scalar_vars = [f"{p}{k}" for p in ("a", "b", "c") for k in range(K)]

    # Dinkelbach objective; a vanishing Tr(W_0) nudge breaks the exact
    # degeneracy between W_0 and W_c mass (the sensing SINR cannot tell
    # them apart), keeping the dedicated-sensing power well defined.
    prob.objective = LinExpr(const=omega * n)
    for nm in w_names:
        prob.objective.add_mat(nm, obj_coeff)
    if with_w0:
        reg = 1e-6 * (1.0 + float(np.linalg.norm(obj_coeff)))
        prob.objective.add_mat("W_0", reg * np.eye(n, dtype=complex))

    # total transmit power
    e = LinExpr()
    for nm in w_names:
        e.add_mat(nm, np.eye(n, dtype=complex))
    prob.ineq_constraints.append((e, scn.p_max))

    if rate_model == "rsma":
        _rsma_rate_constraints(prob, Hs, scn, a_ref, b_ref, c_ref, with_w0)
    elif rate_model == "sdma":
        _sdma_rate_constraints(prob, Hs, scn, with_w0)
    elif rate_model == "noma":
        _noma_rate_constraints(prob, Hs, scn, order, with_w0)
    else:
        raise InvalidInputError(f"unknown rate model {rate_model}")

    # SROCR rows: u^H W u >= tau Tr(W)
    for label in w_names:
        tau = srocr.tau.get(label, 0.0)
        u = srocr.u.get(label)
        if tau <= 0.0 or u is None:
            continue
        e = LinExpr(mats={label: hermitize(
            tau * np.eye(n, dtype=complex) - np.outer(u, np.conj(u)))})
        prob.ineq_constraints.append((e, 0.0))

    return prob


# ---------------------------------------------------------------------------
# rate bookkeeping

def exact_rates(ch, phi_r, scn, state):
    """(R_c per user, R_p per user) for the current covariances."""
    K = scn.n_users
    Rc = np.array([model.common_rate(k, ch, phi_r, state.W_c, state.W_p,
                                     state.W_0, scn.noise_gt[k])
                   for k in range(K)])
    Rp = np.array([model.private_rate(k, ch, phi_r, state.W_p, state.W_0,
                                      scn.noise_gt[k])
                   for k in range(K)])
    return Rc, Rp


def repair_common_allocation(ch, phi_r, scn, state):
    """Minimal feasible common-rate split for the final covariances.

    The sensing objective is independent of c, so c_k = max(0, Rth_k - R_p,k)
    is always the safest allocation; returns (c, feasible).
    """
    Rc, Rp = exact_rates(ch, phi_r, scn, state)
    c = np.maximum(0.0, np.asarray(scn.rate_threshold) - Rp)
    feasible = float(np.sum(c)) <= float(np.min(Rc)) + 1e-9
    return c, feasible


def _slack_refs(ch, phi_r, scn, state, with_w0):
    """Exact (a, b) slack values achieved by the current covariances."""
    K = scn.n_users
    a = np.zeros(K)
    b = np.zeros(K)
    W0 = state.W_0 if with_w0 else None
    for k in range(K):
        h = model.composite_gt_channel(ch, phi_r, k)
        H = np.outer(h, np.conj(h))
        rho = 1.0 / scn.noise_gt[k]
        q2 = sum(float(np.real(np.trace(H @ W))) for W in state.W_p)
        if W0 is not None:
            q2 += float(np.real(np.trace(H @ W0)))
        q1 = q2 + float(np.real(np.trace(H @ state.W_c)))
        a[k] = math.log2(max(rho * q1 + 1.0, 1.0))
        b[k] = math.log2(max(rho * q2 + 1.0, 1.0))
    return a, b


def initial_beamforming(ch, phi_r, scn, *, with_w0=False, rate_model="rsma"):
    """Maximum-ratio starting point with a half common / half private split."""
    K = scn.n_users
    n = scn.n_antennas
    hs = [model.composite_gt_channel(ch, phi_r, k) for k in range(K)]

    def mrt(h, p):
        nrm = np.linalg.norm(h)
        if nrm == 0:
            return p / n * np.eye(n, dtype=complex)
        w = h / nrm
        return p * np.outer(w, np.conj(w))

    if rate_model == "rsma":
        h_bar = np.mean(hs, axis=0)
        W_c = mrt(h_bar, scn.p_max / 2.0)
        W_p = [mrt(hs[k], scn.p_max / (2.0 * K)) for k in range(K)]
    else:
        W_c = np.zeros((n, n), dtype=complex)
        W_p = [mrt(hs[k], scn.p_max / K) for k in range(K)]
    W_0 = np.zeros((n, n), dtype=complex) if with_w0 else None
    state = model.BeamformingState(W_c=W_c, W_p=W_p, W_0=W_0,
                                   c=np.zeros(K), a=np.zeros(K), b=np.zeros(K))
    if rate_model == "rsma":
        c, _ = repair_common_allocation(ch, phi_r, scn, state)
        state.c = c
        state.a, state.b = _slack_refs(ch, phi_r, scn, state, with_w0)
    return state


@dataclass
class B1Trace:
    """Per-iteration record of the inner beamforming loop."""

    omega: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    tau: list = field(default_factory=list)
    feasible: list = field(default_factory=list)


def solve_b1(ch, phi_t, phi_r, scn, init=None, *,
             with_w0=False, rate_model="rsma", order=None,
             eps1=None, eps2=None, max_iters=60, solver_tol=1e-8,
             trace=None):
    """Algorithm 1: iterate convex solves with SROCR tightening.

    Returns the final BeamformingState with an exactly repaired common-rate
    allocation.  Raises StallError if the step sizes underflow while the
    subproblem stays infeasible with no accepted iterate.
    """
    eps1 = scn.epsilon_1 if eps1 is None else eps1
    eps2 = scn.epsilon_2 if eps2 is None else eps2
    K = scn.n_users
    n = scn.n_antennas
    power_floor = 1e-9 * scn.p_max

    state = init if init is not None else initial_beamforming(
        ch, phi_r, scn, with_w0=with_w0, rate_model=rate_model)
    if rate_model == "noma" and order is None:
        order = noma_order(ch, phi_r, K)

    srocr = SrocrState()
    for label, W in state.tracked():
        srocr.set_reference(label, W, power_floor)
        srocr.tau[label] = 0.0       # first pass is the plain SDR
        srocr.delta[label] = 0.0
    G_a, G_b = model.sensing_trace_coeffs(ch, phi_t, scn)
    omega = update_omega(G_a @ state.q_total(), G_b @ state.q_total(), n)

    a_ref, b_ref, c_ref = state.a, state.b, state.c
    prev_obj = None
    accepted_any = False
    deltas_ready = False

    for it in range(max_iters):
        prob = build_b1_problem(ch, phi_t, phi_r, scn, omega, srocr,
                                a_ref=a_ref, b_ref=b_ref, c_ref=c_ref,
                                with_w0=with_w0, rate_model=rate_model,
                                order=order)
        sol = solve(prob, tol=solver_tol)
        feasible = sol.optimal
        cand = None
        if feasible:
            W_c = sol.values["W_c"] if rate_model == "rsma" \
                else np.zeros((n, n), dtype=complex)
            W_p = [sol.values[f"W_p{k}"] for k in range(K)]
            W_0 = sol.values["W_0"] if with_w0 else None
            cand = model.BeamformingState(
                W_c=W_c, W_p=W_p, W_0=W_0,
                c=np.array([sol.values.get(f"c{k}", 0.0) for k in range(K)]),
                a=np.array([sol.values.get(f"a{k}", 0.0) for k in range(K)]),
                b=np.array([sol.values.get(f"b{k}", 0.0) for k in range(K)]))
            if not _exact_feasible(ch, phi_r, scn, cand, rate_model, order):
                # the tangent rows drifted from their expansion point: the
                # candidate satisfies the linearized rates but not the exact
                # ones.  Re-center the references on it and re-solve instead
                # of accepting.
                feasible = False
                if rate_model == "rsma":
                    a_ref, b_ref = _slack_refs(ch, phi_r, scn, cand, with_w0)
                    c_ref = cand.c
                cand = None
        if feasible:
            state = cand
            accepted_any = True
            for label, W in state.tracked():
                srocr.set_reference(label, W, power_floor)
            if not deltas_ready:
                for label in srocr.ref:
                    srocr.init_delta(label, power_floor)
                deltas_ready = True
            if rate_model == "rsma":
                a_ref, b_ref = _slack_refs(ch, phi_r, scn, state, with_w0)
                c_ref = state.c
            Q = state.q_total()
            omega = update_omega(G_a @ Q, G_b @ Q, n)
        elif not sol.optimal:
            if accepted_any and srocr.converged(eps1):
                break           # rank-one already reached; keep best iterate
            srocr.halve_deltas()
            if srocr.max_delta() < 1e-12 and not srocr.converged(eps1):
                if accepted_any:
                    break       # best-so-far iterate kept
                raise StallError(
                    "beamforming subproblem stayed infeasible",
                    {"iteration": it, "status": sol.status,
                     "tau": dict(srocr.tau), "delta": dict(srocr.delta)})
        for label in srocr.ref:
            srocr.update_tau(label, power_floor)

        if trace is not None:
            trace.omega.append(omega)
            trace.objective.append(sol.objective if feasible else float("nan"))
            trace.tau.append(dict(srocr.tau))
            trace.feasible.append(feasible)

        if feasible and srocr.converged(eps1) and prev_obj is not None \
                and abs(sol.objective - prev_obj) <= eps2 * max(1.0, abs(prev_obj)):
            break
        if feasible:
            prev_obj = sol.objective

    if not accepted_any:
        raise StallError(
            "no rate-feasible beamforming iterate found",
            {"tau": dict(srocr.tau), "delta": dict(srocr.delta)})
    if state.W_0 is not None and \
            float(np.real(np.trace(state.W_0))) < 1e-5 * scn.p_max:
        # below solver accuracy: a vanishing sensing covariance carries no
        # usable rank-one structure, so drop it outright
        state.W_0 = np.zeros_like(state.W_0)
    rounded = _round_rank_one(state, power_floor)
    if _exact_feasible(ch, phi_r, scn, rounded, rate_model, order):
        state = rounded
    tot = state.total_power()
    if tot > scn.p_max > 0:
        # absorb the solver's tolerance so the budget holds exactly
        s = scn.p_max / tot
        state.W_c = s * state.W_c
        state.W_p = [s * W for W in state.W_p]
        if state.W_0 is not None:
            state.W_0 = s * state.W_0
    if rate_model == "rsma":
        c, ok = repair_common_allocation(ch, phi_r, scn, state)
        if ok:
            state.c = c
            state.a, state.b = _slack_refs(ch, phi_r, scn, state, with_w0)
    # re-sync the relaxation bookkeeping with the polished iterate
    for label, W in state.tracked():
        srocr.set_reference(label, W, power_floor)
        srocr.delta[label] = 0.0
        srocr.update_tau(label, power_floor)
    return state, srocr
