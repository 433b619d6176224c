"""End-to-end optimization driver and benchmark schemes.

Alternates the transmit-covariance subproblem and the surface-coefficient
subproblem until the sensing SINR stabilizes, with accept-if-improved
safeguards on both halves, then audits every constraint on the final iterate.
"""

import enum
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .linalg import InvalidInputError, rank_one_ratio
from . import model
from . import beamform as bf
from . import starris as sr
from .scenario import gen_channels


class Scheme(enum.Enum):
    """Transmission scheme / surface configuration pairs."""

    STAR_RSMA = "StarRsma"                    # RSMA + dedicated sensing stream
    STAR_RSMA_NO_SENSING = "StarRsmaNoSensing"  # RSMA, no dedicated stream
    STAR_NOMA = "StarNoma"
    STAR_SDMA = "StarSdma"
    TRADITIONAL_RIS_RSMA = "TraditionalRisRsma"  # half-and-half fixed split
    RANDOM_RIS_RSMA = "RandomRisRsma"            # fixed random coefficients
    NO_RIS_RSMA = "NoRisRsma"                    # surface switched off

    @classmethod
    def parse(cls, name):
        for s in cls:
            if s.value == name:
                return s
        valid = ", ".join(s.value for s in cls)
        raise InvalidInputError(f"unknown scheme '{name}' (expected one of {valid})")


_RATE_MODEL = {
    Scheme.STAR_RSMA: "rsma",
    Scheme.STAR_RSMA_NO_SENSING: "rsma",
    Scheme.STAR_NOMA: "noma",
    Scheme.STAR_SDMA: "sdma",
    Scheme.TRADITIONAL_RIS_RSMA: "rsma",
    Scheme.RANDOM_RIS_RSMA: "rsma",
    Scheme.NO_RIS_RSMA: "rsma",
}

_WITH_W0 = {s: s is not Scheme.STAR_RSMA_NO_SENSING for s in Scheme}

_OPTIMIZE_SURFACE = {
    Scheme.STAR_RSMA: True,
    Scheme.STAR_RSMA_NO_SENSING: True,
    Scheme.STAR_NOMA: True,
    Scheme.STAR_SDMA: True,
    Scheme.TRADITIONAL_RIS_RSMA: True,
    Scheme.RANDOM_RIS_RSMA: False,
    Scheme.NO_RIS_RSMA: False,
}


def scheme_masks(scheme, m):
    """Fixed per-element amplitude masks, or None for energy splitting."""
    if scheme is not Scheme.TRADITIONAL_RIS_RSMA:
        return None
    if m % 2 != 0:
        raise InvalidInputError(
            "the fixed transmit/reflect split needs an even element count")
    mask_t = np.zeros(m)
    mask_t[: m // 2] = 1.0
    return mask_t, 1.0 - mask_t


def _aligned_phases(ch):
    """Phases that add every surface path in phase with the direct path.

    The transmit side is aligned to the sensing target; the reflection side
    to the user with the weakest direct channel.
    """
    t = (np.conj(ch.h_bt) @ ch.H_br) * ch.h_rt
    k = int(np.argmin([np.linalg.norm(h) for h in ch.h_bk]))
    r = (np.conj(ch.h_bk[k]) @ ch.H_br) * ch.h_rk[k]
    return -np.angle(t), -np.angle(r)


def initial_surface(scheme, scn, ch=None):
    """Starting surface coefficients for a scheme (deterministic in the seed)."""
    m = scn.n_elements
    if scheme is Scheme.NO_RIS_RSMA or m == 0:
        return _dark_surface(m)
    rng = np.random.Generator(np.random.Philox(scn.seed + (1 << 32)))
    theta_t = rng.uniform(0.0, 2.0 * np.pi, m)
    theta_r = rng.uniform(0.0, 2.0 * np.pi, m)
    aligned = {Scheme.STAR_RSMA, Scheme.STAR_RSMA_NO_SENSING,
               Scheme.TRADITIONAL_RIS_RSMA}
    # rate splitting benefits from correlated composite channels (the common
    # stream serves everyone); SDMA/NOMA need spatial separation, so they
    # keep the neutral random start
    if scheme in aligned and ch is not None:
        theta_t, theta_r = _aligned_phases(ch)
    masks = scheme_masks(scheme, m)
    if masks is not None:
        # from_coeffs pairs beta_r = 1 - beta_t, which matches the masks
        return model.StarRisState.from_coeffs(masks[0], theta_t, theta_r)
    if scheme is Scheme.RANDOM_RIS_RSMA:
        beta_t = rng.uniform(0.0, 1.0, m)
    else:
        beta_t = 0.5 * np.ones(m)
    return model.StarRisState.from_coeffs(beta_t, theta_t, theta_r)


def _dark_surface(m):
    """All-zero coefficients: the surface passes and reflects nothing."""
    phi = np.zeros(m, dtype=complex)
    nu = np.concatenate([phi, [1.0 + 0.0j]])
    return model.StarRisState(V_t=np.outer(nu, np.conj(nu)),
                              V_r=np.outer(nu, np.conj(nu)),
                              nu_t=nu.copy(), nu_r=nu.copy(),
                              Phi_t=np.diag(phi), Phi_r=np.diag(phi))


noma_user_rates = bf.noma_user_rates


def user_rates(ch, phi_r, scn, state, rate_model, order=None):
    """Effective per-user rate: c_k + R_p,k for RSMA, stream rate otherwise."""
    if rate_model == "rsma":
        _, Rp = bf.exact_rates(ch, phi_r, scn, state)
        return np.asarray(state.c) + Rp
    if rate_model == "noma":
        return noma_user_rates(ch, phi_r, scn, state, order)
    _, Rp = bf.exact_rates(ch, phi_r, scn, state)
    return Rp


def audit(ch, scn, state, ris, rate_model, order=None, rtol=1e-6):
    """Verify every constraint on the final iterate; returns a report dict."""
    rep = {}
    rep["power"] = state.total_power() <= scn.p_max * (1.0 + rtol)
    rates = user_rates(ch, ris.Phi_r, scn, state, rate_model, order)
    rep["rates"] = bool(np.all(rates >= np.asarray(scn.rate_threshold) - 1e-4))
    if rate_model == "rsma":
        Rc, _ = bf.exact_rates(ch, ris.Phi_r, scn, state)
        rep["common_split"] = bool(np.all(np.asarray(state.c) >= -1e-9)
                                   and np.sum(state.c) <= np.min(Rc) + 1e-6)
    else:
        rep["common_split"] = True
    floor = 1e-6 * scn.p_max
    rep["rank_one"] = all(
        rank_one_ratio(W) >= 1.0 - 1e-3
        for _, W in state.tracked()
        if float(np.real(np.trace(W))) > floor)
    bt, br = ris.amplitudes()
    dark = bool(np.all(bt <= rtol) and np.all(br <= rtol))  # surface off
    rep["surface"] = scn.n_elements == 0 or dark or bool(
        np.all(bt >= -rtol) and np.all(br >= -rtol)
        and np.all(np.abs(bt + br - 1.0) <= 1e-6))
    rep["feasible"] = all(rep.values())
    return rep


@dataclass
class RunResult:
    """Everything one optimization run produces."""

    scheme: str
    seed: int
    gamma_bs: float
    gamma_bs_db: float
    rates: np.ndarray
    sum_c: float
    trace_w0: float
    outer_iters: int
    omega_trace: list
    feasible: bool
    audit: dict
    wall_ms: float
    state: object = None
    ris: object = None
    error: str = ""

    @property
    def beta_t(self):
        return self.ris.amplitudes()[0] if self.ris is not None else np.zeros(0)

    @property
    def beta_r(self):
        return self.ris.amplitudes()[1] if self.ris is not None else np.zeros(0)


def _gamma_db(g):
    return 10.0 * math.log10(g) if g > 0 else float("-inf")


def optimize(scn, scheme, ch=None, *, max_outer=100, b1_iters=60, b2_iters=40,
             keep_state=True):
    """Run the full alternating optimization for one scheme and realization."""
    if isinstance(scheme, str):
        scheme = Scheme.parse(scheme)
    t0 = time.perf_counter()
    if ch is None:
        ch = gen_channels(scn)
    rate_model = _RATE_MODEL[scheme]
    with_w0 = _WITH_W0[scheme]
    masks = scheme_masks(scheme, scn.n_elements)
    touch_surface = _OPTIMIZE_SURFACE[scheme] and scn.n_elements > 0

    ris = initial_surface(scheme, scn, ch)
    order = bf.noma_order(ch, ris.Phi_r, scn.n_users) \
        if rate_model == "noma" else None

    state = None
    gamma = -float("inf")
    omega_trace = []
    outer = 0
    error = ""
    try:
        for outer in range(1, max_outer + 1):
            new_state, _ = bf.solve_b1(
                ch, ris.Phi_t, ris.Phi_r, scn, init=None,
                with_w0=with_w0, rate_model=rate_model, order=order,
                max_iters=b1_iters)
            new_gamma = model.sensing_sinr(ch, ris.Phi_t, new_state.q_total(), scn)
            if new_gamma >= gamma or state is None:
                state, gamma = new_state, new_gamma

            if touch_surface:
                try:
                    ris_new, _ = sr.solve_b2(
                        ch, scn, state, ris, gamma,
                        rate_model=rate_model, order=order, masks=masks,
                        max_iters=b2_iters)
                    g_new = model.sensing_sinr(ch, ris_new.Phi_t,
                                               state.q_total(), scn)
                    ok = _rates_still_met(ch, ris_new.Phi_r, scn, state,
                                          rate_model, order)
                    if g_new > gamma and ok:
                        ris, gamma = ris_new, g_new
                        if rate_model == "rsma":
                            c, _ = bf.repair_common_allocation(
                                ch, ris.Phi_r, scn, state)
                            state.c = c
                except (sr.ExtractionError, bf.StallError):
                    pass  # keep the previous surface

            omega_trace.append(gamma)
            if len(omega_trace) >= 2:
                prev = omega_trace[-2]
                if abs(gamma - prev) <= scn.epsilon_outer * max(1.0, abs(prev)):
                    break
            if math.isinf(scn.epsilon_outer):
                break       # an infinite tolerance stops after one pass
    except bf.StallError as e:
        error = str(e)

    if state is None:
        return RunResult(scheme=scheme.value, seed=scn.seed,
                         gamma_bs=float("nan"), gamma_bs_db=float("nan"),
                         rates=np.full(scn.n_users, float("nan")),
                         sum_c=float("nan"), trace_w0=float("nan"),
                         outer_iters=outer, omega_trace=omega_trace,
                         feasible=False, audit={}, error=error or "no iterate",
                         wall_ms=1e3 * (time.perf_counter() - t0))

    rep = audit(ch, scn, state, ris, rate_model, order)
    rates = user_rates(ch, ris.Phi_r, scn, state, rate_model, order)
    tr_w0 = float(np.real(np.trace(state.W_0))) if state.W_0 is not None else 0.0
    return RunResult(
        scheme=scheme.value, seed=scn.seed,
        gamma_bs=gamma, gamma_bs_db=_gamma_db(gamma),
        rates=rates,
        sum_c=float(np.sum(state.c)) if rate_model == "rsma" else 0.0,
        trace_w0=tr_w0, outer_iters=outer, omega_trace=omega_trace,
        feasible=rep["feasible"] and not error, audit=rep, error=error,
        wall_ms=1e3 * (time.perf_counter() - t0),
        state=state if keep_state else None,
        ris=ris if keep_state else None)


def _rates_still_met(ch, phi_r, scn, state, rate_model, order):
    if rate_model == "rsma":
        _, ok = bf.repair_common_allocation(ch, phi_r, scn, state)
        return ok
    rates = user_rates(ch, phi_r, scn, state, rate_model, order)
    return bool(np.all(rates >= np.asarray(scn.rate_threshold) - 1e-6))
