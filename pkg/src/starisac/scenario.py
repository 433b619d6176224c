"""Scene geometry, Rician channel synthesis and array steering.

Everything random or geometric that feeds the optimizer lives here.  Channel
generation is driven by a counter-based Philox generator keyed on the 64-bit
scenario seed, so the same seed always reproduces bit-identical channels.
"""

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .linalg import InvalidInputError


def steering_vector(theta, n):
    """Half-wavelength ULA response a(theta) = [1, e^{j pi sin t}, ...]."""
    if n < 1:
        raise InvalidInputError("steering vector needs n >= 1")
    return np.exp(1j * np.pi * np.sin(theta) * np.arange(n))


def response_matrix(theta, beta, n):
    """Rank-one target/scatterer response beta * a(theta) a(theta)^H."""
    a = steering_vector(theta, n)
    return beta * np.outer(a, np.conj(a))


def path_loss(d, alpha, ref_gain_db):
    """Distance-dependent power gain 10^(ref_gain_db/10) / d^alpha."""
    if d <= 0:
        raise InvalidInputError(f"path_loss needs d > 0, got {d}")
    return 10.0 ** (ref_gain_db / 10.0) / d ** alpha


def _azimuth(src, dst):
    """Steering angle of the src->dst direction for an x-axis ULA."""
    d = np.asarray(dst, dtype=float) - np.asarray(src, dtype=float)
    r = np.linalg.norm(d)
    if r == 0:
        return 0.0
    return math.asin(np.clip(d[0] / r, -1.0, 1.0))


def _default_gt_positions(k):
    # K users on a 20 m circle centered 40 m from the BS (reflection side)
    center = np.array([40.0, 0.0, 0.0])
    ang = 2.0 * np.pi * np.arange(k) / max(k, 1)
    pos = np.stack([center + 20.0 * np.array([np.cos(a), np.sin(a), 0.0])
                    for a in ang])
    return pos


@dataclass
class Scenario:
    """System parameters; defaults follow the reference desk configuration."""

    n_antennas: int = 6
    n_elements: int = 64
    n_users: int = 4
    n_scatterers: int = 2
    p_max: float = 10.0
    noise_gt: tuple = ()            # per-user noise power (W); filled in post-init
    noise_sensing: float = 1e-12
    rate_threshold: tuple = ()      # bits/s/Hz per user; filled in post-init
    ref_gain_db: float = -15.0
    alpha_bs_gt: float = 2.7
    alpha_bs_target: float = 2.6
    alpha_ris: float = 2.8
    rician_db: float = 6.0
    bs_position: tuple = (0.0, 0.0, 0.0)
    ris_position: tuple = (10.0, 90.0, 10.0)
    target_position: tuple = (89.0, 36.0, 0.0)
    gt_positions: tuple = ()        # derived from geometry when empty
    scatterer_positions: tuple = () # derived from geometry when empty
    theta_target: float = None      # BS-relative target angle; geometric default
    theta_scatterers: tuple = ()    # defaults to theta_target +/- 30 degrees
    reflect_target: complex = 1.0 + 0.0j
    reflect_scatterers: tuple = ()
    seed: int = 0
    epsilon_1: float = 1e-5
    epsilon_2: float = 1e-5
    epsilon_outer: float = 1e-5

    def __post_init__(self):
        if self.n_antennas < 1 or self.n_elements < 0 or self.n_users < 1:
            raise InvalidInputError("need n_antennas, n_users >= 1 and n_elements >= 0")
        if self.n_scatterers < 0:
            raise InvalidInputError("n_scatterers must be >= 0")
        if self.p_max <= 0:
            raise InvalidInputError("p_max must be positive")
        if self.noise_sensing <= 0:
            raise InvalidInputError("noise powers must be positive")
        for a in (self.alpha_bs_gt, self.alpha_bs_target, self.alpha_ris):
            if a <= 0:
                raise InvalidInputError("path-loss exponents must be positive")

        if not self.noise_gt:
            self.noise_gt = (1e-10,) * self.n_users
        elif np.isscalar(self.noise_gt):
            self.noise_gt = (float(self.noise_gt),) * self.n_users
        else:
            self.noise_gt = tuple(float(v) for v in self.noise_gt)
        if len(self.noise_gt) != self.n_users or any(v <= 0 for v in self.noise_gt):
            raise InvalidInputError("noise_gt must be positive, one per user")

        if not self.rate_threshold:
            self.rate_threshold = (5.0,) * self.n_users
        elif np.isscalar(self.rate_threshold):
            self.rate_threshold = (float(self.rate_threshold),) * self.n_users
        else:
            self.rate_threshold = tuple(float(v) for v in self.rate_threshold)
        if len(self.rate_threshold) != self.n_users or any(v < 0 for v in self.rate_threshold):
            raise InvalidInputError("rate_threshold must be nonnegative, one per user")

        if not self.gt_positions:
            self.gt_positions = tuple(map(tuple, _default_gt_positions(self.n_users)))
        else:
            self.gt_positions = tuple(tuple(float(x) for x in p) for p in self.gt_positions)
        if len(self.gt_positions) != self.n_users:
            raise InvalidInputError("gt_positions must list one position per user")

        if self.theta_target is None:
            self.theta_target = _azimuth(self.bs_position, self.target_position)
        if not self.theta_scatterers:
            base = self.theta_target
            offs = [(-1) ** i * np.pi / 6.0 * (1 + i // 2) for i in range(self.n_scatterers)]
            self.theta_scatterers = tuple(base + o for o in offs)
        else:
            self.theta_scatterers = tuple(float(t) for t in self.theta_scatterers)
        if len(self.theta_scatterers) != self.n_scatterers:
            raise InvalidInputError("theta_scatterers must list one angle per scatterer")
        if any(abs(t - self.theta_target) < 1e-12 for t in self.theta_scatterers):
            raise InvalidInputError("scatterer angles must differ from the target angle")

        if not self.scatterer_positions:
            tgt = np.asarray(self.target_position, dtype=float)
            pos = []
            for i in range(self.n_scatterers):
                ang = 2.0 * np.pi * i / max(self.n_scatterers, 1)
                pos.append(tuple(tgt + 10.0 * np.array([np.cos(ang), np.sin(ang), 0.0])))
            self.scatterer_positions = tuple(pos)
        else:
            self.scatterer_positions = tuple(tuple(float(x) for x in p)
                                             for p in self.scatterer_positions)
        if len(self.scatterer_positions) != self.n_scatterers:
            raise InvalidInputError("scatterer_positions must match n_scatterers")

        if not self.reflect_scatterers:
            self.reflect_scatterers = (complex(1.0),) * self.n_scatterers
        else:
            self.reflect_scatterers = tuple(complex(b) for b in self.reflect_scatterers)
        if len(self.reflect_scatterers) != self.n_scatterers:
            raise InvalidInputError("reflect_scatterers must match n_scatterers")

    def with_overrides(self, **kwargs):
        """Copy with selected fields replaced (re-validated)."""
        # derived geometry defaults must be recomputed when counts change
        clear = {}
        if "n_users" in kwargs and "gt_positions" not in kwargs:
            clear["gt_positions"] = ()
        if "n_users" in kwargs:
            if "rate_threshold" not in kwargs:
                clear["rate_threshold"] = (self.rate_threshold[0],) * kwargs["n_users"]
            if "noise_gt" not in kwargs:
                clear["noise_gt"] = (self.noise_gt[0],) * kwargs["n_users"]
        if "n_scatterers" in kwargs:
            for f in ("scatterer_positions", "theta_scatterers", "reflect_scatterers"):
                if f not in kwargs:
                    clear[f] = ()
        return replace(self, **{**clear, **kwargs})


_CONFIG_KEYS = {
    "num_gts": "n_users",
    "num_elements": "n_elements",
    "num_antennas": "n_antennas",
    "num_scatterers": "n_scatterers",
    "rate_thresholds": "rate_threshold",
    "target_position": "target_position",
    "ris_position": "ris_position",
    "bs_position": "bs_position",
    "gt_positions": "gt_positions",
    "scatterer_positions": "scatterer_positions",
    "scatterer_angles": "theta_scatterers",
    "target_angle": "theta_target",
    "p_max_watts": "p_max",
    "noise_gt_watts": "noise_gt",
    "noise_sensing_watts": "noise_sensing",
    "ref_gain_db": "ref_gain_db",
    "pl_exp_bs_gt": "alpha_bs_gt",
    "pl_exp_bs_target": "alpha_bs_target",
    "pl_exp_ris": "alpha_ris",
    "rician_db": "rician_db",
    "seed": "seed",
    "epsilon_1": "epsilon_1",
    "epsilon_2": "epsilon_2",
    "epsilon_outer": "epsilon_outer",
}


class ConfigError(ValueError):
    pass


def load_scenario(path):
    """Build a Scenario from a JSON config file (keys per the config schema)."""
    try:
        with open(path) as f:
            raw = json.load(f)
    except OSError as e:
        raise ConfigError(f"{path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top-level value must be an object")
    kwargs = {}
    for key, val in raw.items():
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"{path}: unknown config key '{key}'")
        kwargs[_CONFIG_KEYS[key]] = val
    try:
        return Scenario(**kwargs)
    except (InvalidInputError, TypeError) as e:
        raise ConfigError(f"{path}: {e}") from e


def save_scenario(scn, path):
    inv = {v: k for k, v in _CONFIG_KEYS.items()}
    out = {}
    for f_, key in inv.items():
        val = getattr(scn, f_)
        if isinstance(val, complex):
            val = val.real
        if isinstance(val, tuple):
            val = [list(v) if isinstance(v, tuple) else
                   (v.real if isinstance(v, complex) else v) for v in val]
        out[key] = val
    with open(path, "w") as f:
        json.dump(out, f, indent=2)


@dataclass
class ChannelSet:
    """All complex channels for one realization (fixed shapes, finite entries)."""

    h_bk: list          # K vectors of length N
    h_rk: list          # K vectors of length M
    H_br: np.ndarray    # N x M
    h_bt: np.ndarray    # length N
    h_rt: np.ndarray    # length M
    h_bi: list          # I vectors of length N
    h_ri: list          # I vectors of length M

    def validate(self, scn):
        n, m, k, i = scn.n_antennas, scn.n_elements, scn.n_users, scn.n_scatterers
        assert len(self.h_bk) == k and all(v.shape == (n,) for v in self.h_bk)
        assert len(self.h_rk) == k and all(v.shape == (m,) for v in self.h_rk)
        assert self.H_br.shape == (n, m)
        assert self.h_bt.shape == (n,) and self.h_rt.shape == (m,)
        assert len(self.h_bi) == i and all(v.shape == (n,) for v in self.h_bi)
        assert len(self.h_ri) == i and all(v.shape == (m,) for v in self.h_ri)
        for arr in self.all_arrays():
            assert np.all(np.isfinite(arr.view(float)))
        return True

    def all_arrays(self):
        return [*self.h_bk, *self.h_rk, self.H_br, self.h_bt, self.h_rt,
                *self.h_bi, *self.h_ri]


def _rician_weights(rician_db):
    if math.isinf(rician_db) and rician_db > 0:
        return 1.0, 0.0
    kappa = 10.0 ** (rician_db / 10.0)
    return math.sqrt(kappa / (1.0 + kappa)), math.sqrt(1.0 / (1.0 + kappa))


def _cn(rng, shape):
    """i.i.d. circularly-symmetric complex Gaussian, unit variance."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def _link_vector(rng, gain, los, w_los, w_nlos):
    return math.sqrt(gain) * (w_los * los + w_nlos * _cn(rng, los.shape))


def gen_channels(scn, rng=None):
    """Generate every channel of the scene.

    Each link is sqrt(pl) * (w_los * a_steering + w_nlos * CN(0,1)) with the
    Rician weights from scn.rician_db.  Deterministic for a fixed seed.  Each
    link family draws from its own Philox stream spawned from the seed, so
    e.g. changing the number of surface elements leaves the direct (non-
    surface) channels untouched and sweeps stay comparable across sizes.
    """
    if rng is not None:
        g_bk = g_rk = g_br = g_bt = g_rt = g_bi = g_ri = rng
    else:
        g_bk, g_rk, g_br, g_bt, g_rt, g_bi, g_ri = (
            np.random.Generator(np.random.Philox(c))
            for c in np.random.SeedSequence(scn.seed).spawn(7))
    n, m = scn.n_antennas, scn.n_elements
    bs, ris = scn.bs_position, scn.ris_position
    w_los, w_nlos = _rician_weights(scn.rician_db)
    g0 = scn.ref_gain_db

    def d(a, b):
        return float(np.linalg.norm(np.asarray(a, float) - np.asarray(b, float)))

    h_bk, h_rk = [], []
    for pos in scn.gt_positions:
        gain = path_loss(d(bs, pos), scn.alpha_bs_gt, g0)
        h_bk.append(_link_vector(g_bk, gain, steering_vector(_azimuth(bs, pos), n),
                                 w_los, w_nlos))
    for pos in scn.gt_positions:
        if m > 0:
            gain = path_loss(d(ris, pos), scn.alpha_ris, g0)
            h_rk.append(_link_vector(g_rk, gain,
                                     steering_vector(_azimuth(ris, pos), m),
                                     w_los, w_nlos))
        else:
            h_rk.append(np.zeros(0, dtype=complex))

    if m > 0:
        gain = path_loss(d(bs, ris), scn.alpha_ris, g0)
        los = np.outer(steering_vector(_azimuth(bs, ris), n),
                       np.conj(steering_vector(_azimuth(ris, bs), m)))
        H_br = math.sqrt(gain) * (w_los * los + w_nlos * _cn(g_br, (n, m)))
    else:
        H_br = np.zeros((n, 0), dtype=complex)

    tgt = scn.target_position
    gain = path_loss(d(bs, tgt), scn.alpha_bs_target, g0)
    h_bt = _link_vector(g_bt, gain, steering_vector(scn.theta_target, n), w_los, w_nlos)
    if m > 0:
        gain = path_loss(d(ris, tgt), scn.alpha_ris, g0)
        h_rt = _link_vector(g_rt, gain, steering_vector(_azimuth(ris, tgt), m),
                            w_los, w_nlos)
    else:
        h_rt = np.zeros(0, dtype=complex)

    h_bi, h_ri = [], []
    for i, pos in enumerate(scn.scatterer_positions):
        gain = path_loss(d(bs, pos), scn.alpha_bs_target, g0)
        h_bi.append(_link_vector(g_bi, gain, steering_vector(scn.theta_scatterers[i], n),
                                 w_los, w_nlos))
    for pos in scn.scatterer_positions:
        if m > 0:
            gain = path_loss(d(ris, pos), scn.alpha_ris, g0)
            h_ri.append(_link_vector(g_ri, gain, steering_vector(_azimuth(ris, pos), m),
                                     w_los, w_nlos))
        else:
            h_ri.append(np.zeros(0, dtype=complex))

    ch = ChannelSet(h_bk=h_bk, h_rk=h_rk, H_br=H_br, h_bt=h_bt, h_rt=h_rt,
                    h_bi=h_bi, h_ri=h_ri)
    ch.validate(scn)
    return ch
