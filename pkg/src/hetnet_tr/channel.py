"""Network geometry, tapped-delay-line channel generation, and estimation-error
injection.

Distances are in meters, tap variances follow the ITU power-delay profiles
scaled by a distance power law.  Profile dBm columns are relative weights
(0 dBm maps to 1.0); absolute scaling is irrelevant because only power
ratios enter any SINR.
"""

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import ConfigError

# tier radii and placement distance (meters)
D_MACRO = 300.0
D_FEMTO = 30.0
D_MBS_FBS = 100.0

# pathloss exponents for outdoor, indoor, and cross-tier links
EXP_MACRO = 4.0
EXP_FEMTO = 3.0
EXP_CROSS = 3.5

PERTURB_MODES = ("worst_aligned", "worst_anti_aligned", "uniform_ball")


@dataclass(frozen=True)
class TapProfile:
    """Power-delay profile: per-tap relative delay (ns) and average power (dBm)."""

    name: str
    delays_ns: tuple
    powers_dbm: tuple

    @property
    def n_taps(self):
        return len(self.powers_dbm)

    @property
    def linear_powers(self):
        return np.power(10.0, np.asarray(self.powers_dbm, dtype=float) / 10.0)


def _load_catalog():
    raw = json.loads(
        resources.files("hetnet_tr").joinpath("data/itu_profiles.json").read_text()
    )
    catalog = {}
    for key, entry in raw.items():
        prof = TapProfile(
            name=entry["name"],
            delays_ns=tuple(entry["delays_ns"]),
            powers_dbm=tuple(entry["powers_dbm"]),
        )
        delays = np.asarray(prof.delays_ns, dtype=float)
        if prof.n_taps < 1 or delays[0] != 0.0 or (np.diff(delays) <= 0).any():
            raise ConfigError(f"profile '{key}': delays must increase from 0")
        if prof.powers_dbm[0] != 0:
            raise ConfigError(f"profile '{key}': first tap must be 0 dBm")
        catalog[key] = prof
    return catalog


_CATALOG = None


def get_profile(key):
    """Catalog lookup: 'indoor_office', 'vehicular', or 'outdoor_to_indoor'."""
    global _CATALOG
    if _CATALOG is None:
        _CATALOG = _load_catalog()
    try:
        return _CATALOG[key]
    except KeyError:
        raise ConfigError(f"unknown tap profile '{key}'") from None


@dataclass
class ScenarioConfig:
    """System-level parameters; dB/dBm fields convert to linear only here."""

    m0: int = 4
    m1: int = 4
    n0: int = 2
    n1: int = 2
    taps: int = 6
    gamma_m_db: float = 1.0
    gamma_f_db: float = 2.0
    p_tol_dbm: float = -10.0
    noise_power: float = 1e-12
    d_macro: float = D_MACRO
    d_femto: float = D_FEMTO
    d_mbs_fbs: float = D_MBS_FBS
    exp_macro: float = EXP_MACRO
    exp_femto: float = EXP_FEMTO
    exp_cross: float = EXP_CROSS
    psi: float = 0.0
    xi: float = 0.0
    seed: int = 12345

    @property
    def gamma_m(self):
        return 10.0 ** (self.gamma_m_db / 10.0)

    @property
    def gamma_f(self):
        return 10.0 ** (self.gamma_f_db / 10.0)

    @property
    def p_tol(self):
        """Cross-tier interference cap in watts."""
        return 10.0 ** ((self.p_tol_dbm - 30.0) / 10.0)

    def validate(self):
        if min(self.m0, self.m1, self.n0, self.n1, self.taps) < 1:
            raise ConfigError("antenna/user/tap counts must be >= 1")
        if self.m0 * self.taps < (2 * self.taps - 1) * self.n0:
            raise ConfigError(
                "macro ZF needs M0*L >= (2L-1)*N0; got "
                f"{self.m0}*{self.taps} < {2 * self.taps - 1}*{self.n0}"
            )
        if not (0.0 <= self.psi < 1.0) or not (0.0 <= self.xi < 1.0):
            raise ConfigError("error factors psi and xi must lie in [0, 1)")
        if self.noise_power <= 0.0:
            raise ConfigError("noise_power must be positive")
        if min(self.d_macro, self.d_femto, self.d_mbs_fbs) <= 0.0:
            raise ConfigError("radii and placement distance must be positive")
        return self


@dataclass
class Geometry:
    """Link distances in meters for one random placement.

    d_0n: MBS to MU_n.  d_1j: FBS to FU_j.  d_01j: MBS to FU_j.
    d_10n: FBS to MU_n.  d_mbs_fbs: MBS to FBS.
    """

    d_0n: np.ndarray
    d_1j: np.ndarray
    d_01j: np.ndarray
    d_10n: np.ndarray
    d_mbs_fbs: float = D_MBS_FBS


@dataclass
class ChannelSet:
    """All four link groups as (antennas, users, taps) complex arrays."""

    h0: np.ndarray    # MBS -> MU,  (M0, N0, L)
    h1: np.ndarray    # FBS -> FU,  (M1, N1, L)
    h10: np.ndarray   # FBS -> MU,  (M1, N0, L)
    h01: np.ndarray   # MBS -> FU,  (M0, N1, L)

    @property
    def taps(self):
        return self.h0.shape[2]


def _uniform_disc(rng, n, radius):
    """n points uniform in a disc: radius scales as sqrt of a uniform draw."""
    r = radius * np.sqrt(rng.random(n))
    theta = 2.0 * np.pi * rng.random(n)
    return np.column_stack([r * np.cos(theta), r * np.sin(theta)])


def place_nodes(config, rng):
    """Drop the FBS, MUs, and FUs and return all pairwise link distances.

    The FBS sits exactly d_mbs_fbs meters from the MBS at a uniform angle.
    MUs are uniform in the macro disc, FUs uniform in the femto disc.
    Degenerate zero distances are resampled.
    """
    theta = 2.0 * np.pi * rng.random()
    fbs = config.d_mbs_fbs * np.array([np.cos(theta), np.sin(theta)])

    mu = _uniform_disc(rng, config.n0, config.d_macro)
    d_0n = np.linalg.norm(mu, axis=1)
    d_10n = np.linalg.norm(mu - fbs, axis=1)
    while (d_0n == 0.0).any() or (d_10n == 0.0).any():
        bad = (d_0n == 0.0) | (d_10n == 0.0)
        mu[bad] = _uniform_disc(rng, int(bad.sum()), config.d_macro)
        d_0n = np.linalg.norm(mu, axis=1)
        d_10n = np.linalg.norm(mu - fbs, axis=1)

    fu_local = _uniform_disc(rng, config.n1, config.d_femto)
    d_1j = np.linalg.norm(fu_local, axis=1)
    while (d_1j == 0.0).any():
        bad = d_1j == 0.0
        fu_local[bad] = _uniform_disc(rng, int(bad.sum()), config.d_femto)
        d_1j = np.linalg.norm(fu_local, axis=1)
    d_01j = np.linalg.norm(fu_local + fbs, axis=1)

    return Geometry(d_0n=d_0n, d_1j=d_1j, d_01j=d_01j, d_10n=d_10n,
                    d_mbs_fbs=config.d_mbs_fbs)


def draw_cir(profile, distance, exponent, L, rng):
    """One CIR draw: tap l is CN(0, sigma_l^2 / distance^exponent).

    sigma_l^2 is the profile's relative linear power; profiles shorter than
    L are zero-padded, and taps are mutually independent.
    """
    if distance <= 0.0:
        raise ValueError(f"link distance must be positive, got {distance}")
    if profile.n_taps > L:
        raise ValueError(
            f"profile '{profile.name}' has {profile.n_taps} taps, more than L={L}"
        )
    var = profile.linear_powers / distance ** exponent
    z = rng.standard_normal((2, profile.n_taps))
    taps = np.sqrt(var / 2.0) * (z[0] + 1j * z[1])
    if profile.n_taps < L:
        taps = np.concatenate([taps, np.zeros(L - profile.n_taps, dtype=complex)])
    return taps


# profile key and pathloss-exponent attribute for each link group
_LINK_RULES = {
    "h0": ("vehicular", "exp_macro"),
    "h1": ("indoor_office", "exp_femto"),
    "h01": ("outdoor_to_indoor", "exp_cross"),
    "h10": ("outdoor_to_indoor", "exp_cross"),
}


def draw_channel_set(config, geometry, rng, profiles=None):
    """Draw all four link groups for one placement.

    Macro links use the Vehicular profile (exponent 4), femto links the
    Indoor Office profile (exponent 3), and both cross-tier groups the
    Outdoor-to-Indoor profile (exponent 3.5) at their own geometry.
    `profiles` may override any of the four groups by key.
    """
    profiles = profiles or {}

    def prof(group):
        key, exp_attr = _LINK_RULES[group]
        return profiles.get(group, get_profile(key)), getattr(config, exp_attr)

    L = config.taps

    def stack(group, n_tx, dists):
        p, exp = prof(group)
        return np.array([
            [draw_cir(p, d, exp, L, rng) for d in dists]
            for _ in range(n_tx)
        ])

    h0 = stack("h0", config.m0, geometry.d_0n)
    h1 = stack("h1", config.m1, geometry.d_1j)
    h10 = stack("h10", config.m1, geometry.d_10n)
    h01 = stack("h01", config.m0, geometry.d_01j)
    return ChannelSet(h0=h0, h1=h1, h10=h10, h01=h01)


def perturb_cir(h_true, psi, mode, rng=None):
    """Return (h_est, e) with h_est = h_true + e and ||e||^2 <= psi*||h_true||^2.

    worst_anti_aligned: e = -sqrt(psi)*h (shrinks the estimate).
    worst_aligned:      e = +sqrt(psi)*h.
    uniform_ball:       e uniform in the ball of radius sqrt(psi)*||h||.
    """
    if not (0.0 <= psi < 1.0):
        raise ValueError(f"error factor must lie in [0, 1), got {psi}")
    if mode not in PERTURB_MODES:
        raise ValueError(f"unknown perturbation mode '{mode}'")
    h = np.asarray(h_true, dtype=complex)
    if psi == 0.0:
        return h.copy(), np.zeros_like(h)
    root = np.sqrt(psi)
    if mode == "worst_anti_aligned":
        e = -root * h
    elif mode == "worst_aligned":
        e = root * h
    else:
        dim = h.size
        z = rng.standard_normal((2, dim))
        direction = z[0] + 1j * z[1]
        direction /= np.linalg.norm(direction)
        radius = root * np.linalg.norm(h) * rng.random() ** (1.0 / (2 * dim))
        e = (radius * direction).reshape(h.shape)
    return h + e, e


def sample_true_given_estimate(h_est, psi, rng, n):
    """Draw n true channels consistent with an estimate under error factor psi.

    The set {h : ||h_est - h||^2 <= psi*||h||^2} is a ball in the error
    variable e = h_est - h with center -psi/(1-psi)*h_est and radius
    sqrt(psi)/(1-psi)*||h_est||; draws are uniform in that ball.
    Returns an (n, ...) stack of channels shaped like h_est.
    """
    if not (0.0 <= psi < 1.0):
        raise ValueError(f"error factor must lie in [0, 1), got {psi}")
    h = np.asarray(h_est, dtype=complex)
    if psi == 0.0:
        return np.broadcast_to(h, (n,) + h.shape).copy()
    center = -psi / (1.0 - psi) * h.reshape(-1)
    radius = np.sqrt(psi) / (1.0 - psi) * np.linalg.norm(h)
    dim = h.size
    z = rng.standard_normal((n, 2, dim))
    direction = z[:, 0, :] + 1j * z[:, 1, :]
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / (2 * dim))
    e = center[None, :] + r[:, None] * direction
    return (h.reshape(-1)[None, :] - e).reshape((n,) + h.shape)
