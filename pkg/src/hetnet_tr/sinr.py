"""Received-power decomposition and SINR evaluation.

Each user samples a single tap of its length-(2L-1) received vector: MUs
the tap selected by the ZF sweep, FUs the central tap. Powers of distinct
users add incoherently (independent unit-power symbols), so every
interference term is a sum of per-user transmit power times a squared
response norm.
"""

from dataclasses import dataclass

import numpy as np

# Gaussian noise power in watts, Table-defaults value; callers override
DEFAULT_NOISE = 1e-12


@dataclass(frozen=True)
class PowerBreakdown:
    """Watts at one user's sampling tap, split by origin."""

    sig: float
    isi: float
    co: float
    cross: float
    noise: float


def _response(filters, cirs):
    """Combined response sum_m filters[m] * cirs[m], length 2L-1."""
    return sum(np.convolve(filters[m], cirs[m]) for m in range(filters.shape[0]))


def _own_terms(filters, cirs, p, tap):
    r = _response(filters, cirs)
    main = p * abs(r[tap - 1]) ** 2
    total = p * float(np.sum(np.abs(r) ** 2))
    return main, total - main


def _tier_interference(filters_all, cirs_to_victim, powers, skip=None):
    """Sum over transmitters of power times full response energy at the victim."""
    total = 0.0
    for k in range(filters_all.shape[1]):
        if k == skip:
            continue
        r = _response(filters_all[:, k, :], cirs_to_victim)
        total += powers[k] * float(np.sum(np.abs(r) ** 2))
    return total


def mu_breakdown(channels, beams, p0, p1, n, noise_power=DEFAULT_NOISE):
    """Power components at MU n sampled at its selected tap."""
    tap = int(beams.alpha[n])
    bands = 2 * channels.taps - 1
    if not 1 <= tap <= bands:
        raise ValueError(f"selected tap {tap} outside 1..{bands}")
    sig, isi = _own_terms(beams.u[:, n, :], channels.h0[:, n, :], p0[n], tap)
    co = _tier_interference(beams.u, channels.h0[:, n, :], p0, skip=n)
    cross = _tier_interference(beams.g, channels.h10[:, n, :], p1)
    return PowerBreakdown(sig=sig, isi=isi, co=co, cross=cross, noise=noise_power)


def fu_breakdown(channels, beams, p0, p1, j, noise_power=DEFAULT_NOISE,
                 cross_override=None):
    """Power components at FU j sampled at the central tap.

    cross_override replaces the macro-induced term; the femto solver uses
    it with the tolerated cap, since actual macro powers are unknown when
    the femto tier commits its allocation.
    """
    tap = int(beams.beta)
    bands = 2 * channels.taps - 1
    if not 1 <= tap <= bands:
        raise ValueError(f"selected tap {tap} outside 1..{bands}")
    sig, isi = _own_terms(beams.g[:, j, :], channels.h1[:, j, :], p1[j], tap)
    co = _tier_interference(beams.g, channels.h1[:, j, :], p1, skip=j)
    if cross_override is not None:
        cross = float(cross_override)
    else:
        if p0 is None:
            raise ValueError("need macro powers or an explicit cross override")
        cross = _tier_interference(beams.u, channels.h01[:, j, :], p0)
    return PowerBreakdown(sig=sig, isi=isi, co=co, cross=cross, noise=noise_power)


def sinr(b):
    """sig over (isi + co + cross + noise)."""
    denom = b.isi + b.co + b.cross + b.noise
    if denom == 0.0:
        raise ValueError("SINR undefined: zero interference and zero noise")
    return b.sig / denom
