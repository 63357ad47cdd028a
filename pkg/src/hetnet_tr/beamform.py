"""Beamformer construction for both tiers.

Macro tier: tap-selective zero-forcing. Per MU and candidate sampling tap,
a stacked banded system is inverted so the combined response is 1 at the
target tap and 0 at every other tap of every MU; candidates are ranked by
a leakage ratio and the best tap wins.

Femto tier: time reversal. Each filter is the conjugated, reversed CIR
with a per-user normalization, which focuses received energy on the
central tap (index L of the 2L-1 response taps).
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import InfeasibleError
from .linops import pseudo_inverse, sylvester_matrix

# a candidate tap counts as reachable when the stacked system solves to this
_ZF_RESIDUAL_TOL = 1e-6


@dataclass(frozen=True)
class ZfCandidate:
    """One (MU, tap) zero-forcing solution.

    filters: (M0, L) per-antenna taps, unit stacked norm.
    tap: 1-based target index in 1..2L-1.
    c: normalization scalar; the received target tap equals c.
    gamma: ranking ratio main/(isi + leakage + 1).
    """

    filters: np.ndarray
    tap: int
    c: float
    gamma: float


@dataclass(frozen=True)
class BeamformerSet:
    """Both tiers' filters plus the sampling taps they were built for."""

    u: np.ndarray        # (M0, N0, L) macro ZF filters
    alpha: np.ndarray    # (N0,) selected MU taps, 1-based
    g: np.ndarray        # (M1, N1, L) femto TR filters
    beta: int            # FU sampling tap, central by construction


def _stacked_system(h):
    """Stack per-MU banded blocks; block n spans rows n*(2L-1)..(n+1)*(2L-1)."""
    M, N, L = h.shape
    return np.vstack([sylvester_matrix(h[:, n, :].T, L) for n in range(N)])


def _unflatten(w, M, L):
    # inverse of the tap-major stacking w[c*M + m] = u[m, c]
    return w.reshape(L, M).T


def _combined_response(filters, cirs):
    """Sum over antennas of filter-channel convolutions, length 2L-1."""
    return sum(np.convolve(filters[m], cirs[m]) for m in range(filters.shape[0]))


def zf_gamma_cirs(filters, h, n, tap):
    """Ranking ratio for a candidate: target-tap power over residual power.

    Residual = own off-target taps plus leakage onto every other MU's
    channel, plus 1 (unit-normalized noise placeholder used only to rank).
    """
    own = _combined_response(filters, h[:, n, :])
    main = abs(own[tap - 1]) ** 2
    isi = float(np.sum(np.abs(own) ** 2)) - main
    leak = 0.0
    for n2 in range(h.shape[1]):
        if n2 != n:
            leak += float(np.sum(np.abs(_combined_response(filters, h[:, n2, :])) ** 2))
    return main / (isi + leak + 1.0)


def zf_candidate_cirs(h, n, tap, pinv=None, strict=True):
    """Zero-forcing solution for MU n targeting the given 1-based tap.

    With strict=True a candidate whose selector falls outside the row
    space (stacked-system residual above 1e-6) raises InfeasibleError;
    strict=False keeps the least-squares solution, which is the mode used
    when the system is too wide to invert exactly.
    """
    M, N, L = h.shape
    bands = 2 * L - 1
    if not 1 <= tap <= bands:
        raise ValueError(f"tap must lie in 1..{bands}, got {tap}")
    H = _stacked_system(h)
    P = pseudo_inverse(H) if pinv is None else pinv
    idx = n * bands + (tap - 1)
    w = P[:, idx].copy()
    if strict:
        r = H @ w
        r[idx] -= 1.0
        res = float(np.linalg.norm(r))
        if res > _ZF_RESIDUAL_TOL:
            raise InfeasibleError(
                "zf", f"tap {tap} unreachable for user {n} (residual {res:.2e})"
            )
    nw = float(np.linalg.norm(w))
    if nw == 0.0:
        raise InfeasibleError("zf", f"tap {tap} for user {n} has a zero solution")
    filters = _unflatten(w / nw, M, L)
    cand = ZfCandidate(filters=filters, tap=tap, c=1.0 / nw, gamma=0.0)
    return replace(cand, gamma=zf_gamma_cirs(filters, h, n, tap))


def zf_select_cirs(h, strict=True):
    """Best-tap zero-forcing filters for every user of a CIR group.

    Sweeps all 2L-1 candidate taps per user, keeps the largest ranking
    ratio, breaking ties toward the smallest tap. Returns (filters, taps)
    with filters (M, N, L) and 1-based taps (N,).
    """
    M, N, L = h.shape
    P = pseudo_inverse(_stacked_system(h))
    u = np.zeros((M, N, L), dtype=complex)
    alpha = np.zeros(N, dtype=int)
    for n in range(N):
        best = None
        for tap in range(1, 2 * L):
            try:
                cand = zf_candidate_cirs(h, n, tap, pinv=P, strict=strict)
            except InfeasibleError:
                continue
            if best is None or cand.gamma > best.gamma:
                best = cand
        if best is None:
            raise InfeasibleError("zf", f"no reachable tap for user {n}")
        u[:, n, :] = best.filters
        alpha[n] = best.tap
    return u, alpha


def zf_candidate(channels, n, alpha_bar):
    """ZF candidate for MU n of a channel set at 1-based tap alpha_bar."""
    return zf_candidate_cirs(channels.h0, n, alpha_bar)


def zf_gamma(candidate, channels, n):
    """Re-evaluate a candidate's ranking ratio against the macro channels."""
    return zf_gamma_cirs(candidate.filters, channels.h0, n, candidate.tap)


def zf_select(channels):
    """Selected macro filters and taps: (u (M0,N0,L), alpha (N0,) 1-based)."""
    return zf_select_cirs(channels.h0, strict=True)


def tr_beamformer_cirs(h):
    """Time-reversal filters for every user of a CIR group (M, N, L).

    g_ij is the conjugated, time-reversed CIR scaled so the stacked filter
    of each user has unit norm: sum_i ||g_ij||^2 = 1.
    """
    M, N, L = h.shape
    g = np.zeros_like(h)
    for j in range(N):
        s = float(np.sum(np.abs(h[:, j, :]) ** 2))
        if s == 0.0:
            raise ValueError(f"all-zero channel for user {j}: TR scale undefined")
        g[:, j, :] = np.conj(h[:, j, ::-1]) / np.sqrt(s)
    return g


def tr_beamformer(channels, j):
    """TR filters (M1, L) for FU j of a channel set."""
    return tr_beamformer_cirs(channels.h1)[:, j, :]


def design_beamformers(channels):
    """Full two-tier design: ZF on the macro links, TR on the femto links."""
    u, alpha = zf_select(channels)
    g = tr_beamformer_cirs(channels.h1)
    return BeamformerSet(u=u, alpha=alpha, g=g, beta=channels.taps)
