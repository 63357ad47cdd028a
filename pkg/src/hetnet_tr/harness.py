"""Experiment harness: reference oracles, trial runners, CSV output.

The oracles deliberately avoid the solvers' linear algebra: the femto
check iterates the fixed point to convergence, the macro check evaluates
the per-user closed form. Both exist so the solvers are validated against
arithmetic they do not share.

Experiments are trial-parallel. Every trial derives its own generator
from (seed, trial id), so output bytes depend only on (spec, config) and
never on worker count or scheduling; HETNET_TR_THREADS sets the worker
count (default 1).
"""

import itertools
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .beamform import design_beamformers, tr_beamformer_cirs, zf_select_cirs
from .channel import draw_channel_set, place_nodes
from .errors import ConfigError, InfeasibleError, NumericalError
from .linops import toeplitz_conv_matrix
from .power import (
    _response,
    build_femto_lp,
    solve_centralized,
    solve_femto,
    solve_proposed,
)
from .robust import (
    assemble_bounds,
    proposed_upper,
    sample_true_channels,
    solve_robust,
    worst_case_oracle,
    worst_signal_lower,
    young_upper,
)

_DIVERGENCE_WINDOW = 1_000


@dataclass(frozen=True)
class KktCheck:
    """Per-user closed-form powers with infeasibility flags."""

    p: np.ndarray
    feasible: np.ndarray


def lp_fixed_point_oracle(F, v, tol=1e-12):
    """Iterate p <- F p + v from zero until relative convergence.

    The iterates are monotone nondecreasing for nonnegative F, v, so a
    growth check over a trailing window detects divergence (spectral
    radius >= 1) without computing eigenvalues.
    """
    F = np.asarray(F, dtype=float)
    v = np.asarray(v, dtype=float)
    if (F < 0).any() or (v < 0).any():
        raise ValueError("fixed-point oracle needs nonnegative coefficients")
    p = np.zeros_like(v)
    reference = None
    for k in range(1, 10_000_000):
        p_next = F @ p + v
        if np.linalg.norm(p_next - p) <= tol * max(np.linalg.norm(p_next),
                                                   1e-300):
            return p_next
        p = p_next
        if k % _DIVERGENCE_WINDOW == 0:
            level = float(np.linalg.norm(p))
            if reference is not None and level > 2.0 * reference:
                raise NumericalError(
                    f"fixed-point iteration diverging (norm {level:.3e} "
                    f"after {k} steps)")
            reference = level
    raise NumericalError("fixed-point iteration exhausted its budget")


def macro_kkt_oracle(delta, nabla, gamma, caps):
    """Closed-form macro powers: p_n = nabla/(1/gamma - delta), cap-checked.

    Entries whose SINR target is unreachable (gamma*delta >= 1) or whose
    required power exceeds the cap are flagged infeasible and carry the
    cap value instead.
    """
    delta = np.asarray(delta, dtype=float)
    nabla = np.asarray(nabla, dtype=float)
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), delta.shape)
    caps = np.broadcast_to(np.asarray(caps, dtype=float), delta.shape)
    unreachable = gamma * delta >= 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        demand = np.where(unreachable, np.inf,
                          nabla / (1.0 / gamma - delta))
    over = demand > caps * (1.0 + 1e-12)
    feasible = ~(unreachable | over)
    p = np.where(feasible, demand, np.where(np.isfinite(caps), caps, np.inf))
    return KktCheck(p=p, feasible=feasible)


# ---------------------------------------------------------------------------
# experiment definitions

# value columns per experiment, in CSV order
_VALUE_KEYS = {
    "power-compare": ("power_proposed_w", "power_centralized_w"),
    "mu-outage": ("outage_rate", "power_total_w"),
    "tr-vs-zf": ("sinr_tr_db", "sinr_zf_db"),
    "bound-tightness": ("young_w", "proposed_w", "oracle_max_w",
                        "floor_w", "oracle_min_w", "gap_db"),
    "fu-outage": ("outage_nonrobust", "outage_proposed", "outage_young",
                  "power_nonrobust_w", "power_proposed_w", "power_young_w",
                  "feas_nonrobust", "feas_proposed", "feas_young"),
    "robust-power": ("power_nonrobust_w", "power_proposed_w",
                     "power_young_w", "feas_nonrobust", "feas_proposed",
                     "feas_young"),
}

_SWEEP_ORDER = {
    "power-compare": ("gamma_m_db", "gamma_f_db"),
    "mu-outage": ("gamma_m_db",),
    "tr-vs-zf": ("p_dbm",),
    "bound-tightness": ("psi",),
    "fu-outage": ("psi", "gamma_f_db"),
    "robust-power": ("psi", "gamma_f_db"),
}

_DEFAULT_SWEEPS = {
    "power-compare": {"gamma_m_db": (-3.0, -1.0, 1.0),
                      "gamma_f_db": tuple(float(v) for v in range(-4, 5))},
    "mu-outage": {"gamma_m_db": tuple(float(v) for v in range(-4, 5))},
    "tr-vs-zf": {"p_dbm": tuple(float(v) for v in range(10, 41, 2))},
    "bound-tightness": {"psi": (0.05, 0.1)},
    "fu-outage": {"psi": (0.04,),
                  "gamma_f_db": (-6.0, -4.0, -2.0, 0.0, 2.0)},
    "robust-power": {"psi": (0.0, 0.01, 0.02, 0.04, 0.08)},
}

_SWEEP_RANGES = {
    "gamma_m_db": (-30.0, 30.0),
    "gamma_f_db": (-30.0, 30.0),
    "p_dbm": (-30.0, 60.0),
    "psi": (0.0, 0.999),
}

EXPERIMENTS = tuple(_VALUE_KEYS)


@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment request: what to run, at what scale, where to write.

    sweep maps parameter names to value tuples; omitted parameters fall
    back to the experiment's default grid, and parameters outside both the
    sweep and the defaults come from the scenario config.
    """

    name: str
    trials: int
    sweep: dict
    seed: int
    output_path: str

    def validate(self):
        if self.name not in _VALUE_KEYS:
            raise ConfigError(f"unknown experiment {self.name!r}; "
                              f"expected one of {', '.join(EXPERIMENTS)}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not self.output_path:
            raise ConfigError("output path must be non-empty")
        allowed = set(_SWEEP_ORDER[self.name])
        for key, values in self.sweep.items():
            if key not in allowed:
                raise ConfigError(
                    f"experiment {self.name!r} does not sweep {key!r}; "
                    f"allowed: {', '.join(sorted(allowed))}")
            if not values:
                raise ConfigError(f"sweep {key!r} needs at least one value")
            lo, hi = _SWEEP_RANGES[key]
            for v in values:
                if not lo <= float(v) <= hi:
                    raise ConfigError(
                        f"sweep {key}={v} outside [{lo}, {hi}]")
        return self

    def sweep_points(self):
        """Ordered grid of sweep-point dicts (cartesian product)."""
        merged = dict(_DEFAULT_SWEEPS[self.name])
        for key, values in self.sweep.items():
            merged[key] = tuple(float(v) for v in values)
        keys = [k for k in _SWEEP_ORDER[self.name] if k in merged]
        return [dict(zip(keys, combo))
                for combo in itertools.product(*(merged[k] for k in keys))]


@dataclass(frozen=True)
class TrialRecord:
    """Outcome of one (trial, sweep point): ordered key/value pairs."""

    trial: int
    sweep: tuple
    values: tuple
    feasible: bool


def _db(x):
    return 10.0 ** (float(x) / 10.0)


def _dbm(x):
    return 10.0 ** ((float(x) - 30.0) / 10.0)


def _draw_scenario(cfg, seed, trial):
    """Placement and channels for one trial, plus the continuing generator."""
    rng = np.random.default_rng([seed, trial])
    geometry = place_nodes(cfg, rng)
    channels = draw_channel_set(cfg, geometry, rng)
    return channels, rng


def _record(trial, point, keys, values, feasible):
    return TrialRecord(trial=trial, sweep=tuple(point.items()),
                       values=tuple(zip(keys, values)), feasible=feasible)


def _power_compare_trial(trial, cfg, points, extra, seed):
    channels, _ = _draw_scenario(cfg, seed, trial)
    beams = design_beamformers(channels)
    keys = _VALUE_KEYS["power-compare"]
    rows = []
    for pt in points:
        gm = _db(pt.get("gamma_m_db", cfg.gamma_m_db))
        gf = _db(pt.get("gamma_f_db", cfg.gamma_f_db))
        try:
            prop = solve_proposed(channels, gm, gf, cfg.p_tol,
                                  cfg.noise_power)
            cent = solve_centralized(channels, beams, gm, gf,
                                     cfg.noise_power)
            rows.append(_record(trial, pt, keys,
                                (float(prop.total_power),
                                 float(cent.total_power)), True))
        except InfeasibleError:
            rows.append(_record(trial, pt, keys,
                                (float("nan"), float("nan")), False))
    return rows


def _mu_outage_trial(trial, cfg, points, extra, seed):
    channels, _ = _draw_scenario(cfg, seed, trial)
    keys = _VALUE_KEYS["mu-outage"]
    rows = []
    for pt in points:
        gm = _db(pt.get("gamma_m_db", cfg.gamma_m_db))
        try:
            prop = solve_proposed(channels, gm, cfg.gamma_f, cfg.p_tol,
                                  cfg.noise_power)
            # slack matches the tier iteration's stopping tolerance
            outage = float(np.mean(prop.sinr_mu < gm * (1.0 - 1e-6)))
            rows.append(_record(trial, pt, keys,
                                (outage, float(prop.total_power)), True))
        except InfeasibleError:
            rows.append(_record(trial, pt, keys, (1.0, float("nan")), False))
    return rows


def _focused_sinrs(filters, cirs, taps_sel, powers, floor, noise):
    """Per-user SINR at chosen taps against a fixed cross-tier floor."""
    n = cirs.shape[1]
    out = np.empty(n)
    for j in range(n):
        r = _response(filters[:, j, :], cirs[:, j, :])
        main = abs(r[int(taps_sel[j]) - 1]) ** 2
        sig = powers[j] * main
        isi = powers[j] * (float(np.sum(np.abs(r) ** 2)) - main)
        co = 0.0
        for j2 in range(n):
            if j2 != j:
                co += powers[j2] * float(np.sum(np.abs(
                    _response(filters[:, j2, :], cirs[:, j, :])) ** 2))
        out[j] = sig / (isi + co + floor + noise)
    return out


def _tr_vs_zf_trial(trial, cfg, points, extra, seed):
    channels, _ = _draw_scenario(cfg, seed, trial)
    h1 = channels.h1
    n1 = h1.shape[1]
    g_tr = tr_beamformer_cirs(h1)
    taps_tr = [cfg.taps] * n1
    u_zf, taps_zf = zf_select_cirs(h1, strict=False)
    keys = _VALUE_KEYS["tr-vs-zf"]
    rows = []
    for pt in points:
        powers = np.full(n1, _dbm(pt["p_dbm"]))
        s_tr = _focused_sinrs(g_tr, h1, taps_tr, powers, cfg.p_tol,
                              cfg.noise_power)
        s_zf = _focused_sinrs(u_zf, h1, taps_zf, powers, cfg.p_tol,
                              cfg.noise_power)
        # dB per trial so the summary mean is tail-robust (geometric)
        rows.append(_record(trial, pt, keys,
                            (float(10.0 * np.log10(np.mean(s_tr))),
                             float(10.0 * np.log10(np.mean(s_zf)))),
                            True))
    return rows


def _bound_tightness_trial(trial, cfg, points, extra, seed):
    channels, rng = _draw_scenario(cfg, seed, trial)
    g = tr_beamformer_cirs(channels.h1)[:, 0, :]
    h = channels.h1[:, 0, :]
    keys = _VALUE_KEYS["bound-tightness"]
    rows = []
    for pt in points:
        psi = float(pt.get("psi", cfg.psi))
        young = young_upper(g, h, psi)
        prop = proposed_upper(g, h, psi)
        floor = worst_signal_lower(g, h, psi)
        wc = worst_case_oracle(g, h, psi, rng=rng)
        gap_db = float(10.0 * np.log10(young / prop))
        rows.append(_record(trial, pt, keys,
                            (young, prop, wc.max_energy, floor,
                             wc.min_central, gap_db), True))
    return rows


def _robust_designs(channels, g, psi, gamma_f, cfg):
    """Non-robust and both robust allocations; None marks infeasibility."""
    designs = {}
    try:
        designs["nonrobust"] = solve_femto(
            build_femto_lp(channels, g, gamma_f, cfg.p_tol, cfg.noise_power))
    except InfeasibleError:
        designs["nonrobust"] = None
    for variant in ("proposed", "young"):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                bounds = assemble_bounds(channels, g, psi, cfg.p_tol,
                                         cfg.noise_power, variant=variant)
            designs[variant] = solve_robust(bounds, gamma_f, cfg.p_tol,
                                            cfg.noise_power)
        except InfeasibleError:
            designs[variant] = None
    return designs


def _design_row(designs):
    powers = [float(np.sum(designs[k])) if designs[k] is not None
              else float("nan")
              for k in ("nonrobust", "proposed", "young")]
    flags = [1.0 if designs[k] is not None else 0.0
             for k in ("nonrobust", "proposed", "young")]
    return powers, flags


def _fu_outage_trial(trial, cfg, points, extra, seed):
    channels, rng = _draw_scenario(cfg, seed, trial)
    g = tr_beamformer_cirs(channels.h1)
    n1 = channels.h1.shape[1]
    taps = channels.taps
    draws = int(extra["error_draws"])
    mats = np.stack([
        np.stack([toeplitz_conv_matrix(g[i, j, :])
                  for i in range(g.shape[0])])
        for j in range(n1)])
    keys = _VALUE_KEYS["fu-outage"]
    floor = cfg.p_tol + cfg.noise_power
    per_psi = {}
    rows = []
    for pt in points:
        psi = float(pt.get("psi", cfg.psi))
        gf = _db(pt.get("gamma_f_db", cfg.gamma_f_db))
        if psi not in per_psi:
            # response statistics of the filters over each victim's true draws
            stats = []
            for j in range(n1):
                truths = sample_true_channels(channels.h1[:, j, :], psi,
                                              rng, count=draws)
                resp = np.einsum("jikl,pil->pjk", mats, truths)
                tot = np.sum(np.abs(resp) ** 2, axis=2)
                main = np.abs(resp[:, j, taps - 1]) ** 2
                stats.append((tot, main))
            per_psi[psi] = stats
        stats = per_psi[psi]
        designs = _robust_designs(channels, g, psi, gf, cfg)
        outages = []
        for label in ("nonrobust", "proposed", "young"):
            p1 = designs[label]
            if p1 is None:
                outages.append(float("nan"))
                continue
            miss = 0
            for j in range(n1):
                tot, main = stats[j]
                sig = p1[j] * main
                isi = p1[j] * (tot[:, j] - main)
                co = tot @ p1 - p1[j] * tot[:, j]
                achieved = sig / (isi + co + floor)
                miss += int(np.count_nonzero(achieved < gf * (1.0 - 1e-6)))
            outages.append(miss / float(draws * n1))
        powers, flags = _design_row(designs)
        feasible = all(designs[k] is not None
                       for k in ("nonrobust", "proposed", "young"))
        rows.append(_record(trial, pt, keys,
                            (*outages, *powers, *flags), feasible))
    return rows


def _robust_power_trial(trial, cfg, points, extra, seed):
    channels, _ = _draw_scenario(cfg, seed, trial)
    g = tr_beamformer_cirs(channels.h1)
    keys = _VALUE_KEYS["robust-power"]
    rows = []
    for pt in points:
        psi = float(pt.get("psi", cfg.psi))
        gf = _db(pt.get("gamma_f_db", cfg.gamma_f_db))
        designs = _robust_designs(channels, g, psi, gf, cfg)
        powers, flags = _design_row(designs)
        feasible = all(designs[k] is not None
                       for k in ("nonrobust", "proposed", "young"))
        rows.append(_record(trial, pt, keys, (*powers, *flags), feasible))
    return rows


_TRIAL_FUNCS = {
    "power-compare": _power_compare_trial,
    "mu-outage": _mu_outage_trial,
    "tr-vs-zf": _tr_vs_zf_trial,
    "bound-tightness": _bound_tightness_trial,
    "fu-outage": _fu_outage_trial,
    "robust-power": _robust_power_trial,
}


# ---------------------------------------------------------------------------
# runner and CSV emission

def _trial_worker(payload):
    name, trial, cfg, points, extra, seed = payload
    return _TRIAL_FUNCS[name](trial, cfg, points, extra, seed)


def _worker_count():
    raw = os.environ.get("HETNET_TR_THREADS")
    if raw is None or raw == "":
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(
            f"HETNET_TR_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("HETNET_TR_THREADS must be >= 1")
    return n


def _format_cell(x):
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _emit_csv(path, name, points, rows):
    """Trial rows then per-point summary rows; floats via repr for exactness.

    Summary rows average each value column over the point's feasible
    trials (nan when none) and carry the feasible fraction in the
    feasible column; their trial column is -1.
    """
    sweep_keys = list(points[0].keys()) if points else []
    value_keys = list(_VALUE_KEYS[name])
    lines = [",".join(["row", "trial", *sweep_keys, *value_keys,
                       "feasible"])]
    groups = {}
    for r in rows:
        cells = ["trial", str(r.trial)]
        sweep = dict(r.sweep)
        vals = dict(r.values)
        cells += [_format_cell(float(sweep[k])) for k in sweep_keys]
        cells += [_format_cell(float(vals[k])) for k in value_keys]
        cells.append("1" if r.feasible else "0")
        lines.append(",".join(cells))
        groups.setdefault(r.sweep, []).append(r)
    for pt in points:
        group = groups.get(tuple(pt.items()), [])
        feas = [r for r in group if r.feasible]
        cells = ["summary", "-1"]
        cells += [_format_cell(float(pt[k])) for k in sweep_keys]
        for k in value_keys:
            if feas:
                mean = float(np.mean([dict(r.values)[k] for r in feas]))
            else:
                mean = float("nan")
            cells.append(_format_cell(mean))
        rate = len(feas) / len(group) if group else float("nan")
        cells.append(_format_cell(float(rate)))
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def run_experiment(spec, config, error_draws=10_000):
    """Run all trials of an experiment and write its CSV.

    Deterministic given (spec, config): trial t draws its generator from
    (spec.seed, t) regardless of how trials are spread over workers.
    Returns the trial records; summary rows exist only in the file.
    """
    spec.validate()
    config.validate()
    points = spec.sweep_points()
    extra = {"error_draws": int(error_draws)}
    payloads = [(spec.name, t, config, points, extra, spec.seed)
                for t in range(spec.trials)]
    workers = min(_worker_count(), spec.trials)
    if workers == 1:
        batches = [_trial_worker(p) for p in payloads]
    else:
        chunk = max(1, spec.trials // (4 * workers))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            batches = list(pool.map(_trial_worker, payloads,
                                    chunksize=chunk))
    rows = [r for batch in batches for r in batch]
    _emit_csv(spec.output_path, spec.name, points, rows)
    return rows
