"""Trajectory ensembles: Wigner sampling, the stochastic and branching
Markov runs, and level-resolved expectation values with standard errors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from . import engine
from .dynamics import default_gate_radius
from .errors import HopsimError
from .potentials import DiabaticPotential
from .streams import trajectory_rng

__all__ = [
    "WignerGaussian",
    "EnsembleSeries",
    "ObservableEstimate",
    "sample_wigner",
    "run_ensemble",
    "run_branching",
    "estimate_observable",
]


@dataclass(frozen=True)
class WignerGaussian:
    """Phase-space density (pi*eps)^-d exp(-|(q,p)-(q0,p0)|^2/eps).

    Each coordinate is an independent normal with variance eps/2.
    """

    center_q: float
    center_p: float
    eps: float


def sample_wigner(wg: WignerGaussian, n: int, seed: int) -> np.ndarray:
    """Draw n phase-space points, one per trajectory substream.

    Returns an (n, 2) array of (q, p) rows.  Point i is a pure function of
    (seed, i), so any later parallel scheduling reproduces it bit for bit.
    """
    if n < 1:
        raise HopsimError("need at least one sample")
    sig = np.sqrt(wg.eps / 2.0)
    out = np.empty((n, 2))
    for i in range(n):
        rng = trajectory_rng(seed, i)
        out[i, 0] = wg.center_q + sig * rng.standard_normal()
        out[i, 1] = wg.center_p + sig * rng.standard_normal()
    return out


@dataclass
class EnsembleSeries:
    """Time-indexed level populations and phase-space moments.

    Populations are trajectory fractions (probabilistic mode) or weight
    sums (branching mode); stderr fields are sample standard deviations
    divided by the square root of the relevant sample count.  Conditional
    means are NaN at times where a level holds no trajectories.
    """

    times: np.ndarray
    pop_plus: np.ndarray
    pop_minus: np.ndarray
    stderr_pop: np.ndarray
    mean_q_plus: np.ndarray
    mean_p_plus: np.ndarray
    mean_q_minus: np.ndarray
    mean_p_minus: np.ndarray
    stderr_mean_q_plus: np.ndarray
    stderr_mean_p_plus: np.ndarray
    stderr_mean_q_minus: np.ndarray
    stderr_mean_p_minus: np.ndarray
    n_hops_hist: np.ndarray
    n_errors: int
    n_frustrated: int
    mode: str
    final_q: np.ndarray = field(repr=False, default=None)
    final_p: np.ndarray = field(repr=False, default=None)
    final_level: np.ndarray = field(repr=False, default=None)
    final_weight: np.ndarray = field(repr=False, default=None)
    events: Optional[list] = field(repr=False, default=None)


def _output_grid(t_fin: float, dt: float, n_out: int):
    times = np.linspace(0.0, t_fin, n_out)
    interval = times[1] - times[0]
    n_sub = max(1, int(np.ceil(interval / dt - 1e-9)))
    return times, interval / n_sub, n_sub


def _moments(count, s1, s2):
    """Mean and stderr-of-mean from sums; NaN where the count is empty."""
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(count > 0, s1 / np.maximum(count, 1), np.nan)
        var = np.where(
            count > 1,
            np.maximum(s2 - np.maximum(count, 1) * mean ** 2, 0.0)
            / np.maximum(count - 1, 1),
            np.nan,
        )
        stderr = np.sqrt(var / np.maximum(count, 1))
    return mean, stderr


def run_ensemble(pot: DiabaticPotential, config) -> EnsembleSeries:
    """Probabilistic surface-hopping ensemble (unit weights, accept-reject
    hops from per-trajectory uniform draws).

    config supplies eps, q0, p0, initial_level, N, dt, t_fin, seed,
    hop_rule, r_exponent, output_times, threads and log_hops.  Output is a
    deterministic function of (config, seed) independent of threads.
    """
    n = int(config.N)
    if n < 1:
        raise HopsimError("config.N must be >= 1")
    eps = config.eps
    gate = default_gate_radius(eps, getattr(config, "r_exponent", 0.125))
    n_out = int(getattr(config, "output_times", 200))
    times, dt, n_sub = _output_grid(config.t_fin, config.dt, n_out)
    collect_events = bool(getattr(config, "log_hops", False))
    results = engine.run_probabilistic(
        pot,
        n_traj=n,
        seed=int(config.seed),
        center_q=config.q0,
        center_p=config.p0,
        level0=int(config.initial_level),
        eps=eps,
        gate=gate,
        dt=dt,
        n_rec=n_out - 1,
        n_sub=n_sub,
        hop_rule=getattr(config, "hop_rule", "gated"),
        threads=int(getattr(config, "threads", 1)),
        collect_events=collect_events,
    )

    totals = np.zeros_like(results[0].partials)
    hist = np.zeros(1, dtype=np.int64)
    n_err = 0
    n_frus = 0
    finals_q, finals_p, finals_level = [], [], []
    events: Optional[List] = [] if collect_events else None
    for res in results:
        totals += res.partials
        counts = np.bincount(res.nhops)
        if counts.size > hist.size:
            hist = np.concatenate([hist, np.zeros(counts.size - hist.size,
                                                  dtype=np.int64)])
        hist[: counts.size] += counts
        n_err += res.n_errors
        n_frus += res.n_frustrated
        finals_q.append(res.final_q)
        finals_p.append(res.final_p)
        finals_level.append(res.final_level)
        if collect_events and res.events:
            events.extend(res.events)

    n_ok = n - n_err
    if n_ok < 1:
        raise HopsimError("all trajectories errored")
    count_p, count_m = totals[:, 0, 0], totals[:, 1, 0]
    pop_plus = count_p / n_ok
    pop_minus = count_m / n_ok
    stderr_pop = np.sqrt(pop_plus * pop_minus / n_ok)
    mq_p, se_q_p = _moments(count_p, totals[:, 0, 1], totals[:, 0, 3])
    mp_p, se_p_p = _moments(count_p, totals[:, 0, 2], totals[:, 0, 4])
    mq_m, se_q_m = _moments(count_m, totals[:, 1, 1], totals[:, 1, 3])
    mp_m, se_p_m = _moments(count_m, totals[:, 1, 2], totals[:, 1, 4])
    return EnsembleSeries(
        times=times,
        pop_plus=pop_plus, pop_minus=pop_minus, stderr_pop=stderr_pop,
        mean_q_plus=mq_p, mean_p_plus=mp_p,
        mean_q_minus=mq_m, mean_p_minus=mp_m,
        stderr_mean_q_plus=se_q_p, stderr_mean_p_plus=se_p_p,
        stderr_mean_q_minus=se_q_m, stderr_mean_p_minus=se_p_m,
        n_hops_hist=np.trim_zeros(hist, "b"),
        n_errors=n_err, n_frustrated=n_frus,
        mode="hopping",
        final_q=np.concatenate(finals_q),
        final_p=np.concatenate(finals_p),
        final_level=np.concatenate(finals_level),
        final_weight=np.ones(n),
        events=events,
    )


def run_branching(pot: DiabaticPotential, config) -> EnsembleSeries:
    """Deterministic weighted branching: every gated crossing splits a leaf
    into copies of weight (1-T) and T.  Populations are weight sums; the
    only randomness is the initial Wigner sample.
    """
    n = int(config.N)
    eps = config.eps
    gate = default_gate_radius(eps, getattr(config, "r_exponent", 0.125))
    n_out = int(getattr(config, "output_times", 200))
    times, dt, n_sub = _output_grid(config.t_fin, config.dt, n_out)
    agg, pop_sumsq, finals, n_frus = engine.run_branching_engine(
        pot,
        n_traj=n,
        seed=int(config.seed),
        center_q=config.q0,
        center_p=config.p0,
        level0=int(config.initial_level),
        eps=eps,
        gate=gate,
        dt=dt,
        n_rec=n_out - 1,
        n_sub=n_sub,
        max_branches=int(getattr(config, "max_branches", 64)),
    )
    q, p, level, weight, origin = finals
    wsum_p, wsum_m = agg[:, 0, 1], agg[:, 1, 1]
    pop_plus = wsum_p / n
    pop_minus = wsum_m / n
    # spread of the per-origin level weights across initial samples
    var = np.maximum(pop_sumsq / n - np.stack([pop_plus, pop_minus], 1) ** 2, 0.0)
    stderr_pop = np.sqrt(var.max(axis=1) / n)

    def wmoments(side):
        c, w, wq, wp, wq2, wp2 = (agg[:, side, k] for k in range(6))
        with np.errstate(invalid="ignore", divide="ignore"):
            mq = np.where(w > 0, wq / np.where(w > 0, w, 1), np.nan)
            mp = np.where(w > 0, wp / np.where(w > 0, w, 1), np.nan)
            vq = np.maximum(np.where(w > 0, wq2 / np.where(w > 0, w, 1), np.nan) - mq ** 2, 0.0)
            vp = np.maximum(np.where(w > 0, wp2 / np.where(w > 0, w, 1), np.nan) - mp ** 2, 0.0)
            seq = np.sqrt(vq / np.maximum(c, 1))
            sep = np.sqrt(vp / np.maximum(c, 1))
        return mq, mp, seq, sep

    mq_p, mp_p, se_q_p, se_p_p = wmoments(0)
    mq_m, mp_m, se_q_m, se_p_m = wmoments(1)
    hops = np.bincount(origin, minlength=n) - 1  # leaves per origin - 1 splits
    return EnsembleSeries(
        times=times,
        pop_plus=pop_plus, pop_minus=pop_minus, stderr_pop=stderr_pop,
        mean_q_plus=mq_p, mean_p_plus=mp_p,
        mean_q_minus=mq_m, mean_p_minus=mp_m,
        stderr_mean_q_plus=se_q_p, stderr_mean_p_plus=se_p_p,
        stderr_mean_q_minus=se_q_m, stderr_mean_p_minus=se_p_m,
        n_hops_hist=np.bincount(hops),
        n_errors=0, n_frustrated=n_frus,
        mode="branching",
        final_q=q, final_p=p, final_level=level, final_weight=weight,
    )


@dataclass
class ObservableEstimate:
    value: float
    stderr: float
    empty_level: Optional[int] = None


def estimate_observable(
    q: np.ndarray,
    p: np.ndarray,
    level: np.ndarray,
    a_plus: Optional[Callable] = None,
    a_minus: Optional[Callable] = None,
) -> ObservableEstimate:
    """Level-normalized estimator (1/N+) sum a+(q,p) + (1/N-) sum a-(q,p)
    over a probabilistic-mode snapshot, with a leave-one-out (jackknife)
    standard error.

    Passing None for a side means that observable component is identically
    zero.  If a side with a nonzero component holds no trajectories, the
    other term is returned and empty_level records the starved level.
    """
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    level = np.asarray(level)
    value = 0.0
    jack_sq = 0.0
    empty = None
    n_total = 0
    per_level = {}
    for lev, fun in ((+1, a_plus), (-1, a_minus)):
        if fun is None:
            continue
        mask = level == lev
        k = int(mask.sum())
        if k == 0:
            empty = lev
            continue
        vals = np.asarray(fun(q[mask], p[mask]), dtype=float)
        per_level[lev] = vals
        n_total += k
        value += vals.mean()
    for vals in per_level.values():
        k = vals.size
        if k > 1:
            jack_sq += ((vals - vals.mean()) ** 2).sum() / (k - 1) ** 2
    if n_total > 1 and all(v.size > 1 for v in per_level.values()):
        stderr = float(np.sqrt((n_total - 1) / n_total * jack_sq))
    else:
        stderr = float("nan")
    return ObservableEstimate(value=float(value), stderr=stderr, empty_level=empty)
