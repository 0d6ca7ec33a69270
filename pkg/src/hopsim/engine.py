"""Ensemble propagation engines.

Two interchangeable backends integrate the trajectory Markov process:

* ``numba``  - compiled per-trajectory kernels (default when importable),
* ``numpy``  - a vectorized lockstep engine stepping all trajectories of a
  chunk simultaneously with boolean-mask event handling.

``HOPSIM_BACKEND`` selects the path (``numba`` or ``numpy``).  Results are
deterministic functions of (seed, trajectory index): every trajectory draws
from its own counter-based substream, chunk boundaries are fixed, and chunk
partials are reduced in index order, so the worker count never changes a
single output byte.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import BranchOverflow, HopsimError
from .potentials import DiabaticPotential
from .streams import MAX_HOP_DRAWS, trajectory_rng

__all__ = ["active_backend", "run_probabilistic", "run_branching_engine", "CHUNK"]

# Fixed chunk size: aggregation order depends on it, so it is a constant of
# the implementation rather than a tuning knob.
CHUNK = 4096

_TRANSVERSALITY_FLOOR = 1e-12


def numba_available() -> bool:
    try:
        from . import _numba_impl  # noqa: F401
        return True
    except Exception:
        return False


def active_backend() -> str:
    """Backend selected by HOPSIM_BACKEND, defaulting to numba."""
    choice = os.environ.get("HOPSIM_BACKEND", "").strip().lower()
    if choice in ("numpy", "python"):
        return "numpy"
    if choice == "numba":
        if not numba_available():
            raise HopsimError("HOPSIM_BACKEND=numba but numba is unavailable")
        return "numba"
    if choice:
        raise HopsimError(f"unknown HOPSIM_BACKEND={choice!r}")
    return "numba" if numba_available() else "numpy"


# ---------------------------------------------------------------------------
# Vectorized field evaluation (numpy path)
# ---------------------------------------------------------------------------

def _force_dgap_np(pot: DiabaticPotential, q, level):
    be = pot.beta(q)
    ga = pot.gamma(q)
    dbe = pot.d_beta(q)
    dga = pot.d_gamma(q)
    r = np.sqrt(be * be + ga * ga)
    dgap = 2.0 * (be * dbe + ga * dga) / r
    return -pot.d_alpha(q) - 0.5 * level * dgap, dgap


@dataclass
class ChunkResult:
    """Per-chunk aggregation shipped back to the dispatcher."""

    partials: np.ndarray        # (n_times, 2, 5): count, sum q, sum p, sum q^2, sum p^2
    final_q: np.ndarray
    final_p: np.ndarray
    final_level: np.ndarray
    final_weight: np.ndarray
    nhops: np.ndarray
    n_frustrated: int
    n_errors: int
    events: Optional[list] = None


def _aggregate_snapshots(snap_q, snap_p, snap_level, ok):
    """Level-resolved sums across a chunk, error trajectories masked out."""
    n_rec = snap_q.shape[1]
    out = np.zeros((n_rec, 2, 5))
    for side, lev in enumerate((+1, -1)):
        mask = (snap_level == lev) & ok[:, None]
        out[:, side, 0] = mask.sum(axis=0)
        qm = np.where(mask, snap_q, 0.0)
        pm = np.where(mask, snap_p, 0.0)
        out[:, side, 1] = qm.sum(axis=0)
        out[:, side, 2] = pm.sum(axis=0)
        out[:, side, 3] = (qm * qm).sum(axis=0)
        out[:, side, 4] = (pm * pm).sum(axis=0)
    return out


# ---------------------------------------------------------------------------
# Lockstep numpy kernels
# ---------------------------------------------------------------------------

def _numpy_chunk_gated(
    q, p, level, armed, attempt, nhops, nfrust, err, zetas,
    pot, eps, gate, dt, n_rec, n_sub,
    events=None, base_index=0, t0=0.0,
):
    n = q.shape[0]
    snap_q = np.empty((n, n_rec))
    snap_p = np.empty((n, n_rec))
    snap_level = np.empty((n, n_rec), dtype=np.int8)
    t = t0
    # fields at the step start carry over from the previous step end
    f0, dg0 = _force_dgap_np(pot, q, level)
    for j in range(n_rec):
        for _ in range(n_sub):
            h0 = p * dg0
            ph = p + 0.5 * dt * f0
            q1 = q + dt * ph
            f1, dg1 = _force_dgap_np(pot, q1, level)
            p1 = ph + 0.5 * dt * f1
            h1 = p1 * dg1
            live = err == 0
            armed |= (h0 < 0.0) & live
            cross = armed & (h0 < 0.0) & (h1 >= 0.0) & live
            if np.any(cross):
                idx = np.nonzero(cross)[0]
                armed[idx] = False
                tau = dt * h0[idx] / (h0[idx] - h1[idx])
                phh = p[idx] + 0.5 * tau * f0[idx]
                qs = q[idx] + tau * phh
                be = pot.beta(qs)
                ga = pot.gamma(qs)
                dbe = pot.d_beta(qs)
                dga = pot.d_gamma(qs)
                rs = np.sqrt(be * be + ga * ga)
                fs = -pot.d_alpha(qs) - 0.5 * level[idx] * 2.0 * (be * dbe + ga * dga) / rs
                ps = phh + 0.5 * tau * fs
                gs = 2.0 * rs
                at_gate = gs <= gate
                if np.any(at_gate):
                    det = np.hypot(ps * dbe, ps * dga)
                    bad = at_gate & (
                        (np.abs(ps) < _TRANSVERSALITY_FLOOR)
                        | (det < _TRANSVERSALITY_FLOOR)
                        | (attempt[idx] >= zetas.shape[1])
                    )
                    err[idx[bad]] = 1
                    ok = at_gate & ~bad
                    if np.any(ok):
                        gi = idx[ok]
                        z = zetas[gi, attempt[gi]]
                        attempt[gi] += 1
                        with np.errstate(divide="ignore"):
                            rate = np.exp(
                                -np.pi * gs[ok] ** 2 / (4.0 * eps * det[ok])
                            )
                        want = rate > z
                        frus = want & (level[gi] == -1) & (
                            1.0 - gs[ok] / ps[ok] ** 2 <= 0.0
                        )
                        nfrust[gi[frus]] += 1
                        acc = want & ~frus
                        if events is not None:
                            for m, gidx in enumerate(gi):
                                events.append((
                                    base_index + gidx, t + tau[ok][m],
                                    qs[ok][m], ps[ok][m], gs[ok][m],
                                    rate[m], bool(acc[m]), bool(frus[m]),
                                ))
                        if np.any(acc):
                            ai = gi[acc]
                            ta = tau[ok][acc]
                            qa = qs[ok][acc]
                            pa = ps[ok][acc]
                            pout = pa + level[ai] * gs[ok][acc] / pa
                            level[ai] = -level[ai]
                            nhops[ai] += 1
                            rem = dt - ta
                            f0n, _ = _force_dgap_np(pot, qa, level[ai])
                            phn = pout + 0.5 * rem * f0n
                            q1[ai] = qa + rem * phn
                            f1n, dg1n = _force_dgap_np(pot, q1[ai], level[ai])
                            p1[ai] = phn + 0.5 * rem * f1n
                            f1[ai] = f1n
                            dg1[ai] = dg1n
            dead = err != 0
            if np.any(dead):
                q1[dead] = q[dead]
                p1[dead] = p[dead]
            q, p = q1, p1
            f0, dg0 = f1, dg1
            t += dt
        snap_q[:, j] = q
        snap_p[:, j] = p
        snap_level[:, j] = level
    return q, p, snap_q, snap_p, snap_level


def _numpy_chunk_unconstrained(
    q, p, level, nhops, nfrust, err, rngs,
    pot, eps, dt, n_rec, n_sub,
):
    """Hop attempt at every step using the instantaneous rate.

    Where the determinant factor underflows the rate is taken in its
    limit 0 (no hop) instead of flagging the trajectory, since the rate is
    queried far from any crossing here.
    """
    n = q.shape[0]
    snap_q = np.empty((n, n_rec))
    snap_p = np.empty((n, n_rec))
    snap_level = np.empty((n, n_rec), dtype=np.int8)
    for j in range(n_rec):
        zeta = np.empty((n, n_sub))
        for i, rng in enumerate(rngs):
            zeta[i] = rng.random(n_sub)
        for k in range(n_sub):
            f0, _ = _force_dgap_np(pot, q, level)
            ph = p + 0.5 * dt * f0
            q1 = q + dt * ph
            f1, _ = _force_dgap_np(pot, q1, level)
            p1 = ph + 0.5 * dt * f1
            be = pot.beta(q1)
            ga = pot.gamma(q1)
            dbe = pot.d_beta(q1)
            dga = pot.d_gamma(q1)
            g = 2.0 * np.sqrt(be * be + ga * ga)
            det = np.hypot(p1 * dbe, p1 * dga)
            with np.errstate(divide="ignore"):
                rate = np.where(det > 0.0, np.exp(-np.pi * g * g / (4.0 * eps * det)), 0.0)
            want = rate > zeta[:, k]
            frus = want & (level == -1) & (1.0 - g / p1 ** 2 <= 0.0)
            nfrust[frus] += 1
            acc = want & ~frus
            if np.any(acc):
                p1[acc] = p1[acc] + level[acc] * g[acc] / p1[acc]
                level[acc] = -level[acc]
                nhops[acc] += 1
            q, p = q1, p1
        snap_q[:, j] = q
        snap_p[:, j] = p
        snap_level[:, j] = level
    return q, p, snap_q, snap_p, snap_level


# ---------------------------------------------------------------------------
# Dispatcher
# ---------------------------------------------------------------------------

def _chunk_ranges(n):
    return [(lo, min(lo + CHUNK, n)) for lo in range(0, n, CHUNK)]


def run_probabilistic(
    pot: DiabaticPotential,
    *,
    n_traj: int,
    seed: int,
    center_q: float,
    center_p: float,
    level0: int,
    eps: float,
    gate: float,
    dt: float,
    n_rec: int,
    n_sub: int,
    hop_rule: str = "gated",
    threads: int = 1,
    backend: Optional[str] = None,
    collect_events: bool = False,
):
    """Propagate the stochastic ensemble; returns ordered ChunkResults.

    The t=0 record occupies partials row 0; rows 1..n_rec are the output
    times.  collect_events implies the numpy path.
    """
    backend = active_backend() if backend is None else backend
    use_numba = (
        backend == "numba" and pot.kernel_code >= 0
        and hop_rule == "gated" and not collect_events
    )
    if use_numba:
        from . import _numba_impl
    sig = np.sqrt(eps / 2.0)
    params = np.asarray(pot.kernel_params, dtype=np.float64)

    def worker(rng_range):
        lo, hi = rng_range
        c = hi - lo
        rngs = [trajectory_rng(seed, i) for i in range(lo, hi)]
        q = np.empty(c)
        p = np.empty(c)
        zetas = np.empty((c, MAX_HOP_DRAWS)) if hop_rule == "gated" else None
        for i, rng in enumerate(rngs):
            q[i] = center_q + sig * rng.standard_normal()
            p[i] = center_p + sig * rng.standard_normal()
            if zetas is not None:
                zetas[i] = rng.random(MAX_HOP_DRAWS)
        level = np.full(c, level0, dtype=np.int64)
        armed = np.zeros(c, dtype=bool)
        attempt = np.zeros(c, dtype=np.int64)
        nhops = np.zeros(c, dtype=np.int64)
        nfrust = np.zeros(c, dtype=np.int64)
        err = np.zeros(c, dtype=np.uint8)
        q0 = q.copy()
        p0 = p.copy()
        events = [] if collect_events else None
        if use_numba:
            snap_q = np.empty((c, n_rec))
            snap_p = np.empty((c, n_rec))
            snap_level = np.empty((c, n_rec), dtype=np.int8)
            armed_u8 = armed.astype(np.uint8)
            _numba_impl.propagate_chunk_gated(
                q, p, level, armed_u8, attempt, nhops, nfrust, err,
                zetas, snap_q, snap_p, snap_level,
                pot.kernel_code, params, eps, gate, dt, n_rec, n_sub,
            )
        elif hop_rule == "gated":
            q, p, snap_q, snap_p, snap_level = _numpy_chunk_gated(
                q, p, level, armed, attempt, nhops, nfrust, err, zetas,
                pot, eps, gate, dt, n_rec, n_sub,
                events=events, base_index=lo,
            )
        elif hop_rule == "unconstrained":
            q, p, snap_q, snap_p, snap_level = _numpy_chunk_unconstrained(
                q, p, level, nhops, nfrust, err, rngs,
                pot, eps, dt, n_rec, n_sub,
            )
        else:
            raise HopsimError(f"unknown hop_rule {hop_rule!r}")
        ok = err == 0
        partials = np.zeros((n_rec + 1, 2, 5))
        lev0_side = 0 if level0 == 1 else 1
        okf = ok.astype(float)
        partials[0, lev0_side] = (
            okf.sum(), (q0 * okf).sum(), (p0 * okf).sum(),
            (q0 * q0 * okf).sum(), (p0 * p0 * okf).sum(),
        )
        partials[1:] = _aggregate_snapshots(snap_q, snap_p, snap_level, ok)
        return ChunkResult(
            partials=partials,
            final_q=q, final_p=p, final_level=level.astype(np.int8),
            final_weight=np.ones(c),
            nhops=nhops,
            n_frustrated=int(nfrust.sum()),
            n_errors=int((~ok).sum()),
            events=events,
        )

    ranges = _chunk_ranges(n_traj)
    if threads > 1 and len(ranges) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(worker, ranges))
    else:
        results = [worker(r) for r in ranges]
    return results


# ---------------------------------------------------------------------------
# Deterministic branching engine
# ---------------------------------------------------------------------------

def run_branching_engine(
    pot: DiabaticPotential,
    *,
    n_traj: int,
    seed: int,
    center_q: float,
    center_p: float,
    level0: int,
    eps: float,
    gate: float,
    dt: float,
    n_rec: int,
    n_sub: int,
    max_branches: int = 64,
):
    """Weighted deterministic branching: each gated crossing splits a leaf
    into (1-T) and T weighted copies.  No randomness beyond the initial
    phase-space sample.

    Returns (per-time weighted aggregates, per-time second moments of the
    per-origin level weights, final leaves, frustrated count); see
    ensemble.run_branching for the packaging.
    """
    sig = np.sqrt(eps / 2.0)
    q = np.empty(n_traj)
    p = np.empty(n_traj)
    for i in range(n_traj):
        rng = trajectory_rng(seed, i)
        q[i] = center_q + sig * rng.standard_normal()
        p[i] = center_p + sig * rng.standard_normal()
    level = np.full(n_traj, level0, dtype=np.int64)
    weight = np.ones(n_traj)
    origin = np.arange(n_traj)
    armed = np.zeros(n_traj, dtype=bool)
    n_frustrated = 0

    # aggregate rows: count,wsum,wq,wp,wq2,wp2 per level, plus the
    # per-origin second moment of level weight (for the sampling stderr)
    agg = np.zeros((n_rec + 1, 2, 6))
    pop_sumsq = np.zeros((n_rec + 1, 2))

    def record(j):
        for side, lev in enumerate((+1, -1)):
            m = level == lev
            w = weight[m]
            agg[j, side] = (
                m.sum(), w.sum(), (w * q[m]).sum(), (w * p[m]).sum(),
                (w * q[m] ** 2).sum(), (w * p[m] ** 2).sum(),
            )
            per_origin = np.bincount(origin[m], weights=w, minlength=n_traj)
            pop_sumsq[j, side] = (per_origin ** 2).sum()

    record(0)
    f0, dg0 = _force_dgap_np(pot, q, level)
    for j in range(1, n_rec + 1):
        for _ in range(n_sub):
            h0 = p * dg0
            ph = p + 0.5 * dt * f0
            q1 = q + dt * ph
            f1, dg1 = _force_dgap_np(pot, q1, level)
            p1 = ph + 0.5 * dt * f1
            h1 = p1 * dg1
            armed |= h0 < 0.0
            cross = armed & (h0 < 0.0) & (h1 >= 0.0)
            new_state = None
            if np.any(cross):
                idx = np.nonzero(cross)[0]
                armed[idx] = False
                tau = dt * h0[idx] / (h0[idx] - h1[idx])
                phh = p[idx] + 0.5 * tau * f0[idx]
                qs = q[idx] + tau * phh
                be = pot.beta(qs)
                ga = pot.gamma(qs)
                dbe = pot.d_beta(qs)
                dga = pot.d_gamma(qs)
                rs = np.sqrt(be * be + ga * ga)
                fs = -pot.d_alpha(qs) - 0.5 * level[idx] * 2.0 * (be * dbe + ga * dga) / rs
                ps = phh + 0.5 * tau * fs
                gs = 2.0 * rs
                det = np.hypot(ps * dbe, ps * dga)
                ok = (gs <= gate) & (np.abs(ps) >= _TRANSVERSALITY_FLOOR) & (
                    det >= _TRANSVERSALITY_FLOOR
                )
                frus = ok & (level[idx] == -1)
                if np.any(frus):
                    frus &= 1.0 - gs / ps ** 2 <= 0.0
                    n_frustrated += int(frus.sum())
                    ok &= ~frus
                if np.any(ok):
                    gi = idx[ok]
                    rate = np.exp(-np.pi * gs[ok] ** 2 / (4.0 * eps * det[ok]))
                    # spawn hopped copies at t*, advanced back onto the grid
                    qa = qs[ok]
                    pa = ps[ok]
                    ta = tau[ok]
                    pout = pa + level[gi] * gs[ok] / pa
                    lev_new = -level[gi]
                    rem = dt - ta
                    f0n, _ = _force_dgap_np(pot, qa, lev_new)
                    phn = pout + 0.5 * rem * f0n
                    qn = qa + rem * phn
                    f1n, dg1n = _force_dgap_np(pot, qn, lev_new)
                    pn = phn + 0.5 * rem * f1n
                    new_state = (
                        qn, pn, lev_new, weight[gi] * rate, origin[gi],
                        np.zeros(gi.size, dtype=bool), f1n, dg1n,
                    )
                    weight[gi] = weight[gi] * (1.0 - rate)
            q, p = q1, p1
            f0, dg0 = f1, dg1
            if new_state is not None:
                qn, pn, ln, wn, on, an, fn, dgn = new_state
                q = np.concatenate([q, qn])
                p = np.concatenate([p, pn])
                level = np.concatenate([level, ln])
                weight = np.concatenate([weight, wn])
                origin = np.concatenate([origin, on])
                armed = np.concatenate([armed, an])
                f0 = np.concatenate([f0, fn])
                dg0 = np.concatenate([dg0, dgn])
                counts = np.bincount(origin, minlength=n_traj)
                if counts.max() > max_branches:
                    raise BranchOverflow(
                        f"a sample exceeded max_branches={max_branches}"
                    )
        record(j)
    finals = (q, p, level.astype(np.int8), weight, origin)
    return agg, pop_sumsq, finals, n_frustrated
