"""Single-trajectory propagation on an eigenvalue surface with stochastic
Landau-Zener hops at gated gap minima.

This module is the plain-python reference implementation of the trajectory
Markov process; the ensemble engine reproduces the same arithmetic in
vectorized and compiled form.  Positions and momenta may be floats (1-D) or
length-d arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .errors import FrustratedHop, ZeroMomentumAtCrossing
from .potentials import DiabaticPotential, force, grad_gap
from .streams import trajectory_rng

__all__ = [
    "TrajectoryState",
    "HopEvent",
    "TrajectorySeries",
    "verlet_step",
    "classical_energy",
    "detect_minimum",
    "transition_probability",
    "drift_momentum",
    "attempt_hop",
    "propagate_trajectory",
    "default_gate_radius",
]

_TRANSVERSALITY_FLOOR = 1e-12


@dataclass
class HopEvent:
    """Record of one hop attempt at a detected gap minimum."""

    t_star: float
    q_star: float
    p_star: float
    gap_star: float
    rate: float
    accepted: bool
    p_out: Optional[float] = None
    frustrated: bool = False


@dataclass
class TrajectoryState:
    """Phase-space point with surface label, statistical weight and the
    bookkeeping needed by the minimum detector (slope of the gap along the
    trajectory and the hop-eligibility latch)."""

    q: float
    p: float
    level: int
    weight: float = 1.0
    t: float = 0.0
    slope_prev: float = 0.0
    armed: bool = False
    hops: List[HopEvent] = field(default_factory=list)

    def copy(self):
        return replace(self, hops=list(self.hops))


@dataclass
class TrajectorySeries:
    times: np.ndarray
    q: np.ndarray
    p: np.ndarray
    level: np.ndarray
    energy: np.ndarray


def _gap_slope(pot, q, p):
    return float(np.dot(p, grad_gap(pot, q)))


def classical_energy(state: TrajectoryState, pot: DiabaticPotential) -> float:
    """|p|^2/2 + lambda_level(q)."""
    return 0.5 * float(np.dot(state.p, state.p)) + float(
        pot.lam(state.q, state.level)
    )


def verlet_step(state: TrajectoryState, pot: DiabaticPotential, dt: float) -> TrajectoryState:
    """One velocity-Verlet step on the surface Hamiltonian of state.level.

    Symplectic and time reversible; level and weight are untouched.
    """
    out = state.copy()
    f0 = force(pot, state.q, state.level)
    p_half = state.p + 0.5 * dt * f0
    out.q = state.q + dt * p_half
    out.p = p_half + 0.5 * dt * force(pot, out.q, state.level)
    out.t = state.t + dt
    out.slope_prev = _gap_slope(pot, out.q, out.p)
    return out


def default_gate_radius(eps: float, r_exponent: float = 0.125) -> float:
    """Hop gate R*sqrt(eps) with R = eps**(-r_exponent)."""
    return eps ** (0.5 - r_exponent)


def detect_minimum(
    state_before: TrajectoryState,
    state_after: TrajectoryState,
    pot: DiabaticPotential,
    eps: float,
    R: Optional[float] = None,
):
    """Detect a gated local gap minimum crossed between two Verlet states.

    Fires when the gap slope h = p . grad g changes sign from negative to
    positive across the step while the latch is armed, and the refined
    minimum satisfies g(q*) <= R*sqrt(eps).  The crossing time t* comes from
    one secant interpolation on h and (q*, p*) from a partial Verlet step.

    Side effect: state_after.armed is updated (armed while approaching a
    minimum, cleared by any detected sign change, re-armed once the slope
    goes negative again).  Returns (t*, q*, p*) or None.
    """
    gate = default_gate_radius(eps) if R is None else R * np.sqrt(eps)
    h0 = _gap_slope(pot, state_before.q, state_before.p)
    h1 = state_after.slope_prev
    armed = state_before.armed or (h0 < 0.0)
    fired = armed and h0 < 0.0 <= h1
    if fired:
        armed = False
    state_after.armed = armed
    if not fired:
        return None
    theta = h0 / (h0 - h1)
    tau = theta * (state_after.t - state_before.t)
    f0 = force(pot, state_before.q, state_before.level)
    p_half = state_before.p + 0.5 * tau * f0
    q_star = state_before.q + tau * p_half
    p_star = p_half + 0.5 * tau * force(pot, q_star, state_before.level)
    if float(pot.gap(q_star)) > gate:
        return None
    return (state_before.t + tau, q_star, p_star)


def transition_probability(pot: DiabaticPotential, q_star, p_star, eps: float) -> float:
    """Landau-Zener rate exp(-pi g^2 / (4 eps |det(p . grad V0)|^(1/2))).

    For the trace-free part V0 the determinant factor reduces to
    sqrt((p.grad beta)^2 + (p.grad gamma)^2), in 1-D |p| sqrt(b'^2+g'^2).
    Raises ZeroMomentumAtCrossing when momentum or that factor is
    numerically zero (transversality violated).
    """
    p_norm = float(np.sqrt(np.dot(p_star, p_star)))
    if p_norm < _TRANSVERSALITY_FLOOR:
        raise ZeroMomentumAtCrossing(f"|p*|={p_norm:.3e} at q*={q_star!r}")
    pdb = float(np.dot(p_star, pot.d_beta(q_star)))
    pdg = float(np.dot(p_star, pot.d_gamma(q_star)))
    det_factor = np.hypot(pdb, pdg)
    if det_factor < _TRANSVERSALITY_FLOOR:
        raise ZeroMomentumAtCrossing(
            f"|det(p.grad V0)|^(1/2)={det_factor:.3e} at q*={q_star!r}"
        )
    g = float(pot.gap(q_star))
    return float(np.exp(-np.pi * g * g / (4.0 * eps * det_factor)))


def drift_momentum(q_star, p_star, level_in: int, pot: DiabaticPotential):
    """Post-hop momentum p* + j*omega*, omega* = g(q*) p*/|p*|^2, j = level_in.

    The drift preserves the classical energy across the level change up to
    the exact defect g^2/(2|p*|^2).  Raises FrustratedHop for an upward hop
    whose drifted kinetic energy would be nonpositive (1 - g/|p*|^2 <= 0).
    """
    p2 = float(np.dot(p_star, p_star))
    if p2 < _TRANSVERSALITY_FLOOR ** 2:
        raise ZeroMomentumAtCrossing(f"|p*|^2={p2:.3e} at q*={q_star!r}")
    g = float(pot.gap(q_star))
    if level_in == -1 and 1.0 - g / p2 <= 0.0:
        raise FrustratedHop(
            f"upward hop with g/|p*|^2 = {g / p2:.3e} >= 1 at q*={q_star!r}"
        )
    return p_star + level_in * g * p_star / p2


def attempt_hop(
    state: TrajectoryState,
    minimum,
    pot: DiabaticPotential,
    eps: float,
    zeta: float,
) -> TrajectoryState:
    """Accept-reject hop at a detected minimum using the uniform draw zeta.

    On acceptance the state jumps to (q*, p* + j omega*, -j) at time t*;
    otherwise it is returned unchanged.  A frustrated upward hop is logged
    and rejected.  Every outcome appends a HopEvent.
    """
    t_star, q_star, p_star = minimum
    rate = transition_probability(pot, q_star, p_star, eps)
    event = HopEvent(
        t_star=t_star, q_star=q_star, p_star=p_star,
        gap_star=float(pot.gap(q_star)), rate=rate, accepted=False,
    )
    out = state.copy()
    if rate > zeta:
        try:
            p_out = drift_momentum(q_star, p_star, state.level, pot)
        except FrustratedHop:
            event.frustrated = True
            out.hops.append(event)
            return out
        event.accepted = True
        event.p_out = p_out
        out.q = q_star
        out.p = p_out
        out.level = -state.level
        out.t = t_star
        out.slope_prev = _gap_slope(pot, q_star, p_out)
        out.armed = False
    out.hops.append(event)
    return out


def propagate_trajectory(
    state0: TrajectoryState,
    pot: DiabaticPotential,
    config,
    rng=None,
):
    """Propagate one trajectory from t=0 to config.t_fin.

    config must provide eps, dt, t_fin, r_exponent, hop_rule ("gated",
    "unconstrained" or "off") and output_times.  Hop decisions draw from
    rng (default: the index-0 substream of config.seed), so the run is a
    pure function of (state0, pot, config, stream).

    Returns (final TrajectoryState, list of HopEvent, TrajectorySeries).
    """
    eps = config.eps
    hop_rule = getattr(config, "hop_rule", "gated")
    gate = default_gate_radius(eps, getattr(config, "r_exponent", 0.125))
    R = gate / np.sqrt(eps)
    n_out = max(2, int(getattr(config, "output_times", 200)))
    times = np.linspace(0.0, config.t_fin, n_out)
    interval = times[1] - times[0]
    n_sub = max(1, int(np.ceil(interval / config.dt - 1e-9)))
    dt = interval / n_sub
    if rng is None:
        rng = trajectory_rng(getattr(config, "seed", 0), 0)

    state = state0.copy()
    state.slope_prev = _gap_slope(pot, state.q, state.p)
    rec_q = [state.q]
    rec_p = [state.p]
    rec_level = [state.level]
    rec_E = [classical_energy(state, pot)]
    for _ in range(n_out - 1):
        for _ in range(n_sub):
            after = verlet_step(state, pot, dt)
            if hop_rule == "gated":
                minimum = detect_minimum(state, after, pot, eps, R=R)
                if minimum is not None:
                    hopped = attempt_hop(after, minimum, pot, eps, rng.random())
                    if hopped.level != after.level:
                        # Rejoin the step grid on the new surface.
                        hopped = verlet_step(hopped, pot, after.t - hopped.t)
                    after = hopped
            elif hop_rule == "unconstrained":
                rate = transition_probability(pot, after.q, after.p, eps)
                if rate > rng.random():
                    try:
                        p_out = drift_momentum(after.q, after.p, after.level, pot)
                        after.hops.append(HopEvent(
                            t_star=after.t, q_star=after.q, p_star=after.p,
                            gap_star=float(pot.gap(after.q)), rate=rate,
                            accepted=True, p_out=p_out,
                        ))
                        after.p = p_out
                        after.level = -after.level
                        after.slope_prev = _gap_slope(pot, after.q, after.p)
                    except FrustratedHop:
                        after.hops.append(HopEvent(
                            t_star=after.t, q_star=after.q, p_star=after.p,
                            gap_star=float(pot.gap(after.q)), rate=rate,
                            accepted=False, frustrated=True,
                        ))
            state = after
        rec_q.append(state.q)
        rec_p.append(state.p)
        rec_level.append(state.level)
        rec_E.append(classical_energy(state, pot))

    series = TrajectorySeries(
        times=times,
        q=np.array(rec_q),
        p=np.array(rec_p),
        level=np.array(rec_level),
        energy=np.array(rec_E),
    )
    return state, list(state.hops), series
