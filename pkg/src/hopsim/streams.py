"""Counter-based per-trajectory random substreams.

Each trajectory draws from its own Philox stream, reached from the master
seed by an O(1) counter jump.  Results therefore depend only on
(seed, trajectory index), never on how trajectories are scheduled across
workers.

Stream layout per trajectory: first 2*dim standard normals (the phase-space
sample).  Gated runs then consume one uniform per hop attempt from a
pre-drawn block; unconstrained runs instead consume one uniform per time
step.
"""

from __future__ import annotations

import numpy as np
from numpy.random import Generator, Philox

__all__ = ["master_bitgen", "trajectory_rng", "MAX_HOP_DRAWS"]

# Uniforms pre-drawn per trajectory for gated hop attempts.  The detection
# latch makes more than a handful of attempts impossible for the built-in
# models; overflowing trajectories are flagged as errors.
MAX_HOP_DRAWS = 32


def master_bitgen(seed: int) -> Philox:
    return Philox(key=np.uint64(seed))


def trajectory_rng(seed: int, index: int) -> Generator:
    """Generator for trajectory `index`, jumped 2^128 * index steps ahead."""
    return Generator(master_bitgen(seed).jumped(index))
