"""Semiclassical propagation through avoided eigenvalue crossings.

A Landau-Zener surface-hopping trajectory ensemble with momentum drift,
validated against a Strang/Fourier grid solution of the underlying
two-level Schrodinger system.
"""

from .dynamics import (
    HopEvent,
    TrajectoryState,
    attempt_hop,
    classical_energy,
    default_gate_radius,
    detect_minimum,
    drift_momentum,
    propagate_trajectory,
    transition_probability,
    verlet_step,
)
from .ensemble import (
    EnsembleSeries,
    ObservableEstimate,
    WignerGaussian,
    estimate_observable,
    run_branching,
    run_ensemble,
    sample_wigner,
)
from .errors import (
    BoundaryLeak,
    BranchOverflow,
    DegenerateGap,
    DomainTooSmall,
    FrustratedHop,
    HopsimError,
    ParseError,
    StepTooLarge,
    UnknownModel,
    ValidationError,
    ZeroMomentumAtCrossing,
)
from .lzmodel import LZProblem, converged_transition, cross_check_T, integrate_lz
from .potentials import (
    DiabaticPotential,
    EigenData,
    builtin,
    builtin_names,
    eigen,
    evaluate,
    force,
    grad_gap,
)
from .reference import (
    GridWavefunction,
    LevelDiagnostics,
    gaussian_packet,
    kinetic_full_step,
    potential_half_step,
    solve,
)
from . import cli  # noqa: E402  (CLI surface: hopsim.cli.run, parse_config)

__version__ = "0.1.0"
