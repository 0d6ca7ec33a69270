"""Two-level diabatic potential matrices and the built-in crossing models.

A potential is the real symmetric matrix field

    V(q) = alpha(q)*Id + [[beta(q), gamma(q)], [gamma(q), -beta(q)]]

with eigenvalues lambda_pm = alpha +- r, r = sqrt(beta^2 + gamma^2), and
gap g = 2r.  Four named models are registered (simple, dual, extended,
arctangent), each carrying its standard simulation defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DegenerateGap, UnknownModel

__all__ = [
    "DiabaticPotential",
    "EigenData",
    "ModelDefaults",
    "builtin",
    "builtin_names",
    "evaluate",
    "eigen",
    "grad_gap",
    "force",
]

# Integer codes used by the compiled trajectory kernels.  The params vector
# layout per code is fixed here and mirrored in _numba_impl.eval_fields.
CODE_SIMPLE = 0
CODE_DUAL = 1
CODE_EXTENDED = 2
CODE_ARCTAN = 3


def _fd_gradient(f: Callable, rel_step: float = 1e-6) -> Callable:
    """Central-difference fallback gradient with step rel_step*max(1,|q|)."""

    def grad(q):
        q = np.asarray(q, dtype=float)
        h = rel_step * np.maximum(1.0, np.abs(q))
        return (f(q + h) - f(q - h)) / (2.0 * h)

    return grad


@dataclass(frozen=True)
class ModelDefaults:
    """Standard run parameters attached to a built-in model."""

    eps: float
    q0: float
    p0: float
    initial_level: int
    t_fin: float
    dt: float
    grid_a: float
    grid_b: float
    grid_n: int


@dataclass(frozen=True)
class DiabaticPotential:
    """Scalar fields defining V(q) together with their spatial gradients.

    All field callables accept scalars or numpy arrays and evaluate
    elementwise.  Gradients may be passed as None, in which case a
    central-difference fallback is attached.  Instances are immutable and
    safe to share between concurrent workers.
    """

    alpha: Callable
    beta: Callable
    gamma: Callable
    d_alpha: Optional[Callable] = None
    d_beta: Optional[Callable] = None
    d_gamma: Optional[Callable] = None
    dim: int = 1
    name: str = "custom"
    delta0: Optional[float] = None
    defaults: Optional[ModelDefaults] = None
    # Compiled-kernel dispatch: code < 0 means "no compiled form, use the
    # vectorized python fields".
    kernel_code: int = -1
    kernel_params: tuple = ()

    def __post_init__(self):
        if self.d_alpha is None:
            object.__setattr__(self, "d_alpha", _fd_gradient(self.alpha))
        if self.d_beta is None:
            object.__setattr__(self, "d_beta", _fd_gradient(self.beta))
        if self.d_gamma is None:
            object.__setattr__(self, "d_gamma", _fd_gradient(self.gamma))

    # Convenience scalar fields -------------------------------------------

    def r(self, q):
        """Half-gap sqrt(beta^2 + gamma^2)."""
        return np.sqrt(self.beta(q) ** 2 + self.gamma(q) ** 2)

    def gap(self, q):
        """Eigenvalue gap g(q) = 2 sqrt(beta^2 + gamma^2)."""
        return 2.0 * self.r(q)

    def lam(self, q, level):
        """Eigenvalue surface lambda_level(q) = alpha + level*r."""
        return self.alpha(q) + level * self.r(q)


@dataclass(frozen=True)
class EigenData:
    """Eigendecomposition of V(q) at a single point."""

    lambda_plus: float
    lambda_minus: float
    gap: float
    proj_plus: np.ndarray
    proj_minus: np.ndarray
    r: float


def evaluate(pot: DiabaticPotential, q):
    """Return (alpha, beta, gamma, (d_alpha, d_beta, d_gamma)) at q."""
    return (
        pot.alpha(q),
        pot.beta(q),
        pot.gamma(q),
        (pot.d_alpha(q), pot.d_beta(q), pot.d_gamma(q)),
    )


def eigen(pot: DiabaticPotential, q) -> EigenData:
    """Eigenvalues and eigenprojectors of V(q) at a point.

    The projectors are computed through the closed form
    (Id +- V0/r) / 2, which is free of the eigenvector sign ambiguity.

    Raises DegenerateGap when r = 0 (a conical point).
    """
    a = float(pot.alpha(q))
    b = float(pot.beta(q))
    c = float(pot.gamma(q))
    r = np.hypot(b, c)
    if r == 0.0:
        raise DegenerateGap(f"beta^2 + gamma^2 vanishes at q={q!r}")
    v0_over_r = np.array([[b, c], [c, -b]]) / r
    eye = np.eye(2)
    return EigenData(
        lambda_plus=a + r,
        lambda_minus=a - r,
        gap=2.0 * r,
        proj_plus=0.5 * (eye + v0_over_r),
        proj_minus=0.5 * (eye - v0_over_r),
        r=r,
    )


def grad_gap(pot: DiabaticPotential, q):
    """Gradient of the gap, 2*(beta*d_beta + gamma*d_gamma)/r.

    Raises DegenerateGap where r = 0.
    """
    b = pot.beta(q)
    c = pot.gamma(q)
    r = np.sqrt(b * b + c * c)
    if np.any(r == 0.0):
        raise DegenerateGap(f"beta^2 + gamma^2 vanishes at q={q!r}")
    return 2.0 * (b * pot.d_beta(q) + c * pot.d_gamma(q)) / r

def force(pot: DiabaticPotential, q, level: int):
    """Classical force -grad lambda_level = -d_alpha - level*grad_gap/2."""
    if level not in (-1, 1):
        raise ValueError("level must be +1 or -1")
    return -pot.d_alpha(q) - 0.5 * level * grad_gap(pot, q)


# ---------------------------------------------------------------------------
# Built-in models
# ---------------------------------------------------------------------------

_EPS_TULLY = 2000.0 ** -0.5

# Grid defaults follow the sampling rule dq <= eps/(3 p_max): wavelengths of
# order eps/|p| must be resolved on the collocation grid.
_TULLY_GRID = (-20.0, 30.0, 2 ** 13)
_ARCTAN_GRID = (-4.0, 4.0, 2 ** 13)


def _make_simple(delta0: float, a: float, b: float, c: float) -> DiabaticPotential:
    def beta(q):
        q = np.asarray(q, dtype=float)
        return a * np.sign(q) * (1.0 - np.exp(-b * np.abs(q)))

    def d_beta(q):
        q = np.asarray(q, dtype=float)
        return a * b * np.exp(-b * np.abs(q))

    def gamma(q):
        q = np.asarray(q, dtype=float)
        return delta0 * np.exp(-c * q * q)

    def d_gamma(q):
        q = np.asarray(q, dtype=float)
        return -2.0 * c * q * delta0 * np.exp(-c * q * q)

    zero = lambda q: np.zeros_like(np.asarray(q, dtype=float))
    return DiabaticPotential(
        alpha=zero, beta=beta, gamma=gamma,
        d_alpha=zero, d_beta=d_beta, d_gamma=d_gamma,
        name="simple", delta0=delta0,
        defaults=ModelDefaults(_EPS_TULLY, -5.0, 1.0, -1, 10.0, 0.002, *_TULLY_GRID),
        kernel_code=CODE_SIMPLE, kernel_params=(a, b, c, delta0),
    )


def _make_dual(delta0: float, a: float, b: float, c: float, d: float) -> DiabaticPotential:
    def beta(q):
        q = np.asarray(q, dtype=float)
        return a * np.exp(-b * q * q) - c

    def d_beta(q):
        q = np.asarray(q, dtype=float)
        return -2.0 * a * b * q * np.exp(-b * q * q)

    def gamma(q):
        q = np.asarray(q, dtype=float)
        return delta0 * np.exp(-d * q * q)

    def d_gamma(q):
        q = np.asarray(q, dtype=float)
        return -2.0 * d * q * delta0 * np.exp(-d * q * q)

    alpha = lambda q: -beta(q)
    d_alpha = lambda q: -d_beta(q)
    return DiabaticPotential(
        alpha=alpha, beta=beta, gamma=gamma,
        d_alpha=d_alpha, d_beta=d_beta, d_gamma=d_gamma,
        name="dual", delta0=delta0,
        defaults=ModelDefaults(_EPS_TULLY, -5.0, 1.0, -1, 10.0, 0.002, *_TULLY_GRID),
        kernel_code=CODE_DUAL, kernel_params=(a, b, c, d, delta0),
    )


def _make_extended(delta0: float, a: float, b: float) -> DiabaticPotential:
    def gamma(q):
        q = np.asarray(q, dtype=float)
        return a * np.sign(q) * (1.0 - np.exp(-b * np.abs(q))) + a

    def d_gamma(q):
        q = np.asarray(q, dtype=float)
        return a * b * np.exp(-b * np.abs(q))

    def beta(q):
        return np.full_like(np.asarray(q, dtype=float), delta0)

    zero = lambda q: np.zeros_like(np.asarray(q, dtype=float))
    return DiabaticPotential(
        alpha=zero, beta=beta, gamma=gamma,
        d_alpha=zero, d_beta=zero, d_gamma=d_gamma,
        name="extended", delta0=delta0,
        defaults=ModelDefaults(_EPS_TULLY, 0.0, -1.0, +1, 10.0, 0.002, *_TULLY_GRID),
        kernel_code=CODE_EXTENDED, kernel_params=(a, b, delta0),
    )


def _make_arctan(delta0: float) -> DiabaticPotential:
    def beta(q):
        q = np.asarray(q, dtype=float)
        return np.arctan(q)

    def d_beta(q):
        q = np.asarray(q, dtype=float)
        return 1.0 / (1.0 + q * q)

    def gamma(q):
        return np.full_like(np.asarray(q, dtype=float), delta0)

    zero = lambda q: np.zeros_like(np.asarray(q, dtype=float))
    return DiabaticPotential(
        alpha=zero, beta=beta, gamma=gamma,
        d_alpha=zero, d_beta=d_beta, d_gamma=zero,
        name="arctangent", delta0=delta0,
        defaults=ModelDefaults(1e-3, -1.0, 1.0, +1, 2.0, 2e-4, *_ARCTAN_GRID),
        kernel_code=CODE_ARCTAN, kernel_params=(delta0,),
    )


# name -> (factory, default delta0, coefficient names in factory order)
_REGISTRY = {
    "simple": (_make_simple, 0.005, ("a", "b", "c")),
    "dual": (_make_dual, 0.015, ("a", "b", "c", "d")),
    "extended": (_make_extended, 6e-4, ("a", "b")),
    "arctangent": (_make_arctan, 10.0 ** -1.5, ()),
}

_COEFF_DEFAULTS = {
    "simple": {"a": 0.01, "b": 1.6, "c": 1.0},
    "dual": {"a": 0.05, "b": 0.28, "c": 0.025, "d": 0.06},
    "extended": {"a": 0.1, "b": 0.9},
    "arctangent": {},
}


def builtin_names():
    return tuple(_REGISTRY)


def builtin(name: str, delta0: Optional[float] = None, **coefficients) -> DiabaticPotential:
    """Construct a registered model, optionally overriding delta0 and the
    named scalar coefficients (see coefficient_names).

    Raises UnknownModel for unrecognized names or coefficient keys.
    """
    if name not in _REGISTRY:
        raise UnknownModel(
            f"unknown model {name!r}; choose from {', '.join(_REGISTRY)}"
        )
    factory, d0_default, coeff_names = _REGISTRY[name]
    coeffs = dict(_COEFF_DEFAULTS[name])
    for key, val in coefficients.items():
        if key not in coeffs:
            raise UnknownModel(
                f"model {name!r} has no coefficient {key!r}; valid: {coeff_names}"
            )
        coeffs[key] = float(val)
    d0 = d0_default if delta0 is None else float(delta0)
    args = [coeffs[k] for k in coeff_names]
    return factory(d0, *args)


def coefficient_names(name: str):
    if name not in _REGISTRY:
        raise UnknownModel(f"unknown model {name!r}")
    return _REGISTRY[name][2]
