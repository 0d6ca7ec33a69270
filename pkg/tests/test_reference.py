import numpy as np
import pytest

from hopsim import (
    DiabaticPotential,
    DomainTooSmall,
    builtin,
    gaussian_packet,
    kinetic_full_step,
    potential_half_step,
    solve,
)
from hopsim.reference import GridWavefunction


def test_packet_normalized():
    pot = builtin("arctangent")
    psi = gaussian_packet(-4, 4, 2 ** 12, -1.0, 1.0, 1e-3, +1, pot)
    assert abs(psi.norm_sq() - 1.0) < 1e-10


def test_packet_level_purity():
    pot = builtin("simple")
    psi = gaussian_packet(-20, 30, 2 ** 12, -5.0, 1.0, 2000 ** -0.5, -1, pot)
    res = solve(psi, pot, 1.0, 0.0, np.array([0.0, 1.0])[:1], None)
    # t=0 diagnostics only: populations from the initial state
    d0 = res.diagnostics[0]
    assert d0.n_minus >= 1.0 - 1e-8
    assert d0.n_plus <= 1e-8


def test_packet_initial_moments():
    pot = builtin("arctangent")
    psi = gaussian_packet(-4, 4, 2 ** 13, -1.0, 1.0, 1e-3, +1, pot)
    res = solve(psi, pot, 1.0, 0.0, np.array([0.0]), None)
    d0 = res.diagnostics[0]
    assert d0.mean_p_plus == pytest.approx(1.0, abs=1e-6)
    assert d0.mean_q_plus == pytest.approx(-1.0, abs=1e-6)


def test_packet_domain_too_small():
    pot = builtin("arctangent")
    with pytest.raises(DomainTooSmall):
        gaussian_packet(-0.2, 0.2, 2 ** 10, 0.19, 1.0, 1e-2, +1, pot)


def _uniform_scalar_potential(alpha_value=0.3):
    arr = lambda q: np.asarray(q, dtype=float)
    return DiabaticPotential(
        alpha=lambda q: alpha_value + 0.0 * arr(q),
        beta=lambda q: 0.0 * arr(q),
        gamma=lambda q: 0.0 * arr(q),
        d_alpha=lambda q: 0.0 * arr(q),
        d_beta=lambda q: 0.0 * arr(q),
        d_gamma=lambda q: 0.0 * arr(q),
    )


def _plane_wave(n=256, eps=0.05):
    q = np.linspace(0, 1, n, endpoint=False)
    values = np.zeros((n, 2), dtype=complex)
    values[:, 0] = 1.0
    return GridWavefunction(a=0.0, b=1.0, n=n, values=values, eps=eps)


def test_potential_step_pure_phase_when_traceless_part_vanishes():
    psi = _plane_wave()
    pot = _uniform_scalar_potential(0.3)
    out = potential_half_step(psi, pot, 0.01)
    theta = 0.01 / (2 * psi.eps)
    np.testing.assert_allclose(
        out.values[:, 0], np.exp(-1j * theta * 0.3), atol=1e-14
    )


def test_potential_step_diagonal_phases():
    # beta=1, gamma=0, alpha=0 and theta=pi/2: components pick e^{-+ i pi/2}
    arr = lambda q: np.asarray(q, dtype=float)
    pot = DiabaticPotential(
        alpha=lambda q: 0.0 * arr(q), beta=lambda q: 1.0 + 0.0 * arr(q),
        gamma=lambda q: 0.0 * arr(q),
        d_alpha=lambda q: 0.0 * arr(q), d_beta=lambda q: 0.0 * arr(q),
        d_gamma=lambda q: 0.0 * arr(q),
    )
    psi = _plane_wave(eps=1.0)
    psi.values[:, 1] = 1.0
    out = potential_half_step(psi, pot, np.pi)  # theta = pi/2
    np.testing.assert_allclose(out.values[:, 0], -1j * np.ones(psi.n), atol=1e-12)
    np.testing.assert_allclose(out.values[:, 1], +1j * np.ones(psi.n), atol=1e-12)


def test_two_half_steps_equal_full_step():
    pot = builtin("arctangent")
    psi = gaussian_packet(-4, 4, 2 ** 10, -1.0, 1.0, 1e-3, +1, pot)
    once = potential_half_step(psi, pot, 0.02)
    twice = potential_half_step(potential_half_step(psi, pot, 0.01), pot, 0.01)
    np.testing.assert_allclose(twice.values, once.values, atol=1e-13)


def test_potential_step_unitary():
    pot = builtin("simple")
    psi = gaussian_packet(-20, 30, 2 ** 11, -5.0, 1.0, 2000 ** -0.5, -1, pot)
    out = potential_half_step(psi, pot, 0.37)
    assert abs(out.norm_sq() - psi.norm_sq()) < 1e-12


def test_kinetic_identity_at_zero_dt():
    psi = _plane_wave()
    out = kinetic_full_step(psi, 0.0)
    np.testing.assert_allclose(out.values, psi.values, atol=1e-15)


def test_kinetic_constant_mode_unchanged():
    psi = _plane_wave()
    out = kinetic_full_step(psi, 0.3)
    np.testing.assert_allclose(out.values[:, 0], psi.values[:, 0], atol=1e-13)


def test_kinetic_free_gaussian_spreading():
    # free packet: position variance grows as (eps/2)(1 + t^2)
    eps = 1e-2
    psi = gaussian_packet(-8, 8, 2 ** 12, 0.0, 0.0, eps,
                          +1, _spinor_up_potential())
    t = 0.0
    for _ in range(200):
        psi = kinetic_full_step(psi, 0.005)
        t += 0.005
    dens = np.abs(psi.values[:, 0]) ** 2 + np.abs(psi.values[:, 1]) ** 2
    dens /= dens.sum() * psi.dq
    var = float((psi.q ** 2 * dens).sum() * psi.dq)
    assert var == pytest.approx(0.5 * eps * (1 + t ** 2), rel=1e-6)


def _spinor_up_potential():
    arr = lambda q: np.asarray(q, dtype=float)
    return DiabaticPotential(
        alpha=lambda q: 0.0 * arr(q), beta=lambda q: 1.0 + 0.0 * arr(q),
        gamma=lambda q: 0.0 * arr(q),
        d_alpha=lambda q: 0.0 * arr(q), d_beta=lambda q: 0.0 * arr(q),
        d_gamma=lambda q: 0.0 * arr(q),
    )


def test_solve_norm_conservation_short():
    pot = builtin("arctangent")
    psi = gaussian_packet(-4, 4, 2 ** 12, -1.0, 1.0, 1e-3, +1, pot)
    res = solve(psi, pot, 2.0 / 2 ** 12, 0.5, np.linspace(0, 0.5, 6))
    assert abs(res.final.norm_sq() - 1.0) < 1e-10


def test_solve_constant_diagonal_populations():
    # diagonal constant matrix: levels decouple, populations frozen
    pot = _spinor_up_potential()
    psi = gaussian_packet(-8, 8, 2 ** 11, 0.0, 1.0, 1e-2, +1, pot)
    res = solve(psi, pot, 1e-3, 0.5, np.linspace(0, 0.5, 6))
    pops = np.array([d.n_plus for d in res.diagnostics])
    np.testing.assert_allclose(pops, pops[0], atol=1e-10)


def test_solve_matches_composed_operators():
    # one interval with a single Strang step equals the public operators
    pot = builtin("arctangent")
    psi = gaussian_packet(-4, 4, 2 ** 10, -1.0, 1.0, 1e-3, +1, pot)
    dt = 0.003
    res = solve(psi, pot, dt, dt, np.array([0.0, dt]))
    stepped = potential_half_step(
        kinetic_full_step(potential_half_step(psi, pot, dt), dt), pot, dt
    )
    np.testing.assert_allclose(res.final.values, stepped.values, atol=1e-14)


def test_boundary_leak_warning():
    # packet reaches the right edge of a deliberately short domain
    pot = builtin("arctangent", delta0=0.5)
    psi = gaussian_packet(-2, 1.2, 2 ** 11, -1.0, 1.0, 1e-2, +1, pot)
    with pytest.warns(Warning, match="boundary"):
        res = solve(psi, pot, 1e-3, 2.5, np.linspace(0, 2.5, 11))
    assert res.boundary_leak


def test_solve_self_convergence_order():
    pot = builtin("arctangent")
    psi = gaussian_packet(-4, 4, 2 ** 12, -1.0, 1.0, 1e-3, +1, pot)
    times = np.linspace(0, 1.0, 3)
    finals = []
    for k in (10, 11, 12):
        res = solve(psi, pot, 1.0 / 2 ** k, 1.0, times)
        finals.append(res.diagnostics[-1].n_plus)
    e1 = abs(finals[0] - finals[1])
    e2 = abs(finals[1] - finals[2])
    order = np.log2(e1 / e2)
    assert order >= 1.9
