"""Compiled trajectory and scattering kernels.

Imported lazily by the engine; the pure-numpy fallback path never touches
this module.  Field formulas must stay in sync with the closures built in
potentials.py (codes and parameter layouts are defined there).
"""

import math

import numba as nb

_KW = dict(cache=True, nogil=True)


@nb.njit(inline="always", **_KW)
def _fields(code, params, q):
    """Return (alpha, beta, gamma, d_alpha, d_beta, d_gamma) at q."""
    if code == 0:  # simple: a, b, c, delta0
        a = params[0]
        b = params[1]
        c = params[2]
        d0 = params[3]
        s = (0.0 < q) - (q < 0.0)
        e = math.exp(-b * abs(q))
        eg = math.exp(-c * q * q)
        return 0.0, a * s * (1.0 - e), d0 * eg, 0.0, a * b * e, -2.0 * c * q * d0 * eg
    elif code == 1:  # dual: a, b, c, d, delta0
        a = params[0]
        b = params[1]
        c = params[2]
        d = params[3]
        d0 = params[4]
        eb = math.exp(-b * q * q)
        eg = math.exp(-d * q * q)
        be = a * eb - c
        dbe = -2.0 * a * b * q * eb
        return -be, be, d0 * eg, -dbe, dbe, -2.0 * d * q * d0 * eg
    elif code == 2:  # extended: a, b, delta0
        a = params[0]
        b = params[1]
        d0 = params[2]
        s = (0.0 < q) - (q < 0.0)
        e = math.exp(-b * abs(q))
        return 0.0, d0, a * s * (1.0 - e) + a, 0.0, 0.0, a * b * e
    else:  # arctangent: delta0
        d0 = params[0]
        return 0.0, math.atan(q), d0, 0.0, 1.0 / (1.0 + q * q), 0.0


@nb.njit(inline="always", **_KW)
def _force_dgap(code, params, q, level):
    """Force on the level surface and the gap gradient at q."""
    al, be, ga, dal, dbe, dga = _fields(code, params, q)
    r = math.sqrt(be * be + ga * ga)
    dgap = 2.0 * (be * dbe + ga * dga) / r
    return -dal - 0.5 * level * dgap, dgap


@nb.njit(**_KW)
def propagate_chunk_gated(
    q, p, level, armed, attempt, nhops, nfrust, err,
    zetas, snap_q, snap_p, snap_level,
    code, params, eps, gate, dt, n_rec, n_sub,
):
    """Gated probabilistic surface hopping for one chunk of trajectories.

    Arrays are per-trajectory state, updated in place; snapshots are filled
    at the n_rec output times (n_sub Verlet steps apart).  zetas holds the
    pre-drawn uniforms consumed one per gated hop attempt.
    """
    n = q.shape[0]
    max_draws = zetas.shape[1]
    for i in range(n):
        qi = q[i]
        pi = p[i]
        li = level[i]
        armi = armed[i]
        att = attempt[i]
        dead = err[i] != 0
        # fields at the step start carry over from the previous step end
        f0, dg0 = _force_dgap(code, params, qi, li)
        for j in range(n_rec):
            if not dead:
                for k in range(n_sub):
                    h0 = pi * dg0
                    ph = pi + 0.5 * dt * f0
                    q1 = qi + dt * ph
                    f1, dg1 = _force_dgap(code, params, q1, li)
                    p1 = ph + 0.5 * dt * f1
                    h1 = p1 * dg1
                    if h0 < 0.0:
                        armi = True
                    if armi and h0 < 0.0 <= h1:
                        armi = False
                        tau = dt * h0 / (h0 - h1)
                        phh = pi + 0.5 * tau * f0
                        qs = qi + tau * phh
                        al, be, ga, dal, dbe, dga = _fields(code, params, qs)
                        rs = math.sqrt(be * be + ga * ga)
                        fs = -dal - 0.5 * li * 2.0 * (be * dbe + ga * dga) / rs
                        ps = phh + 0.5 * tau * fs
                        gs = 2.0 * rs
                        if gs <= gate:
                            pdb = ps * dbe
                            pdg = ps * dga
                            det = math.sqrt(pdb * pdb + pdg * pdg)
                            if abs(ps) < 1e-12 or det < 1e-12 or att >= max_draws:
                                dead = True
                                err[i] = 1
                                break
                            z = zetas[i, att]
                            att += 1
                            rate = math.exp(-math.pi * gs * gs / (4.0 * eps * det))
                            if rate > z:
                                if li == -1 and 1.0 - gs / (ps * ps) <= 0.0:
                                    nfrust[i] += 1
                                else:
                                    pout = ps + li * gs / ps
                                    li = -li
                                    nhops[i] += 1
                                    rem = dt - tau
                                    f0n, _ = _force_dgap(code, params, qs, li)
                                    phn = pout + 0.5 * rem * f0n
                                    q1 = qs + rem * phn
                                    f1, dg1 = _force_dgap(code, params, q1, li)
                                    p1 = phn + 0.5 * rem * f1
                                    h1 = p1 * dg1
                    qi = q1
                    pi = p1
                    f0 = f1
                    dg0 = dg1
            snap_q[i, j] = qi
            snap_p[i, j] = pi
            snap_level[i, j] = li
        q[i] = qi
        p[i] = pi
        level[i] = li
        armed[i] = armi
        attempt[i] = att


@nb.njit(**_KW)
def lz_propagate(eta, eps, s_max, ds, phase=0.0):
    """Integrate (eps/i) dv/ds = [[s, eta], [eta, -s]] v across the crossing.

    Starts at s = -s_max on the upper adiabatic branch (rotated by the
    given global phase) and runs RK4 to s = +s_max with uniform step close
    to ds.  Returns the final 2-vector.
    """
    n = int(math.ceil(2.0 * s_max / ds))
    h = 2.0 * s_max / n
    # upper-branch eigenvector of [[-s_max, eta], [eta, s_max]]
    lam = math.sqrt(s_max * s_max + eta * eta)
    rot = complex(math.cos(phase), math.sin(phase))
    v0 = eta * rot
    v1 = (lam + s_max) * rot
    nrm = math.sqrt(abs(v0) ** 2 + abs(v1) ** 2)
    v0 /= nrm
    v1 /= nrm
    c = 1j / eps
    s = -s_max
    for _ in range(n):
        k0a = c * (s * v0 + eta * v1)
        k0b = c * (eta * v0 - s * v1)
        sm = s + 0.5 * h
        va = v0 + 0.5 * h * k0a
        vb = v1 + 0.5 * h * k0b
        k1a = c * (sm * va + eta * vb)
        k1b = c * (eta * va - sm * vb)
        va = v0 + 0.5 * h * k1a
        vb = v1 + 0.5 * h * k1b
        k2a = c * (sm * va + eta * vb)
        k2b = c * (eta * va - sm * vb)
        sp = s + h
        va = v0 + h * k2a
        vb = v1 + h * k2b
        k3a = c * (sp * va + eta * vb)
        k3b = c * (eta * va - sp * vb)
        v0 = v0 + (h / 6.0) * (k0a + 2.0 * k1a + 2.0 * k2a + k3a)
        v1 = v1 + (h / 6.0) * (k0b + 2.0 * k1b + 2.0 * k2b + k3b)
        s = sp
    return v0, v1
