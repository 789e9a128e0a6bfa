"""Closed-form solvers for the single-constraint subproblems of the ADMM engines.

Every solver minimises a squared distance to an *anchor* point subject to
one quadratic constraint. The solution follows from stationarity of the
Lagrangian in terms of one multiplier ``pi >= 0``; ``pi`` is the zero of a
monotone scalar secular equation, obtained from a cubic (convex SINR
constraint, antenna power with a free level) or a quartic (non-convex SINR
constraint).

The scalar functions take one user or antenna and are the reference
implementation. The ``*_batch`` variants process all users or antennas at
once for the iteration engines and agree with the scalar versions to
rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mcbeam.rootfind import (cubic_real_roots, largest_real_root_cubic, monotone_root,
                             quartic_real_roots)

__all__ = [
    "InfeasibleSubproblemError",
    "SubproblemFailure",
    "GammaSubproblem",
    "gamma_update_convex",
    "gamma_update_feasibility",
    "project_ball",
    "v_alpha_update",
    "consensus_x_update",
    "consensus_y_update",
    "gamma_update_convex_batch",
    "gamma_update_feasibility_batch",
    "project_rows",
    "v_alpha_update_batch",
    "consensus_x_update_batch",
    "consensus_y_update_batch",
    "linearized_sinr_constraint",
    "dc_sinr_constraint",
]

_EPS = np.finfo(float).eps


class InfeasibleSubproblemError(ValueError):
    """The linearised SINR constraint admits no point.

    Happens exactly when the linearisation point gives the user no own-group
    signal (``taylor_inner == 0``). ``users`` lists the offending users in
    batch calls.
    """

    def __init__(self, msg, users=()):
        super().__init__(msg)
        self.users = tuple(int(u) for u in users)


class SubproblemFailure(ArithmeticError):
    """Root finding produced no admissible multiplier."""


@dataclass(frozen=True)
class GammaSubproblem:
    """Per-user SINR subproblem.

    ``anchor[m]`` is the unconstrained minimiser, ``h_k^H w_m - lambda_km``.
    ``taylor_inner`` is ``h_k^H w_{m_k}`` at the linearisation point and is
    ignored by the non-convex variant.
    """

    anchor: np.ndarray
    own_group: int
    target: float
    noise: float
    taylor_inner: complex = 0j

    def __post_init__(self):
        object.__setattr__(self, "anchor", np.asarray(self.anchor, complex).ravel())
        if not 0 <= self.own_group < self.anchor.size:
            raise ValueError("own_group out of range")
        if not (self.target > 0 and self.noise > 0):
            raise ValueError("target and noise must be positive")


def linearized_sinr_constraint(gamma_row, own_group, target, noise, taylor_inner):
    """Value of the linearised (convex) SINR constraint; feasible when ``<= 0``."""
    g = np.asarray(gamma_row, complex)
    other = np.sum(np.abs(g) ** 2) - abs(g[own_group]) ** 2
    return (target * (other + noise) - 2 * (np.conj(taylor_inner) * g[own_group]).real
            + abs(taylor_inner) ** 2)


def dc_sinr_constraint(gamma_row, own_group, target, noise):
    """Value of the exact SINR constraint in difference-of-convex form."""
    g = np.asarray(gamma_row, complex)
    own = abs(g[own_group]) ** 2
    return target * (np.sum(np.abs(g) ** 2) - own + noise) - own


# --------------------------------------------------------------------------
# convex SINR subproblem

def _convex_terms(anchor, own, gamma, noise, tau):
    a_own = anchor[own]
    A = gamma * (np.sum(np.abs(anchor) ** 2) - abs(a_own) ** 2)
    b = -2.0 * abs(tau) ** 2
    c = gamma * noise - 2.0 * (np.conj(tau) * a_own).real + abs(tau) ** 2
    return A, b, c


def _secular_convex(A, b, c, gamma):
    def g(p):
        return A / (1 + p * gamma) ** 2 + b * p + c

    def dg(p):
        return -2 * A * gamma / (1 + p * gamma) ** 3 + b
    return g, dg


def _newton_convex_decreasing(g, dg, x, lo=0.0, maxiter=100):
    """Newton on a convex decreasing function; converges from either side."""
    x = np.maximum(np.asarray(x, float), lo)
    for _ in range(maxiter):
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = np.maximum(x - g(x) / dg(x), lo)
        xn = np.where(np.isfinite(xn), xn, x)
        done = np.abs(xn - x) <= 4 * _EPS * (1 + np.abs(x))
        x = xn
        if np.all(done):
            break
    return x


def _gamma_convex_row(anchor, own, gamma, pi, tau):
    row = anchor / (pi * gamma + 1)
    row[own] = pi * tau + anchor[own]
    return row


def gamma_update_convex(sub: GammaSubproblem):
    """Solve the convex (linearised) SINR subproblem of one user.

    Returns ``(row, pi)``. Raises :class:`InfeasibleSubproblemError` when
    the linearisation point carries no own-group signal.
    """
    a, own, gam, sig = sub.anchor, sub.own_group, float(sub.target), float(sub.noise)
    tau = complex(sub.taylor_inner)
    A, b, c = _convex_terms(a, own, gam, sig, tau)
    if A + c <= 0:
        return a.copy(), 0.0
    if b == 0:
        raise InfeasibleSubproblemError("linearisation point has zero own-group gain")
    g, dg = _secular_convex(A, b, c, gam)
    roots = [r for r in cubic_real_roots([b * gam ** 2, 2 * b * gam + c * gam ** 2,
                                          b + 2 * c * gam, c + A]) if r >= 0]
    if roots:
        pi = min(roots)
    else:
        hi = 1.0
        while g(hi) > 0:
            hi *= 2.0
        pi = monotone_root(g, 0.0, hi, tol=1e-15 * hi)
    pi = float(_newton_convex_decreasing(g, dg, pi))
    return _gamma_convex_row(a.copy(), own, gam, pi, tau), pi


def gamma_update_convex_batch(anchor, own_group, target, noise, taylor_inner):
    """All users at once. ``anchor`` is ``(K, M)``; returns ``(Gamma, pi)``."""
    anchor = np.asarray(anchor, complex)
    K = anchor.shape[0]
    rows = np.arange(K)
    a_own = anchor[rows, own_group]
    power = anchor.real ** 2 + anchor.imag ** 2
    A = target * (power.sum(axis=1) - power[rows, own_group])
    tau = np.asarray(taylor_inner, complex)
    b = -2.0 * (tau.real ** 2 + tau.imag ** 2)
    c = target * noise - 2.0 * (np.conj(tau) * a_own).real - 0.5 * b
    pi = np.zeros(K)
    active = A + c > 0
    if np.any(active):
        bad = active & (b == 0)
        if np.any(bad):
            raise InfeasibleSubproblemError("linearisation point has zero own-group gain",
                                            np.flatnonzero(bad))
        Aa, ba, ca, ga = A[active], b[active], c[active], np.broadcast_to(target, (K,))[active]
        g, dg = _secular_convex(Aa, ba, ca, ga)
        start = largest_real_root_cubic(ba * ga ** 2, 2 * ba * ga + ca * ga ** 2,
                                        ba + 2 * ca * ga, ca + Aa)
        start = np.where(np.isfinite(start), start, 0.0)
        pi[active] = _newton_convex_decreasing(g, dg, start)
    gam = np.broadcast_to(target, (K,))
    Gamma = anchor / (pi * gam + 1)[:, None]
    Gamma[rows, own_group] = pi * tau + a_own
    return Gamma, pi


# --------------------------------------------------------------------------
# non-convex SINR subproblem (feasibility search)

def _feas_terms(anchor, own, gamma, noise):
    c_t = abs(anchor[own]) ** 2
    A_t = gamma * (np.sum(np.abs(anchor) ** 2) - c_t)
    return A_t, gamma * noise, c_t


def _solve_omega(A_t, b_t, c_t, gamma, omega0):
    """Refine ``omega = 1 - pi`` in ``(0, 1]`` by safeguarded Newton.

    ``f(omega) = A/(1 + (1-omega) gamma)^2 + b - c/omega^2`` is increasing
    in ``omega`` with a sign change on ``(0, 1]``.
    """
    def f(w):
        return A_t / (1 + (1 - w) * gamma) ** 2 + b_t - c_t / w ** 2

    def df(w):
        return 2 * A_t * gamma / (1 + (1 - w) * gamma) ** 3 + 2 * c_t / w ** 3

    lo, hi = 0.0, 1.0
    w = min(max(omega0, 0.0), 1.0) if np.isfinite(omega0) else 0.5
    if w <= 0:
        w = 0.5
    for _ in range(200):
        fw = f(w)
        if fw == 0:
            return w
        if fw > 0:
            hi = w
        else:
            lo = w
        step = fw / df(w)
        wn = w - step
        if not lo < wn < hi:
            wn = 0.5 * (lo + hi)
        if abs(wn - w) <= 4 * _EPS * w:
            return wn
        w = wn
    return w


def gamma_update_feasibility(sub: GammaSubproblem):
    """Solve the non-convex SINR subproblem of one user.

    Minimises the distance to the anchor subject to
    ``target * (interference + noise) <= |own gain|^2``. Strong duality
    holds for this single-constraint problem, so the stationary point with
    multiplier ``pi`` in ``[0, 1)`` is globally optimal. When the own-group
    anchor entry is zero the multiplier is exactly one and the own-group
    entry is placed on the positive real axis with the constraint tight.
    """
    a, own, gam, sig = sub.anchor, sub.own_group, float(sub.target), float(sub.noise)
    A_t, b_t, c_t = _feas_terms(a, own, gam, sig)
    if A_t + b_t - c_t <= 0:
        return a.copy(), 0.0
    if c_t == 0:
        row = a / (1 + gam)
        row[own] = np.sqrt(gam * (np.sum(np.abs(row) ** 2) + sig))
        return row, 1.0
    coeffs = [b_t * gam ** 2,
              2 * b_t * gam - 2 * b_t * gam ** 2,
              b_t * gam ** 2 + b_t - 4 * b_t * gam + A_t - c_t * gam ** 2,
              2 * b_t * gam - 2 * b_t - 2 * A_t - 2 * c_t * gam,
              b_t + A_t - c_t]
    roots = [r for r in quartic_real_roots(coeffs) if 0 <= r < 1]
    omega0 = 1.0 - min(roots) if roots else 0.5
    omega = _solve_omega(A_t, b_t, c_t, gam, omega0)
    if not 0 < omega <= 1:
        raise SubproblemFailure("no multiplier in [0, 1)")
    row = a / (1 + (1 - omega) * gam)
    row[own] = a[own] / omega
    return row, 1.0 - omega


def gamma_update_feasibility_batch(anchor, own_group, target, noise):
    anchor = np.asarray(anchor, complex)
    K = anchor.shape[0]
    target = np.broadcast_to(target, (K,))
    noise = np.broadcast_to(noise, (K,))
    Gamma = np.empty_like(anchor)
    pi = np.empty(K)
    for k in range(K):
        Gamma[k], pi[k] = gamma_update_feasibility(
            GammaSubproblem(anchor[k], int(own_group[k]), target[k], noise[k]))
    return Gamma, pi


# --------------------------------------------------------------------------
# per-antenna power

def project_ball(u, radius):
    """Euclidean projection of ``u`` onto the ball ``||x|| <= radius``."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    u = np.asarray(u, complex)
    nrm = np.linalg.norm(u)
    if nrm <= radius:
        return u.copy()
    return (radius / nrm) * u


def project_rows(U, cap):
    """Project every row of ``U`` onto the ball of radius ``sqrt(cap[n])``."""
    U = np.asarray(U, complex)
    nrm2 = np.sum(U.real ** 2 + U.imag ** 2, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(nrm2 > cap, np.sqrt(cap / nrm2), 1.0)
    return U * scale[:, None]


def v_alpha_update(u, c, P, rho):
    """Joint update of one antenna row and its power level.

    Minimises ``||v - u||^2 + (rho/2) (alpha - c)^2`` subject to
    ``||v||^2 / P <= alpha``. Returns ``(v, alpha)``.
    """
    if not (P > 0 and rho > 0):
        raise ValueError("P and rho must be positive")
    u = np.asarray(u, complex)
    q = float(np.sum(np.abs(u) ** 2))
    if q / P <= c:
        return u.copy(), float(c)

    def f(p):
        return q / (P * (1 + p / P) ** 2) - c - p / rho
    pi = monotone_root(f, 0.0, rho * (q / P - c), tol=1e-14 * rho * (q / P - c))
    return u / (1 + pi / P), float(c + pi / rho)


def v_alpha_update_batch(U, c, P, rho):
    """All antennas at once; ``U`` is ``(N, M)``. Returns ``(V, alpha)``."""
    U = np.asarray(U, complex)
    c = np.asarray(c, float)
    P = np.broadcast_to(np.asarray(P, float), c.shape)
    q = np.sum(U.real ** 2 + U.imag ** 2, axis=1)
    pi = np.zeros_like(c)
    active = q / P > c
    if np.any(active):
        qa, ca, Pa = q[active], c[active], P[active]

        def f(p):
            return qa / (Pa * (1 + p / Pa) ** 2) - ca - p / rho

        def df(p):
            return -2 * qa / (Pa * Pa * (1 + p / Pa) ** 3) - 1 / rho
        start = largest_real_root_cubic(-1 / (rho * Pa ** 2), -(ca / Pa ** 2 + 2 / (rho * Pa)),
                                        -(2 * ca / Pa + 1 / rho), qa / Pa - ca)
        start = np.where(np.isfinite(start), start, 0.0)
        pi[active] = _newton_convex_decreasing(f, df, start)
    return U / (1 + pi / P)[:, None], c + pi / rho


# --------------------------------------------------------------------------
# consensus-ADMM local copies

def consensus_x_update(h, anchors, own_group, target, noise, taylor_inner):
    """Local copy update for one user's SINR constraint.

    ``anchors`` is ``(N, M)`` with column ``m`` equal to ``w_m - u_{m,k}``.
    The constraint only sees ``h^H x_m``, so the minimiser moves each
    anchor along ``h``: the scalars ``h^H x_m`` solve the user's convex
    SINR subproblem and the orthogonal part stays at the anchor.
    Returns ``(X, pi)`` with ``X`` shaped like ``anchors``.
    """
    h = np.asarray(h, complex)
    anchors = np.asarray(anchors, complex)
    s0 = h.conj() @ anchors
    row, pi = gamma_update_convex(GammaSubproblem(s0, own_group, target, noise, taylor_inner))
    return anchors + np.outer(h, (row - s0) / np.vdot(h, h).real), pi


def consensus_x_update_batch(H, anchors, own_group, target, noise, taylor_inner):
    """All users; ``anchors`` is ``(K, N, M)``."""
    s0 = np.einsum("nk,knm->km", H.conj(), anchors)
    Gamma, _ = gamma_update_convex_batch(s0, own_group, target, noise, taylor_inner)
    hn2 = np.sum(H.real ** 2 + H.imag ** 2, axis=0)
    return anchors + H.T[:, :, None] * ((Gamma - s0) / hn2[:, None])[:, None, :]


def consensus_y_update(anchors, n, P_n):
    """Local copy update for antenna ``n``'s power constraint.

    Only row ``n`` of the copy is constrained; it is projected onto the
    ball of radius ``sqrt(P_n)`` and every other row keeps the anchor.
    """
    Y = np.array(anchors, dtype=complex, copy=True)
    Y[n] = project_ball(Y[n], np.sqrt(P_n))
    return Y


def consensus_y_update_batch(anchors, cap):
    """All antennas; ``anchors`` is ``(N, N, M)`` indexed ``[copy, row, group]``."""
    Y = np.array(anchors, dtype=complex, copy=True)
    idx = np.arange(Y.shape[0])
    Y[idx, idx] = project_rows(Y[idx, idx], cap)
    return Y
