"""Independent reference computations for the test suite.

Nothing here calls the closed-form kernels under test: polynomial roots
come from a hand-built companion matrix, the convex subproblems from a
general-purpose constrained optimiser, and the non-convex subproblem from
a one-dimensional reduction searched on a dense grid.
"""

from __future__ import annotations

import numpy as np
from scipy import optimize


# --------------------------------------------------------------------------
# polynomials

def companion_real_roots(coeffs, imag_tol=1e-6):
    """Real eigenvalues of the companion matrix of ``coeffs`` (highest degree first)."""
    c = np.trim_zeros(np.asarray(coeffs, float), "f")
    n = c.size - 1
    if n < 1:
        return np.array([])
    C = np.zeros((n, n))
    C[0, :] = -c[1:] / c[0]
    C[1:, :-1] = np.eye(n - 1)
    ev = np.linalg.eigvals(C)
    real = ev[np.abs(ev.imag) <= imag_tol * (1 + np.abs(ev.real))].real
    return np.sort(real)


def collapse(roots, tol=1e-6):
    out = []
    for r in np.sort(np.asarray(roots, float)):
        if out and abs(r - out[-1][-1]) <= tol * (1 + abs(r)):
            out[-1].append(r)
        else:
            out.append([r])
    return np.array([np.mean(g) for g in out])


def set_distance(a, b):
    """Hausdorff distance between two finite sets of reals (inf if one is empty)."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    if a.size == 0 and b.size == 0:
        return 0.0
    if a.size == 0 or b.size == 0:
        return np.inf
    d = np.abs(a[:, None] - b[None, :])
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


# --------------------------------------------------------------------------
# per-user SINR subproblems

def _c2r(z):
    return np.concatenate([np.real(z), np.imag(z)])


def _r2c(x):
    n = x.size // 2
    return x[:n] + 1j * x[n:]


def linearized_value(g, own, gamma, noise, tau):
    other = np.sum(np.abs(g) ** 2) - abs(g[own]) ** 2
    return gamma * (other + noise) - 2 * np.real(np.conj(tau) * g[own]) + abs(tau) ** 2


def dc_value(g, own, gamma, noise):
    own_p = abs(g[own]) ** 2
    return gamma * (np.sum(np.abs(g) ** 2) - own_p + noise) - own_p


def convex_gamma_oracle(anchor, own, gamma, noise, tau, starts=3, seed=0):
    """Minimise ``||g - anchor||^2`` s.t. the linearised SINR constraint, by SLSQP.

    Returns ``(g, objective)`` for the best feasible run.
    """
    anchor = np.asarray(anchor, complex)
    rng = np.random.default_rng(seed)

    def obj(x):
        return float(np.sum((x - _c2r(anchor)) ** 2))

    def jac(x):
        return 2 * (x - _c2r(anchor))

    def con(x):
        return -linearized_value(_r2c(x), own, gamma, noise, tau)

    def con_grad(x):
        g = _r2c(x)
        d = -2 * gamma * g
        d[own] = 2 * tau
        return _c2r(d)

    cscale = 1 + abs(tau) ** 2 + gamma * noise
    best = None
    # a feasible point: own-group entry far along tau, others zero
    g0 = np.zeros_like(anchor)
    g0[own] = tau * (1 + (gamma * noise + abs(tau) ** 2) / (2 * abs(tau) ** 2))
    for s in range(starts):
        x0 = _c2r(anchor) if s == 0 else (_c2r(g0) if s == 1 else
                                         _c2r(anchor) + rng.standard_normal(2 * anchor.size))
        res = optimize.minimize(obj, x0, jac=jac, method="SLSQP",
                                constraints=[{"type": "ineq", "fun": con, "jac": con_grad}],
                                options={"ftol": 1e-15, "maxiter": 500})
        x = res.x
        if abs(con(x)) <= 1e-6 * cscale:
            x = _kkt_refine(x, jac, con, con_grad)
        if con(x) >= -1e-10 * cscale:
            f = obj(x)
            if best is None or f < best[1]:
                best = (_r2c(x), float(f))
    return best


def _kkt_refine(x, grad_f, con, con_grad):
    """Newton polish of an active-constraint KKT point (generic nonlinear solve)."""
    a = con_grad(x)
    pi = float(np.dot(grad_f(x), a) / max(np.dot(a, a), 1e-300))

    def kkt(z):
        return np.append(grad_f(z[:-1]) - z[-1] * con_grad(z[:-1]), con(z[:-1]))

    sol = optimize.root(kkt, np.append(x, pi), method="hybr", options={"xtol": 1e-15})
    if sol.success and sol.x[-1] >= 0 and con(sol.x[:-1]) >= con(x) - 1e-12:
        return sol.x[:-1]
    return x


def convex_gamma_kkt(g, pi, anchor, own, gamma, noise, tau):
    """Scaled stationarity, feasibility and complementary-slackness residuals."""
    anchor = np.asarray(anchor, complex)
    grad = g - anchor
    others = np.arange(anchor.size) != own
    grad[others] += pi * gamma * g[others]
    grad[own] -= pi * tau
    scale = 1 + np.max(np.abs(anchor)) + abs(tau)
    cval = linearized_value(g, own, gamma, noise, tau)
    cscale = 1 + gamma * (np.sum(np.abs(anchor) ** 2) + noise) + abs(tau) ** 2
    return (float(np.max(np.abs(grad)) / scale), float(max(cval, 0.0) / cscale),
            float(abs(pi * cval) / cscale))


def feasibility_gamma_oracle(anchor, own, gamma, noise, grid=4001):
    """Global minimum of ``||g - anchor||^2`` s.t. the exact SINR constraint.

    The objective only couples magnitudes to the anchor, so optimal entries
    keep the anchor phases. With ``x = |g_own|`` the other entries are the
    projection of the anchor magnitudes onto the ball of radius
    ``sqrt(x^2/gamma - noise)``. The remaining scalar problem in ``x`` is
    scanned on a dense grid and refined with a bounded scalar search.
    """
    anchor = np.asarray(anchor, complex)
    a_own = abs(anchor[own])
    rest = np.abs(np.delete(anchor, own))
    nr = np.linalg.norm(rest)
    x_min = np.sqrt(gamma * noise)
    x_max = max(a_own, x_min) + np.sqrt(gamma) * (nr + np.sqrt(noise)) + 1.0

    def f(x):
        R = np.sqrt(max(x * x / gamma - noise, 0.0))
        d_rest = max(nr - R, 0.0)
        return (x - a_own) ** 2 + d_rest ** 2

    xs = np.linspace(x_min, x_max, grid)
    vals = np.array([f(x) for x in xs])
    i = int(np.argmin(vals))
    lo, hi = xs[max(i - 1, 0)], xs[min(i + 1, grid - 1)]
    res = optimize.minimize_scalar(f, bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-14})
    return float(min(res.fun, vals[i]))


def feasibility_quartic(anchor, own, gamma, noise):
    """Numerator polynomial of the non-convex secular equation, built by multiplication.

    With ``g_m = a_m/(1 + pi gamma)`` off-group and ``g_own = a_own/(1 - pi)``,
    the tight constraint ``A/(1+pi gamma)^2 + gamma noise - c/(1-pi)^2 = 0``
    times ``(1 + pi gamma)^2 (1 - pi)^2`` is a quartic in ``pi``.
    """
    anchor = np.asarray(anchor, complex)
    c = abs(anchor[own]) ** 2
    A = gamma * (np.sum(np.abs(anchor) ** 2) - c)
    one_g = np.array([gamma, 1.0])
    one_m = np.array([-1.0, 1.0])
    sq_g = np.polymul(one_g, one_g)
    sq_m = np.polymul(one_m, one_m)
    p = np.polyadd(np.polyadd(A * sq_m, gamma * noise * np.polymul(sq_g, sq_m)), -c * sq_g)
    return p


# --------------------------------------------------------------------------
# small dense problems

def dense_qos_subproblem(instance, W_lin):
    """Solve the convexified power-minimisation problem with SLSQP (small sizes only)."""
    H = instance.channels
    N, K, M = instance.shape
    tau = (H.conj().T @ W_lin)[np.arange(K), instance.group_of_user]

    def unpack(x):
        return _r2c(x).reshape(N, M)

    def obj(x):
        return float(np.sum(x ** 2))

    def jac(x):
        return 2 * x

    cons = []
    for k in range(K):
        def sinr(x, k=k):
            G = H[:, k].conj() @ unpack(x)
            return -linearized_value(G, instance.group_of_user[k], instance.sinr_target[k],
                                     instance.noise_power[k], tau[k])
        cons.append({"type": "ineq", "fun": sinr})
    for n in range(N):
        def capc(x, n=n):
            W = unpack(x)
            return instance.antenna_power_cap[n] - float(np.sum(np.abs(W[n]) ** 2))
        cons.append({"type": "ineq", "fun": capc})
    res = optimize.minimize(obj, _c2r(np.asarray(W_lin, complex).ravel()), jac=jac,
                            method="SLSQP", constraints=cons,
                            options={"ftol": 1e-13, "maxiter": 2000})
    return unpack(res.x), res


def sinr_loop(W, instance, k):
    """SINR of user ``k`` by explicit scalar loops."""
    H = instance.channels
    N, _, M = instance.shape
    gains = []
    for m in range(M):
        acc = 0j
        for n in range(N):
            acc += np.conj(H[n, k]) * W[n, m]
        gains.append(acc.real ** 2 + acc.imag ** 2)
    own = instance.group_of_user[k]
    interf = sum(gains[m] for m in range(M) if m != own)
    return gains[own] / (interf + instance.noise_power[k])
