"""Real roots of cubic and quartic polynomials, and a bracketed scalar solver.

Coefficients are ordered highest degree first, as in :func:`numpy.polyval`.
The cubic and quartic solvers evaluate the closed-form (Cardano / Ferrari)
expressions in complex arithmetic, keep the numerically real roots, polish
them with Newton steps and verify the residual. If any root fails the
residual test the whole set is recomputed from companion-matrix eigenvalues.
"""

from __future__ import annotations

import cmath
import math

import numpy as np
from scipy import optimize

__all__ = [
    "BracketError",
    "cubic_real_roots",
    "quartic_real_roots",
    "monotone_root",
    "largest_real_root_cubic",
    "residual_bound",
]

_OMEGA = complex(-0.5, math.sqrt(3.0) / 2.0)
_IMAG_TOL = 1e-7
_MERGE_TOL = 1e-8


class BracketError(ValueError):
    """Raised when a scalar solver is given an interval without a sign change."""


def residual_bound(coeffs, root: float = 0.0) -> float:
    """Acceptance bound on ``|p(root)|`` for a returned root.

    ``1e-9 * (1 + max|c|)``, raised to the rounding-noise level of
    evaluating ``p`` at ``root`` when that is larger (roots of large
    magnitude cannot meet a fixed absolute bound in floating point).
    """
    c = np.asarray(coeffs, dtype=float)
    return max(1e-9 * (1.0 + float(np.max(np.abs(c)))), _eval_floor(c, root))


def _trim(coeffs):
    c = np.asarray(coeffs, dtype=float).ravel()
    if not np.all(np.isfinite(c)):
        raise ValueError("coefficients must be finite")
    nz = np.flatnonzero(c)
    if nz.size == 0:
        raise ValueError("the zero polynomial has no isolated roots")
    return c[nz[0]:]


def _quadratic(a, b, c):
    """Complex roots of ``a z^2 + b z + c``, avoiding cancellation."""
    disc = cmath.sqrt(b * b - 4 * a * c)
    q = -0.5 * (b + disc if (b.conjugate() * disc).real >= 0 else b - disc)
    if q == 0:
        return [0j, 0j]
    return [q / a, c / q]


def _cbrt(z):
    if isinstance(z, complex) or z < 0:
        z = complex(z)
        if z.imag == 0 and z.real < 0:
            return complex(-((-z.real) ** (1 / 3)), 0.0)
        return z ** (1 / 3) if z != 0 else 0j
    return complex(z ** (1 / 3))


def _cubic_complex(c):
    """All three complex roots of a monic-normalisable cubic (Cardano)."""
    a, b, cc, d = (complex(x) for x in c)
    b, cc, d = b / a, cc / a, d / a
    p = cc - b * b / 3
    q = 2 * b ** 3 / 27 - b * cc / 3 + d
    disc = cmath.sqrt((q / 2) ** 2 + (p / 3) ** 3)
    # larger-magnitude branch keeps u away from zero
    s1, s2 = -q / 2 + disc, -q / 2 - disc
    u = _cbrt(s1 if abs(s1) >= abs(s2) else s2)
    shift = -b / 3
    if u == 0:
        return [shift] * 3
    roots = []
    for k in range(3):
        uk = u * _OMEGA ** k
        roots.append(uk - p / (3 * uk) + shift)
    return roots


def _quartic_complex(c):
    """All four complex roots of a quartic via Ferrari's resolvent."""
    a0 = complex(c[0])
    a, b, cc, d = (complex(x) / a0 for x in c[1:])
    p = b - 3 * a * a / 8
    q = cc - a * b / 2 + a ** 3 / 8
    r = d - a * cc / 4 + a * a * b / 16 - 3 * a ** 4 / 256
    shift = -a / 4
    if abs(q) <= 1e-14 * (1 + abs(p) ** 1.5 + abs(r) ** 0.75):
        ys = []
        for z in _quadratic(1 + 0j, p, r):
            s = cmath.sqrt(z)
            ys += [s, -s]
        return [y + shift for y in ys]
    ms = _cubic_complex([8.0, 8 * p, 2 * p * p - 8 * r, -q * q])
    m = max(ms, key=abs)
    s = cmath.sqrt(2 * m)
    ys = _quadratic(1 + 0j, s, p / 2 + m - q / (2 * s))
    ys += _quadratic(1 + 0j, -s, p / 2 + m + q / (2 * s))
    return [y + shift for y in ys]


def _polish(c, x, steps=3):
    dc = np.polyder(c)
    fx = np.polyval(c, x)
    for _ in range(steps):
        d = np.polyval(dc, x)
        if d == 0 or fx == 0:
            break
        step = fx / d
        # near a multiple root Newton steps blow up; polishing is local only
        if abs(step) > 1e-6 * (1 + abs(x)):
            break
        xn = x - step
        fn = np.polyval(c, xn)
        if not abs(fn) < abs(fx):
            break
        x, fx = xn, fn
    return x


def _eval_floor(c, x):
    """Rounding-noise level of evaluating ``c`` at ``x``."""
    return 64 * np.finfo(float).eps * float(np.polyval(np.abs(c), abs(x)))


def _merge(c, roots):
    # a pair is one multiple root when p at the midpoint is lost in rounding
    out = []
    for r in sorted(roots):
        if out:
            prev = out[-1][-1]
            mid = 0.5 * (prev + r)
            if (abs(r - prev) <= _MERGE_TOL * (1 + abs(r))
                    or abs(np.polyval(c, mid)) <= _eval_floor(c, mid)):
                out[-1].append(r)
                continue
        out.append([r])
    return [float(np.mean(g)) for g in out]


def _real_candidates(c, croots):
    cand = []
    for z in croots:
        if abs(z.imag) <= _IMAG_TOL * (1 + abs(z.real)):
            cand.append(_polish(c, float(z.real)))
    return cand


def _companion_real_roots(c):
    ev = np.roots(c)
    return _real_candidates(c, [complex(z) for z in ev])


def _low_degree(c):
    if c.size == 1:
        return []
    if c.size == 2:
        return [-c[1] / c[0]]
    return [float(z.real) for z in _quadratic(complex(c[0]), complex(c[1]), complex(c[2]))
            if abs(z.imag) <= _IMAG_TOL * (1 + abs(z.real))]


def _solve(coeffs, closed_form):
    c = _trim(coeffs)
    if c.size <= 3:
        roots = [_polish(c, r) for r in _low_degree(c)]
    elif c.size == 4:
        roots = _real_candidates(c, _cubic_complex(c))
    else:
        roots = _real_candidates(c, closed_form(c))
    def ok(r):
        return math.isfinite(r) and abs(np.polyval(c, r)) <= residual_bound(c, r)

    if not all(map(ok, roots)):
        roots = [r for r in _companion_real_roots(c) if ok(r)]
    return _merge(c, roots)


def cubic_real_roots(coeffs) -> list[float]:
    """Distinct real roots of a polynomial of degree at most three.

    Leading zero coefficients reduce the degree. Raises ``ValueError`` for
    the zero polynomial.

    >>> cubic_real_roots([1, 0, 0, -1])
    [1.0]
    """
    if len(_trim(coeffs)) > 4:
        raise ValueError("degree exceeds 3")
    return _solve(coeffs, _cubic_complex)


def quartic_real_roots(coeffs) -> list[float]:
    """Distinct real roots of a polynomial of degree at most four."""
    if len(_trim(coeffs)) > 5:
        raise ValueError("degree exceeds 4")
    return _solve(coeffs, _quartic_complex)


def monotone_root(f, lo: float, hi: float, tol: float = 1e-12) -> float:
    """Root of a continuous ``f`` that changes sign on ``[lo, hi]``.

    Brent's method; iterates never leave the bracket. Raises
    :class:`BracketError` when ``f(lo)`` and ``f(hi)`` have the same strict
    sign.
    """
    if not lo <= hi:
        raise BracketError(f"empty interval [{lo}, {hi}]")
    flo, fhi = f(lo), f(hi)
    if flo == 0:
        return float(lo)
    if fhi == 0:
        return float(hi)
    if np.sign(flo) == np.sign(fhi):
        raise BracketError(f"no sign change on [{lo}, {hi}]: f={flo:.3g}, {fhi:.3g}")
    return float(optimize.brentq(f, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps,
                                 maxiter=500))


def largest_real_root_cubic(c3, c2, c1, c0):
    """Largest real root of ``c3 x^3 + c2 x^2 + c1 x + c0``, elementwise.

    Vectorised Cardano / trigonometric form; every ``c3`` must be nonzero.
    Used by the batched ADMM kernels, which polish the result against the
    unexpanded secular equation afterwards.
    """
    c3, c2, c1, c0 = np.broadcast_arrays(*(np.asarray(x, float) for x in (c3, c2, c1, c0)))
    b, c, d = c2 / c3, c1 / c3, c0 / c3
    p = c - b * b / 3
    q = 2 * b ** 3 / 27 - b * c / 3 + d
    disc = (q / 2) ** 2 + (p / 3) ** 3
    out = np.empty_like(b)

    one = disc > 0
    if np.any(one):
        qs, ps, ds = q[one], p[one], np.sqrt(disc[one])
        u = np.cbrt(-qs / 2 - np.where(qs >= 0, ds, -ds))
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(u != 0, u - ps / (3 * u), 0.0)
        out[one] = t

    three = ~one
    if np.any(three):
        ps, qs = p[three], q[three]
        rad = np.sqrt(np.maximum(-ps / 3, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            arg = np.where(rad > 0, -qs / (2 * rad ** 3), 0.0)
        out[three] = 2 * rad * np.cos(np.arccos(np.clip(arg, -1.0, 1.0)) / 3)
    return out - b / 3
