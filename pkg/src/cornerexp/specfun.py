"""Gauss hypergeometric 2F1 on [0,1) and Gegenbauer polynomials.

2F1 is summed directly for x <= 0.5 and through the Euler transformation
2F1(a,b;c;x) = (1-x)^(c-a-b) 2F1(c-a,c-b;c;x) for x > 0.5, which keeps the
effective argument at most 1/2 away from the singular point for the
parameter ranges this library meets (the argument is sin^2(theta/2) with
theta < pi).  Values for x > 0.9 are flagged as potentially degraded.
"""

import math
from dataclasses import dataclass

from .errors import InvalidParams, NonConvergence

_MAX_TERMS = 10_000
_REL_TOL = 1e-16


def _is_nonpositive_integer(z, tol=1e-12):
    return z <= tol and abs(z - round(z)) < tol


@dataclass
class Hyp2F1Result:
    value: float
    terms_used: int
    degraded: bool


def _series(a, b, c, x):
    """Direct power series; terminates exactly for nonpositive-integer a or b."""
    if _is_nonpositive_integer(a) or _is_nonpositive_integer(b):
        kmax = int(round(-a)) if _is_nonpositive_integer(a) else int(round(-b))
        if _is_nonpositive_integer(a) and _is_nonpositive_integer(b):
            kmax = min(int(round(-a)), int(round(-b)))
        total = 1.0
        term = 1.0
        for k in range(kmax):
            term *= (a + k) * (b + k) / (c + k) / (k + 1) * x
            total += term
        return total, kmax + 1
    total = 1.0
    term = 1.0
    below = 0
    for k in range(_MAX_TERMS):
        term *= (a + k) * (b + k) / (c + k) / (k + 1) * x
        total += term
        if abs(term) <= _REL_TOL * max(abs(total), 1e-300):
            below += 1
            if below >= 2:
                return total, k + 1
        else:
            below = 0
    raise NonConvergence(
        f"2F1 series did not converge for a={a}, b={b}, c={c}, x={x}"
    )


def hyp2f1_full(a, b, c, x):
    """2F1(a,b;c;x) for 0 <= x < 1, with convergence metadata."""
    if _is_nonpositive_integer(c):
        raise InvalidParams(f"c = {c} is a non-positive integer")
    if not (0.0 <= x < 1.0):
        raise InvalidParams(f"argument x = {x} outside [0, 1)")
    degraded = x > 0.9
    if x == 0.0:
        return Hyp2F1Result(1.0, 1, False)
    if x <= 0.5 or _is_nonpositive_integer(a) or _is_nonpositive_integer(b):
        val, k = _series(a, b, c, x)
        return Hyp2F1Result(val, k, degraded)
    # Euler transformation; c-a or c-b may itself terminate
    val, k = _series(c - a, c - b, c, x)
    return Hyp2F1Result((1.0 - x) ** (c - a - b) * val, k, degraded)


def hyp2f1(a, b, c, x):
    return hyp2f1_full(a, b, c, x).value


def hyp2f1_deriv(a, b, c, x):
    """d/dx 2F1(a,b;c;x) = (ab/c) 2F1(a+1,b+1;c+1;x)."""
    if _is_nonpositive_integer(c):
        raise InvalidParams(f"c = {c} is a non-positive integer")
    return a * b / c * hyp2f1(a + 1.0, b + 1.0, c + 1.0, x)


def gegenbauer(k, alpha, x):
    """Gegenbauer polynomial C_k^alpha(x) by the three-term recurrence.

    Supports scalar or array x; alpha > -1/2, k >= 0.
    """
    if k < 0 or k != int(k):
        raise InvalidParams(f"degree must be a non-negative integer, got {k}")
    k = int(k)
    if alpha <= -0.5:
        raise InvalidParams(f"alpha must exceed -1/2, got {alpha}")
    import numpy as np

    x = np.asarray(x, dtype=float)
    c_prev = np.ones_like(x)
    if k == 0:
        return c_prev if c_prev.ndim else float(c_prev)
    c_cur = 2.0 * alpha * x
    for m in range(2, k + 1):
        c_next = (2.0 * x * (m + alpha - 1.0) * c_cur - (m + 2.0 * alpha - 2.0) * c_prev) / m
        c_prev, c_cur = c_cur, c_next
    return c_cur if c_cur.ndim else float(c_cur)
