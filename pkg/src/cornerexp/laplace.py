"""Formal corner expansion of Laplace eigenfunctions at theta0 = pi/2.

The expansion u = sum_j rho^(n-s+j) log(rho)^k c_jk(theta, x) is built order
by order: away from the spectral parameters each slice is a Green's solve
for the scalar indicial operator; at a root order s + q the slice problem
couples neighboring log(rho) levels and is handled by the ladder operator
J_{s+q} (solve_J), introducing one new power of log(rho) at even q.

The log(rho) ladder coefficients follow from d/drho applied to
rho^nu log^k(rho): the log^(k-1) coefficient is k (2 nu + 1 - n), the
derivative of the indicial polynomial nu(nu+1-n).
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import IllConditioned, InvalidParams, NotHalfPi
from .geometry import laplace_residual
from .rhoseries import RhoLogExpansion
from .sturm import (
    IndicialParams,
    apply_indicial,
    greens_solve,
    is_at_root,
    kernel_fn,
    lambda_nu,
    project_obstruction,
)
from .thetagrid import LogThetaSeries


def _middle_coefficient(n, nu, k):
    """Ladder coefficient of log^(k-1) when the operator hits rho^nu log^k."""
    return k * (2.0 * nu + 1.0 - n)


def apply_J(n, s, q, slices, theta0=math.pi / 2):
    """J_{s+q} on an E-form slice {log power k: coefficient in A^0}.

    Returns the F-form slice {k: I_{s,s+q}(b_k) + (k+1) m (sin^2) b_{k+1}
    + (k+1)(k+2) (sin^2) b_{k+2}} with m = 2(s+q)+1-n.
    """
    nu = s + q
    p = IndicialParams(int(n), float(s), float(theta0), float(nu))
    out = {}
    kmax = max(slices.keys(), default=0)
    for k in range(0, kmax + 1):
        total = None
        if k in slices:
            total = apply_indicial(p, slices[k])
        if (k + 1) in slices:
            term = slices[k + 1].mul_sin_power(2.0).scale(
                _middle_coefficient(n, nu, k + 1)
            )
            total = term if total is None else total + term
        if (k + 2) in slices:
            term = slices[k + 2].mul_sin_power(2.0).scale((k + 1.0) * (k + 2.0))
            total = term if total is None else total + term
        if total is not None:
            out[k] = total
    return out


def solve_J(n, s, q, slices, theta0=math.pi / 2, kernel_coefficient=None):
    """Invert J_{s+q} on an F-form slice by descending log(rho) powers.

    For q odd the inverse is unique.  For q even the top log power is a
    kernel multiple fixed by orthogonality of the next level down, and the
    remaining kernel freedom at each level is resolved the same way; the
    log^0 kernel component defaults to zero (or to `kernel_coefficient`).
    """
    nu = s + q
    p = IndicialParams(int(n), float(s), float(theta0), float(nu))
    at_root = is_at_root(p)
    if q % 2 == 1 and at_root:
        raise InvalidParams("odd offsets from s cannot be spectral at pi/2")
    kmax_in = max(slices.keys(), default=0)
    K = kmax_in + (1 if at_root else 0)
    grid = next(iter(slices.values())).grid

    beta = kernel_fn(p, grid) if at_root else None
    if at_root:
        sin2_beta = beta.mul_sin_power(2.0)
        den_pair = _pair(sin2_beta, beta, p)

    b = {}
    for k in range(K, -1, -1):
        rhs = slices.get(k)
        rhs = rhs if rhs is not None else _zero_like(slices, grid)
        if (k + 1) in b:
            rhs = rhs - b[k + 1].mul_sin_power(2.0).scale(
                _middle_coefficient(n, nu, k + 1)
            )
        if (k + 2) in b:
            rhs = rhs - b[k + 2].mul_sin_power(2.0).scale((k + 1.0) * (k + 2.0))
        if at_root:
            if k == K:
                # top level: pure kernel multiple, fixed one level down
                b[k] = beta.scale(0.0)
                continue
            # fix the kernel part of b_{k+1} so this level is solvable
            proj = _pair(rhs, beta, p)
            delta = proj / (_middle_coefficient(n, nu, k + 1) * den_pair)
            if np.ndim(delta):
                corr = beta.map_values(lambda v: np.multiply.outer(delta, v))
            else:
                corr = beta.scale(delta)
            b[k + 1] = b[k + 1] + corr
            rhs = rhs - corr.mul_sin_power(2.0).scale(
                _middle_coefficient(n, nu, k + 1)
            )
        b[k] = greens_solve(p, rhs)
    if at_root and kernel_coefficient is not None:
        kc = np.asarray(kernel_coefficient)
        if kc.ndim:
            b[0] = b[0] + beta.map_values(lambda v: np.multiply.outer(kc, v))
        else:
            b[0] = b[0] + beta.scale(complex(kc))
    return b


def _pair(f, beta, p):
    prod = f.mul_with(beta, lambda x, y: x * y)
    return prod.integrate_weighted(-(p.n + 1.0))


def _zero_like(slices, grid):
    any_slice = next(iter(slices.values()))
    shape = any_slice.shape
    return LogThetaSeries(grid, [(0.0, 0, np.zeros(shape + (grid.N,), dtype=complex))])


@dataclass
class LaplaceExpansion:
    u: RhoLogExpansion
    order_achieved: int
    log_onset: object  # (j, k) of the first log(rho) term, or None
    slice_residuals: list


def expand_eigenfunction(problem, metric, order, forcing=None, upsilon=None):
    """Order-by-order eigenfunction expansion u with (Delta+s(n-s))u = forcing.

    problem supplies n, s and the Dirichlet field psi on S; metric is the
    NormalFormMetricJet (theta0 must be pi/2).  upsilon maps the root index
    j >= 0 to the free kernel coefficient at order s + 2j (default zero).
    """
    n = problem.n
    s = problem.s
    ctx = metric.ctx
    grid = ctx.grid
    if abs(grid.theta0 - math.pi / 2.0) > 1e-12:
        raise NotHalfPi("the Laplace expansion is implemented at theta0 = pi/2")
    if s is None or not s > n / 2.0:
        raise InvalidParams("need s > n/2")
    if metric.trunc < order:
        raise InvalidParams("metric jet truncation below requested order")
    upsilon = upsilon or {}
    two_s_int = abs(2.0 * s - round(2.0 * s)) < 1e-9

    psi = np.asarray(
        problem.psi_boundary
        if problem.psi_boundary is not None
        else ctx.scalar_mode_array(1.0)
    )
    u = RhoLogExpansion(ctx, "scalar", order, base=float(n - s))
    seed = np.multiply.outer(psi, grid.sinc ** (n - s) * np.ones(grid.N))
    u.set_term(0, 0, LogThetaSeries(grid, [(float(n - s), 0, seed)]))

    log_onset = None
    slice_residuals = []
    for j in range(0, order + 1):
        R = laplace_residual(metric, s, u)
        if forcing is not None:
            R = R - forcing
        R = R.truncated(order)
        slices = _collect_slice(R, j)
        scale = max(R.norm(), 1.0)
        mag = max((c.norm() for c in slices.values()), default=0.0)
        slice_residuals.append(mag)
        nu = n - s + j
        q = nu - s
        root = two_s_int and abs(q - round(q)) < 1e-9 and round(q) >= 0 and (
            int(round(q)) % 2 == 0
        )
        kc = upsilon.get(int(round(q)) // 2) if root else None
        if kc is not None and np.ndim(kc) == 0:
            kc = ctx.scalar_mode_array(complex(kc))
        if mag <= 1e-11 * scale:
            if kc is not None:
                p = IndicialParams(n, s, grid.theta0, nu)
                beta = kernel_fn(p, grid)
                kc_arr = np.asarray(kc)
                u.add_term(
                    j, 0, beta.map_values(lambda v: np.multiply.outer(kc_arr, v))
                )
            continue
        neg = {k: c.scale(-1.0) for k, c in slices.items()}
        b = solve_J(n, s, q, neg, theta0=grid.theta0, kernel_coefficient=kc)
        for k, bk in sorted(b.items()):
            if bk.norm() > 1e-13 * max(1.0, scale):
                u.add_term(j, k, bk)
                if k >= 1 and log_onset is None:
                    log_onset = (j, k)

    R = laplace_residual(metric, s, u)
    if forcing is not None:
        R = R - forcing
    R = R.truncated(order)
    final = max(
        (c.norm() for (jj, kk), c in R.terms.items() if jj <= order), default=0.0
    )
    if final > 1e-7 * max(R.norm(), 1.0, u.norm()):
        raise IllConditioned(f"expansion residual {final:.2e} did not close")
    return LaplaceExpansion(
        u=u, order_achieved=order, log_onset=log_onset, slice_residuals=slice_residuals
    )


def _collect_slice(R, j):
    """Log-power slices of the rho-order-j coefficients of R."""
    out = {}
    for (jj, kk), c in R.terms.items():
        if jj == j and c.norm() > 0.0:
            out[kk] = c if kk not in out else out[kk] + c
    return out
