"""Indicial operator I_{s,nu}, the Sturm-Liouville operator L_s, its
spectrum, and the Green's-operator boundary value solver.

The scalar indicial operator on [0, theta0] is

    I(u) = sin^2(t) u'' + (1-n) sin(t)cos(t) u' + nu(nu+1-n) sin^2(t) u
           + s(n-s) u,

with Dirichlet-type condition sin^(s-n)u -> 0 at 0 and the Robin condition
u'(t0) + (s-n)cot(t0)u(t0) = 0.  Substituting u = sin^(n-s) v turns the
problem into (L_s - lambda_nu) v = -sin^(s-n) f with v(0) = 0, v'(t0) = 0,
where lambda_nu = nu(nu+1-n).  The production solver collocates the
substituted equation level-by-level in powers of log(theta); the classical
Green's-formula inverse is kept in the test suite as an independent oracle.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import (
    IllConditioned,
    InvalidParams,
    NotAtRoot,
    ObstructedRHS,
    RootScanExhausted,
)
from .specfun import hyp2f1, hyp2f1_full, gegenbauer
from .thetagrid import LogThetaSeries, ThetaGrid

_ROOT_TOL = 1e-8  # |nu - root| below this counts as "at an indicial root"


@dataclass(frozen=True)
class IndicialParams:
    n: int
    s: float
    theta0: float
    nu: float

    def __post_init__(self):
        if self.n < 2:
            raise InvalidParams("need n >= 2")
        if not self.s > self.n / 2.0:
            raise InvalidParams(f"need s > n/2, got s={self.s}, n={self.n}")
        if not (0.0 < self.theta0 < math.pi):
            raise InvalidParams(f"theta0 must lie in (0, pi), got {self.theta0}")

    @property
    def lam(self):
        return lambda_nu(self.n, self.nu)


def lambda_nu(n, nu):
    return nu * (nu + 1.0 - n)


def nu_from_lambda(n, lam):
    """Spectral parameter nu >= (n-1)/2 with nu(nu+1-n) = lam."""
    return 0.5 * ((n - 1.0) + math.sqrt((n - 1.0) ** 2 + 4.0 * lam))


# ---------------------------------------------------------------------------
# operators


def apply_indicial(p, u):
    """I_{s,nu} applied to a LogThetaSeries, exact in the term ledger."""
    g = u.grid
    n, s, lam = p.n, p.s, p.lam
    du = u.deriv()
    ddu = du.deriv()
    out = ddu.mul_sin_power(2)
    out = out + du.mul_sin_power(1).mul_smooth(g.cos).scale(1.0 - n)
    out = out + u.mul_sin_power(2).scale(lam)
    out = out + u.scale(s * (n - s))
    return out


def apply_Ls(n, s, v):
    """L_s v = -v'' + (2s-n-1) cot(t) v' + (s-1)(s-n) v."""
    g = v.grid
    dv = v.deriv()
    ddv = dv.deriv()
    # cot(t) v' = (t cot t) v' / t; t*cot(t) is smooth on [0, pi)
    tcot = g.cos / g.sinc
    out = ddv.scale(-1.0)
    out = out + dv.mul_smooth(tcot).shift_exponent(-1.0).scale(2.0 * s - n - 1.0)
    out = out + v.scale((s - 1.0) * (s - n))
    return out


# ---------------------------------------------------------------------------
# eigenvalue characteristic and spectrum


def eigen_char(n, s, theta0, nu):
    """LHS - RHS of the hypergeometric characteristic equation.

    Zero exactly at the spectral parameters of L_s on [0, theta0].
    """
    x = math.sin(theta0 / 2.0) ** 2
    c = s - n / 2.0 + 1.0
    f1 = hyp2f1(s - nu, nu + s - n + 1.0, c, x)
    f2 = hyp2f1(s - nu + 1.0, nu + s - n + 2.0, c + 1.0, x)
    lhs = (2.0 * s - n) / math.tan(theta0) / math.sin(theta0) * f1
    rhs = (nu - s) * (nu + s - n + 1.0) / (2.0 * s - n + 2.0) * f2
    return lhs - rhs


def _bisect(f, a, b, fa, fb, tol=1e-12, maxit=200):
    for _ in range(maxit):
        m = 0.5 * (a + b)
        fm = f(m)
        if fm == 0.0 or (b - a) < tol:
            return m
        if (fa < 0) != (fm < 0):
            b, fb = m, fm
        else:
            a, fa = m, fm
    return 0.5 * (a + b)


def spectral_parameters(n, s, theta0, count, method="auto", scan_step=0.05):
    """The lowest `count` spectral parameters nu >= (n-1)/2.

    At theta0 = pi/2 the closed form nu_k = s + 2k is used (and cross-checked
    against the characteristic equation) unless method='scan'.
    """
    at_half_pi = abs(theta0 - math.pi / 2.0) < 1e-13
    if method == "closed" or (method == "auto" and at_half_pi):
        if not at_half_pi:
            raise InvalidParams("closed form available only at theta0 = pi/2")
        nus = [s + 2.0 * k for k in range(count)]
        for nu in nus:
            if abs(eigen_char(n, s, theta0, nu)) > 1e-8 * max(1.0, abs(nu) ** 2):
                raise IllConditioned(
                    f"closed-form root nu={nu} fails the characteristic equation"
                )
        return nus

    def f(nu):
        return eigen_char(n, s, theta0, nu)

    lo = (n - 1.0) / 2.0 + 1e-9
    roots = []
    width = max(4.0, 2.0 * count + s)
    for attempt in range(5):
        hi = lo + width
        grid = np.arange(lo, hi, scan_step)
        vals = np.array([f(x) for x in grid])
        roots = []
        for i in range(len(grid) - 1):
            if not (np.isfinite(vals[i]) and np.isfinite(vals[i + 1])):
                continue
            if vals[i] == 0.0:
                roots.append(grid[i])
            elif (vals[i] < 0) != (vals[i + 1] < 0):
                roots.append(
                    _bisect(f, grid[i], grid[i + 1], vals[i], vals[i + 1])
                )
            if len(roots) >= count:
                break
        if len(roots) >= count:
            return roots[:count]
        width *= 2.0
    raise RootScanExhausted(
        f"found {len(roots)} < {count} roots for n={n}, s={s}, theta0={theta0}"
    )


def eigenfunction(n, s, theta0, nu, grid):
    """L_s eigenfunction w(theta) = sin^(2s-n) 2F1(...; sin^2(theta/2)).

    Normalized by w/theta^(2s-n) -> 1 at theta = 0.
    """
    a = s - nu
    b = nu + s - n + 1.0
    c = s - n / 2.0 + 1.0
    x = np.sin(grid.nodes / 2.0) ** 2
    F = np.array([hyp2f1(a, b, c, xi) for xi in x])
    return LogThetaSeries.sin_power(grid, 2.0 * s - n, F)


@dataclass
class SpectrumEntry:
    nu: float
    lam: float
    eigenfunction: LogThetaSeries
    char_residual: float


@dataclass
class SpectrumResult:
    n: int
    s: float
    theta0: float
    entries: list

    @property
    def nus(self):
        return [e.nu for e in self.entries]

    @property
    def lams(self):
        return [e.lam for e in self.entries]


def spectrum(n, s, theta0, count, grid=None, method="auto"):
    if count < 1:
        raise InvalidParams("count must be >= 1")
    if grid is None:
        grid = ThetaGrid(theta0, 64)
    nus = spectral_parameters(n, s, theta0, count, method=method)
    entries = []
    for nu in nus:
        w = eigenfunction(n, s, theta0, nu, grid)
        entries.append(
            SpectrumEntry(
                nu=nu,
                lam=lambda_nu(n, nu),
                eigenfunction=w,
                char_residual=abs(eigen_char(n, s, theta0, nu)),
            )
        )
    return SpectrumResult(n=n, s=s, theta0=theta0, entries=entries)


@lru_cache(maxsize=256)
def _cached_roots(n, s, theta0, nu_max):
    count = max(1, int((nu_max - (n - 1) / 2.0) / 2.0) + 2)
    try:
        roots = spectral_parameters(n, s, theta0, count, method="scan")
    except RootScanExhausted:
        roots = []
    return tuple(roots)


def nearest_root(n, s, theta0, nu):
    roots = _cached_roots(n, s, theta0, nu + 4.0)
    if not roots:
        return None
    return min(roots, key=lambda r: abs(r - nu))


def is_at_root(p):
    r = nearest_root(p.n, p.s, p.theta0, p.nu)
    return r is not None and abs(r - p.nu) < _ROOT_TOL


# ---------------------------------------------------------------------------
# kernel and projections


def kernel_fn(p, grid=None):
    """beta_{s,nu} = sin^(n-s) q spanning ker I_{s,nu}, q/theta^(2s-n) -> 1."""
    if not is_at_root(p):
        raise NotAtRoot(f"lambda_nu(nu={p.nu}) is not an eigenvalue of L_s")
    if grid is None:
        grid = ThetaGrid(p.theta0, 64)
    w = eigenfunction(p.n, p.s, p.theta0, p.nu, grid)
    return w.mul_sin_power(p.n - p.s)


def project_obstruction(f, p, grid=None):
    """<f, beta_{s,nu}> with respect to sin^-(n+1) d(theta)."""
    beta = kernel_fn(p, grid if grid is not None else f.grid)
    prod = f.mul_with(beta, lambda x, y: x * y)
    return prod.integrate_weighted(-(p.n + 1.0))


def _kernel_component(u, p):
    """Coefficient of the kernel function in u under the L_s eigenfunction
    inner product: <sin^(s-n)u, sin^(s-n)beta> with weight sin^(n+1-2s),
    which equals <u, beta> with weight sin^(1-n)."""
    beta = kernel_fn(p, u.grid)
    num = u.mul_with(beta, lambda x, y: x * y).integrate_weighted(1.0 - p.n)
    den = beta.mul_with(beta, lambda x, y: x * y).integrate_weighted(1.0 - p.n)
    return num / den


# ---------------------------------------------------------------------------
# Green's-operator solve by global spectral collocation


def _levels_of(f, tol_rel=1e-13):
    scale = max(f.norm(), 1e-300)
    K = 0
    for a, i, v in f.terms:
        if np.max(np.abs(v)) > tol_rel * scale:
            K = max(K, i)
    return K


class _SolverData:
    """Cached per-(grid, n, s, theta0, nu) collocation machinery.

    The substituted problem A_v(v) = sin^(s-n) f is solved level-by-level
    in descending powers of log(theta), with v = sum_i theta^(i beta)
    log^i(theta) c_i and beta = 2s - n.  Levels i >= 2 are determined by
    the operator alone; level 1 carries a one-parameter kernel freedom
    that is fixed by the theta^beta indicial obstruction of the level-0
    equation; level 0 takes the Dirichlet and (total) Robin rows.
    """

    def __init__(self, grid, n, s, theta0, nu, at_root):
        from scipy.linalg import lu_factor

        self.grid = grid
        self.n, self.s, self.nu = n, s, nu
        self.beta = 2.0 * s - n
        self.at_root = at_root
        N = grid.N
        t, sin, cos, sinc = grid.nodes, grid.sin, grid.cos, grid.sinc
        D = grid.diff
        lam = lambda_nu(n, nu)
        csl = lam - (s - 1.0) * (s - n)
        beta = self.beta

        def M_block(b):
            c2 = sin**2
            c1 = 2.0 * b * t * sinc**2 + (n + 1.0 - 2.0 * s) * sin * cos
            c0 = (
                b * (b - 1.0) * sinc**2
                + (n + 1.0 - 2.0 * s) * b * cos * sinc
                + csl * sin**2
            )
            return c2[:, None] * (D @ D) + c1[:, None] * D + np.diag(c0)

        def B_block(b_hi):
            # couples level i+1 into the level-i equation (rebased there)
            pref = t**beta
            c1 = pref * 2.0 * t * sinc**2
            c0 = pref * (
                (2.0 * b_hi - 1.0) * sinc**2 + (n + 1.0 - 2.0 * s) * cos * sinc
            )
            return c1[:, None] * D + np.diag(c0)

        self.B = B_block
        self.C = np.diag(t ** (2.0 * beta) * sinc**2)

        # level-0 matrix with Dirichlet and Robin rows
        M0 = M_block(0.0)
        M0[0, :] = 0.0
        M0[0, 0] = 1.0
        M0[N - 1, :] = D[N - 1, :]
        self.M0 = M0
        self.lu0 = None if at_root else lu_factor(M0)

        # kernel direction of the substituted operator, smooth at level >= 1
        x = np.sin(t / 2.0) ** 2
        F = np.array(
            [hyp2f1(s - nu, nu + s - n + 1.0, s - n / 2.0 + 1.0, xi) for xi in x]
        )
        self.q_w = sinc**beta * F

        self._lev_lu = {}
        self._lev_mat = {}
        self._B_mats = {}
        self._M_block = M_block
        self._lu_factor = lu_factor

        # Frobenius data of the substituted operator at theta = 0:
        # A_v(theta^m) = sum_j K_j(m) theta^(m+2j), K_0(m) = m(m+n-2s)
        self.mstar = int(round(beta)) if abs(beta - round(beta)) < 1e-9 else None
        if self.mstar is not None:
            jmax = self.mstar // 2 + 1
            sig = [0.0] + [
                (-1.0) ** (r + 1) * 2.0 ** (2 * r - 1) / math.factorial(2 * r)
                for r in range(1, jmax + 2)
            ]
            tau = [0.0] + [
                (-1.0) ** (r + 1) * 2.0 ** (2 * r - 2) / math.factorial(2 * r - 1)
                for r in range(1, jmax + 2)
            ]

            def K(j, m):
                out = m * (m - 1.0) * sig[j + 1] + m * (n + 1.0 - 2.0 * s) * tau[j + 1]
                if j >= 1:
                    out += csl * sig[j]
                return out

            self._K = K

    def obstruction(self, R):
        """The theta^beta Frobenius obstruction of the level-0 equation.

        R: (ncols, N) nodal right-hand sides.  Runs the Taylor recursion
        c_m = [R_m - couplings]/P(m) from the Dirichlet root m = 0 up to
        the resonant exponent m* = beta and returns the residual there.
        """
        g = self.grid
        mstar = self.mstar
        tay = g.taylor_at_zero(R, mstar + 1)  # (ncols, mstar+1)
        ncols = R.shape[0]
        cm = np.zeros((ncols, mstar + 1), dtype=tay.dtype)
        for m in range(1, mstar + 1):
            acc = tay[:, m].copy()
            for j in range(1, m // 2 + 1):
                acc -= self._K(j, m - 2 * j) * cm[:, m - 2 * j]
            if m < mstar:
                P = m * (m + self.n - 2.0 * self.s)
                cm[:, m] = acc / P
            else:
                return acc
        raise AssertionError("unreachable")

    def level_matrix(self, i):
        from scipy.linalg import lu_factor

        if i not in self._lev_lu:
            N = self.grid.N
            M = self._M_block(i * self.beta)
            if i == 1:
                M[0, :] = self.q_w  # pin the kernel direction; delta added later
            self._lev_mat[i] = M
            self._lev_lu[i] = lu_factor(M)
        return self._lev_lu[i]

    def B_matrix(self, i_hi):
        if i_hi not in self._B_mats:
            self._B_mats[i_hi] = self.B(i_hi * self.beta)
        return self._B_mats[i_hi]


@lru_cache(maxsize=128)
def _solver_data(grid_key, n, s, theta0, nu, at_root):
    grid = ThetaGrid(theta0, grid_key[1])
    return _SolverData(grid, n, s, theta0, nu, at_root)


def _rhs_levels(f, p, K):
    """RHS of the substituted system, rebased per level. Shape (K+1, ..., N)."""
    g = f.grid
    n, s = p.n, p.s
    beta = 2.0 * s - n
    shape = f.shape
    r = np.zeros((K + 1,) + shape + (g.N,), dtype=complex)
    for a, i, v in f.terms:
        if i > K:
            if np.max(np.abs(v)) > 1e-12 * max(f.norm(), 1e-300):
                raise InvalidParams("input has more log levels than requested")
            continue
        e = a + (s - n) - i * beta
        if e < -1e-9:
            raise InvalidParams(
                f"term theta^{a} log^{i} lies below the B-form exponent"
            )
        e = max(e, 0.0)
        r[i] += g.nodes**e * g.sinc ** (s - n) * v
    return r


def _lu_solve_c(lu, b_cols):
    """lu_solve with real factors and complex right-hand sides (N, k)."""
    from scipy.linalg import lu_solve

    if not np.iscomplexobj(b_cols):
        return lu_solve(lu, b_cols)
    re = lu_solve(lu, np.ascontiguousarray(b_cols.real))
    im = lu_solve(lu, np.ascontiguousarray(b_cols.imag))
    return re + 1j * im


def greens_solve(p, f, check=True, smooth=False):
    """Solve I_{s,nu} u = f with the Dirichlet/Robin boundary conditions.

    f is a LogThetaSeries in B-form; the result lies in A^0-form.  When
    lambda_nu is an eigenvalue the right side must be orthogonal to the
    kernel; the returned particular solution then carries zero kernel
    component.  With smooth=True the log-resonance level is not allocated
    (valid when the solution is known to be log-free, e.g. for data even
    through the resonant order); the residual check still guards it.
    """

    g = f.grid
    n, s = p.n, p.s
    beta = 2.0 * s - n
    two_s_int = abs(2.0 * s - round(2.0 * s)) < 1e-9
    Kin = _levels_of(f)
    K = Kin if smooth else (Kin + 1 if two_s_int else 0)
    if not two_s_int and Kin > 0:
        raise InvalidParams("log-structured input requires 2s integral")

    at_root = is_at_root(p)
    if at_root:
        proj = project_obstruction(f, p, g)
        if np.max(np.abs(proj)) > max(1e-8, 1e-8 * f.norm()):
            raise ObstructedRHS(proj)

    data = _solver_data(g.key(), n, s, p.theta0, p.nu, at_root)
    N = g.N
    r = _rhs_levels(f, p, K)
    shape = f.shape
    cols = r.reshape((K + 1, -1, N))  # (level, rhs-column, node)
    ncols = cols.shape[1]
    c = np.zeros_like(cols)

    # descending solve for levels >= 1
    for i in range(K, 0, -1):
        rhs = cols[i].copy()
        if i + 1 <= K:
            rhs -= (i + 1) * (c[i + 1] @ data.B_matrix(i + 1).T)
        if i + 2 <= K:
            rhs -= (i + 1) * (i + 2) * (c[i + 2] @ data.C.T)
        if i == 1:
            rhs[:, 0] = 0.0  # kernel-pin row
        c[i] = _lu_solve_c(data.level_matrix(i), rhs.T).T

    # level-0 right side, then resolve the level-1 kernel freedom so that
    # the theta^beta indicial obstruction of the level-0 equation vanishes
    rhs0 = cols[0].copy()
    if K >= 1:
        rhs0 -= 1.0 * (c[1] @ data.B_matrix(1).T)
    if K >= 2:
        rhs0 -= 2.0 * (c[2] @ data.C.T)
    if K >= 1:
        bq = data.B_matrix(1) @ data.q_w
        den = data.obstruction(bq[None, :])[0]
        obst = data.obstruction(rhs0)
        if abs(den) < 1e-10:
            raise IllConditioned("degenerate log-resonance denominator")
        delta = obst / den
        c[1] += delta[:, None] * data.q_w
        rhs0 -= delta[:, None] * bq

    # Robin correction from the known higher levels
    t0 = g.theta0
    lg = math.log(t0)
    robin_rhs = np.zeros(ncols, dtype=complex)
    for i in range(1, K + 1):
        bi = i * beta
        ci_end = c[i][:, -1]
        dci_end = (c[i] @ g.diff.T)[:, -1]
        robin_rhs -= (
            t0 ** (bi - 1.0) * (bi * lg**i + i * lg ** (i - 1)) * ci_end
            + t0**bi * lg**i * dci_end
        )
    rhs0[:, 0] = 0.0
    rhs0[:, N - 1] = robin_rhs
    if at_root:
        sol0, *_ = np.linalg.lstsq(data.M0, rhs0.T, rcond=None)
        c[0] = sol0.T
    else:
        c[0] = _lu_solve_c(data.lu0, rhs0.T).T

    terms = []
    for i in range(K + 1):
        vals = c[i].reshape(shape + (N,))
        terms.append((n - s + i * beta, i, g.sinc ** (n - s) * vals))
    u = LogThetaSeries(g, terms).prune(1e-14)

    if at_root:
        coef = _kernel_component(u, p)
        beta_fn = kernel_fn(p, g)
        if np.ndim(coef):
            u = u + beta_fn.map_values(lambda v: -np.multiply.outer(coef, v))
        else:
            u = u + beta_fn.scale(-coef)

    if check:
        res = apply_indicial(p, u) - f
        scale = max(f.norm(), 1.0)
        # the equation rows displaced by boundary conditions (the last
        # nodes) only carry discretization error; check them loosely
        interior = max(
            (
                float(np.max(np.abs(v[..., : N - 2])))
                for _, _, v in res.terms
            ),
            default=0.0,
        )
        if interior > 1e-7 * scale or res.norm() > 1e-4 * scale:
            raise IllConditioned(
                f"collocation residual {interior:.3e} (interior) / "
                f"{res.norm():.3e} (full) exceeds tolerance"
            )
    return u


# ---------------------------------------------------------------------------
# finite-difference spectrum oracle (independent of the collocation path)


def fd_spectrum_oracle(n, s, theta0, count, npts=4000, richardson=True):
    """Second-order FD eigenvalues of L_s on a graded mesh.

    Returns the lowest `count` eigenvalues lambda_k.  A Richardson step on
    meshes of npts/2 and npts points removes the leading h^2 error.
    """
    lam_c = _fd_eigs(n, s, theta0, count, npts)
    if not richardson:
        return lam_c
    lam_h = _fd_eigs(n, s, theta0, count, npts // 2)
    return (4.0 * lam_c - lam_h) / 3.0


def _fd_eigs(n, s, theta0, count, J, grade=None):
    import scipy.sparse as sp
    from scipy.sparse.linalg import eigsh

    if grade is None:
        # eigenfunctions behave like theta^(2s-n) at 0: grade harder the
        # more singular they are, but keep entries well-scaled otherwise
        beta = 2.0 * s - n
        grade = min(4.0, max(1.0, 2.4 / beta))
    j = np.arange(J + 1)
    t = theta0 * (j / J) ** grade
    w = np.sin(t[1:]) ** (n + 1.0 - 2.0 * s)  # weight at interior/boundary nodes
    tm = 0.5 * (t[:-1] + t[1:])
    pm = np.sin(tm) ** (n + 1.0 - 2.0 * s)
    h = np.diff(t)
    # finite-volume cells around nodes 1..J (half cell at the Neumann end)
    delta = np.empty(J)
    delta[:-1] = 0.5 * (t[2:] - t[:-2])
    delta[-1] = 0.5 * h[-1]
    main = np.empty(J)
    main[:-1] = pm[:-1] / h[:-1] + pm[1:] / h[1:]
    main[-1] = pm[-1] / h[-1]
    off = -pm[1:] / h[1:]
    q = (s - 1.0) * (s - n)
    main = main + q * w * delta
    A = sp.diags([off, main, off], [-1, 0, 1], format="csc")
    M = sp.diags(w * delta, format="csc")
    # shift-invert below the bottom of the spectrum keeps the small
    # eigenvalues accurate despite the large matrix norm near theta = 0
    lam, _ = eigsh(A, k=count, M=M, sigma=q - 5.0, which="LM")
    return np.sort(lam)
