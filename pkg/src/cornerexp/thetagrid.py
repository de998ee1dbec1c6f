"""Spectral collocation on [0, theta0] and log-augmented function series.

Functions of theta are represented by their values at Chebyshev-Gauss-Lobatto
nodes mapped to [0, theta0].  A LogThetaSeries is a finite sum

    u(theta) = sum_j  theta^(a_j) * log(theta)^(i_j) * c_j(theta),

with c_j smooth (stored at the nodes).  All operators multiply the smooth
parts by bounded trigonometric factors only; singular powers of theta live in
the exponent ledger, so nothing blows up at the theta = 0 node.
"""

import math

import numpy as np

from .errors import DivergentIntegral, IllConditioned, InvalidParams

_EXP_TOL = 1e-9  # exponents closer than this are merged


def _sinc(theta):
    """sin(theta)/theta, = 1 at theta = 0."""
    out = np.ones_like(theta)
    nz = theta != 0
    out[nz] = np.sin(theta[nz]) / theta[nz]
    return out


class ThetaGrid:
    """Chebyshev-Gauss-Lobatto grid on [0, theta0].

    nodes are increasing with nodes[0] = 0 and nodes[-1] = theta0.
    `diff` is the spectral differentiation matrix in theta.
    """

    def __init__(self, theta0, N=64):
        if not (0.0 < theta0 < math.pi):
            raise InvalidParams(f"theta0 must lie in (0, pi), got {theta0}")
        if N < 16:
            raise InvalidParams(f"need at least 16 nodes, got {N}")
        self.theta0 = float(theta0)
        self.N = int(N)
        m = self.N - 1
        k = np.arange(self.N)
        x = np.cos(np.pi * k / m)  # 1 .. -1
        # theta = theta0*(1-x)/2 is increasing in k
        self.nodes = self.theta0 * (1.0 - x) / 2.0
        self.nodes[0] = 0.0
        self.nodes[-1] = self.theta0
        self._x = x
        self.diff = self._cheb_diff(m) * (-2.0 / self.theta0)
        self.sin = np.sin(self.nodes)
        self.cos = np.cos(self.nodes)
        self.sinc = _sinc(self.nodes)
        # barycentric weights for CGL nodes
        w = np.ones(self.N)
        w[0] = w[-1] = 0.5
        w *= (-1.0) ** k
        self._bary_w = w
        self._cc_w = self._clenshaw_curtis(m) * (self.theta0 / 2.0)

    @staticmethod
    def _cheb_diff(m):
        # Trefethen's collocation derivative matrix on cos(pi*k/m), k=0..m
        n = m + 1
        k = np.arange(n)
        x = np.cos(np.pi * k / m)
        c = np.ones(n)
        c[0] = c[-1] = 2.0
        c *= (-1.0) ** k
        X = np.tile(x, (n, 1)).T
        dX = X - X.T + np.eye(n)
        D = np.outer(c, 1.0 / c) / dX
        D -= np.diag(D.sum(axis=1))
        return D

    @staticmethod
    def _clenshaw_curtis(m):
        # weights on [-1,1] for the cos(pi*k/m) nodes, reordered to match
        # increasing theta (reversal is symmetric so no reorder needed)
        k = np.arange(m + 1)
        w = np.zeros(m + 1)
        v = np.ones(m - 1)
        for j in range(1, m // 2 + 1):
            fac = 2.0 if 2 * j < m else 1.0
            v -= fac * np.cos(2.0 * np.pi * j * k[1:-1] / m) / (4.0 * j * j - 1.0)
        w[1:-1] = 2.0 * v / m
        w[0] = w[-1] = 1.0 / (m * m - 1.0 + (m % 2))
        return w

    def key(self):
        return (self.theta0, self.N)

    # ----- interpolation ------------------------------------------------

    def interpolate(self, values, theta):
        """Barycentric evaluation of node data at points theta.

        values: (..., N); theta: scalar or (P,).  Returns (..., P).
        """
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        vals = np.asarray(values)
        diffs = theta[:, None] - self.nodes[None, :]  # (P, N)
        exact = np.abs(diffs) < 1e-15
        with np.errstate(divide="ignore", invalid="ignore"):
            w = self._bary_w[None, :] / diffs  # (P, N)
        hit = exact.any(axis=1)
        w[hit] = 0.0
        for p in np.nonzero(hit)[0]:
            w[p, np.argmax(exact[p])] = 1.0
        denom = w.sum(axis=1)
        return np.einsum("...n,pn->...p", vals, w) / denom

    def chebyshev_coefficients(self, values):
        """Chebyshev coefficients of the interpolant (ascending degree).

        Node i sits at x_i = cos(pi*i/m), the standard CGL ordering.
        """
        vals = np.asarray(values)
        m = self.N - 1
        ext = np.concatenate([vals, vals[..., -2:0:-1]], axis=-1)
        if np.iscomplexobj(vals):
            coef = np.fft.fft(ext, axis=-1) / m
        else:
            coef = np.fft.fft(ext, axis=-1).real / m
        coef = coef[..., : self.N]
        coef[..., 0] *= 0.5
        coef[..., -1] *= 0.5
        return coef

    def values_from_coefficients(self, coef):
        m = self.N - 1
        jk = np.outer(np.arange(self.N), np.arange(self.N))
        T = np.cos(np.pi * jk / m)  # T[j, k] = T_k(x_j)
        return coef @ T.T

    def cumulative_integral(self, values):
        """int_0^theta f for node data f, evaluated at the nodes."""
        coef = self.chebyshev_coefficients(values)
        n = self.N
        b = np.zeros_like(coef)
        # antiderivative in x; theta = theta0*(1-x)/2 so dtheta = -(theta0/2)dx
        b[..., 1] = coef[..., 0] - 0.5 * coef[..., 2]
        for k in range(2, n):
            upper = coef[..., k + 1] if k + 1 < n else 0.0
            b[..., k] = (coef[..., k - 1] - upper) / (2.0 * k)
        F = self.values_from_coefficients(b) * (-self.theta0 / 2.0)
        return F - F[..., :1]

    def taylor_at_zero(self, values, nterms):
        """Taylor coefficients at theta=0 by fitting the clustered nodes.

        Guard terms beyond the requested order absorb truncation leakage;
        the usable noise floor is ~1e-9 at order 5 on a 64-point grid.
        """
        vals = np.asarray(values)
        nfit = min(max(nterms + 6, 14), self.N - 2)
        npts = min(self.N, max(int(2.2 * nfit), nfit + 4))
        th = self.nodes[:npts]
        scale = th[-1]
        V = np.vander(th / scale, nfit, increasing=True)
        flat = vals[..., :npts].reshape(-1, npts)
        sol, res, rank, sv = np.linalg.lstsq(V, flat.T, rcond=None)
        coefs = sol.T.reshape(vals.shape[:-1] + (nfit,))
        coefs = coefs / (scale ** np.arange(nfit))
        return coefs[..., :nterms]


class ThetaFn:
    """Smooth function on the grid: node values, any leading shape."""

    def __init__(self, grid, values):
        self.grid = grid
        self.values = np.asarray(values)
        if self.values.shape[-1] != grid.N:
            raise InvalidParams("value array does not match grid size")
        if not np.all(np.isfinite(self.values)):
            raise InvalidParams("non-finite values in ThetaFn")

    @classmethod
    def from_callable(cls, grid, f, shape=()):
        vals = f(grid.nodes)
        return cls(grid, vals)

    def deriv(self):
        return ThetaFn(self.grid, self.values @ self.grid.diff.T)

    def __add__(self, other):
        return ThetaFn(self.grid, self.values + other.values)

    def __mul__(self, other):
        if isinstance(other, ThetaFn):
            return ThetaFn(self.grid, self.values * other.values)
        return ThetaFn(self.grid, self.values * other)

    __rmul__ = __mul__


class LogThetaSeries:
    """u(theta) = sum over terms (a, i): theta^a log(theta)^i c(theta).

    terms: list of (a: float, i: int, values: ndarray (..., N)).
    The list is kept sorted by (i, a) with exponents merged to 1e-9.
    """

    def __init__(self, grid, terms=()):
        self.grid = grid
        # group terms by log power and integer-offset exponent class, then
        # rebase each class to its lowest exponent so that cancellations
        # between overlapping theta^a C-inf spaces happen in the values
        groups = []  # (i, base_a, [(a, values), ...])
        for a, i, vals in terms:
            a = float(a)
            i = int(i)
            if i < 0:
                raise InvalidParams("negative log power")
            v = np.asarray(vals)
            v = v.astype(complex) if not np.iscomplexobj(v) else v
            placed = False
            for grp in groups:
                gi, ga, lst = grp
                if gi == i and abs((a - ga) - round(a - ga)) < _EXP_TOL:
                    lst.append((a, v))
                    placed = True
                    break
            if not placed:
                groups.append((i, a, [(a, v)]))
        out = []
        t = grid.nodes
        for i, ga, lst in groups:
            amin = min(a for a, _ in lst)
            total = 0.0
            for a, v in lst:
                m = round(a - amin)
                total = total + (v if m == 0 else v * t ** float(m))
            out.append((amin, i, np.asarray(total, dtype=complex)))
        out.sort(key=lambda e: (e[1], e[0]))
        self.terms = out

    # ----- constructors -------------------------------------------------

    @classmethod
    def zero(cls, grid, shape=()):
        return cls(grid, [(0.0, 0, np.zeros(shape + (grid.N,), dtype=complex))])

    @classmethod
    def smooth(cls, grid, values):
        return cls(grid, [(0.0, 0, np.asarray(values))])

    @classmethod
    def from_callable(cls, grid, f):
        return cls.smooth(grid, f(grid.nodes))

    @classmethod
    def sin_power(cls, grid, alpha, values=None):
        """sin(theta)^alpha * c(theta), stored as theta^alpha (sinc^alpha c)."""
        c = np.ones(grid.N) if values is None else np.asarray(values)
        return cls(grid, [(float(alpha), 0, c * grid.sinc**alpha)])

    # ----- inspection ---------------------------------------------------

    @property
    def shape(self):
        return self.terms[0][2].shape[:-1] if self.terms else ()

    def max_log_power(self, tol=0.0):
        p = 0
        for a, i, v in self.terms:
            if np.max(np.abs(v)) > tol:
                p = max(p, i)
        return p

    def norm(self):
        return max((np.max(np.abs(v)) for _, _, v in self.terms), default=0.0)

    def prune(self, tol=0.0):
        scale = self.norm()
        keep = [(a, i, v) for a, i, v in self.terms if np.max(np.abs(v)) > tol * scale]
        if not keep:
            keep = [(0.0, 0, np.zeros(self.shape + (self.grid.N,), dtype=complex))]
        return LogThetaSeries(self.grid, keep)

    def real_part(self):
        return LogThetaSeries(self.grid, [(a, i, v.real) for a, i, v in self.terms])

    # ----- algebra ------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, LogThetaSeries):
            return LogThetaSeries(self.grid, list(self.terms) + list(other.terms))
        raise TypeError(other)

    def __sub__(self, other):
        return self + other.scale(-1.0)

    def scale(self, factor):
        return LogThetaSeries(self.grid, [(a, i, v * factor) for a, i, v in self.terms])

    def __mul__(self, other):
        """Pointwise product; use mul_with for tensor/mode-contracted products."""
        return self.mul_with(other, lambda x, y: x * y)

    def mul_with(self, other, combine):
        terms = []
        for a1, i1, v1 in self.terms:
            for a2, i2, v2 in other.terms:
                terms.append((a1 + a2, i1 + i2, combine(v1, v2)))
        return LogThetaSeries(self.grid, terms)

    def map_values(self, f):
        return LogThetaSeries(self.grid, [(a, i, f(v)) for a, i, v in self.terms])

    def mul_smooth(self, node_values):
        """Multiply by a smooth function given by node values (broadcast)."""
        w = np.asarray(node_values)
        return LogThetaSeries(self.grid, [(a, i, v * w) for a, i, v in self.terms])

    def shift_exponent(self, da):
        return LogThetaSeries(self.grid, [(a + da, i, v) for a, i, v in self.terms])

    def mul_sin_power(self, p):
        """Multiply by sin(theta)^p keeping smooth parts bounded."""
        g = self.grid
        return LogThetaSeries(
            g, [(a + p, i, v * g.sinc**p) for a, i, v in self.terms]
        )

    def deriv(self):
        """d/dtheta with exact product-rule coupling between log powers."""
        g = self.grid
        terms = []
        for a, i, v in self.terms:
            dv = v @ g.diff.T
            terms.append((a - 1.0, i, a * v + g.nodes * dv))
            if i > 0:
                terms.append((a - 1.0, i - 1, i * v))
        return LogThetaSeries(g, terms)

    # ----- evaluation ---------------------------------------------------

    def eval(self, theta):
        """Evaluate at theta > 0 (array ok)."""
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        total = 0.0
        lg = np.log(theta)
        for a, i, v in self.terms:
            c = self.grid.interpolate(v, theta)
            total = total + theta**a * lg**i * c
        return total

    def value_at_zero(self):
        """Limit at theta=0 assuming it exists (terms with a<0 or logs ignored
        if their coefficient vanishes there)."""
        g = self.grid
        out = 0.0
        for a, i, v in self.terms:
            if abs(a) < _EXP_TOL and i == 0:
                out = out + v[..., 0]
            elif a < _EXP_TOL and np.max(np.abs(v[..., 0])) > 0:
                if a < -_EXP_TOL or i > 0:
                    raise DivergentIntegral("series is singular at theta = 0")
        return out

    def boundary_value(self):
        """(u(theta0), u'(theta0))."""
        g = self.grid
        t0 = g.theta0
        lg = math.log(t0)
        u = 0.0
        du = 0.0
        for a, i, v in self.terms:
            c = v[..., -1]
            dc = (v @ g.diff.T)[..., -1]
            u = u + t0**a * lg**i * c
            du = du + (
                a * t0 ** (a - 1) * lg**i * c
                + (i * t0 ** (a - 1) * lg ** (i - 1) * c if i > 0 else 0.0)
                + t0**a * lg**i * dc
            )
        return u, du

    # ----- structure read-off -------------------------------------------

    def leading_coefficients(self, count, nterms=8):
        """Frobenius read-off at theta = 0.

        Returns list of (exponent, log_power, value) sorted by exponent then
        log power, the `count` lowest entries.
        """
        entries = []
        for a, i, v in self.terms:
            tay = self.grid.taylor_at_zero(v, nterms)
            for m in range(nterms):
                entries.append((a + m, i, tay[..., m]))
        entries.sort(key=lambda t: (t[0], t[1]))
        out = []
        for a, i, val in entries:
            for j, (a0, i0, v0) in enumerate(out):
                if abs(a - a0) < _EXP_TOL and i == i0:
                    out[j] = (a0, i0, v0 + val)
                    break
            else:
                out.append((a, i, val))
        out.sort(key=lambda t: (t[0], t[1]))
        # residual sanity check of the local model against the grid data
        self._check_local_fit(out)
        # suppress pure fit noise
        scale = max(self.norm(), 1e-300)
        out = [e for e in out if np.max(np.abs(e[2])) > 1e-10 * scale]
        return out[:count]

    def _check_local_fit(self, entries, tol=1e-6):
        g = self.grid
        pts = g.nodes[1 : max(4, g.N // 16)]
        if len(pts) == 0:
            return
        approx = 0.0
        lg = np.log(pts)
        amax = max(a for a, i, v in entries) if entries else 0.0
        for a, i, val in entries:
            approx = approx + np.multiply.outer(val, pts**a * lg**i)
        exact = self.eval(pts)
        scale = max(np.max(np.abs(exact)), 1.0)
        err = np.max(np.abs(exact - approx)) / scale
        # truncation of the local model dominates; only flag wild failures
        if err > max(tol, 10.0 * np.max(pts) ** (amax + 1)):
            raise IllConditioned(f"local expansion fit residual {err:.2e}")

    def parity_defect(self, order):
        """Largest odd-exponent coefficient magnitude below `order`.

        Exponents are rounded to integers; zero when the function is even in
        theta through the given order.
        """
        worst = 0.0
        entries = self.leading_coefficients(count=64, nterms=min(int(order) + 2, 10))
        for a, i, val in entries:
            if a >= order - _EXP_TOL:
                continue
            a_int = round(a)
            if abs(a - a_int) > 1e-6:
                continue
            if a_int % 2 == 1:
                worst = max(worst, float(np.max(np.abs(val))))
        return worst

    # ----- integration ---------------------------------------------------

    def integrate_weighted(self, p, lower=0.0, upper=None, nloc=8):
        """integral of u(theta) sin(theta)^p dtheta over (lower, upper).

        Near theta = 0 the series form is treated term by term: divergent
        exponents are deflated against exact zeros of the nodal data (or
        raise DivergentIntegral), smooth integer-exponent terms go through
        Clenshaw-Curtis, and fractional/log terms are integrated
        analytically from an nloc-term local expansion.
        """
        g = self.grid
        if upper is None:
            upper = g.theta0
        if upper < lower:
            raise InvalidParams("upper < lower")
        total = 0.0
        theta_c = min(0.1, g.theta0 / 8.0)
        if lower == 0.0:
            split = min(theta_c, upper)
            total = total + self._integrate_near_zero(p, split, nloc)
            lower = split
        if upper > lower:
            total = total + self._integrate_cc(p, lower, upper)
        return total

    def _integrate_near_zero(self, p, split, nloc):
        g = self.grid
        drop = 1e-9 * max(self.norm(), 1e-300)
        pool = None  # smooth integrand collected for one CC pass
        total = 0.0
        for a, i, v in self.terms:
            a = a + p
            w = v * g.sinc**p
            # deflate exact zeros at theta = 0 out of divergent exponents
            while a <= -1.0 + 1e-12:
                if np.max(np.abs(w[..., 0])) > drop:
                    raise DivergentIntegral(
                        f"exponent {a} at theta=0 with nonvanishing data"
                    )
                w = self._deflate(w)
                a += 1.0
            if i == 0 and a > -1e-9 and abs(a - round(a)) < 1e-9:
                vals = w * g.nodes ** float(round(max(a, 0)))
                pool = vals if pool is None else pool + vals
            else:
                total = total + self._local_term(a, i, w, split, nloc)
        if pool is not None:
            total = total + self._cc_on_subinterval(pool, 0.0, split)
        return total

    def _deflate(self, w):
        """w / theta for nodal data with w(0) = 0; spectral limit at 0."""
        g = self.grid
        out = np.empty_like(w)
        out[..., 1:] = w[..., 1:] / g.nodes[1:]
        out[..., 0] = (w @ g.diff.T)[..., 0]
        return out

    def _local_term(self, a, i, w, split, nloc):
        """Analytic integral over (0, split) of theta^a log^i w(theta)."""
        tay = self.grid.taylor_at_zero(w, nloc)
        total = 0.0
        for m in range(nloc):
            mu = a + m
            cm = tay[..., m]
            total = total + cm * _power_log_integral(mu, i, split)
        return total

    def _cc_on_subinterval(self, nodal_values, lo, hi, npts=None):
        """Clenshaw-Curtis of grid data interpolated onto [lo, hi]."""
        g = self.grid
        npts = npts or max(64, g.N)
        k = np.arange(npts)
        x = np.cos(np.pi * k / (npts - 1))
        th = lo + (hi - lo) * (1.0 - x) / 2.0
        th = th[::-1]
        wq = ThetaGrid._clenshaw_curtis(npts - 1) * (hi - lo) / 2.0
        fv = g.interpolate(nodal_values, th)
        return np.einsum("...p,p->...", fv, wq)

    def _integrate_cc(self, p, lower, upper, npts=None):
        g = self.grid
        npts = npts or max(64, g.N)
        k = np.arange(npts)
        x = np.cos(np.pi * k / (npts - 1))
        th = lower + (upper - lower) * (1.0 - x) / 2.0
        th = th[::-1]
        w = ThetaGrid._clenshaw_curtis(npts - 1) * (upper - lower) / 2.0
        fv = self.eval(th) * np.sin(th) ** p
        return np.einsum("...p,p->...", fv, w)


def _power_log_integral(mu, i, T):
    """int_0^T theta^mu log(theta)^i dtheta (requires mu > -1 or zero data)."""
    if mu <= -1.0 + 1e-14:
        raise DivergentIntegral(f"divergent local integral, exponent {mu}")
    if i == 0:
        return T ** (mu + 1) / (mu + 1)
    total = 0.0
    lg = math.log(T)
    for m in range(i + 1):
        total += (
            (-1.0) ** m
            * math.factorial(i)
            / math.factorial(i - m)
            / (mu + 1) ** (m + 1)
            * lg ** (i - m)
        )
    return T ** (mu + 1) * total


def _sinc_power_taylor(p, nterms):
    """Taylor coefficients of (sin(theta)/theta)^p at 0 (even powers only)."""
    # log(sin t / t) = -t^2/6 - t^4/180 - t^6/2835 - t^8/37800 - ...
    logs = {2: -1.0 / 6, 4: -1.0 / 180, 6: -1.0 / 2835, 8: -1.0 / 37800,
            10: -1.0 / 467775}
    coef = np.zeros(nterms)
    coef[0] = 1.0
    # exp(p * logs) via series composition
    work = np.zeros(nterms)
    work[0] = 1.0
    term = np.zeros(nterms)
    term[0] = 1.0
    base = np.zeros(nterms)
    for k, v in logs.items():
        if k < nterms:
            base[k] = p * v
    acc = np.zeros(nterms)
    acc[0] = 1.0
    powk = np.zeros(nterms)
    powk[0] = 1.0
    for k in range(1, nterms):
        powk = _poly_mul(powk, base, nterms)
        acc += powk / math.factorial(k)
        if not powk.any():
            break
    return acc


def _poly_mul(a, b, nterms):
    out = np.zeros(nterms)
    for i, ai in enumerate(a):
        if ai == 0.0:
            continue
        jmax = nterms - i
        out[i : i + jmax] += ai * b[:jmax]
    return out


def differentiate(u):
    """Module-level alias for LogThetaSeries.deriv."""
    return u.deriv()


def integrate_weighted(u, p, lower=0.0, upper=None):
    return u.integrate_weighted(p, lower, upper)


def leading_coefficients(u, count):
    return u.leading_coefficients(count)


def parity_defect(u, order):
    return u.parity_defect(order)
