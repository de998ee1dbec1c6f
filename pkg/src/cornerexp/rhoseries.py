"""Truncated formal expansions in rho with integer log(rho) powers.

A RhoLogExpansion stores coefficients indexed by (j, k): the term
rho^(base+j) log(rho)^k c_{jk}(theta, x), where c_{jk} is a LogThetaSeries
whose values carry component axes (none, (n,), or (n,n)), the torus mode
axes, and the theta-node axis last.  Products are Cauchy in (j, k), combine
tensor components by einsum, and convolve Fourier modes with the cutoff.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (
    InvalidParams,
    NegativePowerProduced,
    RankMismatch,
    SingularLeadingTerm,
    TruncationInsufficient,
)
from .modes import TorusModes
from .thetagrid import LogThetaSeries, ThetaGrid

_RANK_SHAPES = {
    "scalar": 0,
    "covector": 1,
    "sym2": 2,
    "matrix": 2,
    "tensor3": 3,
    "tensor4": 4,
}


@dataclass(frozen=True)
class SeriesContext:
    """Shared discretization data: dimension, theta grid, torus modes."""

    n: int
    grid: ThetaGrid
    modes: TorusModes

    def key(self):
        return (self.n, self.grid.key(), self.modes.key())

    def comp_shape(self, rank):
        naxes = _RANK_SHAPES[rank]
        return (self.n,) * naxes

    def zero_coef(self, rank):
        shape = self.comp_shape(rank) + self.modes.shape + (self.grid.N,)
        return LogThetaSeries(self.grid, [(0.0, 0, np.zeros(shape, dtype=complex))])

    def constant_coef(self, rank, comp_values):
        """theta-independent coefficient from an SField-style mode array."""
        arr = np.asarray(comp_values, dtype=complex)
        expect = self.comp_shape(rank) + self.modes.shape
        if arr.shape != expect:
            raise RankMismatch(f"expected shape {expect}, got {arr.shape}")
        vals = np.repeat(arr[..., None], self.grid.N, axis=-1)
        return LogThetaSeries(self.grid, [(0.0, 0, vals)])

    def scalar_mode_array(self, value=0.0):
        arr = np.zeros(self.modes.shape, dtype=complex)
        if value:
            arr[self.modes.mode_index((0,) * self.modes.dim)] = value
        return arr


class RhoLogExpansion:
    def __init__(self, ctx, rank, trunc, base=0.0, terms=None):
        if rank not in _RANK_SHAPES:
            raise RankMismatch(f"unknown rank {rank!r}")
        self.ctx = ctx
        self.rank = rank
        self.trunc = int(trunc)
        self.base = float(base)
        self.terms = {}
        if terms:
            for (j, k), coef in terms.items():
                self.set_term(j, k, coef)

    # ----- bookkeeping ---------------------------------------------------

    def copy(self):
        out = RhoLogExpansion(self.ctx, self.rank, self.trunc, self.base)
        out.terms = {jk: c for jk, c in self.terms.items()}
        return out

    def set_term(self, j, k, coef):
        j, k = int(j), int(k)
        if j < 0 or k < 0:
            raise InvalidParams("rho order and log power must be non-negative")
        if j > self.trunc:
            return
        if not isinstance(coef, LogThetaSeries):
            coef = LogThetaSeries(self.ctx.grid, [(0.0, 0, np.asarray(coef))])
        self.terms[(j, k)] = coef

    def add_term(self, j, k, coef):
        if (int(j), int(k)) in self.terms:
            self.terms[(j, k)] = self.terms[(j, k)] + coef
        else:
            self.set_term(j, k, coef)

    def coefficient(self, j, k):
        """The (j, k) coefficient, or a structural zero."""
        if (j, k) in self.terms:
            return self.terms[(j, k)]
        return self.ctx.zero_coef(self.rank)

    extract_order = coefficient

    def norm(self):
        return max((c.norm() for c in self.terms.values()), default=0.0)

    def prune(self, tol_rel=1e-14):
        scale = max(self.norm(), 1e-300)
        out = self.copy()
        out.terms = {
            jk: c for jk, c in self.terms.items() if c.norm() > tol_rel * scale
        }
        return out

    def max_log_power(self, tol_rel=1e-13):
        scale = max(self.norm(), 1e-300)
        return max(
            (k for (j, k), c in self.terms.items() if c.norm() > tol_rel * scale),
            default=0,
        )

    def truncated(self, trunc):
        out = RhoLogExpansion(self.ctx, self.rank, trunc, self.base)
        out.terms = {(j, k): c for (j, k), c in self.terms.items() if j <= trunc}
        return out

    def rebased(self, new_base):
        """Represent with a lower base exponent (integer shift)."""
        shift = self.base - new_base
        m = int(round(shift))
        if abs(shift - m) > 1e-9 or m < 0:
            raise InvalidParams("base shift must be a non-negative integer")
        out = RhoLogExpansion(self.ctx, self.rank, self.trunc + m, new_base)
        out.terms = {(j + m, k): c for (j, k), c in self.terms.items()}
        return out

    # ----- linear algebra --------------------------------------------------

    def _check_compat(self, other):
        if self.ctx.key() != other.ctx.key():
            raise InvalidParams("mismatched contexts")

    def __add__(self, other):
        self._check_compat(other)
        if abs(self.base - other.base) > 1e-9:
            lo = min(self.base, other.base)
            return self.rebased(lo) + other.rebased(lo)
        if self.rank != other.rank:
            raise RankMismatch(f"{self.rank} + {other.rank}")
        out = RhoLogExpansion(
            self.ctx, self.rank, min(self.trunc, other.trunc), self.base
        )
        for (j, k), c in self.terms.items():
            if j <= out.trunc:
                out.add_term(j, k, c)
        for (j, k), c in other.terms.items():
            if j <= out.trunc:
                out.add_term(j, k, c)
        return out

    def __sub__(self, other):
        return self + other.scale(-1.0)

    def scale(self, factor):
        out = self.copy()
        out.terms = {jk: c.scale(factor) for jk, c in self.terms.items()}
        return out

    def map_coefficients(self, f, rank=None):
        out = RhoLogExpansion(self.ctx, rank or self.rank, self.trunc, self.base)
        for (j, k), c in self.terms.items():
            out.terms[(j, k)] = f(c)
        return out

    # ----- products --------------------------------------------------------

    def multiply(self, other, espec, out_rank, trunc=None):
        """Cauchy product with tensor contraction `espec` over component axes.

        espec is an einsum signature for the component axes only; mode axes
        convolve (cutoff), theta is pointwise.  Example: scalar*sym2 uses
        ',ab->ab'; trace of sym2 against inverse uses 'ab,ab->'.
        """
        self._check_compat(other)
        modes = self.ctx.modes
        trunc = min(self.trunc, other.trunc) if trunc is None else trunc
        out = RhoLogExpansion(self.ctx, out_rank, trunc, self.base + other.base)
        lhs, rhs = espec.split("->")[0].split(",")
        full = (
            lhs + "...," + rhs + "...->" + espec.split("->")[1] + "..."
        )

        def combine(v1, v2):
            return modes.pair(full, v1, v2)

        for (j1, k1), c1 in self.terms.items():
            for (j2, k2), c2 in other.terms.items():
                if j1 + j2 > trunc:
                    continue
                out.add_term(j1 + j2, k1 + k2, c1.mul_with(c2, combine))
        return out

    def __mul__(self, other):
        if self.rank != "scalar" or other.rank != "scalar":
            raise RankMismatch("use multiply() for tensor products")
        return self.multiply(other, ",->", "scalar")

    # ----- calculus ----------------------------------------------------------

    def rho_derivative(self):
        out = RhoLogExpansion(self.ctx, self.rank, self.trunc, self.base - 1.0)
        for (j, k), c in self.terms.items():
            e = self.base + j
            if abs(e) < 1e-12 and k > 0 and c.norm() > 1e-13 * max(self.norm(), 1e-300):
                raise NegativePowerProduced(
                    "d/drho of a log(rho) term at rho-order zero"
                )
            if abs(e) > 1e-14:
                out.add_term(j, k, c.scale(e))
            if k > 0:
                out.add_term(j, k - 1, c.scale(k))
        return out

    def theta_derivative(self):
        out = self.copy()
        out.terms = {jk: c.deriv() for jk, c in self.terms.items()}
        return out

    def tangential_derivative(self, direction):
        modes = self.ctx.modes
        out = self.copy()
        out.terms = {
            jk: c.map_values(lambda v: modes.derivative(v, direction))
            for jk, c in self.terms.items()
        }
        return out

    def coordinate_derivative(self, mu):
        """d/dx^mu with mu in 0..n-1; the last index is rho."""
        if mu == self.ctx.n - 1:
            return self.rho_derivative()
        return self.tangential_derivative(mu)

    # ----- evaluation ---------------------------------------------------------

    def evaluate(self, theta, x, rho):
        """Numeric value at a point (theta, x, rho); rho > 0."""
        modes = self.ctx.modes
        total = 0.0
        lg = np.log(rho)
        for (j, k), c in self.terms.items():
            th_val = c.eval(np.atleast_1d(theta))[..., 0]
            val = modes.eval_at(th_val, x, theta=False)
            total = total + rho ** (self.base + j) * lg**k * val
        return total

    # ----- component access ---------------------------------------------------

    def component(self, *idx):
        """Scalar-rank view of one tensor component."""
        out = RhoLogExpansion(self.ctx, "scalar", self.trunc, self.base)
        for (j, k), c in self.terms.items():
            out.terms[(j, k)] = c.map_values(lambda v: v[idx])
        return out

    def slice_axis(self, axis, index, out_rank):
        """Fix one component axis (e.g. rho^mu = Hinv[:, n-1])."""
        out = RhoLogExpansion(self.ctx, out_rank, self.trunc, self.base)
        for (j, k), c in self.terms.items():
            out.terms[(j, k)] = c.map_values(
                lambda v: np.take(v, index, axis=axis)
            )
        return out

    def rho_shift(self, m):
        """Multiply by rho^m (base shift, exact)."""
        out = self.copy()
        out.base = self.base + m
        return out

    def mul_theta_series(self, lts_map):
        """Apply a LogThetaSeries -> LogThetaSeries map to every coefficient."""
        return self.map_coefficients(lts_map)

    def mul_sin_power(self, pwr):
        return self.map_coefficients(lambda c: c.mul_sin_power(pwr))

    def mul_smooth_theta(self, node_values):
        return self.map_coefficients(lambda c: c.mul_smooth(node_values))


    # ----- serialization --------------------------------------------------------

    def to_dict(self):
        terms = []
        for (j, k), c in sorted(self.terms.items()):
            tterms = []
            for a, i, v in c.terms:
                tterms.append(
                    {
                        "a": a,
                        "i": i,
                        "re": v.real.tolist(),
                        "im": v.imag.tolist(),
                    }
                )
            terms.append({"j": j, "k": k, "theta_terms": tterms})
        return {
            "n": self.ctx.n,
            "grid_n": self.ctx.grid.N,
            "theta0": self.ctx.grid.theta0,
            "fourier_max": self.ctx.modes.mmax,
            "rank": self.rank,
            "base": self.base,
            "trunc": self.trunc,
            "terms": terms,
        }

    @classmethod
    def from_dict(cls, d, ctx=None):
        if ctx is None:
            ctx = SeriesContext(
                n=d["n"],
                grid=ThetaGrid(d["theta0"], d["grid_n"]),
                modes=TorusModes(d["n"] - 1, d["fourier_max"]),
            )
        out = cls(ctx, d["rank"], d["trunc"], d["base"])
        for t in d["terms"]:
            terms = [
                (
                    tt["a"],
                    tt["i"],
                    np.asarray(tt["re"]) + 1j * np.asarray(tt["im"]),
                )
                for tt in t["theta_terms"]
            ]
            out.terms[(t["j"], t["k"])] = LogThetaSeries(ctx.grid, terms)
        return out


def series_mul(a, b, espec=",->", out_rank="scalar"):
    return a.multiply(b, espec, out_rank)


def series_inverse_sym2(a, tol=1e-10):
    """Truncated inverse of a sym2-valued series: multiply-back to identity.

    The (0,0) coefficient must be pointwise invertible; higher orders follow
    by the Neumann iteration, which terminates because the correction is
    nilpotent in the combined (rho-order, log-power) grading.
    """
    if a.rank != "sym2" and a.rank != "matrix":
        raise RankMismatch("series_inverse_sym2 needs a sym2 series")
    if abs(a.base) > 1e-12:
        raise InvalidParams("inverse requires base exponent zero")
    ctx = a.ctx
    n = ctx.n
    lead = a.coefficient(0, 0)
    if len(lead.terms) != 1 or lead.terms[0][0] != 0.0 or lead.terms[0][1] != 0:
        raise SingularLeadingTerm("leading coefficient must be smooth in theta")
    vals = lead.terms[0][2]
    sp = ctx.modes.to_spatial(vals)  # (n, n, spatial..., N)
    sp = np.moveaxis(sp, (0, 1), (-2, -1))  # (spatial..., N, n, n)
    try:
        inv_sp = np.linalg.inv(sp)
    except np.linalg.LinAlgError as exc:
        raise SingularLeadingTerm(str(exc))
    inv_vals = ctx.modes.from_spatial(np.moveaxis(inv_sp, (-2, -1), (0, 1)))
    Y0 = RhoLogExpansion(ctx, "sym2", a.trunc, 0.0)
    Y0.set_term(0, 0, LogThetaSeries(ctx.grid, [(0.0, 0, inv_vals)]))

    ident = identity_sym2(ctx, a.trunc)
    Y = Y0
    max_weight = a.trunc + max((k for (_, k) in a.terms.keys()), default=0) + 2
    for _ in range(max_weight):
        R = ident - a.multiply(Y, "ab,bc->ac", "sym2")
        if R.norm() < 1e-15 * max(1.0, a.norm()):
            break
        Y = Y + Y0.multiply(R, "ab,bc->ac", "sym2")
    check = ident - a.multiply(Y, "ab,bc->ac", "sym2")
    if check.norm() > tol * max(1.0, a.norm()):
        raise SingularLeadingTerm(
            f"inverse residual {check.norm():.2e} exceeds {tol}"
        )
    return Y


def identity_sym2(ctx, trunc):
    n = ctx.n
    arr = np.zeros((n, n) + ctx.modes.shape, dtype=complex)
    zero_mode = ctx.modes.mode_index((0,) * ctx.modes.dim)
    for i in range(n):
        arr[(i, i) + zero_mode] = 1.0
    out = RhoLogExpansion(ctx, "sym2", trunc, 0.0)
    out.set_term(0, 0, ctx.constant_coef("sym2", arr))
    return out


def rho_derivative(a):
    return a.rho_derivative()


def theta_derivative(a):
    return a.theta_derivative()


def tangential_derivative(a, direction):
    return a.tangential_derivative(direction)


def extract_order(a, j, k):
    return a.coefficient(j, k)


def stack_coordinate_derivatives(a, out_rank):
    """Tensor of partials: out[mu, ...] = d/dx^mu a[...]; base drops by one.

    Tangential derivatives are rebased to match the rho derivative.
    """
    ctx = a.ctx
    n = ctx.n
    parts = []
    for mu in range(n):
        d = a.coordinate_derivative(mu)
        if mu < n - 1:
            d = d.rebased(a.base - 1.0)
        parts.append(d)
    out = RhoLogExpansion(ctx, out_rank, min(p.trunc for p in parts), a.base - 1.0)
    keys = set()
    for p in parts:
        keys |= set(p.terms.keys())
    for (j, k) in keys:
        if j > out.trunc:
            continue
        vals = [p.coefficient(j, k) for p in parts]
        # merge the per-mu LogThetaSeries into one with a leading axis
        terms = {}
        for mu, c in enumerate(vals):
            for aa, ii, vv in c.terms:
                key = None
                for (ka, ki) in terms:
                    if ki == ii and abs(ka - aa) < 1e-9:
                        key = (ka, ki)
                        break
                if key is None:
                    shape = (n,) + vv.shape
                    terms[(aa, ii)] = np.zeros(shape, dtype=complex)
                    key = (aa, ii)
                terms[key][mu] += vv
        out.terms[(j, k)] = LogThetaSeries(
            ctx.grid, [(aa, ii, vv) for (aa, ii), vv in terms.items()]
        )
    return out
