"""Normal-form metric jets, Christoffel symbols, Einstein and Laplace
residual evaluators, and the corner-compatibility calculators.

The metric is g = csc^2(theta)[dtheta^2 + h_theta] with hbar = rho^2 h_theta
carried as a sym2 RhoLogExpansion over mu, nu in {1..n} (the last component
index is rho).  Residuals are evaluated in the 0-edge coframe omega^0 =
dtheta/sin, omega^mu = dx^mu/(rho sin); all terms of the curvature formulas
are computed exactly in series arithmetic.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InvalidParams,
    LambdaOutOfRange,
    NonTransverse,
    TruncationInsufficient,
)
from .modes import TorusModes
from .rhoseries import (
    RhoLogExpansion,
    SeriesContext,
    identity_sym2,
    series_inverse_sym2,
    stack_coordinate_derivatives,
)
from .thetagrid import LogThetaSeries, ThetaGrid


@dataclass
class CornerProblem:
    """Problem data: dimension, angle, k-jet on S, and boundary fields."""

    n: int
    theta0: float
    k_jet: list  # entry j: d^j_rho k|_0 / j!, sym2 mode array over S indices
    s: float = None
    psi_boundary: object = None  # scalar mode array (Laplace Dirichlet data)
    psi_free_at_n: object = None  # Einstein order-n free scalar
    grid_n: int = 64
    fourier_max: int = 4

    def __post_init__(self):
        lam = -math.cos(self.theta0)
        if not (-1.0 < lam < 1.0):
            raise LambdaOutOfRange(f"theta0={self.theta0} gives |lambda| >= 1")
        self.lam = lam

    def context(self):
        return SeriesContext(
            n=self.n,
            grid=ThetaGrid(self.theta0, self.grid_n),
            modes=TorusModes(self.n - 1, self.fourier_max),
        )


@dataclass
class NormalFormMetricJet:
    """The pair (hbar expansion, chi expansion) with g = csc^2[dtheta^2+h]."""

    ctx: SeriesContext
    hbar: RhoLogExpansion  # sym2, base 0
    chi: RhoLogExpansion  # scalar, base 0, theta-independent
    k_jet: list = field(default_factory=list)

    @property
    def n(self):
        return self.ctx.n

    @property
    def theta0(self):
        return self.ctx.grid.theta0

    @property
    def trunc(self):
        return self.hbar.trunc


def k_rho_series(ctx, k_jet, trunc):
    """The boundary family k_rho as a sym2 series over the S block."""
    n = ctx.n
    out = RhoLogExpansion(ctx, "sym2", trunc, 0.0)
    for j, kj in enumerate(k_jet):
        if j > trunc:
            break
        arr = np.zeros((n, n) + ctx.modes.shape, dtype=complex)
        arr[: n - 1, : n - 1] = np.asarray(kj)
        out.add_term(j, 0, ctx.constant_coef("sym2", arr))
    return out


def drho2_series(ctx, trunc):
    n = ctx.n
    arr = np.zeros((n, n) + ctx.modes.shape, dtype=complex)
    arr[(n - 1, n - 1) + ctx.modes.mode_index((0,) * ctx.modes.dim)] = 1.0
    out = RhoLogExpansion(ctx, "sym2", trunc, 0.0)
    out.set_term(0, 0, ctx.constant_coef("sym2", arr))
    return out


def unit_chi(ctx, trunc):
    out = RhoLogExpansion(ctx, "scalar", trunc, 0.0)
    out.set_term(0, 0, ctx.constant_coef("scalar", ctx.scalar_mode_array(1.0)))
    return out


def model_jet(problem, trunc):
    """hbar = drho^2 + k_rho (theta-independent), chi = 1."""
    ctx = problem.context()
    hbar = drho2_series(ctx, trunc) + k_rho_series(ctx, problem.k_jet, trunc)
    return NormalFormMetricJet(
        ctx=ctx, hbar=hbar, chi=unit_chi(ctx, trunc), k_jet=list(problem.k_jet)
    )


# ---------------------------------------------------------------------------
# Christoffel symbols of g (coordinate frame, per the normal-form table)


def christoffel_bar(H, Hinv=None):
    """Gbar_{mu nu sigma} of hbar (last index lowered)."""
    DH = stack_coordinate_derivatives(H, "tensor3")  # DH[m, a, b] = d_m H_ab
    # Gbar_{mns} = (1/2)(d_m H_ns + d_n H_ms - d_s H_mn)
    perm_mns = DH  # d_m H_ns with axes (m, n, s)
    perm_nms = DH.map_coefficients(
        lambda c: c.map_values(lambda v: np.swapaxes(v, 0, 1))
    )
    perm_smn = DH.map_coefficients(
        lambda c: c.map_values(lambda v: np.moveaxis(v, 0, 2))
    )
    out = perm_mns + perm_nms - perm_smn
    return out.scale(0.5)


def christoffel(jet):
    """All Christoffel symbols of the table for g in normal form.

    Returned as a dict of RhoLogExpansions in the coordinate frame:
    'G000', 'G0m0' (zero), 'Gmn0', 'G0ms', 'G00s' (zero), 'Gmns', and the
    boundary-family symbol 'Gbar'.
    """
    ctx = jet.ctx
    g = ctx.grid
    n = ctx.n
    H = jet.hbar
    Hinv = series_inverse_sym2(H)
    Hd = H.theta_derivative()
    csc2cot = lambda series: series.map_coefficients(
        lambda c: c.mul_sin_power(-2.0).mul_smooth(g.cos).mul_sin_power(-1.0)
    )
    csc2 = lambda series: series.mul_sin_power(-2.0)

    out = {}
    one = unit_chi(ctx, H.trunc)
    out["G000"] = csc2cot(one).scale(-1.0)
    out["G0m0"] = RhoLogExpansion(ctx, "covector", H.trunc, 0.0)
    out["G00s"] = RhoLogExpansion(ctx, "covector", H.trunc, 0.0)
    out["Gmn0"] = (csc2cot(H) - csc2(Hd).scale(0.5)).rho_shift(-2.0)
    out["G0ms"] = (csc2cot(H).scale(-1.0) + csc2(Hd).scale(0.5)).rho_shift(-2.0)
    Gbar = christoffel_bar(H)
    rho_cov = _rho_covector(ctx, H.trunc)
    # Gmns = -2 rho^-3 csc^2 hbar_{s(m} rho_{n)} + rho^-3 csc^2 hbar_{mn} rho_s
    #        + rho^-2 csc^2 Gbar_{mns}
    hs_rn = H.multiply(rho_cov, "sm,n->smn", "tensor3")  # hbar_sm rho_n
    sym = hs_rn.map_coefficients(
        lambda c: c.map_values(
            lambda v: 0.5 * (np.moveaxis(v, (0, 1, 2), (2, 0, 1))
                             + np.moveaxis(v, (0, 1, 2), (2, 1, 0)))
        )
    )  # hbar_{s(m} rho_{n)} arranged as (m, n, s)
    h_rs = H.multiply(rho_cov, "mn,s->mns", "tensor3")
    out["Gmns"] = (
        csc2(sym).scale(-2.0) + csc2(h_rs)
    ).rho_shift(-3.0) + csc2(Gbar).rho_shift(-2.0)
    out["Gbar"] = Gbar
    out["Hinv"] = Hinv
    return out


def _rho_covector(ctx, trunc):
    n = ctx.n
    arr = np.zeros((n,) + ctx.modes.shape, dtype=complex)
    arr[(n - 1,) + ctx.modes.mode_index((0,) * ctx.modes.dim)] = 1.0
    out = RhoLogExpansion(ctx, "covector", trunc, 0.0)
    out.set_term(0, 0, ctx.constant_coef("covector", arr))
    return out


# ---------------------------------------------------------------------------
# Einstein residual (omega-frame)


@dataclass
class EinsteinResidual:
    E00: RhoLogExpansion
    E0sigma: RhoLogExpansion
    Emunu: RhoLogExpansion

    def norm(self):
        return max(self.E00.norm(), self.E0sigma.norm(), self.Emunu.norm())

    def components(self):
        return {"E00": self.E00, "E0sigma": self.E0sigma, "Emunu": self.Emunu}


def ricci_of_hbar(H, Hinv, Gb=None, DH=None):
    """ric(hbar)_{mu nu} from the coordinate formula, exact in series."""
    ctx = H.ctx
    if DH is None:
        DH = stack_coordinate_derivatives(H, "tensor3")
    if Gb is None:
        Gb = christoffel_bar(H)
    DDH = stack_coordinate_derivatives(DH, "tensor4")  # (i, j, a, b) = d_i d_j H_ab
    t1 = Hinv.multiply(DDH, "hl,mlnh->mn", "sym2")
    t2 = Hinv.multiply(DDH, "hl,nhml->mn", "sym2")
    t3 = Hinv.multiply(DDH, "hl,hlmn->mn", "sym2")
    t4 = Hinv.multiply(DDH, "hl,mnhl->mn", "sym2")
    second = (t1 + t2 - t3 - t4).scale(0.5)
    # Gamma Gamma terms
    M1 = Hinv.multiply(Gb, "st,nht->nhs", "tensor3")
    M2 = Hinv.multiply(M1, "hl,nhs->nls", "tensor3")
    A = Gb.multiply(M2, "mls,nls->mn", "sym2")
    v = Hinv.multiply(Gb, "hl,hlt->t", "covector")
    w = Hinv.multiply(v, "st,t->s", "covector")
    B = Gb.multiply(w, "mns,s->mn", "sym2")
    return second + A - B


def einstein_residual(jet, trunc=None):
    """E = ric(g) + n g in the omega-frame, through the jet's truncation."""
    ctx = jet.ctx
    g = ctx.grid
    n = ctx.n
    H = jet.hbar
    if trunc is not None and trunc > H.trunc:
        raise TruncationInsufficient(
            f"jet determines orders <= {H.trunc}, requested {trunc}"
        )
    Hinv = series_inverse_sym2(H)
    Hd = H.theta_derivative()
    Hdd = Hd.theta_derivative()

    trH = lambda T: Hinv.multiply(T, "ab,ab->", "scalar")
    tr_d = trH(Hd)
    tr_dd = trH(Hdd)

    sin2 = lambda a: a.mul_sin_power(2.0)
    sincos = lambda a: a.mul_sin_power(1.0).mul_smooth_theta(g.cos)

    # |d_theta hbar|^2 = Hinv Hd Hinv Hd
    HiHd = Hinv.multiply(Hd, "ab,bc->ac", "matrix")
    norm2 = HiHd.multiply(HiHd, "ab,ba->", "scalar")

    E00 = sin2(tr_dd).scale(-0.5) + sincos(tr_d).scale(0.5) + sin2(norm2).scale(0.25)

    # E_{0 sigma}
    rho_cov = _rho_covector(ctx, H.trunc)
    rho_vec = Hinv.slice_axis(1, n - 1, "covector")  # rho^mu = Hinv^{mu n}
    Gb = christoffel_bar(H)
    DH = stack_coordinate_derivatives(H, "tensor3")
    term1 = tr_d.multiply(rho_cov, ",s->s", "covector")
    term2 = rho_vec.multiply(Hd, "m,sm->s", "covector").scale(float(n))
    # covariant divergence of Hd: nabla^mu Hd_{sigma mu}
    DHd = stack_coordinate_derivatives(Hd, "tensor3")  # (nu, sigma, mu)
    Gup = Hinv.multiply(Gb, "lt,nst->lns", "tensor3")  # Gamma^l_{n s}
    corr1 = Gup.multiply(Hd, "lns,lm->nsm", "tensor3")
    corr2 = Gup.multiply(Hd, "lnm,sl->nsm", "tensor3")
    nablaHd = DHd - corr1 - corr2
    divHd = Hinv.multiply(nablaHd, "nm,nsm->s", "covector")
    grad_tr = stack_coordinate_derivatives(tr_d, "covector")
    term3 = (divHd - grad_tr).rho_shift(1.0)
    E0s = sin2(term1 - term2 + term3).scale(0.5)

    # E_{mu nu}
    HdHiHd = Hd.multiply(HiHd, "me,en->mn", "sym2")
    ric = ricci_of_hbar(H, Hinv, Gb, DH)
    hnn = Hinv.component(n - 1, n - 1)
    one = unit_chi(ctx, H.trunc)
    # nabla_mu rho_nu = -Gamma^{rho}_{mu nu}
    nabla_rho = Gup.slice_axis(0, n - 1, "sym2").scale(-1.0)
    div_rho = Hinv.multiply(nabla_rho, "mn,mn->", "scalar")

    Em = sin2(Hdd).scale(-0.5)
    Em = Em + sincos(Hd).scale((n - 1.0) / 2.0)
    Em = Em + sin2(HdHiHd).scale(0.5)
    Em = Em - sin2(tr_d.multiply(Hd, ",mn->mn", "sym2")).scale(0.25)
    Em = Em + sincos(tr_d.multiply(H, ",mn->mn", "sym2")).scale(0.5)
    Em = Em + sin2((hnn - one).multiply(H, ",mn->mn", "sym2")).scale(1.0 - n)
    Em = Em + sin2(nabla_rho.rho_shift(1.0)).scale(float(n - 2))
    Em = Em + sin2(div_rho.multiply(H, ",mn->mn", "sym2").rho_shift(1.0))
    Em = Em + sin2(ric.rho_shift(2.0))

    if trunc is not None:
        E00 = E00.truncated(trunc)
        E0s = E0s.truncated(trunc)
        Em = Em.truncated(trunc)
    return EinsteinResidual(E00=E00, E0sigma=E0s, Emunu=Em)


def residual_to_coordinate_frame(res, jet):
    """omega-frame components -> coordinate-frame (hatted) components."""
    csc2 = lambda a: a.mul_sin_power(-2.0)
    return {
        "E00": csc2(res.E00),
        "E0sigma": csc2(res.E0sigma).rho_shift(-1.0),
        "Emunu": csc2(res.Emunu).rho_shift(-2.0),
    }


def residual_to_omega_frame(hat, jet):
    sin2 = lambda a: a.mul_sin_power(2.0)
    return EinsteinResidual(
        E00=sin2(hat["E00"]),
        E0sigma=sin2(hat["E0sigma"]).rho_shift(1.0),
        Emunu=sin2(hat["Emunu"]).rho_shift(2.0),
    )


# ---------------------------------------------------------------------------
# scalar Laplacian of the normal-form metric


def laplace_residual(jet, s, u):
    """(Delta_g + s(n-s)) u for a scalar series u, from the exact metric.

    Uses Delta_g u = g^(-1/2) d_i(g^(ij) g^(1/2) d_j u) expanded through the
    normal form: the sqrt-determinant enters only via (1/2) tr(Hinv dH).
    """
    ctx = jet.ctx
    g = ctx.grid
    n = ctx.n
    H = jet.hbar
    Hinv = series_inverse_sym2(H)
    Hd = H.theta_derivative()
    trH = lambda T: Hinv.multiply(T, "ab,ab->", "scalar")

    du = u.theta_derivative()
    ddu = du.theta_derivative()
    out = ddu.mul_sin_power(2.0)
    out = out + du.mul_sin_power(1.0).mul_smooth_theta(g.cos).scale(1.0 - n)
    out = out + trH(Hd).multiply(du, ",->", "scalar").mul_sin_power(2.0).scale(0.5)

    Du = stack_coordinate_derivatives(u, "covector")  # d_mu u
    DDu = stack_coordinate_derivatives(Du, "matrix")  # d_mu d_nu u
    t1 = Hinv.multiply(DDu, "mn,mn->", "scalar")
    # d_mu Hinv^{mu nu} = -(Hinv dH Hinv)
    DHfull = stack_coordinate_derivatives(H, "tensor3")
    dHinv = Hinv.multiply(DHfull, "am,iab->imb", "tensor3")
    dHinv = dHinv.multiply(Hinv, "imb,bn->imn", "tensor3").scale(-1.0)
    div_part = dHinv.map_coefficients(
        lambda c: c.map_values(lambda v: np.einsum("iin...->n...", v)),
        rank="covector",
    )
    t2 = div_part.multiply(Du, "n,n->", "scalar")
    trDH = Hinv.multiply(DHfull, "ab,mab->m", "covector")
    t3 = trDH.multiply(Hinv, "m,mn->n", "covector").multiply(
        Du, "n,n->", "scalar"
    ).scale(0.5)
    out = out + (t1 + t2 + t3).rho_shift(2.0).mul_sin_power(2.0)

    last = Hinv.slice_axis(0, n - 1, "covector").multiply(Du, "m,m->", "scalar")
    out = out + last.rho_shift(1.0).mul_sin_power(2.0).scale(float(2 - n))
    out = out + u.scale(s * (n - s))
    return out


# ---------------------------------------------------------------------------
# corner compatibility (section on smooth solutions)


def corner_angle(lam):
    if not (-1.0 < lam < 1.0):
        raise LambdaOutOfRange(f"lambda = {lam} outside (-1, 1)")
    return math.acos(-lam)


def corner_sff(K_Q, K_M, dot_QM, dot_QS):
    """Second fundamental form of the corner: K_S = (K_Q - <nQ,nM> K_M)/<nQ,nS>."""
    if abs(dot_QS) < 1e-12:
        raise NonTransverse("boundary faces are tangent: <nu_Q, nu_S> ~ 0")
    return (np.asarray(K_Q) - dot_QM * np.asarray(K_M)) / dot_QS


def smooth_jet_constraints(lam, eta, Rbar_0s0n, Rbar_mixed, modes):
    """Corner jet of the finite-boundary graph function and the curvature
    compatibility residuals, for caller-supplied curvature data.

    eta: scalar mode array (umbilic coefficient of S in M);
    Rbar_0s0n: covector mode array; Rbar_mixed: sym2 mode array holding
    Rbar_{0st0} - Rbar_{nstn}.  Sign convention pinned so that the flat
    model yields residual d_s eta exactly.
    """
    if not (-1.0 < lam < 1.0):
        raise LambdaOutOfRange(f"lambda = {lam} outside (-1, 1)")
    eta = np.asarray(eta, dtype=complex)
    R1 = np.asarray(Rbar_0s0n, dtype=complex)
    R2 = np.asarray(Rbar_mixed, dtype=complex)
    fac = 1.0 - lam**2
    dphi = -lam / math.sqrt(fac)
    d2phi = eta / fac
    d3phi = -R1 / fac
    d = modes.dim
    grad_eta = np.stack(
        [modes.derivative(eta, i, theta=False) for i in range(d)], axis=0
    )
    umb_residual = grad_eta + R1
    # trace-free part with respect to the flat torus metric
    tr = np.einsum("ss...->...", R2)
    tf = R2 - np.multiply.outer(np.eye(d), tr / d).reshape(R2.shape) if d else R2
    tracefree_constraint = lam * tf
    return {
        "dphi_dr": dphi,
        "d2phi_dr2": d2phi,
        "d3phi_dr2dxs": d3phi,
        "umb_gradient_residual": umb_residual,
        "tracefree_constraint": tracefree_constraint,
    }
