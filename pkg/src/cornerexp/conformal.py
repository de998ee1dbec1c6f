"""Geodesic normal-form re-expansion of a conformally rescaled metric.

Given tau = d rho^2 + k_rho near S and a conformal factor Omega = 1 + rho^2 w,
find the boundary-geodesic coordinates (rhohat, xhat) with
Omega^2 tau = d rhohat^2 + khat_rhohat and identity restriction on S.  The
change of variables rho = r(rhohat, xhat), x = xhat + xi(rhohat, xhat) is
built order by order in rhohat: the (rhohat rhohat)-component pins r, the
mixed components pin xi, and the tangential block then reads off khat.

All coefficients are Fourier mode arrays on the torus cross-section; the
series arithmetic is exact up to the mode cutoff.
"""

import math

import numpy as np

from .errors import IllConditioned, InvalidParams


class PolyField:
    """Polynomial in one variable with mode-array coefficients."""

    def __init__(self, modes, coeffs=None):
        self.modes = modes
        self.coeffs = dict(coeffs or {})

    def coefficient(self, j, shape=()):
        if j in self.coeffs:
            return self.coeffs[j]
        return np.zeros(shape + self.modes.shape, dtype=complex)

    def copy(self):
        return PolyField(self.modes, {j: c.copy() for j, c in self.coeffs.items()})

    def add_term(self, j, arr):
        if j in self.coeffs:
            self.coeffs[j] = self.coeffs[j] + arr
        else:
            self.coeffs[j] = np.asarray(arr, dtype=complex)

    def __add__(self, other):
        out = self.copy()
        for j, c in other.coeffs.items():
            out.add_term(j, c)
        return out

    def __sub__(self, other):
        return self + other.scale(-1.0)

    def scale(self, a):
        return PolyField(self.modes, {j: a * c for j, c in self.coeffs.items()})

    def mul(self, other, espec, trunc):
        modes = self.modes
        lhs, rest = espec.split(",")
        rhs, outsig = rest.split("->")
        full = lhs + "...," + rhs + "...->" + outsig + "..."
        out = PolyField(modes)
        for j1, c1 in self.coeffs.items():
            for j2, c2 in other.coeffs.items():
                if j1 + j2 > trunc:
                    continue
                out.add_term(j1 + j2, modes.pair(full, c1, c2, theta=False))
        return out

    def var_derivative(self):
        """d/d(rhohat) of the polynomial."""
        out = PolyField(self.modes)
        for j, c in self.coeffs.items():
            if j >= 1:
                out.add_term(j - 1, j * c)
        return out

    def x_derivative(self, direction):
        return PolyField(
            self.modes,
            {
                j: self.modes.derivative(c, direction, theta=False)
                for j, c in self.coeffs.items()
            },
        )

    def norm(self):
        return max(
            (float(np.max(np.abs(c))) for c in self.coeffs.values()), default=0.0
        )


def _const(modes, value):
    arr = np.zeros(modes.shape, dtype=complex)
    arr[modes.mode_index((0,) * modes.dim)] = value
    return PolyField(modes, {0: arr})


def _taylor_shift(field, xi, trunc, tmax=None):
    """field(xhat + xi) as a PolyField, with xi a covector PolyField O(rhohat^2).

    Applies sum_t (xi . grad)^t / t! termwise; each application raises the
    rhohat-order by at least two, so the loop is short.
    """
    modes = field.modes
    d = modes.dim
    tmax = tmax if tmax is not None else trunc // 2 + 1
    rank = next(iter(field.coeffs.values())).ndim - d
    letters = "abcd"[:rank]
    espec = "," + letters + "->" + letters
    out = field.copy()
    cur = field
    fact = 1.0
    for t in range(1, tmax + 1):
        nxt = PolyField(modes)
        for u in range(d):
            xiu = PolyField(modes, {j: c[u] for j, c in xi.coeffs.items()})
            dcur = cur.x_derivative(u)
            nxt = nxt + xiu.mul(dcur, espec, trunc)
        cur = nxt
        fact *= t
        out = out + cur.scale(1.0 / fact)
        if cur.norm() == 0.0:
            break
    return out


def _compose_jet(k_jet, r, xi, trunc, comp_espec=",->"):
    """sum_j k_j(xhat + xi) r(rhohat)^j for coefficient arrays k_j."""
    modes = r.modes
    powers = [PolyField(modes, {0: _const(modes, 1.0).coeffs[0]})]
    for _ in range(1, len(k_jet)):
        powers.append(powers[-1].mul(r, ",->", trunc))
    out = PolyField(modes)
    for j, kj in enumerate(k_jet):
        kj_pf = PolyField(modes, {0: np.asarray(kj, dtype=complex)})
        kj_shift = _taylor_shift(kj_pf, xi, trunc)
        out = out + kj_shift.mul(powers[j], "ab,->ab", trunc)
    return out


def normal_form_reexpansion(modes, k_jet, w, order):
    """khat-jet of Omega^2 (d rho^2 + k_rho) with Omega = 1 + rho^2 w.

    k_jet: list of sym2 mode arrays (coefficients of rho^j); w: scalar mode
    array.  Returns the list of khat coefficients through rho^order, after
    verifying the normal-form defects vanish through that order.
    """
    d = modes.dim
    trunc = order + 2
    r = PolyField(modes, {1: _const(modes, 1.0).coeffs[0]})
    xi = PolyField(
        modes, {0: np.zeros((d,) + modes.shape, dtype=complex)}
    )
    k0 = np.asarray(k_jet[0], dtype=complex)
    sp = modes.to_spatial(k0, theta=False)
    sp = np.moveaxis(sp, (0, 1), (-2, -1))
    k0inv = modes.from_spatial(
        np.moveaxis(np.linalg.inv(sp), (-2, -1), (0, 1)), theta=False
    )

    def components(r, xi):
        dr = r.var_derivative()
        dxi = xi.var_derivative()
        K = _compose_jet(k_jet, r, xi, trunc)
        wompf = PolyField(modes, {0: np.asarray(w, dtype=complex)})
        w_sh = _taylor_shift(wompf, xi, trunc)
        r2 = r.mul(r, ",->", trunc)
        om2 = _const(modes, 1.0) + r2.mul(w_sh, ",->", trunc).scale(2.0)
        om2 = om2 + r2.mul(r2, ",->", trunc).mul(
            w_sh.mul(w_sh, ",->", trunc), ",->", trunc
        )
        # xi^u_t = d_t xi^u + delta (the Jacobian of x = xhat + xi)
        jac = PolyField(modes, {0: np.zeros((d, d) + modes.shape, dtype=complex)})
        zero = modes.mode_index((0,) * d)
        for u in range(d):
            jac.coeffs[0][(u, u) + zero] = 1.0
        for t in range(d):
            dxit = xi.x_derivative(t)
            for j, c in dxit.coeffs.items():
                if j not in jac.coeffs:
                    jac.coeffs[j] = np.zeros((d, d) + modes.shape, dtype=complex)
                jac.coeffs[j][:, t] += c[:]
        # G_rr
        Grr = dr.mul(dr, ",->", trunc)
        Kd = K.mul(dxi, "su,s->u", trunc)
        Grr = Grr + Kd.mul(dxi, "u,u->", trunc)
        Grr = om2.mul(Grr, ",->", trunc)
        # G_rt
        rt = PolyField(modes, {j: np.stack([modes.derivative(c, t, theta=False) for t in range(d)]) for j, c in r.coeffs.items()})
        Grt = dr.mul(rt, ",t->t", trunc)
        Grt = Grt + Kd.mul(jac, "u,ut->t", trunc)
        Grt = om2.mul(Grt, ",t->t", trunc)
        # G_tt'
        Gtt = rt.mul(rt, "s,t->st", trunc)
        KJ = K.mul(jac, "uv,us->sv", trunc)
        Gtt = Gtt + KJ.mul(jac, "sv,vt->st", trunc)
        Gtt = om2.mul(Gtt, ",st->st", trunc)
        return Grr, Grt, Gtt

    one = _const(modes, 1.0)
    for j in range(2, order + 2):
        Grr, Grt, _ = components(r, xi)
        defect = (Grr - one).coefficient(j - 1)
        r.add_term(j, -defect / (2.0 * j))
        Grr, Grt, _ = components(r, xi)
        defect_t = Grt.coefficient(j - 1, shape=(d,))
        corr = -modes.pair("us...,s...->u...",
                           np.repeat(k0inv[..., None], 1, axis=-1)[..., 0] if False else k0inv,
                           defect_t, theta=False) / float(j)
        xi.add_term(j, corr)

    Grr, Grt, Gtt = components(r, xi)
    err = 0.0
    for j in range(0, order + 1):
        err = max(err, float(np.max(np.abs((Grr - one).coefficient(j)))))
        err = max(err, float(np.max(np.abs(Grt.coefficient(j, shape=(d,))))))
    if err > 1e-10 * max(1.0, Gtt.norm()):
        raise IllConditioned(f"normal-form defect {err:.2e} after re-expansion")
    return [Gtt.coefficient(j, shape=(d, d)) for j in range(order + 1)]
