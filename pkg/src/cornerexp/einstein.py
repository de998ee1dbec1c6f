"""Order-by-order formal Einstein solver in polar normal form.

At each rho-order gamma < n the slice f = rho^(-gamma) E(g)|_(rho=0) is
killed by four scalar solves per Fourier mode: the tracefree tangential
block through the scalar indicial operator (s = n, nu = gamma), the trace
through the explicit cos-kernel integral formula, and the (nn)/(ns)
components by first-order integration; the remaining trace equation fixes
the conformal-factor increment psi through the contracted Bianchi identity,
evaluated here as a two-point affine solve on trial jets.  At gamma = n the
trace uses a degenerate-order closed form, (nn) becomes a second-order
solve at nu = n-2, and the tracefree block is obstructed at theta0 = pi/2
by the pairing of the slice against sin^n(theta) -- the obstruction tensor.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConsistencyFailure,
    DivergentIntegral,
    IllConditioned,
    IndicialRootHit,
    InvalidParams,
    Obstructed,
)
from .geometry import (
    NormalFormMetricJet,
    drho2_series,
    einstein_residual,
    k_rho_series,
    model_jet,
    residual_to_coordinate_frame,
    unit_chi,
)
from .rhoseries import RhoLogExpansion, series_inverse_sym2
from .sturm import IndicialParams, greens_solve, is_at_root, nearest_root
from .thetagrid import LogThetaSeries


@dataclass
class OrderSolution:
    gamma: int
    phi: LogThetaSeries  # sym2 (n, n, modes, N)
    psi: object  # scalar mode array
    obstruction: object = None


# ---------------------------------------------------------------------------
# slice plumbing


def _h0_inverse_modes(ctx, k_jet):
    """(dx rho^2 + k_0)^{-1} as a mode array (n, n, modes)."""
    n = ctx.n
    arr = np.zeros((n, n) + ctx.modes.shape, dtype=complex)
    arr[: n - 1, : n - 1] = np.asarray(k_jet[0])
    arr[(n - 1, n - 1) + ctx.modes.mode_index((0,) * ctx.modes.dim)] = 1.0
    sp = ctx.modes.to_spatial(arr, theta=False)
    sp = np.moveaxis(sp, (0, 1), (-2, -1))
    inv = np.linalg.inv(sp)
    return ctx.modes.from_spatial(np.moveaxis(inv, (-2, -1), (0, 1)), theta=False)


def _k0_inverse_modes(ctx, k_jet):
    d = ctx.n - 1
    sp = ctx.modes.to_spatial(np.asarray(k_jet[0]), theta=False)
    sp = np.moveaxis(sp, (0, 1), (-2, -1))
    inv = np.linalg.inv(sp)
    return ctx.modes.from_spatial(np.moveaxis(inv, (-2, -1), (0, 1)), theta=False)


def _pair_modes_lts(ctx, arr, lts, espec):
    """Contract a theta-independent mode array against an LTS coefficient."""
    N = ctx.grid.N
    arrb = np.repeat(np.asarray(arr)[..., None], N, axis=-1)
    lhs, rest = espec.split(",")
    rhs, outsig = rest.split("->")
    full = lhs + "...," + rhs + "...->" + outsig + "..."
    return lts.map_values(lambda v: ctx.modes.pair(full, arrb, v))


def _slice_lts(res_component, gamma, what):
    """The (gamma, k=0) coefficient; rejects log(rho) content."""
    coef = res_component.coefficient(gamma, 0)
    for k in range(1, 8):
        c = res_component.coefficient(gamma, k)
        if c.norm() > 1e-9 * max(res_component.norm(), 1.0):
            raise InvalidParams(
                f"{what}: log(rho) content at order {gamma}; "
                "only the smooth branch is supported here"
            )
    return coef


def residual_slices(jet, res, gamma):
    """All omega-frame pieces of f = rho^(-gamma) E|_0 used by the solves."""
    ctx = jet.ctx
    n = ctx.n
    f00 = _slice_lts(res.E00, gamma, "E00")
    f0 = _slice_lts(res.E0sigma, gamma, "E0sigma")
    fmn = _slice_lts(res.Emunu, gamma, "Emunu")
    h0inv = _h0_inverse_modes(ctx, jet.k_jet)
    k0inv = _k0_inverse_modes(ctx, jet.k_jet)
    k0 = np.asarray(jet.k_jet[0])
    g = ctx.grid
    f00 = _repair_endpoints(g, f00)
    f0 = _repair_endpoints(g, f0)
    fmn = _repair_endpoints(g, fmn)
    f0t = f0.map_values(lambda v: v[: n - 1])
    f0n = f0.map_values(lambda v: v[n - 1])
    fst = fmn.map_values(lambda v: v[: n - 1, : n - 1])
    fns = fmn.map_values(lambda v: v[n - 1, : n - 1])
    fnn = fmn.map_values(lambda v: v[n - 1, n - 1])
    trace = _pair_modes_lts(ctx, h0inv, fmn, "ab,ab->")
    trace_t = _pair_modes_lts(ctx, k0inv, fst, "pq,pq->")
    k0b = np.repeat(k0[..., None], ctx.grid.N, axis=-1)
    tf_corr = trace_t.map_values(
        lambda v: ctx.modes.pair("...,st...->st...", v, k0b) / (n - 1.0)
    )
    f_tf = fst - tf_corr
    return {
        "f00": f00,
        "f0t": f0t,
        "f0n": f0n,
        "f_tf": f_tf,
        "fns": fns,
        "fnn": fnn,
        "trace": trace,
        "h0inv": h0inv,
        "k0inv": k0inv,
    }


def _repair_endpoints(grid, lts, m=2):
    """Replace the last m node values by interpolation from the others.

    Residual slices are analytic functions polluted at the collocation
    rows that boundary conditions displaced; re-extrapolating from the
    interior removes the spike without touching resolved content, and
    stops roundoff from cascading through subsequent differentiations.
    """
    N = grid.N
    keep = np.arange(N - m)
    th = grid.nodes[keep]
    # barycentric weights for the retained subset of CGL nodes
    wb = grid._bary_w[keep]
    out_terms = []
    for a, i, v in lts.terms:
        vv = v.copy()
        for node in range(N - m, N):
            t = grid.nodes[node]
            d = t - th
            wq = wb / d
            vv[..., node] = (vv[..., keep] @ wq) / np.sum(wq)
        out_terms.append((a, i, vv))
    return LogThetaSeries(grid, out_terms)


def _deflate_values(grid, vals, times):
    """vals / theta^times for data vanishing to that order at theta = 0.

    Done in one division so far-field noise is not recycled through the
    differentiation matrix; the endpoint limit comes from the local
    Taylor fit (the theta^times coefficient).
    """
    if times == 0:
        return vals
    out = np.empty_like(vals)
    out[..., 1:] = vals[..., 1:] / grid.nodes[1:] ** float(times)
    out[..., 0] = grid.taylor_at_zero(vals, times + 1)[..., times]
    return out


def _gated_solve(p, rhs, scale, tol_rel=1e-10, smooth=False):
    """greens_solve, short-circuited to zero when the RHS is pure noise.

    Slices that the Bianchi identity has already closed come back at the
    numerical floor; solving them would launder noise into the jet (and
    spurious log-resonance content with it).  smooth=True suppresses the
    log-resonance level where parity guarantees a log-free solution.
    """
    if rhs.norm() <= tol_rel * scale:
        return rhs.scale(0.0)
    return _drop_noise_logs(greens_solve(p, rhs, smooth=smooth))


def _drop_noise_logs(lts, tol_rel=1e-7):
    """Strip log(theta) ledger noise from a solve in the smooth branch.

    For n odd (and n = 2) the Einstein solves are log-free in theta; the
    collocation's level separation leaves O(1e-9) residue there.  Content
    above the tolerance is genuine H-space structure and is rejected,
    since only the smooth branch is carried by this driver.
    """
    scale = max(lts.norm(), 1e-300)
    keep = []
    for a, i, v in lts.terms:
        if i == 0:
            keep.append((a, i, v))
        elif np.max(np.abs(v)) > tol_rel * scale:
            raise InvalidParams(
                "theta-log content in an Einstein solve; generic even n >= 4 "
                "requires the H-space branch, which is not carried here"
            )
    return LogThetaSeries(lts.grid, keep)


def _csc_power_values(grid, lts, power, decay):
    """Nodal values of csc^power * u for an LTS vanishing like theta^decay.

    The zero at theta = 0 is divided out spectrally before the cosecant
    weight is applied, so the result is clean at the endpoint node.
    """
    total = 0.0
    for a, i, v in lts.terms:
        if i != 0:
            raise InvalidParams("unexpected log(theta) content")
        m = int(round(a))
        w = v * grid.nodes ** float(m) if m else v
        total = total + w
    w = _deflate_values(grid, total, decay)
    tcsc = 1.0 / grid.sinc  # theta/sin(theta)
    return w * tcsc ** float(power) * grid.nodes ** float(decay - power)


# ---------------------------------------------------------------------------
# generic order gamma < n (and gamma > n)


def solve_order(jet, gamma, psi_override=None, residual=None):
    """One induction step: determine phi and psi at rho-order gamma != n."""
    ctx = jet.ctx
    g = ctx.grid
    n = ctx.n
    if gamma == n:
        raise InvalidParams("use solve_order_n at gamma = n")
    res = residual if residual is not None else einstein_residual(jet)
    sl = residual_slices(jet, res, gamma)
    scale = max(res.norm(), 1.0)

    # (a) tracefree tangential
    if n == 2:
        phi_tf = sl["f_tf"].scale(0.0)
    else:
        p = IndicialParams(n, float(n), g.theta0, float(gamma))
        if is_at_root(p):
            raise IndicialRootHit(gamma, nearest_root(n, float(n), g.theta0, gamma))
        phi_tf = _gated_solve(p, sl["f_tf"].scale(2.0), scale, smooth=(n % 2 == 1))

    # (b) trace by the explicit integral formula (psi enters as +n psi)
    ell0, ell_prime = _trace_below_n(ctx, sl["f00"], gamma, scale)

    # (c), (d): first-order integrations
    phi_nn0, phi_ns = _first_order_parts(ctx, sl, gamma, ell_prime, scale)

    if psi_override is not None:
        psi = np.asarray(psi_override, dtype=complex)
    else:
        psi = _psi_by_bianchi(jet, gamma, sl, phi_tf, ell0, ell_prime, phi_nn0, phi_ns)

    phi = _assemble_phi(ctx, jet, phi_tf, phi_nn0, phi_ns, ell0, psi)
    return OrderSolution(gamma=gamma, phi=phi, psi=psi)


def _trace_below_n(ctx, f00, gamma, scale):
    """ell0 (the psi-independent part of the trace) and ell' node values.

    ell(theta) = 2[cos(theta) A(theta) + C(theta) - A(0)] + n psi, with
    A(theta) = int_theta^t0 csc^3 f00 and C(theta) = int_0^theta cos csc^3 f00;
    ell'(theta) = -2 sin(theta) A(theta).
    """
    g = ctx.grid
    # f00 = sin^2 (tr dd - cot tr d)-combined vanishes like theta^3: the
    # even part is O(theta^4), but odd theta^n content of hbar (allowed at
    # exponent n and above) feeds an O(theta^3) odd part for n = 3
    w = _csc_power_values(g, f00, 3, 3)
    B = g.cumulative_integral(w)
    A = B[..., -1:] - B
    C = g.cumulative_integral(g.cos * w)
    ell0 = 2.0 * (g.cos * A + C - B[..., -1:])
    ell_prime = -2.0 * g.sin * A
    return ell0, ell_prime


def _first_order_parts(ctx, sl, gamma, ell_prime, scale):
    """phi_nn (psi-independent part) and phi_ns from the 0n / 0s slices."""
    g = ctx.grid
    n = ctx.n
    w0n = _csc_power_values(g, sl["f0n"], 2, 2)
    rhs_nn = ((gamma - 1.0) * ell_prime - 2.0 * w0n) / (gamma - n)
    end = np.max(np.abs(rhs_nn[..., -1]))
    if end > 1e-7 * max(scale, 1.0):
        raise ConsistencyFailure(
            f"(nn) slope does not vanish at theta0: {end:.2e}"
        )
    phi_nn0 = g.cumulative_integral(rhs_nn)

    w0t = _csc_power_values(g, sl["f0t"], 2, 2)
    rhs_ns = -2.0 * w0t / (gamma - n)
    end = np.max(np.abs(rhs_ns[..., -1]))
    if end > 1e-7 * max(scale, 1.0):
        raise ConsistencyFailure(
            f"(ns) slope does not vanish at theta0: {end:.2e}"
        )
    phi_ns = g.cumulative_integral(rhs_ns)
    return phi_nn0, phi_ns


def _assemble_phi(ctx, jet, phi_tf, phi_nn0, phi_ns, ell0, psi, psi_in_nn=True):
    """phi_{mu nu} from the pieces; the trace is distributed over k_0."""
    n = ctx.n
    g = ctx.grid
    N = g.N
    k0 = np.asarray(jet.k_jet[0])
    k0b = np.repeat(k0[..., None], N, axis=-1)
    psi_b = np.repeat(np.asarray(psi)[..., None], N, axis=-1)

    # scalar (nodal) parts
    nn_vals = phi_nn0 + (psi_b if psi_in_nn else 0.0)
    ell_vals = ell0 + float(n) * psi_b

    # tangential trace part: (ell - phi_nn)/(n-1) * k0
    tang_tr = (ell_vals - nn_vals) / (n - 1.0)
    tang = ctx.modes.pair("...,st...->st...", tang_tr, k0b)

    def build(tf_vals):
        out = np.zeros((n, n) + tf_vals.shape[-ctx.modes.dim - 1 :], dtype=complex)
        out[: n - 1, : n - 1] = tf_vals + tang
        out[n - 1, : n - 1] = phi_ns
        out[: n - 1, n - 1] = phi_ns
        out[n - 1, n - 1] = nn_vals
        return out

    # phi_tf may carry several theta-ledger terms; fold the nodal parts in once
    terms = []
    added_smooth = False
    for a, i, v in phi_tf.terms:
        if i == 0 and abs(a) < 1e-9:
            terms.append((0.0, 0, build(v)))
            added_smooth = True
        else:
            arr = np.zeros((n, n) + v.shape[-ctx.modes.dim - 1 :], dtype=complex)
            arr[: n - 1, : n - 1] = v
            terms.append((a, i, arr))
    if not added_smooth:
        terms.append((0.0, 0, build(np.zeros_like(tang))))
    return LogThetaSeries(g, terms)


def _trace_slice_constant(jet_trial, gamma):
    """csc^2-normalized trace of the order-gamma omega-frame residual.

    Returns per-mode constants (the Bianchi identity makes the profile
    proportional to sin^2) plus the constancy defect.
    """
    ctx = jet_trial.ctx
    g = ctx.grid
    res = einstein_residual(jet_trial)
    sl = _repair_endpoints(g, _slice_lts(res.Emunu, gamma, "Emunu"))
    h0inv = _h0_inverse_modes(ctx, jet_trial.k_jet)
    tr = _pair_modes_lts(ctx, h0inv, sl, "ab,ab->")
    vals = _csc_power_values(g, tr, 2, 2)
    inner = vals[..., g.N // 4 : 3 * g.N // 4]
    c = np.mean(inner, axis=-1)
    defect = np.max(np.abs(inner - c[..., None]))
    return c, defect, max(res.norm(), 1.0)


def _with_perturbation(jet, gamma, phi):
    out = NormalFormMetricJet(
        ctx=jet.ctx,
        hbar=jet.hbar.copy(),
        chi=jet.chi.copy(),
        k_jet=list(jet.k_jet),
    )
    out.hbar.add_term(gamma, 0, phi)
    return out


def _psi_by_bianchi(jet, gamma, sl, phi_tf, ell0, ell_prime, phi_nn0, phi_ns):
    """Two-point affine determination of psi from the trace residual."""
    ctx = jet.ctx
    n = ctx.n
    zero = ctx.scalar_mode_array(0.0)
    one = ctx.scalar_mode_array(1.0)
    phi0 = _assemble_phi(ctx, jet, phi_tf, phi_nn0, phi_ns, ell0, zero)
    phi1 = _assemble_phi(ctx, jet, phi_tf, phi_nn0, phi_ns, ell0, one)
    c0, d0, scale = _trace_slice_constant(_with_perturbation(jet, gamma, phi0), gamma)
    c1, d1, _ = _trace_slice_constant(_with_perturbation(jet, gamma, phi1), gamma)
    zmode = ctx.modes.mode_index((0,) * ctx.modes.dim)
    slope = (c1 - c0)[zmode]
    # the trace slice shifts by (1-n)(gamma-n)(gamma+1) psi; doubling both
    # sides gives the textbook 2(1-n)(gamma-n)(gamma+1) for 2 tr(I(phi))
    expected = (1.0 - n) * (gamma - n) * (gamma + 1.0)
    if abs(slope - expected) > 1e-6 * max(1.0, abs(expected)):
        raise ConsistencyFailure(
            f"Bianchi slope {slope:.6g} != {expected:.6g} at gamma={gamma}"
        )
    if max(d0, d1) > 1e-4 * scale:
        raise ConsistencyFailure(
            f"trace residual slice is not proportional to sin^2: {max(d0,d1):.2e}"
        )
    return -c0 / slope


# ---------------------------------------------------------------------------
# gamma = n


def solve_order_n(jet, psi_free=None, residual=None):
    """The order-n branch: obstruction test, then the degenerate solves."""
    ctx = jet.ctx
    g = ctx.grid
    n = ctx.n
    at_half_pi = abs(g.theta0 - math.pi / 2.0) < 1e-12
    res = residual if residual is not None else einstein_residual(jet)
    sl = residual_slices(jet, res, n)
    scale = max(res.norm(), 1.0)
    psi = np.asarray(
        psi_free if psi_free is not None else ctx.scalar_mode_array(0.0),
        dtype=complex,
    )

    # (a) tracefree: obstruction at pi/2
    obstruction = None
    if n == 2:
        phi_tf = sl["f_tf"].scale(0.0)
    else:
        p = IndicialParams(n, float(n), g.theta0, float(n))
        if at_half_pi:
            K = obstruction_pairing(jet, sl["f_tf"])
            if np.max(np.abs(K)) > 1e-8 * scale:
                raise Obstructed(K)
            obstruction = K
            phi_tf = _gated_solve(
                p, sl["f_tf"].scale(2.0), scale, smooth=(n % 2 == 1)
            )
        else:
            if is_at_root(p):
                raise IndicialRootHit(n, nearest_root(n, float(n), g.theta0, n))
            phi_tf = _gated_solve(
                p, sl["f_tf"].scale(2.0), scale, smooth=(n % 2 == 1)
            )

    # (b) trace: I with the (2n)-dimensional angular weight, nu = 0
    p_tr = IndicialParams(2 * n, float(2 * n), g.theta0, 0.0)
    ell_t = _gated_solve(
        p_tr, sl["trace"].scale(2.0), scale, smooth=(n % 2 == 1 or n == 2)
    )
    ell0 = _smooth_values(ell_t, ctx)
    ell_prime = ell0 @ g.diff.T

    # (c) phi_nn via the scalar solve at nu = n - 2
    p_nn = IndicialParams(n, float(n), g.theta0, float(n - 2))
    sin2 = g.sin**2
    sincos = g.sin * g.cos
    rhs_vals = (
        2.0 * _smooth_values(sl["fnn"], ctx)
        + sincos * ell_prime
        - float(n) * (n - 2.0) * sin2 * ell0
    )
    rhs = LogThetaSeries(g, [(0.0, 0, rhs_vals)])
    # psi enters through both the trace (n psi) and the phi_nn shift:
    # coefficient (n-2)(1 - n^2) sin^2 psi
    psi_rhs = LogThetaSeries(
        g,
        [
            (
                0.0,
                0,
                (n - 2.0)
                * (1.0 - float(n) ** 2)
                * np.repeat(psi[..., None], g.N, axis=-1)
                * sin2,
            )
        ],
    )
    u_nn = _gated_solve(p_nn, rhs + psi_rhs, scale, smooth=(n % 2 == 1 or n == 2))
    phi_nn0 = _smooth_values(u_nn, ctx)

    # (d) phi_ns via I at nu = 0 (first-order integrable form)
    p_ns = IndicialParams(n, float(n), g.theta0, 0.0)
    phi_ns_t = _gated_solve(
        p_ns, sl["fns"].scale(2.0), scale, smooth=(n % 2 == 1 or n == 2)
    )
    phi_ns = _smooth_values(phi_ns_t, ctx)

    ell_psi_indep = ell0.copy()
    phi = _assemble_phi_order_n(
        ctx, jet, phi_tf, phi_nn0, phi_ns, ell_psi_indep, psi
    )
    return OrderSolution(gamma=n, phi=phi, psi=psi, obstruction=obstruction)


def _assemble_phi_order_n(ctx, jet, phi_tf, phi_nn0, phi_ns, ell0, psi):
    n = ctx.n
    g = ctx.grid
    N = g.N
    k0 = np.asarray(jet.k_jet[0])
    k0b = np.repeat(k0[..., None], N, axis=-1)
    psi_b = np.repeat(np.asarray(psi)[..., None], N, axis=-1)
    nn_vals = phi_nn0 + psi_b
    ell_vals = ell0 + float(n) * psi_b
    tang_tr = (ell_vals - nn_vals) / (n - 1.0)
    tang = ctx.modes.pair("...,st...->st...", tang_tr, k0b)
    terms = []
    added = False
    for a, i, v in phi_tf.terms:
        if i == 0 and abs(a) < 1e-9:
            arr = np.zeros((n, n) + v.shape[-ctx.modes.dim - 1 :], dtype=complex)
            arr[: n - 1, : n - 1] = v + tang
            arr[n - 1, : n - 1] = phi_ns
            arr[: n - 1, n - 1] = phi_ns
            arr[n - 1, n - 1] = nn_vals
            terms.append((0.0, 0, arr))
            added = True
        else:
            arr = np.zeros((n, n) + v.shape[-ctx.modes.dim - 1 :], dtype=complex)
            arr[: n - 1, : n - 1] = v
            terms.append((a, i, arr))
    if not added:
        arr = np.zeros((n, n) + tang.shape[-ctx.modes.dim - 1 :], dtype=complex)
        arr[: n - 1, : n - 1] = tang
        arr[n - 1, : n - 1] = phi_ns
        arr[: n - 1, n - 1] = phi_ns
        arr[n - 1, n - 1] = nn_vals
        terms.append((0.0, 0, arr))
    return LogThetaSeries(g, terms)


def _smooth_values(lts, ctx):
    """Nodal values of a purely smooth LTS (absorbing integer exponents)."""
    g = ctx.grid
    total = 0.0
    for a, i, v in lts.terms:
        if i != 0:
            raise InvalidParams("unexpected log(theta) term")
        m = int(round(a))
        if abs(a - m) > 1e-9 or m < 0:
            raise InvalidParams(f"non-smooth exponent {a}")
        total = total + (v * g.nodes ** float(m) if m else v)
    return np.asarray(total)


def obstruction_pairing(jet, f_tf):
    """<f_tf, w_0> under sin^-(n+1): the mode array of the obstruction."""
    n = jet.ctx.n
    csc_weight = f_tf.mul_sin_power(float(n) - (n + 1.0))  # * sin^n * sin^-(n+1)
    return csc_weight.integrate_weighted(0.0)


# ---------------------------------------------------------------------------
# driver


def _restore_boundary(jet):
    """Reinstate hbar|_(theta=0) = chi (drho^2 + k_rho) by a theta-constant shift."""
    ctx = jet.ctx
    target = k_rho_series(ctx, jet.k_jet, jet.hbar.trunc) + drho2_series(
        ctx, jet.hbar.trunc
    )
    target = jet.chi.multiply(target, ",ab->ab", "sym2")
    for (j, k), c in sorted(target.terms.items()):
        cur = jet.hbar.coefficient(j, k)
        b = c.value_at_zero() - cur.value_at_zero()
        if np.max(np.abs(b)) > 0:
            jet.hbar.add_term(j, k, ctx.constant_coef("sym2", b))
    # orders present in hbar but not in the target
    for (j, k), cur in sorted(jet.hbar.terms.items()):
        if (j, k) not in target.terms:
            b = -cur.value_at_zero()
            if np.max(np.abs(b)) > 0:
                jet.hbar.add_term(j, k, ctx.constant_coef("sym2", b))
    return jet


def expand_einstein(problem, order, psi_free=None, trunc=None):
    """Driver: chain the order solves and return the normal-form jet."""
    n = problem.n
    trunc = max(order + 2, trunc or 0)
    jet = model_jet(problem, trunc=trunc)
    ctx = jet.ctx
    if psi_free is None and problem.psi_free_at_n is not None:
        psi_free = problem.psi_free_at_n
    for gamma in range(1, order + 1):
        res = einstein_residual(jet)
        slice_norm = max(
            res.E00.coefficient(gamma, 0).norm(),
            res.E0sigma.coefficient(gamma, 0).norm(),
            res.Emunu.coefficient(gamma, 0).norm(),
        )
        if slice_norm <= 1e-11 * max(res.norm(), 1.0) and gamma != n:
            continue
        if gamma == n:
            solution = solve_order_n(jet, psi_free=psi_free, residual=res)
        else:
            solution = solve_order(jet, gamma, residual=res)
        jet.hbar.add_term(gamma, 0, solution.phi)
        psi_coef = ctx.constant_coef("scalar", np.asarray(solution.psi))
        jet.chi.add_term(gamma, 0, psi_coef)
        _restore_boundary(jet)
    return jet


# ---------------------------------------------------------------------------
# contracted Bianchi identities (coordinate frame)


def bianchi_residual(jet, res=None):
    """B_0 and B_sigma of the displayed contracted identities.

    Both vanish identically (to truncation) for any jet when the hatted
    components come from einstein_residual of the same jet; this is the
    structural cross-check of the curvature formulas.
    """
    ctx = jet.ctx
    g = ctx.grid
    n = ctx.n
    if res is None:
        res = einstein_residual(jet)
    hat = residual_to_coordinate_frame(res, jet)
    E00, E0s, Emn = hat["E00"], hat["E0sigma"], hat["Emunu"]
    H = jet.hbar
    Hinv = series_inverse_sym2(H)
    Hd = H.theta_derivative()
    trHd = Hinv.multiply(Hd, "ab,ab->", "scalar")
    from .geometry import christoffel_bar
    from .rhoseries import stack_coordinate_derivatives

    Gb = christoffel_bar(H)
    sin2 = lambda a: a.mul_sin_power(2.0)
    sincos = lambda a: a.mul_sin_power(1.0).mul_smooth_theta(g.cos)
    rho_vec = Hinv.slice_axis(1, n - 1, "covector")

    dE0s = stack_coordinate_derivatives(E0s, "matrix")  # (mu, sigma)
    dEmn = stack_coordinate_derivatives(Emn, "tensor3")  # (nu, mu, sigma)

    B0 = sin2(E00.theta_derivative())
    B0 = B0 + sin2(Hinv.multiply(dE0s, "mn,nm->", "scalar")).rho_shift(2.0).scale(2.0)
    B0 = B0 - sin2(Hinv.multiply(Emn.theta_derivative(), "mn,mn->", "scalar")).rho_shift(2.0)
    B0 = B0 + sincos(E00).scale(2.0 * (1.0 - n))
    B0 = B0 + sin2(trHd.multiply(E00, ",->", "scalar"))
    B0 = B0 + sin2(rho_vec.multiply(E0s, "l,l->", "scalar")).rho_shift(1.0).scale(
        2.0 * (2.0 - n)
    )
    GG = Hinv.multiply(Gb, "mn,mne->e", "covector")
    GG = Hinv.multiply(GG, "el,e->l", "covector")
    B0 = B0 - sin2(GG.multiply(E0s, "l,l->", "scalar")).rho_shift(2.0).scale(2.0)

    Bs = sin2(E0s.theta_derivative()).scale(2.0)
    Bs = Bs - sin2(stack_coordinate_derivatives(E00, "covector"))
    Bs = Bs + sin2(Hinv.multiply(dEmn, "mn,nms->s", "covector")).rho_shift(2.0).scale(2.0)
    Bs = Bs - sin2(Hinv.multiply(dEmn, "mn,smn->s", "covector")).rho_shift(2.0)
    Bs = Bs + sincos(E0s).scale(2.0 * (1.0 - n))
    Bs = Bs + sin2(trHd.multiply(E0s, ",s->s", "covector"))
    Bs = Bs + sin2(rho_vec.multiply(Emn, "l,sl->s", "covector")).rho_shift(1.0).scale(
        2.0 * (2.0 - n)
    )
    Bs = Bs - sin2(GG.multiply(Emn, "l,sl->s", "covector")).rho_shift(2.0).scale(2.0)
    return {"B0": B0, "Bsigma": Bs}


def divergence_bianchi(jet, res=None):
    """Independent evaluation of the same identity from the generic
    divergence formula with the full coordinate-frame Christoffels."""
    ctx = jet.ctx
    n = ctx.n
    g = ctx.grid
    if res is None:
        res = einstein_residual(jet)
    hat = residual_to_coordinate_frame(res, jet)
    from .geometry import christoffel
    from .rhoseries import stack_coordinate_derivatives

    ch = christoffel(jet)
    Hinv = ch["Hinv"]
    sin2 = lambda a: a.mul_sin_power(2.0)

    # assemble hatted E with indices 0..n and inverse metric g^ij
    # g^00 = sin^2, g^{mu nu} = sin^2 rho^2 Hinv
    E00, E0s, Emn = hat["E00"], hat["E0sigma"], hat["Emunu"]

    dE00 = E00.theta_derivative()
    dE0s_th = E0s.theta_derivative()
    dEmn_th = Emn.theta_derivative()
    dE00_x = stack_coordinate_derivatives(E00, "covector")
    dE0s_x = stack_coordinate_derivatives(E0s, "matrix")
    dEmn_x = stack_coordinate_derivatives(Emn, "tensor3")

    # B_i = 2 g^{jk} d_k E_ij - g^{jk} d_i E_jk - 2 g^{jk} g^{ql} Gamma_{jkq} E_il
    # split j,k over {0} u {mu}; i = 0 or sigma.
    out = {}

    G000 = ch["G000"]
    Gmn0 = ch["Gmn0"]
    G0ms = ch["G0ms"]
    Gmns = ch["Gmns"]

    # common contraction: T^l := g^{jk} g^{ql} Gamma_{jkq}
    # theta-theta part: g^{00} g^{00} Gamma_{000} (l = 0)
    #                  + g^{00} g^{ql} Gamma_{00q} (= 0)
    # mu-nu part: g^{mn}[g^{00} Gamma_{mn0} (l=0) + g^{ql} Gamma_{mnq}]
    T0 = sin2(sin2(G000)) + sin2(sin2(Hinv.multiply(Gmn0, "mn,mn->", "scalar"))).rho_shift(2.0)
    Tl = sin2(sin2(Hinv.multiply(
        Hinv.multiply(Gmns, "ql,mnq->mnl", "tensor3"), "mn,mnl->l", "covector"
    ))).rho_shift(4.0)

    B0 = sin2(dE00).scale(2.0) + sin2(
        Hinv.multiply(dE0s_x, "mk,km->", "scalar")
    ).rho_shift(2.0).scale(2.0)
    B0 = B0 - sin2(dE00) - sin2(
        Hinv.multiply(dEmn_th, "jk,jk->", "scalar")
    ).rho_shift(2.0)
    B0 = B0 - T0.multiply(E00, ",->", "scalar").scale(2.0)
    B0 = B0 - Tl.multiply(E0s, "l,l->", "scalar").scale(2.0)
    out["B0"] = B0

    Bs = sin2(dE0s_th).scale(2.0) + sin2(
        Hinv.multiply(dEmn_x, "mk,kms->s", "covector")
    ).rho_shift(2.0).scale(2.0)
    grad_s = stack_coordinate_derivatives(E00, "covector")
    Bs = Bs - sin2(grad_s)
    Bs = Bs - sin2(Hinv.multiply(dEmn_x, "jk,sjk->s", "covector")).rho_shift(2.0)
    Bs = Bs - T0.multiply(E0s, ",s->s", "covector").scale(2.0)
    Bs = Bs - Tl.multiply(Emn, "l,sl->s", "covector").scale(2.0)
    out["Bsigma"] = Bs
    return out


# ---------------------------------------------------------------------------
# obstruction tensor


def obstruction_tensor(problem, return_jet=False):
    """The conformal obstruction K(tau) at theta0 = pi/2.

    Builds the order-(n-1) Einstein jet, pairs the tracefree tangential
    part of the order-n residual slice against sin^n(theta) under the
    sin^-(n+1) measure, and projects the result tracefree against k_0.
    """
    n = problem.n
    if abs(problem.theta0 - math.pi / 2.0) > 1e-12:
        raise InvalidParams("the obstruction tensor is defined at theta0 = pi/2")
    jet = expand_einstein(problem, n - 1)
    ctx = jet.ctx
    res = einstein_residual(jet)
    sl = residual_slices(jet, res, n)
    K = obstruction_pairing(jet, sl["f_tf"])
    # project tracefree against k0 (removes quadrature-level trace noise)
    k0inv = _k0_inverse_modes(ctx, jet.k_jet)
    k0 = np.asarray(jet.k_jet[0])
    tr = ctx.modes.pair("pq...,pq...->...", k0inv, K, theta=False)
    K = K - ctx.modes.pair("...,st...->st...", tr, k0, theta=False) / (n - 1.0)
    if return_jet:
        return K, jet
    return K
