import numpy as np
import pytest

from cornerexp.errors import NegativePowerProduced, RankMismatch
from cornerexp.modes import TorusModes
from cornerexp.rhoseries import (
    RhoLogExpansion,
    SeriesContext,
    identity_sym2,
    series_inverse_sym2,
    series_mul,
)
from cornerexp.thetagrid import LogThetaSeries, ThetaGrid

PI = np.pi


@pytest.fixture(scope="module")
def ctx():
    return SeriesContext(n=3, grid=ThetaGrid(PI / 2, 32), modes=TorusModes(2, 2))


def scalar_const(ctx, value, j=0, k=0, trunc=4):
    out = RhoLogExpansion(ctx, "scalar", trunc)
    arr = ctx.scalar_mode_array(value)
    out.set_term(j, k, ctx.constant_coef("scalar", arr))
    return out


def test_mode_convolution_exact():
    modes = TorusModes(2, 3)
    rng = np.random.default_rng(0)
    A = modes.zero_field()
    B = modes.zero_field()
    A[modes.mode_index((1, 0))] = 1.5
    A[modes.mode_index((-1, 0))] = 1.5
    B[modes.mode_index((0, 2))] = 0.5 - 0.25j
    B[modes.mode_index((0, -2))] = 0.5 + 0.25j
    C = modes.pair("...,...->...", A, B, theta=False)
    # product of cos-type fields: modes at (+-1, +-2) with amplitude 0.75-ish
    assert C[modes.mode_index((1, 2))] == pytest.approx(1.5 * (0.5 - 0.25j))
    assert C[modes.mode_index((-1, -2))] == pytest.approx(1.5 * (0.5 + 0.25j))
    assert abs(C[modes.mode_index((0, 0))]) < 1e-14


def test_mode_derivative_and_eval():
    modes = TorusModes(1, 3)
    A = modes.zero_field()
    A[modes.mode_index((1,))] = 1.0
    dA = modes.derivative(A, 0, theta=False)
    assert dA[modes.mode_index((1,))] == pytest.approx(1j)
    x = 0.7
    assert modes.eval_at(A, [x], theta=False) == pytest.approx(np.exp(1j * x))


def test_series_mul_polynomials(ctx):
    one_plus = scalar_const(ctx, 1.0)
    one_plus.add_term(1, 0, ctx.constant_coef("scalar", ctx.scalar_mode_array(1.0)))
    one_minus = scalar_const(ctx, 1.0)
    one_minus.add_term(1, 0, ctx.constant_coef("scalar", ctx.scalar_mode_array(-1.0)))
    prod = one_plus * one_minus
    # (1 + rho)(1 - rho) = 1 - rho^2
    z = ctx.modes.mode_index((0, 0))
    assert prod.coefficient(0, 0).terms[0][2][z][0] == pytest.approx(1.0)
    assert prod.coefficient(1, 0).norm() < 1e-14
    assert prod.coefficient(2, 0).terms[0][2][z][0] == pytest.approx(-1.0)


def test_series_mul_log_powers(ctx):
    a = scalar_const(ctx, 1.0, j=1, k=1)
    prod = a * a
    assert prod.coefficient(2, 2).norm() == pytest.approx(1.0)
    assert prod.coefficient(2, 1).norm() < 1e-15


def test_series_mul_matches_pointwise(ctx):
    rng = np.random.default_rng(3)
    a = RhoLogExpansion(ctx, "scalar", 3)
    b = RhoLogExpansion(ctx, "scalar", 3)
    for series in (a, b):
        for j in range(4):
            # keep inputs in half the band so products stay inside the cutoff
            arr = np.zeros(ctx.modes.shape)
            sub = rng.standard_normal((3, 3)) * 0.3
            sub = sub + sub[::-1, ::-1]
            arr[1:4, 1:4] = sub
            series.set_term(j, 0, ctx.constant_coef("scalar", arr))
    prod = a.multiply(b, ",->", "scalar", trunc=3)
    x = np.array([0.4, 1.1])
    th = 0.8
    for rho in (0.1, 0.2):
        va = a.evaluate(th, x, rho)
        vb = b.evaluate(th, x, rho)
        vp = prod.evaluate(th, x, rho)
        # truncation error is O(rho^4)
        assert abs(vp - va * vb) < 60 * rho**4


def test_ring_axioms():
    # triple products must stay inside the mode band for exact associativity
    ctx = SeriesContext(n=3, grid=ThetaGrid(PI / 2, 32), modes=TorusModes(2, 3))

    def rand_series(seed):
        r = np.random.default_rng(seed)
        s = RhoLogExpansion(ctx, "scalar", 3)
        for j in range(4):
            arr = np.zeros(ctx.modes.shape)
            arr[2:5, 2:5] = r.standard_normal((3, 3)) * 0.5
            s.set_term(j, 0, ctx.constant_coef("scalar", arr))
        return s

    a, b, c = rand_series(1), rand_series(2), rand_series(3)
    ab_c = (a * b) * c
    a_bc = a * (b * c)
    diff = ab_c - a_bc
    assert diff.norm() < 1e-12 * max(1.0, ab_c.norm())
    lhs = a * (b + c)
    rhs = a * b + a * c
    assert (lhs - rhs).norm() < 1e-12 * max(1.0, lhs.norm())


def test_rho_derivative_ledger(ctx):
    a = scalar_const(ctx, 1.0, j=2, k=1)
    da = a.rho_derivative()
    # d/drho rho^2 log rho = 2 rho log rho + rho
    assert da.coefficient(2, 1).norm() == pytest.approx(2.0)
    assert da.coefficient(2, 0).norm() == pytest.approx(1.0)
    # base shifts down by one
    assert da.base == pytest.approx(-1.0)


def test_rho_derivative_leibniz(ctx):
    rng = np.random.default_rng(9)
    a = RhoLogExpansion(ctx, "scalar", 3)
    b = RhoLogExpansion(ctx, "scalar", 3)
    for series, r in ((a, np.random.default_rng(10)), (b, np.random.default_rng(11))):
        for j in range(4):
            for k in range(0, 2 if j else 1):
                series.set_term(j, k, ctx.constant_coef("scalar", r.standard_normal(ctx.modes.shape)))
    left = (a * b).rho_derivative()
    right = a.rho_derivative().multiply(b, ",->", "scalar") + a.multiply(
        b.rho_derivative(), ",->", "scalar"
    )
    # compare up to the common truncation
    common = min(left.trunc, right.trunc)
    for j in range(common + 1):
        for k in range(3):
            d = left.coefficient(j, k) - right.coefficient(j, k)
            assert d.norm() < 1e-10 * max(1.0, left.norm())


def test_rho_derivative_negative_power(ctx):
    a = scalar_const(ctx, 1.0, j=0, k=1)
    with pytest.raises(NegativePowerProduced):
        a.rho_derivative()


def test_tangential_derivative(ctx):
    a = RhoLogExpansion(ctx, "scalar", 2)
    arr = ctx.scalar_mode_array()
    arr[ctx.modes.mode_index((1, 0))] = 1.0
    a.set_term(0, 0, ctx.constant_coef("scalar", arr))
    da = a.tangential_derivative(0)
    assert da.coefficient(0, 0).terms[0][2][
        ctx.modes.mode_index((1, 0))
    ][0] == pytest.approx(1j)
    # mixed partials commute
    m1 = a.tangential_derivative(0).tangential_derivative(1)
    m2 = a.tangential_derivative(1).tangential_derivative(0)
    assert (m1 - m2).norm() < 1e-15


def test_theta_rho_commute(ctx):
    a = RhoLogExpansion(ctx, "scalar", 3)
    for j in range(1, 4):
        vals = np.zeros(ctx.modes.shape + (ctx.grid.N,), dtype=complex)
        vals[ctx.modes.mode_index((0, 0))] = np.sin((j + 1) * ctx.grid.nodes)
        a.set_term(j, 0, LogThetaSeries(ctx.grid, [(0.0, 0, vals)]))
    d1 = a.rho_derivative().theta_derivative()
    d2 = a.theta_derivative().rho_derivative()
    assert (d1 - d2).norm() < 1e-11 * max(1.0, d1.norm())


def test_extract_order(ctx):
    c = ctx.constant_coef("scalar", ctx.scalar_mode_array(2.5))
    a = RhoLogExpansion(ctx, "scalar", 4)
    a.set_term(3, 0, c)
    assert a.extract_order(3, 0).norm() == pytest.approx(2.5)
    assert a.extract_order(2, 0).norm() == 0.0
    assert a.extract_order(3, 1).norm() == 0.0


def test_inverse_identity(ctx):
    ident = identity_sym2(ctx, 3)
    inv = series_inverse_sym2(ident)
    diff = inv - ident
    assert diff.norm() < 1e-13


def test_inverse_neumann(ctx):
    rng = np.random.default_rng(12)
    a = identity_sym2(ctx, 4)
    n = ctx.n
    B = np.zeros((n, n) + ctx.modes.shape, dtype=complex)
    for i in range(n):
        for l in range(i, n):
            arr = 0.2 * rng.standard_normal(ctx.modes.shape)
            arr = arr + arr[::-1, ::-1]
            B[i, l] = arr / 2.0
            B[l, i] = arr / 2.0
    a.add_term(1, 0, ctx.constant_coef("sym2", B))
    inv = series_inverse_sym2(a)
    prod = a.multiply(inv, "ab,bc->ac", "sym2")
    diff = prod - identity_sym2(ctx, 4)
    assert diff.norm() < 1e-10


def test_serialization_round_trip(ctx):
    a = RhoLogExpansion(ctx, "scalar", 3)
    rng = np.random.default_rng(20)
    a.set_term(1, 0, ctx.constant_coef("scalar", rng.standard_normal(ctx.modes.shape)))
    vals = np.zeros(ctx.modes.shape + (ctx.grid.N,), dtype=complex)
    vals[ctx.modes.mode_index((1, 1))] = np.cos(ctx.grid.nodes)
    a.set_term(2, 1, LogThetaSeries(ctx.grid, [(0.5, 1, vals)]))
    d = a.to_dict()
    b = RhoLogExpansion.from_dict(d, ctx)
    assert (a - b).norm() < 1e-15
