import math

import numpy as np
import pytest

from cornerexp.errors import InvalidParams
from cornerexp.specfun import gegenbauer, hyp2f1, hyp2f1_deriv, hyp2f1_full


def series_oracle(a, b, c, x, nterms=200):
    total = 1.0
    term = 1.0
    for k in range(nterms):
        term *= (a + k) * (b + k) / (c + k) / (k + 1) * x
        total += term
    return total


def test_hyp2f1_at_zero():
    assert hyp2f1(0.3, -1.7, 2.2, 0.0) == 1.0


def test_hyp2f1_degree_one():
    for b, c, x in [(1.5, 2.5, 0.3), (-0.7, 1.1, 0.8)]:
        assert hyp2f1(-1.0, b, c, x) == pytest.approx(1.0 - b / c * x, rel=1e-14)


def test_hyp2f1_log_identity():
    # 2F1(1,1;2;x) = -log(1-x)/x
    x = 0.5
    assert hyp2f1(1.0, 1.0, 2.0, x) == pytest.approx(-math.log(1 - x) / x, rel=1e-13)
    assert hyp2f1(1.0, 1.0, 2.0, x) == pytest.approx(series_oracle(1, 1, 2, x), rel=1e-12)


def test_hyp2f1_euler_branch_matches_series():
    # modest parameters, x above the branch switch
    for a, b, c in [(0.4, 1.3, 2.1), (-0.5, 2.2, 3.7), (1.1, 0.9, 1.8)]:
        x = 0.7
        assert hyp2f1(a, b, c, x) == pytest.approx(
            series_oracle(a, b, c, x, 2000), rel=1e-11
        )


def test_hyp2f1_invalid_c():
    with pytest.raises(InvalidParams):
        hyp2f1(1.0, 1.0, 0.0, 0.3)
    with pytest.raises(InvalidParams):
        hyp2f1(1.0, 1.0, -2.0, 0.3)


def test_hyp2f1_quality_flag():
    assert hyp2f1_full(0.5, 0.5, 1.5, 0.95).degraded
    assert not hyp2f1_full(0.5, 0.5, 1.5, 0.4).degraded


def test_hyp2f1_termination():
    # for a a non-positive integer, terms beyond |a| contribute nothing
    a, b, c, x = -3.0, 1.7, 2.4, 0.6
    exact = hyp2f1(a, b, c, x)
    assert exact == pytest.approx(series_oracle(a, b, c, x, 3), rel=1e-14)
    assert exact == pytest.approx(series_oracle(a, b, c, x, 50), rel=1e-14)


def test_hyp2f1_deriv():
    assert hyp2f1_deriv(0.7, 1.9, 2.3, 0.0) == pytest.approx(0.7 * 1.9 / 2.3)
    for x in (0.2, 0.6):
        assert hyp2f1_deriv(-1.0, 1.5, 2.5, x) == pytest.approx(-1.5 / 2.5, rel=1e-13)
    # (1,1,2;0.5) equals (1/2) 2F1(2,2;3;0.5)
    assert hyp2f1_deriv(1.0, 1.0, 2.0, 0.5) == pytest.approx(
        0.5 * hyp2f1(2.0, 2.0, 3.0, 0.5), rel=1e-13
    )


@pytest.mark.parametrize("a,b,c", [(0.4, 1.3, 2.1), (1.0, 1.0, 2.0), (-2.0, 0.9, 3.3)])
def test_hyp2f1_deriv_finite_difference(a, b, c):
    h = 1e-6
    for x in (0.2, 0.45, 0.7):
        fd = (hyp2f1(a, b, c, x + h) - hyp2f1(a, b, c, x - h)) / (2 * h)
        assert hyp2f1_deriv(a, b, c, x) == pytest.approx(fd, abs=1e-6, rel=1e-6)


def test_gegenbauer_bases():
    assert gegenbauer(0, 0.7, 0.3) == 1.0
    for alpha, x in [(0.7, 0.3), (2.5, -0.8)]:
        assert gegenbauer(1, alpha, x) == pytest.approx(2 * alpha * x)


def test_gegenbauer_degree_two():
    # C_2^alpha(x) = 2 alpha (alpha+1) x^2 - alpha
    assert gegenbauer(2, 1.0, 0.3) == pytest.approx(4 * 0.3**2 - 1.0)
    for alpha, x in [(0.8, 0.5), (3.0, -0.2)]:
        assert gegenbauer(2, alpha, x) == pytest.approx(
            2 * alpha * (alpha + 1) * x**2 - alpha, rel=1e-13
        )


def test_gegenbauer_parity():
    xs = np.linspace(-1, 1, 25)
    for k in range(13):
        for alpha in (0.6, 1.5, 3.0):
            left = gegenbauer(k, alpha, -xs)
            right = (-1.0) ** k * gegenbauer(k, alpha, xs)
            assert np.max(np.abs(left - right)) < 1e-12 * max(
                1.0, np.max(np.abs(right))
            )


def test_gegenbauer_ode_residual():
    # (1-x^2) C'' - (1+2a) x C' + k(k+2a) C = 0, spectral differentiation
    from cornerexp.thetagrid import ThetaGrid

    g = ThetaGrid(np.pi / 2, 51)
    # use the Chebyshev grid on [-0.95, 0.95] by remapping nodes
    x = -0.95 + 1.9 * g.nodes / g.theta0
    D = g.diff * (g.theta0 / 1.9)
    for k in (3, 7, 12):
        for alpha in (0.75, 2.0):
            C = gegenbauer(k, alpha, x)
            dC = D @ C
            ddC = D @ dC
            res = (1 - x**2) * ddC - (1 + 2 * alpha) * x * dC + k * (k + 2 * alpha) * C
            sample = np.linspace(5, len(x) - 6, 50).astype(int)
            assert np.max(np.abs(res[sample])) < 1e-8 * max(1.0, np.max(np.abs(C)))
