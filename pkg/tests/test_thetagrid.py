import numpy as np
import pytest

from cornerexp.errors import DivergentIntegral
from cornerexp.thetagrid import LogThetaSeries, ThetaGrid

PI = np.pi


@pytest.fixture(scope="module")
def grid():
    return ThetaGrid(PI / 2, 64)


def test_nodes_layout(grid):
    assert grid.nodes[0] == 0.0
    assert grid.nodes[-1] == pytest.approx(PI / 2)
    assert np.all(np.diff(grid.nodes) > 0)


def test_diff_matrix_on_polynomials(grid):
    t = grid.nodes
    for deg in (0, 1, 3, 7, 20):
        f = t**deg
        df = grid.diff @ f
        expect = deg * t ** (deg - 1) if deg > 0 else np.zeros_like(t)
        assert np.max(np.abs(df - expect)) < 1e-10 * max(1.0, deg**2)


def test_differentiate_sin(grid):
    u = LogThetaSeries.smooth(grid, np.sin(grid.nodes))
    du = u.deriv()
    err = np.abs(du.eval(grid.nodes[1:]) - np.cos(grid.nodes[1:]))
    assert np.max(err) < 1e-12


def test_differentiate_log_structure(grid):
    # u = theta^beta log(theta): derivative has log powers 1 and 0
    beta = 3.0
    u = LogThetaSeries(grid, [(beta, 1, np.ones(grid.N))])
    du = u.deriv()
    powers = {(round(a, 6), i) for a, i, v in du.terms if np.max(np.abs(v)) > 0}
    assert (round(beta - 1, 6), 1) in powers
    assert (round(beta - 1, 6), 0) in powers
    t = grid.nodes[1:]
    expect = t ** (beta - 1) * (beta * np.log(t) + 1.0)
    assert np.max(np.abs(du.eval(t) - expect)) < 1e-10


def test_differentiate_zero(grid):
    u = LogThetaSeries.zero(grid)
    assert u.deriv().norm() == 0.0


def test_cumulative_integral(grid):
    f = np.cos(grid.nodes)
    F = grid.cumulative_integral(f)
    assert np.max(np.abs(F - np.sin(grid.nodes))) < 1e-13


def test_integrate_weighted_trivial(grid):
    one = LogThetaSeries.smooth(grid, np.ones(grid.N))
    # int_0^(pi/2) sin = 1
    assert one.integrate_weighted(1.0) == pytest.approx(1.0, abs=1e-11)


def test_integrate_weighted_sin2_over_sin(grid):
    u = LogThetaSeries.sin_power(grid, 2.0)
    assert u.integrate_weighted(-1.0) == pytest.approx(1.0, abs=1e-11)


def test_integrate_weighted_endpoint_singular(grid):
    # u = theta^2 against sin^-2.5: singular endpoint but integrable;
    # compare with an adaptive quadrature oracle
    from scipy.integrate import quad

    u = LogThetaSeries(grid, [(2.0, 0, np.ones(grid.N))])
    val = u.integrate_weighted(-2.5)
    expect, _ = quad(lambda t: t**2 / np.sin(t) ** 2.5, 0.0, PI / 2, limit=200)
    assert val == pytest.approx(expect, abs=1e-10)


def test_integrate_weighted_divergent(grid):
    u = LogThetaSeries.smooth(grid, np.ones(grid.N))
    with pytest.raises(DivergentIntegral):
        u.integrate_weighted(-1.0)
    # theta^2 against sin^-3 hits the alpha + p <= -1 barrier
    v = LogThetaSeries(grid, [(2.0, 0, np.ones(grid.N))])
    with pytest.raises(DivergentIntegral):
        v.integrate_weighted(-3.0)


def test_integrate_additive_over_subintervals(grid):
    u = LogThetaSeries.smooth(grid, np.cos(grid.nodes) ** 2)
    total = u.integrate_weighted(1.0)
    mid = 0.3
    assert u.integrate_weighted(1.0, 0.0, mid) + u.integrate_weighted(
        1.0, mid, PI / 2
    ) == pytest.approx(total, abs=1e-10)


def test_leading_coefficients_sin2(grid):
    u = LogThetaSeries.sin_power(grid, 2.0)
    lead = u.leading_coefficients(2)
    (a0, i0, c0), (a1, i1, c1) = lead
    assert (round(a0), i0) == (2, 0)
    assert complex(c0).real == pytest.approx(1.0, abs=1e-9)
    assert (round(a1), i1) == (4, 0)
    assert complex(c1).real == pytest.approx(-1.0 / 3.0, abs=1e-8)


def test_leading_coefficients_theta_n_log(grid):
    u = LogThetaSeries(grid, [(3.0, 1, np.ones(grid.N))])
    (a, i, c) = u.leading_coefficients(1)[0]
    assert (round(a), i) == (3, 1)
    assert complex(c).real == pytest.approx(1.0, abs=1e-10)


def test_parity_defect(grid):
    u = LogThetaSeries.smooth(grid, np.cos(grid.nodes))
    assert u.parity_defect(6) < 5e-8
    assert u.parity_defect(4) < 1e-9
    v = LogThetaSeries.smooth(grid, np.sin(grid.nodes))
    assert v.parity_defect(2) == pytest.approx(1.0, abs=1e-8)
    w = LogThetaSeries.smooth(
        grid, np.cos(grid.nodes) + 1e-3 * grid.nodes**3
    )
    assert w.parity_defect(4) == pytest.approx(1e-3, rel=1e-4)


def test_series_product(grid):
    t = grid.nodes
    u = LogThetaSeries.smooth(grid, 1.0 + t)
    v = LogThetaSeries.smooth(grid, 1.0 - t)
    w = u * v
    pts = np.linspace(0.05, 1.4, 7)
    assert np.max(np.abs(w.eval(pts) - (1.0 - pts**2))) < 1e-12


def test_taylor_at_zero(grid):
    tay = grid.taylor_at_zero(np.exp(grid.nodes), 6)
    import math

    for m in range(6):
        assert tay[m] == pytest.approx(1.0 / math.factorial(m), rel=1e-5, abs=1e-7)
