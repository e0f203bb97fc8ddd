import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from targetzone.bvp import Grid, GridSolution
from targetzone.policy import (
    VALUE_TABLE_HEADER,
    PolicyFn,
    control_sign_band,
    fit_blowup_rate,
    hamiltonian,
    read_value_table,
    write_value_table,
)
from targetzone.transform import DistanceFn, DomainError, residual_reduced_hjb


def cubic_policy(p, coeffs=(0.75, 0.4, -1.1, 0.7), n=41):
    """Policy whose U is an exact cubic, so the Hermite interpolant reproduces it."""
    g = Grid.uniform(p.beta_minus, p.beta_plus, n)
    c = np.array(coeffs)
    U = np.polynomial.polynomial.polyval(g.nodes, c)
    dU = np.polynomial.polynomial.polyval(g.nodes, np.polynomial.polynomial.polyder(c))
    d2 = np.polynomial.polynomial.polyval(g.nodes, np.polynomial.polynomial.polyder(c, 2))
    sol = GridSolution(g, U, dU, d2, 0.0, 0, 0.0, 1e-9)
    return PolicyFn(sol, DistanceFn.for_params(p), p), c


def test_hermite_reproduces_cubics(fig2):
    pf, c = cubic_policy(fig2)
    x = np.random.default_rng(0).uniform(0.001, 0.999, 200)
    U, U1 = pf.u_factor_at(x)
    np.testing.assert_allclose(U, np.polynomial.polynomial.polyval(x, c), rtol=1e-13)
    np.testing.assert_allclose(U1, np.polynomial.polynomial.polyval(x, np.polynomial.polynomial.polyder(c)),
                               rtol=1e-12, atol=1e-13)


def test_value_at_nodes_is_exact(preset_policy):
    s = preset_policy.solution
    for i in (1, 7, 500, 1000, s.grid.n - 2):
        x = s.grid.nodes[i]
        d = (x - 0.0) * (1.0 - x) / 1.0
        assert preset_policy.value_at(x) == -s.values[i] * np.log(d)


def test_value_derivative_matches_finite_differences(preset_policy):
    xs = np.linspace(0.02, 0.98, 100)
    h = 1e-6
    fd = (preset_policy.value_at(xs + h) - preset_policy.value_at(xs - h)) / (2 * h)
    np.testing.assert_allclose(preset_policy.value_derivative_at(xs), fd, atol=1e-4)


def test_boundary_signs_of_value_derivative(preset_policy):
    assert preset_policy.value_derivative_at(1e-3) < 0
    assert preset_policy.value_derivative_at(1 - 1e-3) > 0


def test_control_formulas_agree(preset_policy):
    xs = np.random.default_rng(1).uniform(1e-4, 1 - 1e-4, 1000)
    a, b = preset_policy.control_at(xs), preset_policy.control_at_u_form(xs)
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-10)


def test_control_large_near_barriers_fig2(fig2_policy):
    assert fig2_policy.control_at(1e-3) > 10
    assert fig2_policy.control_at(1 - 1e-3) < -10


def test_control_vanishes_where_slope_is_minus_one_over_gamma(fig2):
    # U = a(x) chosen so that V'(x*) = -1/gamma at a node; u must be zero there
    pf, _ = cubic_policy(fig2)
    from scipy.optimize import brentq
    g = fig2.gamma
    x_star = brentq(lambda x: pf.value_derivative_at(x) + 1 / g, 0.3, 0.7)
    assert abs(pf.control_at(x_star)) < 1e-12


def test_scalar_and_array_outputs(fig2_policy):
    assert isinstance(fig2_policy.value_at(0.4), float)
    assert fig2_policy.value_at(np.array([0.4, 0.5])).shape == (2,)


@pytest.mark.parametrize("x", [0.0, 1.0, -0.2, 1.3, np.nan])
def test_exterior_points_are_rejected(fig2_policy, x):
    for fn in (fig2_policy.value_at, fig2_policy.value_derivative_at, fig2_policy.control_at):
        with pytest.raises(DomainError):
            fn(x)


def test_mismatched_interval_rejected(fig2_policy, fig2):
    with pytest.raises(ValueError):
        PolicyFn(fig2_policy.solution, DistanceFn("quadratic", 0.0, 2.0), fig2)


def test_hamiltonian_trivial_and_reduction(fig2):
    assert hamiltonian(fig2, 0.3, 0.0, 0.0, 0.0, 0.0) == 0.0
    rng = np.random.default_rng(5)
    x = rng.uniform(0, 1, 100)
    V, V1, V2 = rng.normal(size=(3, 100)) * 10
    uh = -(fig2.gamma * V1 + 1) / (2 * fig2.eta)
    np.testing.assert_allclose(hamiltonian(fig2, x, uh, V, V1, V2), residual_reduced_hjb(fig2, x, V, V1, V2),
                               atol=1e-12 * 100)


@settings(max_examples=300)
@given(st.floats(0.01, 0.99), st.floats(-1e3, 1e3), st.floats(-50, 50), st.floats(-1e3, 1e3),
       st.floats(-1e3, 1e3))
def test_hamiltonian_minimized_at_feedback_control(x, u, V, V1, V2):
    from conftest import fig3_params
    p = fig3_params()
    uh = -(p.gamma * V1 + 1) / (2 * p.eta)
    h_hat = hamiltonian(p, x, uh, V, V1, V2)
    assert hamiltonian(p, x, u, V, V1, V2) >= h_hat - 1e-9 * (1 + abs(h_hat))


def test_fit_blowup_rate_validation(fig2_policy):
    with pytest.raises(ValueError, match="resolution"):
        fit_blowup_rate(fig2_policy, "lower", (1e-5, 1e-2))
    with pytest.raises(ValueError, match="quarter"):
        fit_blowup_rate(fig2_policy, "lower", (1e-3, 0.3))
    with pytest.raises(ValueError):
        fit_blowup_rate(fig2_policy, "middle")
    with pytest.raises(ValueError):
        fit_blowup_rate(fig2_policy, "lower", (1e-2, 1e-3))


def test_fit_blowup_rate_exact_for_constant_u(fig2):
    # U = c exactly and d = x(1-x): V(e)/(-log e) = c (1 + log(1-e)/log e)
    c = fig2.blowup_coefficient
    pf, _ = cubic_policy(fig2, coeffs=(c, 0, 0, 0), n=2001)
    coef, dev = fit_blowup_rate(pf, "lower", (1e-3, 1e-2), n_samples=3)
    e = np.geomspace(1e-3, 1e-2, 3)
    ratio = c * (1 + np.log1p(-e) / np.log(e))
    assert coef == pytest.approx(ratio[0], rel=1e-13)
    assert dev == pytest.approx(np.max(np.abs(ratio / c - 1)), rel=1e-10)


def test_lower_bound_holds(preset_policy):
    p = preset_policy.params
    _, V, _, _ = preset_policy.node_derivatives()
    assert np.min(V) >= -1 / (4 * p.eta * p.lam) - 1e-6


def test_control_sign_band(fig2_policy, fig3_policy):
    assert control_sign_band(fig2_policy, "lower") > 0.5
    assert control_sign_band(fig2_policy, "upper") > 0.1
    assert 0 < control_sign_band(fig3_policy, "lower") < 0.05
    with pytest.raises(ValueError):
        control_sign_band(fig2_policy, "left")


def test_value_table_roundtrip(fig3_policy, tmp_path):
    path = write_value_table(fig3_policy, tmp_path / "v.csv")
    text = path.read_text()
    assert text.startswith(VALUE_TABLE_HEADER + "\n")
    assert "\r" not in text
    lines = text.splitlines()
    assert lines[1] == "0,0.048000000000000008,,,,"
    table = read_value_table(path)
    s = fig3_policy.solution
    assert table.shape == (s.grid.n, 6)
    np.testing.assert_array_equal(table[:, 0], s.grid.nodes)
    np.testing.assert_array_equal(table[:, 1], s.values)
    assert np.all(np.isnan(table[[0, -1], 2:]))
    _, V, res = fig3_policy.node_hjb_residuals()
    np.testing.assert_array_equal(table[1:-1, 2], V)
    np.testing.assert_array_equal(table[1:-1, 5], res)
