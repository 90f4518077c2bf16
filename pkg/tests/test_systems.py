import numpy as np
import pytest
from scipy.integrate import quad

from ssmred.polybasis import exponent_matrix
from ssmred.systems import (DivergenceError, VectorField, duffing, duffing_double_well,
                            integrate_batch, integrate_rk4, modal_field, modal_linear,
                            numerical_jacobian, observable_lift, pair_block_transform,
                            polynomial_observable, rk4_path, slow_fast_poly, stuart_landau)


def _radius_closed_form(alpha0, beta, r0, t):
    # u = rho^-2 solves u' = -2 alpha0 u - 2 beta
    u = (r0 ** -2 + beta / alpha0) * np.exp(-2 * alpha0 * t) - beta / alpha0
    return u ** -0.5


def test_rk4_is_fourth_order():
    field = VectorField(1, lambda x, t: -0.7 * x + np.cos(t))
    exact = lambda t: (np.exp(-0.7 * t) * (1 - 0.7 / 1.49)
                       + (0.7 * np.cos(t) + np.sin(t)) / 1.49)
    errors = []
    for dt in (0.1, 0.05, 0.025):
        ts = integrate_rk4(field, [1.0], (0.0, 2.0), dt)
        errors.append(abs(ts.values[0, -1] - exact(2.0)))
    ratios = np.array(errors[:-1]) / np.array(errors[1:])
    assert np.all(ratios > 14) and np.all(ratios < 18)


def test_stuart_landau_matches_closed_form():
    a0, b, g, w0 = 0.1, -0.4, 0.3, 2.0
    field = stuart_landau(a0, b, g, w0)
    r0, th0 = 0.2, 0.4
    ts = integrate_rk4(field, [r0 * np.cos(th0), r0 * np.sin(th0)], (0.0, 20.0), 0.005)
    t = ts.times
    rho = _radius_closed_form(a0, b, r0, t)
    np.testing.assert_allclose(np.hypot(*ts.values), rho, rtol=1e-8)
    rho2_int = quad(lambda s: _radius_closed_form(a0, b, r0, s) ** 2, 0, 20.0,
                    epsabs=1e-13, epsrel=1e-13)[0]
    theta_end = th0 + w0 * 20.0 + g * rho2_int
    z_end = complex(*ts.values[:, -1])
    assert abs(np.angle(z_end * np.exp(-1j * theta_end))) < 1e-7


def test_stuart_landau_truth():
    field = stuart_landau(0.1, -0.4, 0.3, 2.0)
    np.testing.assert_allclose(field.truth["limit_cycle_radius"], 0.5)
    np.testing.assert_allclose(np.sort_complex(np.linalg.eigvals(numerical_jacobian(field))),
                               np.sort_complex(field.truth["eigenvalues"]), atol=1e-8)
    assert "limit_cycle_radius" not in stuart_landau(-0.1, -0.4, 0.3, 2.0).truth


def test_limit_cycle_is_attracting():
    field = stuart_landau(0.2, -0.8, 0.0, 1.0)
    ts = integrate_rk4(field, [0.05, 0.0], (0.0, 80.0), 0.01)
    np.testing.assert_allclose(np.hypot(*ts.values[:, -1]), 0.5, rtol=1e-6)


def test_undamped_duffing_conserves_energy():
    field = duffing(damping=0.0, stiffness=1.0, beta=0.5)
    ts = integrate_rk4(field, [0.8, 0.0], (0.0, 30.0), 0.005)
    x, v = ts.values
    energy = 0.5 * v ** 2 + 0.5 * x ** 2 + 0.125 * x ** 4
    assert np.ptp(energy) < 1e-9


def test_duffing_linearization_and_validation():
    field = duffing(damping=0.2, stiffness=2.0)
    np.testing.assert_allclose(np.sort_complex(np.linalg.eigvals(numerical_jacobian(field))),
                               np.sort_complex(field.truth["eigenvalues"]), atol=1e-8)
    with pytest.raises(ValueError):
        duffing(mass=0.0)
    with pytest.raises(ValueError):
        duffing(damping=-1.0)


def test_double_well_equilibria():
    field = duffing_double_well(damping=0.5)
    for x in field.truth["equilibria"]:
        np.testing.assert_allclose(field([x, 0.0]), 0.0, atol=1e-14)
    jac_origin = numerical_jacobian(field)
    assert np.max(np.linalg.eigvals(jac_origin).real) > 0
    ts = integrate_rk4(field, [0.3, 0.0], (0.0, 60.0), 0.01)
    np.testing.assert_allclose(ts.values[:, -1], [1.0, 0.0], atol=1e-6)


def test_forced_duffing_time_dependence():
    field = duffing(forcing_amplitude=0.5, forcing_frequency=2.0)
    assert field.forced
    np.testing.assert_allclose(field([0.0, 0.0], 0.0), [0.0, 0.5])
    np.testing.assert_allclose(field([0.0, 0.0], np.pi / 4), [0.0, 0.0], atol=1e-15)


def test_modal_linear_spectrum():
    lam = [complex(-0.1, 1.0), complex(-0.1, -1.0), -2.0]
    field = modal_linear(lam)
    np.testing.assert_allclose(np.sort_complex(np.linalg.eigvals(field.truth["A"])),
                               np.sort_complex(lam))
    with pytest.raises(ValueError):
        modal_linear([complex(-0.1, 1.0), -2.0])


def test_batch_matches_single():
    field = stuart_landau(-0.1, -0.3, 0.2, 1.5)
    x0s = np.array([[0.3, -0.2, 0.1], [0.0, 0.4, 0.2]])
    batch = integrate_batch(field, x0s, (0.0, 5.0), 0.01)
    for k in range(3):
        single = integrate_rk4(field, x0s[:, k], (0.0, 5.0), 0.01)
        np.testing.assert_allclose(batch[:, k, :], single.values, rtol=1e-13, atol=1e-15)


def test_divergence_reports_time():
    field = VectorField(1, lambda x, t: x ** 2)
    with pytest.raises(DivergenceError) as info, np.errstate(over="ignore", invalid="ignore"):
        integrate_rk4(field, [1.0], (0.0, 2.0), 0.01)
    assert 0.9 < info.value.last_time < 1.1


def test_integration_argument_checks():
    field = stuart_landau(-0.1, 0.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        integrate_rk4(field, [1.0], (0.0, 1.0), 0.1)
    with pytest.raises(ValueError):
        integrate_rk4(field, [1.0, 0.0], (1.0, 0.0), 0.1)
    with pytest.raises(ValueError):
        integrate_rk4(field, [1.0, 0.0], (0.0, 1.0), 0.0)


def test_pair_block_transform_is_conjugate_consistent():
    T = pair_block_transform(2)
    q = np.array([1 + 2j, 1 - 2j, -0.5 + 0.1j, -0.5 - 0.1j])
    np.testing.assert_allclose(T @ q, [1, 2, -0.5, 0.1], atol=1e-15)


def test_modal_field_linearization():
    system = slow_fast_poly()
    field = modal_field(system)
    np.testing.assert_allclose(np.sort_complex(np.linalg.eigvals(numerical_jacobian(field))),
                               np.sort_complex(system.Lambda), atol=1e-7)


def test_modal_field_matches_modal_equations():
    system = slow_fast_poly()
    field = modal_field(system)
    rng = np.random.default_rng(2)
    x = 0.3 * rng.standard_normal(system.n)
    q = np.linalg.solve(system.T, x)
    dq = system.Lambda * q
    for order, G in system.G0.items():
        for col, expo in enumerate(exponent_matrix(system.n, order, order).exponents.T):
            dq = dq + G[:, col] * np.prod(q ** expo)
    np.testing.assert_allclose(field(x), (system.T @ dq).real, atol=1e-14)
    np.testing.assert_allclose((system.T @ dq).imag, 0.0, atol=1e-14)


def test_polynomial_observable():
    obs = polynomial_observable(2, 3, [{(1, 0): 1.0, (2, 1): 0.5}, {(0, 1): -1.0}])
    x = np.array([[0.5, 1.0], [2.0, -1.0]])
    np.testing.assert_allclose(obs(x), [[0.5 + 0.5 * 0.25 * 2.0, 1.0 - 0.5], [-2.0, 1.0]])
    with pytest.raises(ValueError):
        polynomial_observable(2, 2, [{(3, 0): 1.0}])


def test_observed_system_sample():
    field = stuart_landau(-0.1, 0.0, 0.0, 1.0)
    observed = observable_lift(field, lambda x: x[0] + x[1])
    ts = observed.sample([1.0, 0.0], (0.0, 1.0), 0.01)
    assert ts.values.shape == (1, 101)
    direct = integrate_rk4(field, [1.0, 0.0], (0.0, 1.0), 0.01)
    np.testing.assert_allclose(ts.values[0], direct.values.sum(axis=0))


def test_rk4_path_complex_state():
    path = rk4_path(lambda z, t: 1j * z, np.array([1.0 + 0j]), 0.0, 0.001, 1000)
    np.testing.assert_allclose(path[-1, 0], np.exp(1j), atol=1e-12)
