import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ssmred.geometry import fit_ssm, project
from ssmred.normalform import (ConvergenceError, DefectiveJacobianError, LinearPart,
                               ReducedModel, UnsupportedStructureError, _DerivativeProblem,
                               _Layout, conjugacy_error, estimate_linear_part,
                               estimate_linear_part_map, fit_normal_form, fit_normal_form_map,
                               linear_part_from_jacobian, reduced_vector_field,
                               resonance_structure, simulate_reduced, to_normal_coordinates,
                               to_polar, to_reduced_coordinates)
from ssmred.polybasis import conjugate_permutation
from ssmred.systems import integrate_rk4, stuart_landau
from ssmred.trajectory import TimeSeries, delay_embed, finite_diff_derivative

ALPHA0, BETA, GAMMA, OMEGA0 = -0.0628, -0.0572, -1.67, 7.80


def _rotation_jacobian(alpha, omega):
    return np.array([[alpha, -omega], [omega, alpha]])


def _sl_data(amplitude=1.0, transform=None, T=30.0, dt=0.01, exact_derivatives=True):
    field = stuart_landau(ALPHA0, BETA, GAMMA, OMEGA0)
    states, derivs, nexts = [], [], []
    for phase in (0.0, 1.0, 2.0):
        x0 = amplitude * np.array([np.cos(phase), np.sin(phase)])
        x = integrate_rk4(field, x0, (0.0, T), dt).values
        if transform is not None:
            y, dy = transform(x, field(x))
        else:
            y, dy = x, field(x)
        states.append(y[:, :-1])
        nexts.append(y[:, 1:])
        derivs.append(dy[:, :-1] if exact_derivatives else finite_diff_derivative(y, dt)[:, :-1])
    return np.hstack(states), np.hstack(derivs), np.hstack(nexts)


# --------------------------------------------------------------- linear part


def test_resonance_structure_for_single_oscillator():
    lin = linear_part_from_jacobian(_rotation_jacobian(-0.1, 1.0))
    rs = resonance_structure(lin, 3)
    np.testing.assert_allclose(rs.Delta, [[-1, 1, 3, -2, 0, 2, 4], [-3, -1, 1, -4, -2, 0, 2]],
                               atol=1e-12)
    assert rs.pairs == [(0, 4), (1, 5)]
    assert rs.delta == 1e-8
    with pytest.raises(ValueError):
        resonance_structure(lin, 1)


def test_resonance_structure_two_oscillators():
    J = np.zeros((4, 4))
    J[:2, :2] = _rotation_jacobian(-0.1, 1.0)
    J[2:, 2:] = _rotation_jacobian(-0.3, 3.0)
    lin = linear_part_from_jacobian(J)
    rs = resonance_structure(lin, 3)
    idx = rs.exponents.index()
    # 1:3 internal resonance appears in the fast row
    assert rs.mask[2, idx[(3, 0, 0, 0)]]
    assert rs.mask[0, idx[(2, 1, 0, 0)]] and rs.mask[0, idx[(1, 0, 1, 1)]]
    swap = [1, 0, 3, 2]
    perm = conjugate_permutation(rs.exponents)
    for r in range(4):
        np.testing.assert_array_equal(rs.mask[swap[r], perm], rs.mask[r])


def test_linear_part_ordering_and_normalization():
    J = np.zeros((4, 4))
    J[:2, :2] = _rotation_jacobian(-0.3, 3.0)
    J[2:, 2:] = _rotation_jacobian(-0.1, 1.0)
    mix, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((4, 4)))
    lin = linear_part_from_jacobian(mix @ J @ mix.T)
    np.testing.assert_allclose(lin.Lambda, [-0.1 + 1j, -0.1 - 1j, -0.3 + 3j, -0.3 - 3j])
    np.testing.assert_allclose(lin.B @ np.diag(lin.Lambda) @ lin.Binv, mix @ J @ mix.T,
                               atol=1e-12)
    for col in (0, 2):
        b = lin.B[:, col]
        assert np.linalg.norm(b) ** 2 == pytest.approx(0.5)
        lead = b[np.flatnonzero(np.abs(b) > 1e-8)[0]]
        assert lead.real > 0 and abs(lead.imag) < 1e-12
        np.testing.assert_allclose(lin.B[:, col + 1], np.conj(b))


def test_linear_part_readout_normalization():
    readout = np.array([0.7, -0.2])
    lin = linear_part_from_jacobian(_rotation_jacobian(-0.1, 2.0), readout=readout)
    assert readout @ lin.B[:, 0] == pytest.approx(0.5)
    # a linear oscillation of amplitude r shows amplitude r in the readout channel
    z = 0.8 * np.exp(1j * np.linspace(0, 2 * np.pi, 200))
    signal = readout @ (lin.B @ np.vstack([z, np.conj(z)])).real
    assert np.max(signal) == pytest.approx(0.8, rel=1e-3)


def test_linear_part_real_eigenvalues_and_defective():
    lin = linear_part_from_jacobian(np.diag([-1.0, -3.0]))
    np.testing.assert_allclose(lin.Lambda, [-1.0, -3.0])
    with pytest.raises(DefectiveJacobianError):
        linear_part_from_jacobian(np.array([[-1.0, 1.0], [0.0, -1.0]]))


def test_estimate_linear_part_exact_on_linear_data():
    J = _rotation_jacobian(-0.2, 1.5)
    X = np.random.default_rng(0).standard_normal((2, 100))
    lin = estimate_linear_part(X, J @ X)
    np.testing.assert_allclose(lin.jacobian, J, atol=1e-12)
    with pytest.raises(ValueError):
        estimate_linear_part(X, J @ X, amplitude_cutoff=1e-3)


def test_higher_order_regression_removes_nonlinear_bias():
    X, Xd, _ = _sl_data()
    biased = estimate_linear_part(X, Xd, regression_order=1)
    exact = estimate_linear_part(X, Xd, regression_order=3)
    truth = _rotation_jacobian(ALPHA0, OMEGA0)
    np.testing.assert_allclose(exact.jacobian, truth, atol=1e-10)
    assert np.max(np.abs(biased.jacobian - truth)) > 1e-2


def test_estimate_linear_part_map():
    J = _rotation_jacobian(-0.2, 1.5)
    dt = 0.05
    vals, vecs = np.linalg.eig(J)
    A = (vecs @ np.diag(np.exp(vals * dt)) @ np.linalg.inv(vecs)).real
    X = np.random.default_rng(1).standard_normal((2, 100))
    lin = estimate_linear_part_map(X, A @ X, dt)
    np.testing.assert_allclose(lin.jacobian, J, atol=1e-10)


# ----------------------------------------------------------------- fitting


def test_identity_chart_recovers_cubic_coefficient():
    X, Xd, _ = _sl_data()
    lin = estimate_linear_part(X, Xd, regression_order=3)
    model = fit_normal_form(X, Xd, lin, resonance_structure(lin, 3))
    polar = to_polar(model)
    a, w = polar.coeffs(0)
    np.testing.assert_allclose([a[0], a[1], w[0], w[1]], [ALPHA0, BETA, OMEGA0, GAMMA],
                               rtol=1e-8)
    assert model.conjugacy_residual < 1e-16
    assert model.metadata["converged"]
    np.testing.assert_allclose(model.Hstar, 0.0, atol=1e-9)


def test_mask_discipline_and_conjugate_symmetry():
    def transform(x, dx):
        A = np.array([[1.0, 0.3], [0.2, 0.5]])
        y = A @ (x + 0.1 * x ** 2)
        dy = A @ (dx + 0.2 * x * dx)
        return y, dy

    X, Xd, _ = _sl_data(amplitude=0.5, transform=transform)
    lin = estimate_linear_part(X, Xd, regression_order=5)
    rs = resonance_structure(lin, 5)
    model = fit_normal_form(X, Xd, lin, rs)
    assert not np.any(model.Ncoef[~rs.mask])
    assert not np.any(model.Hstar[rs.mask])
    assert not np.any(model.H[rs.mask])
    perm = conjugate_permutation(rs.exponents)
    for C in (model.Ncoef, model.Hstar, model.H):
        np.testing.assert_allclose(C[1], np.conj(C[0, perm]))
    field = reduced_vector_field(model, X[:, :50], real=False)
    assert np.max(np.abs(field.imag)) < 1e-12
    pred = simulate_reduced(model, X[:, 0], 0.01, 100)
    assert pred.dtype == float


def test_coordinate_maps_invert_each_other():
    def transform(x, dx):
        return x + 0.1 * x ** 2, dx + 0.2 * x * dx

    X, Xd, _ = _sl_data(amplitude=0.5, transform=transform)
    lin = estimate_linear_part(X, Xd, regression_order=5)
    model = fit_normal_form(X, Xd, lin, resonance_structure(lin, 5))
    # the inverse map is a least-squares fit over the data, so the round trip
    # holds to approximation accuracy within the sampled amplitude range
    for scale in (0.05, 0.1, 0.2, 0.4):
        eta = scale * np.array([[1.0, -0.3], [0.4, 0.9]])
        back = to_reduced_coordinates(model, to_normal_coordinates(model, eta))
        assert np.max(np.abs(back - eta)) < 5e-3 * scale


def test_near_identity_chart_preserves_polar_coefficients():
    def transform(x, dx):
        A = np.array([[1.0, 0.3], [0.2, 0.5]])
        return A @ (x + 0.05 * x ** 2), A @ (dx + 0.1 * x * dx)

    X, Xd, _ = _sl_data(amplitude=0.4, transform=transform)
    A_inv_row = np.linalg.inv(np.array([[1.0, 0.3], [0.2, 0.5]]))[0]
    lin = estimate_linear_part(X, Xd, regression_order=5, readout=A_inv_row)
    model = fit_normal_form(X, Xd, lin, resonance_structure(lin, 5))
    a, w = to_polar(model).coeffs(0)
    np.testing.assert_allclose([a[0], w[0], w[1]], [ALPHA0, OMEGA0, GAMMA], rtol=1e-3)
    assert a[1] == pytest.approx(BETA, rel=1e-2)


def test_conjugacy_jacobian_matches_finite_differences():
    def transform(x, dx):
        return x + 0.1 * x ** 2, dx + 0.2 * x * dx

    X, Xd, _ = _sl_data(amplitude=0.5, transform=transform, T=5.0)
    lin = estimate_linear_part(X, Xd, regression_order=5)
    rs = resonance_structure(lin, 4)
    layout = _Layout(lin, rs)
    prob = _DerivativeProblem(layout, lin, rs.exponents, X[:, ::10], Xd[:, ::10])
    x = 0.1 * np.random.default_rng(0).standard_normal(layout.size)
    analytic = prob.jacobian(x)
    step = 1e-6
    fd = np.column_stack([(prob.residual(x + step * e) - prob.residual(x - step * e)) / (2 * step)
                          for e in np.eye(layout.size)])
    assert np.max(np.abs(analytic - fd)) < 1e-5 * max(1.0, np.max(np.abs(fd)))


def test_layout_pack_round_trip():
    lin = linear_part_from_jacobian(_rotation_jacobian(-0.1, 1.0))
    layout = _Layout(lin, resonance_structure(lin, 5))
    x = np.random.default_rng(3).standard_normal(layout.size)
    np.testing.assert_array_equal(layout.pack(*layout.unpack(x)), x)


def test_map_fit_agrees_with_derivative_fit():
    X, Xd, Xn = _sl_data(T=20.0)
    lin = estimate_linear_part(X, Xd, regression_order=3)
    rs = resonance_structure(lin, 3)
    deriv_model = fit_normal_form(X, Xd, lin, rs)
    map_model = fit_normal_form_map(X[:, ::10], Xn[:, ::10], 0.01, lin, rs)
    np.testing.assert_allclose(map_model.Ncoef, deriv_model.Ncoef, atol=1e-6)
    assert map_model.metadata["mode"] == "map"


def test_warm_start_reaches_same_model():
    X, Xd, _ = _sl_data(amplitude=0.6)
    lin = estimate_linear_part(X, Xd, regression_order=5)
    low = fit_normal_form(X, Xd, lin, resonance_structure(lin, 3))
    cold = fit_normal_form(X, Xd, lin, resonance_structure(lin, 5))
    warm = fit_normal_form(X, Xd, lin, resonance_structure(lin, 5), initial=low)
    np.testing.assert_allclose(warm.Ncoef, cold.Ncoef, atol=1e-8)
    assert warm.metadata["iterations"] <= cold.metadata["iterations"]


def test_conjugacy_error_matches_fit_residual():
    X, Xd, _ = _sl_data(amplitude=0.6, exact_derivatives=False)
    lin = estimate_linear_part(X, Xd, regression_order=5)
    model = fit_normal_form(X, Xd, lin, resonance_structure(lin, 3))
    assert conjugacy_error(model, X, Xd) == pytest.approx(model.conjugacy_residual, rel=1e-10)


def test_nonconvergence_raises_with_best_iterate():
    X, Xd, _ = _sl_data(amplitude=0.6)
    lin = estimate_linear_part(X, Xd, regression_order=5)
    with pytest.raises(ConvergenceError) as info:
        fit_normal_form(X, Xd, lin, resonance_structure(lin, 5), max_iter=1)
    assert isinstance(info.value.model, ReducedModel)
    assert np.isfinite(info.value.residual)


def test_non_oscillatory_spectrum_unsupported():
    lin = linear_part_from_jacobian(np.diag([-1.0, -3.0]))
    X = np.random.default_rng(0).standard_normal((2, 100))
    with pytest.raises(UnsupportedStructureError):
        fit_normal_form(X, X, lin, resonance_structure(lin, 3))


def test_polar_rejects_cross_mode_resonance():
    lam = np.array([-0.1 + 1j, -0.1 - 1j, -0.3 + 3j, -0.3 - 3j])
    lin = LinearPart(np.zeros((4, 4)), np.eye(4, dtype=complex), lam)
    rs = resonance_structure(lin, 3)
    idx = rs.exponents.index()
    Ncoef = np.zeros((4, rs.exponents.size), dtype=complex)
    Ncoef[0, idx[(2, 1, 0, 0)]] = -0.5 + 0.2j
    Ncoef[1, idx[(1, 2, 0, 0)]] = -0.5 - 0.2j
    zeros = np.zeros_like(Ncoef)
    polar = to_polar(ReducedModel(lin, rs, Ncoef, zeros, zeros, 0.0))
    assert polar.modes == 2
    np.testing.assert_allclose(polar.alpha0, [-0.1, -0.3])
    Ncoef[2, idx[(3, 0, 0, 0)]] = 0.1
    Ncoef[3, idx[(0, 3, 0, 0)]] = 0.1
    with pytest.raises(UnsupportedStructureError):
        to_polar(ReducedModel(lin, rs, Ncoef, zeros, zeros, 0.0))


@settings(max_examples=20, deadline=None)
@given(st.floats(-0.5, 0.5), st.floats(0.5, 5.0), st.floats(-1, 1), st.floats(-1, 1))
def test_polar_form_of_pure_normal_form(alpha, omega, beta, gamma):
    lin = linear_part_from_jacobian(_rotation_jacobian(alpha, omega))
    rs = resonance_structure(lin, 3)
    Ncoef = np.zeros((2, rs.exponents.size), dtype=complex)
    Ncoef[0, 4] = complex(beta, gamma)
    Ncoef[1, 5] = complex(beta, -gamma)
    zeros = np.zeros_like(Ncoef)
    a, w = to_polar(ReducedModel(lin, rs, Ncoef, zeros, zeros, 0.0)).coeffs(0)
    np.testing.assert_allclose([a[0], a[1], w[0], w[1]], [alpha, beta, omega, gamma],
                               atol=1e-12)


# ------------------------------------------------------- chart dependence


def _delay_fit(observable, amplitude):
    field = stuart_landau(ALPHA0, BETA, GAMMA, OMEGA0)
    dt = 0.01
    embedded = []
    for phase in (0.0, 1.0, 2.0):
        x0 = amplitude * np.array([np.cos(phase), np.sin(phase)])
        x = integrate_rk4(field, x0, (0.0, 40.0), dt).values
        embedded.append(delay_embed(TimeSeries(0.0, dt, observable(x)), 5, 1))
    chart = fit_ssm(embedded, 2, 3)
    etas = [project(chart, e.points) for e in embedded]
    X = np.hstack(etas)
    Xd = np.hstack([finite_diff_derivative(e, dt) for e in etas])
    lin = estimate_linear_part(X, Xd, regression_order=5, readout=chart.V1[0])
    model = fit_normal_form(X, Xd, lin, resonance_structure(lin, 3))
    return to_polar(model).coeffs(0)


def test_delay_chart_shifts_cubic_damping_by_predicted_amount():
    """A delay chart of one coordinate reads the oscillator through a resonant
    cubic distortion of size |z|^2 N / (2 i omega0), which moves the cubic
    damping coefficient by gamma alpha0 / omega0. A compensating observable
    removes the shift."""
    predicted = BETA + GAMMA * ALPHA0 / OMEGA0
    a, w = _delay_fit(lambda x: x[0], 0.2)
    assert a[1] == pytest.approx(predicted, rel=0.01)
    assert w[1] == pytest.approx(GAMMA, rel=0.01)

    k = 1.0 / (2 * OMEGA0)
    compensated = lambda x: x[0] + (x[0] ** 2 + x[1] ** 2) * (-GAMMA * x[0] - BETA * x[1]) * k
    a, _ = _delay_fit(compensated, 0.2)
    assert a[1] == pytest.approx(BETA, rel=0.01)
