"""Graph-style SSM parametrization over reduced coordinates.

The chart is ``y = V1 eta + V eta^{2:M}`` with reduced coordinates
``eta = U1^T y``. In the default mode ``U1 = V1`` has orthonormal columns and
the nonlinear coefficients satisfy ``V1^T V = 0``, which makes
``project(lift(eta)) = eta`` hold exactly.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .polybasis import ExponentMatrix, eval_monomials, exponent_matrix, monomial_jacobian

log = logging.getLogger(__name__)


class SingularFitError(ValueError):
    """The regression matrix lost rank; ``order`` is the first deficient order."""

    def __init__(self, message: str, order: int | None = None):
        super().__init__(message)
        self.order = order


@dataclass(frozen=True, eq=False)
class SsmChart:
    p: int
    d: int
    M: int
    U1: np.ndarray
    V1: np.ndarray
    V: np.ndarray
    residual: float = 0.0
    mode: str = "default"

    @property
    def exponents(self) -> ExponentMatrix:
        return exponent_matrix(self.d, 2, self.M)


def _stack(data) -> np.ndarray:
    arrays = [np.atleast_2d(getattr(item, "points", item)) for item in data]
    if not arrays:
        raise ValueError("no data supplied")
    p = arrays[0].shape[0]
    if any(a.shape[0] != p for a in arrays):
        raise ValueError("all trajectories must share the ambient dimension")
    return np.hstack(arrays).astype(float)


def _check_rank(phi: np.ndarray, E: ExponentMatrix) -> None:
    scale = np.linalg.norm(phi, axis=1)
    for order in range(E.min_order, E.max_order + 1):
        stop = E.block(order).stop
        block = phi[:stop]
        norms = scale[:stop]
        if np.any(norms == 0):
            raise SingularFitError(f"monomials of order {order} vanish on the data", order)
        s = np.linalg.svd(block / norms[:, None], compute_uv=False)
        if s[-1] < 1e-10 * s[0]:
            raise SingularFitError(
                f"regression matrix is rank deficient at order {order}; "
                "lower M or supply more varied data", order)


def _fit_coefficients(Y: np.ndarray, U1: np.ndarray, E: ExponentMatrix, ridge: float):
    eta = U1.T @ Y
    phi = eval_monomials(E, eta)
    _check_rank(phi, E)
    normal = Y - U1 @ eta  # component orthogonal to span(U1)
    gram = phi @ phi.T
    if ridge > 0:
        gram = gram + ridge * np.eye(gram.shape[0])
    V = np.linalg.solve(gram, phi @ normal.T).T
    # remove round-off leakage into span(U1)
    V = V - U1 @ (U1.T @ V)
    err = normal - V @ phi
    return V, float(np.mean(np.sum(err ** 2, axis=0)))


def _refine_projection(Y, U1, E, ridge, steps: int = 50, fd: float = 1e-6):
    # Gradient descent on the Stiefel manifold with QR retraction.
    def cost(U):
        return _fit_coefficients(Y, U, E, ridge)[1]

    current = cost(U1)
    step = 1e-2
    for _ in range(steps):
        grad = np.zeros_like(U1)
        for idx in np.ndindex(U1.shape):
            bump = np.zeros_like(U1)
            bump[idx] = fd
            grad[idx] = (cost(U1 + bump) - cost(U1 - bump)) / (2 * fd)
        grad = grad - U1 @ (0.5 * (U1.T @ grad + grad.T @ U1))
        if np.linalg.norm(grad) < 1e-12:
            break
        while step > 1e-12:
            Q, R = np.linalg.qr(U1 - step * grad)
            Q = Q * np.sign(np.diag(R))
            trial = cost(Q)
            if trial < current:
                U1, current = Q, trial
                step *= 2
                break
            step /= 2
        else:
            break
    return U1


def fit_ssm(data, d: int, M: int, mode: str = "default", projection=None,
            ridge: float = 0.0, refine: bool = False) -> SsmChart:
    """Fit a chart minimizing the mean-square reconstruction error.

    ``data`` is a list of embedded trajectories or ``(p, P)`` arrays.
    ``mode="fixed_projection"`` keeps the supplied orthonormal ``projection``
    as ``U1 = V1`` and fits only the nonlinear coefficients.
    """
    Y = _stack(data)
    p, P = Y.shape
    if d < 1 or M < 2:
        raise ValueError("need d >= 1 and M >= 2")
    if d > p:
        raise ValueError(f"manifold dimension {d} exceeds ambient dimension {p}")
    E = exponent_matrix(d, 2, M)
    free = p * (E.size + d)
    if P < 10 * free:
        raise ValueError(
            f"{P} points is too few for {free} free coefficients (need {10 * free})")
    if p <= 2 * d:
        log.warning("ambient dimension p=%d does not exceed 2d=%d", p, 2 * d)
    if not np.any(Y):
        raise SingularFitError("all data points are at the origin", 1)

    if mode == "default":
        U1 = np.linalg.svd(Y, full_matrices=False)[0][:, :d]
        # deterministic sign: largest entry of each column positive
        signs = np.sign(U1[np.argmax(np.abs(U1), axis=0), np.arange(d)])
        U1 = U1 * signs
        if refine:
            U1 = _refine_projection(Y, U1, E, ridge)
    elif mode == "fixed_projection":
        if projection is None:
            raise ValueError("fixed_projection mode needs a projection matrix")
        U1 = np.asarray(projection, dtype=float)
        if U1.shape != (p, d):
            raise ValueError(f"projection must have shape ({p}, {d})")
        if not np.allclose(U1.T @ U1, np.eye(d), atol=1e-10):
            raise ValueError("projection columns must be orthonormal")
    else:
        raise ValueError(f"unknown geometry mode {mode!r}")

    V, residual = _fit_coefficients(Y, U1, E, ridge)
    return SsmChart(p, d, M, U1, U1.copy(), V, residual, mode)


def project(chart: SsmChart, y) -> np.ndarray:
    y = np.asarray(y)
    if y.shape[0] != chart.p:
        raise ValueError(f"expected ambient dimension {chart.p}, got {y.shape[0]}")
    return chart.U1.T @ y


def lift(chart: SsmChart, eta) -> np.ndarray:
    eta = np.asarray(eta)
    if eta.shape[0] != chart.d:
        raise ValueError(f"expected {chart.d} reduced coordinates, got {eta.shape[0]}")
    return chart.V1 @ eta + chart.V @ eval_monomials(chart.exponents, eta)


def lift_jacobian(chart: SsmChart, eta) -> np.ndarray:
    eta = np.asarray(eta, dtype=float)
    return chart.V1 + chart.V @ monomial_jacobian(chart.exponents, eta)


def reconstruction_residual(chart: SsmChart, data) -> float:
    Y = _stack(data)
    err = Y - lift(chart, project(chart, Y))
    return float(np.mean(np.sum(err ** 2, axis=0)))
