"""Extended normal forms learned from reduced-coordinate data.

Reduced coordinates ``eta`` are linked to normal-form coordinates ``z`` by

    z   = h^-1(eta) = xi + Hstar xi^{2:N},   xi = B^-1 eta
    eta = h(z)      = B (z + H z^{2:N})

and the normal form is ``z' = Lambda z + Ncoef z^{2:N}``. Entries of
``Ncoef`` live only on the near-resonant index set; ``Hstar`` and ``H``
vanish there. Coordinates come in conjugate pairs ``(z1, conj z1, ...)`` and
only the first row of each pair is free; its partner row is the conjugate
under :func:`conjugate_permutation`.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import least_squares

from .forced import PolarModel
from .polybasis import (ExponentMatrix, conjugate_permutation, eval_monomials,
                        exponent_matrix, monomial_jacobian)
from .systems import rk4_path


class DefectiveJacobianError(ValueError):
    pass


class UnsupportedStructureError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    """Optimizer stopped without meeting its tolerance; carries the best iterate."""

    def __init__(self, message: str, model: "ReducedModel"):
        super().__init__(message)
        self.model = model
        self.residual = model.conjugacy_residual


@dataclass(frozen=True, eq=False)
class LinearPart:
    jacobian: np.ndarray
    B: np.ndarray
    Lambda: np.ndarray

    @property
    def d(self) -> int:
        return len(self.Lambda)

    @property
    def Binv(self) -> np.ndarray:
        return np.linalg.inv(self.B)


@dataclass(frozen=True, eq=False)
class ResonanceStructure:
    order: int
    exponents: ExponentMatrix
    Delta: np.ndarray
    mask: np.ndarray  # bool, True on near-resonant entries
    delta: float

    @property
    def pairs(self) -> list[tuple[int, int]]:
        """Near-resonant ``(row, column)`` entries, zero-based."""
        return [tuple(int(v) for v in rc) for rc in np.argwhere(self.mask)]


@dataclass(frozen=True, eq=False)
class ReducedModel:
    linear: LinearPart
    structure: ResonanceStructure
    Ncoef: np.ndarray
    Hstar: np.ndarray
    H: np.ndarray
    conjugacy_residual: float
    metadata: dict = field(default_factory=dict)

    @property
    def exponents(self) -> ExponentMatrix:
        return self.structure.exponents


# ------------------------------------------------------------ linear part


def _normalize_column(b: np.ndarray, readout, target: float) -> np.ndarray:
    if readout is not None:
        c = np.dot(readout, b)
        if abs(c) > 1e-12 * np.linalg.norm(b):
            return b * (target / c)
    b = b / np.linalg.norm(b) * np.sqrt(target)
    lead = np.flatnonzero(np.abs(b) > 1e-8 * np.linalg.norm(b))[0]
    return b * (abs(b[lead]) / b[lead])


def linear_part_from_jacobian(jacobian, readout=None, imag_tol: float = 1e-10) -> LinearPart:
    """Eigen-decompose a real Jacobian with deterministic ordering and scaling.

    Eigenvalues are sorted by decreasing real part with each conjugate pair
    adjacent, positive imaginary part first. An oscillatory eigenvector is
    scaled to squared norm 1/2 with its leading entry real positive, or, when
    a ``readout`` row vector is given, so that ``readout @ b = 1/2``. In both
    cases ``rho = |z|`` is the amplitude of a linear oscillation (measured in
    the readout channel when one is given).
    """
    J = np.asarray(jacobian, dtype=float)
    d = J.shape[0]
    vals, vecs = np.linalg.eig(J)
    scale = max(np.max(np.abs(vals)), 1.0)
    items = []
    for k, lam in enumerate(vals):
        if abs(lam.imag) <= imag_tol * scale:
            items.append((-lam.real, 0.0, lam.real + 0j, vecs[:, k].real.astype(complex), False))
        elif lam.imag > 0:
            items.append((-lam.real, -lam.imag, lam, vecs[:, k], True))
    items.sort(key=lambda it: (it[0], it[1]))
    Lambda, cols = [], []
    for _, _, lam, vec, pair in items:
        if pair:
            b = _normalize_column(vec, readout, 0.5)
            Lambda += [lam, np.conj(lam)]
            cols += [b, np.conj(b)]
        else:
            Lambda.append(lam)
            cols.append(_normalize_column(vec, readout, 1.0).real.astype(complex))
    if len(Lambda) != d:
        raise DefectiveJacobianError("eigenvalues do not pair up into a conjugate-closed set")
    B = np.array(cols).T
    if np.linalg.cond(B) > 1e10:
        raise DefectiveJacobianError("linear part is not semisimple (defective eigenvectors)")
    return LinearPart(J, B, np.array(Lambda))


def _regress_linear(states, targets, amplitude_cutoff, regression_order):
    X = np.atleast_2d(np.asarray(states, dtype=float))
    Y = np.atleast_2d(np.asarray(targets, dtype=float))
    d = X.shape[0]
    if amplitude_cutoff is not None:
        keep = np.linalg.norm(X, axis=0) <= amplitude_cutoff
        X, Y = X[:, keep], Y[:, keep]
    if X.shape[1] < 10 * d * d:
        raise ValueError(
            f"only {X.shape[1]} samples below the amplitude cutoff, need {10 * d * d}; "
            "increase the cutoff")
    phi = eval_monomials(exponent_matrix(d, 1, regression_order), X)
    coef = np.linalg.lstsq(phi.T, Y.T, rcond=None)[0].T
    return coef[:, :d]


def estimate_linear_part(reduced_states, reduced_derivatives, amplitude_cutoff=None,
                         regression_order: int = 1, readout=None) -> LinearPart:
    """Least-squares estimate of the Jacobian at the origin.

    With ``regression_order > 1`` the derivatives are regressed on all
    monomials up to that order and the linear block is kept, which removes
    the bias nonlinear terms would otherwise put on the linear fit.
    """
    J = _regress_linear(reduced_states, reduced_derivatives, amplitude_cutoff, regression_order)
    return linear_part_from_jacobian(J, readout)


def estimate_linear_part_map(reduced_states, next_states, dt: float, amplitude_cutoff=None,
                             regression_order: int = 1, readout=None) -> LinearPart:
    """Linear part from a one-step map: eigenvalues ``log(mu) / dt``."""
    A = _regress_linear(reduced_states, next_states, amplitude_cutoff, regression_order)
    mu, vecs = np.linalg.eig(A)
    J = (vecs @ np.diag(np.log(mu) / dt) @ np.linalg.inv(vecs)).real
    return linear_part_from_jacobian(J, readout)


# --------------------------------------------------------- resonances


def resonance_structure(linear: LinearPart, N: int, delta: float = 1e-8) -> ResonanceStructure:
    """Near-resonance matrix on imaginary parts and the index set it flags."""
    if N < 2:
        raise ValueError("normal form order must be at least 2")
    E = exponent_matrix(linear.d, 2, N)
    im = np.asarray(linear.Lambda).imag
    Delta = im[:, None] - im @ E.exponents
    return ResonanceStructure(N, E, Delta, np.abs(Delta) <= delta, delta)


# ------------------------------------------------------- coordinate maps


def normal_form_field(model: ReducedModel, z) -> np.ndarray:
    z = np.asarray(z)
    lam = model.linear.Lambda
    lin = lam[:, None] * z if z.ndim == 2 else lam * z
    return lin + model.Ncoef @ eval_monomials(model.exponents, z)


def to_normal_coordinates(model: ReducedModel, eta) -> np.ndarray:
    eta = np.asarray(eta)
    if eta.shape[0] != model.linear.d:
        raise ValueError(f"expected {model.linear.d} reduced coordinates")
    xi = model.linear.Binv @ eta
    return xi + model.Hstar @ eval_monomials(model.exponents, xi)


def to_reduced_coordinates(model: ReducedModel, z, real: bool = True) -> np.ndarray:
    z = np.asarray(z)
    if z.shape[0] != model.linear.d:
        raise ValueError(f"expected {model.linear.d} normal-form coordinates")
    eta = model.linear.B @ (z + model.H @ eval_monomials(model.exponents, z))
    return eta.real if real else eta


def reduced_vector_field(model: ReducedModel, eta, real: bool = True) -> np.ndarray:
    """``eta' = Dh(z) n(z)`` evaluated at ``z = h^-1(eta)``."""
    z = to_normal_coordinates(model, eta)
    jac = monomial_jacobian(model.exponents, z)
    n = normal_form_field(model, z)
    if z.ndim == 1:
        out = model.linear.B @ (n + model.H @ (jac @ n))
    else:
        out = model.linear.B @ (n + model.H @ np.einsum("kip,ip->kp", jac, n))
    return out.real if real else out


def simulate_reduced(model: ReducedModel, eta0, dt: float, steps: int) -> np.ndarray:
    """Predict a reduced trajectory by integrating the normal form; ``(d, steps+1)``."""
    z0 = to_normal_coordinates(model, np.asarray(eta0, dtype=float))
    path = rk4_path(lambda z, t: normal_form_field(model, z), z0.astype(complex), 0.0, dt, steps)
    return to_reduced_coordinates(model, path.T)


# ------------------------------------------------------------- fitting


class _Layout:
    """Maps a real parameter vector to masked, conjugate-symmetric coefficients."""

    def __init__(self, linear: LinearPart, structure: ResonanceStructure):
        lam = np.asarray(linear.Lambda)
        d = len(lam)
        if structure.exponents.dims != d:
            raise ValueError("resonance structure does not match the linear part")
        if d % 2 or not all(lam[i].imag > 0 and np.isclose(lam[i + 1], np.conj(lam[i]))
                            for i in range(0, d, 2)):
            raise UnsupportedStructureError(
                "normal-form fitting needs the spectrum to consist of oscillatory "
                "conjugate pairs")
        mask = structure.mask
        swap = np.arange(d).reshape(-1, 2)[:, ::-1].ravel()
        perm = conjugate_permutation(structure.exponents)
        for r in range(d):
            if not np.array_equal(mask[swap[r], perm], mask[r]):
                raise ValueError("resonance mask is not conjugate symmetric")
        self.d, self.K = d, structure.exponents.size
        self.perm = perm
        self.first = np.arange(0, d, 2)
        self.n_slots = [(r, k) for r in self.first for k in range(self.K) if mask[r, k]]
        self.h_slots = [(r, k) for r in self.first for k in range(self.K) if not mask[r, k]]
        self.size = 2 * (len(self.n_slots) + len(self.h_slots))

    def _fill(self, values, slots):
        C = np.zeros((self.d, self.K), dtype=complex)
        for v, (r, k) in zip(values, slots):
            C[r, k] = v
            C[r + 1, self.perm[k]] = np.conj(v)
        return C

    def unpack(self, x):
        x = np.asarray(x, dtype=float)
        c = x[0::2] + 1j * x[1::2]
        nn = len(self.n_slots)
        return self._fill(c[:nn], self.n_slots), self._fill(c[nn:], self.h_slots)

    def pack(self, Ncoef, Hstar):
        vals = [Ncoef[r, k] for r, k in self.n_slots] + [Hstar[r, k] for r, k in self.h_slots]
        out = np.empty(2 * len(vals))
        out[0::2] = np.real(vals)
        out[1::2] = np.imag(vals)
        return out


class _DerivativeProblem:
    def __init__(self, layout: _Layout, linear: LinearPart, E: ExponentMatrix, states, derivs):
        Binv = linear.Binv
        self.layout, self.E = layout, E
        self.lam = np.asarray(linear.Lambda)
        self.xi = Binv @ np.asarray(states, dtype=float)
        self.xid = Binv @ np.asarray(derivs, dtype=float)
        self.phi = eval_monomials(E, self.xi)
        self.phid = np.einsum("kip,ip->kp", monomial_jacobian(E, self.xi), self.xid)

    def full_residual(self, Ncoef, Hstar):
        z = self.xi + Hstar @ self.phi
        zd = self.xid + Hstar @ self.phid
        return zd - self.lam[:, None] * z - Ncoef @ eval_monomials(self.E, z), z

    def residual(self, x):
        R = self.full_residual(*self.layout.unpack(x))[0][self.layout.first]
        return np.concatenate([R.real.ravel(), R.imag.ravel()])

    def jacobian(self, x):
        lay = self.layout
        Ncoef, Hstar = lay.unpack(x)
        z = self.xi + Hstar @ self.phi
        psi = eval_monomials(self.E, z)
        # g[r, i, p] = d(Ncoef_r . psi)/d z_i
        g = np.einsum("rk,kip->rip", Ncoef, monomial_jacobian(self.E, z))
        first = lay.first
        P = z.shape[1]
        Jc = np.zeros((len(first), P, lay.size // 2, 2), dtype=complex)
        row_of = {r: i for i, r in enumerate(first)}
        col = 0
        for r, k in lay.n_slots:
            Jc[row_of[r], :, col, 0] = -psi[k]
            Jc[row_of[r], :, col, 1] = -1j * psi[k]
            col += 1
        for s, k in lay.h_slots:
            dh = -g[first, s, :] * self.phi[k]
            dh[row_of[s]] += self.phid[k] - self.lam[s] * self.phi[k]
            dhbar = -g[first, s + 1, :] * np.conj(self.phi[k])
            Jc[:, :, col, 0] = dh + dhbar
            Jc[:, :, col, 1] = 1j * (dh - dhbar)
            col += 1
        Jc = Jc.reshape(len(first) * P, lay.size)
        return np.vstack([Jc.real, Jc.imag])


class _MapProblem:
    def __init__(self, layout: _Layout, linear: LinearPart, E: ExponentMatrix,
                 states, next_states, dt: float):
        Binv = linear.Binv
        self.layout, self.E, self.dt = layout, E, dt
        self.lam = np.asarray(linear.Lambda)
        self.xi0 = Binv @ np.asarray(states, dtype=float)
        self.xi1 = Binv @ np.asarray(next_states, dtype=float)
        self.phi0 = eval_monomials(E, self.xi0)
        self.phi1 = eval_monomials(E, self.xi1)

    def full_residual(self, Ncoef, Hstar):
        z0 = self.xi0 + Hstar @ self.phi0
        z1 = self.xi1 + Hstar @ self.phi1

        def field(z, t):
            return self.lam[:, None] * z + Ncoef @ eval_monomials(self.E, z)

        pred = rk4_path(field, z0, 0.0, self.dt, 1)[1]
        return (z1 - pred) / self.dt, z0

    def residual(self, x):
        R = self.full_residual(*self.layout.unpack(x))[0][self.layout.first]
        return np.concatenate([R.real.ravel(), R.imag.ravel()])


def conjugacy_error(model: ReducedModel, reduced_states, reduced_derivatives) -> float:
    """Sum over data points of the squared conjugacy defect (all rows)."""
    layout = _Layout(model.linear, model.structure)
    prob = _DerivativeProblem(layout, model.linear, model.exponents,
                              reduced_states, reduced_derivatives)
    R = prob.full_residual(model.Ncoef, model.Hstar)[0]
    return float(np.sum(np.abs(R) ** 2))


def _regress_H(layout: _Layout, E: ExponentMatrix, xi, z) -> np.ndarray:
    psi = eval_monomials(E, z)
    H = np.zeros((layout.d, layout.K), dtype=complex)
    target = xi - z
    for r in layout.first:
        cols = [k for rr, k in layout.h_slots if rr == r]
        if not cols:
            continue
        sol = np.linalg.lstsq(psi[cols].T, target[r], rcond=None)[0]
        for v, k in zip(sol, cols):
            H[r, k] = v
            H[r + 1, layout.perm[k]] = np.conj(v)
    return H


def _solve(prob, layout, linear, structure, x0, jac, max_iter, rtol, mode):
    if x0 is None:
        x0 = np.zeros(layout.size)
    if layout.size == 0:
        result_x, status, nfev = x0, 1, 0
    else:
        # finite-difference Jacobians spend one evaluation per parameter
        budget = max_iter if callable(jac) else max_iter * (layout.size + 1)
        res = least_squares(prob.residual, x0, jac=jac, method="lm", ftol=rtol,
                            xtol=1e-12, gtol=1e-12, max_nfev=budget)
        result_x, status, nfev = res.x, res.status, res.nfev
    Ncoef, Hstar = layout.unpack(result_x)
    R, z = prob.full_residual(Ncoef, Hstar)
    cost = float(np.sum(np.abs(R) ** 2))
    xi = prob.xi if hasattr(prob, "xi") else prob.xi0
    H = _regress_H(layout, structure.exponents, xi, z)
    alpha = np.asarray(linear.Lambda).real
    meta = {
        "mode": mode,
        "iterations": int(nfev),
        "status": int(status),
        "converged": status != 0,
        "samples": int(z.shape[1]),
        "max_amplitude": float(np.max(np.abs(z))) if z.size else 0.0,
        "near_zero_damping": bool(np.any(np.abs(alpha) < 1e-8 * np.max(np.abs(linear.Lambda)))),
    }
    model = ReducedModel(linear, structure, Ncoef, Hstar, H, cost, meta)
    if status == 0:
        raise ConvergenceError(
            f"normal-form fit did not converge within {max_iter} evaluations "
            f"(residual {cost:.3e})", model)
    return model


def fit_normal_form(reduced_states, reduced_derivatives, linear: LinearPart,
                    structure: ResonanceStructure, max_iter: int = 500, rtol: float = 1e-9,
                    initial: ReducedModel | None = None) -> ReducedModel:
    """Minimize the conjugacy error over the free entries of ``Ncoef`` and ``Hstar``.

    Starts from all-zero coefficients unless ``initial`` supplies a model
    (coefficients of a lower-order fit are embedded by monomial).
    """
    layout = _Layout(linear, structure)
    prob = _DerivativeProblem(layout, linear, structure.exponents,
                              reduced_states, reduced_derivatives)
    x0 = None if initial is None else layout.pack(*_embed(initial, structure))
    return _solve(prob, layout, linear, structure, x0, prob.jacobian, max_iter, rtol,
                  "derivative")


def fit_normal_form_map(reduced_states, next_states, dt: float, linear: LinearPart,
                        structure: ResonanceStructure, max_iter: int = 500,
                        rtol: float = 1e-9) -> ReducedModel:
    """Derivative-free variant minimizing the one-step prediction defect.

    The normal-form flow is advanced by one RK4 step of size ``dt``; the
    Jacobian is built by finite differences.
    """
    layout = _Layout(linear, structure)
    prob = _MapProblem(layout, linear, structure.exponents, reduced_states, next_states, dt)
    return _solve(prob, layout, linear, structure, None, "2-point", max_iter, rtol, "map")


def _embed(model: ReducedModel, structure: ResonanceStructure):
    """Copy coefficients of ``model`` into the (larger) basis of ``structure``."""
    target = structure.exponents.index()
    Ncoef = np.zeros((structure.exponents.dims, structure.exponents.size), dtype=complex)
    Hstar = np.zeros_like(Ncoef)
    for src_col, expo in enumerate(model.exponents.exponents.T):
        k = target.get(tuple(int(v) for v in expo))
        if k is None:
            continue
        Ncoef[:, k] = model.Ncoef[:, src_col]
        Hstar[:, k] = model.Hstar[:, src_col]
    Ncoef[~structure.mask] = 0
    Hstar[structure.mask] = 0
    return Ncoef, Hstar


# --------------------------------------------------------------- polar


def to_polar(model: ReducedModel, tol: float = 0.0) -> PolarModel:
    """Real amplitude polynomials for each oscillator.

    Every near-resonant term of row ``2j`` must have the form
    ``z_j * prod_l |z_l|^(2 a_l)``; then the polar growth rate and frequency
    of mode ``j`` are the real and imaginary parts of the coefficient, as
    polynomials in the squared amplitudes.
    """
    lam = np.asarray(model.linear.Lambda)
    d = len(lam)
    if d % 2 or not all(lam[i].imag > 0 for i in range(0, d, 2)):
        raise UnsupportedStructureError("polar form needs oscillatory conjugate pairs")
    m = d // 2
    E = model.exponents.exponents
    terms: dict[tuple[int, ...], np.ndarray] = {(0,) * m: lam[0::2].copy()}
    for r in range(0, d, 2):
        for k in np.flatnonzero(model.structure.mask[r]):
            coef = model.Ncoef[r, k]
            e = E[:, k].copy()
            e[r] -= 1
            if np.any(e[0::2] != e[1::2]):
                if abs(coef) > tol:
                    raise UnsupportedStructureError(
                        f"row {r} carries a cross-mode resonant term with exponents "
                        f"{tuple(int(v) for v in E[:, k])}")
                continue
            key = tuple(int(v) for v in e[0::2])
            terms.setdefault(key, np.zeros(m, dtype=complex))[r // 2] += coef
    keys = sorted(terms, key=lambda t: (sum(t), tuple(-v for v in t)))
    coeffs = np.array([terms[k] for k in keys]).T  # (m, T)
    powers = np.array(keys, dtype=int).T.reshape(m, len(keys))
    return PolarModel(powers=powers, alpha=coeffs.real.copy(), omega=coeffs.imag.copy())


def with_metadata(model: ReducedModel, **extra) -> ReducedModel:
    return replace(model, metadata={**model.metadata, **extra})
