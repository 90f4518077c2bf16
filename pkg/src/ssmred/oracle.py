"""Equation-driven SSM and normal-form coefficients for polynomial systems.

For a modal system ``q' = Lambda q + g0(q)`` the parametrization
``q = w(z) = sum_j W_j z^j`` of the SSM over the first ``2m`` modal
coordinates and its reduced dynamics ``z' = n(z) = sum_j N_j z^j`` satisfy
``Dw(z) n(z) = Lambda w(z) + g0(w(z))``. Matching order-``k`` coefficients
gives a diagonal linear equation for ``W_k`` and ``N_k`` that is solved
entry by entry, order by order.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .forced import ForcingSpec, Harmonic, PolarModel
from .normalform import LinearPart, ReducedModel, ResonanceStructure, to_polar
from .polybasis import eval_monomials, exponent_matrix


class ResonanceError(ArithmeticError):
    def __init__(self, message: str, row: int, column: int, order: int | tuple):
        super().__init__(message)
        self.row, self.column, self.order = row, column, order


@dataclass(frozen=True, eq=False)
class ModalSystem:
    """``q' = diag(Lambda) q + sum_j G0[j] q^j`` with physical states ``x = T q``."""

    Lambda: np.ndarray
    G0: dict
    T: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.Lambda, dtype=complex)
        object.__setattr__(self, "Lambda", lam)
        object.__setattr__(self, "T", np.asarray(self.T, dtype=complex))
        G0 = {int(j): np.asarray(G, dtype=complex) for j, G in self.G0.items()}
        for j, G in G0.items():
            if j < 2 or G.shape != (len(lam), exponent_matrix(len(lam), j, j).size):
                raise ValueError(f"coefficient matrix of order {j} has the wrong shape")
        object.__setattr__(self, "G0", G0)
        if self.T.shape != (len(lam), len(lam)):
            raise ValueError("T must be square with the system dimension")

    @property
    def n(self) -> int:
        return len(self.Lambda)


@dataclass(frozen=True, eq=False)
class Harmonic1:
    """Leading-order forced correction for one harmonic index ``k``."""

    k: tuple[int, ...]
    w_plus: np.ndarray
    w_minus: np.ndarray
    n_plus: np.ndarray
    n_minus: np.ndarray


@dataclass(frozen=True, eq=False)
class OracleModel:
    m: int
    M: int
    Lambda: np.ndarray  # full spectrum
    W: dict  # order -> (n, monomials of order j in 2m variables)
    N: dict  # order -> (2m, monomials)
    mask: dict  # order -> bool (2m, monomials), near-resonant in-block entries
    delta: float
    forced: tuple[Harmonic1, ...] = ()
    Omega: np.ndarray | None = None

    def parametrization(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        return sum(W @ eval_monomials(exponent_matrix(2 * self.m, j, j), z)
                   for j, W in self.W.items())

    def reduced_field(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        return sum(N @ eval_monomials(exponent_matrix(2 * self.m, j, j), z)
                   for j, N in self.N.items())


# ---------------------------------------------------------- series algebra


class _Series:
    """Truncated polynomials in ``v`` variables stored as coefficient arrays."""

    def __init__(self, v: int, order: int):
        self.v, self.order = v, order
        self.E = exponent_matrix(v, 0, order)
        idx = self.E.index()
        self.K = self.E.size
        deg = self.E.orders
        ii, jj, kk = [], [], []
        for a in range(self.K):
            for b in range(self.K):
                if deg[a] + deg[b] <= order:
                    ii.append(a)
                    jj.append(b)
                    kk.append(idx[tuple(int(x) for x in self.E.exponents[:, a] + self.E.exponents[:, b])])
        self.ii, self.jj, self.kk = map(np.array, (ii, jj, kk))
        self.deriv = []
        for l in range(v):
            src, dst, fac = [], [], []
            for a in range(self.K):
                e = self.E.exponents[:, a].copy()
                if e[l]:
                    fac.append(e[l])
                    e[l] -= 1
                    src.append(a)
                    dst.append(idx[tuple(int(x) for x in e)])
            self.deriv.append((np.array(src, dtype=int), np.array(dst, dtype=int), np.array(fac)))

    def block(self, order: int) -> slice:
        return self.E.block(order)

    def zeros(self, rows: int) -> np.ndarray:
        return np.zeros((rows, self.K), dtype=complex)

    def mul(self, a, b):
        out = np.zeros(np.broadcast_shapes(a.shape, b.shape), dtype=complex)
        np.add.at(out, (..., self.kk), a[..., self.ii] * b[..., self.jj])
        return out

    def d(self, a, l):
        src, dst, fac = self.deriv[l]
        out = np.zeros_like(a)
        out[..., dst] = a[..., src] * fac
        return out


def _compose(series: _Series, system: ModalSystem, w: np.ndarray) -> np.ndarray:
    """``g0(w(z))`` truncated at the series order; ``w`` has shape (n, K)."""
    n = system.n
    out = series.zeros(n)
    if not system.G0:
        return out
    top = max(system.G0)
    powers = [[None] * (top + 1) for _ in range(n)]
    one = series.zeros(1)[0]
    one[0] = 1.0
    for i in range(n):
        powers[i][0] = one
        for p in range(1, top + 1):
            powers[i][p] = series.mul(powers[i][p - 1], w[i])
    for j, G in system.G0.items():
        E = exponent_matrix(n, j, j)
        for col, e in enumerate(E.exponents.T):
            if not np.any(G[:, col]):
                continue
            term = one
            for i in np.flatnonzero(e):
                term = series.mul(term, powers[i][e[i]])
            out += G[:, col][:, None] * term[None, :]
    return out


def _directional(series: _Series, w: np.ndarray, n_poly: np.ndarray) -> np.ndarray:
    """``Dw(z) n(z)`` truncated at the series order."""
    out = np.zeros_like(w)
    for l in range(series.v):
        out += series.mul(series.d(w, l), n_poly[l][None, :])
    return out


def _near_resonance(Lambda_m, E) -> np.ndarray:
    im = np.asarray(Lambda_m).imag
    return im[:, None] - im @ E.exponents


# ------------------------------------------------------------ recursion


def solve_autonomous_ssm(system: ModalSystem, m: int, M: int, delta: float = 1e-8,
                         max_order: int = 15) -> OracleModel:
    """Order-by-order SSM parametrization over the first ``m`` mode pairs.

    In-block entries whose imaginary-part near-resonance is at most
    ``delta`` go to the normal form; every other entry is absorbed into
    the parametrization. A zero denominator outside the block raises
    :class:`ResonanceError`.
    """
    n = system.n
    v = 2 * m
    if not 1 <= v <= n:
        raise ValueError(f"need 1 <= 2m <= n, got m={m}, n={n}")
    if not 1 <= M <= max_order:
        raise ValueError(f"order must lie in [1, {max_order}]")
    lam = system.Lambda
    lam_m = lam[:v]
    series = _Series(v, M)
    w = series.zeros(n)
    npoly = series.zeros(v)
    first = series.block(1)
    w[:v, first] = np.eye(v)
    npoly[:, first] = np.diag(lam_m)
    W = {1: w[:, first].copy()}
    N = {1: npoly[:, first].copy()}
    masks = {}
    for k in range(2, M + 1):
        blk = series.block(k)
        Ek = exponent_matrix(v, k, k)
        mu = lam_m @ Ek.exponents
        nl = npoly.copy()
        nl[:, first] = 0  # nonlinear part of n only
        wl = w.copy()
        wl[:, first] = 0
        rhs = (_directional(series, wl, nl) - _compose(series, system, w))[:, blk]
        denom = lam[:, None] - mu[None, :]
        Wk = np.zeros((n, Ek.size), dtype=complex)
        Nk = np.zeros((v, Ek.size), dtype=complex)
        mask = np.abs(_near_resonance(lam_m, Ek)) <= delta
        for r in range(n):
            for s in range(Ek.size):
                if r < v and mask[r, s]:
                    Nk[r, s] = -rhs[r, s]
                    continue
                if denom[r, s] == 0:
                    raise ResonanceError(
                        f"exact resonance in row {r}, monomial {s} at order {k}", r, s, k)
                Wk[r, s] = rhs[r, s] / denom[r, s]
        w[:, blk] = Wk
        npoly[:, blk] = Nk
        W[k], N[k], masks[k] = Wk, Nk, mask
    return OracleModel(m, M, lam.copy(), W, N, masks, delta)


def invariance_residual(model: OracleModel, system: ModalSystem) -> dict:
    """Max-norm of the order-k invariance defect for every k up to the model order."""
    v = 2 * model.m
    series = _Series(v, model.M)
    w = series.zeros(system.n)
    npoly = series.zeros(v)
    for j in range(1, model.M + 1):
        w[:, series.block(j)] = model.W[j]
        npoly[:, series.block(j)] = model.N[j]
    defect = (_directional(series, w, npoly) - system.Lambda[:, None] * w
              - _compose(series, system, w))
    return {j: float(np.max(np.abs(defect[:, series.block(j)])))
            for j in range(1, model.M + 1)}


def solve_nonautonomous_leading(model: OracleModel, system: ModalSystem, forcing,
                                Omega, delta: float = 1e-8) -> OracleModel:
    """Leading-order forced corrections for harmonics ``(k, g_plus, g_minus)``.

    The modal forcing is ``sum_k g_plus e^{i<k,Omega>t} + g_minus e^{-i<k,Omega>t}``.
    Near-resonant harmonics of a mode are routed into the reduced dynamics;
    all other components are absorbed into the parametrization.
    """
    Omega = np.atleast_1d(np.asarray(Omega, dtype=float))
    lam = system.Lambda
    v = 2 * model.m
    out = []
    for k, g_plus, g_minus in forcing:
        k = tuple(int(x) for x in np.atleast_1d(k))
        if len(k) != len(Omega):
            raise ValueError("harmonic index length must match the frequency vector")
        kappa = float(np.dot(k, Omega))
        g_plus = np.asarray(g_plus, dtype=complex)
        g_minus = np.asarray(g_minus, dtype=complex)
        n_plus = np.zeros(v, dtype=complex)
        n_minus = np.zeros(v, dtype=complex)
        for j in range(model.m):
            omega_j = lam[2 * j].imag
            if abs(omega_j - kappa) <= delta:
                n_plus[2 * j] = g_plus[2 * j]
                n_minus[2 * j + 1] = g_minus[2 * j + 1]
            elif abs(omega_j + kappa) <= delta:
                n_minus[2 * j] = g_minus[2 * j]
                n_plus[2 * j + 1] = g_plus[2 * j + 1]
        w_plus = np.empty(system.n, dtype=complex)
        w_minus = np.empty(system.n, dtype=complex)
        for r in range(system.n):
            np_r = n_plus[r] if r < v else 0.0
            nm_r = n_minus[r] if r < v else 0.0
            for sign, g, nn, target in ((1, g_plus, np_r, w_plus), (-1, g_minus, nm_r, w_minus)):
                den = lam[r] - sign * 1j * kappa
                num = nn - g[r]
                if num == 0:
                    target[r] = 0.0
                elif den == 0:
                    raise ResonanceError(
                        f"exact forcing resonance in row {r} for harmonic {k}", r, -1, k)
                else:
                    target[r] = num / den
        out.append(Harmonic1(k, w_plus, w_minus, n_plus, n_minus))
    return OracleModel(model.m, model.M, model.Lambda, model.W, model.N, model.mask,
                       model.delta, tuple(out), Omega)


def polar_forcing(model: OracleModel, eps: float = 1.0) -> ForcingSpec:
    """Polar forcing amplitudes and phases from the reduced forcing vectors."""
    if model.Omega is None:
        raise ValueError("model carries no forcing")
    harmonics = []
    for h in model.forced:
        for j in range(model.m):
            gp, gm = h.n_plus[2 * j], h.n_minus[2 * j]
            if gp != 0:
                harmonics.append(Harmonic(j, h.k, eps * abs(gp), float(np.angle(gp) - np.pi / 2), 1))
            if gm != 0:
                harmonics.append(Harmonic(j, h.k, eps * abs(gm), float(-np.angle(gm) - np.pi / 2), -1))
    return ForcingSpec(model.Omega, tuple(harmonics))


def oracle_reduced_model(model: OracleModel) -> ReducedModel:
    """Package the oracle normal form for reuse of the polar conversion."""
    v = 2 * model.m
    E = exponent_matrix(v, 2, max(model.M, 2))
    lam_m = model.Lambda[:v]
    Ncoef = np.zeros((v, E.size), dtype=complex)
    mask = np.zeros((v, E.size), dtype=bool)
    for j in range(2, model.M + 1):
        Ncoef[:, E.block(j)] = model.N[j]
        mask[:, E.block(j)] = model.mask[j]
    Delta = _near_resonance(lam_m, E)
    linear = LinearPart(np.diag(lam_m), np.eye(v, dtype=complex), lam_m.copy())
    structure = ResonanceStructure(max(model.M, 2), E, Delta, mask, model.delta)
    zero = np.zeros_like(Ncoef)
    return ReducedModel(linear, structure, Ncoef, zero, zero.copy(), 0.0, {"source": "oracle"})


def oracle_polar(model: OracleModel) -> PolarModel:
    return to_polar(oracle_reduced_model(model))


def lift_and_sample(model: OracleModel, system: ModalSystem, z_path, times=None,
                    eps: float = 0.0) -> np.ndarray:
    """Physical states ``x = T w(z)`` along a normal-coordinate path ``(2m, P)``.

    With ``eps`` and ``times`` given, the leading forced correction
    ``eps * w_1(Omega t)`` is added.
    """
    z = np.asarray(z_path, dtype=complex)
    if z.shape[0] != 2 * model.m:
        raise ValueError(f"expected {2 * model.m} normal coordinates")
    q = model.parametrization(z)
    if eps and model.forced:
        if times is None:
            raise ValueError("times are required for the forced correction")
        t = np.asarray(times, dtype=float)
        for h in model.forced:
            phase = np.exp(1j * np.dot(h.k, model.Omega) * t)
            q = q + eps * (h.w_plus[:, None] * phase + h.w_minus[:, None] * np.conj(phase))
    return (system.T @ q).real


# ------------------------------------------------------------ diagnostics


def spectral_quotients(Lambda_full, E_indices) -> tuple[int, int, dict]:
    """Integer parts of the absolute and relative spectral quotients.

    Returns ``(Sigma, sigma, flags)``; ``sigma`` is 0 with a flag when the
    spectral subspace covers the whole spectrum.
    """
    lam = np.asarray(Lambda_full, dtype=complex)
    inside = np.zeros(len(lam), dtype=bool)
    inside[list(E_indices)] = True
    re_in = lam[inside].real
    if np.any(re_in == 0):
        raise ValueError("spectral quotient undefined: zero real part in the subspace")
    if np.any(lam.real >= 0):
        raise ValueError("spectral quotients need a stable spectrum")
    slowest = np.min(np.abs(re_in))
    # tolerance keeps exact integer ratios such as 0.7 / 0.1 from rounding down
    Sigma = int(np.floor(np.max(np.abs(lam.real)) / slowest + 1e-9))
    flags = {}
    if np.all(inside):
        flags["empty_outer_spectrum"] = True
        return Sigma, 0, flags
    sigma = int(np.floor(np.max(np.abs(lam[~inside].real)) / slowest + 1e-9))
    return Sigma, sigma, flags


@dataclass
class NonresonanceReport:
    real_violations: list = field(default_factory=list)  # (m, k)
    complex_violations: list = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not self.real_violations and not self.complex_violations


def check_nonresonance(Lambda_full, E_indices, order_cap: int, tol: float = 1e-10) -> NonresonanceReport:
    """Outer resonances ``sum m_j lambda_j = lambda_k`` for ``2 <= |m| <= order_cap``.

    Only eigenvalues outside the subspace are tested as targets; resonances
    among eigenvalues inside the subspace are exempt.
    """
    lam = np.asarray(Lambda_full, dtype=complex)
    E_indices = list(E_indices)
    inner = lam[E_indices]
    outer = [k for k in range(len(lam)) if k not in E_indices]
    report = NonresonanceReport()
    for order in range(2, order_cap + 1):
        for combo in itertools.combinations_with_replacement(range(len(inner)), order):
            mvec = np.bincount(combo, minlength=len(inner))
            total = mvec @ inner
            for k in outer:
                if abs(total.real - lam[k].real) <= tol:
                    report.real_violations.append((tuple(int(x) for x in mvec), k))
                if abs(total - lam[k]) <= tol:
                    report.complex_violations.append((tuple(int(x) for x in mvec), k))
    return report
