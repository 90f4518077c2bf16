"""Fixed-step RK4 integration and benchmark systems with known ground truth."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .polybasis import ExponentMatrix, eval_monomials, exponent_matrix
from .trajectory import TimeSeries


class DivergenceError(RuntimeError):
    def __init__(self, message: str, last_time: float):
        super().__init__(message)
        self.last_time = last_time


@dataclass(frozen=True, eq=False)
class VectorField:
    """Right-hand side ``rhs(x, t)`` acting on a state vector or a ``(n, B)`` batch.

    ``truth`` holds known ground-truth facts (eigenvalues, coefficients, radii).
    """

    dim: int
    rhs: Callable[[np.ndarray, float], np.ndarray]
    forced: bool = False
    truth: dict = field(default_factory=dict)

    def __call__(self, x, t: float = 0.0) -> np.ndarray:
        return self.rhs(np.asarray(x), t)


def rk4_step(rhs, x, t, dt):
    k1 = rhs(x, t)
    k2 = rhs(x + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = rhs(x + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = rhs(x + dt * k3, t + dt)
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def rk4_path(rhs, x0, t0: float, dt: float, steps: int) -> np.ndarray:
    """States at every step, shape ``(steps + 1,) + x0.shape``."""
    x = np.array(x0, dtype=np.result_type(x0, float))
    out = np.empty((steps + 1,) + x.shape, dtype=x.dtype)
    out[0] = x
    for i in range(steps):
        x = rk4_step(rhs, x, t0 + i * dt, dt)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(
                f"state became non-finite after t={t0 + i * dt:.6g}", t0 + i * dt)
        out[i + 1] = x
    return out


def _step_count(t_span, dt) -> tuple[float, int]:
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not dt > 0:
        raise ValueError("dt must be positive")
    if t1 <= t0:
        raise ValueError("t_span must be increasing")
    return t0, int(round((t1 - t0) / dt))


def integrate_rk4(field: VectorField, x0, t_span, dt: float) -> TimeSeries:
    """Classical fixed-step RK4 sampled at every step."""
    t0, steps = _step_count(t_span, dt)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (field.dim,):
        raise ValueError(f"initial state must have length {field.dim}")
    path = rk4_path(field.rhs, x0, t0, dt, steps)
    return TimeSeries(t0, dt, path.T)


def integrate_batch(field: VectorField, x0s, t_span, dt: float) -> np.ndarray:
    """Integrate many initial states at once; returns ``(n, B, steps + 1)``."""
    t0, steps = _step_count(t_span, dt)
    x0s = np.asarray(x0s, dtype=float)
    if x0s.ndim != 2 or x0s.shape[0] != field.dim:
        raise ValueError(f"initial states must have shape ({field.dim}, B)")
    return np.moveaxis(rk4_path(field.rhs, x0s, t0, dt, steps), 0, -1)


def numerical_jacobian(field: VectorField, x=None, t: float = 0.0, step: float = 1e-6) -> np.ndarray:
    x = np.zeros(field.dim) if x is None else np.asarray(x, dtype=float)
    cols = []
    for i in range(field.dim):
        e = np.zeros(field.dim)
        e[i] = step
        cols.append((field(x + e, t) - field(x - e, t)) / (2 * step))
    return np.array(cols).T


# ---------------------------------------------------------------- library


def duffing(damping: float = 1.0, stiffness: float = 1.0, beta: float = 1.0,
            forcing_amplitude: float = 0.0, forcing_frequency: float = 1.0,
            mass: float = 1.0) -> VectorField:
    """``mass x'' + damping x' + stiffness x + beta x^3 = F cos(Omega t)``.

    The single-well oscillator uses ``stiffness=1, beta>0``; the double-well
    variant uses ``stiffness=-1, beta=1`` (see :func:`duffing_double_well`).
    """
    if not mass > 0:
        raise ValueError("mass must be positive")
    if damping < 0:
        raise ValueError("damping must be non-negative")

    def rhs(x, t):
        pos, vel = x[0], x[1]
        force = forcing_amplitude * np.cos(forcing_frequency * t)
        acc = (force - damping * vel - stiffness * pos - beta * pos ** 3) / mass
        return np.array([vel, acc])

    jac = np.array([[0.0, 1.0], [-stiffness / mass, -damping / mass]])
    truth = {"eigenvalues": np.linalg.eigvals(jac)}
    if stiffness < 0 < beta:
        well = np.sqrt(-stiffness / beta)
        truth["equilibria"] = np.array([-well, 0.0, well])
    return VectorField(2, rhs, forced=forcing_amplitude != 0, truth=truth)


def duffing_double_well(damping: float = 1.0, forcing_amplitude: float = 0.0,
                        forcing_frequency: float = 1.0) -> VectorField:
    """Wells at ``x = +-1`` with a saddle at the origin."""
    return duffing(damping, -1.0, 1.0, forcing_amplitude, forcing_frequency)


def stuart_landau(alpha0: float, beta: float, gamma: float, omega0: float) -> VectorField:
    """``z' = (alpha0 + i omega0) z + (beta + i gamma) |z|^2 z`` with ``z = x1 + i x2``.

    In polar form ``rho' = alpha0 rho + beta rho^3`` and
    ``theta' = omega0 + gamma rho^2``.
    """
    lam = complex(alpha0, omega0)
    cubic = complex(beta, gamma)

    def rhs(x, t):
        z = x[0] + 1j * x[1]
        dz = lam * z + cubic * (z * np.conj(z)) * z
        return np.array([dz.real, dz.imag])

    truth = {
        "eigenvalues": np.array([lam, np.conj(lam)]),
        "alpha0": alpha0, "beta": beta, "gamma": gamma, "omega0": omega0,
    }
    if alpha0 * beta < 0:
        truth["limit_cycle_radius"] = float(np.sqrt(-alpha0 / beta))
    return VectorField(2, rhs, truth=truth)


def _real_block_matrix(eigenvalues) -> np.ndarray:
    lam = np.asarray(eigenvalues, dtype=complex)
    blocks, i = [], 0
    while i < len(lam):
        if abs(lam[i].imag) > 0:
            if i + 1 >= len(lam) or not np.isclose(lam[i + 1], np.conj(lam[i])):
                raise ValueError("complex eigenvalues must appear as adjacent conjugate pairs")
            a, b = lam[i].real, lam[i].imag
            blocks.append(np.array([[a, -b], [b, a]]))
            i += 2
        else:
            blocks.append(np.array([[lam[i].real]]))
            i += 1
    n = len(lam)
    A = np.zeros((n, n))
    pos = 0
    for blk in blocks:
        k = blk.shape[0]
        A[pos:pos + k, pos:pos + k] = blk
        pos += k
    return A


def modal_linear(eigenvalues) -> VectorField:
    """Real block-diagonal linear system with the given (conjugate-closed) spectrum."""
    A = _real_block_matrix(eigenvalues)
    return VectorField(A.shape[0], lambda x, t: A @ x,
                       truth={"eigenvalues": np.asarray(eigenvalues, dtype=complex), "A": A})


def pair_block_transform(n_pairs: int, mixing=None) -> np.ndarray:
    """Map from paired modal coordinates ``(q1, conj q1, ...)`` to real states.

    Each pair goes to ``(Re q, Im q)``; an optional orthogonal ``mixing``
    matrix rotates the result, so every modal plane stays isometric.
    """
    block = np.array([[0.5, 0.5], [-0.5j, 0.5j]])
    T = np.kron(np.eye(n_pairs), block)
    if mixing is not None:
        T = np.asarray(mixing) @ T
    return T


def modal_field(system) -> VectorField:
    """Physical field ``x' = T (Lambda q + g0(q))`` with ``q = T^-1 x``."""
    T = system.T
    Tinv = np.linalg.inv(T)
    lam = system.Lambda
    terms = [(exponent_matrix(system.n, j, j), G) for j, G in system.G0.items()]

    def rhs(x, t):
        q = Tinv @ x
        dq = lam[:, None] * q if q.ndim == 2 else lam * q
        for E, G in terms:
            dq = dq + G @ eval_monomials(E, q)
        return (T @ dq).real

    return VectorField(system.n, rhs, truth={"eigenvalues": lam.copy()})


def slow_fast_poly(slow=complex(-0.05, 1.0), fast=(complex(-0.4, 2.7), complex(-0.7, 4.3)),
                   quadratic: float = 0.3, cubic: float = 0.2, mixing_seed: int | None = 0):
    """Slow oscillator coupled to fast oscillators through polynomial terms.

    Returns a modal system (see ``ssmred.oracle.ModalSystem``) whose slow rows
    carry no slow-only quadratic terms; quadratic couplings feed the fast rows
    and the slow rows receive mixed slow-fast quadratic and cubic terms.
    """
    from .oracle import ModalSystem

    lam_pairs = [complex(slow)] + [complex(f) for f in fast]
    Lambda = np.array([v for lp in lam_pairs for v in (lp, np.conj(lp))])
    n = len(Lambda)
    m = len(lam_pairs)

    E2 = exponent_matrix(n, 2, 2)
    E3 = exponent_matrix(n, 3, 3)
    G2 = np.zeros((n, E2.size), dtype=complex)
    G3 = np.zeros((n, E3.size), dtype=complex)
    idx2, idx3 = E2.index(), E3.index()

    def put(G, idx, row, expo, value):
        # set a term and its conjugate mirror on the partner row
        swap = np.arange(n).reshape(-1, 2)[:, ::-1].ravel()
        G[row, idx[tuple(expo)]] += value
        partner = row + 1 if row % 2 == 0 else row - 1
        G[partner, idx[tuple(np.asarray(expo)[swap])]] += np.conj(value)

    def mono(**powers):
        e = [0] * n
        for key, val in powers.items():
            e[int(key[1:])] += val
        return e

    a, c = quadratic, cubic
    # fast rows: slow-only quadratic forcing of the fast modes
    for pair in range(1, m):
        row = 2 * pair
        put(G2, idx2, row, mono(q0=2), a * complex(1.0, 0.5 * pair))
        put(G2, idx2, row, mono(q0=1, q1=1), a * complex(-0.5, 0.8))
        put(G2, idx2, row, mono(q1=2), a * complex(0.3, -0.2 * pair))
    # slow row: mixed slow-fast quadratic terms and cubic terms
    put(G2, idx2, 0, mono(q0=1, q2=1), a * complex(0.6, -0.4))
    put(G2, idx2, 0, mono(q1=1, q3=1), a * complex(-0.3, 0.5))
    if m > 2:
        put(G2, idx2, 0, mono(q0=1, q4=1), a * complex(0.4, 0.2))
    put(G3, idx3, 0, mono(q0=2, q1=1), c * complex(-1.0, -2.0))
    put(G3, idx3, 0, mono(q0=3), c * complex(0.5, 0.3))
    put(G3, idx3, 0, mono(q0=1, q1=2), c * complex(-0.4, 0.6))

    mixing = None
    if mixing_seed is not None:
        rng = np.random.default_rng(mixing_seed)
        mixing, _ = np.linalg.qr(rng.standard_normal((n, n)))
    T = pair_block_transform(m, mixing)
    return ModalSystem(Lambda=Lambda, G0={2: G2, 3: G3}, T=T)


@dataclass(frozen=True, eq=False)
class PolynomialObservable:
    """Observable channels ``s = coeffs @ x^{1:order}`` in state monomials."""

    exponents: ExponentMatrix
    coeffs: np.ndarray  # (channels, n_monomials)

    def __call__(self, x) -> np.ndarray:
        return self.coeffs @ eval_monomials(self.exponents, x)


def polynomial_observable(n: int, order: int, terms: list[dict]) -> PolynomialObservable:
    """Build an observable from ``{exponent tuple: coefficient}`` dicts, one per channel."""
    E = exponent_matrix(n, 1, order)
    idx = E.index()
    coeffs = np.zeros((len(terms), E.size))
    for ch, spec in enumerate(terms):
        for expo, val in spec.items():
            if tuple(expo) not in idx:
                raise ValueError(f"monomial {expo} not in basis of order {order}")
            coeffs[ch, idx[tuple(expo)]] = val
    return PolynomialObservable(E, coeffs)


@dataclass(frozen=True, eq=False)
class ObservedSystem:
    field: VectorField
    observe: Callable[[np.ndarray], np.ndarray]

    def sample(self, x0, t_span, dt: float) -> TimeSeries:
        states = integrate_rk4(self.field, x0, t_span, dt)
        return TimeSeries(states.t0, dt, np.atleast_2d(self.observe(states.values)))


def observable_lift(system: VectorField, observe) -> ObservedSystem:
    """Pair a system with a (typically polynomial) observable map."""
    return ObservedSystem(system, observe)
