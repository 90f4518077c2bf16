"""Forced response of polar normal forms.

A single forced oscillator in polar coordinates with phase lag
``psi = theta - Omega t - phi`` obeys

    rho' = alpha(rho) rho + f sin(psi)
    psi' = omega(rho) - Omega + (f / rho) cos(psi)

whose fixed points give the forced response curve (FRC)
``Omega = omega(rho0) +- sqrt(f^2 / rho0^2 - alpha(rho0)^2)``.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .systems import rk4_step

log = logging.getLogger(__name__)

RHO_GUARD = 1e-12
MARGINAL = 1e-10


@dataclass(frozen=True, eq=False)
class PolarModel:
    """Amplitude-dependent growth rates and frequencies of ``m`` oscillators.

    Term ``t`` is the monomial ``prod_l rho_l^(2 powers[l, t])``; ``alpha[j, t]``
    and ``omega[j, t]`` are its coefficients for mode ``j``. The first term
    is the constant one, so ``alpha[:, 0]`` and ``omega[:, 0]`` hold the
    linear damping and frequency.
    """

    powers: np.ndarray  # (m, T) int
    alpha: np.ndarray  # (m, T)
    omega: np.ndarray  # (m, T)

    def __post_init__(self):
        powers = np.atleast_2d(np.asarray(self.powers, dtype=int))
        alpha = np.atleast_2d(np.asarray(self.alpha, dtype=float))
        omega = np.atleast_2d(np.asarray(self.omega, dtype=float))
        if not (powers.shape[1] == alpha.shape[1] == omega.shape[1]):
            raise ValueError("powers, alpha and omega must have the same number of terms")
        if alpha.shape[0] != powers.shape[0] or omega.shape[0] != powers.shape[0]:
            raise ValueError("one row of coefficients per mode is required")
        if powers.shape[1] == 0 or np.any(powers[:, 0] != 0):
            raise ValueError("the first term must be the constant term")
        object.__setattr__(self, "powers", powers)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "omega", omega)

    @classmethod
    def single(cls, alpha_coeffs, omega_coeffs) -> "PolarModel":
        """One oscillator from coefficient lists in powers rho^0, rho^2, rho^4, ..."""
        a = list(alpha_coeffs)
        w = list(omega_coeffs)
        size = max(len(a), len(w))
        a += [0.0] * (size - len(a))
        w += [0.0] * (size - len(w))
        return cls(np.arange(size)[None, :], np.array([a]), np.array([w]))

    @property
    def modes(self) -> int:
        return self.powers.shape[0]

    @property
    def alpha0(self) -> np.ndarray:
        return self.alpha[:, 0]

    @property
    def omega0(self) -> np.ndarray:
        return self.omega[:, 0]

    def coeffs(self, mode: int = 0) -> tuple[np.ndarray, np.ndarray]:
        """Coefficient lists of ``alpha_j`` and ``omega_j`` in powers of ``rho_j^2``.

        Only defined when no term of this mode involves other amplitudes.
        """
        others = np.delete(self.powers, mode, axis=0)
        used = (self.alpha[mode] != 0) | (self.omega[mode] != 0)
        if np.any(others[:, used]):
            raise ValueError(f"mode {mode} couples to other amplitudes")
        top = int(self.powers[mode].max())
        a, w = np.zeros(top + 1), np.zeros(top + 1)
        for t, pw in enumerate(self.powers[mode]):
            a[pw] += self.alpha[mode, t]
            w[pw] += self.omega[mode, t]
        return a, w

    def _terms(self, rho):
        rho = np.asarray(rho, dtype=float)
        if rho.shape[0] != self.modes:
            raise ValueError(f"expected {self.modes} amplitudes")
        sq = rho ** 2
        return np.prod(sq[:, None, ...] ** self.powers.reshape(self.powers.shape + (1,) * (rho.ndim - 1)),
                       axis=0)

    def alpha_at(self, rho) -> np.ndarray:
        return np.tensordot(self.alpha, self._terms(rho), axes=1)

    def omega_at(self, rho) -> np.ndarray:
        return np.tensordot(self.omega, self._terms(rho), axes=1)

    def _single(self):
        if self.modes != 1:
            raise ValueError("closed-form FRC is available for a single oscillator only; "
                             "use simulate_polar for several modes")
        return self.coeffs(0)

    def alpha1(self, rho):
        """``alpha(rho)`` and ``d alpha / d rho`` for a single oscillator."""
        a, _ = self._single()
        return _even_poly(a, rho)

    def omega1(self, rho):
        _, w = self._single()
        return _even_poly(w, rho)


def _even_poly(c, rho):
    rho = np.asarray(rho, dtype=float)
    sq = rho ** 2
    val = np.zeros_like(sq)
    der = np.zeros_like(sq)
    for k, ck in enumerate(c):
        val = val + ck * sq ** k
        if k:
            der = der + 2 * k * ck * rho ** (2 * k - 1)
    return val, der


# ----------------------------------------------------------------- FRC


@dataclass(frozen=True)
class FrcPoint:
    Omega: float
    rho0: float
    psi0: float
    stable: bool
    branch: int  # +1 or -1 for the sign of the square root
    marginal: bool = False


def fixed_point_residual(polar: PolarModel, f: float, Omega: float, rho: float, psi: float):
    a, _ = polar.alpha1(rho)
    w, _ = polar.omega1(rho)
    return (float(a * rho + f * np.sin(psi)), float(w - Omega + f / rho * np.cos(psi)))


def fixed_point_jacobian(polar: PolarModel, f: float, rho: float, psi: float) -> np.ndarray:
    a, da = polar.alpha1(rho)
    _, dw = polar.omega1(rho)
    return np.array([
        [a + da * rho, f * np.cos(psi)],
        [dw - f * np.cos(psi) / rho ** 2, -f / rho * np.sin(psi)],
    ])


def _classify(polar, f, rho, psi):
    re = np.linalg.eigvals(fixed_point_jacobian(polar, f, rho, psi)).real
    marginal = bool(np.any(np.abs(re) < MARGINAL))
    return bool(np.all(re < 0)) and not marginal, marginal


def frc_stability(polar: PolarModel, f: float, point: FrcPoint) -> bool:
    """Linear stability of an FRC fixed point; marginal points count as unstable."""
    return _classify(polar, f, point.rho0, point.psi0)[0]


def _point(polar, f, Omega, rho, branch):
    a, _ = polar.alpha1(rho)
    w, _ = polar.omega1(rho)
    psi = float(np.arctan2(-a, Omega - w))
    stable, marginal = _classify(polar, f, rho, psi)
    return FrcPoint(float(Omega), float(rho), psi, stable, branch, marginal)


def frc_sweep(polar: PolarModel, f: float, rho_grid) -> list[FrcPoint]:
    """Both FRC branches over an amplitude grid, skipping rho outside the response."""
    if not f > 0:
        raise ValueError("forcing amplitude must be positive")
    rho_grid = np.asarray(rho_grid, dtype=float)
    if np.any(rho_grid <= 0) or np.any(np.diff(rho_grid) <= 0):
        raise ValueError("rho grid must be positive and ascending")
    a, _ = polar.alpha1(rho_grid)
    w, _ = polar.omega1(rho_grid)
    radicand = f ** 2 / rho_grid ** 2 - a ** 2
    points = []
    for rho, wk, rad in zip(rho_grid, w, radicand):
        if rad < 0:
            continue
        root = np.sqrt(rad)
        if root == 0:
            points.append(_point(polar, f, wk, rho, 1))
            continue
        points.append(_point(polar, f, wk - root, rho, -1))
        points.append(_point(polar, f, wk + root, rho, 1))
    if not points:
        log.warning("forcing amplitude %g yields no response on the supplied grid", f)
    return points


def response_at(polar: PolarModel, f: float, Omega: float, rho_max: float,
                samples: int = 2000) -> list[FrcPoint]:
    """All steady amplitudes at a fixed forcing frequency up to ``rho_max``.

    Solves ``rho^2 ((Omega - omega)^2 + alpha^2) = f^2`` by a sign scan
    followed by bracketed root finding.
    """
    def excess(rho):
        a, _ = polar.alpha1(rho)
        w, _ = polar.omega1(rho)
        return rho ** 2 * ((Omega - w) ** 2 + a ** 2) - f ** 2

    grid = np.linspace(rho_max / samples, rho_max, samples)
    vals = excess(grid)
    points = []
    for lo, hi, vlo, vhi in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
        if vlo == 0:
            root = lo
        elif vlo * vhi < 0:
            root = brentq(excess, lo, hi, xtol=1e-15, rtol=1e-14)
        else:
            continue
        w, _ = polar.omega1(root)
        points.append(_point(polar, f, Omega, root, 1 if Omega >= w else -1))
    return points


def calibrate_forcing(polar: PolarModel, Omega: float, rho0: float) -> float:
    """Forcing amplitude placing a response of amplitude ``rho0`` at ``Omega``."""
    if not rho0 > 0:
        raise ValueError("rho0 must be positive")
    a, _ = polar.alpha1(rho0)
    w, _ = polar.omega1(rho0)
    return float(rho0 * np.sqrt((Omega - w) ** 2 + a ** 2))


@dataclass(frozen=True, eq=False)
class Backbone:
    rho: np.ndarray
    omega: np.ndarray
    max_training_amplitude: float | None = None

    def __iter__(self):
        return iter(zip(self.rho.tolist(), self.omega.tolist()))

    def __len__(self):
        return len(self.rho)


def backbone(polar: PolarModel, rho_grid, max_training_amplitude: float | None = None) -> Backbone:
    rho = np.asarray(rho_grid, dtype=float)
    return Backbone(rho, np.asarray(polar.omega1(rho)[0], dtype=float), max_training_amplitude)


# --------------------------------------------------------------- forcing


@dataclass(frozen=True)
class Harmonic:
    mode: int
    k: tuple[int, ...]
    f: float
    phi: float = 0.0
    sign: int = 1  # +1 for the K^+ family, -1 for K^-

    def __post_init__(self):
        if self.f < 0:
            raise ValueError("forcing amplitudes must be non-negative")
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")


@dataclass(frozen=True, eq=False)
class ForcingSpec:
    Omega: np.ndarray
    harmonics: tuple[Harmonic, ...] = ()

    def __post_init__(self):
        Omega = np.atleast_1d(np.asarray(self.Omega, dtype=float))
        object.__setattr__(self, "Omega", Omega)
        object.__setattr__(self, "harmonics", tuple(self.harmonics))
        seen = {}
        for h in self.harmonics:
            if len(h.k) != len(Omega):
                raise ValueError("harmonic index length must match the frequency vector")
            key = (h.mode, tuple(h.k))
            if seen.get(key, h.sign) != h.sign:
                raise ValueError(f"harmonic {h.k} of mode {h.mode} is in both K+ and K-")
            seen[key] = h.sign

    @classmethod
    def primary(cls, Omega: float, f: float, phi: float = 0.0, mode: int = 0) -> "ForcingSpec":
        return cls(np.array([Omega]), (Harmonic(mode, (1,), f, phi, 1),))

    def frequencies(self) -> np.ndarray:
        return np.array([np.dot(h.k, self.Omega) for h in self.harmonics])


def resonant_harmonics(polar: PolarModel, Omega, kmax: int, delta: float):
    """Near-resonant harmonics per mode as ``[(K_plus, K_minus), ...]``.

    Integer vectors with ``1 <= |k|_1 <= kmax`` are enumerated on the half
    lattice (first nonzero entry positive); the mirror ``-k`` describes the
    conjugate forcing term and is not listed separately.
    """
    Omega = np.atleast_1d(np.asarray(Omega, dtype=float))
    ell = len(Omega)
    lattice = []
    for k in itertools.product(range(-kmax, kmax + 1), repeat=ell):
        nz = [v for v in k if v]
        if not nz or nz[0] < 0 or sum(abs(v) for v in k) > kmax:
            continue
        lattice.append(k)
    out = []
    for w in polar.omega0:
        plus = [k for k in lattice if abs(w - np.dot(k, Omega)) <= delta]
        minus = [k for k in lattice if abs(w + np.dot(k, Omega)) <= delta]
        out.append((plus, minus))
    return out


# ------------------------------------------------------------ simulation


@dataclass(frozen=True, eq=False)
class PolarTrajectory:
    t: np.ndarray
    rho: np.ndarray  # (m, [B,] T)
    theta: np.ndarray
    guard_events: np.ndarray  # bool per batch member (or scalar)


def simulate_polar(polar: PolarModel, forcing, initial, tspan, dt: float,
                   store_every: int = 1) -> PolarTrajectory:
    """RK4 integration of the forced polar equations.

    ``forcing`` is one :class:`ForcingSpec` or a sequence of specs sharing
    the same harmonic structure (a batch); ``initial`` is ``(rho, theta)``
    with arrays of shape ``(m,)`` or ``(m, B)``. Amplitudes are clamped at
    a small positive guard where the ``f / rho`` term is singular, and the
    clamp is reported in ``guard_events``.
    """
    specs = [forcing] if isinstance(forcing, ForcingSpec) else list(forcing)
    batched = not isinstance(forcing, ForcingSpec)
    rho0, theta0 = (np.asarray(v, dtype=float) for v in initial)
    m = polar.modes
    if rho0.shape[0] != m or theta0.shape != rho0.shape:
        raise ValueError(f"initial state needs {m} amplitudes and phases")
    if batched or rho0.ndim == 2:
        B = max(len(specs), rho0.shape[1] if rho0.ndim == 2 else 1)
        rho0 = np.broadcast_to(rho0.reshape(m, -1), (m, B)).copy()
        theta0 = np.broadcast_to(theta0.reshape(m, -1), (m, B)).copy()
        if len(specs) == 1:
            specs = specs * B
        if len(specs) != B:
            raise ValueError("batch sizes of forcing and initial state differ")
    else:
        B = None
        rho0 = rho0[:, None]
        theta0 = theta0[:, None]
    ref = specs[0]
    for s in specs:
        if [(h.mode, h.k, h.sign) for h in s.harmonics] != \
                [(h.mode, h.k, h.sign) for h in ref.harmonics]:
            raise ValueError("batched forcing specs must share the harmonic structure")
    modes = np.array([h.mode for h in ref.harmonics], dtype=int)
    signs = np.array([h.sign for h in ref.harmonics], dtype=float)
    freq = np.array([s.frequencies() for s in specs]).T.reshape(len(modes), len(specs))  # (H, B)
    amp = np.array([[h.f for h in s.harmonics] for s in specs]).T.reshape(len(modes), len(specs))
    phase = np.array([[h.phi for h in s.harmonics] for s in specs]).T.reshape(len(modes), len(specs))
    fastest = max(np.max(np.abs(polar.omega0)), np.max(np.abs(freq)) if freq.size else 0.0)
    if dt * fastest >= 0.5:
        raise ValueError("time step too coarse for the fastest frequency")

    t0, t1 = float(tspan[0]), float(tspan[1])
    steps = int(round((t1 - t0) / dt))
    events = np.zeros(rho0.shape[1], dtype=bool)

    def rhs(state, t):
        rho, theta = state[:m], state[m:]
        drho = polar.alpha_at(rho) * rho
        dtheta = polar.omega_at(rho)
        if len(modes):
            arg = freq * t + phase - signs[:, None] * theta[modes]
            s = amp * np.sin(arg)
            c = amp * np.cos(arg)
            safe = np.maximum(rho[modes], RHO_GUARD)
            for h, j in enumerate(modes):
                drho[j] -= s[h]
                dtheta[j] += signs[h] * c[h] / safe[h]
        return np.concatenate([drho, dtheta])

    state = np.concatenate([rho0, theta0])
    keep = list(range(0, steps + 1, store_every))
    out = np.empty((len(keep),) + state.shape)
    out[0] = state
    slot = 1
    for i in range(1, steps + 1):
        state = rk4_step(rhs, state, t0 + (i - 1) * dt, dt)
        low = state[:m] < RHO_GUARD
        if np.any(low):
            events |= np.any(low, axis=0)
            state[:m] = np.maximum(state[:m], RHO_GUARD)
        if i % store_every == 0:
            out[slot] = state
            slot += 1
    t = t0 + dt * np.array(keep)
    rho = np.moveaxis(out[:, :m], 0, -1)
    theta = np.moveaxis(out[:, m:], 0, -1)
    if B is None:
        return PolarTrajectory(t, rho[:, 0], theta[:, 0], np.bool_(events[0]))
    return PolarTrajectory(t, rho, theta, events)


def steady_phase(traj: PolarTrajectory, forcing, mode: int = 0) -> np.ndarray:
    """Final phase lag ``theta - Omega t - phi`` of the first harmonic, wrapped to (-pi, pi]."""
    specs = [forcing] if isinstance(forcing, ForcingSpec) else list(forcing)
    h = specs[0].harmonics[0]
    w = np.array([s.frequencies()[0] for s in specs])
    phi = np.array([s.harmonics[0].phi for s in specs])
    theta = traj.theta[mode][..., -1]
    psi = h.sign * theta - w * traj.t[-1] - phi
    psi = np.angle(np.exp(1j * psi))
    return psi if psi.size > 1 else psi.reshape(-1)[0]
