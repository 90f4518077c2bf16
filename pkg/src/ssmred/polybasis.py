"""Multivariate monomial bookkeeping.

Monomials are stored as integer exponent matrices with one column per
monomial and one row per variable. Columns are graded (all order-j
monomials before order j+1) and, inside each order, sorted in descending
lexicographic order with the first variable most significant. For two
variables and orders 2..3 this gives::

    [[2, 1, 0, 3, 2, 1, 0],
     [0, 1, 2, 0, 1, 2, 3]]

Evaluation works for real or complex points and for batches of points
stored column-wise.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np


@dataclass(frozen=True, eq=False)
class ExponentMatrix:
    dims: int
    min_order: int
    max_order: int
    exponents: np.ndarray  # (dims, n_monomials), int

    @property
    def orders(self) -> np.ndarray:
        """Total degree of every column."""
        return self.exponents.sum(axis=0)

    @property
    def size(self) -> int:
        return self.exponents.shape[1]

    def __len__(self) -> int:
        return self.size

    def index(self) -> dict[tuple[int, ...], int]:
        """Map from exponent tuple to column index."""
        return {tuple(int(v) for v in col): k for k, col in enumerate(self.exponents.T)}

    def block(self, order: int) -> slice:
        """Column slice holding the monomials of one order."""
        if not self.min_order <= order <= self.max_order:
            raise ValueError(f"order {order} outside [{self.min_order}, {self.max_order}]")
        start = sum(monomial_count(self.dims, j) for j in range(self.min_order, order))
        return slice(start, start + monomial_count(self.dims, order))


def monomial_count(dims: int, order: int) -> int:
    return comb(dims + order - 1, order)


@lru_cache(maxsize=256)
def _exponents(dims: int, min_order: int, max_order: int) -> np.ndarray:
    cols = []
    for order in range(min_order, max_order + 1):
        # combinations_with_replacement yields sorted variable tuples, which
        # map to descending-lex exponent vectors
        for combo in itertools.combinations_with_replacement(range(dims), order):
            e = [0] * dims
            for v in combo:
                e[v] += 1
            cols.append(e)
    arr = np.array(cols, dtype=np.int64).T.reshape(dims, len(cols))
    arr.setflags(write=False)
    return arr


def exponent_matrix(dims: int, min_order: int, max_order: int) -> ExponentMatrix:
    """Canonical graded-lex exponent matrix for ``dims`` variables.

    ``min_order`` may be 0 to include the constant monomial; the public
    contract only uses ``min_order >= 1``.
    """
    if dims < 1:
        raise ValueError(f"dims must be >= 1, got {dims}")
    if min_order < 0 or max_order < min_order:
        raise ValueError(f"invalid order range [{min_order}, {max_order}]")
    return ExponentMatrix(dims, min_order, max_order, _exponents(dims, min_order, max_order))


def _as_points(E: ExponentMatrix, point) -> tuple[np.ndarray, bool]:
    x = np.asarray(point)
    single = x.ndim == 1
    if single:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] != E.dims:
        raise ValueError(f"expected {E.dims} variables, got array of shape {np.shape(point)}")
    return x, single


def _power_table(x: np.ndarray, max_power: int) -> np.ndarray:
    # powers[k] = x**k built by repeated multiplication
    powers = np.empty((max_power + 1,) + x.shape, dtype=np.result_type(x, float))
    powers[0] = 1.0
    for k in range(1, max_power + 1):
        powers[k] = powers[k - 1] * x
    return powers


def eval_monomials(E: ExponentMatrix, point) -> np.ndarray:
    """Evaluate every monomial of ``E`` at ``point``.

    ``point`` is a vector of length ``dims`` or a ``(dims, P)`` batch; the
    result is ``(n_monomials,)`` or ``(n_monomials, P)`` respectively.
    """
    x, single = _as_points(E, point)
    powers = _power_table(x, E.max_order)
    rows = np.arange(E.dims)[:, None]
    # (dims, K, P) gather then product over variables
    out = np.prod(powers[E.exponents, rows, :], axis=0)
    return out[:, 0] if single else out


def monomial_jacobian(E: ExponentMatrix, point) -> np.ndarray:
    """Partial derivatives of the monomials.

    Entry ``[k, i]`` is d(monomial k)/d(variable i). For a batch of points the
    result has shape ``(n_monomials, dims, P)``.
    """
    x, single = _as_points(E, point)
    powers = _power_table(x, E.max_order)
    rows = np.arange(E.dims)[:, None]
    factors = powers[E.exponents, rows, :]  # (dims, K, P)
    lowered = powers[np.maximum(E.exponents - 1, 0), rows, :]
    K, P = E.size, x.shape[1]
    jac = np.empty((K, E.dims, P), dtype=factors.dtype)
    for i in range(E.dims):
        f = factors.copy()
        f[i] = lowered[i] * E.exponents[i][:, None]
        jac[:, i, :] = np.prod(f, axis=0)
    return jac[:, :, 0] if single else jac


def conjugate_permutation(E: ExponentMatrix) -> np.ndarray:
    """Column permutation realising complex conjugation.

    Variables are assumed to come in conjugate pairs ``(z1, conj z1, z2, ...)``.
    For real-pair data, ``conj(z**E[:, k]) == z**E[:, perm[k]]``.
    """
    if E.dims % 2:
        raise ValueError("conjugate pairing needs an even number of variables")
    swap = np.arange(E.dims).reshape(-1, 2)[:, ::-1].ravel()
    lookup = E.index()
    return np.array([lookup[tuple(int(v) for v in col[swap])] for col in E.exponents.T])
