"""Trajectory containers, delay embedding, derivatives and the NMTE metric."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Uniformly sampled observables; ``values`` has one row per channel."""

    t0: float
    dt: float
    values: np.ndarray

    def __post_init__(self):
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if values.shape[1] < 2:
            raise ValueError("a time series needs at least 2 samples")
        if not np.all(np.isfinite(values)):
            raise ValueError("time series contains non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def samples(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.samples)


@dataclass(frozen=True, eq=False)
class EmbeddedTrajectory:
    """Delay-embedded states, one column per embedded point.

    With ``C`` channels the ambient dimension is ``C * p``; row ``ch * p + r``
    of column ``c`` holds channel ``ch`` at sample ``c + r * shift``.
    """

    t0: float
    dt: float
    p: int
    shift: int
    points: np.ndarray

    @property
    def dim(self) -> int:
        return self.points.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.points.shape[1])


def delay_embed(series: TimeSeries, p: int, shift: int = 1) -> EmbeddedTrajectory:
    if p < 1 or shift < 1:
        raise ValueError(f"need p >= 1 and shift >= 1, got p={p}, shift={shift}")
    count = series.samples - (p - 1) * shift
    if count < 1:
        raise ValueError(
            f"series of {series.samples} samples too short for p={p}, shift={shift}")
    rows = [series.values[ch, r * shift: r * shift + count]
            for ch in range(series.channels) for r in range(p)]
    return EmbeddedTrajectory(series.t0, series.dt, p, shift, np.array(rows))


def min_embedding_dimension(d: int, ell: int = 0, periodic_sampling: bool = False) -> int:
    """Smallest generic embedding dimension for a d-dim SSM with ell forcing frequencies."""
    if d < 1 or ell < 0:
        raise ValueError("need d >= 1 and ell >= 0")
    if periodic_sampling or ell == 0:
        return 2 * d + 1
    return 2 * (d + ell) + 1


def finite_diff_derivative(traj, dt: float) -> np.ndarray:
    """Second-order central differences, one-sided second order at the ends."""
    x = np.atleast_2d(np.asarray(traj))
    if x.shape[1] < 3:
        raise ValueError("finite differences need at least 3 samples")
    if not dt > 0:
        raise ValueError("dt must be positive")
    return np.gradient(x, dt, axis=1, edge_order=2)


def largest_norm_column(data) -> np.ndarray:
    data = np.atleast_2d(np.asarray(data))
    return data[:, np.argmax(np.linalg.norm(data, axis=0))]


def nmte(reference, reconstruction, normalizer=None) -> float:
    """Normalized mean trajectory error.

    Mean Euclidean distance between matching columns divided by the norm of
    ``normalizer`` (default: the reference point with the largest norm).
    """
    ref = np.atleast_2d(np.asarray(reference))
    rec = np.atleast_2d(np.asarray(reconstruction))
    if ref.shape != rec.shape:
        raise ValueError(f"shape mismatch {ref.shape} vs {rec.shape}")
    if normalizer is None:
        normalizer = largest_norm_column(ref)
    scale = np.linalg.norm(normalizer)
    if scale == 0:
        raise ValueError("normalizer has zero norm")
    return float(np.mean(np.linalg.norm(ref - rec, axis=0)) / scale)


def train_test_split(items, roles):
    """Split parallel lists by role labels ``"train"`` / ``"test"``."""
    train = [x for x, r in zip(items, roles) if r == "train"]
    test = [x for x, r in zip(items, roles) if r == "test"]
    return train, test


# CSV trajectory files: header ``t,ch0,ch1,...``, one row per sample.

def save_csv(series: TimeSeries, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"ch{i}" for i in range(series.channels)])
        for t, row in zip(series.times, series.values.T):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def load_csv(path, rtol: float = 1e-6) -> TimeSeries:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"trajectory file not found: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0].strip() != "t":
        raise ValueError(f"{path}: expected header starting with 't'")
    data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    if data.ndim != 2 or data.shape[0] < 2:
        raise ValueError(f"{path}: need at least 2 samples")
    t = data[:, 0]
    steps = np.diff(t)
    dt = float(np.mean(steps))
    if dt <= 0 or np.max(np.abs(steps - dt)) > rtol * abs(dt):
        raise ValueError(f"{path}: non-uniform time step")
    return TimeSeries(float(t[0]), dt, data[:, 1:].T)
