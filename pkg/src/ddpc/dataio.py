"""Excitation signals, datasets, scaling, and excitation/data-length checks.

A dataset is a recorded input/output pair sampled at a fixed rate.  This
module generates the piecewise-constant random step inputs used to excite a
plant for identification, normalizes channels with a standard scaler
(population convention: std divides by T, not T-1), and checks the two
conditions that make Hankel-based prediction work: a minimum data length and
persistent excitation of sufficient order.

Datasets round-trip through CSV with header ``t,u1..u{n_u},y1..y{n_y}``, one
row per sample.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np


@dataclass(frozen=True)
class ScalerParams:
    """Per-channel standardization constants (population std, divide by T)."""

    mean_u: np.ndarray
    std_u: np.ndarray
    mean_y: np.ndarray
    std_y: np.ndarray

    def __post_init__(self):
        for name in ("mean_u", "std_u", "mean_y", "std_y"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(self.std_u <= 0) or np.any(self.std_y <= 0):
            raise ValueError("scaler std entries must be > 0")


@dataclass(frozen=True)
class TrajectoryDataset:
    """Input/output record of T samples at sampling time Ts (engineering units)."""

    u: np.ndarray  # (T, n_u)
    y: np.ndarray  # (T, n_y)
    Ts: float
    scaler: Optional[ScalerParams] = None

    def __post_init__(self):
        u = np.atleast_2d(np.asarray(self.u, dtype=float))
        y = np.atleast_2d(np.asarray(self.y, dtype=float))
        if u.shape[0] != y.shape[0]:
            raise ValueError(f"u has {u.shape[0]} samples but y has {y.shape[0]}")
        if u.shape[0] < 1:
            raise ValueError("dataset must hold at least one sample")
        if self.Ts <= 0:
            raise ValueError("Ts must be > 0")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "y", y)

    @property
    def T(self) -> int:
        return self.u.shape[0]

    @property
    def n_u(self) -> int:
        return self.u.shape[1]

    @property
    def n_y(self) -> int:
        return self.y.shape[1]


@dataclass(frozen=True)
class ExcitationSpec:
    """Random step-sequence description.

    Each channel holds a uniform-random level for a uniform-random duration
    drawn from step_duration_range (inclusive, in samples).  Channels switch
    independently by default; synchronized=True makes all channels share
    switch times (both readings of a coordinated multi-channel experiment).
    """

    n_u: int
    T: int
    Ts: float
    lo: np.ndarray  # (n_u,)
    hi: np.ndarray  # (n_u,)
    step_duration_range: Tuple[int, int]
    seed: int
    synchronized: bool = False

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != (self.n_u,) or hi.shape != (self.n_u,):
            raise ValueError("lo/hi must have one entry per input channel")
        if np.any(lo >= hi):
            raise ValueError("each channel needs lo < hi")
        d_min, d_max = self.step_duration_range
        if not (1 <= d_min <= d_max <= self.T):
            raise ValueError("need 1 <= min <= max <= T for step durations")
        if self.T < 1 or self.n_u < 1:
            raise ValueError("T and n_u must be >= 1")
        if self.Ts <= 0:
            raise ValueError("Ts must be > 0")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)


def generate_step_excitation(spec: ExcitationSpec) -> np.ndarray:
    """Piecewise-constant (T, n_u) signal, reproducible for a given seed."""
    rng = np.random.default_rng(spec.seed)
    u = np.empty((spec.T, spec.n_u))
    d_min, d_max = spec.step_duration_range
    if spec.synchronized:
        k = 0
        while k < spec.T:
            d = int(rng.integers(d_min, d_max + 1))
            levels = rng.uniform(spec.lo, spec.hi)
            u[k:k + d] = levels
            k += d
    else:
        for j in range(spec.n_u):
            k = 0
            while k < spec.T:
                d = int(rng.integers(d_min, d_max + 1))
                u[k:k + d, j] = rng.uniform(spec.lo[j], spec.hi[j])
                k += d
    return u


def fit_scaler(dataset: TrajectoryDataset) -> ScalerParams:
    """Standard scaler over each channel; raises naming any constant channel."""
    if dataset.T < 2:
        raise ValueError("need at least 2 samples to fit a scaler")
    std_u = dataset.u.std(axis=0)
    std_y = dataset.y.std(axis=0)
    for j in range(dataset.n_u):
        if std_u[j] <= 0:
            raise ValueError(f"input channel u{j + 1} has zero variance")
    for j in range(dataset.n_y):
        if std_y[j] <= 0:
            raise ValueError(f"output channel y{j + 1} has zero variance")
    return ScalerParams(mean_u=dataset.u.mean(axis=0), std_u=std_u,
                        mean_y=dataset.y.mean(axis=0), std_y=std_y)


def apply_scaler(dataset: TrajectoryDataset, params: ScalerParams) -> TrajectoryDataset:
    u = (dataset.u - params.mean_u) / params.std_u
    y = (dataset.y - params.mean_y) / params.std_y
    return replace(dataset, u=u, y=y, scaler=params)


def invert_scaler(dataset: TrajectoryDataset, params: ScalerParams) -> TrajectoryDataset:
    u = dataset.u * params.std_u + params.mean_u
    y = dataset.y * params.std_y + params.mean_y
    return replace(dataset, u=u, y=y, scaler=None)


def minimum_data_length(n_u: int, T_ini: int, N: int, n_order: int) -> int:
    """Shortest dataset from which a length-(T_ini+N) predictor can be exact."""
    if min(n_u, T_ini, N, n_order) < 1:
        raise ValueError("all arguments must be >= 1")
    return (n_u + 1) * (T_ini + N + n_order) - 1


def persistent_excitation_check(u: np.ndarray, order: int) -> Tuple[int, bool]:
    """Numerical rank of the depth-`order` Hankel matrix of u.

    Returns (rank, is_full) where full means rank == n_channels * order.
    Rank counts singular values above 1e-10 times the largest.
    """
    from ddpc.hankel import build_hankel

    u = np.atleast_2d(np.asarray(u, dtype=float))
    if u.shape[0] < order:
        raise ValueError(f"sequence of length {u.shape[0]} shorter than order {order}")
    H = build_hankel(u, order)
    sv = np.linalg.svd(H, compute_uv=False)
    rank = int(np.sum(sv > 1e-10 * sv[0])) if sv.size and sv[0] > 0 else 0
    return rank, rank == u.shape[1] * order


def save_dataset(dataset: TrajectoryDataset, path) -> None:
    """CSV with header t,u1..u{n_u},y1..y{n_y}; t in seconds."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        header = (["t"]
                  + [f"u{j + 1}" for j in range(dataset.n_u)]
                  + [f"y{j + 1}" for j in range(dataset.n_y)])
        w.writerow(header)
        for k in range(dataset.T):
            row = [repr(k * dataset.Ts)]
            row += [repr(float(v)) for v in dataset.u[k]]
            row += [repr(float(v)) for v in dataset.y[k]]
            w.writerow(row)


def load_dataset(path) -> TrajectoryDataset:
    path = Path(path)
    with path.open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if not header or header[0] != "t":
            raise ValueError(f"{path}: expected dataset header starting with 't'")
        n_u = sum(1 for h in header if h.startswith("u"))
        n_y = sum(1 for h in header if h.startswith("y"))
        if 1 + n_u + n_y != len(header):
            raise ValueError(f"{path}: unrecognized dataset header {header}")
        t, u, y = [], [], []
        for row in r:
            t.append(float(row[0]))
            u.append([float(v) for v in row[1:1 + n_u]])
            y.append([float(v) for v in row[1 + n_u:]])
    if len(t) < 2:
        raise ValueError(f"{path}: dataset needs at least 2 rows to infer Ts")
    Ts = t[1] - t[0]
    return TrajectoryDataset(u=np.asarray(u), y=np.asarray(y), Ts=Ts)
