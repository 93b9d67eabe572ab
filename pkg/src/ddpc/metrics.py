"""Closed-loop logs and the four performance numbers read off them.

A RunLog is the per-step record of a closed-loop experiment: applied input,
measurement, reference, solver status and timing.  Metrics are deliberately
re-derivable by hand: RMS tracking error on one channel, cumulative weighted
tracking cost, cumulative input-rate cost (with the rate at the first step
defined as zero, since logs start at the first applied input), and summed
heater usage.  normalize_comparison renders two metric records as percentages
of a baseline, one decimal, with undefined entries where the baseline is zero.

Logs persist as CSV: `#`-prefixed metadata lines, then
t,u1..,y1..,r1..,status,solve_time,objective.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np


@dataclass
class RunLog:
    """Per-step closed-loop records plus identifying metadata."""

    controller: str
    plant: str
    config_hash: str
    seed: int
    t: np.ndarray = field(default_factory=lambda: np.zeros(0))
    u: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    y: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    r: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    status: List[str] = field(default_factory=list)
    solve_time: np.ndarray = field(default_factory=lambda: np.zeros(0))
    objective: np.ndarray = field(default_factory=lambda: np.zeros(0))
    extra: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.u = np.atleast_2d(np.asarray(self.u, dtype=float))
        self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
        self.r = np.atleast_2d(np.asarray(self.r, dtype=float))
        self.solve_time = np.asarray(self.solve_time, dtype=float)
        self.objective = np.asarray(self.objective, dtype=float)
        self._check()

    def _check(self):
        n = self.t.shape[0]
        if n == 0:
            return
        for name in ("u", "y", "r", "solve_time", "objective"):
            arr = getattr(self, name)
            if arr.shape[0] != n:
                raise ValueError(f"{name} has {arr.shape[0]} rows, expected {n}")
        if len(self.status) != n:
            raise ValueError(f"status has {len(self.status)} entries, expected {n}")
        if self.y.shape != self.r.shape:
            raise ValueError("y and r must have matching shapes")
        if n > 1 and np.any(np.diff(self.t) <= 0):
            raise ValueError("t must be strictly increasing")

    @property
    def T_sim(self) -> int:
        return self.t.shape[0]

    @property
    def n_u(self) -> int:
        return self.u.shape[1]

    @property
    def n_y(self) -> int:
        return self.y.shape[1]

    @classmethod
    def accumulate(cls, controller: str, plant: str, config_hash: str,
                   seed: int, **extra) -> "RunLog":
        """Empty log set up for append(); extra metadata lands in the header."""
        log = cls(controller=controller, plant=plant, config_hash=config_hash,
                  seed=seed, extra={k: str(v) for k, v in extra.items()})
        log._rows = []
        return log

    def append(self, t: float, u, y, r, status: str,
               solve_time: float = 0.0, objective: float = 0.0) -> None:
        """Collect one step; call finish() before reading metrics."""
        if not hasattr(self, "_rows"):
            self._rows = []
        self._rows.append((float(t), np.asarray(u, dtype=float).reshape(-1),
                           np.asarray(y, dtype=float).reshape(-1),
                           np.asarray(r, dtype=float).reshape(-1),
                           str(status), float(solve_time), float(objective)))

    def finish(self) -> "RunLog":
        """Freeze appended rows into the array fields."""
        rows = getattr(self, "_rows", [])
        if rows:
            self.t = np.array([r[0] for r in rows])
            self.u = np.vstack([r[1] for r in rows])
            self.y = np.vstack([r[2] for r in rows])
            self.r = np.vstack([r[3] for r in rows])
            self.status = [r[4] for r in rows]
            self.solve_time = np.array([r[5] for r in rows])
            self.objective = np.array([r[6] for r in rows])
            self._rows = []
        self._check()
        return self


def save_runlog(log: RunLog, path) -> None:
    """CSV with `#` metadata header then one row per step."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# controller: {log.controller}\n")
        fh.write(f"# plant: {log.plant}\n")
        fh.write(f"# config_hash: {log.config_hash}\n")
        fh.write(f"# seed: {log.seed}\n")
        for key, value in sorted(log.extra.items()):
            fh.write(f"# {key}: {value}\n")
        w = csv.writer(fh)
        w.writerow(["t"]
                   + [f"u{j + 1}" for j in range(log.n_u)]
                   + [f"y{j + 1}" for j in range(log.n_y)]
                   + [f"r{j + 1}" for j in range(log.n_y)]
                   + ["status", "solve_time", "objective"])
        for k in range(log.T_sim):
            row = [repr(float(log.t[k]))]
            row += [repr(float(v)) for v in log.u[k]]
            row += [repr(float(v)) for v in log.y[k]]
            row += [repr(float(v)) for v in log.r[k]]
            row += [log.status[k], repr(float(log.solve_time[k])),
                    repr(float(log.objective[k]))]
            w.writerow(row)


def load_runlog(path) -> RunLog:
    path = Path(path)
    meta: Dict[str, str] = {}
    body: List[List[str]] = []
    with path.open() as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                meta[key.strip()] = value.strip()
            elif line:
                body.append(next(csv.reader([line])))
    if not body:
        raise ValueError(f"{path}: no table found")
    header = body[0]
    n_u = sum(1 for h in header if h.startswith("u"))
    n_y = sum(1 for h in header if h.startswith("y"))
    rows = body[1:]
    known = {"controller", "plant", "config_hash", "seed"}
    log = RunLog(
        controller=meta.get("controller", "?"),
        plant=meta.get("plant", "?"),
        config_hash=meta.get("config_hash", "?"),
        seed=int(meta.get("seed", "0")),
        t=np.array([float(r[0]) for r in rows]),
        u=np.array([[float(v) for v in r[1:1 + n_u]] for r in rows]),
        y=np.array([[float(v) for v in r[1 + n_u:1 + n_u + n_y]] for r in rows]),
        r=np.array([[float(v) for v in r[1 + n_u + n_y:1 + n_u + 2 * n_y]] for r in rows]),
        status=[r[1 + n_u + 2 * n_y] for r in rows],
        solve_time=np.array([float(r[2 + n_u + 2 * n_y]) for r in rows]),
        objective=np.array([float(r[3 + n_u + 2 * n_y]) for r in rows]),
        extra={k: v for k, v in meta.items() if k not in known},
    )
    return log


@dataclass(frozen=True)
class MetricsRecord:
    """The four closed-loop performance numbers for one run."""

    e_rms: float
    J_y: float
    J_du: float
    E: float
    T_sim: int

    def __post_init__(self):
        # E is a plain sum and may be negative for signed inputs
        if min(self.e_rms, self.J_y, self.J_du) < 0:
            raise ValueError("quadratic metrics must be nonnegative")


def _check_weight(W, n: int, name: str) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    if W.ndim == 1:
        W = np.diag(W)
    if W.shape != (n, n):
        raise ValueError(f"{name} must be {n}x{n}, got {W.shape}")
    return W


def rms_tracking_error(log: RunLog, channel: int = 0) -> float:
    """sqrt(mean((y_ch - r_ch)^2)) over the whole log."""
    if log.T_sim == 0:
        raise ValueError("log is empty")
    if not 0 <= channel < log.n_y:
        raise ValueError(f"channel {channel} out of range for {log.n_y} outputs")
    e = log.y[:, channel] - log.r[:, channel]
    return float(np.sqrt(np.mean(e * e)))


def tracking_cost(log: RunLog, Q) -> float:
    """Sum of squared tracking errors weighted by Q."""
    if log.T_sim == 0:
        raise ValueError("log is empty")
    Q = _check_weight(Q, log.n_y, "Q")
    e = log.y - log.r
    return float(np.einsum("ki,ij,kj->", e, Q, e))


def effort_cost(log: RunLog, R) -> float:
    """Sum of squared input moves weighted by R; the move at t=0 counts as zero."""
    if log.T_sim == 0:
        raise ValueError("log is empty")
    R = _check_weight(R, log.n_u, "R")
    du = np.diff(log.u, axis=0)
    return float(np.einsum("ki,ij,kj->", du, R, du))


def energy(log: RunLog, channel: int = 2) -> float:
    """Cumulative usage of one input channel (heater power by default)."""
    if log.T_sim == 0:
        raise ValueError("log is empty")
    if not 0 <= channel < log.n_u:
        raise ValueError(f"channel {channel} out of range for {log.n_u} inputs")
    return float(np.sum(log.u[:, channel]))


def metrics_from_log(log: RunLog, Q, R, tracked_channel: int = 0,
                     energy_channel: int = 2) -> MetricsRecord:
    return MetricsRecord(
        e_rms=rms_tracking_error(log, tracked_channel),
        J_y=tracking_cost(log, Q),
        J_du=effort_cost(log, R),
        E=energy(log, energy_channel),
        T_sim=log.T_sim,
    )


_METRIC_NAMES = ("e_rms", "J_y", "J_du", "E")


def normalize_comparison(base: MetricsRecord, other: MetricsRecord) -> Dict[str, Optional[float]]:
    """Each metric of `other` as a percentage of `base`, one decimal.

    A zero baseline makes the percentage undefined: the entry is None, never
    infinity.
    """
    table: Dict[str, Optional[float]] = {}
    for name in _METRIC_NAMES:
        b = getattr(base, name)
        o = getattr(other, name)
        table[name] = None if b == 0 else round(100.0 * o / b, 1)
    return table


def comparison_table(base: MetricsRecord, other: MetricsRecord,
                     base_label: str = "baseline",
                     other_label: str = "candidate") -> str:
    """Aligned text table of both runs and the normalized percentages."""
    pct = normalize_comparison(base, other)
    lines = [f"{'metric':<8} {base_label:>14} {other_label:>14} {'percent':>10}"]
    for name in _METRIC_NAMES:
        p = pct[name]
        p_txt = "undefined" if p is None else f"{p:.1f}"
        lines.append(f"{name:<8} {getattr(base, name):>14.6g} "
                     f"{getattr(other, name):>14.6g} {p_txt:>10}")
    return "\n".join(lines)


def save_comparison_csv(base: MetricsRecord, other: MetricsRecord, path) -> None:
    """Machine-readable comparison: metric, base_value, other_value, percent."""
    pct = normalize_comparison(base, other)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "base_value", "other_value", "percent"])
        for name in _METRIC_NAMES:
            p = pct[name]
            w.writerow([name, repr(getattr(base, name)), repr(getattr(other, name)),
                        "" if p is None else f"{p:.1f}"])
