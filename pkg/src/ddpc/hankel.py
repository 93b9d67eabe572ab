"""Block-Hankel construction and the data-as-predictor completion step.

Columns of a depth-L Hankel matrix are length-L windows of a recorded signal,
flattened time-major: row block k holds every channel at relative time k, so
H[:, j] = data[j:j+L].reshape(-1).  Splitting the input and output Hankel
matrices at T_ini rows gives the four blocks (U_p, Y_p, U_f, Y_f) that act as
a nonparametric predictor: any column vector in their joint range is a valid
length-(T_ini+N) trajectory of the data-generating system.

trajectory_completion exercises that predictor directly: pin down the past
window and the future inputs, solve for the combination g in least squares,
and read off the future outputs.  The residual check tells you when the past
window is too short to determine the internal state (insufficient lag).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def build_hankel(data: np.ndarray, depth: int) -> np.ndarray:
    """Stack sliding windows of `data` (T, n_c) into a (depth*n_c, T-depth+1) matrix."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    T, n_c = data.shape
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if T < depth:
        raise ValueError(f"need at least depth={depth} samples, got {T}")
    M = T - depth + 1
    H = np.empty((depth * n_c, M))
    for j in range(M):
        H[:, j] = data[j:j + depth].reshape(-1)
    return H


@dataclass(frozen=True)
class HankelBlocks:
    """Past/future partition of the input and output Hankel matrices."""

    U_p: np.ndarray
    U_f: np.ndarray
    Y_p: np.ndarray
    Y_f: np.ndarray
    T_ini: int
    N: int
    n_u: int
    n_y: int

    def __post_init__(self):
        for name in ("U_p", "U_f", "Y_p", "Y_f"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.T_ini < 1 or self.N < 1:
            raise ValueError("T_ini and N must be >= 1")
        expect = {
            "U_p": (self.T_ini * self.n_u, None),
            "U_f": (self.N * self.n_u, None),
            "Y_p": (self.T_ini * self.n_y, None),
            "Y_f": (self.N * self.n_y, None),
        }
        M = self.U_p.shape[1]
        for name, (rows, _) in expect.items():
            mat = getattr(self, name)
            if mat.ndim != 2 or mat.shape[0] != rows:
                raise ValueError(f"{name} must have {rows} rows, got {mat.shape}")
            if mat.shape[1] != M:
                raise ValueError(f"{name} has {mat.shape[1]} columns, expected {M}")
        if M < 1:
            raise ValueError("blocks must have at least one column")

    @property
    def M(self) -> int:
        """Number of columns (data windows)."""
        return self.U_p.shape[1]

    @property
    def L(self) -> int:
        """Window length T_ini + N."""
        return self.T_ini + self.N


def partition_blocks(u: np.ndarray, y: np.ndarray, T_ini: int, N: int) -> HankelBlocks:
    """Build depth-(T_ini+N) Hankel matrices of u and y and split them at T_ini."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if u.shape[0] != y.shape[0]:
        raise ValueError(f"u has {u.shape[0]} samples but y has {y.shape[0]}")
    L = T_ini + N
    H_u = build_hankel(u, L)
    H_y = build_hankel(y, L)
    n_u, n_y = u.shape[1], y.shape[1]
    return HankelBlocks(
        U_p=H_u[:T_ini * n_u], U_f=H_u[T_ini * n_u:],
        Y_p=H_y[:T_ini * n_y], Y_f=H_y[T_ini * n_y:],
        T_ini=T_ini, N=N, n_u=n_u, n_y=n_y,
    )


def trajectory_completion(blocks: HankelBlocks, u_ini: np.ndarray,
                          y_ini: np.ndarray, u_future: np.ndarray) -> np.ndarray:
    """Predict the future outputs consistent with a past window and future inputs.

    Solves [U_p; Y_p; U_f] g = [u_ini; y_ini; u_future] by least squares
    (pseudo-inverse, singular values below 1e-10 of the largest dropped) and
    returns Y_f g as an (N, n_y) array.  Raises if the relative residual of
    the solved system exceeds 1e-6, which signals that the requested window
    is not a trajectory of the recorded system (wrong data, or T_ini shorter
    than the system lag so the past does not pin down the state).
    """
    u_ini = np.asarray(u_ini, dtype=float).reshape(-1)
    y_ini = np.asarray(y_ini, dtype=float).reshape(-1)
    u_future = np.asarray(u_future, dtype=float).reshape(-1)
    if u_ini.size != blocks.T_ini * blocks.n_u:
        raise ValueError(f"u_ini must have {blocks.T_ini * blocks.n_u} entries")
    if y_ini.size != blocks.T_ini * blocks.n_y:
        raise ValueError(f"y_ini must have {blocks.T_ini * blocks.n_y} entries")
    if u_future.size != blocks.N * blocks.n_u:
        raise ValueError(f"u_future must have {blocks.N * blocks.n_u} entries")

    A = np.vstack([blocks.U_p, blocks.Y_p, blocks.U_f])
    b = np.concatenate([u_ini, y_ini, u_future])
    g = np.linalg.pinv(A, rcond=1e-10) @ b
    residual = np.linalg.norm(A @ g - b)
    scale = max(np.linalg.norm(b), 1.0)
    if residual > 1e-6 * scale:
        raise ValueError(
            f"window is not consistent with the data (relative residual "
            f"{residual / scale:.2e}); check the data or increase T_ini")
    return (blocks.Y_f @ g).reshape(blocks.N, blocks.n_y)
