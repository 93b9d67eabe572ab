"""Data-enabled predictive control from raw Hankel blocks.

The controller carries no parametric model.  Each step it solves for a
combination g of recorded trajectory windows whose past portion matches the
live measurement window and whose future portion tracks the reference at
minimum weighted cost:

    min_{g,u,y,s}  sum_k ||y_k - r_k||^2_Q + ||u_k - u_{k-1}||^2_R
                   + lambda_g ||g||^2 + lambda_s ||s||^2
    s.t.  U_p g = u_ini,   Y_p g - s = y_ini,
          U_f g = u,       Y_f g = y,
          u_k, y_k inside their boxes.

Slack s acts on the past-output rows only, absorbing noise in the window;
u_{-1} is the newest input in the window.  The first planned input is applied
and the window shifts by one sample.

Two equivalent build modes exist: the full stacking above, and a condensed
form that eliminates u and y through their defining equalities, leaving
(g, s) with general box rows on U_f g and Y_f g.  Both give the same applied
input to within solver tolerance; the condensed KKT system is smaller.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from ddpc.hankel import HankelBlocks
from ddpc.qp_core import QpProblem, QpSession, QpSolution, QpStatus, SolverOptions

# applied inputs may sit this far outside a bound before clamping is refused
_CLAMP_GUARD = 1e-6


def _bounds_array(bounds, n: int, name: str) -> np.ndarray:
    b = np.asarray(bounds, dtype=float)
    if b.shape != (n, 2):
        raise ValueError(f"{name} must be ({n}, 2) rows of (lo, hi), got {b.shape}")
    if np.any(b[:, 0] > b[:, 1]):
        raise ValueError(f"{name} has lo > hi")
    return b


def _weight_matrix(W, n: int, name: str) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    if W.ndim == 1 and W.shape == (n,):
        W = np.diag(W)
    if W.shape != (n, n):
        raise ValueError(f"{name} must be {n}x{n}, got {W.shape}")
    if not np.allclose(W, W.T, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    if np.min(np.linalg.eigvalsh(W)) < -1e-10:
        raise ValueError(f"{name} must be positive semidefinite")
    return W


@dataclass(frozen=True)
class DeepcConfig:
    """Horizons, weights, regularization, and constraint boxes.

    lambda_sigma None (or 0) removes the slack variables entirely: the past
    output rows are then matched exactly, which only works with noise-free
    data.  enforce_continuity additionally pins the first planned sample to
    the newest window entry; it defaults off because applying the first
    planned input while also pinning it to the previous one would freeze the
    loop.
    """

    T_ini: int
    N: int
    Q: np.ndarray
    R: np.ndarray
    lambda_g: float
    lambda_sigma: Optional[float]
    u_bounds: np.ndarray  # (n_u, 2)
    y_bounds: np.ndarray  # (n_y, 2)
    enforce_continuity: bool = False

    def __post_init__(self):
        if self.T_ini < 1 or self.N < 1:
            raise ValueError("T_ini and N must be >= 1")
        n_y = np.asarray(self.Q).shape[0]
        n_u = np.asarray(self.R).shape[0]
        object.__setattr__(self, "Q", _weight_matrix(self.Q, n_y, "Q"))
        object.__setattr__(self, "R", _weight_matrix(self.R, n_u, "R"))
        object.__setattr__(self, "u_bounds", _bounds_array(self.u_bounds, n_u, "u_bounds"))
        object.__setattr__(self, "y_bounds", _bounds_array(self.y_bounds, n_y, "y_bounds"))
        if self.lambda_g < 0:
            raise ValueError("lambda_g must be >= 0")
        if self.lambda_sigma is not None and self.lambda_sigma < 0:
            raise ValueError("lambda_sigma must be None or >= 0")

    @property
    def n_u(self) -> int:
        return self.R.shape[0]

    @property
    def n_y(self) -> int:
        return self.Q.shape[0]

    @property
    def slack_enabled(self) -> bool:
        return bool(self.lambda_sigma)


class MeasurementWindow:
    """Ring buffer of the last T_ini (input, output) pairs, oldest first."""

    def __init__(self, u_ini: np.ndarray, y_ini: np.ndarray):
        u = np.atleast_2d(np.asarray(u_ini, dtype=float)).copy()
        y = np.atleast_2d(np.asarray(y_ini, dtype=float)).copy()
        if u.shape[0] != y.shape[0]:
            raise ValueError("u_ini and y_ini must hold the same number of samples")
        if u.shape[0] < 1:
            raise ValueError("window needs at least one sample")
        self.u = u
        self.y = y

    @property
    def T_ini(self) -> int:
        return self.u.shape[0]

    @property
    def last_u(self) -> np.ndarray:
        return self.u[-1]

    @property
    def last_y(self) -> np.ndarray:
        return self.y[-1]

    @property
    def u_vec(self) -> np.ndarray:
        """Time-major flattening, matching the Hankel row layout."""
        return self.u.reshape(-1)

    @property
    def y_vec(self) -> np.ndarray:
        return self.y.reshape(-1)

    def push(self, u: np.ndarray, y: np.ndarray) -> None:
        """Drop the oldest pair, append the newest."""
        self.u = np.vstack([self.u[1:], np.asarray(u, dtype=float).reshape(1, -1)])
        self.y = np.vstack([self.y[1:], np.asarray(y, dtype=float).reshape(1, -1)])


def init_window(u: np.ndarray, y: np.ndarray, T_ini: int) -> MeasurementWindow:
    """Window from the trailing T_ini samples of a recorded trajectory."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if u.shape[0] < T_ini or y.shape[0] < T_ini:
        raise ValueError(f"need at least {T_ini} samples, got {min(u.shape[0], y.shape[0])}")
    return MeasurementWindow(u[-T_ini:], y[-T_ini:])


@dataclass
class DeepcSolveRecord:
    """One solved step: the coefficient vector, both plans, and diagnostics."""

    g_star: np.ndarray
    u_plan: np.ndarray  # (N, n_u)
    y_plan: np.ndarray  # (N, n_y)
    sigma_y: np.ndarray
    objective: float
    qp_status: QpStatus
    iterations: int = 0
    solve_time: float = 0.0


def _rate_operator(N: int, n_u: int) -> np.ndarray:
    """Block differencing matrix: (S u)_k = u_k - u_{k-1}, with u_{-1} handled
    separately through the constant term."""
    S = np.eye(N * n_u)
    idx = np.arange((N - 1) * n_u)
    S[idx + n_u, idx] = -1.0
    return S


def build_deepc_qp(blocks: HankelBlocks, window: MeasurementWindow,
                   reference: np.ndarray, config: DeepcConfig,
                   u_prev: Optional[np.ndarray] = None,
                   condensed: bool = False) -> QpProblem:
    """Assemble the tracking QP for one step.

    Decision stacking (full mode): [g, u, y, sigma]; condensed mode keeps
    [g, sigma] and moves the u/y boxes onto U_f g and Y_f g rows.  u_prev
    defaults to the newest input in the window.
    """
    n_u, n_y = config.n_u, config.n_y
    if blocks.n_u != n_u or blocks.n_y != n_y:
        raise ValueError("blocks and config disagree on channel counts")
    if blocks.T_ini != config.T_ini or blocks.N != config.N:
        raise ValueError("blocks and config disagree on horizons")
    if window.T_ini != config.T_ini:
        raise ValueError(f"window holds {window.T_ini} samples, need {config.T_ini}")
    reference = np.asarray(reference, dtype=float)
    if reference.size == 0:
        raise ValueError("reference is empty")
    if reference.shape != (config.N, n_y):
        raise ValueError(f"reference must be ({config.N}, {n_y}), got {reference.shape}")
    if u_prev is None:
        u_prev = window.last_u
    u_prev = np.asarray(u_prev, dtype=float).reshape(n_u)

    M = blocks.M
    N, T_ini = config.N, config.T_ini
    nu_f, ny_f = N * n_u, N * n_y
    n_sig = T_ini * n_y if config.slack_enabled else 0

    Qbar = np.kron(np.eye(N), config.Q)
    Rbar = np.kron(np.eye(N), config.R)
    S = _rate_operator(N, n_u)
    r_vec = reference.reshape(-1)
    b_rate = np.zeros(nu_f)
    b_rate[:n_u] = u_prev  # u_0 - u_prev enters the first block row

    lam_s = float(config.lambda_sigma) if config.slack_enabled else 0.0

    if not condensed:
        n = M + nu_f + ny_f + n_sig
        sl_g = slice(0, M)
        sl_u = slice(M, M + nu_f)
        sl_y = slice(M + nu_f, M + nu_f + ny_f)
        sl_s = slice(M + nu_f + ny_f, n)

        H = np.zeros((n, n))
        H[sl_g, sl_g] = 2.0 * config.lambda_g * np.eye(M)
        H[sl_u, sl_u] = 2.0 * S.T @ Rbar @ S
        H[sl_y, sl_y] = 2.0 * Qbar
        if n_sig:
            H[sl_s, sl_s] = 2.0 * lam_s * np.eye(n_sig)
        H = 0.5 * (H + H.T)
        f = np.zeros(n)
        f[sl_u] = -2.0 * S.T @ Rbar @ b_rate
        f[sl_y] = -2.0 * Qbar @ r_vec

        m_eq = T_ini * n_u + T_ini * n_y + nu_f + ny_f
        rows_cont = (n_u + n_y) if config.enforce_continuity else 0
        A_eq = np.zeros((m_eq + rows_cont, n))
        b_eq = np.zeros(m_eq + rows_cont)
        r0 = 0
        A_eq[r0:r0 + T_ini * n_u, sl_g] = blocks.U_p
        b_eq[r0:r0 + T_ini * n_u] = window.u_vec
        r0 += T_ini * n_u
        A_eq[r0:r0 + T_ini * n_y, sl_g] = blocks.Y_p
        if n_sig:
            A_eq[r0:r0 + T_ini * n_y, sl_s] = -np.eye(n_sig)
        b_eq[r0:r0 + T_ini * n_y] = window.y_vec
        r0 += T_ini * n_y
        A_eq[r0:r0 + nu_f, sl_g] = blocks.U_f
        A_eq[r0:r0 + nu_f, sl_u] = -np.eye(nu_f)
        r0 += nu_f
        A_eq[r0:r0 + ny_f, sl_g] = blocks.Y_f
        A_eq[r0:r0 + ny_f, sl_y] = -np.eye(ny_f)
        r0 += ny_f
        if rows_cont:
            A_eq[r0:r0 + n_u, sl_u][:, :n_u] = np.eye(n_u)
            b_eq[r0:r0 + n_u] = window.last_u
            A_eq[r0 + n_u:r0 + n_u + n_y, sl_y][:, :n_y] = np.eye(n_y)
            b_eq[r0 + n_u:r0 + n_u + n_y] = window.last_y

        A_in = np.zeros((nu_f + ny_f, n))
        A_in[:nu_f, sl_u] = np.eye(nu_f)
        A_in[nu_f:, sl_y] = np.eye(ny_f)
    else:
        n = M + n_sig
        sl_g = slice(0, M)
        sl_s = slice(M, n)

        SU = S @ blocks.U_f
        H = np.zeros((n, n))
        H[sl_g, sl_g] = 2.0 * (blocks.Y_f.T @ Qbar @ blocks.Y_f
                               + SU.T @ Rbar @ SU
                               + config.lambda_g * np.eye(M))
        if n_sig:
            H[sl_s, sl_s] = 2.0 * lam_s * np.eye(n_sig)
        # Gram products leave roundoff asymmetry proportional to |H|
        H = 0.5 * (H + H.T)
        f = np.zeros(n)
        f[sl_g] = -2.0 * (blocks.Y_f.T @ (Qbar @ r_vec) + SU.T @ (Rbar @ b_rate))

        rows_cont = (n_u + n_y) if config.enforce_continuity else 0
        m_eq = T_ini * n_u + T_ini * n_y
        A_eq = np.zeros((m_eq + rows_cont, n))
        b_eq = np.zeros(m_eq + rows_cont)
        A_eq[:T_ini * n_u, sl_g] = blocks.U_p
        b_eq[:T_ini * n_u] = window.u_vec
        A_eq[T_ini * n_u:m_eq, sl_g] = blocks.Y_p
        if n_sig:
            A_eq[T_ini * n_u:m_eq, sl_s] = -np.eye(n_sig)
        b_eq[T_ini * n_u:m_eq] = window.y_vec
        if rows_cont:
            A_eq[m_eq:m_eq + n_u, sl_g] = blocks.U_f[:n_u]
            b_eq[m_eq:m_eq + n_u] = window.last_u
            A_eq[m_eq + n_u:, sl_g] = blocks.Y_f[:n_y]
            b_eq[m_eq + n_u:] = window.last_y

        A_in = np.zeros((nu_f + ny_f, n))
        A_in[:nu_f, sl_g] = blocks.U_f
        A_in[nu_f:, sl_g] = blocks.Y_f

    lb_in = np.concatenate([np.tile(config.u_bounds[:, 0], N),
                            np.tile(config.y_bounds[:, 0], N)])
    ub_in = np.concatenate([np.tile(config.u_bounds[:, 1], N),
                            np.tile(config.y_bounds[:, 1], N)])
    return QpProblem(H=H, f=f, A_eq=A_eq, b_eq=b_eq,
                     A_in=A_in, lb_in=lb_in, ub_in=ub_in)


def _true_objective(config: DeepcConfig, reference: np.ndarray, u_prev: np.ndarray,
                    g: np.ndarray, u_plan: np.ndarray, y_plan: np.ndarray,
                    sigma: np.ndarray) -> float:
    """Evaluate the stated cost at a candidate point (constants included)."""
    err = y_plan - reference
    cost = float(np.einsum("ki,ij,kj->", err, config.Q, err))
    du = np.diff(np.vstack([u_prev[None, :], u_plan]), axis=0)
    cost += float(np.einsum("ki,ij,kj->", du, config.R, du))
    cost += config.lambda_g * float(g @ g)
    if config.slack_enabled:
        cost += config.lambda_sigma * float(sigma @ sigma)
    return cost


class DeepcController:
    """Receding-horizon loop state: Hankel blocks, window, and a warm QP session.

    The constraint matrices never change between steps, so the session
    factors the KKT system once; each step only rewrites the cost vector and
    the window-dependent equality targets.
    """

    def __init__(self, blocks: HankelBlocks, config: DeepcConfig,
                 options: Optional[SolverOptions] = None,
                 condensed: bool = True):
        self.blocks = blocks
        self.config = config
        self.options = options if options is not None else SolverOptions()
        self.condensed = condensed
        self.window: Optional[MeasurementWindow] = None
        self.last_record: Optional[DeepcSolveRecord] = None
        self._session: Optional[QpSession] = None
        self._u_held: Optional[np.ndarray] = None

    def start(self, window: MeasurementWindow) -> None:
        """Install the initial measurement window (trailing T_ini samples)."""
        if window.T_ini != self.config.T_ini:
            raise ValueError(f"window holds {window.T_ini} samples, "
                             f"need {self.config.T_ini}")
        self.window = window
        self._u_held = window.last_u.copy()

    def _ensure_session(self, reference: np.ndarray) -> None:
        """Build the template QP once; cache the per-step vector maps.

        Only f and b_eq vary between steps (through the reference, u_prev,
        and the window), and both are linear in those, so the session keeps
        one factored KKT system for the whole run.
        """
        if self._session is not None:
            return
        cfg = self.config
        template = build_deepc_qp(self.blocks, self.window, reference,
                                  cfg, condensed=self.condensed)
        self._session = QpSession(template, self.options)
        N, n_u = cfg.N, cfg.n_u
        Qbar = np.kron(np.eye(N), cfg.Q)
        Rbar = np.kron(np.eye(N), cfg.R)
        S = _rate_operator(N, n_u)
        if self.condensed:
            SU = S @ self.blocks.U_f
            # f_g = _Fr @ r_vec + _Fu @ u_prev
            self._Fr = -2.0 * self.blocks.Y_f.T @ Qbar
            self._Fu = -2.0 * SU.T @ Rbar[:, :n_u]
        else:
            self._Fr = -2.0 * Qbar
            self._Fu = -2.0 * S.T @ Rbar[:, :n_u]

    def _vectors(self, reference: np.ndarray,
                 u_prev: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        cfg = self.config
        M = self.blocks.M
        N, n_u, n_y, T_ini = cfg.N, cfg.n_u, cfg.n_y, cfg.T_ini
        r_vec = reference.reshape(-1)
        f = np.zeros(self._session.n)
        if self.condensed:
            f[:M] = self._Fr @ r_vec + self._Fu @ u_prev
            b_eq = np.concatenate([self.window.u_vec, self.window.y_vec])
        else:
            f[M:M + N * n_u] = self._Fu @ u_prev
            f[M + N * n_u:M + N * (n_u + n_y)] = self._Fr @ r_vec
            b_eq = np.concatenate([self.window.u_vec, self.window.y_vec,
                                   np.zeros(N * (n_u + n_y))])
        if cfg.enforce_continuity:
            b_eq = np.concatenate([b_eq, self.window.last_u, self.window.last_y])
        return f, b_eq

    def _extract(self, sol: QpSolution, reference: np.ndarray,
                 u_prev: np.ndarray) -> DeepcSolveRecord:
        M = self.blocks.M
        N, n_u, n_y, T_ini = (self.config.N, self.config.n_u,
                              self.config.n_y, self.config.T_ini)
        g = sol.x_star[:M]
        if self.condensed:
            u_plan = (self.blocks.U_f @ g).reshape(N, n_u)
            y_plan = (self.blocks.Y_f @ g).reshape(N, n_y)
            sigma = (sol.x_star[M:] if self.config.slack_enabled
                     else np.zeros(0))
        else:
            o = M
            u_plan = sol.x_star[o:o + N * n_u].reshape(N, n_u)
            o += N * n_u
            y_plan = sol.x_star[o:o + N * n_y].reshape(N, n_y)
            o += N * n_y
            sigma = (sol.x_star[o:o + T_ini * n_y] if self.config.slack_enabled
                     else np.zeros(0))
        objective = _true_objective(self.config, reference, u_prev,
                                    g, u_plan, y_plan, sigma)
        return DeepcSolveRecord(g_star=g, u_plan=u_plan, y_plan=y_plan,
                                sigma_y=sigma, objective=objective,
                                qp_status=sol.status, iterations=sol.iterations,
                                solve_time=sol.solve_time)

    def step(self, y_measured: np.ndarray, reference: np.ndarray) -> np.ndarray:
        """Solve, apply the first planned input, shift the window.

        On solver failure the previously applied input is held for one step
        (visible through last_record.qp_status) and the warm start is
        discarded so the next step starts clean.
        """
        if self.window is None:
            raise RuntimeError("controller not started: call start(window) first")
        y_measured = np.asarray(y_measured, dtype=float).reshape(self.config.n_y)
        reference = np.asarray(reference, dtype=float)
        if reference.shape != (self.config.N, self.config.n_y):
            raise ValueError(f"reference must be ({self.config.N}, {self.config.n_y})")
        u_prev = self.window.last_u.copy()

        self._ensure_session(reference)
        f, b_eq = self._vectors(reference, u_prev)
        sol = self._session.solve(f=f, b_eq=b_eq)
        record = self._extract(sol, reference, u_prev)

        if sol.status is QpStatus.Optimal:
            u_apply = record.u_plan[0]
            lo, hi = self.config.u_bounds[:, 0], self.config.u_bounds[:, 1]
            if np.any(u_apply < lo - _CLAMP_GUARD) or np.any(u_apply > hi + _CLAMP_GUARD):
                raise RuntimeError(
                    f"planned input violates bounds beyond tolerance: {u_apply}")
            u_apply = np.clip(u_apply, lo, hi)
            self._u_held = u_apply.copy()
        else:
            u_apply = self._u_held.copy()
            self._session.reset_state()

        self.last_record = record
        self.window.push(u_apply, y_measured)
        return u_apply


def deepc_step(controller: DeepcController, y_measured: np.ndarray,
               reference: np.ndarray,
               options: Optional[SolverOptions] = None) -> np.ndarray:
    """Single receding-horizon step; options, if given, replace the controller's."""
    if options is not None and options is not controller.options:
        controller.options = options
        controller._session = None
    return controller.step(y_measured, reference)
