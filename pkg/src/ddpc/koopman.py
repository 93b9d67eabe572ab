"""Lifted linear identification, disturbance augmentation, and offset-free MPC.

The model class here is z+ = A_K z + B_K u, y = C_K z, with the lifted state
z built from a time-delay dictionary over measured outputs and inputs.
Identification is plain least-squares EDMD: lift every sample, regress
one-step transitions for [A_K B_K], regress outputs for C_K.

For offset-free control the model is augmented with a constant output
disturbance d (one per measured channel):

    [z+; d+] = [[A_K, 0], [0, I]] [z; d] + [[B_K], [0]] u,   y = C_K z + d.

A Kalman filter on the augmented state supplies (z_hat, d_hat) each step; the
MPC prediction holds d_hat constant over the horizon, which shifts the model
so integral-action-like offset rejection falls out of the estimator.  Costs,
horizon, and boxes are shared with the companion data-driven controller so
closed-loop differences come from the predictive representation alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from ddpc.dataio import TrajectoryDataset
from ddpc.deepc import DeepcConfig, _rate_operator
from ddpc.qp_core import QpProblem, QpSession, QpSolution, QpStatus, SolverOptions

_CLAMP_GUARD = 1e-6


@dataclass(frozen=True)
class LiftSpec:
    """Time-delay dictionary: z_t = [y_t, y_{t-1}..y_{t-dy}, u_{t-1}..u_{t-du}]."""

    n_u: int
    n_y: int
    delays_y: int = 0
    delays_u: int = 0

    def __post_init__(self):
        if self.n_u < 1 or self.n_y < 1:
            raise ValueError("n_u and n_y must be >= 1")
        if self.delays_y < 0 or self.delays_u < 0:
            raise ValueError("delay counts must be >= 0")

    @property
    def n_z(self) -> int:
        return (1 + self.delays_y) * self.n_y + self.delays_u * self.n_u

    @property
    def history(self) -> int:
        """Oldest sample offset the dictionary reaches back to."""
        return max(self.delays_y, self.delays_u)

    def lift_trajectory(self, u: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Lift every sample with full history available.

        Returns (Z, t0): Z[i] is the lifted state at time t0+i, for
        t0 = history up to the final sample.
        """
        u = np.atleast_2d(np.asarray(u, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        T = y.shape[0]
        t0 = self.history
        if T <= t0:
            raise ValueError(f"need more than {t0} samples to lift, got {T}")
        cols = [y[t0:T]]
        for d in range(1, self.delays_y + 1):
            cols.append(y[t0 - d:T - d])
        for d in range(1, self.delays_u + 1):
            cols.append(u[t0 - d:T - d])
        return np.hstack(cols), t0

    @staticmethod
    def default_for(n_z: int, n_u: int, n_y: int) -> "LiftSpec":
        """Equal output/input delay depth that exactly fills n_z states."""
        if n_z == n_y:
            return LiftSpec(n_u=n_u, n_y=n_y)
        d, rem = divmod(n_z - n_y, n_y + n_u)
        if rem or d < 0:
            raise ValueError(
                f"no delay dictionary with {n_z} states for n_u={n_u}, "
                f"n_y={n_y}; nearest feasible sizes are "
                f"{n_y + max(d, 0) * (n_y + n_u)} and {n_y + (max(d, 0) + 1) * (n_y + n_u)}")
        return LiftSpec(n_u=n_u, n_y=n_y, delays_y=d, delays_u=d)


@dataclass(frozen=True)
class KoopmanModel:
    """Identified lifted linear model with its dictionary descriptor."""

    A_K: np.ndarray
    B_K: np.ndarray
    C_K: np.ndarray
    lift: LiftSpec
    residual: float = 0.0  # relative one-step training error

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A_K, dtype=float))
        B = np.atleast_2d(np.asarray(self.B_K, dtype=float))
        C = np.atleast_2d(np.asarray(self.C_K, dtype=float))
        n_z = self.lift.n_z
        if A.shape != (n_z, n_z):
            raise ValueError(f"A_K must be {n_z}x{n_z}, got {A.shape}")
        if B.shape != (n_z, self.lift.n_u):
            raise ValueError(f"B_K must be {n_z}x{self.lift.n_u}, got {B.shape}")
        if C.shape != (self.lift.n_y, n_z):
            raise ValueError(f"C_K must be {self.lift.n_y}x{n_z}, got {C.shape}")
        object.__setattr__(self, "A_K", A)
        object.__setattr__(self, "B_K", B)
        object.__setattr__(self, "C_K", C)

    @property
    def n_z(self) -> int:
        return self.A_K.shape[0]

    @property
    def n_u(self) -> int:
        return self.B_K.shape[1]

    @property
    def n_y(self) -> int:
        return self.C_K.shape[0]


def identify_edmd(dataset: TrajectoryDataset, n_z: int,
                  dictionary: Optional[LiftSpec] = None) -> KoopmanModel:
    """Least-squares fit of (A_K, B_K, C_K) from one-step transitions.

    The dictionary defaults to the delay lifting that fills n_z states.
    Raises when the lifted regressor matrix is rank deficient, which means
    the excitation cannot support this many lifted states.
    """
    if dictionary is None:
        dictionary = LiftSpec.default_for(n_z, dataset.n_u, dataset.n_y)
    if dictionary.n_z != n_z:
        raise ValueError(f"dictionary builds {dictionary.n_z} states, asked for {n_z}")
    if dataset.T < n_z + 10:
        raise ValueError(f"need at least {n_z + 10} samples, got {dataset.T}")

    Z, t0 = dictionary.lift_trajectory(dataset.u, dataset.y)
    # transitions: state at t0+i paired with input at the same time
    Z0 = Z[:-1]
    Z1 = Z[1:]
    U0 = dataset.u[t0:t0 + Z0.shape[0]]
    G = np.hstack([Z0, U0])  # (T_eff, n_z + n_u)

    sv = np.linalg.svd(G, compute_uv=False)
    if sv.size < n_z + dataset.n_u or sv[-1] <= 1e-10 * sv[0]:
        raise ValueError(
            "lifted regression is rank deficient; use richer excitation or a "
            f"smaller lifted dimension (singular value ratio {sv[-1] / sv[0]:.1e})")

    AB, *_ = np.linalg.lstsq(G, Z1, rcond=None)
    A_K = AB[:n_z].T
    B_K = AB[n_z:].T
    Y0 = dataset.y[t0:t0 + Z.shape[0]]
    C_K = np.linalg.lstsq(Z, Y0, rcond=None)[0].T

    pred = Z0 @ A_K.T + U0 @ B_K.T
    residual = float(np.linalg.norm(Z1 - pred) / max(np.linalg.norm(Z1), 1e-300))
    return KoopmanModel(A_K=A_K, B_K=B_K, C_K=C_K, lift=dictionary,
                        residual=residual)


@dataclass(frozen=True)
class AugmentedModel:
    """Constant-output-disturbance augmentation of a lifted model."""

    base: KoopmanModel
    A_bar: np.ndarray
    B_bar: np.ndarray
    C_bar: np.ndarray

    @property
    def n_d(self) -> int:
        return self.base.n_y

    @property
    def n_xi(self) -> int:
        return self.base.n_z + self.n_d


def augment_model(model: KoopmanModel) -> AugmentedModel:
    """Block assembly: identity disturbance state feeding the output map."""
    n_z, n_u, n_d = model.n_z, model.n_u, model.n_y
    A_bar = np.zeros((n_z + n_d, n_z + n_d))
    A_bar[:n_z, :n_z] = model.A_K
    A_bar[n_z:, n_z:] = np.eye(n_d)
    B_bar = np.vstack([model.B_K, np.zeros((n_d, n_u))])
    C_bar = np.hstack([model.C_K, np.eye(n_d)])
    return AugmentedModel(base=model, A_bar=A_bar, B_bar=B_bar, C_bar=C_bar)


@dataclass
class KalmanState:
    """Augmented estimate, covariance, and the (fixed) noise covariances."""

    xi_hat: np.ndarray
    P: np.ndarray
    Q_KF: np.ndarray
    R_KF: np.ndarray

    def validate(self) -> None:
        if not np.allclose(self.P, self.P.T, atol=1e-10):
            raise ValueError("covariance lost symmetry")
        if np.min(np.linalg.eigvalsh(self.P)) < -1e-9:
            raise ValueError("covariance lost positive semidefiniteness")

    @property
    def n_xi(self) -> int:
        return self.xi_hat.shape[0]


def kalman_init(model: AugmentedModel, y0: np.ndarray,
                Q_KF: Optional[np.ndarray] = None,
                R_KF: Optional[np.ndarray] = None,
                P0: Optional[np.ndarray] = None,
                q_z: float = 0.1, q_d: float = 1.0,
                r_y: float = 0.5) -> KalmanState:
    """Start the filter from the first measurement.

    The lifted part is seeded by the pseudoinverse of the output map,
    C_K^+ y0, the disturbance estimate starts at zero.  Covariance defaults:
    Q_KF = blkdiag(q_z I_nz, q_d I_nd), R_KF = r_y I_ny, P0 = I.
    """
    n_z, n_d = model.base.n_z, model.n_d
    y0 = np.asarray(y0, dtype=float).reshape(model.base.n_y)
    z0 = np.linalg.pinv(model.base.C_K) @ y0
    xi = np.concatenate([z0, np.zeros(n_d)])
    n_xi = n_z + n_d
    if Q_KF is None:
        Q_KF = np.diag(np.concatenate([np.full(n_z, q_z), np.full(n_d, q_d)]))
    if R_KF is None:
        R_KF = r_y * np.eye(model.base.n_y)
    if P0 is None:
        P0 = np.eye(n_xi)
    Q_KF = np.asarray(Q_KF, dtype=float)
    R_KF = np.asarray(R_KF, dtype=float)
    P0 = np.asarray(P0, dtype=float)
    if Q_KF.shape != (n_xi, n_xi) or P0.shape != (n_xi, n_xi):
        raise ValueError("Q_KF and P0 must match the augmented dimension")
    if R_KF.shape != (model.base.n_y, model.base.n_y):
        raise ValueError("R_KF must be n_y x n_y")
    return KalmanState(xi_hat=xi, P=P0.copy(), Q_KF=Q_KF, R_KF=R_KF)


def kalman_step(state: KalmanState, model: AugmentedModel,
                u_applied: np.ndarray, y_measured: np.ndarray) -> KalmanState:
    """Predict with (A_bar, B_bar, Q_KF), update with (C_bar, R_KF).

    Joseph-form covariance update keeps P symmetric PSD under roundoff.
    """
    u = np.asarray(u_applied, dtype=float).reshape(model.base.n_u)
    y = np.asarray(y_measured, dtype=float).reshape(model.base.n_y)
    A, B, C = model.A_bar, model.B_bar, model.C_bar

    xi_pred = A @ state.xi_hat + B @ u
    P_pred = A @ state.P @ A.T + state.Q_KF

    S = C @ P_pred @ C.T + state.R_KF
    try:
        # cholesky doubles as the singularity check: S must be PD
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            "innovation covariance is singular; R_KF is inconsistent with "
            "the model") from exc
    # K = P_pred C^T S^{-1} via two triangular solves
    CT_rows = np.linalg.solve(L, C @ P_pred)
    K = np.linalg.solve(L.T, CT_rows).T

    innovation = y - C @ xi_pred
    xi_new = xi_pred + K @ innovation
    IKC = np.eye(state.n_xi) - K @ C
    P_new = IKC @ P_pred @ IKC.T + K @ state.R_KF @ K.T
    P_new = 0.5 * (P_new + P_new.T)
    return KalmanState(xi_hat=xi_new, P=P_new, Q_KF=state.Q_KF, R_KF=state.R_KF)


def build_kmpc_qp(model: KoopmanModel, z_hat: np.ndarray, d_hat: np.ndarray,
                  reference: np.ndarray, config: DeepcConfig,
                  u_prev: np.ndarray) -> QpProblem:
    """Assemble the lifted-model tracking QP for one step.

    Decision stacking: [u_0..u_{N-1}, z_0..z_{N-1}, y_0..y_{N-1}].
    Equalities: z_0 pinned to the estimate, the lifted dynamics for the
    remaining steps, and y_k = C_K z_k + d_hat with the disturbance estimate
    held constant over the horizon.  Costs, horizon, and boxes come from the
    same shared config as the companion controller.
    """
    n_u, n_y, n_z = model.n_u, model.n_y, model.n_z
    if config.n_u != n_u or config.n_y != n_y:
        raise ValueError("model and config disagree on channel counts")
    N = config.N
    reference = np.asarray(reference, dtype=float)
    if reference.size == 0:
        raise ValueError("reference is empty")
    if reference.shape != (N, n_y):
        raise ValueError(f"reference must be ({N}, {n_y}), got {reference.shape}")
    z_hat = np.asarray(z_hat, dtype=float).reshape(n_z)
    d_hat = np.asarray(d_hat, dtype=float).reshape(n_y)
    u_prev = np.asarray(u_prev, dtype=float).reshape(n_u)

    nu_f, nz_f, ny_f = N * n_u, N * n_z, N * n_y
    n = nu_f + nz_f + ny_f
    sl_u = slice(0, nu_f)
    sl_z = slice(nu_f, nu_f + nz_f)
    sl_y = slice(nu_f + nz_f, n)

    Qbar = np.kron(np.eye(N), config.Q)
    Rbar = np.kron(np.eye(N), config.R)
    S = _rate_operator(N, n_u)
    b_rate = np.zeros(nu_f)
    b_rate[:n_u] = u_prev

    H = np.zeros((n, n))
    H[sl_u, sl_u] = 2.0 * S.T @ Rbar @ S
    H[sl_y, sl_y] = 2.0 * Qbar
    H = 0.5 * (H + H.T)
    f = np.zeros(n)
    f[sl_u] = -2.0 * S.T @ Rbar @ b_rate
    f[sl_y] = -2.0 * Qbar @ reference.reshape(-1)

    m_eq = n_z + (N - 1) * n_z + ny_f
    A_eq = np.zeros((m_eq, n))
    b_eq = np.zeros(m_eq)
    A_eq[:n_z, sl_z][:, :n_z] = np.eye(n_z)
    b_eq[:n_z] = z_hat
    for k in range(N - 1):
        r0 = n_z + k * n_z
        A_eq[r0:r0 + n_z, nu_f + (k + 1) * n_z:nu_f + (k + 2) * n_z] = np.eye(n_z)
        A_eq[r0:r0 + n_z, nu_f + k * n_z:nu_f + (k + 1) * n_z] = -model.A_K
        A_eq[r0:r0 + n_z, k * n_u:(k + 1) * n_u] = -model.B_K
    r0 = N * n_z
    for k in range(N):
        rows = slice(r0 + k * n_y, r0 + (k + 1) * n_y)
        A_eq[rows, nu_f + nz_f + k * n_y:nu_f + nz_f + (k + 1) * n_y] = np.eye(n_y)
        A_eq[rows, nu_f + k * n_z:nu_f + (k + 1) * n_z] = -model.C_K
        b_eq[rows] = d_hat

    A_in = np.zeros((nu_f + ny_f, n))
    A_in[:nu_f, sl_u] = np.eye(nu_f)
    A_in[nu_f:, sl_y] = np.eye(ny_f)
    lb_in = np.concatenate([np.tile(config.u_bounds[:, 0], N),
                            np.tile(config.y_bounds[:, 0], N)])
    ub_in = np.concatenate([np.tile(config.u_bounds[:, 1], N),
                            np.tile(config.y_bounds[:, 1], N)])
    return QpProblem(H=H, f=f, A_eq=A_eq, b_eq=b_eq,
                     A_in=A_in, lb_in=lb_in, ub_in=ub_in)


@dataclass
class KmpcSolveRecord:
    """One solved step: plans, estimates in effect, and diagnostics."""

    u_plan: np.ndarray
    y_plan: np.ndarray
    z_plan: np.ndarray
    d_hat: np.ndarray
    objective: float
    qp_status: QpStatus
    iterations: int = 0
    solve_time: float = 0.0


class KmpcController:
    """Receding-horizon loop state: filter plus a warm QP session.

    The first step initializes the filter from the first measurement; every
    later step first corrects the estimate with (last applied input, new
    measurement), then solves.  Constraint matrices are fixed for a run, so
    the factored KKT system is reused throughout.
    """

    def __init__(self, model: KoopmanModel, config: DeepcConfig,
                 options: Optional[SolverOptions] = None,
                 Q_KF: Optional[np.ndarray] = None,
                 R_KF: Optional[np.ndarray] = None,
                 P0: Optional[np.ndarray] = None):
        if config.n_u != model.n_u or config.n_y != model.n_y:
            raise ValueError("model and config disagree on channel counts")
        self.model = model
        self.aug = augment_model(model)
        self.config = config
        self.options = options if options is not None else SolverOptions()
        self._kf_overrides = (Q_KF, R_KF, P0)
        self.filter: Optional[KalmanState] = None
        self.last_record: Optional[KmpcSolveRecord] = None
        self._session: Optional[QpSession] = None
        self._u_held: Optional[np.ndarray] = None

    def start(self, u_initial: np.ndarray) -> None:
        """Set the input considered previously applied before the first step."""
        self._u_held = np.asarray(u_initial, dtype=float).reshape(self.config.n_u).copy()

    def _ensure_session(self, z_hat, d_hat, reference, u_prev) -> None:
        if self._session is not None:
            return
        template = build_kmpc_qp(self.model, z_hat, d_hat, reference,
                                 self.config, u_prev)
        self._session = QpSession(template, self.options)
        N, n_u = self.config.N, self.config.n_u
        Rbar = np.kron(np.eye(N), self.config.R)
        S = _rate_operator(N, n_u)
        self._Fu = -2.0 * S.T @ Rbar[:, :n_u]
        self._Fr = -2.0 * np.kron(np.eye(N), self.config.Q)

    def _vectors(self, z_hat, d_hat, reference, u_prev) -> Tuple[np.ndarray, np.ndarray]:
        cfg = self.config
        N, n_u, n_y, n_z = cfg.N, cfg.n_u, cfg.n_y, self.model.n_z
        f = np.zeros(self._session.n)
        f[:N * n_u] = self._Fu @ u_prev
        f[N * (n_u + n_z):] = self._Fr @ reference.reshape(-1)
        b_eq = np.zeros(self._session.m_eq)
        b_eq[:n_z] = z_hat
        b_eq[N * n_z:] = np.tile(d_hat, N)
        return f, b_eq

    def step(self, y_measured: np.ndarray, reference: np.ndarray) -> np.ndarray:
        """Filter update, solve, apply the first planned input."""
        if self._u_held is None:
            raise RuntimeError("controller not started: call start(u_initial) first")
        cfg = self.config
        y_measured = np.asarray(y_measured, dtype=float).reshape(cfg.n_y)
        reference = np.asarray(reference, dtype=float)
        if reference.shape != (cfg.N, cfg.n_y):
            raise ValueError(f"reference must be ({cfg.N}, {cfg.n_y})")

        if self.filter is None:
            Q_KF, R_KF, P0 = self._kf_overrides
            self.filter = kalman_init(self.aug, y_measured,
                                      Q_KF=Q_KF, R_KF=R_KF, P0=P0)
        else:
            self.filter = kalman_step(self.filter, self.aug,
                                      self._u_held, y_measured)
        n_z = self.model.n_z
        z_hat = self.filter.xi_hat[:n_z]
        d_hat = self.filter.xi_hat[n_z:]
        u_prev = self._u_held

        self._ensure_session(z_hat, d_hat, reference, u_prev)
        f, b_eq = self._vectors(z_hat, d_hat, reference, u_prev)
        sol = self._session.solve(f=f, b_eq=b_eq)

        N, n_u, n_y = cfg.N, cfg.n_u, cfg.n_y
        u_plan = sol.x_star[:N * n_u].reshape(N, n_u)
        z_plan = sol.x_star[N * n_u:N * (n_u + n_z)].reshape(N, n_z)
        y_plan = sol.x_star[N * (n_u + n_z):].reshape(N, n_y)
        err = y_plan - reference
        du = np.diff(np.vstack([u_prev[None, :], u_plan]), axis=0)
        objective = (float(np.einsum("ki,ij,kj->", err, cfg.Q, err))
                     + float(np.einsum("ki,ij,kj->", du, cfg.R, du)))
        record = KmpcSolveRecord(u_plan=u_plan, y_plan=y_plan, z_plan=z_plan,
                                 d_hat=d_hat.copy(), objective=objective,
                                 qp_status=sol.status, iterations=sol.iterations,
                                 solve_time=sol.solve_time)

        if sol.status is QpStatus.Optimal:
            u_apply = u_plan[0]
            lo, hi = cfg.u_bounds[:, 0], cfg.u_bounds[:, 1]
            if np.any(u_apply < lo - _CLAMP_GUARD) or np.any(u_apply > hi + _CLAMP_GUARD):
                raise RuntimeError(
                    f"planned input violates bounds beyond tolerance: {u_apply}")
            u_apply = np.clip(u_apply, lo, hi)
        else:
            u_apply = self._u_held.copy()
            self._session.reset_state()

        self.last_record = record
        self._u_held = u_apply.copy()
        return u_apply


def kmpc_step(controller: KmpcController, y_measured: np.ndarray,
              reference: np.ndarray,
              options: Optional[SolverOptions] = None) -> np.ndarray:
    """Single receding-horizon step; options, if given, replace the controller's."""
    if options is not None and options is not controller.options:
        controller.options = options
        controller._session = None
    return controller.step(y_measured, reference)


def save_model(model: KoopmanModel, path) -> None:
    """Write the identified model as JSON (matrices row-major with dimensions)."""
    payload = {
        "n_z": model.n_z, "n_u": model.n_u, "n_y": model.n_y,
        "delays_y": model.lift.delays_y, "delays_u": model.lift.delays_u,
        "residual": model.residual,
        "A_K": model.A_K.tolist(),
        "B_K": model.B_K.tolist(),
        "C_K": model.C_K.tolist(),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=1))


def load_model(path) -> KoopmanModel:
    payload = json.loads(Path(path).read_text())
    lift = LiftSpec(n_u=payload["n_u"], n_y=payload["n_y"],
                    delays_y=payload["delays_y"], delays_u=payload["delays_u"])
    if lift.n_z != payload["n_z"]:
        raise ValueError(f"{path}: dimensions inconsistent with dictionary")
    return KoopmanModel(A_K=np.asarray(payload["A_K"], dtype=float),
                        B_K=np.asarray(payload["B_K"], dtype=float),
                        C_K=np.asarray(payload["C_K"], dtype=float),
                        lift=lift, residual=float(payload["residual"]))
