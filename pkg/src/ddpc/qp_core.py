"""Canonical convex QP, an embedded operator-splitting solver, and a test oracle.

The problem class is

    minimize    0.5 x'Hx + f'x
    subject to  A_eq x = b_eq
                lb_in <= A_in x <= ub_in      (entries of lb/ub may be +-inf)

with H symmetric positive semidefinite.  The solver is a dense ADMM scheme in
the style of operator-splitting QP solvers: equalities and two-sided
inequalities are stacked into one constraint matrix with per-row step sizes,
the regularized KKT system is LU-factored once and only back-substitutions
run in the iteration loop (see :mod:`ddpc.kernels`), Ruiz equilibration
conditions the data, and an active-set polish plus a final KKT verification
pass certify every ``Optimal`` return.

:class:`QpSession` is the workhorse for receding-horizon use: matrices,
scaling, and the KKT factorization are built once, and each call to
``solve`` swaps in new cost/bound vectors and warm starts from the previous
solution.  :func:`solve_qp` is the one-shot convenience wrapper.

Conventions:

* ``QpSolution.dual_in`` holds nonnegative multiplier magnitudes (the usual
  KKT multiplier of whichever bound is active); ``dual_in_signed`` keeps the
  signed form (positive at an upper bound, negative at a lower bound) used
  for warm starts and residual evaluation.
* Unbounded problems (dual-infeasibility certificate found) are reported as
  ``Infeasible``; the status enum is deliberately small.
* All internal triggers (residual checks, step-size adaptation) fire on
  iteration counts, never on wall time, so solutions are reproducible
  bit-for-bit whenever the time limit does not interrupt the solve.
"""

from __future__ import annotations

import functools
import itertools
import time
from collections import OrderedDict
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from ddpc.kernels import admm_chunk, admm_chunk_factored

_SIGMA = 1e-6          # primal regularization of the KKT matrix
_ALPHA = 1.6           # over-relaxation
_RHO0 = 0.1            # base step size
_RHO_EQ_SCALE = 1e3    # step-size boost on equality rows
_RHO_MIN, _RHO_MAX = 1e-6, 1e6
_RUIZ_ITERS = 10
_CHUNK = 25            # iterations between convergence checks
_ADAPT_EVERY = 100     # iterations between step-size adaptations
_EPS_INF = 1e-8        # infeasibility certificate tolerance
_POLISH_DELTA = 1e-9   # polish regularization
_POLISH_CACHE_MAX = 8  # factored active-set systems kept per session
_MIN_SCALING, _MAX_SCALING = 1e-4, 1e4


class QpStatus(Enum):
    Optimal = "Optimal"
    MaxIter = "MaxIter"
    TimeLimit = "TimeLimit"
    Infeasible = "Infeasible"


def _as_matrix(M, name: str) -> np.ndarray:
    A = np.asarray(M, dtype=float)
    if A.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {A.shape}")
    return A


def _as_vector(v, name: str) -> np.ndarray:
    a = np.asarray(v, dtype=float)
    if a.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class QpProblem:
    """Immutable QP data; see the module docstring for the problem form."""

    H: np.ndarray
    f: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    A_in: np.ndarray
    lb_in: np.ndarray
    ub_in: np.ndarray

    def __post_init__(self):
        H = _as_matrix(self.H, "H")
        f = _as_vector(self.f, "f")
        n = f.shape[0]
        if H.shape != (n, n):
            raise ValueError(f"H shape {H.shape} inconsistent with f length {n}")
        A_eq = _as_matrix(self.A_eq, "A_eq") if np.size(self.A_eq) else np.zeros((0, n))
        b_eq = _as_vector(self.b_eq, "b_eq") if np.size(self.b_eq) else np.zeros(0)
        A_in = _as_matrix(self.A_in, "A_in") if np.size(self.A_in) else np.zeros((0, n))
        lb = _as_vector(self.lb_in, "lb_in") if np.size(self.lb_in) else np.zeros(0)
        ub = _as_vector(self.ub_in, "ub_in") if np.size(self.ub_in) else np.zeros(0)
        if A_eq.shape[1] != n or A_in.shape[1] != n:
            raise ValueError("constraint matrices inconsistent with n")
        if A_eq.shape[0] != b_eq.shape[0]:
            raise ValueError("A_eq/b_eq row mismatch")
        if not (A_in.shape[0] == lb.shape[0] == ub.shape[0]):
            raise ValueError("A_in/lb_in/ub_in row mismatch")
        for name, val in (("H", H), ("f", f), ("A_eq", A_eq), ("b_eq", b_eq), ("A_in", A_in)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "lb_in", lb)
        object.__setattr__(self, "ub_in", ub)
        self.validate()

    @property
    def n(self) -> int:
        return self.f.shape[0]

    @property
    def m_eq(self) -> int:
        return self.A_eq.shape[0]

    @property
    def m_in(self) -> int:
        return self.A_in.shape[0]

    def validate(self, check_psd: bool = False) -> None:
        """Cheap structural checks; pass check_psd=True for the O(n^3) eigen test."""
        sym_err = float(np.max(np.abs(self.H - self.H.T))) if self.n else 0.0
        # relative to the entry scale: Gram-product assembly leaves roundoff
        # asymmetry proportional to |H|
        h_scale = float(np.max(np.abs(self.H))) if self.n else 0.0
        if sym_err > 1e-9 * (1.0 + h_scale):
            raise ValueError(f"H not symmetric: max asymmetry {sym_err:.3e}")
        if np.any(self.lb_in > self.ub_in):
            raise ValueError("lb_in > ub_in on some row")
        for name in ("H", "f", "A_eq", "b_eq", "A_in"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite entries")
        if np.any(np.isnan(self.lb_in)) or np.any(np.isnan(self.ub_in)):
            raise ValueError("inequality bounds contain NaN")
        if check_psd and self.n:
            lam_min = float(np.linalg.eigvalsh(0.5 * (self.H + self.H.T))[0])
            if lam_min < -1e-8:
                raise ValueError(f"H not PSD: min eigenvalue {lam_min:.3e}")


@dataclass
class QpSolution:
    x_star: np.ndarray
    dual_eq: np.ndarray
    dual_in: np.ndarray
    objective: float
    status: QpStatus
    iterations: int
    solve_time: float
    # signed inequality multipliers (positive at upper, negative at lower);
    # kept for warm starting and residual checks
    dual_in_signed: Optional[np.ndarray] = None


@dataclass
class SolverOptions:
    abs_tol: float = 1e-8
    rel_tol: float = 1e-8
    max_iterations: int = 10000
    time_limit: float = 10.0
    warm_start: Optional[QpSolution] = None

    def __post_init__(self):
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ValueError("tolerances must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.time_limit <= 0:
            raise ValueError("time_limit must be > 0")


@dataclass(frozen=True)
class KktResiduals:
    stationarity: float
    primal_eq: float
    primal_in: float
    complementarity: float

    def max(self) -> float:
        return max(self.stationarity, self.primal_eq, self.primal_in, self.complementarity)


def _signed_duals(problem: QpProblem, solution: QpSolution) -> np.ndarray:
    """Signed inequality multipliers; reconstructed from magnitudes if needed."""
    if solution.dual_in_signed is not None:
        return np.asarray(solution.dual_in_signed, dtype=float)
    lam = np.asarray(solution.dual_in, dtype=float)
    if problem.m_in == 0:
        return lam
    ax = problem.A_in @ np.asarray(solution.x_star, dtype=float)
    # attribute each multiplier to the nearer bound
    lo_gap = np.where(np.isfinite(problem.lb_in), np.abs(ax - problem.lb_in), np.inf)
    up_gap = np.where(np.isfinite(problem.ub_in), np.abs(ax - problem.ub_in), np.inf)
    sign = np.where(lo_gap <= up_gap, -1.0, 1.0)
    return sign * np.abs(lam)


def _kkt_scale(problem: QpProblem, x, nu, lam) -> float:
    """Natural magnitude of the KKT system at (x, nu, lam).

    Residual tests relative to this keep "certified" meaningful on problems
    whose data spans orders of magnitude; an absolute test alone would demand
    precision beyond double arithmetic once entries reach ~1e6.
    """
    vals = [1.0,
            float(np.max(np.abs(problem.H @ x), initial=0.0)),
            float(np.max(np.abs(problem.f), initial=0.0))]
    if problem.m_eq:
        vals.append(float(np.max(np.abs(problem.A_eq.T @ nu), initial=0.0)))
        vals.append(float(np.max(np.abs(problem.A_eq @ x), initial=0.0)))
        vals.append(float(np.max(np.abs(problem.b_eq), initial=0.0)))
    if problem.m_in:
        vals.append(float(np.max(np.abs(problem.A_in.T @ lam), initial=0.0)))
        vals.append(float(np.max(np.abs(problem.A_in @ x), initial=0.0)))
        finite = np.concatenate([problem.lb_in[np.isfinite(problem.lb_in)],
                                 problem.ub_in[np.isfinite(problem.ub_in)]])
        if finite.size:
            vals.append(float(np.max(np.abs(finite))))
    return max(vals)


def kkt_residuals(problem: QpProblem, solution: QpSolution) -> KktResiduals:
    """Max-norm violations of stationarity, primal feasibility, complementarity.

    A strictly positive multiplier on a row whose claimed bound is infinite is
    itself a dual defect; its magnitude enters the complementarity residual
    directly (there is no finite gap to multiply by).
    """
    x = np.asarray(solution.x_star, dtype=float)
    if x.shape[0] != problem.n:
        raise ValueError("solution length inconsistent with problem")
    nu = np.asarray(solution.dual_eq, dtype=float)
    if nu.shape[0] != problem.m_eq:
        raise ValueError("dual_eq length inconsistent with problem")
    lam = _signed_duals(problem, solution)
    if lam.shape[0] != problem.m_in:
        raise ValueError("dual_in length inconsistent with problem")

    grad = problem.H @ x + problem.f
    if problem.m_eq:
        grad = grad + problem.A_eq.T @ nu
    if problem.m_in:
        grad = grad + problem.A_in.T @ lam
    stationarity = float(np.max(np.abs(grad))) if problem.n else 0.0

    primal_eq = float(np.max(np.abs(problem.A_eq @ x - problem.b_eq))) if problem.m_eq else 0.0

    if problem.m_in:
        ax = problem.A_in @ x
        lo_viol = np.where(np.isfinite(problem.lb_in), problem.lb_in - ax, -np.inf)
        up_viol = np.where(np.isfinite(problem.ub_in), ax - problem.ub_in, -np.inf)
        primal_in = float(max(0.0, np.max(lo_viol), np.max(up_viol)))
        lam_pos = np.maximum(lam, 0.0)
        lam_neg = np.maximum(-lam, 0.0)
        up_gap = np.where(np.isfinite(problem.ub_in), np.abs(ax - problem.ub_in), 1.0)
        lo_gap = np.where(np.isfinite(problem.lb_in), np.abs(ax - problem.lb_in), 1.0)
        complementarity = float(np.max(lam_pos * up_gap + lam_neg * lo_gap))
    else:
        primal_in = 0.0
        complementarity = 0.0

    return KktResiduals(stationarity, primal_eq, primal_in, complementarity)


def _objective(problem: QpProblem, x: np.ndarray) -> float:
    return float(0.5 * x @ problem.H @ x + problem.f @ x)


def _problem_with_vectors(template: QpProblem, f, b_eq, lb_in, ub_in) -> QpProblem:
    """Clone a validated problem with new vectors, skipping matrix revalidation.

    The matrices are shared with the template (already validated once); only
    the cheap O(n+m) vector checks run here.  This keeps per-step overhead in
    receding-horizon loops independent of matrix size.
    """
    if not np.all(np.isfinite(f)) or not np.all(np.isfinite(b_eq)):
        raise ValueError("f and b_eq must be finite")
    if np.any(np.isnan(lb_in)) or np.any(np.isnan(ub_in)):
        raise ValueError("inequality bounds contain NaN")
    if np.any(lb_in > ub_in):
        raise ValueError("lb_in > ub_in on some row")
    p = object.__new__(QpProblem)
    object.__setattr__(p, "H", template.H)
    object.__setattr__(p, "f", f)
    object.__setattr__(p, "A_eq", template.A_eq)
    object.__setattr__(p, "b_eq", b_eq)
    object.__setattr__(p, "A_in", template.A_in)
    object.__setattr__(p, "lb_in", lb_in)
    object.__setattr__(p, "ub_in", ub_in)
    return p


def _ruiz(P, q, A, l, u):
    """Modified Ruiz equilibration; returns scaled data plus (D, E, c)."""
    n = q.shape[0]
    m = A.shape[0]
    P = P.copy(); q = q.copy(); A = A.copy(); l = l.copy(); u = u.copy()
    D = np.ones(n)
    E = np.ones(m)
    c = 1.0
    for _ in range(_RUIZ_ITERS):
        col_norm_P = np.max(np.abs(P), axis=0)
        col_norm_A = np.max(np.abs(A), axis=0) if m else np.zeros(n)
        cn = np.maximum(col_norm_P, col_norm_A)
        cn[cn == 0.0] = 1.0
        d = 1.0 / np.sqrt(cn)
        np.clip(d, _MIN_SCALING, _MAX_SCALING, out=d)
        if m:
            rn = np.max(np.abs(A), axis=1)
            rn[rn == 0.0] = 1.0
            e = 1.0 / np.sqrt(rn)
            np.clip(e, _MIN_SCALING, _MAX_SCALING, out=e)
            A *= e[:, None]
            A *= d[None, :]
            l *= e
            u *= e
            E *= e
        P *= d[None, :] * d[:, None]
        q *= d
        D *= d
        col_P = np.max(np.abs(P), axis=0)
        denom = max(float(np.mean(col_P)), float(np.max(np.abs(q))) if n else 0.0)
        if denom > 0:
            g = min(max(1.0 / denom, _MIN_SCALING), _MAX_SCALING)
            P *= g
            q *= g
            c *= g
    return P, q, A, l, u, D, E, c


def _primal_infeasible(A, l, u, dy) -> bool:
    norm = float(np.max(np.abs(dy))) if dy.size else 0.0
    if norm <= 1e-14:
        return False
    dyp = np.maximum(dy, 0.0)
    dyn = np.minimum(dy, 0.0)
    # rays pushing on an infinite bound cannot certify anything
    if np.any(dyp[np.isinf(u)] > _EPS_INF * norm):
        return False
    if np.any(dyn[np.isinf(l)] < -_EPS_INF * norm):
        return False
    if float(np.max(np.abs(A.T @ dy))) > _EPS_INF * norm:
        return False
    finite_u = np.isfinite(u)
    finite_l = np.isfinite(l)
    support = float(u[finite_u] @ dyp[finite_u] + l[finite_l] @ dyn[finite_l])
    # bound magnitudes inflate the support roundoff, so they scale the test
    b_scale = 1.0
    if np.any(finite_u):
        b_scale = max(b_scale, float(np.max(np.abs(u[finite_u]))))
    if np.any(finite_l):
        b_scale = max(b_scale, float(np.max(np.abs(l[finite_l]))))
    return support < -_EPS_INF * norm * b_scale


def _dual_infeasible(P, q, A, l, u, dx) -> bool:
    norm = float(np.max(np.abs(dx))) if dx.size else 0.0
    if norm <= 1e-14:
        return False
    if float(np.max(np.abs(P @ dx))) > _EPS_INF * norm:
        return False
    if float(q @ dx) > -_EPS_INF * norm:
        return False
    if A.shape[0]:
        adx = A @ dx
        both = np.isfinite(l) & np.isfinite(u)
        if np.any(np.abs(adx[both]) > _EPS_INF * norm):
            return False
        if np.any(adx[np.isfinite(u) & ~both] > _EPS_INF * norm):
            return False
        if np.any(adx[np.isfinite(l) & ~both] < -_EPS_INF * norm):
            return False
    return True


def _active_rows(problem: QpProblem, x, lam_signed):
    """Guess the active inequality rows from a point and its multipliers.

    Dual sign alone over-selects: rows far from their bound can carry dual
    dust from a barely-converged iterate, so a row also has to sit near the
    bound it is supposedly pressing against.
    """
    act_lo: list = []
    act_up: list = []
    if problem.m_in:
        Ax_in = problem.A_in @ x
        for i in range(problem.m_in):
            lb, ub = problem.lb_in[i], problem.ub_in[i]
            if lam_signed[i] < 0 and np.isfinite(lb) \
                    and Ax_in[i] - lb <= 1e-3 * (1.0 + abs(lb)):
                act_lo.append(i)
            elif lam_signed[i] > 0 and np.isfinite(ub) \
                    and ub - Ax_in[i] <= 1e-3 * (1.0 + abs(ub)):
                act_up.append(i)
    return act_lo, act_up


def _pin_and_solve(problem: QpProblem, act_lo, act_up, cache, sparse_ops):
    """Solve the KKT system with the given rows pinned at their bounds.

    Returns (x, duals) with duals ordered [eq; act_lo; act_up], or None when
    the reduced system cannot be factored.  Factorizations are cached by
    active-set key; `sparse_ops` = (H, A_eq, A_in) in CSR form routes them
    through SuperLU, which is what makes repeated repair rounds affordable
    on the large stage-structured problems.
    """
    m_eq, m_in = problem.m_eq, problem.m_in
    n = problem.n
    rows = act_lo + act_up
    m_red = m_eq + len(rows)
    if sparse_ops is None:
        H_op = problem.H
        A_act = problem.A_in[rows] if rows else np.zeros((0, n))
        A_red = np.vstack([problem.A_eq, A_act])
    else:
        H_op, Aeq_sp, Ain_sp = sparse_ops
        A_red = scipy.sparse.vstack([Aeq_sp, Ain_sp[rows]], format="csr")
    b_red = np.concatenate([problem.b_eq, problem.lb_in[act_lo],
                            problem.ub_in[act_up]])

    key = (tuple(act_lo), tuple(act_up))
    solve = None
    if cache is not None and key in cache:
        solve = cache[key]
        cache.move_to_end(key)
    if solve is None:
        if sparse_ops is None:
            K = np.zeros((n + m_red, n + m_red))
            K[:n, :n] = problem.H
            K[np.arange(n), np.arange(n)] += _POLISH_DELTA
            if m_red:
                K[:n, n:] = A_red.T
                K[n:, :n] = A_red
                K[n + np.arange(m_red), n + np.arange(m_red)] = -_POLISH_DELTA
            try:
                lu_piv = scipy.linalg.lu_factor(K, overwrite_a=True,
                                                check_finite=False)
            except (scipy.linalg.LinAlgError, ValueError):
                return None
            solve = functools.partial(scipy.linalg.lu_solve, lu_piv,
                                      check_finite=False)
        else:
            if m_red:
                K = scipy.sparse.bmat(
                    [[H_op + _POLISH_DELTA * scipy.sparse.eye(n), A_red.T],
                     [A_red, -_POLISH_DELTA * scipy.sparse.eye(m_red)]],
                    format="csc")
            else:
                K = scipy.sparse.csc_matrix(
                    H_op + _POLISH_DELTA * scipy.sparse.eye(n))
            try:
                solve = scipy.sparse.linalg.splu(K).solve
            except (RuntimeError, ValueError):
                return None
        if cache is not None:
            cache[key] = solve
            while len(cache) > _POLISH_CACHE_MAX:
                cache.popitem(last=False)

    rhs = np.concatenate([-problem.f, b_red])
    sol = solve(rhs)
    for _ in range(3):  # iterative refinement against the unregularized system
        x_k, d_k = sol[:n], sol[n:]
        resid = np.concatenate([
            -problem.f - H_op @ x_k - A_red.T @ d_k,
            b_red - A_red @ x_k,
        ])
        sol = sol + solve(resid)
    if not np.all(np.isfinite(sol)):
        return None
    return sol[:n], sol[n:]


def _polish(problem: QpProblem, x, nu, lam_signed, cache=None, sparse_ops=None):
    """Active-set refinement against the original (unscaled) data.

    Solves the KKT system with the guessed active rows pinned at their
    bounds, then repairs the guess for a few rounds: rows whose multiplier
    comes out with the wrong sign are released, rows the trial point pushes
    past their bound are pinned.  Returns (x, dual_eq, dual_in_signed) or
    None when a reduced system cannot be factored.
    """
    m_eq, m_in = problem.m_eq, problem.m_in
    act_lo, act_up = _active_rows(problem, x, lam_signed)
    x_pol = duals = None
    used_lo = used_up = None
    for _ in range(4):
        sol = _pin_and_solve(problem, act_lo, act_up, cache, sparse_ops)
        if sol is None:
            return None
        x_pol, duals = sol
        used_lo, used_up = act_lo, act_up
        d_scale = 1.0 + (float(np.max(np.abs(duals))) if duals.size else 0.0)
        drop = 1e-8 * d_scale
        keep_lo = [i for k, i in enumerate(act_lo)
                   if duals[m_eq + k] <= drop]
        off = m_eq + len(act_lo)
        keep_up = [i for k, i in enumerate(act_up)
                   if duals[off + k] >= -drop]
        add_lo: list = []
        add_up: list = []
        if m_in:
            Ax_in = problem.A_in @ x_pol
            in_lo, in_up = set(keep_lo), set(keep_up)
            for i in range(m_in):
                lb, ub = problem.lb_in[i], problem.ub_in[i]
                if np.isfinite(lb) and i not in in_lo \
                        and lb - Ax_in[i] > 1e-9 * (1.0 + abs(lb)):
                    add_lo.append(i)
                elif np.isfinite(ub) and i not in in_up \
                        and Ax_in[i] - ub > 1e-9 * (1.0 + abs(ub)):
                    add_up.append(i)
        if len(keep_lo) == len(act_lo) and len(keep_up) == len(act_up) \
                and not add_lo and not add_up:
            break
        act_lo = sorted(keep_lo + add_lo)
        act_up = sorted(keep_up + add_up)

    nu_pol = duals[:m_eq]
    lam_pol = np.zeros(m_in)
    for k, i in enumerate(used_lo):
        lam_pol[i] = min(duals[m_eq + k], 0.0)
    off = m_eq + len(used_lo)
    for k, i in enumerate(used_up):
        lam_pol[i] = max(duals[off + k], 0.0)
    return x_pol, nu_pol, lam_pol


class QpSession:
    """Reusable solver workspace for QP sequences sharing H, A_eq, and A_in.

    Receding-horizon controllers rebuild only the vectors (f, b_eq, bounds)
    each step; the scaling and the factored KKT system are computed once here
    and reused, and each solve warm starts from the previous solution unless
    told otherwise.  The step-size estimate also carries over, so KKT
    refactorizations triggered by adaptation become rare after the first few
    solves.
    """

    def __init__(self, template: QpProblem, options: Optional[SolverOptions] = None):
        self.template = template
        self.options = options if options is not None else SolverOptions()
        self._polish_cache: OrderedDict = OrderedDict()
        n, m_eq, m_in = template.n, template.m_eq, template.m_in
        self.n, self.m_eq, self.m_in = n, m_eq, m_in
        self.m = m_eq + m_in
        if self.m:
            A = np.vstack([template.A_eq, template.A_in])
            l_full = np.concatenate([template.b_eq, template.lb_in])
            u_full = np.concatenate([template.b_eq, template.ub_in])
            Ps, qs, As, _, _, D, E, c = _ruiz(template.H, template.f, A, l_full, u_full)
            self._A = A
            self._Ps, self._As = Ps, As
            self._D, self._E, self._c = D, E, c
            self._eq_mask = np.zeros(self.m, dtype=bool)
            self._eq_mask[:m_eq] = True
            self._eq_mask |= (l_full == u_full)
            self._rho_bar = _RHO0
            # large sparse KKT systems (the stage-structured controller QPs)
            # factor orders of magnitude faster through SuperLU, which also
            # makes step-size refactorizations cheap enough to do eagerly
            nnz = np.count_nonzero(Ps) + 2 * np.count_nonzero(As) + n + self.m
            dim = n + self.m
            self._sparse = dim >= 600 and nnz <= 0.05 * dim * dim
            self._pol_ops = None
            if self._sparse:
                self._Ps_sp = scipy.sparse.csr_matrix(Ps)
                self._As_sp = scipy.sparse.csr_matrix(As)
                self._pol_ops = (scipy.sparse.csr_matrix(template.H),
                                 scipy.sparse.csr_matrix(template.A_eq),
                                 scipy.sparse.csr_matrix(template.A_in))
            self._lu_piv = None
            self._splu = None
            self._refactor()
            self._x = np.zeros(n)
            self._z = np.zeros(self.m)
            self._y = np.zeros(self.m)
            self._have_state = False
            # last certified solution, unscaled; seeds the active-set shortcut
            self._last = None

    def _refactor(self):
        rho = np.full(self.m, self._rho_bar)
        rho[self._eq_mask] = self._rho_bar * _RHO_EQ_SCALE
        np.clip(rho, _RHO_MIN, _RHO_MAX, out=rho)
        n, m = self.n, self.m
        if self._sparse:
            K = scipy.sparse.bmat(
                [[self._Ps_sp + _SIGMA * scipy.sparse.eye(n),
                  self._As_sp.T],
                 [self._As_sp,
                  scipy.sparse.diags(-1.0 / rho)]], format="csc")
            splu = scipy.sparse.linalg.splu(K)
        else:
            K = np.zeros((n + m, n + m))
            K[:n, :n] = self._Ps
            K[np.arange(n), np.arange(n)] += _SIGMA
            K[:n, n:] = self._As.T
            K[n:, :n] = self._As
            K[n + np.arange(m), n + np.arange(m)] = -1.0 / rho
            lu_piv = scipy.linalg.lu_factor(K, overwrite_a=True, check_finite=False)
            self._lu_piv = lu_piv
        # commit only after a successful factorization
        if self._sparse:
            self._splu = splu
        self._rho = rho
        self._rho_inv = 1.0 / rho

    def reset_state(self) -> None:
        """Drop the carried warm iterate; the next solve starts cold."""
        if self.m:
            self._x[:] = 0.0
            self._z[:] = 0.0
            self._y[:] = 0.0
            self._have_state = False

    def solve(self, f=None, b_eq=None, lb_in=None, ub_in=None) -> QpSolution:
        """Solve with the template's matrices and the given (or template) vectors."""
        prob = self.template
        f = prob.f if f is None else _as_vector(f, "f")
        b_eq = prob.b_eq if b_eq is None else _as_vector(b_eq, "b_eq")
        lb_in = prob.lb_in if lb_in is None else _as_vector(lb_in, "lb_in")
        ub_in = prob.ub_in if ub_in is None else _as_vector(ub_in, "ub_in")
        if f.shape[0] != self.n or b_eq.shape[0] != self.m_eq \
                or lb_in.shape[0] != self.m_in or ub_in.shape[0] != self.m_in:
            raise ValueError("vector dimensions inconsistent with session template")
        current = _problem_with_vectors(prob, f, b_eq, lb_in, ub_in)
        return self._solve_current(current)

    def _solve_current(self, problem: QpProblem) -> QpSolution:
        options = self.options
        t0 = time.monotonic()

        if self.m == 0:
            try:
                x = np.linalg.solve(problem.H, -problem.f)
            except np.linalg.LinAlgError:
                x, *_ = np.linalg.lstsq(problem.H, -problem.f, rcond=None)
            resid = float(np.max(np.abs(problem.H @ x + problem.f))) if self.n else 0.0
            f_scale = 1.0 + (float(np.max(np.abs(problem.f))) if self.n else 0.0)
            status = QpStatus.Optimal if resid <= max(options.abs_tol, 1e-10) * f_scale \
                else QpStatus.Infeasible
            return self._finish(problem, x, np.zeros(0), np.zeros(0), status, 0, t0)

        m_eq = self.m_eq
        D, E, c = self._D, self._E, self._c
        Dinv = 1.0 / D
        Einv = 1.0 / E
        qs = c * D * problem.f
        l_full = np.concatenate([problem.b_eq, problem.lb_in])
        u_full = np.concatenate([problem.b_eq, problem.ub_in])
        ls = E * l_full
        us = E * u_full

        x, z, y = self._x, self._z, self._y
        ws = options.warm_start
        if ws is not None and np.shape(ws.x_star) == (self.n,):
            lam_ws = ws.dual_in_signed
            if lam_ws is None:
                lam_ws = _signed_duals(problem, ws)
            if np.shape(ws.dual_eq) == (m_eq,) and np.shape(lam_ws) == (self.m_in,):
                x[:] = np.asarray(ws.x_star, float) * Dinv
                y[:] = c * np.concatenate([np.asarray(ws.dual_eq, float),
                                           np.asarray(lam_ws, float)]) * Einv
                z[:] = self._As @ x
                self._have_state = True
        if not self._have_state:
            x[:] = 0.0
            z[:] = 0.0
            y[:] = 0.0
        # whatever state we leave behind is a usable warm start for the next call
        self._have_state = True

        # active-set shortcut: successive problems in a receding-horizon
        # sequence usually keep the previous solution's active set, and with
        # its factorization already cached the refined solve costs two
        # triangular solves; certify fully before trusting it
        if self._last is not None:
            lx, lnu, llam = self._last
            key = tuple(map(tuple, _active_rows(problem, lx, llam)))
            if key in self._polish_cache or self._sparse:
                pol = _polish(problem, lx, lnu, llam,
                              cache=self._polish_cache,
                              sparse_ops=self._pol_ops)
                if pol is not None:
                    res = kkt_residuals(problem, QpSolution(
                        pol[0], pol[1], np.abs(pol[2]), 0.0, QpStatus.Optimal,
                        0, 0.0, pol[2]))
                    cert_tol = options.abs_tol + options.rel_tol * _kkt_scale(
                        problem, pol[0], pol[1], pol[2])
                    if res.max() <= cert_tol:
                        x_out, nu_out, lam_out = pol
                        x[:] = x_out * Dinv
                        y[:] = c * np.concatenate([nu_out, lam_out]) * Einv
                        z[:] = self._As @ x
                        self._last = (x_out.copy(), nu_out.copy(), lam_out.copy())
                        return self._finish(problem, x_out, nu_out, lam_out,
                                            QpStatus.Optimal, 0, t0)

        eps_inner = 0.1 * options.abs_tol
        rel_inner = options.rel_tol
        tighten_budget = 4
        iterations = 0
        converged = False
        timed_out = False
        infeas_streak = 0
        x_prev = x.copy()
        y_prev = y.copy()

        As_op = self._As_sp if self._sparse else self._As
        Ps_op = self._Ps_sp if self._sparse else self._Ps

        while True:
            while iterations < options.max_iterations:
                todo = min(_CHUNK, options.max_iterations - iterations)
                if self._sparse:
                    admm_chunk_factored(self._splu.solve, qs, ls, us,
                                        self._rho, self._rho_inv, _SIGMA,
                                        _ALPHA, x, z, y, todo)
                else:
                    admm_chunk(self._lu_piv[0], self._lu_piv[1], qs, ls, us,
                               self._rho, self._rho_inv, _SIGMA, _ALPHA,
                               x, z, y, todo)
                iterations += todo

                Ax = As_op @ x
                Px = Ps_op @ x
                Aty = As_op.T @ y
                r_prim = float(np.max(np.abs(Einv * (Ax - z))))
                r_dual = float(np.max(np.abs(Dinv * (Px + qs + Aty)))) / c
                denom_p = max(float(np.max(np.abs(Einv * Ax))),
                              float(np.max(np.abs(Einv * z))), 1e-30)
                denom_d = max(float(np.max(np.abs(Dinv * Px))),
                              float(np.max(np.abs(Dinv * Aty))),
                              float(np.max(np.abs(Dinv * qs))), 1e-30) / c
                if (r_prim <= eps_inner + rel_inner * denom_p
                        and r_dual <= eps_inner + rel_inner * denom_d):
                    converged = True
                    break

                dy = E * (y - y_prev) / c
                dx = D * (x - x_prev)
                if _primal_infeasible(self._A, l_full, u_full, dy) \
                        or _dual_infeasible(problem.H, problem.f, self._A,
                                            l_full, u_full, dx):
                    # a transient can graze the ratio tests once; a genuine
                    # recession direction keeps reappearing check after check
                    infeas_streak += 1
                    if infeas_streak >= 2:
                        x_out = D * x
                        y_out = E * y / c
                        self._have_state = False
                        self._last = None
                        return self._finish(problem, x_out, y_out[:m_eq],
                                            y_out[m_eq:], QpStatus.Infeasible,
                                            iterations, t0)
                else:
                    infeas_streak = 0
                x_prev[:] = x
                y_prev[:] = y

                if iterations % _ADAPT_EVERY == 0:
                    ratio = float(np.sqrt((r_prim / denom_p) / max(r_dual / denom_d, 1e-30)))
                    rho_new = float(np.clip(self._rho_bar * ratio, _RHO_MIN, _RHO_MAX))
                    # refactorization is nearly free on the sparse path, so
                    # adapt eagerly there; the dense path waits for 5x drift
                    gate = 2.0 if self._sparse else 5.0
                    if rho_new > gate * self._rho_bar or rho_new < self._rho_bar / gate:
                        self._rho_bar = rho_new
                        try:
                            self._refactor()
                        except (scipy.linalg.LinAlgError, ValueError,
                                RuntimeError):
                            pass  # keep the previous factorization

                if time.monotonic() - t0 > options.time_limit:
                    timed_out = True
                    break

            x_out = D * x
            y_out = E * y / c
            nu_out = y_out[:m_eq].copy()
            lam_out = y_out[m_eq:].copy()

            if converged:
                self._have_state = True
                import os as _os
                _trace = _os.environ.get("DDPC_QP_TRACE")
                pol = _polish(problem, x_out, nu_out, lam_out,
                              cache=self._polish_cache,
                              sparse_ops=self._pol_ops)
                if _trace:
                    print(f"    converged at {iterations}: polish={'ok' if pol is not None else 'FAILED'}")
                if pol is not None:
                    res_pol = kkt_residuals(problem, QpSolution(
                        pol[0], pol[1], np.abs(pol[2]), 0.0, QpStatus.Optimal,
                        iterations, 0.0, pol[2]))
                    res_cur = kkt_residuals(problem, QpSolution(
                        x_out, nu_out, np.abs(lam_out), 0.0, QpStatus.Optimal,
                        iterations, 0.0, lam_out))
                    if _trace and res_pol.max() >= res_cur.max():
                        print(f"    polish lost: stat={res_pol.stationarity:.2e} "
                              f"eq={res_pol.primal_eq:.2e} in={res_pol.primal_in:.2e} "
                              f"comp={res_pol.complementarity:.2e}")
                    if res_pol.max() < res_cur.max():
                        x_out, nu_out, lam_out = pol
                res = kkt_residuals(problem, QpSolution(
                    x_out, nu_out, np.abs(lam_out), 0.0, QpStatus.Optimal,
                    iterations, 0.0, lam_out))
                cert_tol = options.abs_tol + options.rel_tol * _kkt_scale(
                    problem, x_out, nu_out, lam_out)
                if _trace:
                    print(f"    certify: res={res.max():.3e} tol={cert_tol:.3e} "
                          f"(stat={res.stationarity:.2e} eq={res.primal_eq:.2e} "
                          f"in={res.primal_in:.2e} comp={res.complementarity:.2e})")
                if res.max() <= cert_tol:
                    self._last = (x_out.copy(), nu_out.copy(), lam_out.copy())
                    return self._finish(problem, x_out, nu_out, lam_out,
                                        QpStatus.Optimal, iterations, t0)
                if (tighten_budget > 0 and iterations < options.max_iterations
                        and time.monotonic() - t0 <= options.time_limit):
                    tighten_budget -= 1
                    eps_inner *= 0.1
                    rel_inner *= 0.1
                    converged = False
                    x_prev[:] = x
                    y_prev[:] = y
                    continue
                return self._finish(problem, x_out, nu_out, lam_out,
                                    QpStatus.MaxIter, iterations, t0)

            status = QpStatus.TimeLimit if timed_out else QpStatus.MaxIter
            return self._finish(problem, x_out, nu_out, lam_out, status, iterations, t0)

    def _finish(self, problem, x, nu, lam_signed, status, iterations, t0):
        return QpSolution(
            x_star=x,
            dual_eq=nu,
            dual_in=np.abs(lam_signed),
            objective=_objective(problem, x),
            status=status,
            iterations=iterations,
            solve_time=time.monotonic() - t0,
            dual_in_signed=lam_signed,
        )


def solve_qp(problem: QpProblem, options: Optional[SolverOptions] = None) -> QpSolution:
    """One-shot solve; every Optimal return satisfies the KKT conditions to tolerance.

    The final verification recomputes full unscaled KKT residuals, including
    complementarity, and keeps iterating with tightened internal tolerances
    until they pass or the iteration/time budget runs out, so ``Optimal``
    really means certified.  The pass threshold is ``abs_tol`` plus
    ``rel_tol`` times the magnitude of the KKT data, which keeps the test
    meaningful whether cost entries are order one or order 1e6.  A warm start supplied through the options seeds
    the iteration but can only help: it never degrades the certified result.
    """
    session = QpSession(problem, options)
    return session._solve_current(problem)


def brute_force_qp_oracle(problem: QpProblem) -> QpSolution:
    """Globally optimal reference solution by exhaustive active-set enumeration.

    Every inequality row is tried as lower-active, upper-active, or inactive
    (3^m_in candidates); each candidate's equality-constrained subproblem is
    solved exactly and screened for primal and dual feasibility.  Intended
    for tests on small instances only.
    """
    t0 = time.monotonic()
    if problem.m_in > 20:
        raise ValueError("oracle enumeration limited to m_in <= 20")
    n, m_eq, m_in = problem.n, problem.m_eq, problem.m_in
    feas_tol = 1e-8
    dual_tol = 1e-8

    best = None
    tried = 0
    for assignment in itertools.product((0, 1, 2), repeat=m_in):
        # 0 inactive, 1 lower-active, 2 upper-active
        rows = []
        rhs_act = []
        skip = False
        for i, a in enumerate(assignment):
            if a == 1:
                if not np.isfinite(problem.lb_in[i]):
                    skip = True
                    break
                rows.append(i)
                rhs_act.append(problem.lb_in[i])
            elif a == 2:
                if not np.isfinite(problem.ub_in[i]):
                    skip = True
                    break
                rows.append(i)
                rhs_act.append(problem.ub_in[i])
        if skip:
            continue
        tried += 1
        A_act = problem.A_in[rows] if rows else np.zeros((0, n))
        A_all = np.vstack([problem.A_eq, A_act])
        b_all = np.concatenate([problem.b_eq, np.asarray(rhs_act)])
        m_all = A_all.shape[0]
        K = np.zeros((n + m_all, n + m_all))
        K[:n, :n] = problem.H
        if m_all:
            K[:n, n:] = A_all.T
            K[n:, :n] = A_all
        r = np.concatenate([-problem.f, b_all])
        try:
            sol = np.linalg.solve(K, r)
        except np.linalg.LinAlgError:
            sol, *_ = np.linalg.lstsq(K, r, rcond=None)
        # a near-singular candidate system solves "successfully" but garbage:
        # backward stability keeps K@sol close to r only relative to |sol|,
        # so checking against |r| rejects those candidates
        if np.max(np.abs(K @ sol - r)) > 1e-7 * (1.0 + np.max(np.abs(r))):
            continue
        x = sol[:n]
        nu = sol[n:n + m_eq]
        mu = sol[n + m_eq:]
        margin = feas_tol * (1.0 + float(np.max(np.abs(x), initial=0.0)))
        if m_all and np.max(np.abs(A_all @ x - b_all)) > margin:
            continue  # active rows not actually attained
        if m_in:
            ax = problem.A_in @ x
            ok = True
            for i, a in enumerate(assignment):
                if a == 0:
                    if np.isfinite(problem.lb_in[i]) and ax[i] < problem.lb_in[i] - margin:
                        ok = False
                        break
                    if np.isfinite(problem.ub_in[i]) and ax[i] > problem.ub_in[i] + margin:
                        ok = False
                        break
            if not ok:
                continue
        # dual feasibility: signed multiplier <= 0 at a lower bound, >= 0 at an upper
        ok = True
        lam_signed = np.zeros(m_in)
        for k_idx, i in enumerate(rows):
            if assignment[i] == 1 and mu[k_idx] > dual_tol:
                ok = False
                break
            if assignment[i] == 2 and mu[k_idx] < -dual_tol:
                ok = False
                break
            lam_signed[i] = mu[k_idx]
        if not ok:
            continue
        obj = _objective(problem, x)
        if best is None or obj < best[0] - 1e-12:
            best = (obj, x, nu, lam_signed)

    if best is None:
        return QpSolution(
            x_star=np.zeros(n), dual_eq=np.zeros(m_eq), dual_in=np.zeros(m_in),
            objective=np.inf, status=QpStatus.Infeasible, iterations=tried,
            solve_time=time.monotonic() - t0, dual_in_signed=np.zeros(m_in),
        )
    obj, x, nu, lam_signed = best
    return QpSolution(
        x_star=x, dual_eq=nu, dual_in=np.abs(lam_signed), objective=obj,
        status=QpStatus.Optimal, iterations=tried,
        solve_time=time.monotonic() - t0, dual_in_signed=lam_signed,
    )
