"""Numerical hot loops with interchangeable numba and pure-numpy backends.

Two kernels live here because profiling shows they dominate wall time:

* the ADMM inner iteration of the QP solver (dense KKT back-substitutions,
  thousands of iterations per closed-loop step), and
* the RK4 integrator of the pasteurization surrogate (tens of thousands of
  right-hand-side evaluations per dataset).

Both are written twice with identical semantics: a plain numpy/Python
version and an ``@njit`` version compiled by numba.  The active backend is
chosen once at import time.  Set the environment variable ``DDPC_NO_NUMBA=1``
to force the numpy path (useful for debugging, coverage runs, and machines
without a working numba toolchain); the numpy path is also selected
automatically when numba cannot be imported.  ``benchmarks/bench_kernels.py``
times one against the other.

The integrator gains two orders of magnitude from numba.  The ADMM chunk
does not: its numpy version back-substitutes through LAPACK, which beats
the jitted scalar loop on every KKT system larger than ~70 rows, and the
controllers here build nothing that small.  The shipped ``admm_chunk``
alias is therefore always the numpy version; the jitted variant stays
importable for the benchmark to keep that judgment honest on new machines.

Numerical results of the two paths agree to floating-point roundoff, not
bitwise; within one path, results are bitwise reproducible run to run.
"""

from __future__ import annotations

import os

import numpy as np

_FORCE_NUMPY = os.environ.get("DDPC_NO_NUMBA", "").strip() not in ("", "0")

if not _FORCE_NUMPY:
    try:
        from numba import njit

        _HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - exercised only without numba
        _HAVE_NUMBA = False
else:
    _HAVE_NUMBA = False

USING_NUMBA = _HAVE_NUMBA


# ---------------------------------------------------------------------------
# LU back-substitution (factor computed by scipy.linalg.lu_factor in the
# driver; only the solve runs in the iteration loop)
# ---------------------------------------------------------------------------

def _lu_solve_inplace_numpy(lu: np.ndarray, piv: np.ndarray, b: np.ndarray) -> None:
    # piv is scipy's 0-based sequential row-interchange vector
    n = b.shape[0]
    for i in range(n):
        p = piv[i]
        if p != i:
            b[i], b[p] = b[p], b[i]
    for i in range(1, n):
        b[i] -= np.dot(lu[i, :i], b[:i])
    for i in range(n - 1, -1, -1):
        if i < n - 1:
            b[i] -= np.dot(lu[i, i + 1:], b[i + 1:])
        b[i] /= lu[i, i]


def _admm_chunk_numpy(lu, piv, q, l, u, rho, rho_inv, sigma, alpha, x, z, y, iters):
    """Run `iters` ADMM iterations in place on (x, z, y).

    One iteration: solve the regularized KKT system for the auxiliary pair,
    relax with factor alpha, project the constraint iterate onto [l, u], and
    take the dual ascent step.  The KKT matrix
    ``[[P + sigma*I, A.T], [A, -diag(1/rho)]]`` is prefactored by the caller;
    only its LU factors enter the loop.
    """
    import scipy.linalg

    n = q.shape[0]
    rhs = np.empty(n + l.shape[0])
    for _ in range(iters):
        rhs[:n] = sigma * x - q
        rhs[n:] = z - rho_inv * y
        sol = scipy.linalg.lu_solve((lu, piv), rhs, check_finite=False)
        x_t = sol[:n]
        nu = sol[n:]
        z_t = z + rho_inv * (nu - y)
        az = alpha * z_t + (1.0 - alpha) * z
        z_new = np.clip(az + rho_inv * y, l, u)
        y += rho * (az - z_new)
        z[:] = z_new
        x *= 1.0 - alpha
        x += alpha * x_t


def admm_chunk_factored(solve, q, l, u, rho, rho_inv, sigma, alpha, x, z, y, iters):
    """Same iteration as admm_chunk, but against any callable KKT solver.

    Used with a sparse LU factor (scipy.sparse.linalg.splu(...).solve), where
    handing raw dense factors to the dense chunk would defeat the point.
    numpy-only by design: the solve callable is opaque to numba.
    """
    n = q.shape[0]
    rhs = np.empty(n + l.shape[0])
    for _ in range(iters):
        rhs[:n] = sigma * x - q
        rhs[n:] = z - rho_inv * y
        sol = solve(rhs)
        x_t = sol[:n]
        nu = sol[n:]
        z_t = z + rho_inv * (nu - y)
        az = alpha * z_t + (1.0 - alpha) * z
        z_new = np.clip(az + rho_inv * y, l, u)
        y += rho * (az - z_new)
        z[:] = z_new
        x *= 1.0 - alpha
        x += alpha * x_t


def _rk4_pasteurizer_numpy(state, u, dt, nsub, p):
    """Advance the three-temperature surrogate by one sample of length dt*nsub.

    p = (c1, c2, c3, c4, c5, c6, c7, c8, t_amb, t_in) where c* are the ODE
    rate coefficients already divided by the thermal capacities.
    """
    c1, c2, c3, c4, c5, c6, c7, c8, t_amb, t_in = p
    t1, t2, t3 = state[0], state[1], state[2]
    u1, u2, u3 = u[0], u[1], u[2]
    for _ in range(nsub):
        k1a = c7 * u1 * (t3 - t1) - c8 * (t1 - t_amb)
        k1b = c1 * u3 - c2 * u2 * (t2 - t3) - c3 * (t2 - t_amb)
        k1c = c4 * u2 * (t2 - t3) - c5 * u1 * (t3 - t_in) - c6 * (t3 - t_amb)

        a1 = t1 + 0.5 * dt * k1a
        a2 = t2 + 0.5 * dt * k1b
        a3 = t3 + 0.5 * dt * k1c
        k2a = c7 * u1 * (a3 - a1) - c8 * (a1 - t_amb)
        k2b = c1 * u3 - c2 * u2 * (a2 - a3) - c3 * (a2 - t_amb)
        k2c = c4 * u2 * (a2 - a3) - c5 * u1 * (a3 - t_in) - c6 * (a3 - t_amb)

        a1 = t1 + 0.5 * dt * k2a
        a2 = t2 + 0.5 * dt * k2b
        a3 = t3 + 0.5 * dt * k2c
        k3a = c7 * u1 * (a3 - a1) - c8 * (a1 - t_amb)
        k3b = c1 * u3 - c2 * u2 * (a2 - a3) - c3 * (a2 - t_amb)
        k3c = c4 * u2 * (a2 - a3) - c5 * u1 * (a3 - t_in) - c6 * (a3 - t_amb)

        a1 = t1 + dt * k3a
        a2 = t2 + dt * k3b
        a3 = t3 + dt * k3c
        k4a = c7 * u1 * (a3 - a1) - c8 * (a1 - t_amb)
        k4b = c1 * u3 - c2 * u2 * (a2 - a3) - c3 * (a2 - t_amb)
        k4c = c4 * u2 * (a2 - a3) - c5 * u1 * (a3 - t_in) - c6 * (a3 - t_amb)

        t1 += dt / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a)
        t2 += dt / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b)
        t3 += dt / 6.0 * (k1c + 2.0 * k2c + 2.0 * k3c + k4c)
    out = np.empty(3)
    out[0] = t1
    out[1] = t2
    out[2] = t3
    return out


def _pasteurizer_rollout_numpy(state0, useq, dt, nsub, p):
    """Simulate a whole input sequence; returns (pre-step states (T,3), final state)."""
    T = useq.shape[0]
    states = np.empty((T, 3))
    x = state0.copy()
    for t in range(T):
        states[t, 0] = x[0]
        states[t, 1] = x[1]
        states[t, 2] = x[2]
        x = _rk4_pasteurizer_numpy(x, useq[t], dt, nsub, p)
    return states, x


if USING_NUMBA:
    _lu_solve_inplace = njit(cache=True)(_lu_solve_inplace_numpy)

    @njit(cache=True)
    def _admm_chunk_numba(lu, piv, q, l, u, rho, rho_inv, sigma, alpha, x, z, y, iters):
        n = q.shape[0]
        m = l.shape[0]
        rhs = np.empty(n + m)
        for _ in range(iters):
            for i in range(n):
                rhs[i] = sigma * x[i] - q[i]
            for i in range(m):
                rhs[n + i] = z[i] - rho_inv[i] * y[i]
            _lu_solve_inplace(lu, piv, rhs)
            for i in range(m):
                z_t = z[i] + rho_inv[i] * (rhs[n + i] - y[i])
                az = alpha * z_t + (1.0 - alpha) * z[i]
                z_new = az + rho_inv[i] * y[i]
                if z_new < l[i]:
                    z_new = l[i]
                elif z_new > u[i]:
                    z_new = u[i]
                y[i] += rho[i] * (az - z_new)
                z[i] = z_new
            for i in range(n):
                x[i] = alpha * rhs[i] + (1.0 - alpha) * x[i]

    _rk4_pasteurizer = njit(cache=True)(_rk4_pasteurizer_numpy)

    # the numpy body cannot be reused here: it calls the unjitted integrator
    # through a module global, which numba cannot type
    @njit(cache=True)
    def _pasteurizer_rollout_jit(state0, useq, dt, nsub, p):
        T = useq.shape[0]
        states = np.empty((T, 3))
        x = state0.copy()
        for t in range(T):
            states[t, 0] = x[0]
            states[t, 1] = x[1]
            states[t, 2] = x[2]
            x = _rk4_pasteurizer(x, useq[t], dt, nsub, p)
        return states, x

    pasteurizer_advance = _rk4_pasteurizer

    def pasteurizer_rollout(state0, useq, dt, nsub, p):
        return _pasteurizer_rollout_jit(
            np.ascontiguousarray(state0, dtype=np.float64),
            np.ascontiguousarray(useq, dtype=np.float64),
            float(dt), int(nsub), p,
        )
else:
    pasteurizer_advance = _rk4_pasteurizer_numpy
    pasteurizer_rollout = _pasteurizer_rollout_numpy

# LAPACK wins at every size the controllers produce; see the module docstring
admm_chunk = _admm_chunk_numpy
