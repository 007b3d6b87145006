"""Fixed-step one-step methods.

``sdirk4`` is a five-stage, L-stable, stiffly accurate singly diagonally
implicit Runge-Kutta method of order 4 (diagonal 1/4).  Each step factors
``I - dt/4 J`` once and solves the stages with simplified Newton; the
Jacobian is refreshed at the current iterate when contraction stalls, and a
step whose stage equations still fail is split in half.  ``rk4`` is the
classical explicit scheme, kept for non-stiff problems and comparison.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import lu_factor, lu_solve

SDIRK_GAMMA = 0.25
SDIRK_A = np.array([
    [1 / 4, 0, 0, 0, 0],
    [1 / 2, 1 / 4, 0, 0, 0],
    [17 / 50, -1 / 25, 1 / 4, 0, 0],
    [371 / 1360, -137 / 2720, 15 / 544, 1 / 4, 0],
    [25 / 24, -49 / 48, 125 / 16, -85 / 12, 1 / 4],
])
SDIRK_C = SDIRK_A.sum(axis=1)
SDIRK_B = SDIRK_A[-1].copy()

NEWTON_TOL = 1e-12
NEWTON_MAXIT = 25
MAX_REFRESH = 10
MAX_SPLIT_DEPTH = 10


class NewtonFailure(RuntimeError):
    pass


def rk4_step(f, t: float, y: np.ndarray, dt: float) -> np.ndarray:
    k1 = f(t, y)
    k2 = f(t + dt / 2, y + dt / 2 * k1)
    k3 = f(t + dt / 2, y + dt / 2 * k2)
    k4 = f(t + dt, y + dt * k3)
    return y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def sdirk4_step(f, jac, t: float, y: np.ndarray, dt: float,
                tol: float = NEWTON_TOL, maxit: int = NEWTON_MAXIT) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    n = y.size
    hg = dt * SDIRK_GAMMA

    def factor(tt, yy):
        return lu_factor(np.eye(n) - hg * np.atleast_2d(jac(tt, yy)), check_finite=False)

    lu = factor(t, y)
    refreshes = 0
    scale = 1.0 + np.abs(y)
    stages = np.empty((5, n))
    z = np.zeros(n)
    for i in range(5):
        r = dt * (SDIRK_A[i, :i] @ stages[:i]) if i else np.zeros(n)
        z = r.copy()
        ti = t + SDIRK_C[i] * dt
        prev = np.inf
        for _ in range(maxit):
            g = z - hg * f(ti, y + z) - r
            dz = lu_solve(lu, -g, check_finite=False)
            z += dz
            err = np.max(np.abs(dz) / scale)
            if not np.isfinite(err):
                raise NewtonFailure("non-finite Newton update")
            if err < tol:
                break
            if err > 0.5 * prev and refreshes < MAX_REFRESH:
                # slow contraction: the step-start Jacobian is stale
                lu = factor(ti, y + z)
                refreshes += 1
                prev = np.inf
            else:
                prev = err
        else:
            raise NewtonFailure(f"stage {i} did not converge in {maxit} iterations")
        stages[i] = (z - r) / hg
    return y + z


def sdirk4_advance(f, jac, t: float, y: np.ndarray, dt: float, tol: float = NEWTON_TOL,
                   maxit: int = NEWTON_MAXIT, depth: int = 0) -> tuple[np.ndarray, int]:
    """One SDIRK step, halved recursively where the stage equations fail.

    Returns the new state and the number of splits taken.
    """
    try:
        return sdirk4_step(f, jac, t, y, dt, tol, maxit), 0
    except NewtonFailure:
        if depth >= MAX_SPLIT_DEPTH:
            raise
    mid, s1 = sdirk4_advance(f, jac, t, y, 0.5 * dt, tol, maxit, depth + 1)
    end, s2 = sdirk4_advance(f, jac, t + 0.5 * dt, mid, 0.5 * dt, tol, maxit, depth + 1)
    return end, 1 + s1 + s2
