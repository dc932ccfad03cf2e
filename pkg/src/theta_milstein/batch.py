"""Vectorised integration of many one-dimensional paths at once.

Internal engine behind the Monte Carlo analyses.  It advances a whole batch
of paths per time step using the elementwise callables of a scalar problem,
with the same update expressions, solver tolerances, and divergence rules as
the per-path steppers (the test suite pins the two against each other).
Paths that blow up are recorded and carried as NaN from the offending step
onward instead of raising, so divergent-fraction experiments can run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ContractViolationError, NonConvergenceError
from .schemes import DIVERGENCE_LIMIT, ImplicitSolverConfig, Scheme, SolverMethod
from .sde import SdeProblem

__all__ = ["BatchPaths", "integrate_batch"]


@dataclass(frozen=True)
class BatchPaths:
    """States of a batch of paths; arrays have shape (paths, steps + 1).

    ``diverged_at[i]`` is the index of the increment whose update blew up
    path ``i``, or -1 if the path stayed finite.  States of a diverged path
    are NaN from that step on.
    """

    y: np.ndarray
    z: Optional[np.ndarray]
    diverged_at: np.ndarray
    max_solver_iterations: int

    @property
    def divergent_paths(self) -> int:
        return int(np.count_nonzero(self.diverged_at >= 0))


def _drift_prime(ops):
    if ops.drift_prime is not None:
        return ops.drift_prime
    f = ops.drift
    root_eps = math.sqrt(np.finfo(float).eps)

    def fd(y):
        h = root_eps * (1.0 + np.abs(y))
        return (f(y + h) - f(y - h)) / (2.0 * h)

    return fd


def _resolve_batch(f, fprime, z, theta_dt, cfg, alive):
    """Solve y = z + theta dt f(y) elementwise for the alive entries.

    Converged entries freeze; entries with a singular Newton direction fall
    back to fixed-point updates, and a full fixed-point phase restarts any
    leftovers before non-convergence is declared.
    """
    if theta_dt == 0.0:
        return z.copy(), 0
    pred = z + theta_dt * f(z)
    start = np.where(np.isfinite(pred), pred, z)
    y = np.where(alive, start, z)
    pending = alive.copy()
    iters = 0
    newton = cfg.method is SolverMethod.NEWTON_WITH_FIXED_POINT_FALLBACK
    for phase in (("newton", "fixed_point") if newton else ("fixed_point",)):
        if phase == "fixed_point" and newton:
            y = np.where(pending, start, y)
        for _ in range(cfg.max_iters):
            fy = f(y)
            r = y - z - theta_dt * fy
            finite = np.isfinite(r)
            done = finite & (np.abs(r) <= cfg.abs_tol + cfg.rel_tol * np.abs(y))
            pending &= ~done
            active = pending & finite
            if not active.any():
                return y, iters
            iters += 1
            if phase == "newton":
                d = 1.0 - theta_dt * fprime(y)
                ok = active & np.isfinite(d) & (d != 0.0)
                d_safe = np.where(d == 0.0, 1.0, d)
                y = np.where(ok, y - r / d_safe, y)
                rest = active & ~ok
            else:
                rest = active
            if rest.any():
                y = np.where(rest, z + theta_dt * fy, y)
    failed = pending & np.isfinite(y) & (np.abs(y) <= DIVERGENCE_LIMIT)
    if failed.any():
        r = np.abs(y - z - theta_dt * f(y))
        worst = float(np.max(r[failed]))
        raise NonConvergenceError(
            f"implicit stage did not converge for {int(failed.sum())} path(s) "
            f"(worst residual {worst:.3e})",
            residual=worst,
        )
    return y, iters


def integrate_batch(
    problem: SdeProblem,
    scheme: Scheme | str,
    y0,
    increments: np.ndarray,
    theta: float,
    dt: float,
    solver: Optional[ImplicitSolverConfig] = None,
) -> BatchPaths:
    """Integrate a (paths, steps) block of increments for a scalar problem."""
    if problem.scalar_ops is None:
        raise ContractViolationError(
            "integrate_batch requires a problem with scalar elementwise callables"
        )
    scheme = Scheme(scheme)
    cfg = solver or ImplicitSolverConfig()
    ops = problem.scalar_ops
    f, g, gp = ops.drift, ops.diffusion, ops.diffusion_prime
    fprime = _drift_prime(ops)

    dw = np.asarray(increments, dtype=float)
    if dw.ndim != 2:
        raise ContractViolationError("increments must have shape (paths, steps)")
    m, n_steps = dw.shape
    theta_dt = theta * dt

    y = np.broadcast_to(np.asarray(y0, dtype=float), (m,)).astype(float)
    alive = np.ones(m, dtype=bool)
    diverged_at = np.full(m, -1, dtype=int)
    y_out = np.empty((m, n_steps + 1))
    y_out[:, 0] = y
    z_out = None
    max_iters = 0

    def mark_dead(state, k):
        nonlocal alive
        bad = alive & (~np.isfinite(state) | (np.abs(state) > DIVERGENCE_LIMIT))
        if bad.any():
            diverged_at[bad] = k
            alive = alive & ~bad

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        if scheme is Scheme.SSTM:
            z = y - theta_dt * f(y)
            z_out = np.empty((m, n_steps + 1))
            z_out[:, 0] = z
            for k in range(n_steps):
                fy = f(y)
                gy = g(y)
                corr = gp(y) * gy
                dwk = dw[:, k]
                z = z + fy * dt + gy * dwk + 0.5 * corr * (dwk * dwk - dt)
                mark_dead(z, k)
                z = np.where(alive, z, np.nan)
                y_new, iters = _resolve_batch(f, fprime, z, theta_dt, cfg, alive)
                max_iters = max(max_iters, iters)
                y = np.where(alive, y_new, np.nan)
                mark_dead(y, k)
                y = np.where(alive, y, np.nan)
                z = np.where(alive, z, np.nan)
                z_out[:, k + 1] = z
                y_out[:, k + 1] = y
        else:
            for k in range(n_steps):
                fy = f(y)
                gy = g(y)
                corr = gp(y) * gy
                dwk = dw[:, k]
                explicit = (
                    y + (1.0 - theta) * dt * fy + gy * dwk + 0.5 * corr * (dwk * dwk - dt)
                )
                mark_dead(explicit, k)
                explicit = np.where(alive, explicit, np.nan)
                y_new, iters = _resolve_batch(f, fprime, explicit, theta_dt, cfg, alive)
                max_iters = max(max_iters, iters)
                y = np.where(alive, y_new, np.nan)
                mark_dead(y, k)
                y = np.where(alive, y, np.nan)
                y_out[:, k + 1] = y

    return BatchPaths(
        y=y_out, z=z_out, diverged_at=diverged_at, max_solver_iterations=max_iters
    )
