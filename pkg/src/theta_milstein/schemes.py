"""Split-step and stochastic theta-Milstein steppers with an implicit resolvent.

Both schemes advance dx = f(x) dt + g(x) dw with a single Brownian driver.
With correction direction L1g = (dg/dx) g and increment dw over a step dt:

  split-step (SSTM):   y_k solves  y = z_k + theta dt f(y)
                       z_{k+1} = z_k + f(y_k) dt + g(y_k) dw
                                 + L1g(y_k) (dw^2 - dt) / 2

  one-stage (STM):     y_{k+1} = y_k + theta dt f(y_{k+1})
                                 + (1 - theta) dt f(y_k) + g(y_k) dw
                                 + L1g(y_k) (dw^2 - dt) / 2

The y-iterates of the two schemes coincide (substitute
z_k = y_k - theta dt f(y_k)), which the test suite checks to solver
tolerance.  theta = 0 reduces both to the classical explicit Milstein
scheme, and for constant g both degenerate to theta-Euler steps.

The implicit stage y = z + theta dt f(y) has a unique solution whenever
theta mu dt < 1 (mu the one-sided Lipschitz constant of f).  It is solved by
Newton iteration with the analytic drift Jacobian when available (central
differences otherwise) and a fixed-point fallback.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    DivergenceError,
    DomainError,
    GuardViolationError,
    NonConvergenceError,
)
from .sde import SdeProblem, as_state, l1g, numerical_jacobian, stepsize_thresholds

__all__ = [
    "Scheme",
    "GuardPolicy",
    "SolverMethod",
    "ImplicitSolverConfig",
    "SchemeConfig",
    "RunFlags",
    "Trajectory",
    "DIVERGENCE_LIMIT",
    "check_guards",
    "implicit_solve",
    "sstm_step",
    "stm_step",
    "integrate",
    "trajectory_to_csv",
]

# States beyond this magnitude are treated as blown up even while still finite,
# so explicit-scheme divergence demos terminate without floating-point traps.
DIVERGENCE_LIMIT = 1e150


class Scheme(str, enum.Enum):
    SSTM = "sstm"
    STM = "stm"


class GuardPolicy(str, enum.Enum):
    STRICT = "strict"
    WARN = "warn"
    OFF = "off"


class SolverMethod(str, enum.Enum):
    NEWTON_WITH_FIXED_POINT_FALLBACK = "newton"
    FIXED_POINT_ONLY = "fixed_point"


@dataclass(frozen=True)
class ImplicitSolverConfig:
    rel_tol: float = 1e-12
    abs_tol: float = 1e-14
    max_iters: int = 50
    method: SolverMethod = SolverMethod.NEWTON_WITH_FIXED_POINT_FALLBACK

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise DomainError("solver tolerances must be > 0")
        if self.max_iters < 1:
            raise DomainError("max_iters must be >= 1")


@dataclass(frozen=True)
class SchemeConfig:
    theta: float
    dt: float
    solver: ImplicitSolverConfig = field(default_factory=ImplicitSolverConfig)
    guard_policy: GuardPolicy = GuardPolicy.WARN

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise DomainError(f"theta must lie in [0, 1], got {self.theta}")
        if self.dt <= 0:
            raise DomainError(f"dt must be > 0, got {self.dt}")


@dataclass
class RunFlags:
    """Per-run diagnostics collected while integrating."""

    guard_warnings: tuple[str, ...] = ()
    max_solver_iterations: int = 0
    total_solver_iterations: int = 0
    fixed_point_fallbacks: int = 0


@dataclass(frozen=True)
class Trajectory:
    """States on a uniform time grid; z states are kept for split-step runs."""

    times: np.ndarray
    y_states: np.ndarray
    z_states: Optional[np.ndarray]
    flags: RunFlags

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0


def check_guards(
    problem: SdeProblem, theta: float, dt: float, policy: GuardPolicy
) -> tuple[str, ...]:
    """Check dt against the theory thresholds for (problem, theta).

    Under ``STRICT`` a violation raises; under ``WARN`` it is returned as a
    flag string; under ``OFF`` nothing is checked.  Stability experiments
    cross these thresholds on purpose, hence the warn default elsewhere.
    """
    policy = GuardPolicy(policy)
    if policy is GuardPolicy.OFF:
        return ()
    thresholds = stepsize_thresholds(problem, theta)
    warnings = []
    if dt >= thresholds.wellposed_max:
        warnings.append(
            f"theta*mu*dt = {theta * problem.constants.mu * dt:.6g} >= 1: "
            "implicit stage may lose uniqueness"
        )
    if dt >= thresholds.moment_bound_max:
        warnings.append(
            f"dt = {dt:.6g} >= moment bound threshold {thresholds.moment_bound_max:.6g}"
        )
    if warnings and policy is GuardPolicy.STRICT:
        raise GuardViolationError("; ".join(warnings))
    return tuple(warnings)


def _drift_jacobian(problem: SdeProblem, y: np.ndarray) -> np.ndarray:
    if problem.drift_jacobian is not None:
        return np.asarray(problem.drift_jacobian(y), dtype=float)
    return numerical_jacobian(problem.drift, y)


def _residual_norm(r: np.ndarray) -> float:
    return float(np.max(np.abs(r)))


def _fixed_point(problem, z, theta_dt, cfg, start):
    y = start
    best = math.inf
    for it in range(cfg.max_iters):
        fy = np.asarray(problem.drift(y), dtype=float)
        r = y - z - theta_dt * fy
        rn = _residual_norm(r)
        best = min(best, rn)
        if rn <= cfg.abs_tol + cfg.rel_tol * float(np.max(np.abs(y))):
            return y, it + 1
        y = z + theta_dt * fy
        if not np.all(np.isfinite(y)):
            break
    raise NonConvergenceError(
        f"implicit stage did not converge within {cfg.max_iters} iterations "
        f"(best residual {best:.3e})",
        residual=best,
        iterations=cfg.max_iters,
    )


def _resolve(problem, z, theta, dt, cfg):
    """Solve y = z + theta dt f(y); returns (y, iterations, fallbacks)."""
    theta_dt = theta * dt
    if theta_dt == 0.0:
        return z, 0, 0
    if not np.all(np.isfinite(z)):
        raise DomainError("implicit stage input must be finite")

    if cfg.method is SolverMethod.FIXED_POINT_ONLY:
        y, iters = _fixed_point(problem, z, theta_dt, cfg, z + theta_dt * np.asarray(problem.drift(z), dtype=float))
        return y, iters, 0

    y = z + theta_dt * np.asarray(problem.drift(z), dtype=float)
    best = math.inf
    iters = 0
    newton_failed = False
    eye = np.eye(problem.dim)

    def newton_step(y, r):
        jac = eye - theta_dt * _drift_jacobian(problem, y)
        if problem.dim == 1:
            d = jac[0, 0]
            if d == 0.0 or not math.isfinite(d):
                return None
            return r / d
        try:
            step = np.linalg.solve(jac, r)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(step)):
            return None
        return step

    for it in range(cfg.max_iters):
        iters = it + 1
        fy = np.asarray(problem.drift(y), dtype=float)
        r = y - z - theta_dt * fy
        rn = _residual_norm(r)
        if not math.isfinite(rn):
            newton_failed = True
            break
        best = min(best, rn)
        if rn <= cfg.abs_tol + cfg.rel_tol * float(np.max(np.abs(y))):
            # one guarded polishing update, so the returned root sits far
            # below the advertised tolerance
            step = newton_step(y, r)
            if step is not None and _residual_norm(step) <= 1e-6 * (
                1.0 + float(np.max(np.abs(y)))
            ):
                y = y - step
            return y, iters, 0
        step = newton_step(y, r)
        if step is None:
            newton_failed = True
            break
        y = y - step

    # Singular or runaway Newton: retry as a plain fixed-point iteration
    # before giving up (safe contraction for small theta mu dt).
    start = z + theta_dt * np.asarray(problem.drift(z), dtype=float)
    if not np.all(np.isfinite(start)):
        start = z
    try:
        y, fp_iters = _fixed_point(problem, z, theta_dt, cfg, start)
        return y, iters + fp_iters, 1
    except NonConvergenceError as exc:
        residual = min(best, exc.residual if exc.residual is not None else math.inf)
        raise NonConvergenceError(
            "implicit stage did not converge "
            f"({'Newton failed, ' if newton_failed else ''}fixed-point fallback failed; "
            f"best residual {residual:.3e})",
            residual=residual,
            iterations=iters + cfg.max_iters,
        ) from None


def implicit_solve(
    problem: SdeProblem,
    z,
    theta: float,
    dt: float,
    cfg: Optional[ImplicitSolverConfig] = None,
) -> np.ndarray:
    """Resolvent of the implicit stage: the y with y = z + theta dt f(y).

    Newton iteration from the explicit predictor z + theta dt f(z), with a
    fixed-point fallback.  The residual is driven below
    abs_tol + rel_tol |y| in the max norm.  For theta = 0 the stage is
    trivial and z is returned unchanged.
    """
    z = as_state(problem, z)
    cfg = cfg or ImplicitSolverConfig()
    y, _, _ = _resolve(problem, z, theta, dt, cfg)
    return y


def sstm_step(
    problem: SdeProblem,
    z_k,
    dw: float,
    theta: float,
    dt: float,
    cfg: Optional[ImplicitSolverConfig] = None,
):
    """One split-step update; returns (z_next, y_k).

    y_k is the resolvent applied to z_k; the z update adds the drift, the
    diffusion increment, and the correction term L1g(y_k) (dw^2 - dt) / 2.
    """
    z_k = as_state(problem, z_k)
    cfg = cfg or ImplicitSolverConfig()
    y_k, _, _ = _resolve(problem, z_k, theta, dt, cfg)
    fy = np.asarray(problem.drift(y_k), dtype=float)
    gy = np.asarray(problem.diffusion(y_k), dtype=float)
    corr = l1g(problem, y_k)
    z_next = z_k + fy * dt + gy * dw + 0.5 * corr * (dw * dw - dt)
    return z_next, y_k


def stm_step(
    problem: SdeProblem,
    y_k,
    dw: float,
    theta: float,
    dt: float,
    cfg: Optional[ImplicitSolverConfig] = None,
) -> np.ndarray:
    """One stochastic theta-Milstein update; returns y_{k+1}.

    The explicit part y_k + (1 - theta) dt f(y_k) + g(y_k) dw
    + L1g(y_k)(dw^2 - dt)/2 is assembled first and the implicit resolvent is
    applied to it.  With theta = 0 this is exactly the classical Milstein
    update.
    """
    y_k = as_state(problem, y_k)
    cfg = cfg or ImplicitSolverConfig()
    fy = np.asarray(problem.drift(y_k), dtype=float)
    gy = np.asarray(problem.diffusion(y_k), dtype=float)
    corr = l1g(problem, y_k)
    explicit = y_k + (1.0 - theta) * dt * fy + gy * dw + 0.5 * corr * (dw * dw - dt)
    if not np.all(np.isfinite(explicit)):
        raise DivergenceError("explicit part of the step is not finite")
    y_next, _, _ = _resolve(problem, explicit, theta, dt, cfg)
    return y_next


def _check_state(y: np.ndarray, step: int) -> None:
    if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > DIVERGENCE_LIMIT:
        raise DivergenceError(
            f"state diverged at step {step} (|y| not finite or > {DIVERGENCE_LIMIT:g})",
            step=step,
        )


def integrate(
    problem: SdeProblem,
    scheme: Scheme | str,
    y0,
    increments,
    config: SchemeConfig,
) -> Trajectory:
    """Run a full trajectory driven by the given Brownian increments.

    A pure function of its inputs: the same (problem, y0, increments, config)
    always produce the same trajectory.  Divergence raises with the index of
    the offending step; guard handling follows ``config.guard_policy``.
    """
    scheme = Scheme(scheme)
    y0 = as_state(problem, y0)
    if not np.all(np.isfinite(y0)):
        raise DomainError("y0 must be finite")
    dw = np.asarray(increments, dtype=float)
    if dw.ndim != 1:
        raise DomainError("increments must be a one-dimensional array")
    n_steps = dw.size
    theta, dt, cfg = config.theta, config.dt, config.solver

    warnings = check_guards(problem, theta, dt, config.guard_policy)
    flags = RunFlags(guard_warnings=warnings)

    times = np.arange(n_steps + 1) * dt
    y_states = np.empty((n_steps + 1, problem.dim))
    y_states[0] = y0
    z_states = None

    def record(iters, fallbacks):
        flags.total_solver_iterations += iters
        flags.max_solver_iterations = max(flags.max_solver_iterations, iters)
        flags.fixed_point_fallbacks += fallbacks

    try:
        with np.errstate(over="ignore", invalid="ignore"):
            if scheme is Scheme.SSTM:
                z_states = np.empty((n_steps + 1, problem.dim))
                y = y0
                z = y0 - theta * dt * np.asarray(problem.drift(y0), dtype=float)
                z_states[0] = z
                for k in range(n_steps):
                    fy = np.asarray(problem.drift(y), dtype=float)
                    gy = np.asarray(problem.diffusion(y), dtype=float)
                    corr = l1g(problem, y)
                    z = z + fy * dt + gy * dw[k] + 0.5 * corr * (dw[k] * dw[k] - dt)
                    _check_state(z, k)
                    y, iters, fallbacks = _resolve(problem, z, theta, dt, cfg)
                    record(iters, fallbacks)
                    _check_state(y, k)
                    z_states[k + 1] = z
                    y_states[k + 1] = y
            else:
                y = y0
                for k in range(n_steps):
                    fy = np.asarray(problem.drift(y), dtype=float)
                    gy = np.asarray(problem.diffusion(y), dtype=float)
                    corr = l1g(problem, y)
                    explicit = (
                        y + (1.0 - theta) * dt * fy + gy * dw[k] + 0.5 * corr * (dw[k] * dw[k] - dt)
                    )
                    _check_state(explicit, k)
                    y, iters, fallbacks = _resolve(problem, explicit, theta, dt, cfg)
                    record(iters, fallbacks)
                    _check_state(y, k)
                    y_states[k + 1] = y
    except DivergenceError as exc:
        if exc.step is not None:
            exc.partial_y = y_states[: exc.step + 1].copy()
        raise

    return Trajectory(times=times, y_states=y_states, z_states=z_states, flags=flags)


def trajectory_to_csv(trajectory: Trajectory, fileobj) -> None:
    """Write a trajectory as CSV: t, y_1..y_n and, for split-step runs, z_1..z_n."""
    n = trajectory.y_states.shape[1]
    cols = ["t"] + [f"y_{j + 1}" for j in range(n)]
    if trajectory.z_states is not None:
        cols += [f"z_{j + 1}" for j in range(n)]
    fileobj.write(",".join(cols) + "\n")
    for k, t in enumerate(trajectory.times):
        row = [format(t, ".17g")]
        row += [format(v, ".17g") for v in trajectory.y_states[k]]
        if trajectory.z_states is not None:
            row += [format(v, ".17g") for v in trajectory.z_states[k]]
        fileobj.write(",".join(row) + "\n")
