"""Experiment engines: strong-order estimation, moment boundedness, and
mean-square stability, plus closed-form evaluators for the linear test
equation dx = mu x dt + c x dw.

All Monte Carlo estimators draw path ``i`` from the stream keyed on
``(seed, i)`` and reduce per-path results in path order over fixed-size
chunks, so outputs are bitwise identical for any worker count.  Statistical
acceptance throughout uses three-standard-error bands with fixed seeds.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import noise
from .batch import integrate_batch
from .errors import (
    DivergenceError,
    DomainError,
    MissingConstantError,
    ReferenceFailureError,
)
from .schemes import (
    GuardPolicy,
    ImplicitSolverConfig,
    Scheme,
    SchemeConfig,
    check_guards,
    integrate,
)
from .sde import SdeProblem, as_state

__all__ = [
    "ConvergenceReport",
    "MomentBoundReport",
    "StabilityReport",
    "RegionRow",
    "RegionTable",
    "AmplificationCheck",
    "estimate_strong_order",
    "check_moment_bound",
    "estimate_ms_decay",
    "gamma_delta",
    "gamma_delta_stability_max",
    "linear_amplification",
    "linear_stability_threshold",
    "classify_linear_regime",
    "bracket_linear_threshold",
    "linear_region_scan",
    "linear_second_moments",
    "amplification_mc",
    "fit_loglog_slope",
]

# Fixed chunking of the path index space; never derived from the worker
# count, so that reductions are invariant under parallel execution.
CHUNK_PATHS = 256


def _chunk_ranges(total: int) -> list[tuple[int, int]]:
    return [(lo, min(lo + CHUNK_PATHS, total)) for lo in range(0, total, CHUNK_PATHS)]


def _map_chunks(fn, ranges, workers: int):
    if workers <= 1:
        return [fn(r) for r in ranges]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, ranges))


def fit_loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Unweighted least-squares slope of log y against log x."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def _require_even_moment(p: int) -> int:
    p = int(p)
    if p < 2 or p % 2:
        raise DomainError(f"moment order p must be an even integer >= 2, got {p}")
    return p


def _steps_for(t_end: float, dt: float) -> int:
    steps = round(t_end / dt)
    if steps < 1 or abs(steps * dt - t_end) > 1e-9 * max(t_end, 1.0):
        raise DomainError(f"dt = {dt} does not divide t_end = {t_end}")
    return steps


def _scalar_y0(problem: SdeProblem, y0) -> float:
    return float(as_state(problem, y0)[0])


# ---------------------------------------------------------------------------
# strong convergence order
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceReport:
    """Per-stepsize strong errors with the fitted log-log slope.

    ``errors[l]`` estimates (E[ max_k |x(t_k) - y_k|^p ])^(1/p) at stepsize
    ``stepsizes[l]``; ``fitted_order`` is the least-squares slope of
    log error against log dt (NaN when the errors are degenerate).
    """

    stepsizes: tuple[float, ...]
    errors: tuple[float, ...]
    standard_errors: tuple[float, ...]
    fitted_order: float
    p: int
    paths: int
    reference: str
    scheme: str
    theta: float
    problem: str
    t_end: float
    seed: int
    degenerate: bool = False
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "stepsizes": list(self.stepsizes),
            "errors": list(self.errors),
            "standard_errors": list(self.standard_errors),
            "fitted_order": self.fitted_order,
            "p": self.p,
            "paths": self.paths,
            "reference": self.reference,
            "scheme": self.scheme,
            "theta": self.theta,
            "problem": self.problem,
            "t_end": self.t_end,
            "seed": self.seed,
            "degenerate": self.degenerate,
            "flags": list(self.flags),
        }

    def write_csv(self, fileobj) -> None:
        fileobj.write("dt,error,stderr,p,paths\n")
        for dt, err, se in zip(self.stepsizes, self.errors, self.standard_errors):
            fileobj.write(
                f"{dt:.17g},{err:.17g},{se:.17g},{self.p},{self.paths}\n"
            )


def _validate_stepsizes(stepsizes, t_end) -> tuple[np.ndarray, np.ndarray]:
    dts = np.asarray(sorted(set(float(s) for s in stepsizes), reverse=True))
    if dts.size < 2:
        raise DomainError("need at least two distinct stepsizes")
    if len(dts) != len(list(stepsizes)):
        raise DomainError("stepsizes must be distinct")
    counts = np.array([_steps_for(t_end, dt) for dt in dts])
    finest = counts[-1]
    for n in counts:
        if finest % n:
            raise DomainError(
                "every stepsize must be an integer multiple of the finest one"
            )
    return dts, counts


def estimate_strong_order(
    problem: SdeProblem,
    scheme: Scheme | str,
    theta: float,
    y0,
    t_end: float,
    stepsizes: Sequence[float],
    paths: int,
    p: int,
    seed: int,
    *,
    guard_policy: GuardPolicy = GuardPolicy.WARN,
    solver: Optional[ImplicitSolverConfig] = None,
    workers: int = 1,
    reference_refinement: int = 4,
) -> ConvergenceReport:
    """Estimate the strong order by coupled-path Monte Carlo.

    Every path draws one fine-grid Brownian path; all stepsizes are driven by
    exact aggregations of those increments.  The reference is the closed-form
    pathwise solution on the fine grid when the problem has one, otherwise a
    fully implicit (theta = 1) STM trajectory on a grid at least
    ``reference_refinement`` times finer than the smallest tested stepsize.
    The per-path error at a level is the max over that level's grid points of
    the state error norm; levels aggregate as (mean of p-th powers)^(1/p).
    """
    scheme = Scheme(scheme)
    p = _require_even_moment(p)
    if paths < 100:
        raise DomainError(f"paths must be >= 100, got {paths}")
    dts, counts = _validate_stepsizes(stepsizes, t_end)

    use_exact = problem.exact_solution is not None
    if use_exact:
        fine_steps = int(counts[-1])
        reference = "exact_solution"
    else:
        if reference_refinement < 4:
            raise DomainError("reference_refinement must be >= 4")
        fine_steps = int(counts[-1]) * int(reference_refinement)
        reference = "fine_grid_self"
    dt_fine = t_end / fine_steps

    flags: list[str] = []
    for dt in dts:
        for w in check_guards(problem, theta, float(dt), guard_policy):
            if w not in flags:
                flags.append(w)

    scalar = problem.scalar_ops is not None
    y0_s = _scalar_y0(problem, y0) if scalar else None
    y0_v = as_state(problem, y0)
    factors = [fine_steps // int(n) for n in counts]
    t_fine = np.arange(fine_steps + 1) * dt_fine

    def chunk_scalar(bounds):
        lo, hi = bounds
        m = hi - lo
        dw = np.empty((m, fine_steps))
        for i, pidx in enumerate(range(lo, hi)):
            dw[i] = noise.normal_increments(seed, pidx, dt_fine, fine_steps)
        if use_exact:
            w = noise.brownian_values(dw)
            ref = np.asarray(problem.scalar_ops.exact(y0_s, t_fine[None, :], w), float)
        else:
            res = integrate_batch(problem, Scheme.STM, y0_s, dw, 1.0, dt_fine, solver)
            if res.divergent_paths:
                raise ReferenceFailureError(
                    f"reference trajectory diverged for {res.divergent_paths} path(s)"
                )
            ref = res.y
        out = np.empty((dts.size, m))
        with np.errstate(over="ignore", invalid="ignore"):
            for l, factor in enumerate(factors):
                dwl = noise.coarsen_array(dw, factor)
                res = integrate_batch(problem, scheme, y0_s, dwl, theta, float(dts[l]), solver)
                sup = np.max(np.abs(ref[:, ::factor] - res.y), axis=1)
                sup[res.diverged_at >= 0] = np.inf
                out[l] = sup ** p
        return out

    def chunk_generic(bounds):
        lo, hi = bounds
        out = np.empty((dts.size, hi - lo))
        for i, pidx in enumerate(range(lo, hi)):
            grid = noise.generate(seed, pidx, t_end, fine_steps)
            if use_exact:
                w = noise.brownian_values(grid.fine_increments)
                ref = np.stack(
                    [problem.exact_solution(y0_v, t_fine[j], w[j]) for j in range(fine_steps + 1)]
                )
            else:
                try:
                    traj = integrate(
                        problem,
                        Scheme.STM,
                        y0_v,
                        grid.fine_increments,
                        SchemeConfig(theta=1.0, dt=dt_fine, solver=solver or ImplicitSolverConfig(), guard_policy=GuardPolicy.OFF),
                    )
                except DivergenceError as exc:
                    raise ReferenceFailureError(
                        f"reference trajectory diverged at step {exc.step}"
                    ) from exc
                ref = traj.y_states
            with np.errstate(over="ignore", invalid="ignore"):
                for l, factor in enumerate(factors):
                    dwl = noise.coarsen_array(grid.fine_increments, factor)
                    cfg = SchemeConfig(
                        theta=theta,
                        dt=float(dts[l]),
                        solver=solver or ImplicitSolverConfig(),
                        guard_policy=GuardPolicy.OFF,
                    )
                    try:
                        traj = integrate(problem, scheme, y0_v, dwl, cfg)
                        diff = np.linalg.norm(ref[::factor] - traj.y_states, axis=1)
                        out[l, i] = float(diff.max()) ** p
                    except DivergenceError:
                        out[l, i] = np.inf
        return out

    worker = chunk_scalar if scalar else chunk_generic
    pieces = _map_chunks(worker, _chunk_ranges(paths), workers)
    sup_p = np.concatenate(pieces, axis=1)

    means = sup_p.mean(axis=1)
    errors = means ** (1.0 / p)
    ses = np.empty_like(errors)
    for l in range(dts.size):
        se_mean = float(sup_p[l].std(ddof=1)) / math.sqrt(paths)
        ses[l] = se_mean * errors[l] / (p * means[l]) if means[l] > 0 else 0.0

    usable = np.isfinite(errors) & (errors > 0)
    degenerate = not usable.all()
    fitted = fit_loglog_slope(dts[usable], errors[usable]) if usable.sum() >= 2 else math.nan
    if degenerate:
        flags.append("degenerate error values; fitted order unreliable")

    return ConvergenceReport(
        stepsizes=tuple(float(x) for x in dts),
        errors=tuple(float(x) for x in errors),
        standard_errors=tuple(float(x) for x in ses),
        fitted_order=fitted,
        p=p,
        paths=paths,
        reference=reference,
        scheme=scheme.value,
        theta=float(theta),
        problem=problem.name,
        t_end=float(t_end),
        seed=int(seed),
        degenerate=degenerate,
        flags=tuple(flags),
    )


# ---------------------------------------------------------------------------
# moment boundedness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MomentBoundReport:
    """Monte Carlo estimate of E[ max_k |y_k|^p ] with divergence accounting.

    Divergent paths are excluded from the estimate and counted; the
    ``all_finite`` flag is the headline boundedness verdict.
    """

    estimate: float
    std_error: float
    p: int
    paths: int
    divergent_paths: int
    dt: float
    theta: float
    t_end: float
    scheme: str
    problem: str
    seed: int

    @property
    def all_finite(self) -> bool:
        return self.divergent_paths == 0

    @property
    def divergent_fraction(self) -> float:
        return self.divergent_paths / self.paths

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "std_error": self.std_error,
            "p": self.p,
            "paths": self.paths,
            "divergent_paths": self.divergent_paths,
            "all_finite": self.all_finite,
            "dt": self.dt,
            "theta": self.theta,
            "t_end": self.t_end,
            "scheme": self.scheme,
            "problem": self.problem,
            "seed": self.seed,
        }


def check_moment_bound(
    problem: SdeProblem,
    scheme: Scheme | str,
    theta: float,
    y0,
    t_end: float,
    dt: float,
    paths: int,
    p: int,
    seed: int,
    *,
    guard_policy: GuardPolicy = GuardPolicy.WARN,
    solver: Optional[ImplicitSolverConfig] = None,
    workers: int = 1,
) -> MomentBoundReport:
    """Estimate E[ max_k |y_k|^p ] over [0, t_end]; divergent paths are counted,
    never raised."""
    scheme = Scheme(scheme)
    p = _require_even_moment(p)
    if paths < 1:
        raise DomainError("paths must be >= 1")
    steps = _steps_for(t_end, dt)
    check_guards(problem, theta, dt, guard_policy)

    scalar = problem.scalar_ops is not None
    y0_s = _scalar_y0(problem, y0) if scalar else None
    y0_v = as_state(problem, y0)

    def chunk_scalar(bounds):
        lo, hi = bounds
        m = hi - lo
        dw = np.empty((m, steps))
        for i, pidx in enumerate(range(lo, hi)):
            dw[i] = noise.normal_increments(seed, pidx, dt, steps)
        res = integrate_batch(problem, scheme, y0_s, dw, theta, dt, solver)
        with np.errstate(over="ignore", invalid="ignore"):
            sup = np.nanmax(np.abs(res.y), axis=1)
            return sup ** p, res.diverged_at >= 0

    def chunk_generic(bounds):
        lo, hi = bounds
        sup_p = np.empty(hi - lo)
        diverged = np.zeros(hi - lo, dtype=bool)
        cfg = SchemeConfig(
            theta=theta, dt=dt, solver=solver or ImplicitSolverConfig(), guard_policy=GuardPolicy.OFF
        )
        with np.errstate(over="ignore", invalid="ignore"):
            for i, pidx in enumerate(range(lo, hi)):
                dw = noise.normal_increments(seed, pidx, dt, steps)
                try:
                    traj = integrate(problem, scheme, y0_v, dw, cfg)
                    sup_p[i] = float(np.linalg.norm(traj.y_states, axis=1).max()) ** p
                except DivergenceError:
                    sup_p[i] = np.nan
                    diverged[i] = True
        return sup_p, diverged

    worker = chunk_scalar if scalar else chunk_generic
    pieces = _map_chunks(worker, _chunk_ranges(paths), workers)
    sup_p = np.concatenate([a for a, _ in pieces])
    diverged = np.concatenate([b for _, b in pieces])

    finite = ~diverged
    n_fin = int(finite.sum())
    if n_fin:
        estimate = float(sup_p[finite].mean())
        se = float(sup_p[finite].std(ddof=1)) / math.sqrt(n_fin) if n_fin > 1 else math.nan
    else:
        estimate, se = math.inf, math.nan

    return MomentBoundReport(
        estimate=estimate,
        std_error=se,
        p=p,
        paths=paths,
        divergent_paths=int(diverged.sum()),
        dt=float(dt),
        theta=float(theta),
        t_end=float(t_end),
        scheme=scheme.value,
        problem=problem.name,
        seed=int(seed),
    )


# ---------------------------------------------------------------------------
# mean-square decay
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StabilityReport:
    """Second-moment trace E|y_k|^2 with a tail-half log-linear decay fit.

    ``fitted_decay`` is the negative slope of log E|y_k|^2 against t over the
    tail half of the grid (transients discarded); +inf flags total underflow
    and -inf flags blow-up before a fit was possible.
    """

    dt: float
    theta: float
    times: tuple[float, ...]
    second_moments: tuple[float, ...]
    std_errors: tuple[float, ...]
    fitted_decay: float
    predicted_gamma_delta: Optional[float]
    paths: int
    scheme: str
    problem: str
    seed: int
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "dt": self.dt,
            "theta": self.theta,
            "times": list(self.times),
            "second_moments": list(self.second_moments),
            "std_errors": list(self.std_errors),
            "fitted_decay": self.fitted_decay,
            "predicted_gamma_delta": self.predicted_gamma_delta,
            "paths": self.paths,
            "scheme": self.scheme,
            "problem": self.problem,
            "seed": self.seed,
            "flags": list(self.flags),
        }

    def write_csv(self, fileobj) -> None:
        fileobj.write("t,second_moment,stderr\n")
        for t, m, se in zip(self.times, self.second_moments, self.std_errors):
            fileobj.write(f"{t:.17g},{m:.17g},{se:.17g}\n")


def estimate_ms_decay(
    problem: SdeProblem,
    scheme: Scheme | str,
    theta: float,
    dt: float,
    y0,
    t_end: float,
    paths: int,
    seed: int,
    *,
    guard_policy: GuardPolicy = GuardPolicy.WARN,
    solver: Optional[ImplicitSolverConfig] = None,
    workers: int = 1,
) -> StabilityReport:
    """Monte Carlo estimate of the exponential mean-square decay rate."""
    scheme = Scheme(scheme)
    if paths < 1000:
        raise DomainError(f"paths must be >= 1000 for a decay fit, got {paths}")
    steps = _steps_for(t_end, dt)
    if steps < 20:
        raise DomainError(f"need at least 20 steps for a tail regression, got {steps}")
    check_guards(problem, theta, dt, guard_policy)

    scalar = problem.scalar_ops is not None
    y0_s = _scalar_y0(problem, y0) if scalar else None
    y0_v = as_state(problem, y0)

    def chunk_scalar(bounds):
        lo, hi = bounds
        m = hi - lo
        dw = np.empty((m, steps))
        for i, pidx in enumerate(range(lo, hi)):
            dw[i] = noise.normal_increments(seed, pidx, dt, steps)
        res = integrate_batch(problem, scheme, y0_s, dw, theta, dt, solver)
        with np.errstate(over="ignore", invalid="ignore"):
            sq = res.y ** 2
            sq[~np.isfinite(sq)] = np.inf
            return sq.sum(axis=0), (sq ** 2).sum(axis=0)

    def chunk_generic(bounds):
        lo, hi = bounds
        s2 = np.zeros(steps + 1)
        s4 = np.zeros(steps + 1)
        cfg = SchemeConfig(
            theta=theta, dt=dt, solver=solver or ImplicitSolverConfig(), guard_policy=GuardPolicy.OFF
        )
        with np.errstate(over="ignore", invalid="ignore"):
            for pidx in range(lo, hi):
                dw = noise.normal_increments(seed, pidx, dt, steps)
                try:
                    traj = integrate(problem, scheme, y0_v, dw, cfg)
                    sq = np.sum(traj.y_states ** 2, axis=1)
                except DivergenceError as exc:
                    sq = np.full(steps + 1, np.inf)
                    if exc.partial_y is not None:
                        known = np.sum(np.asarray(exc.partial_y) ** 2, axis=1)
                        sq[: known.size] = known
                s2 += sq
                s4 += sq ** 2
        return s2, s4

    worker = chunk_scalar if scalar else chunk_generic
    with np.errstate(over="ignore", invalid="ignore"):
        pieces = _map_chunks(worker, _chunk_ranges(paths), workers)
        s2 = np.zeros(steps + 1)
        s4 = np.zeros(steps + 1)
        for a, b in pieces:
            s2 += a
            s4 += b
        moments = s2 / paths
        var = np.maximum(s4 / paths - moments ** 2, 0.0)
        ses = np.sqrt(var / paths)

    times = np.arange(steps + 1) * dt
    flags: list[str] = []
    tail = np.arange(steps // 2, steps + 1)
    good = tail[np.isfinite(moments[tail]) & (moments[tail] > 0)]
    if np.all(moments[tail] == 0):
        fitted = math.inf
        flags.append("second moments underflowed to zero on the fit window")
    elif good.size < 2:
        fitted = -math.inf
        flags.append("trajectories diverged before a decay fit was possible")
    else:
        if good.size < 10:
            flags.append("fewer than 10 usable points in the tail fit")
        fitted = -float(np.polyfit(times[good], np.log(moments[good]), 1)[0])

    predicted: Optional[float]
    consts = problem.constants
    try:
        if consts.gamma is None:
            raise MissingConstantError("gamma not declared")
        predicted = gamma_delta(
            theta, dt, consts.gamma, k_linear=consts.k_linear, sigma=consts.sigma
        )
    except (DomainError, MissingConstantError):
        predicted = None

    return StabilityReport(
        dt=float(dt),
        theta=float(theta),
        times=tuple(float(t) for t in times),
        second_moments=tuple(float(m) for m in moments),
        std_errors=tuple(float(s) for s in ses),
        fitted_decay=fitted,
        predicted_gamma_delta=predicted,
        paths=paths,
        scheme=scheme.value,
        problem=problem.name,
        seed=int(seed),
        flags=tuple(flags),
    )


# ---------------------------------------------------------------------------
# closed forms for the decay rate and the linear test equation
# ---------------------------------------------------------------------------


def gamma_delta_stability_max(
    theta: float, gamma: float, k_linear: Optional[float] = None, sigma: float = 0.0
) -> float:
    """Largest stepsize for which the decay-rate formula of the active branch holds."""
    if not 0.0 <= theta <= 1.0:
        raise DomainError(f"theta must lie in [0, 1], got {theta}")
    if gamma is None or gamma <= 0:
        raise DomainError("gamma must be > 0")
    if sigma < 0:
        raise DomainError("sigma must be >= 0")
    if theta <= 0.5:
        if k_linear is None:
            raise MissingConstantError(
                "the theta <= 1/2 branch needs the linear growth constant of the drift"
            )
        denom = (1.0 - 2.0 * theta) * k_linear + 0.5 * sigma
        return gamma / denom if denom > 0 else math.inf
    return 2.0 * gamma / sigma if sigma > 0 else math.inf


def gamma_delta(
    theta: float,
    dt: float,
    gamma: float,
    k_linear: Optional[float] = None,
    sigma: float = 0.0,
) -> float:
    """Exponential mean-square decay rate of the schemes at stepsize dt.

    Branch theta <= 1/2 (needs the linear growth constant K):

        gamma_dt = -log(1 - (gamma - (1-2 theta) K dt - sigma dt / 2) dt
                         / (1 + theta dt sqrt(K))^2) / dt

    Branch theta > 1/2:

        gamma_dt = -log(1 - (2 theta - 1)(gamma - sigma dt / 2) dt
                         / (2 theta - 1 + (gamma - sigma dt / 2) dt theta^2)) / dt

    Both tend to gamma as dt -> 0.  dt must lie below the branch threshold.
    """
    limit = gamma_delta_stability_max(theta, gamma, k_linear=k_linear, sigma=sigma)
    if dt <= 0:
        raise DomainError("dt must be > 0")
    if dt >= limit:
        raise DomainError(
            f"dt = {dt:.6g} is not below the stability threshold {limit:.6g}"
        )
    if theta <= 0.5:
        mu_dt = gamma - (1.0 - 2.0 * theta) * k_linear * dt - 0.5 * sigma * dt
        arg = 1.0 - mu_dt * dt / (1.0 + theta * dt * math.sqrt(k_linear)) ** 2
        if arg <= 0:
            raise DomainError(
                "decay-rate formula is outside its domain at this stepsize"
            )
        return -math.log(arg) / dt
    b = gamma - 0.5 * sigma * dt
    arg = 1.0 - (2.0 * theta - 1.0) * b * dt / (2.0 * theta - 1.0 + b * dt * theta * theta)
    return -math.log(arg) / dt


def linear_amplification(theta: float, mu: float, c: float, dt: float) -> float:
    """Exact one-step second-moment multiplier of the schemes on dx = mu x dt + c x dw:

        R = ([1 + (1 - theta) mu dt]^2 + c^2 dt + c^4 dt^2 / 2) / (1 - theta mu dt)^2

    so E|y_{k+1}|^2 = R E|y_k|^2, and R < 1 is exactly mean-square stability
    of the scheme.
    """
    den = 1.0 - theta * mu * dt
    if den == 0.0:
        raise DomainError("theta * mu * dt == 1: amplification is singular")
    num = (1.0 + (1.0 - theta) * mu * dt) ** 2 + c * c * dt + 0.5 * c ** 4 * dt * dt
    return num / (den * den)


def linear_stability_threshold(theta: float, mu: float, c: float) -> float:
    """Critical stepsize where R crosses 1:  (-2 mu - c^2) / (c^4/2 + (1-2 theta) mu^2).

    With a positive denominator the scheme is mean-square stable exactly for
    dt below the returned value; with a negative denominator exactly above it
    (so a negative return value there means stable for every dt > 0).
    """
    denom = 0.5 * c ** 4 + (1.0 - 2.0 * theta) * mu * mu
    if denom == 0.0:
        raise DomainError("amplification is flat in dt; no finite crossing")
    return (-2.0 * mu - c * c) / denom


def classify_linear_regime(theta: float, mu: float, c: float) -> str:
    """Stability regime of the scheme on the linear test equation.

    ``conditional``          theta <= 1/2: stable only below the threshold.
    ``diffusion_dominated``  theta > 1/2 and mu^2 < c^4 / (2 (2 theta - 1)):
                             stable only below the threshold.
    ``unconditional``        theta > 1/2 and mu^2 >= c^4 / (2 (2 theta - 1)):
                             stable for every stepsize (given 2 mu + c^2 < 0).
    """
    if theta <= 0.5:
        return "conditional"
    if mu * mu < c ** 4 / (2.0 * (2.0 * theta - 1.0)):
        return "diffusion_dominated"
    return "unconditional"


def bracket_linear_threshold(
    theta: float, mu: float, c: float, tol: float = 1e-12
) -> float:
    """Locate the nontrivial root of R(dt) - 1 by bisection.

    Brackets around the closed-form crossing (avoiding the trivial root at
    dt = 0 and the pole at theta mu dt = 1) and bisects on evaluations of the
    amplification factor alone, giving an independent check of the closed
    form.
    """
    target = linear_stability_threshold(theta, mu, c)
    if target == 0.0:
        raise DomainError("threshold is exactly zero; nothing to bracket")
    width = 0.4 * abs(target)
    if theta * mu != 0.0:
        pole = 1.0 / (theta * mu)
        gap = abs(pole - target)
        if gap == 0.0:
            raise DomainError("threshold coincides with the amplification pole")
        width = min(width, 0.4 * gap)

    def h(dt):
        return linear_amplification(theta, mu, c, dt) - 1.0

    lo, hi = target - width, target + width
    flo, fhi = h(lo), h(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo * fhi > 0:
        raise DomainError("no sign change near the predicted threshold")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        fm = h(mid)
        if fm == 0.0:
            return mid
        if flo * fm < 0:
            hi, fhi = mid, fm
        else:
            lo, flo = mid, fm
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class RegionRow:
    theta: float
    dt: float
    mu: float
    c: float
    amplification: float
    sde_stable: bool
    scheme_stable: bool
    regime: str


@dataclass(frozen=True)
class RegionTable:
    rows: tuple[RegionRow, ...]

    def to_dict(self) -> dict:
        return {
            "rows": [
                {
                    "theta": r.theta,
                    "dt": r.dt,
                    "mu": r.mu,
                    "c": r.c,
                    "R": r.amplification,
                    "sde_stable": r.sde_stable,
                    "scheme_stable": r.scheme_stable,
                    "regime": r.regime,
                }
                for r in self.rows
            ]
        }

    def write_csv(self, fileobj) -> None:
        fileobj.write("theta,dt,mu,c,R,sde_stable,scheme_stable,regime\n")
        for r in self.rows:
            fileobj.write(
                f"{r.theta:.17g},{r.dt:.17g},{r.mu:.17g},{r.c:.17g},"
                f"{r.amplification:.17g},{str(r.sde_stable).lower()},"
                f"{str(r.scheme_stable).lower()},{r.regime}\n"
            )


def linear_region_scan(
    theta: float,
    dt_grid: Sequence[float],
    mu_grid: Sequence[float],
    c_grid: Sequence[float],
) -> RegionTable:
    """Classify scheme stability over a (dt, mu, c) grid at fixed theta."""
    dt_grid = [float(x) for x in dt_grid]
    mu_grid = [float(x) for x in mu_grid]
    c_grid = [float(x) for x in c_grid]
    if not dt_grid or not mu_grid or not c_grid:
        raise DomainError("all grids must be non-empty")
    rows = []
    for mu in mu_grid:
        for c in c_grid:
            regime = classify_linear_regime(theta, mu, c)
            sde_stable = 2.0 * mu + c * c < 0.0
            for dt in dt_grid:
                try:
                    amp = linear_amplification(theta, mu, c, dt)
                except DomainError:
                    amp = math.inf
                rows.append(
                    RegionRow(
                        theta=theta,
                        dt=dt,
                        mu=mu,
                        c=c,
                        amplification=amp,
                        sde_stable=sde_stable,
                        scheme_stable=amp < 1.0,
                        regime=regime,
                    )
                )
    return RegionTable(rows=tuple(rows))


def linear_second_moments(
    theta: float, mu: float, c: float, dt: float, steps: int, x0: float = 1.0
) -> np.ndarray:
    """Exact second-moment sequence E|y_k|^2 = x0^2 R^k of the linear recursion."""
    r = linear_amplification(theta, mu, c, dt)
    return x0 * x0 * r ** np.arange(steps + 1)


@dataclass(frozen=True)
class AmplificationCheck:
    """Monte Carlo one-step second-moment ratio against the closed form."""

    theta: float
    mu: float
    c: float
    dt: float
    paths: int
    ratio: float
    std_error: float
    closed_form: float

    @property
    def deviation_sigmas(self) -> float:
        if self.std_error == 0:
            return 0.0 if self.ratio == self.closed_form else math.inf
        return abs(self.ratio - self.closed_form) / self.std_error

    def to_dict(self) -> dict:
        return {
            "theta": self.theta,
            "mu": self.mu,
            "c": self.c,
            "dt": self.dt,
            "paths": self.paths,
            "ratio": self.ratio,
            "std_error": self.std_error,
            "closed_form": self.closed_form,
            "deviation_sigmas": self.deviation_sigmas,
        }


def amplification_mc(
    theta: float, mu: float, c: float, dt: float, paths: int, seed: int
) -> AmplificationCheck:
    """Sample E|y_1|^2 / |y_0|^2 over one scheme step on the linear problem.

    Uses the rearranged one-step map
    y_1 = (1 + (1 - theta) mu dt + c dw + c^2 (dw^2 - dt)/2) y_0 / (1 - theta mu dt)
    applied to y_0 = 1 for ``paths`` independent increments; the test suite
    pins this map against the generic stepper.
    """
    if paths < 2:
        raise DomainError("paths must be >= 2")
    den = 1.0 - theta * mu * dt
    if den == 0.0:
        raise DomainError("theta * mu * dt == 1: amplification is singular")
    dw = noise.normal_increments(seed, 0, dt, paths)
    factor = (1.0 + (1.0 - theta) * mu * dt + c * dw + 0.5 * c * c * (dw * dw - dt)) / den
    sq = factor * factor
    ratio = float(sq.mean())
    se = float(sq.std(ddof=1)) / math.sqrt(paths)
    return AmplificationCheck(
        theta=float(theta),
        mu=float(mu),
        c=float(c),
        dt=float(dt),
        paths=int(paths),
        ratio=ratio,
        std_error=se,
        closed_form=linear_amplification(theta, mu, c, dt),
    )
