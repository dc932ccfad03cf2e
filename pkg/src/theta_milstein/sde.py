"""Scalar-noise SDE problems dx = f(x) dt + g(x) dw and their declared constants.

A problem bundles the drift ``f``, the diffusion ``g`` (one diffusion vector,
driven by a single Brownian motion), the diffusion Jacobian used to form the
correction direction ``(dg/dx) g``, and a set of regularity constants declared
by the problem author.  The constants are never derived symbolically; a
sampling-based spot check (:func:`check_monotone_condition`) is provided
instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Optional

import numpy as np

from .errors import ContractViolationError, DomainError

__all__ = [
    "ProblemConstants",
    "ScalarOps",
    "SdeProblem",
    "ThresholdSet",
    "l1g",
    "monotone_constants",
    "stepsize_thresholds",
    "builtin_problem",
    "builtin_problem_names",
    "linear_problem",
    "ginzburg_landau_problem",
    "cubic_additive_problem",
    "numerical_jacobian",
    "check_monotone_condition",
]


@dataclass(frozen=True)
class ProblemConstants:
    """Regularity constants declared for a problem.

    Attributes
    ----------
    mu : float
        One-sided Lipschitz constant of the drift:
        <x - y, f(x) - f(y)> <= mu |x - y|^2.
    c : float
        Squared-form global Lipschitz constant of the diffusion:
        |g(x) - g(y)|^2 <= c |x - y|^2.
    sigma : float
        Squared-form Lipschitz constant of the correction direction:
        |(dg/dx)g(x) - (dg/dx)g(y)|^2 <= sigma |x - y|^2.
    k_linear : float, optional
        Linear growth constant of the drift, |f(x)|^2 <= K (1 + |x|^2),
        declared only when the drift actually grows at most linearly.
    gamma : float, optional
        Coupled dissipativity rate: 2 x^T f(x) + |g(x)|^2 <= -gamma |x|^2.
    d_poly, q_poly : float, optional
        Polynomial growth metadata for the drift derivatives; carried but
        never used in computations.
    """

    mu: float
    c: float
    sigma: float
    k_linear: Optional[float] = None
    gamma: Optional[float] = None
    d_poly: Optional[float] = None
    q_poly: Optional[float] = None

    def __post_init__(self):
        if self.c < 0:
            raise DomainError("diffusion Lipschitz constant c must be >= 0")
        if self.sigma < 0:
            raise DomainError("correction Lipschitz constant sigma must be >= 0")
        if self.k_linear is not None and self.k_linear < 0:
            raise DomainError("linear growth constant k_linear must be >= 0")
        if self.gamma is not None and self.gamma <= 0:
            raise DomainError("dissipativity rate gamma must be > 0 when declared")


@dataclass(frozen=True)
class ScalarOps:
    """Elementwise callables for one-dimensional problems.

    Each callable maps float arrays to float arrays of the same shape, which
    lets the Monte Carlo engines advance whole batches of paths at once.
    ``exact`` (when present) maps ``(x0, t, w)`` with ``t`` and ``w``
    broadcastable arrays to the pathwise solution values.
    """

    drift: Callable
    diffusion: Callable
    diffusion_prime: Callable
    drift_prime: Optional[Callable] = None
    exact: Optional[Callable] = None


@dataclass(frozen=True)
class SdeProblem:
    """An autonomous scalar-noise SDE dx = f(x) dt + g(x) dw.

    ``drift`` and ``diffusion`` map length-``dim`` vectors to length-``dim``
    vectors; ``diffusion_jacobian`` returns the ``dim x dim`` matrix dg/dx.
    ``drift_jacobian`` is optional; when absent the implicit solver falls back
    to central differences.  ``exact_solution(x0, t, w)`` returns the pathwise
    solution at time ``t`` given the Brownian value ``w = w(t)``, for problems
    that admit a closed form.  Instances are immutable and safe to share
    across workers.
    """

    name: str
    dim: int
    drift: Callable
    diffusion: Callable
    diffusion_jacobian: Callable
    constants: ProblemConstants
    drift_jacobian: Optional[Callable] = None
    exact_solution: Optional[Callable] = None
    scalar_ops: Optional[ScalarOps] = None

    def __post_init__(self):
        if self.dim < 1:
            raise ContractViolationError("dim must be >= 1")
        if self.scalar_ops is not None and self.dim != 1:
            raise ContractViolationError("scalar_ops only apply to dim == 1")
        probe = np.zeros(self.dim)
        fx = np.asarray(self.drift(probe), dtype=float)
        gx = np.asarray(self.diffusion(probe), dtype=float)
        jac = np.asarray(self.diffusion_jacobian(probe), dtype=float)
        if fx.shape != (self.dim,):
            raise ContractViolationError(
                f"drift must map ({self.dim},) vectors to ({self.dim},) vectors, got {fx.shape}"
            )
        if gx.shape != (self.dim,):
            raise ContractViolationError(
                f"diffusion must map ({self.dim},) vectors to ({self.dim},) vectors, got {gx.shape}"
            )
        if jac.shape != (self.dim, self.dim):
            raise ContractViolationError(
                f"diffusion_jacobian must return a ({self.dim}, {self.dim}) matrix, got {jac.shape}"
            )
        if self.drift_jacobian is not None:
            dj = np.asarray(self.drift_jacobian(probe), dtype=float)
            if dj.shape != (self.dim, self.dim):
                raise ContractViolationError(
                    f"drift_jacobian must return a ({self.dim}, {self.dim}) matrix, got {dj.shape}"
                )

    @classmethod
    def from_scalar(
        cls,
        name,
        drift,
        diffusion,
        diffusion_prime,
        constants,
        drift_prime=None,
        exact=None,
    ):
        """Build a one-dimensional problem from elementwise callables.

        The callables must broadcast over numpy arrays; they are wrapped into
        the vector interface and also kept as :class:`ScalarOps` so the
        vectorised path engine can use them directly.
        """

        def vec_drift(x):
            return np.asarray(drift(x), dtype=float)

        def vec_diffusion(x):
            return np.asarray(diffusion(x), dtype=float)

        def vec_diffusion_jacobian(x):
            return np.asarray(diffusion_prime(x), dtype=float).reshape(1, 1)

        vec_drift_jacobian = None
        if drift_prime is not None:

            def vec_drift_jacobian(x):
                return np.asarray(drift_prime(x), dtype=float).reshape(1, 1)

        vec_exact = None
        if exact is not None:

            def vec_exact(x0, t, w):
                x0 = np.asarray(x0, dtype=float).reshape(())
                return np.atleast_1d(np.asarray(exact(x0, t, w), dtype=float))

        return cls(
            name=name,
            dim=1,
            drift=vec_drift,
            diffusion=vec_diffusion,
            diffusion_jacobian=vec_diffusion_jacobian,
            constants=constants,
            drift_jacobian=vec_drift_jacobian,
            exact_solution=vec_exact,
            scalar_ops=ScalarOps(
                drift=drift,
                diffusion=diffusion,
                diffusion_prime=diffusion_prime,
                drift_prime=drift_prime,
                exact=exact,
            ),
        )


def as_state(problem: SdeProblem, x) -> np.ndarray:
    """Coerce ``x`` to a float state vector of the problem's dimension."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.shape != (problem.dim,):
        raise ContractViolationError(
            f"state must have shape ({problem.dim},), got {arr.shape}"
        )
    return arr


def l1g(problem: SdeProblem, x) -> np.ndarray:
    """Correction direction (dg/dx)(x) . g(x).

    This is the coefficient of the (dw^2 - dt)/2 term that lifts an Euler
    step to a Milstein step.  For additive noise it vanishes identically.
    """
    x = as_state(problem, x)
    return np.asarray(problem.diffusion_jacobian(x), dtype=float) @ np.asarray(
        problem.diffusion(x), dtype=float
    )


def monotone_constants(problem: SdeProblem) -> tuple[float, float]:
    """Constants (alpha, beta) with  <x,f(x)> v |g(x)|^2 <= alpha + beta |x|^2.

    alpha = (|f(0)|^2 / 2) v (2 |g(0)|^2)  and  beta = (mu + 1/2) v (2 c),
    computed from the declared one-sided Lipschitz constants.
    """
    zero = np.zeros(problem.dim)
    f0 = float(np.linalg.norm(np.asarray(problem.drift(zero), dtype=float)))
    g0 = float(np.linalg.norm(np.asarray(problem.diffusion(zero), dtype=float)))
    alpha = max(0.5 * f0 * f0, 2.0 * g0 * g0)
    beta = max(problem.constants.mu + 0.5, 2.0 * problem.constants.c)
    return alpha, beta


@dataclass(frozen=True)
class ThresholdSet:
    """Stepsize thresholds implied by the declared constants for a given theta.

    ``wellposed_max``   : below this the implicit stage has a unique solution.
    ``moment_bound_max``: below this the p-th moments of the iterates stay
                          bounded on finite horizons.
    ``stability_max``   : below this the scheme inherits exponential
                          mean-square decay; ``None`` when the constants
                          needed for the active branch are not declared.
    """

    wellposed_max: float
    moment_bound_max: float
    stability_max: Optional[float]


def _wellposed_max(theta: float, mu: float) -> float:
    if theta > 0 and mu > 0:
        return 1.0 / (theta * mu)
    return math.inf


def stepsize_thresholds(problem: SdeProblem, theta: float) -> ThresholdSet:
    """Evaluate the stepsize thresholds for implicitness parameter ``theta``.

    Thresholds that would involve division by a non-positive quantity are
    vacuous and reported as +inf.
    """
    if not 0.0 <= theta <= 1.0:
        raise DomainError(f"theta must lie in [0, 1], got {theta}")
    consts = problem.constants
    wellposed = _wellposed_max(theta, consts.mu)

    _, beta = monotone_constants(problem)
    if theta > 0 and beta > 0:
        moment = 1.0 / (2.0 * theta * beta)
    else:
        moment = math.inf

    stability: Optional[float]
    gamma, k, sig = consts.gamma, consts.k_linear, consts.sigma
    if gamma is None:
        stability = None
    elif theta <= 0.5:
        if k is None:
            stability = None
        else:
            denom = (1.0 - 2.0 * theta) * k + 0.5 * sig
            branch = gamma / denom if denom > 0 else math.inf
            stability = min(branch, wellposed)
    else:
        branch = 2.0 * gamma / sig if sig > 0 else math.inf
        stability = min(branch, wellposed)

    return ThresholdSet(
        wellposed_max=wellposed, moment_bound_max=moment, stability_max=stability
    )


def numerical_jacobian(fn, x, step=None) -> np.ndarray:
    """Central-difference Jacobian of ``fn`` at the state vector ``x``.

    The per-coordinate step defaults to sqrt(machine epsilon) * (1 + |x_j|).
    Used by the implicit solver when no analytic drift Jacobian is supplied
    and by tests as an independent check of analytic Jacobians.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    out = np.empty((n, n))
    base = math.sqrt(np.finfo(float).eps) if step is None else step
    for j in range(n):
        h = base * (1.0 + abs(x[j])) if step is None else step
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        out[:, j] = (np.asarray(fn(xp), dtype=float) - np.asarray(fn(xm), dtype=float)) / (
            2.0 * h
        )
    return out


@dataclass(frozen=True)
class MonotoneCheckResult:
    """Outcome of a sampled check of <x,f(x)> v |g(x)|^2 <= alpha + beta |x|^2."""

    alpha: float
    beta: float
    samples: int
    violations: int
    worst_margin: float

    @property
    def ok(self) -> bool:
        return self.violations == 0


def check_monotone_condition(
    problem: SdeProblem,
    samples: int = 10_000,
    radius: float = 10.0,
    seed: int = 0,
    slack: float = 1e-9,
) -> MonotoneCheckResult:
    """Spot-check the monotone condition on random states in [-radius, radius]^n.

    ``worst_margin`` is the largest value of lhs - (alpha + beta |x|^2) seen;
    a margin above ``slack`` * scale counts as a violation.  This is a
    sanity check for declared constants, not a proof.
    """
    alpha, beta = monotone_constants(problem)
    rng = np.random.default_rng(seed)
    worst = -math.inf
    violations = 0
    for _ in range(samples):
        x = rng.uniform(-radius, radius, size=problem.dim)
        fx = np.asarray(problem.drift(x), dtype=float)
        gx = np.asarray(problem.diffusion(x), dtype=float)
        lhs = max(float(x @ fx), float(gx @ gx))
        bound = alpha + beta * float(x @ x)
        margin = lhs - bound
        worst = max(worst, margin)
        if margin > slack * (1.0 + abs(bound)):
            violations += 1
    return MonotoneCheckResult(
        alpha=alpha,
        beta=beta,
        samples=samples,
        violations=violations,
        worst_margin=worst,
    )


def linear_problem(mu: float, c: float) -> SdeProblem:
    """Linear test problem f(x) = mu x, g(x) = c x with known pathwise solution.

    The exact solution is x(t) = x0 exp((mu - c^2/2) t + c w(t)); the declared
    constants follow directly: Lipschitz-squared diffusion constant c^2,
    correction constant c^4, linear growth mu^2, and dissipativity rate
    -(2 mu + c^2) whenever that is positive.
    """
    mu = float(mu)
    c = float(c)
    gamma = -(2.0 * mu + c * c)
    constants = ProblemConstants(
        mu=mu,
        c=c * c,
        sigma=c ** 4,
        k_linear=mu * mu,
        gamma=gamma if gamma > 0 else None,
    )

    def exact(x0, t, w):
        return x0 * np.exp((mu - 0.5 * c * c) * np.asarray(t) + c * np.asarray(w))

    return SdeProblem.from_scalar(
        name="linear",
        drift=lambda x: mu * x,
        diffusion=lambda x: c * x,
        diffusion_prime=lambda x: np.full_like(np.asarray(x, dtype=float), c),
        drift_prime=lambda x: np.full_like(np.asarray(x, dtype=float), mu),
        constants=constants,
        exact=exact,
    )


def ginzburg_landau_problem(eta: float, lam: float, s: float) -> SdeProblem:
    """Cubic-drift problem f(x) = (eta + s^2/2) x - lam x^3, g(x) = s x.

    The drift is one-sided Lipschitz with constant eta + s^2/2 but grows like
    x^3, so no linear growth constant is declared.  Requires lam > 0.
    """
    eta = float(eta)
    lam = float(lam)
    s = float(s)
    if lam <= 0:
        raise DomainError(f"ginzburg_landau requires lam > 0, got {lam}")
    mu = eta + 0.5 * s * s
    diss = -(2.0 * eta + 2.0 * s * s)
    constants = ProblemConstants(
        mu=mu,
        c=s * s,
        sigma=s ** 4,
        k_linear=None,
        gamma=diss if diss > 0 else None,
    )

    def drift(x):
        return mu * x - lam * x * x * x

    def drift_prime(x):
        return mu - 3.0 * lam * x * x

    return SdeProblem.from_scalar(
        name="ginzburg_landau",
        drift=drift,
        diffusion=lambda x: s * x,
        diffusion_prime=lambda x: np.full_like(np.asarray(x, dtype=float), s),
        drift_prime=drift_prime,
        constants=constants,
    )


def cubic_additive_problem(a: float, s: float) -> SdeProblem:
    """Cubic drift f(x) = a x - x^3 with constant (additive) diffusion g = s.

    The correction direction vanishes identically, so both schemes degenerate
    to their theta-Euler counterparts on this problem.
    """
    a = float(a)
    s = float(s)
    constants = ProblemConstants(mu=a, c=0.0, sigma=0.0)

    def drift(x):
        return a * x - x * x * x

    def drift_prime(x):
        return a - 3.0 * x * x

    return SdeProblem.from_scalar(
        name="cubic_additive",
        drift=drift,
        diffusion=lambda x: np.full_like(np.asarray(x, dtype=float), s),
        diffusion_prime=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        drift_prime=drift_prime,
        constants=constants,
    )


_BUILTINS: Mapping[str, tuple[Callable, tuple[str, ...]]] = {
    "linear": (linear_problem, ("mu", "c")),
    "ginzburg_landau": (ginzburg_landau_problem, ("eta", "lam", "s")),
    "cubic_additive": (cubic_additive_problem, ("a", "s")),
}

_PARAM_ALIASES = {"lambda": "lam"}


def builtin_problem_names() -> tuple[str, ...]:
    return tuple(_BUILTINS)


def builtin_problem(name: str, params: Mapping[str, float]) -> SdeProblem:
    """Construct a built-in problem by name from a parameter map.

    Unknown names, unknown parameters, and missing parameters are errors.
    """
    if name not in _BUILTINS:
        raise DomainError(
            f"unknown problem {name!r}; available: {', '.join(_BUILTINS)}"
        )
    factory, required = _BUILTINS[name]
    supplied = {_PARAM_ALIASES.get(k, k): float(v) for k, v in params.items()}
    unknown = set(supplied) - set(required)
    if unknown:
        raise DomainError(
            f"problem {name!r} does not take parameters {sorted(unknown)}; expects {list(required)}"
        )
    missing = [k for k in required if k not in supplied]
    if missing:
        raise DomainError(f"problem {name!r} is missing parameters {missing}")
    return factory(**{k: supplied[k] for k in required})
