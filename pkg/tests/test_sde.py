import math

import numpy as np
import pytest

from theta_milstein import (
    ContractViolationError,
    DomainError,
    ProblemConstants,
    SdeProblem,
    builtin_problem,
    builtin_problem_names,
    check_monotone_condition,
    cubic_additive_problem,
    ginzburg_landau_problem,
    l1g,
    linear_problem,
    monotone_constants,
    numerical_jacobian,
    stepsize_thresholds,
)


def sin_diffusion_problem():
    # g(x) = sin(x), zero drift; correction direction is cos(x) sin(x)
    return SdeProblem.from_scalar(
        "sin_diffusion",
        drift=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        diffusion=np.sin,
        diffusion_prime=np.cos,
        constants=ProblemConstants(mu=0.0, c=1.0, sigma=1.0),
    )


def all_builtins():
    return [
        linear_problem(-2.0, 1.0),
        ginzburg_landau_problem(0.5, 1.0, 0.5),
        ginzburg_landau_problem(-2.0, 1.0, 1.0),
        cubic_additive_problem(1.0, 0.5),
    ]


class TestL1g:
    def test_linear_scaling(self):
        prob = linear_problem(0.0, 0.5)
        assert l1g(prob, [2.0]) == pytest.approx([0.5], abs=1e-15)

    def test_additive_noise_is_exactly_zero(self):
        prob = cubic_additive_problem(1.0, 0.7)
        rng = np.random.default_rng(0)
        for x in rng.uniform(-50, 50, size=20):
            assert np.all(l1g(prob, [x]) == 0.0)

    def test_sine_vanishes_at_half_pi(self):
        prob = sin_diffusion_problem()
        assert abs(l1g(prob, [math.pi / 2])[0]) < 1e-12

    def test_sine_quarter_pi_against_finite_difference(self):
        prob = sin_diffusion_problem()
        x = math.pi / 4
        h = 1e-6
        oracle = (math.sin(x + h) - math.sin(x - h)) / (2 * h) * math.sin(x)
        value = l1g(prob, [x])[0]
        assert abs(value - oracle) <= 1e-8
        assert value == pytest.approx(0.5, abs=1e-12)

    def test_dimension_mismatch(self):
        prob = linear_problem(-1.0, 1.0)
        with pytest.raises(ContractViolationError):
            l1g(prob, [1.0, 2.0])

    @pytest.mark.parametrize("prob", all_builtins(), ids=lambda p: p.name)
    def test_matches_finite_difference_on_random_states(self, prob):
        rng = np.random.default_rng(42)
        for _ in range(25):
            x = rng.uniform(-5, 5, size=prob.dim)
            fd = numerical_jacobian(prob.diffusion, x) @ np.asarray(
                prob.diffusion(x), dtype=float
            )
            val = l1g(prob, x)
            scale = 1.0 + np.max(np.abs(fd))
            assert np.max(np.abs(val - fd)) <= 1e-6 * scale


class TestMonotoneConstants:
    def test_zero_origin_arithmetic(self):
        # f(0) = 0, g(0) = 0, mu = -3, c = 1  =>  alpha 0, beta max(-2.5, 2) = 2
        prob = SdeProblem.from_scalar(
            "dissipative_linear",
            drift=lambda x: -3.0 * x,
            diffusion=lambda x: 1.0 * x,
            diffusion_prime=lambda x: np.ones_like(np.asarray(x, dtype=float)),
            constants=ProblemConstants(mu=-3.0, c=1.0, sigma=1.0),
        )
        alpha, beta = monotone_constants(prob)
        assert alpha == 0.0
        assert beta == 2.0

    def test_offset_origin_arithmetic(self):
        # f(0) = (1, 0), g(0) = 0, mu = 0, c = 0.25  =>  alpha 0.5, beta 0.5
        prob = SdeProblem(
            name="constant_drift_2d",
            dim=2,
            drift=lambda x: np.array([1.0, 0.0]),
            diffusion=lambda x: 0.5 * np.asarray(x, dtype=float),
            diffusion_jacobian=lambda x: 0.5 * np.eye(2),
            constants=ProblemConstants(mu=0.0, c=0.25, sigma=0.0625),
        )
        alpha, beta = monotone_constants(prob)
        assert alpha == 0.5
        assert beta == 0.5

    def test_sampled_inequality_cubic_drift(self):
        # brute-force sampling oracle over [-10, 10]
        prob = SdeProblem.from_scalar(
            "pure_cubic",
            drift=lambda x: -(x ** 3),
            diffusion=lambda x: 1.0 * x,
            diffusion_prime=lambda x: np.ones_like(np.asarray(x, dtype=float)),
            constants=ProblemConstants(mu=0.0, c=1.0, sigma=1.0),
        )
        result = check_monotone_condition(prob, samples=10_000, radius=10.0, seed=1)
        assert result.ok, f"worst margin {result.worst_margin}"

    @pytest.mark.parametrize("prob", all_builtins(), ids=lambda p: p.name)
    def test_sampled_inequality_all_builtins(self, prob):
        result = check_monotone_condition(prob, samples=10_000, radius=10.0, seed=2)
        assert result.ok, f"{prob.name}: worst margin {result.worst_margin}"


class TestStepsizeThresholds:
    def test_explicit_scheme_only_stability_bound(self):
        # theta = 0 removes the implicit restrictions entirely
        prob = linear_problem(-2.0, 1.0)  # gamma 3, K 4, sigma 1
        ts = stepsize_thresholds(prob, 0.0)
        assert ts.wellposed_max == math.inf
        assert ts.moment_bound_max == math.inf
        assert ts.stability_max == pytest.approx(3.0 / (4.0 + 0.5), rel=1e-14)

    def test_fully_implicit_moment_bound(self):
        prob = linear_problem(-2.0, 1.0)  # beta = max(-1.5, 2) = 2
        ts = stepsize_thresholds(prob, 1.0)
        assert ts.wellposed_max == math.inf
        assert ts.moment_bound_max == pytest.approx(0.25, rel=1e-14)

    def test_low_theta_stability_branch(self):
        prob = SdeProblem.from_scalar(
            "declared_constants",
            drift=lambda x: -2.0 * x,
            diffusion=lambda x: 0.0 * x,
            diffusion_prime=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
            constants=ProblemConstants(
                mu=-2.0, c=0.0, sigma=2.0, k_linear=4.0, gamma=3.0
            ),
        )
        ts = stepsize_thresholds(prob, 0.25)
        assert ts.stability_max == pytest.approx(3.0 / (0.5 * 4.0 + 1.0), rel=1e-14)

    def test_missing_constants_leave_stability_unset(self):
        prob = cubic_additive_problem(1.0, 0.5)  # no gamma declared
        assert stepsize_thresholds(prob, 1.0).stability_max is None

    def test_theta_domain(self):
        prob = linear_problem(-1.0, 1.0)
        with pytest.raises(DomainError):
            stepsize_thresholds(prob, 1.5)
        with pytest.raises(DomainError):
            stepsize_thresholds(prob, -0.1)

    def test_moment_bound_monotone_in_theta(self):
        for prob in all_builtins():
            thetas = np.linspace(0.0, 1.0, 9)
            bounds = [stepsize_thresholds(prob, t).moment_bound_max for t in thetas]
            for lo, hi in zip(bounds[1:], bounds[:-1]):
                assert lo <= hi

    def test_nonpositive_beta_makes_moment_bound_vacuous(self):
        # mu < -1/2 and c = 0 force beta < 0; the 1/(2 theta beta) bound is vacuous
        prob = SdeProblem.from_scalar(
            "strongly_dissipative",
            drift=lambda x: -3.0 * x,
            diffusion=lambda x: 0.0 * x,
            diffusion_prime=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
            constants=ProblemConstants(mu=-3.0, c=0.0, sigma=0.0),
        )
        assert stepsize_thresholds(prob, 1.0).moment_bound_max == math.inf


class TestBuiltinProblems:
    def test_registry_names(self):
        assert set(builtin_problem_names()) == {
            "linear",
            "ginzburg_landau",
            "cubic_additive",
        }

    def test_linear_constants(self):
        prob = builtin_problem("linear", {"mu": -2.0, "c": 1.0})
        consts = prob.constants
        assert consts.mu == -2.0
        assert consts.c == 1.0  # squared Lipschitz constant of g(x) = x
        assert consts.sigma == 1.0
        assert consts.k_linear == 4.0
        # 2 mu + c^2 = -3 < 0: mean-square stable with rate 3
        assert consts.gamma == pytest.approx(3.0)

    def test_linear_unstable_has_no_gamma(self):
        assert linear_problem(1.0, 1.0).constants.gamma is None

    def test_linear_exact_solution_value(self):
        # frozen from exp((mu - c^2/2) t) with mu = 0.5, c = 2, t = 1, w = 0
        prob = linear_problem(0.5, 2.0)
        for x0 in (1.0, 3.0):
            got = prob.exact_solution(np.array([x0]), 1.0, 0.0)
            assert got[0] == pytest.approx(x0 * 0.22313016014842982, rel=1e-14)

    def test_linear_exact_solution_solves_sde_pathwise(self):
        # fully implicit fine-grid trajectory must track the closed form
        from theta_milstein import SchemeConfig, integrate, noise

        prob = linear_problem(-2.0, 1.0)
        steps = 2 ** 12
        dt = 1.0 / steps
        grid = noise.generate(2024, 0, 1.0, steps)
        traj = integrate(prob, "stm", [1.0], grid.fine_increments, SchemeConfig(theta=1.0, dt=dt))
        w = noise.brownian_values(grid.fine_increments)
        exact_terminal = prob.exact_solution(np.array([1.0]), 1.0, w[-1])
        assert abs(traj.y_states[-1, 0] - exact_terminal[0]) < 5e-3

    def test_ginzburg_landau_drift_shape(self):
        prob = ginzburg_landau_problem(0.5, 1.0, 0.5)
        assert prob.drift(np.zeros(1))[0] == 0.0
        # the cube dominates far from the origin
        for x in (1e3, -1e3):
            assert x * prob.drift(np.array([x]))[0] < 0

    def test_ginzburg_landau_requires_positive_lambda(self):
        with pytest.raises(DomainError):
            ginzburg_landau_problem(0.5, 0.0, 1.0)
        with pytest.raises(DomainError):
            builtin_problem("ginzburg_landau", {"eta": 0.5, "lam": -1.0, "s": 1.0})

    def test_ginzburg_landau_dissipative_rate(self):
        prob = ginzburg_landau_problem(-2.0, 1.0, 1.0)
        assert prob.constants.gamma == pytest.approx(2.0)
        assert ginzburg_landau_problem(0.5, 1.0, 0.5).constants.gamma is None

    def test_cubic_additive_degenerates(self):
        prob = cubic_additive_problem(1.0, 0.4)
        assert prob.constants.c == 0.0
        assert prob.constants.sigma == 0.0
        assert prob.constants.k_linear is None

    def test_unknown_name(self):
        with pytest.raises(DomainError):
            builtin_problem("ornstein", {})

    def test_missing_and_unknown_params(self):
        with pytest.raises(DomainError):
            builtin_problem("linear", {"mu": -1.0})
        with pytest.raises(DomainError):
            builtin_problem("linear", {"mu": -1.0, "c": 1.0, "s": 2.0})

    def test_lambda_alias(self):
        prob = builtin_problem(
            "ginzburg_landau", {"eta": 0.5, "lambda": 1.0, "s": 0.5}
        )
        assert prob.name == "ginzburg_landau"


class TestProblemValidation:
    def test_bad_drift_shape_rejected(self):
        with pytest.raises(ContractViolationError):
            SdeProblem(
                name="broken",
                dim=2,
                drift=lambda x: np.zeros(3),
                diffusion=lambda x: np.zeros(2),
                diffusion_jacobian=lambda x: np.zeros((2, 2)),
                constants=ProblemConstants(mu=0.0, c=0.0, sigma=0.0),
            )

    def test_bad_jacobian_shape_rejected(self):
        with pytest.raises(ContractViolationError):
            SdeProblem(
                name="broken",
                dim=1,
                drift=lambda x: np.zeros(1),
                diffusion=lambda x: np.zeros(1),
                diffusion_jacobian=lambda x: np.zeros(1),
                constants=ProblemConstants(mu=0.0, c=0.0, sigma=0.0),
            )

    def test_constant_validation(self):
        with pytest.raises(DomainError):
            ProblemConstants(mu=0.0, c=-1.0, sigma=0.0)
        with pytest.raises(DomainError):
            ProblemConstants(mu=0.0, c=0.0, sigma=-1.0)
        with pytest.raises(DomainError):
            ProblemConstants(mu=0.0, c=0.0, sigma=0.0, gamma=0.0)
        with pytest.raises(DomainError):
            ProblemConstants(mu=0.0, c=0.0, sigma=0.0, k_linear=-2.0)
