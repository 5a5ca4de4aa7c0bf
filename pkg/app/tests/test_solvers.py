import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from app.config import LbfgsConfig, LineSearchConfig, ParticleConfig
from app.exceptions import ConfigError, SolverError
from app.solvers import LbfgsState, lbfgs_direction, lbfgs_solve, noisy_line_search, particle_solve, softmax_weights


def quadratic(diagonal, offset=None):
    diagonal = np.asarray(diagonal, dtype=float)
    offset = np.zeros_like(diagonal) if offset is None else np.asarray(offset, dtype=float)

    def rollout(x):
        delta = x - offset
        return 0.5 * np.sum(diagonal * delta * delta, axis=-1), diagonal * delta
    return rollout


def rosenbrock(x):
    a, b = x[:, 0], x[:, 1]
    cost = (1 - a) ** 2 + 100 * (b - a * a) ** 2
    gradient = np.stack([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)], axis=-1)
    return cost, gradient


def textbook_two_loop(pairs, gradient):
    q = gradient.copy()
    alphas = []
    for s, y in reversed(pairs):
        alpha = (s @ q) / (y @ s)
        alphas.append(alpha)
        q = q - alpha * y
    s, y = pairs[-1]
    r = (s @ y) / (y @ y) * q
    for (s, y), alpha in zip(pairs, reversed(alphas)):
        beta = (y @ r) / (y @ s)
        r = r + s * (alpha - beta)
    return -r


class TestLbfgsDirection:
    def test_empty_history_is_steepest_descent(self):
        state = LbfgsState(1, 3)
        gradient = np.array([[1.0, -2.0, 0.5]])
        assert np.array_equal(lbfgs_direction(state, np.zeros((1, 3)), gradient), -gradient)

    def test_matches_textbook_recursion(self):
        rollout = quadratic([2.0, 10.0])
        points = [np.array([1.0, 1.0]), np.array([0.6, -0.2]), np.array([0.3, 0.1])]
        state = LbfgsState(1, 2, history=4)
        for point in points:
            direction = lbfgs_direction(state, point[None], rollout(point[None])[1])
        gradients = [rollout(p[None])[1][0] for p in points]
        pairs = [(points[k + 1] - points[k], gradients[k + 1] - gradients[k]) for k in range(2)]
        assert np.allclose(direction[0], textbook_two_loop(pairs, gradients[-1]), atol=1e-10)

    def test_history_keeps_most_recent_pairs(self):
        rollout = quadratic([1.0, 3.0, 5.0])
        state = LbfgsState(1, 3, history=4)
        theta = np.array([[1.0, 1.0, 1.0]])
        previous = None
        for _ in range(10):
            previous = theta.copy()
            lbfgs_direction(state, theta, rollout(theta)[1])
            theta = theta * 0.8
        assert state.pairs_stored()[0] == 4
        assert np.allclose(state.s[0, -1], previous[0] - previous[0] / 0.8)

    def test_flat_curvature_pair_skipped(self):
        state = LbfgsState(1, 2)
        lbfgs_direction(state, np.zeros((1, 2)), np.ones((1, 2)))
        lbfgs_direction(state, np.ones((1, 2)), np.ones((1, 2)))
        assert state.pairs_stored()[0] == 0

    def test_non_finite_gradient(self):
        with pytest.raises(SolverError):
            lbfgs_direction(LbfgsState(1, 2), np.zeros((1, 2)), np.array([[np.nan, 0.0]]))


class TestNoisyLineSearch:
    def setup_method(self):
        self.rollout = quadratic([2.0])
        self.config = LineSearchConfig()

    def search(self, theta, delta, bounds=None):
        theta = np.array([[theta]])
        cost, gradient = self.rollout(theta)
        return noisy_line_search(self.rollout, theta, cost, gradient, np.array([[delta]]), self.config, bounds)

    def test_newton_step_accepted(self):
        result = self.search(1.0, -1.0)
        assert result.index[0] == 3
        assert result.theta[0, 0] == pytest.approx(0.0)
        assert result.cost[0] == pytest.approx(0.0)

    def test_uphill_falls_back_to_noisy_step(self):
        result = self.search(1.0, 1.0)
        assert result.index[0] == 0
        assert result.theta[0, 0] == pytest.approx(1.01)

    def test_candidates_clipped_to_bounds(self):
        bounds = (np.array([-0.5]), np.array([2.0]))
        result = self.search(1.0, -2.0, bounds)
        assert -0.5 <= result.theta[0, 0] <= 2.0
        assert result.index[0] == 3

    @pytest.mark.parametrize("condition", ["armijo", "wolfe", "strong_wolfe"])
    def test_conditions_accept_exact_step(self, condition):
        self.config = LineSearchConfig(condition=condition)
        assert self.search(1.0, -1.0).index[0] == 3

    def test_rejects_bad_constants(self):
        with pytest.raises(ConfigError):
            LineSearchConfig(c1=0.5, c2=0.1)

    @pytest.mark.parametrize("condition", ["armijo", "wolfe", "strong_wolfe"])
    def test_rows_independent_of_batch(self, condition):
        config = LineSearchConfig(condition=condition)
        rng = np.random.default_rng(5)
        theta = rng.uniform(-1.5, 1.5, size=(6, 2))
        cost, gradient = rosenbrock(theta)
        delta = -gradient / np.linalg.norm(gradient, axis=1, keepdims=True)
        together = noisy_line_search(rosenbrock, theta, cost, gradient, delta, config)
        for row in range(6):
            alone = noisy_line_search(rosenbrock, theta[row:row + 1], cost[row:row + 1], gradient[row:row + 1],
                                      delta[row:row + 1], config)
            assert np.array_equal(alone.theta[0], together.theta[row])
            assert np.array_equal(alone.cost[0], together.cost[row])
            assert np.array_equal(alone.gradient[0], together.gradient[row])
            assert alone.index[0] == together.index[row]


class TestLbfgsSolve:
    def test_convex_quadratic(self):
        rng = np.random.default_rng(0)
        diagonal = np.linspace(1.0, 4.0, 10)
        offset = rng.normal(size=10)
        result = lbfgs_solve(quadratic(diagonal, offset), np.zeros((1, 10)), 50)
        assert result.best_cost[0] < 1e-8
        assert np.allclose(result.best_theta[0], offset, atol=1e-3)

    def test_rosenbrock(self):
        result = lbfgs_solve(rosenbrock, np.array([[-1.2, 1.0]]), 300, LbfgsConfig(history=8))
        assert result.best_cost[0] < 1e-6

    def test_best_is_monotone(self):
        result = lbfgs_solve(quadratic([1.0, 2.0]), np.array([[0.0, 0.0], [3.0, -2.0]]), 20)
        assert np.all(np.diff(result.trace, axis=0) <= 0)
        assert result.best_cost[0] == 0.0
        assert result.trace.shape == (21, 2)

    def test_early_exit(self):
        result = lbfgs_solve(quadratic([1.0, 2.0]), np.array([[0.0, 0.0]]), 100, early_exit=True)
        assert result.iterations == LbfgsConfig().convergence_window

    def test_empty_batch(self):
        with pytest.raises(SolverError):
            lbfgs_solve(quadratic([1.0]), np.zeros((0, 1)), 5)

    def test_step_clip(self):
        config = LbfgsConfig(step_clip=0.01)
        bounds = (np.array([-10.0]), np.array([10.0]))
        result = lbfgs_solve(quadratic([1.0], [5.0]), np.array([[0.0]]), 3, config, bounds)
        assert result.best_theta[0, 0] <= 3 * 0.2 + 1e-12


class TestParticleSolve:
    def test_softmax_one_hot_and_uniform(self):
        assert np.allclose(softmax_weights(np.array([[0.0, 1000.0, 1000.0]]), 1.0), [[1.0, 0.0, 0.0]])
        assert np.allclose(softmax_weights(np.array([[2.0, 2.0, 2.0, 2.0]]), 1.0), 0.25)

    def test_single_mean_particle_keeps_mean(self):
        config = ParticleConfig(n_particles=1, step_mean=1.0, include_mean=True)
        mean = particle_solve(quadratic([1.0, 1.0]), np.array([[0.4, -0.3]]), config, rng=3)
        assert np.array_equal(mean, np.array([[0.4, -0.3]]))

    def test_converges_on_quadratic(self):
        optimum = np.array([0.3, -0.2])
        config = ParticleConfig(n_particles=64, n_iterations=20, init_covariance=0.5, temperature=0.01)
        mean = particle_solve(quadratic([1.0, 1.0], optimum), np.array([[1.0, 1.0]]), config, rng=7)
        assert np.linalg.norm(mean[0] - optimum) < 0.05

    def test_deterministic_under_seed(self):
        config = ParticleConfig(n_iterations=3)
        start = np.array([[1.0, 1.0], [-1.0, 0.5]])
        a = particle_solve(quadratic([1.0, 2.0]), start, config, rng=11)
        b = particle_solve(quadratic([1.0, 2.0]), start, config, rng=11)
        assert np.array_equal(a, b)

    def test_respects_bounds(self):
        bounds = (np.array([0.5, 0.5]), np.array([1.0, 1.0]))
        mean = particle_solve(quadratic([1.0, 1.0]), np.array([[0.7, 0.7]]), ParticleConfig(), rng=1, bounds=bounds)
        assert np.all(mean >= 0.5) and np.all(mean <= 1.0)

    def test_one_generator_per_seed(self):
        with pytest.raises(SolverError):
            particle_solve(quadratic([1.0]), np.zeros((2, 1)), ParticleConfig(),
                           rng=[np.random.default_rng(0)])
