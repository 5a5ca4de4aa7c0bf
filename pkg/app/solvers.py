"""
Batched optimizers: L-BFGS with a parallel noisy line search and an
exponential-utility particle optimizer used for warm starts. Every seed in a
batch is optimized independently; rollouts map B x N to (cost B, grad B x N).
"""
from __future__ import annotations

from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import NDArray

from .config import LbfgsConfig, LineSearchConfig, ParticleConfig
from .data_structures import LbfgsResult, LineSearchResult
from .exceptions import SolverError
from .logger_service import LoggerService
from .utils import random_streams

logger = LoggerService(__name__)

Rollout = Callable[[NDArray], Tuple[NDArray, NDArray]]
Bounds = Optional[Tuple[NDArray, NDArray]]

CURVATURE_EPS = 1e-12


class LbfgsState:
    """Per-seed L-BFGS history; the newest pair sits at the end of each buffer."""

    def __init__(self, batch: int, size: int, history: int = 4):
        self.history = history
        self.s = np.zeros((batch, history, size))
        self.y = np.zeros((batch, history, size))
        self.rho = np.zeros((batch, history))
        self.valid = np.zeros((batch, history), dtype=bool)
        self.prev_theta: Optional[NDArray] = None
        self.prev_grad: Optional[NDArray] = None
        self.best_cost = np.full(batch, np.inf)
        self.best_theta = np.zeros((batch, size))

    def pairs_stored(self) -> NDArray:
        return self.valid.sum(axis=1)

    def update(self, theta: NDArray, grad: NDArray):
        if self.prev_theta is not None:
            s_new = theta - self.prev_theta
            y_new = grad - self.prev_grad
            curvature = np.einsum("bn,bn->b", y_new, s_new)
            store = curvature > CURVATURE_EPS
            if np.any(store):
                rows = np.nonzero(store)[0]
                self.s[rows] = np.concatenate([self.s[rows, 1:], s_new[rows, None]], axis=1)
                self.y[rows] = np.concatenate([self.y[rows, 1:], y_new[rows, None]], axis=1)
                self.rho[rows] = np.concatenate([self.rho[rows, 1:], 1.0 / curvature[rows, None]], axis=1)
                self.valid[rows] = np.concatenate([self.valid[rows, 1:], np.ones((rows.size, 1), bool)], axis=1)
        self.prev_theta = theta.copy()
        self.prev_grad = grad.copy()

    def track(self, theta: NDArray, cost: NDArray):
        better = cost < self.best_cost
        self.best_cost = np.where(better, cost, self.best_cost)
        self.best_theta[better] = theta[better]

    def two_loop(self, grad: NDArray) -> NDArray:
        q = grad.copy()
        alphas = np.zeros(self.rho.shape)
        for i in reversed(range(self.history)):
            alpha = np.where(self.valid[:, i], self.rho[:, i] * np.einsum("bn,bn->b", self.s[:, i], q), 0.0)
            q -= alpha[:, None] * self.y[:, i]
            alphas[:, i] = alpha
        s_new, y_new = self.s[:, -1], self.y[:, -1]
        yy = np.einsum("bn,bn->b", y_new, y_new)
        gamma = np.where(self.valid[:, -1], np.einsum("bn,bn->b", s_new, y_new) / np.where(yy > 0, yy, 1.0), 1.0)
        r = gamma[:, None] * q
        for i in range(self.history):
            beta = np.where(self.valid[:, i], self.rho[:, i] * np.einsum("bn,bn->b", self.y[:, i], r), 0.0)
            r += self.s[:, i] * (alphas[:, i] - beta)[:, None]
        return -r


def lbfgs_direction(state: LbfgsState, theta: NDArray, gradient: NDArray) -> NDArray:
    """Store the newest (step, gradient change) pair and return the two-loop direction."""
    theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
    gradient = np.atleast_2d(np.asarray(gradient, dtype=np.float64))
    if not np.all(np.isfinite(gradient)):
        raise SolverError("Non-finite gradient passed to L-BFGS")
    state.update(theta, gradient)
    return state.two_loop(gradient)


def _clip(theta: NDArray, bounds: Bounds) -> NDArray:
    if bounds is None:
        return theta
    return np.clip(theta, bounds[0], bounds[1])


def noisy_line_search(rollout: Rollout, theta: NDArray, cost0: NDArray, grad0: NDArray, delta: NDArray,
                      config: LineSearchConfig, bounds: Bounds = None) -> LineSearchResult:
    batch, size = theta.shape
    alphas = np.asarray(config.magnitudes, dtype=np.float64)
    count = alphas.shape[0]
    candidates = _clip(theta[:, None, :] + alphas[None, :, None] * delta[:, None, :], bounds)
    costs, grads = rollout(candidates.reshape(batch * count, size))
    costs = costs.reshape(batch, count)
    grads = grads.reshape(batch, count, size)

    slope0 = np.einsum("bn,bn->b", grad0, delta)
    accepted = costs <= cost0[:, None] + config.c1 * alphas[None, :] * slope0[:, None]
    if config.condition != "armijo":
        slope = np.einsum("ban,bn->ba", grads, delta)
        if config.condition == "wolfe":
            accepted &= slope >= config.c2 * slope0[:, None]
        else:
            accepted &= np.abs(slope) <= config.c2 * np.abs(slope0)[:, None]
    accepted &= np.isfinite(costs)

    # largest satisfying magnitude, else the small noisy step at index 0
    index = np.where(np.any(accepted, axis=1), count - 1 - np.argmax(accepted[:, ::-1], axis=1), 0)
    rows = np.arange(batch)
    return LineSearchResult(
        theta=candidates[rows, index],
        cost=costs[rows, index],
        gradient=grads[rows, index],
        index=index,
    )


def lbfgs_solve(rollout: Rollout, theta_init: NDArray, iterations: int, config: Optional[LbfgsConfig] = None,
                bounds: Bounds = None, early_exit: bool = False) -> LbfgsResult:
    config = config or LbfgsConfig()
    theta = _clip(np.array(theta_init, dtype=np.float64), bounds)
    if theta.ndim != 2 or theta.shape[0] < 1:
        raise SolverError(f"L-BFGS needs a B x N start with B >= 1, got {theta.shape}")
    batch, size = theta.shape
    cost, grad = rollout(theta)
    state = LbfgsState(batch, size, config.history)
    state.track(theta, cost)
    trace = [state.best_cost.copy()]
    step_limit = None
    if config.step_clip is not None and bounds is not None:
        step_limit = config.step_clip * (np.asarray(bounds[1]) - np.asarray(bounds[0]))

    done = 0
    for done in range(1, iterations + 1):
        delta = lbfgs_direction(state, theta, grad)
        if step_limit is not None:
            delta = np.clip(delta, -step_limit, step_limit)
        result = noisy_line_search(rollout, theta, cost, grad, delta, config.line_search, bounds)
        theta, cost, grad = result.theta, result.cost, result.gradient
        state.track(theta, cost)
        trace.append(state.best_cost.copy())
        if logger.is_debug():
            logger.debug(f"[LBFGS] iteration {done}: best cost {np.min(state.best_cost):.6g}, "
                         f"noisy steps {int(np.sum(result.index == 0))}/{batch}")
        window = config.convergence_window
        if early_exit and window and done >= window:
            if np.all(trace[-window - 1] - state.best_cost < config.convergence_tol):
                logger.debug(f"[LBFGS] converged after {done} iterations")
                break

    return LbfgsResult(
        best_cost=state.best_cost.copy(),
        best_theta=state.best_theta.copy(),
        trace=np.array(trace),
        iterations=done,
    )


def _generators(rng, batch: int) -> List[np.random.Generator]:
    if isinstance(rng, (list, tuple)):
        if len(rng) != batch:
            raise SolverError(f"Need one random generator per seed, got {len(rng)} for {batch}")
        return list(rng)
    if isinstance(rng, np.random.Generator):
        return random_streams(int(rng.integers(2 ** 63)), batch)
    return random_streams(int(rng), batch)


def softmax_weights(costs: NDArray, temperature: float) -> NDArray:
    z = -np.where(np.isfinite(costs), costs, np.inf) / temperature
    z = z - np.max(z, axis=-1, keepdims=True)
    w = np.exp(z)
    return w / np.sum(w, axis=-1, keepdims=True)


def particle_solve(rollout: Rollout, theta_mean: NDArray, config: Optional[ParticleConfig] = None,
                   rng: Union[int, np.random.Generator, Sequence[np.random.Generator]] = 0,
                   bounds: Bounds = None) -> NDArray:
    """Exponential-utility update of a per-seed Gaussian; returns the final mean."""
    config = config or ParticleConfig()
    mean = _clip(np.array(theta_mean, dtype=np.float64), bounds)
    batch, size = mean.shape
    generators = _generators(rng, batch)
    if bounds is not None:
        scale = np.broadcast_to(np.asarray(bounds[1]) - np.asarray(bounds[0]), (size,))
    else:
        scale = np.ones(size)
    variance = np.tile(config.init_covariance * scale, (batch, 1))
    n = config.n_particles

    for iteration in range(config.n_iterations):
        noise = np.stack([g.standard_normal((n, size)) for g in generators])
        samples = mean[:, None, :] + np.sqrt(variance)[:, None, :] * noise
        if config.include_mean:
            samples[:, 0] = mean
        samples = _clip(samples, bounds)
        costs, _ = rollout(samples.reshape(batch * n, size))
        weights = softmax_weights(costs.reshape(batch, n), config.temperature)

        weighted_mean = np.einsum("bk,bkn->bn", weights, samples)
        spread = np.einsum("bk,bkn->bn", weights, (samples - mean[:, None, :]) ** 2)
        mean = (1.0 - config.step_mean) * mean + config.step_mean * weighted_mean
        variance = np.maximum((1.0 - config.step_cov) * variance + config.step_cov * spread, 1e-12)
        logger.debug(f"[PARTICLE] iteration {iteration + 1}: best sample cost {np.min(costs):.6g}")
    return _clip(mean, bounds)
