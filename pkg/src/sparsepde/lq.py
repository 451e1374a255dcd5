"""Scalar linear system with quadratic cost, and its optimal discounted gain.

x' = A x + B u,  u = a_max * a,  cost q x^2 + r u^2,  reward = -cost.
The environment mirrors the PDE environments' reset/step interface so the
same agent and rollout code apply.
"""
from dataclasses import dataclass

import numpy as np

from sparsepde.errors import ConfigError, DivergenceError


@dataclass(frozen=True)
class LqConfig:
    A: float = 0.9
    B: float = 1.0
    q: float = 1.0
    r: float = 0.5
    a_max: float = 1.0
    # short episodes keep the replay data away from the origin
    horizon: int = 10
    x0_max: float = 1.0

    def __post_init__(self):
        if self.q <= 0 or self.r <= 0:
            raise ConfigError("LQ weights must be positive")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")


def riccati_gain(A, B, q, r, gamma=1.0, tol=1e-14, max_iter=100_000):
    """Stationary (P, K) of the discounted Riccati recursion; u = -K x.

    Iterates P <- q + g A^2 P - (g A B P)^2 / (r + g B^2 P) from P = q.
    """
    P = float(q)
    for _ in range(max_iter):
        denom = r + gamma * B * B * P
        P_new = q + gamma * A * A * P - (gamma * A * B * P) ** 2 / denom
        if abs(P_new - P) <= tol * max(1.0, abs(P)):
            P = P_new
            break
        P = P_new
    else:
        raise DivergenceError("Riccati iteration did not converge")
    K = gamma * A * B * P / (r + gamma * B * B * P)
    return P, K


class LinearQuadraticEnv:
    n_sensors = 1
    state_dim = 1
    action_dim = 1

    def __init__(self, cfg=None):
        self.cfg = cfg or LqConfig()
        self.x = 0.0
        self.steps = 0
        self.done = True
        self.diverged = False
        self.last_costs = (0.0, 0.0)

    def reset(self, params=(), seed=0):
        rng = np.random.default_rng(seed)
        self.x = rng.uniform(-self.cfg.x0_max, self.cfg.x0_max)
        self.steps = 0
        self.done = False
        self.diverged = False
        return np.array([self.x])

    def step(self, a):
        if self.done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        c = self.cfg
        u = c.a_max * float(np.clip(np.asarray(a, dtype=np.float64).reshape(-1)[0], -1.0, 1.0))
        cost_x, cost_u = c.q * self.x**2, c.r * u**2
        self.x = c.A * self.x + c.B * u
        self.steps += 1
        self.last_costs = (cost_x, cost_u)
        self.done = self.steps >= c.horizon
        return np.array([self.x]), -(cost_x + cost_u), self.done


def linear_policy(gain, a_max):
    """Action for u = -gain * x, expressed in units of ``a_max``."""
    return lambda s: np.array([np.clip(-gain * s[0] / a_max, -1.0, 1.0)])


def episode_cost(env, policy, seeds):
    """Mean undiscounted episode cost over the given initial-condition seeds."""
    total = 0.0
    for seed in seeds:
        s = env.reset((), int(seed))
        done = False
        while not done:
            s, r, done = env.step(policy(s))
            total -= r
    return total / len(seeds)
