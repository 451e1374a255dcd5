"""Hard-concrete gates and the expected-L0 penalty.

A gate is ``z = min(1, max(0, s (zeta - gamma) + gamma))`` with ``s`` a binary
concrete sample of location ``log_alpha`` and temperature ``beta``. Because the
stretch interval (gamma, zeta) strictly contains [0, 1], gates hit exactly 0
and 1 with positive probability, and P(z != 0) has a closed form.
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from sparsepde import kernels
from sparsepde.errors import ConfigError

BETA = 2.0 / 3.0
GAMMA = -0.1
ZETA = 1.1
INIT_MEAN = 2.0
INIT_STD = 0.01


@dataclass
class GateParams:
    log_alpha: np.ndarray
    temperature: float = BETA
    stretch_lo: float = GAMMA
    stretch_hi: float = ZETA

    def __post_init__(self):
        self.log_alpha = np.asarray(self.log_alpha, dtype=np.float64)
        if not (self.stretch_lo < 0.0 < 1.0 < self.stretch_hi):
            raise ConfigError("stretch interval must strictly contain [0, 1]")
        if not self.temperature > 0:
            raise ConfigError("gate temperature must be positive")

    @classmethod
    def init(cls, shape, rng, mean=INIT_MEAN, std=INIT_STD):
        return cls(rng.normal(mean, std, size=shape))

    @property
    def shift(self):
        """beta * log(-gamma / zeta), subtracted from log_alpha in P(z != 0)."""
        return self.temperature * np.log(-self.stretch_lo / self.stretch_hi)


def sample_uniform(rng, shape):
    # open interval keeps log(u) and log(1 - u) finite
    return rng.uniform(np.finfo(float).tiny, 1.0, size=shape)


def gates_from_noise(gp, u):
    """Reparameterized gates and d(gate)/d(log_alpha) for given uniforms ``u``.

    ``u`` has shape ``log_alpha.shape`` or ``(B,) + log_alpha.shape``.
    """
    u = np.asarray(u, dtype=np.float64)
    if u.ndim == gp.log_alpha.ndim + 1 and gp.log_alpha.ndim == 2:
        return kernels.hard_concrete(gp.log_alpha, u, gp.temperature, gp.stretch_lo, gp.stretch_hi)
    return kernels.hard_concrete_np(gp.log_alpha, u, gp.temperature, gp.stretch_lo, gp.stretch_hi)


def sample_gates(gp, rng, batch=None):
    """Training-time gate sample, one independent draw per batch element."""
    shape = gp.log_alpha.shape if batch is None else (batch,) + gp.log_alpha.shape
    z, _ = gates_from_noise(gp, sample_uniform(rng, shape))
    return z


def active_probability(gp):
    return expit(gp.log_alpha - gp.shift)


def l0_penalty(gp):
    return float(np.sum(active_probability(gp)))


def l0_penalty_grad(gp):
    p = active_probability(gp)
    return p * (1.0 - p)


def deterministic_mask(gp):
    s = expit(gp.log_alpha)
    # interpolation form is exact at s = 1/2 (the span 1.2 is not representable)
    return np.clip(s * gp.stretch_hi + (1.0 - s) * gp.stretch_lo, 0.0, 1.0)
