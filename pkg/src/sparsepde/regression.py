"""Supervised sparse regression with hard-concrete gates.

Fits y ~ Theta (Xi * z) by Adam on mean squared error plus lam * E[L0],
drawing one gate sample per data point. Used to check that the gate
machinery finds a planted polynomial support.
"""
from dataclasses import dataclass

import numpy as np

from sparsepde import kernels
from sparsepde.gates import GateParams, active_probability, deterministic_mask, gates_from_noise, sample_uniform
from sparsepde.nn import Adam
from sparsepde.td3 import ACTIVE_THRESHOLD


@dataclass
class SparseFit:
    Xi: np.ndarray
    log_alpha: np.ndarray
    losses: list

    @property
    def mask(self):
        return deterministic_mask(GateParams(self.log_alpha))

    @property
    def coefficients(self):
        return self.Xi * self.mask

    def support(self, threshold=ACTIVE_THRESHOLD):
        return np.flatnonzero(self.mask[:, 0] > threshold)


def fit_sparse_regression(theta, y, lam=1e-2, steps=3000, batch=256, lr=1e-2, seed=0):
    theta = np.asarray(theta, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    N, F = theta.shape
    rng = np.random.default_rng(seed)
    Xi = np.zeros((F, 1))
    gates = GateParams.init((F, 1), rng)
    params = [Xi, gates.log_alpha]
    opt = Adam(params, lr=lr)
    losses = []
    for _ in range(steps):
        idx = rng.integers(0, N, size=batch)
        th = theta[idx]
        z, dz = gates_from_noise(gates, sample_uniform(rng, (batch, F, 1)))
        err = kernels.gated_forward(th, Xi, z) - y[idx]
        gXi, glog = kernels.gated_backward(th, Xi, z, dz, (2.0 / batch) * err)
        p = active_probability(gates)
        glog = glog + lam * p * (1.0 - p)
        opt.step(params, [gXi, glog])
        losses.append(float(np.mean(err * err)) + lam * float(p.sum()))
    return SparseFit(Xi.copy(), gates.log_alpha.copy(), losses)
