"""Discretized PDE state and trajectory dumps."""
import csv
import struct
from dataclasses import dataclass

import numpy as np

from sparsepde.errors import ConfigError, DivergenceError


@dataclass(frozen=True)
class PdeField:
    """Samples ``values[k] = y(x_k, time)`` on a uniform periodic grid."""

    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ConfigError(f"field must be 1-D, got shape {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def n_x(self):
        return self.values.shape[0]

    def check_finite(self):
        if not np.all(np.isfinite(self.values)):
            raise DivergenceError(f"non-finite field at t={self.time:g}")
        return self


def periodic_grid(length, n_x):
    return length * np.arange(n_x) / n_x


def write_trajectory_csv(path, times, fields, forcings):
    """Long-format dump with columns t, x_index, y, u."""
    fields = np.asarray(fields)
    forcings = np.asarray(forcings)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x_index", "y", "u"])
        for t, y, u in zip(times, fields, forcings):
            for k in range(y.shape[0]):
                w.writerow([repr(float(t)), k, repr(float(y[k])), repr(float(u[k]))])


_BIN_HEADER = struct.Struct("<qqd")


def write_trajectory_bin(path, fields, dt):
    """Binary dump: header (n_x, n_steps, dt) then row-major float64 samples."""
    fields = np.ascontiguousarray(fields, dtype="<f8")
    n_steps, n_x = fields.shape
    with open(path, "wb") as fh:
        fh.write(_BIN_HEADER.pack(n_x, n_steps, float(dt)))
        fh.write(fields.tobytes())


def read_trajectory_bin(path):
    with open(path, "rb") as fh:
        n_x, n_steps, dt = _BIN_HEADER.unpack(fh.read(_BIN_HEADER.size))
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != n_x * n_steps:
        raise ValueError(f"{path}: expected {n_x * n_steps} samples, found {data.size}")
    return data.reshape(n_steps, n_x), dt
