"""Sensing, actuation, reward and the two PDE control environments.

Observations are flat float64 arrays ``s = [m_1..m_8, mu_1..mu_p]``;
:class:`AgentState` splits and joins them when the structure matters.
Actions are normalized to [-1, 1]; the environment maps them to physical
amplitudes with ``g(a) = a_max * a``.
"""
from dataclasses import asdict, dataclass, replace

import numpy as np

from sparsepde.cdr import CdrConfig, cdr_step
from sparsepde.errors import ConfigError, DivergenceError, ParameterRangeError
from sparsepde.field import PdeField, periodic_grid
from sparsepde.ks import KsConfig, ks_step

DIVERGENCE_REWARD = -1.0e6


@dataclass(frozen=True)
class AgentState:
    measurements: np.ndarray
    params: np.ndarray

    @classmethod
    def split(cls, s, n_sens):
        s = np.asarray(s, dtype=np.float64)
        return cls(s[:n_sens].copy(), s[n_sens:].copy())

    def as_array(self):
        return np.concatenate([self.measurements, self.params])


@dataclass(frozen=True)
class ActuationProfile:
    centers: np.ndarray
    width: float
    amplitude_scale: float = 1.0
    length: float = 1.0

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=np.float64)
        object.__setattr__(self, "centers", c)
        if not self.width > 0 or not self.amplitude_scale > 0:
            raise ConfigError("actuator width and amplitude scale must be positive")
        if c.size > 1 and not np.all(np.diff(c) > 0):
            raise ConfigError("actuator centers must be strictly increasing")
        if np.any(c < 0) or np.any(c >= self.length):
            raise ConfigError("actuator centers must lie inside the domain")

    def kernel_matrix(self, grid):
        """psi(x_k, c_i) as an (n_x, n_a) matrix, periodic distance."""
        d = np.abs(np.asarray(grid)[:, None] - self.centers[None, :])
        d = np.minimum(d, self.length - d)
        return 0.5 * np.exp(-((d / self.width) ** 2))


@dataclass(frozen=True)
class RewardConfig:
    y_ref: float = 0.0
    u_ref: float = 0.0
    alpha_cost: float = 0.1

    def __post_init__(self):
        if not self.alpha_cost > 0:
            raise ConfigError("alpha_cost must be positive")


def build_actuation_field(a, profile, grid):
    """Physical forcing u(x_k) = sum_i a_max * a_i * psi(x_k, c_i)."""
    a = np.asarray(a, dtype=np.float64)
    if a.shape != profile.centers.shape:
        raise ConfigError(f"action has {a.size} entries, profile has {profile.centers.size} actuators")
    return profile.kernel_matrix(grid) @ (profile.amplitude_scale * a)


def measure(field, sensor_indices):
    idx = np.asarray(sensor_indices)
    if np.any(idx < 0) or np.any(idx >= field.n_x):
        raise ConfigError(f"sensor index outside [0, {field.n_x})")
    return field.values[idx].copy()


def reward_terms(field, a, cfg, profile):
    """(c1, c2): mean-square state error and mean-square actuator amplitude."""
    y = field.values
    if not np.all(np.isfinite(y)):
        raise DivergenceError("non-finite field in reward")
    u = profile.amplitude_scale * np.asarray(a, dtype=np.float64)
    c1 = float(np.mean((y - cfg.y_ref) ** 2))
    c2 = float(np.mean((u - cfg.u_ref) ** 2))
    return c1, c2


def compute_reward(field, a, cfg, profile):
    c1, c2 = reward_terms(field, a, cfg, profile)
    return -(c1 + cfg.alpha_cost * c2)


def add_measurement_noise(s, sigma, rng, n_sens=8):
    """Gaussian noise on the first ``n_sens`` entries of ``s`` only."""
    out = np.array(s, dtype=np.float64, copy=True)
    if sigma > 0:
        out[..., :n_sens] += rng.normal(0.0, sigma, size=out[..., :n_sens].shape)
    return out


def initial_condition(grid, length, rng, n_modes=3, amplitude=0.5):
    """Random sum of the first ``n_modes`` cosines with uniform amplitudes/phases."""
    amps = rng.uniform(-amplitude, amplitude, size=n_modes)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=n_modes)
    y = np.zeros_like(grid)
    for n in range(1, n_modes + 1):
        y += amps[n - 1] * np.cos(2.0 * np.pi * n * grid / length + phases[n - 1])
    return y


@dataclass(frozen=True)
class EnvConfig:
    """Everything that defines one of the PDE control tasks.

    ``param_box`` holds one (lo, hi) pair per PDE parameter; ``train_grid``
    one list of admissible values per parameter.
    """

    name: str
    length: float
    n_x: int
    dt_solver: float
    dt_ctrl: float
    t_end: float
    t_warmup: float
    n_sensors: int
    n_actuators: int
    kernel_width: float
    a_max: float
    param_names: tuple
    param_box: tuple
    train_grid: tuple
    alpha_cost: float = 0.1

    @property
    def n_params(self):
        return len(self.param_names)

    @property
    def state_dim(self):
        return self.n_sensors + self.n_params

    @property
    def substeps(self):
        k = self.dt_ctrl / self.dt_solver
        return int(round(k))

    @property
    def n_control_steps(self):
        return int(round((self.t_end - self.t_warmup) / self.dt_ctrl))

    def validate(self):
        if self.n_x % self.n_sensors:
            raise ConfigError("n_x must be a multiple of the sensor count")
        k = self.dt_ctrl / self.dt_solver
        if abs(k - round(k)) > 1e-9 or round(k) < 1:
            raise ConfigError("dt_ctrl must be an integer multiple of dt_solver")
        if len(self.param_box) != self.n_params or len(self.train_grid) != self.n_params:
            raise ConfigError("param_box/train_grid must have one entry per parameter")
        for (lo, hi), grid in zip(self.param_box, self.train_grid):
            if not lo <= hi:
                raise ConfigError("empty parameter box")
            if any(v < lo or v > hi for v in grid):
                raise ConfigError("training grid leaves the parameter box")
        return self

    def to_dict(self):
        d = asdict(self)
        d["param_names"] = list(self.param_names)
        d["param_box"] = [list(p) for p in self.param_box]
        d["train_grid"] = [list(g) for g in self.train_grid]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown environment keys: {sorted(unknown)}")
        d["param_names"] = tuple(d["param_names"])
        d["param_box"] = tuple(tuple(float(v) for v in p) for p in d["param_box"])
        d["train_grid"] = tuple(tuple(float(v) for v in g) for g in d["train_grid"])
        return cls(**d).validate()


KS_DEFAULT = EnvConfig(
    name="ks",
    length=22.0,
    n_x=64,
    dt_solver=0.1,
    dt_ctrl=0.2,
    t_end=300.0,
    t_warmup=100.0,
    n_sensors=8,
    n_actuators=8,
    kernel_width=0.8,
    a_max=1.0,
    param_names=("μ",),
    param_box=((-0.25, 0.25),),
    train_grid=((-0.2, -0.15, -0.1, -0.05, 0.0, 0.05, 0.1, 0.15, 0.2),),
)

CDR_DEFAULT = EnvConfig(
    name="cdr",
    length=1.0,
    n_x=200,
    dt_solver=0.1,
    dt_ctrl=0.2,
    t_end=15.0,
    t_warmup=5.0,
    n_sensors=8,
    n_actuators=8,
    # 2.5 grid spacings; 2.5 physical units would exceed the domain
    kernel_width=2.5 * 1.0 / 200,
    a_max=0.25,
    param_names=("ν", "c", "r"),
    param_box=((0.001, 0.008), (0.1, 0.35), (0.1, 0.35)),
    train_grid=(
        (0.001, 0.002, 0.003, 0.004, 0.005, 0.006, 0.007),
        (0.1, 0.125, 0.15, 0.175, 0.2),
        (0.1, 0.125, 0.15, 0.175, 0.2),
    ),
)

DEFAULTS = {"ks": KS_DEFAULT, "cdr": CDR_DEFAULT}


def env_config(name, **overrides):
    try:
        base = DEFAULTS[name]
    except KeyError:
        raise ConfigError(f"unknown environment {name!r}; expected one of {sorted(DEFAULTS)}") from None
    if not overrides:
        return base
    d = base.to_dict()
    d.update(overrides)
    return EnvConfig.from_dict(d)


class PdeControlEnv:
    """Episodic control of a periodic 1-D PDE through Gaussian actuators.

    Not thread-safe; use one instance per run.
    """

    def __init__(self, cfg, reward_cfg=None):
        self.cfg = cfg.validate()
        self.reward_cfg = reward_cfg or RewardConfig(alpha_cost=cfg.alpha_cost)
        self.grid = periodic_grid(cfg.length, cfg.n_x)
        self.sensor_indices = np.arange(cfg.n_sensors) * (cfg.n_x // cfg.n_sensors)
        # actuators co-located with sensors when counts match
        if cfg.n_actuators == cfg.n_sensors:
            centers = self.grid[self.sensor_indices]
        else:
            centers = cfg.length * np.arange(cfg.n_actuators) / cfg.n_actuators
        self.profile = ActuationProfile(
            centers=centers,
            width=cfg.kernel_width,
            amplitude_scale=cfg.a_max,
            length=cfg.length,
        )
        self._kernel = self.profile.kernel_matrix(self.grid)
        self.param_box = np.array(cfg.param_box, dtype=np.float64).reshape(-1, 2)
        self.field = None
        self.params = None
        self.steps = 0
        self.done = True
        self.diverged = False
        self.last_costs = (0.0, 0.0)
        self.last_forcing = np.zeros(cfg.n_x)

    @property
    def state_dim(self):
        return self.cfg.state_dim

    @property
    def action_dim(self):
        return self.cfg.n_actuators

    @property
    def n_sensors(self):
        return self.cfg.n_sensors

    def with_box(self, box):
        """Copy of this environment accepting parameters in ``box``."""
        return type(self)(replace(self.cfg, param_box=tuple(tuple(b) for b in box)), self.reward_cfg)

    # subclasses provide the solver
    def _solver_step(self, field, forcing):
        raise NotImplementedError

    def _set_params(self, params):
        raise NotImplementedError

    def check_params(self, params):
        p = np.asarray(params, dtype=np.float64).reshape(-1)
        if p.shape[0] != self.cfg.n_params:
            raise ConfigError(f"{self.cfg.name} expects {self.cfg.n_params} parameters, got {p.shape[0]}")
        lo, hi = self.param_box[:, 0], self.param_box[:, 1]
        if np.any(p < lo - 1e-12) or np.any(p > hi + 1e-12):
            raise ParameterRangeError(
                f"parameters {p.tolist()} outside box {self.param_box.tolist()}"
            )
        return p

    def observe(self):
        return np.concatenate([measure(self.field, self.sensor_indices), self.params])

    def forcing(self, a):
        return self._kernel @ (self.cfg.a_max * np.asarray(a, dtype=np.float64))

    def reset(self, params, seed):
        """Seeded initial condition, uncontrolled warm-up, first observation."""
        self.params = self.check_params(params)
        self._set_params(self.params)
        rng = np.random.default_rng(seed)
        field = PdeField(initial_condition(self.grid, self.cfg.length, rng), 0.0)
        zero = np.zeros(self.cfg.n_x)
        n_warm = int(round(self.cfg.t_warmup / self.cfg.dt_solver))
        for _ in range(n_warm):
            field = self._solver_step(field, zero)
        self.field = field
        self.steps = 0
        self.done = False
        self.diverged = False
        self.last_costs = (0.0, 0.0)
        return self.observe()

    def step(self, a):
        """Zero-order hold of ``a`` for one control period."""
        if self.done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        a = np.asarray(a, dtype=np.float64)
        if a.shape != (self.cfg.n_actuators,):
            raise ConfigError(f"action must have shape ({self.cfg.n_actuators},), got {a.shape}")
        u = self.forcing(a)
        self.last_forcing = u
        field = self.field
        try:
            for _ in range(self.cfg.substeps):
                field = self._solver_step(field, u)
            c1, c2 = reward_terms(field, a, self.reward_cfg, self.profile)
        except DivergenceError:
            self.done = True
            self.diverged = True
            self.last_costs = (float("inf"), float("inf"))
            return self.observe(), DIVERGENCE_REWARD, True
        self.field = field
        self.steps += 1
        self.last_costs = (c1, c2)
        self.done = self.steps >= self.cfg.n_control_steps
        return self.observe(), -(c1 + self.reward_cfg.alpha_cost * c2), self.done


class KsEnv(PdeControlEnv):
    def __init__(self, cfg=KS_DEFAULT, reward_cfg=None):
        super().__init__(cfg, reward_cfg)
        self._ks = KsConfig(L=cfg.length, n_x=cfg.n_x, dt=cfg.dt_solver)

    def _set_params(self, params):
        self._ks = replace(self._ks, mu=float(params[0]))

    def _solver_step(self, field, forcing):
        return ks_step(field, forcing, self._ks)


class CdrEnv(PdeControlEnv):
    def __init__(self, cfg=CDR_DEFAULT, reward_cfg=None):
        super().__init__(cfg, reward_cfg)
        self._cdr = CdrConfig(L=cfg.length, n_x=cfg.n_x, dt=cfg.dt_solver)

    def _set_params(self, params):
        nu, c, r = (float(v) for v in params)
        self._cdr = replace(self._cdr, nu=nu, c=c, r=r)

    def _solver_step(self, field, forcing):
        return cdr_step(field, forcing, self._cdr)


def make_env(cfg):
    if isinstance(cfg, str):
        cfg = env_config(cfg)
    if cfg.name == "ks":
        return KsEnv(cfg)
    if cfg.name == "cdr":
        return CdrEnv(cfg)
    raise ConfigError(f"unknown environment {cfg.name!r}")
