"""TD3 with dense or sparse polynomial actors.

Four actor variants share one agent:

* ``dnn`` - tanh-output MLP on the full state;
* ``dnn_no_param`` - the same MLP fed only the sensor readings (critics still
  see the parameters);
* ``poly_l0`` - ``tanh(Theta(s) (Xi * Z))`` with hard-concrete gates Z and an
  expected-L0 penalty;
* ``poly_l1`` - ``tanh(Theta(s) Xi)`` with an L1 penalty on Xi.
"""
import time
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from sparsepde import kernels
from sparsepde.dictionary import DictionarySpec
from sparsepde.env import add_measurement_noise
from sparsepde.errors import ConfigError, DivergenceError
from sparsepde.gates import (
    GateParams,
    active_probability,
    deterministic_mask,
    gates_from_noise,
    l0_penalty,
    sample_uniform,
)
from sparsepde.nn import Adam, Mlp

VARIANTS = ("dnn", "dnn_no_param", "poly_l0", "poly_l1")
DEFAULT_LAMBDA = {"dnn": 0.0, "dnn_no_param": 0.0, "poly_l0": 5e-4, "poly_l1": 5e-3}
ACTIVE_THRESHOLD = 1e-3


def stream(seed, tag):
    """Independent generator for (master seed, purpose tag)."""
    return np.random.default_rng([int(seed), zlib.crc32(tag.encode())])


@dataclass
class Td3Hyper:
    batch_size: int = 256
    gamma: float = 0.99
    rho: float = 0.005
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    hidden: int = 256
    exploration_noise: float = 0.1
    target_noise: float = 0.2
    target_noise_clip: float = 0.5
    policy_delay: int = 2
    warmup_steps: int = 1000
    buffer_size: int = 1_000_000
    lambda_sparsity: float = None
    degree: int = 3

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ConfigError("discount must lie in (0, 1)")
        if not 0 < self.rho <= 1:
            raise ConfigError("soft update rate must lie in (0, 1]")
        if not self.target_noise_clip > 0:
            raise ConfigError("target noise clip must be positive")
        if self.policy_delay < 1 or self.batch_size < 1 or self.degree < 1:
            raise ConfigError("policy_delay, batch_size and degree must be >= 1")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown hyperparameters: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# replay buffer
# ---------------------------------------------------------------------------


class ReplayBuffer:
    """FIFO ring of transitions; storage grows on demand up to ``capacity``."""

    def __init__(self, state_dim, action_dim, capacity=1_000_000):
        if capacity < 1:
            raise ConfigError("replay capacity must be positive")
        self.capacity = int(capacity)
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.ptr = 0
        self.size = 0
        self._alloc(min(self.capacity, 4096))

    def _alloc(self, n):
        def grow(old, width):
            new = np.zeros((n, width))
            if old is not None:
                new[: old.shape[0]] = old
            return new

        self.s = grow(getattr(self, "s", None), self.state_dim)
        self.a = grow(getattr(self, "a", None), self.action_dim)
        self.r = grow(getattr(self, "r", None), 1)
        self.s2 = grow(getattr(self, "s2", None), self.state_dim)
        self.done = grow(getattr(self, "done", None), 1)

    def __len__(self):
        return self.size

    def add(self, s, a, r, s2, done):
        if self.ptr >= self.s.shape[0]:
            self._alloc(min(self.capacity, 2 * self.s.shape[0]))
        i = self.ptr
        self.s[i] = s
        self.a[i] = a
        self.r[i] = r
        self.s2[i] = s2
        self.done[i] = float(done)
        self.ptr = (self.ptr + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size, rng):
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=batch_size)
        return Batch(self.s[idx], self.a[idx], self.r[idx, 0], self.s2[idx], self.done[idx, 0])


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    done: np.ndarray


# ---------------------------------------------------------------------------
# actors
# ---------------------------------------------------------------------------


class DnnActor:
    def __init__(self, state_dim, action_dim, hidden, rng, input_slice=None):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.input_dim = state_dim if input_slice is None else input_slice
        self.net = Mlp((self.input_dim, hidden, hidden, action_dim), output="tanh", rng=rng)

    @property
    def params(self):
        return self.net.params

    def copy(self):
        new = object.__new__(DnnActor)
        new.state_dim, new.action_dim, new.input_dim = self.state_dim, self.action_dim, self.input_dim
        new.net = self.net.copy()
        return new

    def forward(self, S, mode="deterministic", rng=None, noise=None):
        S = np.atleast_2d(S)
        if S.shape[1] != self.state_dim:
            raise ConfigError(f"actor expects state dim {self.state_dim}, got {S.shape[1]}")
        return self.net.forward(S[:, : self.input_dim])

    def backward(self, cache, ga):
        grads, _ = self.net.backward(cache, ga)
        return grads

    def penalty(self):
        return 0.0

    def penalty_grads(self):
        return [np.zeros_like(p) for p in self.params]

    def active_count(self, threshold=ACTIVE_THRESHOLD):
        return int(sum(np.count_nonzero(np.abs(p) > threshold) for p in self.params))


class PolyActor:
    """tanh(Theta(s) (Xi * Z)) with optional hard-concrete gates."""

    def __init__(self, spec, action_dim, rng, kind="l0", lam=0.0, Xi=None, log_alpha=None):
        if kind not in ("l0", "l1"):
            raise ConfigError(f"unknown polynomial actor kind {kind!r}")
        self.spec = spec
        self.kind = kind
        self.lam = float(lam)
        self.state_dim = spec.input_dim
        self.action_dim = action_dim
        F = spec.feature_count
        if Xi is None:
            bound = 1.0 / np.sqrt(F)
            Xi = rng.uniform(-bound, bound, size=(F, action_dim))
        self.Xi = np.array(Xi, dtype=np.float64)
        self.gates = None
        if kind == "l0":
            self.gates = GateParams(log_alpha) if log_alpha is not None else GateParams.init((F, action_dim), rng)
            if self.gates.log_alpha.shape != self.Xi.shape:
                raise ConfigError("gate and coefficient shapes differ")

    @property
    def params(self):
        return [self.Xi, self.gates.log_alpha] if self.kind == "l0" else [self.Xi]

    def copy(self):
        return PolyActor(
            self.spec, self.action_dim, None, self.kind, self.lam, self.Xi.copy(),
            None if self.gates is None else self.gates.log_alpha.copy(),
        )

    def mask(self):
        """Deterministic gate values (all ones without gates)."""
        if self.gates is None:
            return np.ones_like(self.Xi)
        return deterministic_mask(self.gates)

    def effective_coefficients(self):
        return self.Xi * self.mask()

    def forward(self, S, mode="deterministic", rng=None, noise=None):
        """Actions for a batch; ``noise`` fixes the gate uniforms (B, F, A)."""
        S = np.atleast_2d(S)
        if S.shape[1] != self.state_dim:
            raise ConfigError(f"actor expects state dim {self.state_dim}, got {S.shape[1]}")
        theta = self.spec.evaluate(S)
        if self.kind == "l0" and mode == "train_sample":
            if noise is None:
                noise = sample_uniform(rng, (theta.shape[0],) + self.Xi.shape)
            z, dz = gates_from_noise(self.gates, noise)
            pre = kernels.gated_forward(theta, self.Xi, z)
            cache = ("sampled", theta, z, dz)
        elif mode in ("train_sample", "deterministic"):
            m = self.mask()
            pre = theta @ (self.Xi * m)
            cache = ("fixed", theta, m, None)
        else:
            raise ConfigError(f"unknown actor mode {mode!r}")
        a = np.tanh(pre)
        return a, cache + (a,)

    def backward(self, cache, ga):
        how, theta, z, dz, a = cache
        gpre = ga * (1.0 - a * a)
        if how == "sampled":
            gXi, glog = kernels.gated_backward(theta, self.Xi, z, dz, gpre)
            return [gXi, glog]
        g = theta.T @ gpre
        if self.kind == "l1":
            return [g]
        s = 1.0 / (1.0 + np.exp(-self.gates.log_alpha))
        span = self.gates.stretch_hi - self.gates.stretch_lo
        d = s * self.gates.stretch_hi + (1.0 - s) * self.gates.stretch_lo
        dmask = np.where((d > 0) & (d < 1), span * s * (1 - s), 0.0)
        return [g * z, g * self.Xi * dmask]

    def penalty(self):
        if self.kind == "l0":
            return self.lam * l0_penalty(self.gates)
        return self.lam * float(np.sum(np.abs(self.Xi)))

    def penalty_grads(self):
        if self.kind == "l0":
            p = active_probability(self.gates)
            return [np.zeros_like(self.Xi), self.lam * p * (1.0 - p)]
        return [self.lam * np.sign(self.Xi)]

    def active_count(self, threshold=ACTIVE_THRESHOLD):
        if self.kind == "l0":
            return int(np.count_nonzero(self.mask() > threshold))
        return int(np.count_nonzero(np.abs(self.Xi) > threshold))


def make_actor(variant, state_dim, action_dim, n_sens, hyper, rng, names=()):
    if variant == "dnn":
        return DnnActor(state_dim, action_dim, hyper.hidden, rng)
    if variant == "dnn_no_param":
        return DnnActor(state_dim, action_dim, hyper.hidden, rng, input_slice=n_sens)
    if variant in ("poly_l0", "poly_l1"):
        spec = DictionarySpec(state_dim, hyper.degree, tuple(names))
        lam = DEFAULT_LAMBDA[variant] if hyper.lambda_sparsity is None else hyper.lambda_sparsity
        return PolyActor(spec, action_dim, rng, kind=variant[-2:], lam=lam)
    raise ConfigError(f"unknown actor variant {variant!r}; expected one of {VARIANTS}")


def actor_forward(actor, s, mode="deterministic", rng=None):
    """Action(s) in [-1, 1] without exploration noise."""
    s = np.asarray(s, dtype=np.float64)
    a, _ = actor.forward(np.atleast_2d(s), mode, rng)
    return a[0] if s.ndim == 1 else a


# ---------------------------------------------------------------------------
# agent
# ---------------------------------------------------------------------------


def soft_update(target_params, online_params, rho):
    """target <- rho * online + (1 - rho) * target, in place."""
    for t, p in zip(target_params, online_params):
        if t.shape != p.shape:
            raise ConfigError(f"soft update shape mismatch {t.shape} vs {p.shape}")
        t *= 1.0 - rho
        t += rho * p
    return target_params


def td_targets(r, q1_next, q2_next, gamma):
    return r + gamma * np.minimum(q1_next, q2_next)


class Td3Agent:
    def __init__(self, state_dim, action_dim, variant="poly_l0", hyper=None, seed=0,
                 n_sens=None, names=()):
        if variant not in VARIANTS:
            raise ConfigError(f"unknown actor variant {variant!r}; expected one of {VARIANTS}")
        self.hyper = hyper or Td3Hyper()
        self.variant = variant
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.n_sens = state_dim if n_sens is None else n_sens
        self.names = tuple(names)
        self.seed = int(seed)
        h = self.hyper
        init = stream(seed, "init")
        self.actor = make_actor(variant, state_dim, action_dim, self.n_sens, h, init, names)
        self.q1 = Mlp((state_dim + action_dim, h.hidden, h.hidden, 1), rng=init)
        self.q2 = Mlp((state_dim + action_dim, h.hidden, h.hidden, 1), rng=init)
        self.actor_target = self.actor.copy()
        self.q1_target = self.q1.copy()
        self.q2_target = self.q2.copy()
        self.actor_opt = Adam(self.actor.params, lr=h.actor_lr)
        self.critic_opt = Adam(self.q1.params + self.q2.params, lr=h.critic_lr)
        self.rng_explore = stream(seed, "explore")
        self.rng_replay = stream(seed, "replay")
        self.rng_target = stream(seed, "target_noise")
        self.rng_gates = stream(seed, "gates")
        self.total_updates = 0

    # -- acting -------------------------------------------------------------

    def act(self, s, explore=False):
        a = actor_forward(self.actor, s, "deterministic")
        if explore:
            a = a + self.rng_explore.normal(0.0, self.hyper.exploration_noise, size=a.shape)
        return np.clip(a, -1.0, 1.0)

    def random_action(self):
        return self.rng_explore.uniform(-1.0, 1.0, size=self.action_dim)

    # -- learning -----------------------------------------------------------

    def critic_target(self, batch, noise=None):
        """TD targets with clipped target-policy smoothing."""
        h = self.hyper
        a2, _ = self.actor_target.forward(batch.s2, "deterministic")
        if noise is None:
            noise = self.rng_target.normal(0.0, h.target_noise, size=a2.shape)
        noise = np.clip(noise, -h.target_noise_clip, h.target_noise_clip)
        a2 = np.clip(a2 + noise, -1.0, 1.0)
        x2 = np.concatenate([batch.s2, a2], axis=1)
        return td_targets(batch.r, self.q1_target(x2)[:, 0], self.q2_target(x2)[:, 0], h.gamma)

    def critic_loss_and_grads(self, batch, q):
        x = np.concatenate([batch.s, batch.a], axis=1)
        B = x.shape[0]
        loss = 0.0
        grads = []
        for net in (self.q1, self.q2):
            pred, tape = net.forward(x)
            err = pred[:, 0] - q
            loss += float(np.mean(err * err))
            g, _ = net.backward(tape, (2.0 / B) * err[:, None])
            grads += g
        return loss, grads

    def update_critics(self, batch, noise=None):
        q = self.critic_target(batch, noise)
        loss, grads = self.critic_loss_and_grads(batch, q)
        if not np.isfinite(loss):
            raise DivergenceError(
                f"critic loss is {loss} after {self.total_updates} updates "
                f"(|r| max {np.max(np.abs(batch.r)):g}, |q| max {np.max(np.abs(q)):g})"
            )
        self.critic_opt.step(self.q1.params + self.q2.params, grads)
        return loss

    def actor_loss_and_grads(self, batch, noise=None):
        """-mean Q1(s, pi(s)) + sparsity penalty, and its actor gradients."""
        a, cache = self.actor.forward(batch.s, "train_sample", self.rng_gates, noise=noise)
        x = np.concatenate([batch.s, a], axis=1)
        qv, tape = self.q1.forward(x)
        B = x.shape[0]
        _, gin = self.q1.backward(tape, np.full((B, 1), -1.0 / B), param_grads=False)
        grads = self.actor.backward(cache, gin[:, self.state_dim:])
        pen = self.actor.penalty()
        grads = [g + pg for g, pg in zip(grads, self.actor.penalty_grads())]
        return float(-np.mean(qv)) + pen, grads

    def update_actor(self, batch, noise=None):
        loss, grads = self.actor_loss_and_grads(batch, noise)
        self.actor_opt.step(self.actor.params, grads)
        self.soft_update_targets()
        return loss

    def soft_update_targets(self):
        rho = self.hyper.rho
        soft_update(self.q1_target.params, self.q1.params, rho)
        soft_update(self.q2_target.params, self.q2.params, rho)
        soft_update(self.actor_target.params, self.actor.params, rho)

    def train_step(self, buffer):
        batch = buffer.sample(self.hyper.batch_size, self.rng_replay)
        closs = self.update_critics(batch)
        self.total_updates += 1
        aloss = None
        if self.total_updates % self.hyper.policy_delay == 0:
            aloss = self.update_actor(batch)
        return closs, aloss

    # -- persistence --------------------------------------------------------

    def named_arrays(self):
        """Every learnable and optimizer array under a stable name."""
        out = {}

        def put(prefix, arrays):
            for i, a in enumerate(arrays):
                out[f"{prefix}.{i}"] = a

        put("actor", self.actor.params)
        put("actor_target", self.actor_target.params)
        put("q1", self.q1.params)
        put("q2", self.q2.params)
        put("q1_target", self.q1_target.params)
        put("q2_target", self.q2_target.params)
        put("actor_opt", self.actor_opt.state_arrays())
        put("critic_opt", self.critic_opt.state_arrays())
        return out

    def load_named_arrays(self, arrays):
        """Copy arrays in place; raises ``ValueError`` on any shape mismatch."""
        current = self.named_arrays()
        if set(arrays) != set(current):
            missing = sorted(set(current) - set(arrays))
            extra = sorted(set(arrays) - set(current))
            raise ValueError(f"array names differ (missing {missing[:3]}, unexpected {extra[:3]})")
        for name, dst in current.items():
            src = arrays[name]
            if src.shape != dst.shape:
                raise ValueError(f"{name}: shape {src.shape} != expected {dst.shape}")
        for name, dst in current.items():
            dst[...] = arrays[name]

    def rng_states(self):
        return {
            "explore": self.rng_explore.bit_generator.state,
            "replay": self.rng_replay.bit_generator.state,
            "target_noise": self.rng_target.bit_generator.state,
            "gates": self.rng_gates.bit_generator.state,
        }

    def set_rng_states(self, states):
        self.rng_explore.bit_generator.state = states["explore"]
        self.rng_replay.bit_generator.state = states["replay"]
        self.rng_target.bit_generator.state = states["target_noise"]
        self.rng_gates.bit_generator.state = states["gates"]


# ---------------------------------------------------------------------------
# episodes and the training loop
# ---------------------------------------------------------------------------


def rollout(env, policy, params, seed, noise_sigma=0.0, rng=None):
    """One episode with ``policy(s) -> a``; returns summed reward and costs.

    Measurement noise (if any) corrupts only what the policy sees.
    """
    s = env.reset(params, seed)
    total = c1 = c2 = 0.0
    done = False
    while not done:
        obs = add_measurement_noise(s, noise_sigma, rng, env.n_sensors)
        s, r, done = env.step(policy(obs))
        total += r
        if not env.diverged:
            c1 += env.last_costs[0]
            c2 += env.last_costs[1]
    return {"reward": total, "c1": c1, "c2": c2, "steps": env.steps, "diverged": env.diverged}


@dataclass
class Schedule:
    """How long to train and where parameters come from.

    ``fixed_params`` pins the PDE parameters; otherwise every episode draws
    each parameter uniformly from its entry of ``train_grid``.
    """

    episodes: int
    train_grid: tuple = ()
    fixed_params: tuple = None
    checkpoint_every: int = 0
    on_checkpoint: object = None
    on_episode: object = None
    log: list = field(default_factory=list)


def sample_grid_params(grid, rng):
    return np.array([g[rng.integers(len(g))] for g in grid], dtype=np.float64)


def train(agent, env, schedule):
    """Run TD3 episodes; returns the per-episode metric rows."""
    h = agent.hyper
    buffer = ReplayBuffer(agent.state_dim, agent.action_dim, h.buffer_size)
    rng_params = stream(agent.seed, "params")
    rng_env = stream(agent.seed, "env")
    steps = 0
    t0 = time.perf_counter()
    rows = schedule.log
    for ep in range(1, schedule.episodes + 1):
        if schedule.fixed_params is not None:
            params = np.asarray(schedule.fixed_params, dtype=np.float64)
        else:
            params = sample_grid_params(schedule.train_grid, rng_params)
        s = env.reset(params, int(rng_env.integers(2**31)))
        total = c1 = c2 = 0.0
        done = False
        while not done:
            a = agent.random_action() if steps < h.warmup_steps else agent.act(s, explore=True)
            s2, r, done = env.step(a)
            steps += 1
            total += r
            if env.diverged:
                # sentinel transitions would swamp the critic; drop them
                break
            c1 += env.last_costs[0]
            c2 += env.last_costs[1]
            buffer.add(s, a, r, s2, done)
            s = s2
            if steps >= h.warmup_steps and len(buffer) >= 1:
                agent.train_step(buffer)
        row = {
            "episode": ep,
            "reward": total,
            "c1": c1,
            "c2": c2,
            "active_coeffs": agent.actor.active_count(),
            "wall_time": time.perf_counter() - t0,
        }
        rows.append(row)
        if schedule.on_episode is not None:
            schedule.on_episode(row, env)
        if schedule.checkpoint_every and ep % schedule.checkpoint_every == 0 and schedule.on_checkpoint:
            schedule.on_checkpoint(agent, ep)
    return rows
