"""Config-driven training sweeps, the evaluation protocol and plot data.

Layout of a run directory::

    <out>/<name>/config.json
    <out>/<name>/<variant>/seed_<s>/metrics.csv
    <out>/<name>/<variant>/seed_<s>/checkpoint_ep00050.json ... checkpoint_final.json
    <out>/<name>/plot_long.csv, plot_aggregate.csv

Every random stream is derived from (seed, purpose tag), so the bytes of all
outputs except the ``wall_time`` column are fixed by the config.
"""
import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from sparsepde.checkpoint import load_checkpoint, save_checkpoint
from sparsepde.dictionary import default_names
from sparsepde.env import EnvConfig, env_config, make_env
from sparsepde.errors import ConfigError
from sparsepde.td3 import VARIANTS, Schedule, Td3Agent, Td3Hyper, rollout, stream, train

log = logging.getLogger(__name__)

DEFAULT_SEEDS = (1, 7, 92, 256)
DEFAULT_EPISODES = {"ks": 60, "cdr": 300}
METRICS = ("reward", "c1", "c2", "active_coeffs")
MODES = ("interpolation", "extrapolation")

# unseen parameters that are always evaluated
REFERENCE_POINTS = {
    "ks": {"interpolation": [(0.121,)], "extrapolation": [(0.225,)]},
    "cdr": {
        "interpolation": [(0.006, 0.191, 0.179)],
        "extrapolation": [(0.008, 0.313, 0.303)],
    },
}


def output_root(default="runs"):
    return Path(os.environ.get("SPARSEPDE_OUT") or default)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class EvalProtocol:
    mode: str = "interpolation"
    noise_sigma: float = 0.0
    episodes_per_point: int = 5
    n_points: int = 4
    include_reference: bool = True
    baselines: tuple = ("zero",)
    seed: int = 0
    points: tuple = ()  # explicit parameter points replace the sampled ones

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"evaluation mode must be one of {MODES}, got {self.mode!r}")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")
        if self.episodes_per_point < 1 or self.n_points < 0:
            raise ConfigError("episodes_per_point must be >= 1 and n_points >= 0")
        self.baselines = tuple(self.baselines)
        self.points = tuple(tuple(float(v) for v in p) for p in self.points)
        for b in self.baselines:
            if b not in ("zero", "random"):
                raise ConfigError(f"unknown baseline {b!r}")

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown evaluation keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        d = dict(self.__dict__)
        d["baselines"] = list(self.baselines)
        d["points"] = [list(p) for p in self.points]
        return d


@dataclass
class RunConfig:
    env: EnvConfig
    variants: tuple = ("poly_l0",)
    hyper: Td3Hyper = field(default_factory=Td3Hyper)
    seeds: tuple = DEFAULT_SEEDS
    episodes: int = None
    fixed_params: tuple = None
    checkpoint_every: int = 0
    evaluation: tuple = ()
    name: str = "run"
    out_dir: str = "runs"

    def __post_init__(self):
        self.variants = tuple(self.variants)
        self.seeds = tuple(int(s) for s in self.seeds)
        if self.episodes is None:
            self.episodes = DEFAULT_EPISODES.get(self.env.name, 100)
        self.validate()

    def validate(self):
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if not self.variants:
            raise ConfigError("at least one variant is required")
        for v in self.variants:
            if v not in VARIANTS:
                raise ConfigError(f"unknown variant {v!r}; expected one of {VARIANTS}")
        if self.hyper.degree < 1:
            raise ConfigError("dictionary degree must be >= 1")
        if self.episodes < 1:
            raise ConfigError("episodes must be >= 1")
        if not self.name or "/" in self.name:
            raise ConfigError(f"invalid run name {self.name!r}")
        self.env.validate()
        if self.fixed_params is not None:
            make_env(self.env).check_params(self.fixed_params)
            self.fixed_params = tuple(float(v) for v in self.fixed_params)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {"env", "variant", "variants", "hyper", "degree", "seeds", "episodes",
                 "train_grid", "fixed_params", "checkpoint_every", "evaluation", "name", "out_dir"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "env" not in d:
            raise ConfigError("config needs an 'env' block")
        env_block = d.pop("env")
        if isinstance(env_block, str):
            env_block = {"name": env_block}
        env_block = dict(env_block)
        if "train_grid" in d:
            env_block["train_grid"] = d.pop("train_grid")
        name = env_block.pop("name", None)
        if name is None:
            raise ConfigError("env block needs a 'name'")
        env = env_config(name, **env_block)
        if "variant" in d and "variants" in d:
            raise ConfigError("give either 'variant' or 'variants', not both")
        variants = d.pop("variants", None) or [d.pop("variant", "poly_l0")]
        hyper = dict(d.pop("hyper", {}))
        if "degree" in d:
            hyper["degree"] = d.pop("degree")
        evaluation = tuple(EvalProtocol.from_dict(e) for e in d.pop("evaluation", ()))
        return cls(env=env, variants=variants, hyper=Td3Hyper.from_dict(hyper),
                   evaluation=evaluation, **d)

    @classmethod
    def from_json(cls, path):
        try:
            with open(path) as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(d)

    def to_dict(self):
        return {
            "name": self.name,
            "env": self.env.to_dict(),
            "variants": list(self.variants),
            "hyper": self.hyper.to_dict(),
            "seeds": list(self.seeds),
            "episodes": self.episodes,
            "fixed_params": None if self.fixed_params is None else list(self.fixed_params),
            "checkpoint_every": self.checkpoint_every,
            "evaluation": [e.to_dict() for e in self.evaluation],
            "out_dir": self.out_dir,
        }


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def run_dir(cfg, out_root=None):
    root = Path(out_root) if out_root is not None else output_root(cfg.out_dir)
    return root / cfg.name


def seed_dir(base, variant, seed):
    return Path(base) / variant / f"seed_{seed}"


def make_agent(env_cfg, variant, hyper, seed):
    names = default_names(env_cfg.n_sensors, env_cfg.param_names)
    return Td3Agent(env_cfg.state_dim, env_cfg.n_actuators, variant, hyper, seed,
                    n_sens=env_cfg.n_sensors, names=names)


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else str(v)


def write_metrics(path, rows):
    cols = ("episode",) + METRICS + ("wall_time",)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in cols])


def train_one(cfg, variant, seed, base):
    """One (variant, seed) run; returns its directory."""
    out = seed_dir(base, variant, seed)
    out.mkdir(parents=True, exist_ok=True)
    env = make_env(cfg.env)
    agent = make_agent(cfg.env, variant, cfg.hyper, seed)

    def on_checkpoint(agent, ep):
        save_checkpoint(agent, cfg.env, out / f"checkpoint_ep{ep:05d}.json")

    def on_episode(row, env):
        if row["episode"] % 10 == 0:
            log.info("%s seed %d episode %d reward %.4f active %d",
                     variant, seed, row["episode"], row["reward"], row["active_coeffs"])

    sched = Schedule(
        episodes=cfg.episodes,
        train_grid=cfg.env.train_grid,
        fixed_params=cfg.fixed_params,
        checkpoint_every=cfg.checkpoint_every,
        on_checkpoint=on_checkpoint,
        on_episode=on_episode,
    )
    rows = train(agent, env, sched)
    write_metrics(out / "metrics.csv", rows)
    ck = save_checkpoint(agent, cfg.env, out / "checkpoint_final.json")
    for proto in cfg.evaluation:
        report = run_evaluation(ck, proto)
        tag = f"{proto.mode}_noise{proto.noise_sigma:g}"
        write_report(report, out / f"eval_{tag}.json")
    return out


def _train_job(args):
    cfg_dict, variant, seed, base = args
    cfg = RunConfig.from_dict(cfg_dict)
    return str(train_one(cfg, variant, seed, base))


def run_training(cfg, out_root=None, parallel=1):
    """Train every (variant, seed) of ``cfg``; returns the run directory.

    Config errors surface before any simulation. ``parallel > 1`` runs
    independent jobs in worker processes; each writes only its own directory.
    """
    cfg.validate()
    base = run_dir(cfg, out_root)
    base.mkdir(parents=True, exist_ok=True)
    with open(base / "config.json", "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=1, sort_keys=True)
    jobs = [(v, s) for v in cfg.variants for s in cfg.seeds]
    if parallel > 1 and len(jobs) > 1:
        cfg_dict = cfg.to_dict()
        args = [(cfg_dict, v, s, str(base)) for v, s in jobs]
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            list(pool.map(_train_job, args))
    else:
        for v, s in jobs:
            train_one(cfg, v, s, base)
    emit_plot_data(base)
    return base


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def training_hull(env_cfg):
    grid = env_cfg.train_grid
    return np.array([min(g) for g in grid]), np.array([max(g) for g in grid])


def in_hull(p, env_cfg):
    lo, hi = training_hull(env_cfg)
    p = np.asarray(p, dtype=np.float64)
    return bool(np.all(p >= lo) and np.all(p <= hi))


def interpolation_sampler(env_cfg, rng, n):
    """Uniform draws inside the range spanned by the training grid."""
    lo, hi = training_hull(env_cfg)
    return rng.uniform(lo, hi, size=(n, lo.size))


def extrapolation_sampler(env_cfg, rng, n):
    """Uniform draws from the physical box with at least one coordinate
    strictly outside the training range."""
    lo, hi = training_hull(env_cfg)
    box = np.array(env_cfg.param_box, dtype=np.float64)
    if np.all(box[:, 0] >= lo) and np.all(box[:, 1] <= hi):
        raise ConfigError("the parameter box has no room outside the training range")
    out = np.empty((0, lo.size))
    while out.shape[0] < n:
        cand = rng.uniform(box[:, 0], box[:, 1], size=(max(4 * n, 16), lo.size))
        outside = np.any((cand < lo) | (cand > hi), axis=1)
        out = np.vstack([out, cand[outside]])
    return out[:n]


SAMPLERS = {"interpolation": interpolation_sampler, "extrapolation": extrapolation_sampler}


def evaluation_points(env_cfg, protocol):
    if protocol.points:
        return list(protocol.points)
    pts = []
    if protocol.include_reference:
        pts += [tuple(p) for p in REFERENCE_POINTS.get(env_cfg.name, {}).get(protocol.mode, [])]
    rng = stream(protocol.seed, f"eval_points/{protocol.mode}")
    pts += [tuple(float(v) for v in p) for p in SAMPLERS[protocol.mode](env_cfg, rng, protocol.n_points)]
    return pts


def _summarize(episodes, alpha):
    keys = ("reward", "c1", "c2")
    out = {f"mean_{k}": float(np.mean([e[k] for e in episodes])) for k in keys}
    out["mean_alpha_c2"] = alpha * out["mean_c2"]
    out["diverged"] = int(sum(e["diverged"] for e in episodes))
    return out


def evaluate_policy(env, policy, params, protocol, tag="policy"):
    """``episodes_per_point`` seeded episodes; same initial conditions for every method."""
    ep_rng = stream(protocol.seed, f"eval_episodes/{protocol.mode}")
    seeds = ep_rng.integers(2**31, size=protocol.episodes_per_point)
    noise_rng = stream(protocol.seed, f"eval_noise/{tag}")
    episodes = []
    for s in seeds:
        res = rollout(env, policy, params, int(s), protocol.noise_sigma, noise_rng)
        res["seed"] = int(s)
        episodes.append(res)
    return episodes


def run_evaluation(checkpoint, protocol, env_cfg=None):
    """Deterministic-mode evaluation of a saved agent; returns a JSON-able report."""
    agent = load_checkpoint(checkpoint, env_cfg=env_cfg)
    cfg = agent.env_config
    env = make_env(cfg)
    methods = {"policy": lambda s: agent.act(s, explore=False)}
    if "zero" in protocol.baselines:
        zero = np.zeros(env.action_dim)
        methods["zero"] = lambda s: zero
    if "random" in protocol.baselines:
        rand_rng = stream(protocol.seed, "eval_random_policy")
        methods["random"] = lambda s: rand_rng.uniform(-1.0, 1.0, size=env.action_dim)
    points = []
    for p in evaluation_points(cfg, protocol):
        entry = {"params": list(p), "in_training_range": in_hull(p, cfg), "methods": {}}
        for tag, pol in methods.items():
            eps = evaluate_policy(env, pol, np.array(p), protocol, tag)
            entry["methods"][tag] = {"episodes": eps, **_summarize(eps, cfg.alpha_cost)}
        points.append(entry)
    summary = {
        tag: float(np.mean([pt["methods"][tag]["mean_reward"] for pt in points]))
        for tag in methods
    }
    return {
        "checkpoint": str(checkpoint),
        "variant": agent.variant,
        "env": cfg.name,
        "mode": protocol.mode,
        "noise_sigma": protocol.noise_sigma,
        "episodes_per_point": protocol.episodes_per_point,
        "param_names": list(cfg.param_names),
        "points": points,
        "mean_reward": summary,
    }


def write_report(report, path):
    with open(path, "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True, ensure_ascii=False)
    return path


# ---------------------------------------------------------------------------
# plot data
# ---------------------------------------------------------------------------


def read_metrics(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def emit_plot_data(base):
    """Long-format metrics of every run under ``base`` plus mean/std per episode.

    Standard deviations are population (ddof = 0) over seeds.
    """
    base = Path(base)
    long_rows = []
    for variant_dir in sorted(p for p in base.iterdir() if p.is_dir()):
        for sd in sorted(variant_dir.glob("seed_*"), key=lambda p: int(p.name[5:])):
            mpath = sd / "metrics.csv"
            if not mpath.exists():
                continue
            seed = int(sd.name[5:])
            for row in read_metrics(mpath):
                for m in METRICS:
                    long_rows.append((variant_dir.name, seed, int(row["episode"]), m, float(row[m])))
    if not long_rows:
        raise ConfigError(f"no completed runs under {base}")
    long_path = base / "plot_long.csv"
    with open(long_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("variant", "seed", "episode", "metric", "value"))
        for v, s, e, m, x in long_rows:
            w.writerow((v, s, e, m, repr(x)))
    groups = {}
    for v, s, e, m, x in long_rows:
        groups.setdefault((v, m, e), []).append(x)
    agg_path = base / "plot_aggregate.csv"
    with open(agg_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("variant", "metric", "episode", "mean", "std", "n_seeds"))
        for (v, m, e) in sorted(groups, key=lambda k: (k[0], METRICS.index(k[1]), k[2])):
            xs = np.array(groups[(v, m, e)])
            w.writerow((v, m, e, repr(float(xs.mean())), repr(float(xs.std())), xs.size))
    return long_path, agg_path


def with_seeds(cfg, seeds):
    return replace(cfg, seeds=tuple(seeds))
