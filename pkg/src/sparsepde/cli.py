"""``sparsepde`` command line.

Exit codes: 0 success, 2 configuration error, 3 numerical divergence,
4 I/O or checkpoint error.
"""
import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from sparsepde import harness
from sparsepde.checkpoint import load_checkpoint
from sparsepde.env import make_env
from sparsepde.errors import ConfigError, DivergenceError, SparsePdeError
from sparsepde.export import extract, render, write_policy_files
from sparsepde.field import write_trajectory_bin, write_trajectory_csv

log = logging.getLogger("sparsepde")


def _params(text):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def cmd_train(args):
    cfg = harness.RunConfig.from_json(args.config)
    if args.seed is not None:
        cfg = harness.with_seeds(cfg, [args.seed])
    out = harness.run_training(cfg, out_root=args.out)
    print(out)


def cmd_sweep(args):
    cfg = harness.RunConfig.from_json(args.config)
    out = harness.run_training(cfg, out_root=args.out, parallel=args.parallel)
    print(out)


def cmd_evaluate(args):
    proto = harness.EvalProtocol(
        mode=args.mode,
        noise_sigma=args.noise,
        episodes_per_point=args.episodes,
        n_points=args.points,
        baselines=tuple(b for b in args.baselines.split(",") if b),
        seed=args.seed,
    )
    report = harness.run_evaluation(args.checkpoint, proto)
    if args.output:
        harness.write_report(report, args.output)
    for pt in report["points"]:
        costs = "  ".join(
            f"{tag}: r={m['mean_reward']:.4f} c1={m['mean_c1']:.4f} ac2={m['mean_alpha_c2']:.4f}"
            for tag, m in pt["methods"].items()
        )
        print(f"{pt['params']}  {costs}")


def cmd_export(args):
    agent = load_checkpoint(args.checkpoint)
    if not hasattr(agent.actor, "spec"):
        raise ConfigError(f"variant {agent.variant!r} has no polynomial policy to export")
    sp = extract(agent.actor, args.prune)
    if args.output:
        for p in write_policy_files(sp, args.output):
            print(p)
    else:
        sys.stdout.write(render(sp, args.format))
    print(f"# active {sp.active_total} of {sp.dense_count}", file=sys.stderr)


def cmd_simulate(args):
    env = make_env(args.env)
    params = args.mu if args.mu is not None else [0.0] * env.cfg.n_params
    env.reset(params, args.seed)
    steps = args.steps or env.cfg.n_control_steps
    zero = np.zeros(env.action_dim)
    times, fields, forcings = [env.field.time], [env.field.values.copy()], [np.zeros(env.cfg.n_x)]
    for _ in range(steps):
        _, _, done = env.step(zero)
        if env.diverged:
            raise DivergenceError("simulation diverged")
        times.append(env.field.time)
        fields.append(env.field.values.copy())
        forcings.append(env.last_forcing.copy())
        if done:
            break
    path = Path(args.dump)
    if path.suffix == ".bin":
        write_trajectory_bin(path, np.array(fields), env.cfg.dt_ctrl)
    else:
        write_trajectory_csv(path, times, fields, forcings)
    print(path)


def build_parser():
    p = argparse.ArgumentParser(prog="sparsepde", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train every variant/seed of a config")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help="output root (default: $SPARSEPDE_OUT or the config's out_dir)")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help="train all (variant, seed) jobs, optionally in parallel")
    s.add_argument("--config", required=True)
    s.add_argument("--parallel", type=int, default=1)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    e = sub.add_parser("evaluate", help="evaluate a checkpoint on unseen parameters")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--mode", choices=harness.MODES, default="interpolation")
    e.add_argument("--noise", type=float, default=0.0)
    e.add_argument("--episodes", type=int, default=5)
    e.add_argument("--points", type=int, default=4)
    e.add_argument("--baselines", default="zero")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--output", help="write the JSON report here")
    e.set_defaults(func=cmd_evaluate)

    x = sub.add_parser("export-policy", help="print the sparse polynomial control law")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--format", choices=("plain_text", "latex"), default="plain_text")
    x.add_argument("--prune", type=float, default=1e-3)
    x.add_argument("--output", help="file stem; writes .txt, .tex and .json")
    x.set_defaults(func=cmd_export)

    m = sub.add_parser("simulate", help="uncontrolled episode dumped to .csv or .bin")
    m.add_argument("--env", choices=("ks", "cdr"), default="ks")
    m.add_argument("--mu", type=_params, help="PDE parameters, comma separated")
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--steps", type=int)
    m.add_argument("--dump", required=True)
    m.set_defaults(func=cmd_simulate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        args.func(args)
    except SparsePdeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, KeyError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return ConfigError.exit_code
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 4
    except FloatingPointError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
