import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsepde import harness
from sparsepde.env import CDR_DEFAULT, KS_DEFAULT, env_config
from sparsepde.errors import ConfigError, ParameterRangeError
from sparsepde.harness import EvalProtocol, RunConfig
from sparsepde.td3 import stream

TINY_HYPER = {"hidden": 8, "batch_size": 8, "warmup_steps": 30, "degree": 2}


def tiny(**kw):
    d = {"name": "tiny", "env": "cdr", "variant": "poly_l0", "hyper": TINY_HYPER,
         "seeds": [1, 7], "episodes": 2, "checkpoint_every": 1}
    d.update(kw)
    return RunConfig.from_dict(d)


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    return harness.run_training(tiny(), out_root=root)


def _strip_wall(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return [r[:-1] for r in rows]


# --- configuration ---------------------------------------------------------


@pytest.mark.parametrize(
    "override, match",
    [
        ({"seeds": []}, "non-empty"),
        ({"seeds": [1, 1]}, "distinct"),
        ({"variant": "transformer"}, "unknown variant"),
        ({"degree": 0}, "degree"),
        ({"episodes": 0}, "episodes"),
        ({"bogus": 1}, "unknown config keys"),
        ({"train_grid": [[0.1, 0.2], [0.1], [0.1]]}, "train"),
    ],
)
def test_invalid_configs(override, match):
    with pytest.raises(ConfigError, match=match):
        tiny(**override)


def test_out_of_box_fixed_params():
    with pytest.raises(ParameterRangeError):
        tiny(fixed_params=[0.5, 0.15, 0.15])


def test_config_errors_before_compute(tmp_path, monkeypatch):
    cfg = tiny()
    cfg.seeds = ()
    monkeypatch.setattr(harness, "train_one", lambda *a: pytest.fail("trained"))
    with pytest.raises(ConfigError):
        harness.run_training(cfg, out_root=tmp_path)
    assert not any(tmp_path.iterdir())


def test_config_round_trip():
    cfg = tiny(evaluation=[{"mode": "extrapolation", "noise_sigma": 0.1}], fixed_params=[0.005, 0.15, 0.15])
    back = RunConfig.from_dict(cfg.to_dict())
    assert back == cfg


def test_defaults():
    cfg = RunConfig(env=KS_DEFAULT)
    assert cfg.seeds == (1, 7, 92, 256)
    assert cfg.episodes == 60
    assert RunConfig(env=CDR_DEFAULT).episodes == 300


def test_shipped_config_loads():
    cfg = RunConfig.from_json("configs/cdr_fixed_l0.json")
    assert cfg.env.name == "cdr" and cfg.fixed_params == (0.005, 0.15, 0.15)


def test_output_root_env_override(monkeypatch, tmp_path):
    monkeypatch.setenv("SPARSEPDE_OUT", str(tmp_path))
    assert harness.run_dir(tiny()) == tmp_path / "tiny"
    monkeypatch.delenv("SPARSEPDE_OUT")
    assert str(harness.run_dir(tiny())) == "runs/tiny"


# --- training outputs ------------------------------------------------------


def test_layout(tiny_run):
    seeds = sorted(p.name for p in (tiny_run / "poly_l0").iterdir())
    assert seeds == ["seed_1", "seed_7"]
    files = sorted(p.name for p in (tiny_run / "poly_l0" / "seed_1").iterdir())
    assert files == ["checkpoint_ep00001.json", "checkpoint_ep00002.json",
                     "checkpoint_final.json", "metrics.csv"]
    header = _strip_wall(tiny_run / "poly_l0" / "seed_1" / "metrics.csv")[0]
    assert header == ["episode", "reward", "c1", "c2", "active_coeffs"]
    assert json.loads((tiny_run / "config.json").read_text())["seeds"] == [1, 7]


def test_rerun_is_identical(tiny_run, tmp_path):
    again = harness.run_training(tiny(), out_root=tmp_path)
    for s in (1, 7):
        a = tiny_run / "poly_l0" / f"seed_{s}"
        b = again / "poly_l0" / f"seed_{s}"
        assert _strip_wall(a / "metrics.csv") == _strip_wall(b / "metrics.csv")
        assert (a / "checkpoint_final.json").read_bytes() == (b / "checkpoint_final.json").read_bytes()
    assert (tiny_run / "plot_long.csv").read_bytes() == (again / "plot_long.csv").read_bytes()


def test_seeds_differ(tiny_run):
    a = _strip_wall(tiny_run / "poly_l0" / "seed_1" / "metrics.csv")
    b = _strip_wall(tiny_run / "poly_l0" / "seed_7" / "metrics.csv")
    assert a != b


def test_plot_aggregate_matches_hand_computation(tiny_run):
    per_seed = {s: harness.read_metrics(tiny_run / "poly_l0" / f"seed_{s}" / "metrics.csv") for s in (1, 7)}
    with open(tiny_run / "plot_aggregate.csv") as fh:
        agg = list(csv.DictReader(fh))
    assert {r["metric"] for r in agg} == set(harness.METRICS)
    assert len(agg) == 2 * len(harness.METRICS)
    for r in agg:
        ep = int(r["episode"])
        xs = [float(per_seed[s][ep - 1][r["metric"]]) for s in (1, 7)]
        assert float(r["mean"]) == pytest.approx((xs[0] + xs[1]) / 2, rel=1e-15)
        assert float(r["std"]) == pytest.approx(abs(xs[0] - xs[1]) / 2, rel=1e-12, abs=1e-300)
        assert r["n_seeds"] == "2"
    with open(tiny_run / "plot_long.csv") as fh:
        assert sum(1 for _ in fh) == 1 + 2 * 2 * len(harness.METRICS)


def test_single_seed_has_zero_std(tmp_path):
    base = harness.run_training(tiny(seeds=[3], episodes=1, checkpoint_every=0), out_root=tmp_path)
    with open(base / "plot_aggregate.csv") as fh:
        agg = list(csv.DictReader(fh))
    assert all(float(r["std"]) == 0.0 for r in agg)


def test_emit_plot_data_needs_runs(tmp_path):
    with pytest.raises(ConfigError):
        harness.emit_plot_data(tmp_path)


def test_parallel_sweep_matches_serial(tiny_run, tmp_path):
    base = harness.run_training(tiny(), out_root=tmp_path, parallel=2)
    for s in (1, 7):
        a = tiny_run / "poly_l0" / f"seed_{s}" / "checkpoint_final.json"
        b = base / "poly_l0" / f"seed_{s}" / "checkpoint_final.json"
        assert a.read_bytes() == b.read_bytes()


# --- samplers --------------------------------------------------------------


@pytest.mark.parametrize("cfg", [KS_DEFAULT, CDR_DEFAULT])
def test_samplers_respect_hull(cfg):
    rng = stream(0, "test")
    inside = harness.interpolation_sampler(cfg, rng, 10_000)
    outside = harness.extrapolation_sampler(cfg, rng, 10_000)
    box = np.array(cfg.param_box)
    assert all(harness.in_hull(p, cfg) for p in inside)
    assert not any(harness.in_hull(p, cfg) for p in outside)
    assert np.all(outside >= box[:, 0]) and np.all(outside <= box[:, 1])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_sampler_property(seed):
    rng = np.random.default_rng(seed)
    lo, hi = harness.training_hull(CDR_DEFAULT)
    x = harness.interpolation_sampler(CDR_DEFAULT, rng, 5)
    assert np.all((x >= lo) & (x <= hi))
    y = harness.extrapolation_sampler(CDR_DEFAULT, rng, 5)
    assert np.all(np.any((y < lo) | (y > hi), axis=1))


def test_no_room_outside_hull():
    cfg = env_config("ks", train_grid=((-0.25, 0.0, 0.25),))
    with pytest.raises(ConfigError):
        harness.extrapolation_sampler(cfg, np.random.default_rng(0), 1)


def test_reference_points_included():
    pts = harness.evaluation_points(CDR_DEFAULT, EvalProtocol("extrapolation", n_points=2))
    assert pts[0] == (0.008, 0.313, 0.303) and len(pts) == 3
    pts = harness.evaluation_points(KS_DEFAULT, EvalProtocol("interpolation", n_points=0))
    assert pts == [(0.121,)]
    assert harness.evaluation_points(KS_DEFAULT, EvalProtocol(points=[(0.1,)])) == [(0.1,)]


def test_bad_protocols():
    with pytest.raises(ConfigError):
        EvalProtocol("sideways")
    with pytest.raises(ConfigError):
        EvalProtocol(noise_sigma=-1)
    with pytest.raises(ConfigError):
        EvalProtocol(baselines=("oracle",))


# --- evaluation ------------------------------------------------------------


def test_evaluation_deterministic_and_read_only(tiny_run):
    ck = tiny_run / "poly_l0" / "seed_1" / "checkpoint_final.json"
    before = ck.read_bytes()
    proto = EvalProtocol("interpolation", noise_sigma=0.1, episodes_per_point=2, n_points=1,
                         baselines=("zero", "random"))
    r1 = harness.run_evaluation(ck, proto)
    r2 = harness.run_evaluation(ck, proto)
    assert json.dumps(r1, sort_keys=True) == json.dumps(r2, sort_keys=True)
    assert ck.read_bytes() == before
    assert set(r1["mean_reward"]) == {"policy", "zero", "random"}
    pt = r1["points"][0]
    assert pt["in_training_range"] is True
    seeds = {tag: [e["seed"] for e in m["episodes"]] for tag, m in pt["methods"].items()}
    assert seeds["policy"] == seeds["zero"] == seeds["random"]
    assert pt["methods"]["policy"]["mean_alpha_c2"] == pytest.approx(0.1 * pt["methods"]["policy"]["mean_c2"])


def test_evaluation_in_config_writes_report(tmp_path):
    cfg = tiny(seeds=[2], episodes=1, checkpoint_every=0,
               evaluation=[{"mode": "extrapolation", "episodes_per_point": 1, "n_points": 0}])
    base = harness.run_training(cfg, out_root=tmp_path)
    rep = json.loads((base / "poly_l0" / "seed_2" / "eval_extrapolation_noise0.json").read_text())
    assert rep["points"][0]["in_training_range"] is False
    assert rep["param_names"] == list(CDR_DEFAULT.param_names)
