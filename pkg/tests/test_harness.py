import csv
import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from episodic_bwk import ConfigError
from episodic_bwk.agent import optimistic_dp, select_action
from episodic_bwk.dp import fluid_ub, solve_bellman
from episodic_bwk.environments import demo_auction, demo_pricing
from episodic_bwk.harness import (
    ExperimentConfig,
    emit_outputs,
    fluid_policy_baseline,
    greedy_ucb_baseline,
    run_experiment,
)
from episodic_bwk.model import make_environment, sample_contexts
from episodic_bwk.oracles import ExactOracle, KArmOracle, LabeledDataset, make_oracle

from helpers import random_env


def small_config(**overrides):
    env = demo_auction(H=4, L=2)
    base = dict(env=env, T=12, budgets=[3] * 12, reps=3, seed=5,
                agents=["mimic", "greedy-ucb", "fluid-policy", "oracle-dp"])
    base.update(overrides)
    return ExperimentConfig(**base)


def test_config_validation():
    with pytest.raises(ConfigError):
        small_config(reps=0)
    with pytest.raises(ConfigError):
        small_config(agents=[])
    with pytest.raises(ConfigError):
        small_config(agents=["random"])
    with pytest.raises(ConfigError):
        small_config(budgets=[3] * 5)
    with pytest.raises(ConfigError):
        small_config(budgets=[999] * 12)


def test_config_from_dict_resolves_builders(tmp_path):
    raw = {"env": {"kind": "auction", "H": 3, "L": 2}, "T": 4, "budget": 2, "reps": 2,
           "oracle": "karm", "agents": [{"name": "mimic-opt-dp", "alpha": 0.3}, "greedy"]}
    cfg = ExperimentConfig.from_dict(raw)
    assert cfg.budgets == [2] * 4
    assert cfg.agents[0]["alpha"] == 0.3 and cfg.agents[1]["name"] == "greedy-ucb"
    assert cfg.agents[1]["oracle"] == {"oracle": "karm"}
    with pytest.raises(ConfigError, match="unknown run-config"):
        ExperimentConfig.from_dict({**raw, "colour": 1})
    with pytest.raises(ConfigError, match="missing"):
        ExperimentConfig.from_dict({"T": 3})


def test_opt_shared_and_cum_regret_is_prefix_sum():
    series = run_experiment(small_config(budgets=[1, 2, 3, 2] * 3))
    table = solve_bellman(demo_auction(H=4, L=2))
    assert np.allclose(series.opt, table.U[0, [1, 2, 3, 2] * 3])
    for agent in series.agents:
        gaps = series.opt[None, :] - series.rewards[agent]
        assert np.allclose(series.cum_regret(agent), np.cumsum(gaps, axis=1))


def test_streams_common_across_agents():
    agents = [{"name": "oracle-dp", "label": "first"}, {"name": "oracle-dp", "label": "second"}]
    series = run_experiment(small_config(agents=agents))
    assert np.array_equal(series.rewards["first"], series.rewards["second"])
    # different repetitions draw different streams
    assert not np.array_equal(series.rewards["first"][0], series.rewards["first"][1])


def test_oracle_dp_regret_vanishes_on_average():
    env = demo_pricing(H=3, grid=2)
    cfg = ExperimentConfig(env=env, T=50, budgets=[2] * 50, reps=40, seed=1, agents=["oracle-dp"])
    series = run_experiment(cfg)
    mean, se = series.aggregate("oracle-dp")
    assert abs(mean[-1]) <= 3 * se[-1]


def test_identical_configs_write_identical_bytes(tmp_path):
    a = emit_outputs(run_experiment(small_config()), tmp_path / "a")
    b = emit_outputs(run_experiment(small_config()), tmp_path / "b")
    for key in ("per_rep", "aggregate", "plot"):
        assert a[key].read_bytes() == b[key].read_bytes()


def test_aggregate_matches_per_rep_rows(tmp_path):
    series = run_experiment(small_config())
    paths = emit_outputs(series, tmp_path)
    rows = list(csv.DictReader(paths["per_rep"].open()))
    agg = list(csv.DictReader(paths["aggregate"].open()))
    for row in agg:
        vals = [float(r["cum_regret"]) for r in rows if r["agent"] == row["agent"] and r["t"] == row["t"]]
        assert float(row["mean_cum_regret"]) == pytest.approx(np.mean(vals), abs=1e-12)
        assert float(row["se"]) == pytest.approx(np.std(vals, ddof=1) / np.sqrt(len(vals)), abs=1e-12)
    assert set(rows[0]) == {"agent", "rep", "t", "B_t", "opt_t", "episode_reward", "cum_regret",
                            "radius_sum", "updated"}


def test_single_rep_has_zero_se_and_valid_svg(tmp_path):
    paths = emit_outputs(run_experiment(small_config(reps=1)), tmp_path)
    agg = list(csv.DictReader(paths["aggregate"].open()))
    assert all(float(r["se"]) == 0.0 for r in agg)
    root = ET.parse(paths["plot"]).getroot()
    assert root.tag.endswith("svg")


def test_failures_are_recorded_and_excluded(monkeypatch):
    from episodic_bwk import harness
    from episodic_bwk.errors import NumericalError

    real = harness.run_agent

    def flaky(env, agent, budgets, seed, rep, table=None, debug=False):
        if agent["name"] == "greedy-ucb" and rep == 1:
            raise NumericalError("diverged", rep=rep)
        return real(env, agent, budgets, seed, rep, table, debug)

    monkeypatch.setattr(harness, "run_agent", flaky)
    series = run_experiment(small_config())
    assert len(series.failures["greedy-ucb"]) == 1
    assert series.ok_reps("greedy-ucb").tolist() == [True, False, True]
    mean, _ = series.aggregate("greedy-ucb")
    assert np.isfinite(mean).all()


def test_greedy_matches_mimic_when_horizon_is_one():
    # with H=1 the continuation table is zero, so both rules maximize ucb * r
    env = demo_pricing(H=1, grid=2)
    oracle = KArmOracle(env.num_actions, env.num_contexts)
    rng = np.random.default_rng(0)
    data = LabeledDataset(rng.integers(1, env.num_contexts, 40), rng.integers(1, env.num_actions, 40),
                          rng.integers(0, 2, 40))
    bounds = oracle.fit(data, 0.1)
    S = sample_contexts(env, 5, rng)
    table = optimistic_dp(bounds, 0.1, S, env)
    for theta in range(env.num_contexts):
        for b in range(env.max_budget + 1):
            ok = env.feasible_mask(b)[theta]
            greedy = int(np.argmax(np.where(ok, bounds.ucb[theta] * env.reward[theta], -np.inf)))
            assert select_action(bounds, table, 1, b, theta, env) == greedy


def test_zero_conversion_baselines_have_zero_regret():
    env = demo_auction(H=3, L=2)
    env = make_environment(np.zeros_like(env.rho), env.reward, env.consumption, env.context_pmf,
                           H=env.H, L=env.L, r_max=env.r_max)
    oracle = KArmOracle(env.num_actions, env.num_contexts)
    for fn in (greedy_ucb_baseline, fluid_policy_baseline):
        assert fn(env, [2] * 5, oracle, 0.1, np.random.default_rng(0)).rewards == [0.0] * 5


def test_fluid_policy_zero_budget_plays_null():
    env = demo_auction(H=3, L=2)
    log = fluid_policy_baseline(env, [0] * 4, ExactOracle(env), 0.1, np.random.default_rng(0))
    assert log.rewards == [0.0] * 4


def test_fluid_policy_slack_budget_is_myopic_optimal():
    env = demo_pricing(H=3, grid=2)
    B = env.max_budget
    log = fluid_policy_baseline(env, [B] * 400, ExactOracle(env), 0.1, np.random.default_rng(2))
    opt = solve_bellman(env).U[0, B]
    se = np.std(log.rewards, ddof=1) / np.sqrt(400)
    assert abs(np.mean(log.rewards) - opt) <= 3 * se


def test_fluid_policy_below_opt_below_ub():
    rng = np.random.default_rng(3)
    for _ in range(5):
        env = random_env(rng)
        B = max(1, env.max_budget // 2)
        opt = solve_bellman(env).U[0, B]
        log = fluid_policy_baseline(env, [B] * 300, ExactOracle(env), 0.1, rng)
        se = np.std(log.rewards, ddof=1) / np.sqrt(300)
        assert np.mean(log.rewards) <= opt + 3 * se + 1e-12
        assert opt <= fluid_ub(env, B) + 1e-8


def test_parallel_workers_match_serial():
    serial = run_experiment(small_config(agents=["mimic", "oracle-dp"], reps=2))
    parallel = run_experiment(small_config(agents=["mimic", "oracle-dp"], reps=2, workers=2))
    for agent in serial.agents:
        assert np.array_equal(serial.rewards[agent], parallel.rewards[agent])


def test_logistic_agent_runs_on_pricing():
    env = demo_pricing(H=3, grid=2)
    cfg = ExperimentConfig(env=env, T=6, budgets=[2] * 6, reps=1, seed=0,
                           agents=["mimic", "greedy-ucb", "fluid-policy"],
                           oracle={"oracle": "logistic", "gamma": 0.5, "kappa_f": 8})
    series = run_experiment(cfg)
    assert not any(series.failures.values())
    assert make_oracle({"oracle": "logistic"}, env, horizon=18).spec.kappa_f > 0


def test_run_config_file_round_trip(tmp_path):
    env = demo_auction(H=3, L=2)
    env.save(tmp_path / "env.json")
    (tmp_path / "run.json").write_text(json.dumps({
        "env": "env.json", "T": 5, "budget": 2, "reps": 1, "seed": 3, "agents": ["oracle-dp"],
    }))
    cfg = ExperimentConfig.load(tmp_path / "run.json")
    assert cfg.env.num_contexts == env.num_contexts and cfg.T == 5
