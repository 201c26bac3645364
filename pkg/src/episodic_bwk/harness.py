"""Regret experiments: agents, repetitions, aggregation and output files."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from episodic_bwk.agent import (
    RunLog,
    episode_records,
    make_schedule,
    play_episode,
    run_mimic_opt_dp,
)
from episodic_bwk.dp import ExactValueTable, fluid_dual, solve_bellman
from episodic_bwk.environments import make_env
from episodic_bwk.errors import BwkError, ConfigError
from episodic_bwk.model import EnvironmentModel, sample_contexts
from episodic_bwk.oracles import ConfidenceBounds, LabeledDataset, Oracle, make_oracle

log = logging.getLogger(__name__)

AGENT_KINDS = ("mimic-opt-dp", "greedy-ucb", "fluid-policy", "oracle-dp")
AGENT_ALIASES = {"mimic": "mimic-opt-dp", "greedy": "greedy-ucb", "fluid": "fluid-policy",
                 "oracle": "oracle-dp"}
_INHERITED = ("oracle", "delta", "alpha", "M", "schedule")

PER_REP_HEADER = ["agent", "rep", "t", "B_t", "opt_t", "episode_reward", "cum_regret",
                  "radius_sum", "updated"]
AGGREGATE_HEADER = ["t", "agent", "mean_cum_regret", "se"]


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce a regret experiment.

    ``agents`` entries are dicts with a ``name`` from :data:`AGENT_KINDS`
    plus per-agent overrides of ``oracle``, ``delta``, ``alpha``, ``M`` and
    ``schedule``.
    """

    env: EnvironmentModel
    T: int
    budgets: list[int]
    reps: int = 1
    seed: int = 0
    agents: list[dict] = field(default_factory=lambda: [{"name": "mimic-opt-dp"}])
    oracle: dict = field(default_factory=lambda: {"oracle": "karm"})
    delta: float = 0.1
    alpha: float = 0.5
    M: int = 0
    schedule: str = "default"
    workers: int = 1
    debug: bool = False

    def __post_init__(self) -> None:
        if self.reps < 1:
            raise ConfigError("reps must be at least 1")
        if self.T < 1:
            raise ConfigError("T must be at least 1")
        if not self.agents:
            raise ConfigError("at least one agent is required")
        if len(self.budgets) != self.T:
            raise ConfigError(f"{len(self.budgets)} budgets given for T={self.T}")
        for B in self.budgets:
            if not 0 <= B <= self.env.max_budget:
                raise ConfigError(f"budget {B} outside [0, {self.env.max_budget}]")
        normalized = []
        for a in self.agents:
            a = {"name": a} if isinstance(a, str) else dict(a)
            a["name"] = AGENT_ALIASES.get(a.get("name"), a.get("name"))
            if a["name"] not in AGENT_KINDS:
                raise ConfigError(f"unknown agent {a['name']!r}; expected one of {AGENT_KINDS}")
            for key in _INHERITED:
                a.setdefault(key, getattr(self, key))
            if isinstance(a["oracle"], str):
                a["oracle"] = {"oracle": a["oracle"]}
            a.setdefault("label", a["name"])
            normalized.append(a)
        labels = [a["label"] for a in normalized]
        if len(set(labels)) != len(labels):
            raise ConfigError("agent labels must be unique")
        self.agents = normalized

    @classmethod
    def from_dict(cls, raw: dict[str, Any], base_dir: Path | None = None) -> "ExperimentConfig":
        raw = dict(raw)
        try:
            env = resolve_env(raw.pop("env"), base_dir)
            T = int(raw.pop("T"))
        except KeyError as exc:
            raise ConfigError(f"run config is missing field {exc}") from None
        if "budgets" in raw:
            budgets = [int(b) for b in raw.pop("budgets")]
        else:
            budgets = [int(raw.pop("budget", raw.pop("B", env.max_budget)))] * T
        known = {"reps", "seed", "agents", "oracle", "delta", "alpha", "M", "schedule", "workers",
                 "debug"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown run-config fields {sorted(unknown)}")
        if "oracle" in raw and isinstance(raw["oracle"], str):
            raw["oracle"] = {"oracle": raw["oracle"]}
        return cls(env=env, T=T, budgets=budgets, **raw)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from None
        return cls.from_dict(raw, path.parent)


def resolve_env(ref: Any, base_dir: Path | None = None) -> EnvironmentModel:
    """Accept an environment object, a JSON path, a builder spec or an inline definition."""
    if isinstance(ref, EnvironmentModel):
        return ref
    if isinstance(ref, str):
        path = Path(ref)
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        if not path.exists():
            raise ConfigError(f"environment file {path} not found")
        return EnvironmentModel.load(path)
    if isinstance(ref, dict):
        if "rho" in ref:
            return EnvironmentModel.from_dict(ref)
        params = dict(ref)
        kind = params.pop("kind", None)
        if kind is None:
            raise ConfigError("environment spec needs a 'kind' or an inline definition")
        try:
            return make_env(kind, **params)
        except TypeError as exc:
            raise ConfigError(f"bad parameters for environment {kind!r}: {exc}") from None
    raise ConfigError(f"cannot interpret environment reference {ref!r}")


# -- baselines -----------------------------------------------------------------


def _refitting_run(env, budgets, oracle: Oracle, delta, rng, context_rng, policy) -> RunLog:
    """Shared loop for baselines refitting on all past labeled data every episode."""
    data = LabeledDataset(steps=np.zeros(0, dtype=np.int64) if oracle.tagged else None)
    bounds = ConfidenceBounds.vacuous(env.num_contexts, env.num_actions)
    out = RunLog()
    for t, B_t in enumerate(budgets, start=1):
        if t > 1:
            bounds = oracle.fit(data, delta / t**2)
        choose = policy(bounds, int(B_t))
        trace = play_episode(env, int(B_t), choose, rng, context_rng, width=bounds.width)
        data = data.concat(episode_records(trace, oracle.tagged))
        out.budgets.append(int(B_t))
        out.rewards.append(trace.reward)
        out.radius_sums.append(trace.radius_sum)
        out.updated.append(True)
        out.labeled_episodes.append(t)
    return out


def greedy_ucb_baseline(env, budgets, oracle: Oracle, delta, rng, context_rng=None) -> RunLog:
    """Myopic optimism: maximize ``UCB * r`` over the feasible set, no continuation value."""
    context_rng = rng if context_rng is None else context_rng

    def policy(bounds, B_t):
        def choose(h, b, theta):
            ucb, _ = bounds.at(h)
            ok = env._feasible_base[theta] & (env.consumption[theta] <= b)
            return int(np.argmax(np.where(ok, ucb[theta] * env.reward[theta], -np.inf)))
        return choose

    return _refitting_run(env, budgets, oracle, delta, rng, context_rng, policy)


def fluid_policy_baseline(env, budgets, oracle: Oracle, delta, rng, context_rng=None) -> RunLog:
    """Dual-price heuristic: play ``argmax rho_hat (r - lam* d)`` when it is nonnegative, else null.

    ``rho_hat`` is the midpoint of the current confidence interval; the arrival
    distributions are taken from the environment.
    """
    context_rng = rng if context_rng is None else context_rng

    def policy(bounds, B_t):
        rho_hat = 0.5 * (bounds.ucb + bounds.lcb)
        _, lam = fluid_dual(env, B_t, rho=rho_hat)
        steps = rho_hat if rho_hat.ndim == 3 else None

        def choose(h, b, theta):
            rh = (steps[h - 1] if steps is not None else rho_hat)[theta]
            ok = env._feasible_base[theta] & (env.consumption[theta] <= b)
            score = np.where(ok, rh * (env.reward[theta] - lam * env.consumption[theta]), -np.inf)
            score[0] = -np.inf
            a = int(np.argmax(score))
            # zero reduced cost still lies in the fluid solution's support
            return a if score[a] >= 0 else 0
        return choose

    return _refitting_run(env, budgets, oracle, delta, rng, context_rng, policy)


def oracle_dp_run(env, budgets, table: ExactValueTable, rng, context_rng=None) -> RunLog:
    """Skyline: play the exact optimal policy."""
    context_rng = rng if context_rng is None else context_rng
    out = RunLog()
    for B_t in budgets:
        trace = play_episode(
            env, int(B_t), lambda h, b, theta: int(table.greedy_policy[h - 1, b, theta]),
            rng, context_rng,
        )
        out.budgets.append(int(B_t))
        out.rewards.append(trace.reward)
        out.radius_sums.append(0.0)
        out.updated.append(False)
    return out


# -- experiment driver ---------------------------------------------------------


def rep_streams(seed: int, rep: int) -> tuple[np.random.Generator, ...]:
    """Independent (outcome, context, preload) streams for a repetition.

    Every agent in a repetition sees the same streams, so context arrivals
    are common across agents.
    """
    ss = np.random.SeedSequence(seed ^ rep)
    return tuple(np.random.default_rng(s) for s in ss.spawn(3))


def run_agent(
    env: EnvironmentModel,
    agent: dict,
    budgets: Sequence[int],
    seed: int,
    rep: int,
    table: ExactValueTable | None = None,
    debug: bool = False,
) -> RunLog:
    """Run one agent for one repetition."""
    rng, context_rng, preload_rng = rep_streams(seed, rep)
    name = agent["name"]
    if name == "oracle-dp":
        table = solve_bellman(env) if table is None else table
        return oracle_dp_run(env, budgets, table, rng, context_rng)
    oracle = make_oracle(agent["oracle"], env, horizon=env.H * len(budgets))
    delta = float(agent["delta"])
    if name == "mimic-opt-dp":
        schedule = make_schedule(agent["alpha"], agent["M"], agent["schedule"])
        initial = sample_contexts(env, schedule.M, preload_rng) if schedule.M else None
        return run_mimic_opt_dp(env, budgets, oracle, delta, schedule, rng,
                                initial_unlabeled=initial, context_rng=context_rng, debug=debug)
    if name == "greedy-ucb":
        return greedy_ucb_baseline(env, budgets, oracle, delta, rng, context_rng)
    if name == "fluid-policy":
        return fluid_policy_baseline(env, budgets, oracle, delta, rng, context_rng)
    raise ConfigError(f"unknown agent {name!r}")


def _job(args):
    env, agent, budgets, seed, rep, table, debug = args
    try:
        return run_agent(env, agent, budgets, seed, rep, table, debug), None
    except BwkError as exc:
        return None, f"{type(exc).__name__}: {exc}"


@dataclass
class RegretSeries:
    """Per-(agent, rep, episode) results and their aggregates."""

    agents: list[str]
    opt: np.ndarray  # (T,)
    budgets: np.ndarray  # (T,)
    rewards: dict[str, np.ndarray]  # (reps, T), NaN rows for failed reps
    radius: dict[str, np.ndarray]
    updated: dict[str, np.ndarray]
    logs: dict[str, list[RunLog | None]]
    failures: dict[str, list[str]]

    @property
    def reps(self) -> int:
        return next(iter(self.rewards.values())).shape[0]

    @property
    def T(self) -> int:
        return len(self.opt)

    def ok_reps(self, agent: str) -> np.ndarray:
        return ~np.isnan(self.rewards[agent]).any(axis=1)

    def regret(self, agent: str) -> np.ndarray:
        """Per-episode regret, shape ``(reps, T)``."""
        return self.opt[None, :] - self.rewards[agent]

    def cum_regret(self, agent: str) -> np.ndarray:
        return np.cumsum(self.regret(agent), axis=1)

    def aggregate(self, agent: str) -> tuple[np.ndarray, np.ndarray]:
        """Mean cumulative regret and its standard error over successful reps."""
        cum = self.cum_regret(agent)[self.ok_reps(agent)]
        if len(cum) == 0:
            nan = np.full(self.T, np.nan)
            return nan, nan
        mean = cum.mean(axis=0)
        se = cum.std(axis=0, ddof=1) / math.sqrt(len(cum)) if len(cum) > 1 else np.zeros(self.T)
        return mean, se


def run_experiment(cfg: ExperimentConfig) -> RegretSeries:
    """Solve ``opt_t`` exactly, then run every agent for every repetition."""
    env = cfg.env
    table = solve_bellman(env)
    budgets = list(cfg.budgets)
    opt_cache = {B: float(table.U[0, B]) for B in set(budgets)}
    opt = np.array([opt_cache[B] for B in budgets])
    jobs = [
        (env, agent, budgets, cfg.seed, rep, table if agent["name"] == "oracle-dp" else None,
         cfg.debug)
        for agent in cfg.agents for rep in range(cfg.reps)
    ]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_job, jobs))
    else:
        results = [_job(j) for j in jobs]

    labels = [a["label"] for a in cfg.agents]
    rewards = {k: np.full((cfg.reps, cfg.T), np.nan) for k in labels}
    radius = {k: np.full((cfg.reps, cfg.T), np.nan) for k in labels}
    updated = {k: np.zeros((cfg.reps, cfg.T), dtype=bool) for k in labels}
    logs: dict[str, list] = {k: [None] * cfg.reps for k in labels}
    failures: dict[str, list[str]] = {k: [] for k in labels}
    for (_, agent, _, _, rep, _, _), (run, err) in zip(jobs, results):
        key = agent["label"]
        if err is not None:
            failures[key].append(f"rep {rep}: {err}")
            continue
        rewards[key][rep] = run.rewards
        radius[key][rep] = run.radius_sums
        updated[key][rep] = run.updated
        logs[key][rep] = run
    for key, errs in failures.items():
        if errs:
            log.warning("%s: %d of %d repetitions failed and are excluded", key, len(errs), cfg.reps)
    return RegretSeries(labels, opt, np.array(budgets), rewards, radius, updated, logs, failures)


# -- outputs -------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_runlog_csv(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PER_REP_HEADER)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def per_rep_rows(series: RegretSeries):
    for agent in series.agents:
        cum = series.cum_regret(agent)
        for rep in range(series.reps):
            if not series.ok_reps(agent)[rep]:
                continue
            for i in range(series.T):
                yield (agent, rep, i + 1, int(series.budgets[i]), series.opt[i],
                       series.rewards[agent][rep, i], cum[rep, i],
                       series.radius[agent][rep, i], bool(series.updated[agent][rep, i]))


def emit_outputs(series: RegretSeries, out_dir: str | Path, plot: bool = True) -> dict[str, Path]:
    """Write ``per_rep.csv``, ``aggregate.csv`` and ``regret.svg`` into ``out_dir``."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {"per_rep": out_dir / "per_rep.csv", "aggregate": out_dir / "aggregate.csv"}
        write_runlog_csv(paths["per_rep"], per_rep_rows(series))
        with open(paths["aggregate"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(AGGREGATE_HEADER)
            for agent in series.agents:
                mean, se = series.aggregate(agent)
                for i in range(series.T):
                    w.writerow([i + 1, agent, _fmt(mean[i]), _fmt(se[i])])
        if plot:
            paths["plot"] = out_dir / "regret.svg"
            plot_regret(series, paths["plot"])
    except OSError as exc:
        raise OSError(f"writing outputs to {out_dir}: {exc}") from exc
    return paths


def plot_regret(series: RegretSeries, path: Path) -> None:
    """Mean cumulative regret with ±3 standard-error bands."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # fixed salt keeps element ids, and so the file bytes, reproducible
    with matplotlib.rc_context({"svg.hashsalt": "episodic-bwk"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        t = np.arange(1, series.T + 1)
        for agent in series.agents:
            mean, se = series.aggregate(agent)
            ax.plot(t, mean, label=agent)
            ax.fill_between(t, mean - 3 * se, mean + 3 * se, alpha=0.25)
        ax.set_xlabel("episode")
        ax.set_ylabel("cumulative regret")
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
