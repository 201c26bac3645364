"""Mimic-Opt-DP: optimistic backward induction with lazy, split-sample updates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from episodic_bwk.dp import cap_violations, continuation_values, value_increment_violations
from episodic_bwk.errors import ContractViolation
from episodic_bwk.model import A_NULL, EnvironmentModel, sample_context, step
from episodic_bwk.oracles import ConfidenceBounds, LabeledDataset, Oracle


# -- schedules ---------------------------------------------------------------


@dataclass(frozen=True)
class Schedule:
    """Arithmetic-progression index set deciding which episodes feed the unlabeled store.

    ``J_inf = {1 + (offset + i) * n_alpha : i >= 0}`` with ``offset = M`` for the
    unlabeled-data schedule and ``0`` for the default one. ``M`` is also the
    number of context arrays preloaded into the store.
    """

    alpha: float
    n_alpha: int
    M: int = 0
    kind: str = "default"

    @property
    def first(self) -> int:
        offset = self.M if self.kind == "unlabeled" else 0
        return 1 + offset * self.n_alpha

    def in_j_infinity(self, t: int) -> bool:
        return t >= self.first and (t - self.first) % self.n_alpha == 0

    def j_set(self, t: int) -> list[int]:
        """``J_t = J_inf ∩ [t-1]``."""
        return list(range(self.first, t, self.n_alpha))

    def j_size(self, t: int) -> int:
        if t - 1 < self.first:
            return 0
        return (t - 1 - self.first) // self.n_alpha + 1


def _n_alpha(alpha: float) -> int:
    n = math.ceil(1.0 / alpha - 1e-12)
    upper = 2.0 / alpha - 1.0
    if n >= upper:
        # window [1/alpha, 2/alpha - 1) is empty; use the widest progression below 2/alpha - 1
        n = max(1, math.ceil(upper - 1e-12) - 1)
    return n


def make_schedule(alpha: float = 0.5, M: int = 0, kind: str = "default") -> Schedule:
    """Build the default (``kind="default"``) or unlabeled-data schedule."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if M < 0:
        raise ValueError("M must be non-negative")
    if kind not in ("default", "unlabeled"):
        raise ValueError(f"unknown schedule kind {kind!r}")
    return Schedule(alpha=alpha, n_alpha=_n_alpha(alpha), M=int(M), kind=kind)


# -- optimistic DP -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class OptimisticValueTable:
    """``U_hat[h-1, b]`` for ``h = 1..H+1``; the last row is zero."""

    U_hat: np.ndarray
    built_at_episode: int = 1
    delta_t: float = 1.0
    vhat: dict | None = field(default=None, repr=False)

    @classmethod
    def zeros(cls, env: EnvironmentModel) -> "OptimisticValueTable":
        U = np.zeros((env.H + 1, env.max_budget + 1))
        U.setflags(write=False)
        return cls(U)


def optimistic_dp(
    bounds: ConfidenceBounds,
    delta_t: float,
    S: np.ndarray | Sequence[Sequence[int]],
    env: EnvironmentModel,
    built_at_episode: int = 1,
    keep_vhat: bool = False,
) -> OptimisticValueTable:
    """Backward induction with UCB on reward, LCB on consumption, averaged over ``S``.

    ``S`` holds one context array per row (shape ``(n, H)``). At each step the
    average of ``V_hat(b, theta_{h,s})`` over the rows is capped at
    ``min(b, H-h+1) * r_max``. With ``keep_vhat`` the per-context ``V_hat``
    values are kept as ``{h: (contexts, values[k, b])}``.
    """
    S = np.asarray(S, dtype=np.int64)
    if S.ndim != 2 or S.shape[0] == 0:
        raise ValueError("optimistic_dp needs a non-empty unlabeled store")
    if S.shape[1] != env.H:
        raise ValueError(f"context arrays must have length H={env.H}")
    H, nb, n = env.H, env.max_budget + 1, S.shape[0]
    U = np.zeros((H + 1, nb))
    budgets = np.arange(nb)
    kept = {} if keep_vhat else None
    for h in range(H, 0, -1):
        ctx, counts = np.unique(S[:, h - 1], return_counts=True)
        ucb, lcb = bounds.at(h)
        q = continuation_values(env, h, lcb[ctx], ucb[ctx], U[h], contexts=ctx)
        vhat = q.max(axis=1)  # (k, nb)
        avg = (counts @ vhat) / n
        U[h - 1] = np.minimum(avg, np.minimum(budgets, H - h + 1) * env.r_max)
        if kept is not None:
            kept[h] = (ctx, vhat)
    U.setflags(write=False)
    return OptimisticValueTable(U, built_at_episode, delta_t, kept)


def action_objective(
    bounds: ConfidenceBounds,
    table: OptimisticValueTable,
    h: int,
    b: int,
    theta: int,
    env: EnvironmentModel,
) -> np.ndarray:
    """Optimistic objective for every action at ``(h, b, theta)``; ``-inf`` if infeasible."""
    ucb, lcb = bounds.at(h)
    u, l = ucb[theta], lcb[theta]
    d = env.consumption[theta]
    nxt = table.U_hat[h]
    after = b - d
    ok = env._feasible_base[theta] & (after >= 0)
    obj = u * env.reward[theta] + l * nxt[np.clip(after, 0, None)] + (1.0 - l) * nxt[b]
    return np.where(ok, obj, -np.inf)


def select_action(
    bounds: ConfidenceBounds,
    table: OptimisticValueTable,
    h: int,
    b: int,
    theta: int,
    env: EnvironmentModel,
) -> int:
    """Maximizer of the optimistic objective; ties go to the lowest action id."""
    return int(np.argmax(action_objective(bounds, table, h, b, theta, env)))


def vhat_spread_violations(
    table: OptimisticValueTable, r_max: float, L: int, tol: float = 1e-9
) -> list[tuple[int, int, float]]:
    """Steps/budgets where ``max_theta V_hat - min_theta V_hat > (2L+1) r_max``."""
    if table.vhat is None:
        raise ValueError("table was built without keep_vhat")
    bad = []
    for h, (_, vhat) in table.vhat.items():
        spread = vhat.max(axis=0) - vhat.min(axis=0)
        for b in np.flatnonzero(spread > (2 * L + 1) * r_max + tol):
            bad.append((h, int(b), float(spread[b])))
    return bad


# -- online loop ---------------------------------------------------------------


@dataclass
class EpisodeTrace:
    contexts: np.ndarray
    actions: np.ndarray
    outcomes: np.ndarray
    reward: float
    radius_sum: float


def play_episode(
    env: EnvironmentModel,
    B_t: int,
    choose: Callable[[int, int, int], int],
    rng: np.random.Generator,
    context_rng: np.random.Generator,
    width: Callable[[int, int, int], float] | None = None,
) -> EpisodeTrace:
    """Run one episode with ``choose(h, b, theta) -> action``."""
    H = env.H
    contexts = np.empty(H, dtype=np.int64)
    actions = np.empty(H, dtype=np.int64)
    outcomes = np.empty(H, dtype=np.int64)
    b, total, radius = B_t, 0.0, 0.0
    for h in range(1, H + 1):
        theta = sample_context(env, h, context_rng)
        a = choose(h, b, theta)
        out = step(env, h, b, theta, a, rng)
        if width is not None:
            radius += width(h, theta, a)
        contexts[h - 1], actions[h - 1], outcomes[h - 1] = theta, a, out.conversion
        total += out.reward_earned
        b -= out.consumed
        if b < 0:
            raise ContractViolation("budget went negative")
    return EpisodeTrace(contexts, actions, outcomes, total, radius)


def episode_records(trace: EpisodeTrace, tagged: bool) -> LabeledDataset:
    """Labeled records of an episode, dropping null-action steps."""
    keep = trace.actions != A_NULL
    steps = np.arange(1, len(trace.actions) + 1)[keep] if tagged else None
    return LabeledDataset(trace.contexts[keep], trace.actions[keep], trace.outcomes[keep], steps)


@dataclass
class RunLog:
    """Per-episode record of an online run (``t`` is 1-based)."""

    budgets: list[int] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    radius_sums: list[float] = field(default_factory=list)
    updated: list[bool] = field(default_factory=list)
    u_hat_at_budget: list[float] = field(default_factory=list)
    labeled_episodes: list[int] = field(default_factory=list)
    unlabeled_episodes: list[int] = field(default_factory=list)
    invariant_violations: list[str] = field(default_factory=list)

    @property
    def T(self) -> int:
        return len(self.rewards)

    def regrets(self, opts: Sequence[float]) -> np.ndarray:
        return np.asarray(opts, dtype=float) - np.asarray(self.rewards)


def _check_table(table: OptimisticValueTable, env: EnvironmentModel) -> list[str]:
    msgs = []
    for h, b, d, diff in value_increment_violations(table.U_hat, env.r_max, env.L):
        msgs.append(f"increment bound broken at h={h} b={b} d={d}: {diff}")
    for h, b, val in cap_violations(table.U_hat, env.r_max):
        msgs.append(f"cap broken at h={h} b={b}: {val}")
    if table.vhat is not None:
        for h, b, spread in vhat_spread_violations(table, env.r_max, env.L):
            msgs.append(f"V_hat spread broken at h={h} b={b}: {spread}")
    return msgs


def run_mimic_opt_dp(
    env: EnvironmentModel,
    budgets: Sequence[int],
    oracle: Oracle,
    delta: float,
    schedule: Schedule,
    rng: np.random.Generator,
    initial_unlabeled: np.ndarray | None = None,
    context_rng: np.random.Generator | None = None,
    debug: bool = False,
) -> RunLog:
    """Run Mimic-Opt-DP for ``len(budgets)`` episodes.

    ``initial_unlabeled`` (shape ``(M, H)``) preloads the unlabeled store.
    Episodes whose index lies in the schedule's progression only contribute
    their contexts to the store and leave bounds and values untouched; every
    other episode adds its non-null records to the labeled set, refits the
    oracle at ``delta / (t+1)^2`` and rebuilds the optimistic values.
    With ``debug`` the value-table invariants are asserted after every build.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    context_rng = rng if context_rng is None else context_rng
    for B in budgets:
        if not 0 <= B <= env.max_budget:
            raise ValueError(f"budget {B} outside [0, {env.max_budget}]")
    store = [] if initial_unlabeled is None else [np.asarray(r, dtype=np.int64) for r in initial_unlabeled]
    if store and any(len(r) != env.H for r in store):
        raise ValueError("initial unlabeled arrays must have length H")
    bounds = ConfidenceBounds.vacuous(env.num_contexts, env.num_actions)
    table = OptimisticValueTable.zeros(env)
    data = LabeledDataset(steps=np.zeros(0, dtype=np.int64) if oracle.tagged else None)
    log = RunLog()

    for t, B_t in enumerate(budgets, start=1):
        cur_bounds, cur_table = bounds, table
        trace = play_episode(
            env, int(B_t),
            lambda h, b, theta: select_action(cur_bounds, cur_table, h, b, theta, env),
            rng, context_rng, width=cur_bounds.width,
        )
        log.budgets.append(int(B_t))
        log.rewards.append(trace.reward)
        log.radius_sums.append(trace.radius_sum)
        log.u_hat_at_budget.append(float(table.U_hat[0, B_t]))
        if schedule.in_j_infinity(t):
            store.append(trace.contexts)
            log.unlabeled_episodes.append(t)
            log.updated.append(False)
            continue
        data = data.concat(episode_records(trace, oracle.tagged))
        log.labeled_episodes.append(t)
        log.updated.append(True)
        delta_next = delta / (t + 1) ** 2
        bounds = oracle.fit(data, delta_next)
        table = optimistic_dp(bounds, delta_next, np.stack(store), env, t + 1, keep_vhat=debug)
        if debug:
            msgs = _check_table(table, env)
            if msgs:
                raise ContractViolation("; ".join(msgs[:5]))
    if set(log.labeled_episodes) & set(log.unlabeled_episodes):
        raise ContractViolation("labeled and unlabeled episode sets overlap")
    return log
