"""Exact per-episode optimum by backward induction and the fluid LP bound."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from episodic_bwk.errors import NumericalError
from episodic_bwk.model import EnvironmentModel, sample_context, step


@dataclass(frozen=True, eq=False)
class ExactValueTable:
    """Solution of the Bellman recursion.

    Row ``h-1`` of each array belongs to step ``h``; row ``H`` is the
    terminal step ``H+1`` where every value is zero.

    Attributes
    ----------
    V : ndarray, shape (H+1, LH+1, C)
    U : ndarray, shape (H+1, LH+1)
        ``U[h-1, b] = E_{theta ~ Lambda_h} V[h-1, b, theta]``.
    greedy_policy : ndarray of int, shape (H, LH+1, C)
    """

    V: np.ndarray
    U: np.ndarray
    greedy_policy: np.ndarray

    @property
    def H(self) -> int:
        return self.U.shape[0] - 1


def continuation_values(
    env: EnvironmentModel,
    h: int,
    success_prob: np.ndarray,
    immediate_prob: np.ndarray,
    U_next: np.ndarray,
    contexts: np.ndarray | None = None,
) -> np.ndarray:
    """Action values ``Q[c, a, b]`` with infeasible entries set to ``-inf``.

    ``Q = immediate_prob * r + success_prob * U_next(b - d) + (1 - success_prob) * U_next(b)``.
    Exact DP passes ``rho`` for both probabilities; the optimistic DP passes
    the UCB for the reward term and the LCB for the consumption term.
    """
    nb = U_next.shape[0]
    budgets = np.arange(nb)
    if contexts is None:
        r, d, base = env.reward, env.consumption, env._feasible_base
    else:
        r, d, base = env.reward[contexts], env.consumption[contexts], env._feasible_base[contexts]
    after = budgets[None, None, :] - d[:, :, None]
    feasible = base[:, :, None] & (after >= 0)
    u_after = U_next[np.clip(after, 0, None)]
    q = (
        (immediate_prob * r)[:, :, None]
        + success_prob[:, :, None] * u_after
        + (1.0 - success_prob)[:, :, None] * U_next[None, None, :]
    )
    return np.where(feasible, q, -np.inf)


def solve_bellman(env: EnvironmentModel) -> ExactValueTable:
    """Backward induction over ``h = H..1`` for every budget and context.

    Ties in the argmax go to the lowest action id.
    """
    H, nb, C = env.H, env.max_budget + 1, env.num_contexts
    V = np.zeros((H + 1, nb, C))
    U = np.zeros((H + 1, nb))
    policy = np.zeros((H, nb, C), dtype=np.int64)
    for h in range(H, 0, -1):
        rho = env.rho_at(h)
        q = continuation_values(env, h, rho, rho, U[h])
        best = np.argmax(q, axis=1)  # (C, nb)
        v = np.take_along_axis(q, best[:, None, :], axis=1)[:, 0, :]
        V[h - 1] = v.T
        policy[h - 1] = best.T
        U[h - 1] = V[h - 1] @ env.context_pmf[h - 1]
    for arr in (V, U, policy):
        arr.setflags(write=False)
    return ExactValueTable(V=V, U=U, greedy_policy=policy)


def opt_value(table: ExactValueTable, env: EnvironmentModel, B_t: int) -> float:
    """``opt_t = sum_theta Lambda_1(theta) V_1(B_t, theta)``."""
    if not 0 <= B_t <= env.max_budget:
        raise ValueError(f"budget {B_t} outside [0, {env.max_budget}]")
    return float(table.U[0, B_t])


def value_increment_violations(
    U: np.ndarray, r_max: float, L: int, tol: float = 1e-9
) -> list[tuple[int, int, int, float]]:
    """Entries breaking ``0 <= U_h(b) - U_h(b-d) <= 2 r_max L`` for ``d in [min(b, L)]``.

    ``U`` is indexed as ``U[h-1, b]``; the terminal row is included.
    Returns ``(h, b, d, diff)`` tuples, empty when the bound holds.
    """
    bad = []
    nb = U.shape[1]
    for d in range(1, L + 1):
        if d >= nb:
            break
        diff = U[:, d:] - U[:, :-d]
        hi = 2.0 * r_max * L
        mask = (diff < -tol) | (diff > hi + tol)
        for hi_idx, b_idx in zip(*np.nonzero(mask)):
            bad.append((int(hi_idx) + 1, int(b_idx) + d, d, float(diff[hi_idx, b_idx])))
    return bad


def cap_violations(U: np.ndarray, r_max: float, tol: float = 1e-9) -> list[tuple[int, int, float]]:
    """Entries with ``U_h(b) > min(b, H-h+1) r_max``."""
    H = U.shape[0] - 1
    h = np.arange(1, H + 2)[:, None]
    b = np.arange(U.shape[1])[None, :]
    cap = np.minimum(b, H - h + 1) * r_max
    idx = np.nonzero(U > cap + tol)
    return [(int(i) + 1, int(j), float(U[i, j])) for i, j in zip(*idx)]


def _fluid_groups(env: EnvironmentModel, rho: np.ndarray | None):
    """Yield ``(weights over contexts, rho table)`` pairs covering all steps."""
    rho = env.rho if rho is None else np.asarray(rho, dtype=float)
    if rho.ndim == 2:
        yield env.context_pmf.sum(axis=0), rho
    else:
        for h in range(env.H):
            yield env.context_pmf[h], rho[h]


def fluid_dual(
    env: EnvironmentModel,
    B_t: int,
    tol: float | None = None,
    rho: np.ndarray | None = None,
    max_iter: int = 200,
) -> tuple[float, float]:
    """Minimize the Lagrangian dual of the fluid LP; return ``(value, lambda*)``.

    ``g(lam) = sum_h sum_theta Lambda_h(theta) max_a [rho (r - lam d)]^+ + lam B_t``
    is convex and piecewise linear. Its minimizer lies in ``[0, r_max]``
    because ``d >= 1`` on non-null actions. ``rho`` overrides the
    environment's conversion table (estimated-model use).
    """
    if tol is None:
        tol = 1e-8 * env.r_max * env.H
    if tol <= 0:
        raise ValueError("tol must be positive")
    groups = [
        (w[w > 0], rh[w > 0], env.reward[w > 0], env.consumption[w > 0], env._feasible_base[w > 0])
        for w, rh in _fluid_groups(env, rho)
    ]

    def evaluate(lam: float) -> tuple[float, float]:
        value, used = lam * B_t, 0.0
        for w, rh, r, d, base in groups:
            adj = np.where(base, rh * (r - lam * d), -np.inf)
            best = np.argmax(adj, axis=1)
            rows = np.arange(adj.shape[0])
            gain = np.maximum(adj[rows, best], 0.0)
            pos = gain > 0
            value += float(w @ gain)
            used += float(w[pos] @ (rh[rows, best] * d[rows, best])[pos])
        return value, B_t - used

    g0, slope0 = evaluate(0.0)
    if slope0 >= 0:
        return g0, 0.0
    lo, hi = 0.0, env.r_max
    span = B_t + env.H * env.L
    g_hi, _ = evaluate(hi)
    best_val, best_lam = min((g0, 0.0), (g_hi, hi))
    for _ in range(max_iter):
        if (hi - lo) * span <= tol:
            break
        mid = 0.5 * (lo + hi)
        g_mid, slope = evaluate(mid)
        if g_mid < best_val:
            best_val, best_lam = g_mid, mid
        if slope < 0:
            lo = mid
        else:
            hi = mid
    else:
        raise NumericalError(
            "fluid dual bisection did not converge", lo=lo, hi=hi, value=best_val, tol=tol
        )
    for lam in (lo, hi):
        g, _ = evaluate(lam)
        if g < best_val:
            best_val, best_lam = g, lam
    return best_val, best_lam


def fluid_ub(env: EnvironmentModel, B_t: int, tol: float | None = None) -> float:
    """Fluid-relaxation upper bound ``UB_t`` (never below ``opt_t``)."""
    if not 0 <= B_t <= env.max_budget:
        raise ValueError(f"budget {B_t} outside [0, {env.max_budget}]")
    return fluid_dual(env, B_t, tol)[0]


def rollout_policy(
    env: EnvironmentModel,
    table: ExactValueTable,
    B_t: int,
    rng: np.random.Generator,
    context_rng: np.random.Generator | None = None,
) -> float:
    """Play the optimal greedy policy for one episode; return the total reward."""
    context_rng = rng if context_rng is None else context_rng
    b, total = B_t, 0.0
    for h in range(1, env.H + 1):
        theta = sample_context(env, h, context_rng)
        out = step(env, h, b, theta, int(table.greedy_policy[h - 1, b, theta]), rng)
        b -= out.consumed
        total += out.reward_earned
    return total
