"""Independent reference implementations and instance generators for the tests."""

from __future__ import annotations

import itertools

import numpy as np

from episodic_bwk.model import EnvironmentModel, make_environment


def hand_env() -> EnvironmentModel:
    """H=2, one real context, one real action with rho=0.5, r=1, d=1."""
    return make_environment(
        rho=[[0, 0], [0, 0.5]],
        reward=[[0, 0], [0, 1.0]],
        consumption=[[0, 0], [0, 1]],
        context_pmf=[[0, 1], [0, 1]],
        H=2,
        L=1,
        r_max=1.0,
    )


def random_env(
    rng: np.random.Generator,
    max_h: int = 3,
    max_contexts: int = 3,
    max_actions: int = 3,
    max_l: int = 2,
    step_dependent: bool = False,
) -> EnvironmentModel:
    """Small random instance; catalog sizes include the null entries."""
    H = int(rng.integers(1, max_h + 1))
    C = int(rng.integers(2, max_contexts + 1))
    A = int(rng.integers(2, max_actions + 1))
    L = int(rng.integers(1, max_l + 1))
    shape = (H, C, A) if step_dependent else (C, A)
    rho = rng.random(shape)
    # a few exact zeros and ones exercise the edges
    rho[rng.random(shape) < 0.1] = 0.0
    rho[rng.random(shape) < 0.1] = 1.0
    reward = np.round(rng.uniform(-0.5, 2.0, (C, A)), 3)
    consumption = rng.integers(1, L + 1, (C, A))
    rho[..., 0, :] = 0.0
    rho[..., :, 0] = 0.0
    reward[0, :] = 0.0
    reward[:, 0] = 0.0
    consumption[0, :] = 0
    consumption[:, 0] = 0
    pmf = rng.dirichlet(np.ones(C), size=H)
    r_max = max(float(reward.max()), 1e-3)
    return make_environment(rho, reward, consumption, pmf, H=H, L=L, r_max=r_max)


def _feasible(env: EnvironmentModel, b: int, theta: int) -> list[int]:
    """Feasible set written out from the definition, without the package helper."""
    if theta == 0:
        return [0]
    return [
        a for a in range(env.num_actions)
        if a == 0 or (env.reward[theta, a] >= 0 and env.consumption[theta, a] <= b)
    ]


def brute_force_opt(env: EnvironmentModel, B: int) -> float:
    """Expectimax over the full tree of contexts, actions and outcomes (no memoisation)."""

    def value(h: int, b: int) -> float:
        if h > env.H:
            return 0.0
        rho = env.rho[h - 1] if env.rho.ndim == 3 else env.rho
        total = 0.0
        for theta in range(env.num_contexts):
            p = env.context_pmf[h - 1, theta]
            if p == 0:
                continue
            best = -np.inf
            for a in _feasible(env, b, theta):
                q = 0.0
                for y, py in ((1, rho[theta, a]), (0, 1.0 - rho[theta, a])):
                    if py == 0:
                        continue
                    q += py * (y * env.reward[theta, a] + value(h + 1, b - y * env.consumption[theta, a]))
                best = max(best, q)
            total += p * best
        return total

    return value(1, B)


def enumerate_markov_policies_opt(env: EnvironmentModel, B: int) -> float:
    """Maximum over every deterministic Markov policy ``pi(h, b, theta)``.

    Each policy is evaluated exactly by summing over all outcome paths. Only
    usable on tiny instances: the policy count is the product of the
    feasible-set sizes over all (h, b, theta) states.
    """
    states = [
        (h, b, theta)
        for h in range(1, env.H + 1)
        for b in range(B + 1)
        for theta in range(env.num_contexts)
    ]
    choices = [_feasible(env, b, theta) for h, b, theta in states]
    index = {s: i for i, s in enumerate(states)}

    def evaluate(policy) -> float:
        def value(h, b):
            if h > env.H:
                return 0.0
            rho = env.rho[h - 1] if env.rho.ndim == 3 else env.rho
            total = 0.0
            for theta in range(env.num_contexts):
                p = env.context_pmf[h - 1, theta]
                if p == 0:
                    continue
                a = policy[index[(h, b, theta)]]
                r, d, q = env.reward[theta, a], env.consumption[theta, a], rho[theta, a]
                total += p * (q * (r + value(h + 1, b - d)) + (1 - q) * value(h + 1, b))
            return total

        return value(1, B)

    return max(evaluate(pi) for pi in itertools.product(*choices))


def fluid_lp_primal(env: EnvironmentModel, B: int) -> float:
    """Fluid relaxation solved as an explicit LP over ``x_h(theta, a)``."""
    from scipy.optimize import linprog

    H, C, A = env.H, env.num_contexts, env.num_actions
    n = H * C * A
    c = np.zeros(n)
    a_budget = np.zeros(n)
    a_eq = []
    bounds = []
    for h in range(H):
        rho = env.rho[h] if env.rho.ndim == 3 else env.rho
        for theta in range(C):
            row = np.zeros(n)
            for a in range(A):
                k = (h * C + theta) * A + a
                feasible = a == 0 or (theta != 0 and env.reward[theta, a] >= 0)
                bounds.append((0, None) if feasible else (0, 0))
                c[k] = -env.context_pmf[h, theta] * rho[theta, a] * env.reward[theta, a]
                a_budget[k] = env.context_pmf[h, theta] * rho[theta, a] * env.consumption[theta, a]
                row[k] = 1.0
            a_eq.append(row)
    res = linprog(
        c, A_ub=a_budget[None, :], b_ub=[B], A_eq=np.array(a_eq), b_eq=np.ones(len(a_eq)),
        bounds=bounds, method="highs",
    )
    assert res.status == 0, res.message
    return -res.fun


def ridge_normal_equations(phi: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    """Dense ridge estimate by explicit summation and Gaussian elimination."""
    d = phi.shape[1]
    gram = lam * np.eye(d)
    rhs = np.zeros(d)
    for x, t in zip(phi, y):
        gram += np.outer(x, x)
        rhs += t * x
    return np.linalg.solve(gram, rhs)


# -- oracle coverage experiments ----------------------------------------------


def coverage_env(kind: str):
    """Generative model matching each oracle family."""
    from episodic_bwk.environments import PricingSpec, build_pricing, demo_auction

    if kind == "karm":
        return demo_auction(H=4, L=4)
    if kind == "karm-nonstat":
        return demo_auction(H=4, L=4, distinct=True)
    grid = np.array([[0.5], [0.75], [1.0]])
    if kind == "linear":
        spec = PricingSpec(prices=[0.1, 0.3, 0.5], contexts=grid, context_pmf=np.ones(3) / 3,
                           mu_bar=[0.8], u0=0.5, H=4, demand="linear")
    else:
        spec = PricingSpec(prices=[0.5, 1.0, 1.5], contexts=grid, context_pmf=np.ones(3) / 3,
                           mu_bar=[0.5], u0=0.5, H=4, demand="logistic")
    return build_pricing(spec)


def synthetic_dataset(env, n: int, rng: np.random.Generator, tagged: bool):
    """``n`` records with uniformly random non-null contexts, actions and steps."""
    from episodic_bwk.oracles import LabeledDataset

    contexts = rng.integers(1, env.num_contexts, n)
    actions = rng.integers(1, env.num_actions, n)
    steps = rng.integers(1, env.H + 1, n)
    rho = env.rho[steps - 1, contexts, actions] if env.rho.ndim == 3 else env.rho[contexts, actions]
    y = (rng.random(n) < rho).astype(np.int64)
    return LabeledDataset(contexts, actions, y, steps if tagged else None)


def coverage_rate(kind: str, reps: int = 200, n: int = 500, delta: float = 0.1, seed: int = 0):
    """Fraction of fits whose bounds contain the true rho on every catalog pair."""
    from episodic_bwk.oracles import make_oracle

    env = coverage_env(kind)
    cfg = {"oracle": kind, "lambda": 1.0} if kind in ("linear", "logistic") else kind
    oracle = make_oracle(cfg, env, horizon=n)
    rng = np.random.default_rng(seed)
    rho = env.rho if env.rho.ndim == 3 else env.rho[None]
    hits = 0
    for _ in range(reps):
        bounds = oracle.fit(synthetic_dataset(env, n, rng, oracle.tagged), delta)
        ucb = bounds.ucb if bounds.ucb.ndim == 3 else bounds.ucb[None]
        lcb = bounds.lcb if bounds.lcb.ndim == 3 else bounds.lcb[None]
        probe = rho[:, 1:, 1:]
        hits += bool(np.all((lcb[:, 1:, 1:] <= probe + 1e-12) & (probe <= ucb[:, 1:, 1:] + 1e-12)))
    return hits / reps
