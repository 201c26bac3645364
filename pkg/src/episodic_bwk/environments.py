"""Builders for the pricing, procurement and first-price auction applications.

Each builder prepends the null context (id 0) and the null action (id 0) to
the user-supplied catalogs.
"""

from __future__ import annotations

import inspect
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from episodic_bwk.errors import ConfigError
from episodic_bwk.model import EnvironmentModel
from episodic_bwk.oracles import LINKS


def _pmf_rows(pmf, H: int, n: int) -> np.ndarray:
    """Broadcast a stationary pmf to ``(H, n)`` and prepend a zero null column."""
    pmf = np.asarray(pmf, dtype=float)
    if pmf.ndim == 1:
        pmf = np.tile(pmf, (H, 1))
    if pmf.shape != (H, n):
        raise ConfigError(f"context pmf must have shape ({n},) or ({H}, {n}), got {pmf.shape}")
    return np.hstack([np.zeros((H, 1)), pmf])


def _uniform(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def _demand(kind: str, utility: np.ndarray) -> np.ndarray:
    try:
        f = LINKS[kind].f
    except KeyError:
        raise ConfigError(f"unknown demand model {kind!r}") from None
    rho = f(utility)
    if np.any(rho < 0) or np.any(rho > 1):
        raise ConfigError(
            f"{kind} demand yields conversion probabilities outside [0, 1] "
            f"(range {rho.min():.4g}..{rho.max():.4g})"
        )
    return rho


def _features(contexts: np.ndarray, prices: np.ndarray) -> np.ndarray:
    """``phi(theta, a) = (theta, a)`` with zero rows for the null entries."""
    n, k = contexts.shape
    m = len(prices)
    feats = np.zeros((n + 1, m + 1, k + 1))
    feats[1:, 1:, :k] = contexts[:, None, :]
    feats[1:, 1:, k] = prices[None, :]
    return feats


@dataclass(frozen=True)
class PricingSpec:
    """Posted-price selling of ``B_t`` perishable units.

    ``contexts`` is ``(n, k)`` customer features. Purchase probability is
    ``f(mu_bar . theta - u0 * price)`` with ``f`` linear or logistic.
    """

    prices: Sequence[float]
    contexts: np.ndarray
    context_pmf: np.ndarray
    mu_bar: Sequence[float]
    u0: float
    H: int
    demand: str = "logistic"


def build_pricing(spec: PricingSpec, name: str = "pricing") -> EnvironmentModel:
    """Reward is the price, every sale consumes one unit."""
    prices = np.asarray(spec.prices, dtype=float)
    ctx = np.atleast_2d(np.asarray(spec.contexts, dtype=float))
    mu_bar = np.asarray(spec.mu_bar, dtype=float)
    if np.any(prices <= 0):
        raise ConfigError("prices must be positive")
    if spec.u0 <= 0:
        raise ConfigError("u0 must be positive")
    if mu_bar.shape != (ctx.shape[1],):
        raise ConfigError("mu_bar must match the context dimension")
    n, m = len(ctx), len(prices)
    rho = np.zeros((n + 1, m + 1))
    rho[1:, 1:] = _demand(spec.demand, (ctx @ mu_bar)[:, None] - spec.u0 * prices[None, :])
    reward = np.zeros_like(rho)
    reward[1:, 1:] = prices[None, :]
    consumption = np.zeros(rho.shape, dtype=np.int64)
    consumption[1:, 1:] = 1
    return EnvironmentModel(
        H=spec.H, L=1, r_max=float(prices.max()), rho=rho, reward=reward,
        consumption=consumption, context_pmf=_pmf_rows(spec.context_pmf, spec.H, n),
        features=_features(ctx, prices),
        contexts=(None,) + tuple(tuple(map(float, c)) for c in ctx),
        actions=(0.0,) + tuple(map(float, prices)), name=name,
    )


@dataclass(frozen=True)
class ProcurementSpec:
    """Paying workers from a budget; acceptance is ``f(u0 * price - mu_bar . theta)``."""

    L: int
    contexts: np.ndarray
    context_pmf: np.ndarray
    mu_bar: Sequence[float]
    u0: float
    H: int
    demand: str = "logistic"


def build_procurement(spec: ProcurementSpec, name: str = "procurement") -> EnvironmentModel:
    """Offers are the integer prices ``0..L``; each acceptance earns 1 and costs the price."""
    if spec.L < 1:
        raise ConfigError("L must be at least 1")
    ctx = np.atleast_2d(np.asarray(spec.contexts, dtype=float))
    mu_bar = np.asarray(spec.mu_bar, dtype=float)
    if mu_bar.shape != (ctx.shape[1],):
        raise ConfigError("mu_bar must match the context dimension")
    prices = np.arange(1, spec.L + 1, dtype=float)
    n = len(ctx)
    rho = np.zeros((n + 1, spec.L + 1))
    rho[1:, 1:] = _demand(spec.demand, spec.u0 * prices[None, :] - (ctx @ mu_bar)[:, None])
    reward = np.zeros_like(rho)
    reward[1:, 1:] = 1.0
    consumption = np.zeros(rho.shape, dtype=np.int64)
    consumption[1:, 1:] = np.arange(1, spec.L + 1)[None, :]
    return EnvironmentModel(
        H=spec.H, L=spec.L, r_max=1.0, rho=rho, reward=reward, consumption=consumption,
        context_pmf=_pmf_rows(spec.context_pmf, spec.H, n), features=_features(ctx, prices),
        contexts=(None,) + tuple(tuple(map(float, c)) for c in ctx),
        actions=tuple(range(spec.L + 1)), name=name,
    )


@dataclass(frozen=True)
class AuctionSpec:
    """Budgeted first-price bidding with integer private values and bids ``0..L``.

    ``win_prob`` gives ``mu(a)`` for bids ``a = 1..L``; a 2-D ``(H, L)`` array
    gives per-step winning probabilities (distinct items).
    """

    L: int
    values: Sequence[int]
    value_pmf: np.ndarray
    win_prob: np.ndarray
    H: int


def build_auction(spec: AuctionSpec, name: str = "auction") -> EnvironmentModel:
    """Reward ``value - bid``, consumption ``bid``; bids above the value are infeasible."""
    values = np.asarray(spec.values)
    if spec.L < 1:
        raise ConfigError("L must be at least 1")
    if values.ndim != 1 or np.any(values < 1) or np.any(values != np.round(values)):
        raise ConfigError("private values must be positive integers")
    mu = np.asarray(spec.win_prob, dtype=float)
    if mu.shape[-1] != spec.L or mu.ndim not in (1, 2) or (mu.ndim == 2 and mu.shape[0] != spec.H):
        raise ConfigError(f"win_prob must have shape ({spec.L},) or ({spec.H}, {spec.L})")
    if np.any(mu < 0) or np.any(mu > 1):
        raise ConfigError("winning probabilities must lie in [0, 1]")
    if np.any(np.diff(mu, axis=-1) < 0):
        raise ConfigError("winning probability must be nondecreasing in the bid")
    n = len(values)
    bids = np.arange(spec.L + 1)
    reward = np.zeros((n + 1, spec.L + 1))
    reward[1:, 1:] = values[:, None] - bids[None, 1:]
    consumption = np.zeros(reward.shape, dtype=np.int64)
    consumption[1:, 1:] = bids[None, 1:]
    if mu.ndim == 1:
        rho = np.zeros_like(reward)
        rho[1:, 1:] = mu[None, :]
    else:
        rho = np.zeros((spec.H,) + reward.shape)
        rho[:, 1:, 1:] = mu[:, None, :]
    r_max = float(values.max() - 1)
    return EnvironmentModel(
        H=spec.H, L=spec.L, r_max=max(r_max, 1e-12), rho=rho, reward=reward,
        consumption=consumption, context_pmf=_pmf_rows(spec.value_pmf, spec.H, n),
        contexts=(0,) + tuple(int(v) for v in values), actions=tuple(int(b) for b in bids),
        name=name,
    )


# -- benchmark instances -----------------------------------------------------


def paper_c1(K: int = 10, H: int = 24) -> EnvironmentModel:
    """Non-contextual auction: values uniform on ``1..K+1``, ``mu(a) = a / (K+1)``."""
    values = np.arange(1, K + 2)
    spec = AuctionSpec(
        L=K, values=values, value_pmf=_uniform(K + 1),
        win_prob=np.arange(1, K + 1) / (K + 1), H=H,
    )
    return build_auction(spec, name="paper-c1")


def paper_c2(H: int = 24, num_prices: int = 5, grid: int = 100) -> EnvironmentModel:
    """Logistic pricing on the ``grid x grid`` lattice of ``[0, 1]^2``.

    Purchase probability ``1 / (1 + exp(-(theta_1 + theta_2 - a) / sqrt(3)))``,
    prices ``1..num_prices``, contexts uniform.
    """
    axis = np.arange(grid) / (grid - 1)
    ctx = np.array([(x, y) for x in axis for y in axis])
    w = 1.0 / math.sqrt(3.0)
    spec = PricingSpec(
        prices=np.arange(1, num_prices + 1, dtype=float), contexts=ctx,
        context_pmf=_uniform(len(ctx)), mu_bar=(w, w), u0=w, H=H, demand="logistic",
    )
    return build_pricing(spec, name="paper-c2")


def demo_pricing(H: int = 8, grid: int = 4, num_prices: int = 3) -> EnvironmentModel:
    """Small pricing instance with a step-dependent arrival mix."""
    axis = np.arange(grid) / max(grid - 1, 1)
    ctx = np.array([(x, y) for x in axis for y in axis])
    n = len(ctx)
    # later steps favour high-valuation customers
    tilt = ctx.sum(axis=1)
    pmf = np.array([np.exp((h / H - 0.5) * 2.0 * tilt) for h in range(H)])
    pmf /= pmf.sum(axis=1, keepdims=True)
    spec = PricingSpec(
        prices=np.arange(1, num_prices + 1, dtype=float), contexts=ctx, context_pmf=pmf,
        mu_bar=(1.0, 1.0), u0=1.0, H=H, demand="logistic",
    )
    return build_pricing(spec)


def demo_procurement(H: int = 8, L: int = 3, grid: int = 4) -> EnvironmentModel:
    axis = np.arange(grid) / max(grid - 1, 1)
    ctx = axis[:, None]
    spec = ProcurementSpec(
        L=L, contexts=ctx, context_pmf=_uniform(len(ctx)), mu_bar=(2.0,), u0=1.0, H=H,
    )
    return build_procurement(spec)


def demo_auction(H: int = 8, L: int = 4, distinct: bool = False) -> EnvironmentModel:
    values = np.arange(1, L + 2)
    base = np.arange(1, L + 1) / (L + 1)
    if distinct:
        # competition stiffens through the episode
        mu = np.array([base ** (1.0 + h / H) for h in range(H)])
    else:
        mu = base
    spec = AuctionSpec(L=L, values=values, value_pmf=_uniform(len(values)), win_prob=mu, H=H)
    return build_auction(spec)


ENV_KINDS = ("pricing", "auction", "procurement", "paper-c1", "paper-c2")


def make_env(kind: str, **params) -> EnvironmentModel:
    """Named environment factory used by the CLI and run configs."""
    params = {k: v for k, v in params.items() if v is not None}
    builders = {
        "paper-c1": paper_c1,
        "paper-c2": paper_c2,
        "pricing": demo_pricing,
        "procurement": demo_procurement,
        "auction": demo_auction,
    }
    if kind not in builders:
        raise ConfigError(f"unknown environment kind {kind!r}; expected one of {ENV_KINDS}")
    builder = builders[kind]
    unknown = set(params) - set(inspect.signature(builder).parameters)
    if unknown:
        raise ConfigError(f"unknown parameter(s) {sorted(unknown)} for environment kind {kind!r}")
    return builder(**params)
