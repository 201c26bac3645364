"""Finite-catalog episodic BwK model and the one-step simulation dynamics.

Contexts and actions are integer indices into catalogs. Index 0 of each
catalog is reserved: context 0 is the null context (no request arrives) and
action 0 is the null action (no allocation).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from episodic_bwk.errors import ConfigError, ContractViolation

THETA_NULL = 0
A_NULL = 0

_PMF_TOL = 1e-9


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class EnvironmentModel:
    """Ground-truth environment ``(Theta, A, rho, r, d, feasibility, Lambda_h)``.

    Parameters
    ----------
    H : int
        Episode length.
    L : int
        Maximum per-step consumption.
    r_max : float
        Upper bound on the reward of any feasible pair.
    rho : ndarray
        Conversion probabilities, shape ``(C, A)`` or ``(H, C, A)`` when the
        conversion model depends on the time step.
    reward, consumption : ndarray
        Shape ``(C, A)``. Rewards may be negative; such pairs are never
        feasible.
    context_pmf : ndarray
        Shape ``(H, C)``; row ``h-1`` is the arrival distribution at step h.
    features : ndarray, optional
        Shape ``(C, A, dim)`` feature map exported to GLM oracles. Rows of the
        null action are zero.
    """

    H: int
    L: int
    r_max: float
    rho: np.ndarray
    reward: np.ndarray
    consumption: np.ndarray
    context_pmf: np.ndarray
    features: np.ndarray | None = None
    contexts: tuple = ()
    actions: tuple = ()
    name: str = "custom"
    _feasible_base: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        rho = np.asarray(self.rho, dtype=float)
        reward = np.asarray(self.reward, dtype=float)
        consumption = np.asarray(self.consumption)
        pmf = np.asarray(self.context_pmf, dtype=float)
        if not np.all(np.equal(np.mod(consumption, 1), 0)):
            raise ConfigError("consumption must be integer valued")
        consumption = consumption.astype(np.int64)
        object.__setattr__(self, "H", int(self.H))
        object.__setattr__(self, "L", int(self.L))
        object.__setattr__(self, "r_max", float(self.r_max))
        object.__setattr__(self, "rho", _frozen(rho))
        object.__setattr__(self, "reward", _frozen(reward))
        object.__setattr__(self, "consumption", _frozen(consumption))
        object.__setattr__(self, "context_pmf", _frozen(pmf))
        if self.features is not None:
            object.__setattr__(self, "features", _frozen(np.asarray(self.features, dtype=float)))
        C, A = reward.shape if reward.ndim == 2 else (0, 0)
        if not self.contexts:
            object.__setattr__(self, "contexts", tuple(range(C)))
        else:
            object.__setattr__(self, "contexts", tuple(self.contexts))
        if not self.actions:
            object.__setattr__(self, "actions", tuple(range(A)))
        else:
            object.__setattr__(self, "actions", tuple(self.actions))
        self.validate()
        base = reward >= 0
        base[:, A_NULL] = True
        # every action is payoff-equivalent under the null context
        base[THETA_NULL, :] = False
        base[THETA_NULL, A_NULL] = True
        base.setflags(write=False)
        object.__setattr__(self, "_feasible_base", base)

    # -- shape helpers -------------------------------------------------

    @property
    def num_contexts(self) -> int:
        return self.reward.shape[0]

    @property
    def num_actions(self) -> int:
        return self.reward.shape[1]

    @property
    def max_budget(self) -> int:
        return self.L * self.H

    @property
    def step_dependent(self) -> bool:
        """True when the conversion model varies with the time step."""
        return self.rho.ndim == 3

    @property
    def feature_dim(self) -> int:
        return 0 if self.features is None else self.features.shape[2]

    def rho_at(self, h: int) -> np.ndarray:
        """Conversion table ``(C, A)`` in force at step ``h`` (1-based)."""
        if self.rho.ndim == 3:
            return self.rho[h - 1]
        return self.rho

    def feasible_mask(self, b: int) -> np.ndarray:
        """Boolean ``(C, A)`` table of ``A(b, theta)`` for every context."""
        return self._feasible_base & (self.consumption <= b)

    # -- validation -----------------------------------------------------

    def validate(self) -> None:
        """Raise :class:`ConfigError` if any model invariant fails."""
        if self.H < 1 or self.L < 1:
            raise ConfigError(f"H and L must be positive, got H={self.H}, L={self.L}")
        if self.reward.ndim != 2:
            raise ConfigError("reward must be a (contexts, actions) table")
        C, A = self.reward.shape
        if C < 1 or A < 1:
            raise ConfigError("catalogs must contain at least the null entries")
        if self.consumption.shape != (C, A):
            raise ConfigError(f"consumption shape {self.consumption.shape} != {(C, A)}")
        if self.rho.shape not in ((C, A), (self.H, C, A)):
            raise ConfigError(f"rho shape {self.rho.shape} incompatible with {(C, A)}")
        if self.context_pmf.shape != (self.H, C):
            raise ConfigError(f"lambda shape {self.context_pmf.shape} != {(self.H, C)}")
        if np.any(self.context_pmf < 0) or np.any(
            np.abs(self.context_pmf.sum(axis=1) - 1.0) > _PMF_TOL
        ):
            raise ConfigError("every context pmf must be non-negative and sum to 1")
        if np.any(self.rho < 0) or np.any(self.rho > 1) or not np.all(np.isfinite(self.rho)):
            raise ConfigError("rho must lie in [0, 1]")
        if np.any(self.consumption < 0) or np.any(self.consumption > self.L):
            raise ConfigError("consumption must lie in {0} U [L]")
        if np.any(self.reward > self.r_max + 1e-12):
            raise ConfigError("reward exceeds r_max")
        rho = self.rho if self.rho.ndim == 3 else self.rho[None]
        if np.any(rho[:, THETA_NULL, :] != 0) or np.any(rho[:, :, A_NULL] != 0):
            raise ConfigError("rho must vanish on the null context and null action")
        for tbl, label in ((self.reward, "reward"), (self.consumption, "consumption")):
            if np.any(tbl[THETA_NULL, :] != 0) or np.any(tbl[:, A_NULL] != 0):
                raise ConfigError(f"{label} must vanish on the null context and null action")
        if C > 1 and A > 1 and np.any(self.consumption[1:, 1:] < 1):
            raise ConfigError("non-null actions must consume at least one unit")
        if self.features is not None:
            if self.features.shape[:2] != (C, A):
                raise ConfigError("features must have shape (contexts, actions, dim)")
            if np.any(self.features[:, A_NULL, :] != 0):
                raise ConfigError("null action features must be zero")

    # -- serialization --------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "name": self.name,
            "H": self.H,
            "L": self.L,
            "r_max": self.r_max,
            "contexts": [_jsonable(c) for c in self.contexts],
            "actions": [_jsonable(a) for a in self.actions],
            "rho": self.rho.tolist(),
            "reward": self.reward.tolist(),
            "consumption": self.consumption.tolist(),
            "lambda": self.context_pmf.tolist(),
        }
        if self.features is not None:
            out["features"] = self.features.tolist()
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "EnvironmentModel":
        try:
            return cls(
                H=data["H"],
                L=data["L"],
                r_max=data["r_max"],
                rho=np.asarray(data["rho"], dtype=float),
                reward=np.asarray(data["reward"], dtype=float),
                consumption=np.asarray(data["consumption"]),
                context_pmf=np.asarray(data["lambda"], dtype=float),
                features=None if data.get("features") is None else np.asarray(data["features"]),
                contexts=tuple(_hashable(c) for c in data.get("contexts", ())),
                actions=tuple(_hashable(a) for a in data.get("actions", ())),
                name=data.get("name", "custom"),
            )
        except KeyError as exc:
            raise ConfigError(f"environment definition is missing field {exc}") from None
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"malformed environment definition: {exc}") from None

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "EnvironmentModel":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data)


def _jsonable(x):
    if isinstance(x, (tuple, list, np.ndarray)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


def _hashable(x):
    if isinstance(x, list):
        return tuple(_hashable(v) for v in x)
    return x


@dataclass(frozen=True, slots=True)
class StepOutcome:
    context: int
    action: int
    conversion: int
    reward_earned: float
    consumed: int


def _check_budget(env: EnvironmentModel, b: int) -> None:
    if not 0 <= b <= env.max_budget:
        raise ValueError(f"budget {b} outside [0, {env.max_budget}]")


def _check_context(env: EnvironmentModel, theta: int) -> None:
    if not 0 <= theta < env.num_contexts:
        raise ValueError(f"context id {theta} outside catalog of size {env.num_contexts}")


def feasible_actions(env: EnvironmentModel, b: int, theta: int) -> np.ndarray:
    """Sorted action ids in ``A(b, theta)``; always contains the null action."""
    _check_budget(env, b)
    _check_context(env, theta)
    row = env._feasible_base[theta] & (env.consumption[theta] <= b)
    return np.flatnonzero(row)


def sample_context(env: EnvironmentModel, h: int, rng: np.random.Generator) -> int:
    """Draw ``theta_h ~ Lambda_h`` by inverse CDF on the pmf row."""
    if not 1 <= h <= env.H:
        raise ValueError(f"step {h} outside [1, {env.H}]")
    cdf = np.cumsum(env.context_pmf[h - 1])
    u = rng.random() * cdf[-1]
    idx = int(np.searchsorted(cdf, u, side="right"))
    return min(idx, env.num_contexts - 1)


def sample_contexts(env: EnvironmentModel, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` independent context arrays, shape ``(n, H)``."""
    out = np.empty((n, env.H), dtype=np.int64)
    for h in range(1, env.H + 1):
        cdf = np.cumsum(env.context_pmf[h - 1])
        u = rng.random(n) * cdf[-1]
        out[:, h - 1] = np.minimum(np.searchsorted(cdf, u, side="right"), env.num_contexts - 1)
    return out


def step(
    env: EnvironmentModel,
    h: int,
    b: int,
    theta: int,
    action: int,
    rng: np.random.Generator,
) -> StepOutcome:
    """Play ``action`` at ``(h, b, theta)`` and sample the conversion."""
    _check_budget(env, b)
    _check_context(env, theta)
    if not (0 <= action < env.num_actions) or not env._feasible_base[theta, action] or (
        env.consumption[theta, action] > b
    ):
        raise ContractViolation(
            f"action {action} is not feasible at step {h}, budget {b}, context {theta}"
        )
    y = int(rng.random() < env.rho_at(h)[theta, action])
    consumed = int(env.consumption[theta, action]) * y
    if consumed > b:
        raise ContractViolation("budget went negative")
    return StepOutcome(
        context=theta,
        action=action,
        conversion=y,
        reward_earned=float(env.reward[theta, action]) * y,
        consumed=consumed,
    )


def make_environment(
    rho: Sequence,
    reward: Sequence,
    consumption: Sequence,
    context_pmf: Sequence,
    *,
    H: int,
    L: int | None = None,
    r_max: float | None = None,
    **kwargs,
) -> EnvironmentModel:
    """Convenience constructor inferring ``L`` and ``r_max`` from the tables."""
    consumption = np.asarray(consumption)
    reward = np.asarray(reward, dtype=float)
    if L is None:
        L = max(int(consumption.max()), 1)
    if r_max is None:
        r_max = max(float(reward.max()), 1e-12)
    return EnvironmentModel(
        H=H, L=L, r_max=r_max, rho=np.asarray(rho, dtype=float), reward=reward,
        consumption=consumption, context_pmf=np.asarray(context_pmf, dtype=float), **kwargs,
    )
