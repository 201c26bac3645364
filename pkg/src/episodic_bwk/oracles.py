"""Confidence-bound oracles for the conversion probability.

Every oracle maps labeled data ``{(theta_n, A_n, Y_n)}`` and a confidence
level ``delta`` to pointwise bounds ``0 <= LCB <= UCB <= 1`` over the whole
(context, action) catalog, with the null action pinned to ``(0, 0)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from episodic_bwk.errors import ConfigError, NumericalError
from episodic_bwk.model import A_NULL, EnvironmentModel

NEWTON_TOL = 1e-8
NEWTON_MAX_ITER = 100


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Conversion records; ``steps`` (1-based) is present for step-tagged data."""

    contexts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    actions: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    outcomes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    steps: np.ndarray | None = None

    def __post_init__(self) -> None:
        for name in ("contexts", "actions", "outcomes"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        if self.steps is not None:
            object.__setattr__(self, "steps", np.asarray(self.steps, dtype=np.int64))
        n = len(self.contexts)
        if len(self.actions) != n or len(self.outcomes) != n:
            raise ValueError("record fields must have equal length")
        if self.steps is not None and len(self.steps) != n:
            raise ValueError("steps must tag every record")
        if np.any(self.actions == A_NULL):
            raise ValueError("labeled data must not contain null-action records")
        if np.any((self.outcomes != 0) & (self.outcomes != 1)):
            raise ValueError("outcomes must be 0/1")

    def __len__(self) -> int:
        return len(self.contexts)

    @classmethod
    def from_records(cls, records: Sequence[tuple], tagged: bool = False) -> "LabeledDataset":
        """Build from ``(theta, a, y)`` or, if ``tagged``, ``(theta, a, y, h)`` tuples."""
        if not records:
            return cls(steps=np.zeros(0, dtype=np.int64) if tagged else None)
        cols = list(zip(*records))
        return cls(
            contexts=np.array(cols[0]),
            actions=np.array(cols[1]),
            outcomes=np.array(cols[2]),
            steps=np.array(cols[3]) if tagged else None,
        )

    def concat(self, other: "LabeledDataset") -> "LabeledDataset":
        steps = None
        if self.steps is not None and other.steps is not None:
            steps = np.concatenate([self.steps, other.steps])
        return LabeledDataset(
            contexts=np.concatenate([self.contexts, other.contexts]),
            actions=np.concatenate([self.actions, other.actions]),
            outcomes=np.concatenate([self.outcomes, other.outcomes]),
            steps=steps,
        )


@dataclass(frozen=True, eq=False)
class ConfidenceBounds:
    """Pointwise bounds on ``rho``; arrays are ``(C, A)`` or step-indexed ``(H, C, A)``."""

    ucb: np.ndarray
    lcb: np.ndarray
    delta: float = 1.0

    def __post_init__(self) -> None:
        ucb = np.array(np.clip(self.ucb, 0.0, 1.0), dtype=float)
        lcb = np.array(np.clip(self.lcb, 0.0, 1.0), dtype=float)
        if ucb.shape != lcb.shape or ucb.ndim not in (2, 3):
            raise ValueError(f"bad bound shapes {ucb.shape} / {lcb.shape}")
        if np.any(lcb > ucb):
            raise ValueError("lcb exceeds ucb")
        ucb[..., A_NULL] = 0.0
        lcb[..., A_NULL] = 0.0
        ucb.setflags(write=False)
        lcb.setflags(write=False)
        object.__setattr__(self, "ucb", ucb)
        object.__setattr__(self, "lcb", lcb)

    @property
    def step_dependent(self) -> bool:
        return self.ucb.ndim == 3

    def at(self, h: int) -> tuple[np.ndarray, np.ndarray]:
        """``(ucb, lcb)`` tables in force at step ``h`` (1-based)."""
        if self.ucb.ndim == 3:
            return self.ucb[h - 1], self.lcb[h - 1]
        return self.ucb, self.lcb

    def width(self, h: int, theta: int, a: int) -> float:
        u, l = self.at(h)
        return float(u[theta, a] - l[theta, a])

    @classmethod
    def vacuous(cls, num_contexts: int, num_actions: int) -> "ConfidenceBounds":
        """``UCB = 1``, ``LCB = 0`` everywhere except the null action."""
        return cls(np.ones((num_contexts, num_actions)), np.zeros((num_contexts, num_actions)))


# -- K-armed oracles -------------------------------------------------------


def _karm_tables(actions, outcomes, num_actions):
    m = np.bincount(actions, minlength=num_actions).astype(float)
    s = np.bincount(actions, weights=outcomes, minlength=num_actions)
    denom = np.maximum(m, 1.0)
    return s / denom, denom


def karm_stationary_cb(
    data: LabeledDataset, delta: float, num_actions: int, num_contexts: int = 1
) -> ConfidenceBounds:
    """Per-arm empirical mean ± ``sqrt(log(2 N |A| / delta) / max(m(a), 1))``, constant in theta."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    n = max(len(data), 1)
    mu, denom = _karm_tables(data.actions, data.outcomes, num_actions)
    radius = np.sqrt(math.log(2 * n * num_actions / delta) / denom)
    ucb = np.broadcast_to(np.minimum(mu + radius, 1.0), (num_contexts, num_actions))
    lcb = np.broadcast_to(np.maximum(mu - radius, 0.0), (num_contexts, num_actions))
    return ConfidenceBounds(ucb, lcb, delta)


def karm_nonstationary_cb(
    data: LabeledDataset, delta: float, num_actions: int, H: int, num_contexts: int = 1
) -> ConfidenceBounds:
    """Per-(step, arm) means with radius ``sqrt(log(2 N H |A| / delta) / max(m_h(a), 1))``."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if data.steps is None:
        raise ValueError("non-stationary oracle needs step-tagged records")
    if len(data) and (data.steps.min() < 1 or data.steps.max() > H):
        raise ValueError("record step outside [1, H]")
    n = max(len(data), 1)
    log_term = math.log(2 * n * H * num_actions / delta)
    ucb = np.empty((H, num_contexts, num_actions))
    lcb = np.empty_like(ucb)
    for h in range(1, H + 1):
        sel = data.steps == h
        mu, denom = _karm_tables(data.actions[sel], data.outcomes[sel], num_actions)
        radius = np.sqrt(log_term / denom)
        ucb[h - 1] = np.minimum(mu + radius, 1.0)
        lcb[h - 1] = np.maximum(mu - radius, 0.0)
    return ConfidenceBounds(ucb, lcb, delta)


# -- generalized linear oracles ------------------------------------------


@dataclass(frozen=True)
class Link:
    """Inverse link ``f`` with derivative and, when known, an antiderivative."""

    name: str
    f: Callable[[np.ndarray], np.ndarray]
    fprime: Callable[[np.ndarray], np.ndarray]
    antiderivative: Callable[[np.ndarray], np.ndarray] | None = None


def _sigmoid(w):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(w, dtype=float)))


def _sigmoid_prime(w):
    s = _sigmoid(w)
    return s * (1.0 - s)


LINEAR = Link("linear", lambda w: np.asarray(w, dtype=float), lambda w: np.ones_like(w, dtype=float),
              lambda w: 0.5 * np.asarray(w, dtype=float) ** 2)
LOGISTIC = Link("logistic", _sigmoid, _sigmoid_prime, lambda w: np.logaddexp(0.0, w))
LINKS = {"linear": LINEAR, "logistic": LOGISTIC}


@dataclass(frozen=True, eq=False)
class GlmSpec:
    """GLM oracle configuration.

    ``features`` is the catalog feature map ``phi(theta, a)``, shape
    ``(C, A, dim)``. When ``lam`` is None the regularizer is derived from
    ``horizon`` (total number of steps ``H*T``) as
    ``4 dim log(1 + T / dim^2) / kappa_f^2``. ``gamma`` overrides the
    confidence-width multiplier (experiment mode).
    """

    features: np.ndarray
    link: Link = LINEAR
    ell_f: float = 1.0
    kappa_f: float = 1.0
    lam: float | None = None
    horizon: int | None = None
    q: float | None = None
    gamma: float | None = None

    def __post_init__(self) -> None:
        feats = np.asarray(self.features, dtype=float)
        if feats.ndim != 3:
            raise ConfigError("features must have shape (contexts, actions, dim)")
        object.__setattr__(self, "features", feats)
        if isinstance(self.link, str):
            try:
                object.__setattr__(self, "link", LINKS[self.link])
            except KeyError:
                raise ConfigError(f"unknown link {self.link!r}") from None
        if self.ell_f <= 0 or self.kappa_f <= 0:
            raise ConfigError("ell_f and kappa_f must be positive")
        if self.lam is not None and self.lam <= 0:
            raise ConfigError("lambda must be positive")
        if self.lam is None and not self.horizon:
            raise ConfigError("either lambda or a horizon hint is required")
        if self.q is not None:
            norms = np.linalg.norm(feats, axis=2)
            if np.any(norms > self.q * (1 + 1e-12)):
                raise ConfigError(f"feature norm {norms.max():.4g} exceeds declared q={self.q}")

    @property
    def dim(self) -> int:
        return self.features.shape[2]

    def regularizer(self) -> float:
        if self.lam is not None:
            return float(self.lam)
        d = self.dim
        return 4.0 * d * math.log(1.0 + self.horizon / d**2) / self.kappa_f**2


def _design(data: LabeledDataset, spec: GlmSpec) -> tuple[np.ndarray, np.ndarray]:
    phi = spec.features[data.contexts, data.actions]
    return phi.reshape(len(data), spec.dim), data.outcomes.astype(float)


def _newton(
    phi: np.ndarray, y: np.ndarray, link: Link, penalty: float
) -> np.ndarray:
    """Solve ``sum [y - f(phi mu)] phi = penalty * mu`` by damped Newton.

    Step halving uses the penalized quasi-likelihood when the link has an
    antiderivative and the score norm otherwise.
    """
    d = phi.shape[1]
    mu = np.zeros(d)
    if len(y) == 0:
        return mu

    def score(m):
        return phi.T @ (y - link.f(phi @ m)) - penalty * m

    if link.antiderivative is not None:
        def merit(m):
            w = phi @ m
            return -(y @ w - link.antiderivative(w).sum() - 0.5 * penalty * m @ m)
    else:
        def merit(m):
            return float(np.linalg.norm(score(m)))

    g = score(mu)
    current = merit(mu)
    for it in range(NEWTON_MAX_ITER):
        if np.linalg.norm(g) <= NEWTON_TOL:
            return mu
        w = link.fprime(phi @ mu)
        hess = (phi * w[:, None]).T @ phi + penalty * np.eye(d)
        direction = np.linalg.solve(hess, g)
        t = 1.0
        while True:
            cand = mu + t * direction
            val = merit(cand)
            if val <= current or t < 1e-10:
                break
            t *= 0.5
        mu, current = cand, val
        g = score(mu)
    if np.linalg.norm(g) <= NEWTON_TOL:
        return mu
    raise NumericalError(
        "Newton iteration did not converge", last_iterate=mu.tolist(),
        residual=float(np.linalg.norm(g)), iterations=NEWTON_MAX_ITER,
    )


def fit_glm(data: LabeledDataset, spec: GlmSpec) -> np.ndarray:
    """Penalized GLM estimate ``mu_hat``.

    Linear link: ridge closed form ``(lam I + sum phi phi^T)^{-1} sum y phi``.
    Other links: Newton on ``sum [y - f(phi^T mu)] phi = kappa_f lam mu``.
    """
    lam = spec.regularizer()
    phi, y = _design(data, spec)
    if spec.link is LINEAR:
        V = lam * np.eye(spec.dim) + phi.T @ phi
        return np.linalg.solve(V, phi.T @ y)
    return _newton(phi, y, spec.link, spec.kappa_f * lam)


def _catalog_widths(spec: GlmSpec, V: np.ndarray) -> np.ndarray:
    """``||phi(theta, a)||_{V^{-1}}`` for every catalog pair."""
    Vinv = np.linalg.inv(V)
    Vinv = 0.5 * (Vinv + Vinv.T)
    quad = np.einsum("cad,de,cae->ca", spec.features, Vinv, spec.features)
    return np.sqrt(np.maximum(quad, 0.0))


def glm_cb(data: LabeledDataset, spec: GlmSpec, delta: float) -> ConfidenceBounds:
    """Bounds ``f(phi^T mu_hat) ± gamma_N ||phi||_{V^{-1}}`` clamped to ``[0, 1]``."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    lam = spec.regularizer()
    mu = fit_glm(data, spec)
    phi, _ = _design(data, spec)
    n, d = len(data), spec.dim
    if spec.gamma is not None:
        gamma = spec.gamma
    else:
        gamma = math.sqrt(lam) + math.sqrt(
            2 * math.log(1 / delta) + d * math.log(1 + n / (d * lam))
        ) / spec.kappa_f
    V = lam * np.eye(d) + phi.T @ phi
    center = spec.link.f(spec.features @ mu)
    width = gamma * _catalog_widths(spec, V)
    return ConfidenceBounds(center + width, np.clip(center - width, 0.0, 1.0), delta)


def logistic_gamma(n: int, lam: float, d: int, delta: float) -> float:
    """``3 sqrt(lam) / 2 + (2 / sqrt(lam)) log(2^d / delta (1 + n / (4 d lam))^{d/2})``."""
    log_term = d * math.log(2.0) - math.log(delta) + 0.5 * d * math.log1p(n / (4 * d * lam))
    return 1.5 * math.sqrt(lam) + 2.0 / math.sqrt(lam) * log_term


def logistic_cb(data: LabeledDataset, spec: GlmSpec, delta: float) -> ConfidenceBounds:
    """Regularized logistic MLE, radially projected into the unit ball.

    Width is ``gamma * sqrt(3 / (2 kappa_f)) * ||phi||_{V^{-1}}`` with
    ``V = (lam / kappa_f) I + sum phi phi^T``. If the MLE fails to converge
    the estimate falls back to zero and the bounds are vacuous.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    lam = spec.regularizer()
    phi, y = _design(data, spec)
    n, d = len(data), spec.dim
    C, A = spec.features.shape[:2]
    try:
        mu = _newton(phi, y, LOGISTIC, lam)
    except NumericalError:
        return ConfidenceBounds.vacuous(C, A)
    norm = np.linalg.norm(mu)
    if norm > 1.0:
        mu = mu / norm
    gamma = spec.gamma if spec.gamma is not None else logistic_gamma(n, lam, d, delta)
    V = (lam / spec.kappa_f) * np.eye(d) + phi.T @ phi
    center = _sigmoid(spec.features @ mu)
    eps = gamma * math.sqrt(3.0 / (2.0 * spec.kappa_f)) * _catalog_widths(spec, V)
    return ConfidenceBounds(center + eps, np.clip(center - eps, 0.0, 1.0), delta)


def exact_cb(env: EnvironmentModel) -> ConfidenceBounds:
    """Degenerate oracle returning the true ``rho`` as both bounds."""
    return ConfidenceBounds(env.rho, env.rho, 0.0)


# -- oracle objects used by the learner and the harness ---------------------


class Oracle:
    """Maps ``(data, delta)`` to :class:`ConfidenceBounds` for a fixed catalog."""

    tagged = False  # whether records must carry step indices

    def fit(self, data: LabeledDataset, delta: float) -> ConfidenceBounds:
        raise NotImplementedError


class KArmOracle(Oracle):
    def __init__(self, num_actions: int, num_contexts: int):
        self.num_actions, self.num_contexts = num_actions, num_contexts

    def fit(self, data, delta):
        return karm_stationary_cb(data, delta, self.num_actions, self.num_contexts)


class KArmNonstationaryOracle(Oracle):
    tagged = True

    def __init__(self, num_actions: int, num_contexts: int, H: int):
        self.num_actions, self.num_contexts, self.H = num_actions, num_contexts, H

    def fit(self, data, delta):
        return karm_nonstationary_cb(data, delta, self.num_actions, self.H, self.num_contexts)


class GlmOracle(Oracle):
    def __init__(self, spec: GlmSpec):
        self.spec = spec

    def fit(self, data, delta):
        return glm_cb(data, self.spec, delta)


class LogisticOracle(GlmOracle):
    def fit(self, data, delta):
        return logistic_cb(data, self.spec, delta)


class ExactOracle(Oracle):
    def __init__(self, env: EnvironmentModel):
        self._bounds = exact_cb(env)

    def fit(self, data, delta):
        return self._bounds


ORACLE_KINDS = ("karm", "karm-nonstat", "linear", "logistic", "exact")


def make_oracle(cfg: dict | str, env: EnvironmentModel, horizon: int | None = None) -> Oracle:
    """Build an oracle from its run-config entry.

    ``cfg`` is either a kind name or a mapping such as
    ``{"oracle": "logistic", "lambda": 1.0, "kappa_f": 8, "gamma": 0.5}``.
    ``horizon`` (total steps ``H*T``) feeds the default GLM regularizer.
    """
    if isinstance(cfg, str):
        cfg = {"oracle": cfg}
    kind = cfg.get("oracle")
    C, A = env.num_contexts, env.num_actions
    if kind == "karm":
        return KArmOracle(A, C)
    if kind == "karm-nonstat":
        return KArmNonstationaryOracle(A, C, env.H)
    if kind == "exact":
        return ExactOracle(env)
    if kind in ("linear", "logistic"):
        if env.features is None:
            raise ConfigError(f"oracle {kind!r} needs an environment with a feature map")
        fmap = cfg.get("feature_map")
        if fmap not in (None, "default", env.name):
            raise ConfigError(f"unknown feature map {fmap!r}")
        spec = GlmSpec(
            features=env.features,
            link=kind,
            ell_f=cfg.get("ell_f", 1.0 if kind == "linear" else 0.25),
            kappa_f=cfg.get("kappa_f", 1.0 if kind == "linear" else _default_kappa(env)),
            lam=cfg.get("lambda"),
            horizon=horizon,
            q=cfg.get("q"),
            gamma=cfg.get("gamma"),
        )
        return GlmOracle(spec) if kind == "linear" else LogisticOracle(spec)
    raise ConfigError(f"unknown oracle kind {kind!r}; expected one of {ORACLE_KINDS}")


def _default_kappa(env: EnvironmentModel) -> float:
    """``kappa_f >= exp(-2 q)`` lower bound for the logistic link, ``q = max ||phi||``."""
    q = float(np.linalg.norm(env.features, axis=2).max())
    return math.exp(-2.0 * q)
