"""Synthetic panels drawn from known separable intensities.

Used by the test-suite, the acceptance checks and the demo scripts. A
generator is a callable ``log_intensity(t, prev, window) -> (n, n)``
where ``prev`` is ``y_{t-1}`` and ``window`` the sum of the last ``lag``
periods (both all-zero for ``t = 1``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .network import ActorRegistry, EventPanel
from .statistics import CovariateTable

LogIntensity = Callable[[int, np.ndarray, np.ndarray], np.ndarray]


@dataclass
class SyntheticData:
    panel: EventPanel
    covariates: CovariateTable | None
    truth: dict = field(default_factory=dict)


def actor_ids(n: int) -> list[str]:
    width = len(str(n - 1))
    return [f"a{k:0{width}d}" for k in range(n)]


def simulate_network(
    n: int,
    T: int,
    log_intensity: LogIntensity,
    rng: np.random.Generator,
    lag: int = 1,
    presence: dict[str, frozenset[int]] | None = None,
) -> EventPanel:
    """Draw ``y_t ~ Poisson(exp(log_intensity(...)))`` sequentially for ``t = 1..T``."""
    actors = actor_ids(n)
    if presence is None:
        presence = {a: frozenset(range(1, T + 1)) for a in actors}
    registry = ActorRegistry(tuple(actors), presence)
    history: list[np.ndarray] = []
    for t in range(1, T + 1):
        prev = history[-1] if history else np.zeros((n, n), dtype=np.int64)
        window = np.zeros((n, n), dtype=np.int64)
        for y in history[-lag:]:
            window = window + y
        lam = np.exp(log_intensity(t, prev, window))
        mask = registry.present_mask(t)
        at_risk = np.outer(mask, mask)
        np.fill_diagonal(at_risk, False)
        y = np.where(at_risk, rng.poisson(np.where(at_risk, lam, 0.0)), 0).astype(np.int64)
        history.append(y)
    return EventPanel(history, registry)


def dyad_covariate_table(name: str, values: np.ndarray, actors) -> CovariateTable:
    """Wrap a ``(T, n, n)`` array as a dyad-level covariate (periods 1..T)."""
    T, n, _ = values.shape
    data = {}
    for t in range(T):
        for i in range(n):
            for j in range(n):
                if i != j:
                    data[(actors[i], actors[j], t + 1)] = float(values[t, i, j])
    return CovariateTable(dyad={name: data})


def recovery_scenario(seed: int, n: int = 20, T: int = 40) -> SyntheticData:
    """Separable intercepts plus a standardized dyadic covariate with ``0.5 sin(2 pi t / T)`` onset effect."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((T, n, n))

    def theta(t):
        return 0.5 * np.sin(2 * np.pi * np.asarray(t, dtype=float) / T)

    def onset_icpt(t):
        return -2.0 + 0.3 * np.cos(2 * np.pi * np.asarray(t, dtype=float) / T)

    def rep_icpt(t):
        return 0.3 + 0.2 * np.asarray(t, dtype=float) / T

    def log_intensity(t, prev, window):
        if t == 1:
            return np.full((n, n), onset_icpt(1))
        onset = onset_icpt(t) + theta(t) * x[t - 2]
        return np.where(prev > 0, rep_icpt(t), onset)

    panel = simulate_network(n, T, log_intensity, rng)
    table = dyad_covariate_table("x", x, panel.actors)
    return SyntheticData(panel, table, {"theta": theta, "onset_intercept": onset_icpt,
                                        "repetition_intercept": rep_icpt})


def random_effects_scenario(seed: int, n: int = 50, T: int = 40, tau2: float = 0.25) -> SyntheticData:
    """Separable constant intercepts with sender and receiver effects drawn from ``N(0, tau2)``."""
    rng = np.random.default_rng(seed)
    u_s = rng.normal(0.0, np.sqrt(tau2), n)
    u_r = rng.normal(0.0, np.sqrt(tau2), n)
    effects = u_s[:, None] + u_r[None, :]

    def log_intensity(t, prev, window):
        return np.where(prev > 0, 0.0, -3.0) + effects

    panel = simulate_network(n, T, log_intensity, rng)
    return SyntheticData(panel, None, {"sender": u_s, "receiver": u_r, "tau2": tau2})


def separability_scenario(seed: int, separable: bool, n: int = 15, T: int = 15) -> SyntheticData:
    """Constant effects of a dyadic covariate, either regime-specific or shared.

    With ``separable=False`` the intensity ignores the previous count
    entirely, so the pooled model is the true one.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((T, n, n))

    def log_intensity(t, prev, window):
        xt = x[max(t - 2, 0)]
        if not separable:
            return -1.5 + 0.4 * xt
        return np.where(prev > 0, 0.5 - 0.3 * xt, -2.5 + 0.5 * xt)

    panel = simulate_network(n, T, log_intensity, rng)
    return SyntheticData(panel, dyad_covariate_table("x", x, panel.actors), {"separable": separable})


def lag_scenario(seed: int, n: int = 20, T: int = 30) -> SyntheticData:
    """One-period separability truth: strong repetition boost only after last year's events."""
    rng = np.random.default_rng(seed)

    def log_intensity(t, prev, window):
        return np.where(prev > 0, 0.5, -2.5)

    return SyntheticData(simulate_network(n, T, log_intensity, rng), None, {"lag": 1})
