"""Endogenous network statistics and exogenous covariate joins.

Every structural statistic for period ``t`` reads only the lagged network
``y_{t-1}`` through positive-count indicators and is normalised by the
number of actors at risk in ``t``:

=====================  =============================================
in_degree_sender       100/(n_t-1) * sum_h 1(y_{hi} > 0)
in_degree_receiver     100/(n_t-1) * sum_h 1(y_{hj} > 0)
out_degree_sender      100/(n_t-1) * sum_h 1(y_{ih} > 0)
out_degree_receiver    100/(n_t-1) * sum_h 1(y_{jh} > 0)
transitivity           100/(n_t-2) * sum_h 1(y_{ih} > 0) 1(y_{hj} > 0)
shared_supplier        100/(n_t-2) * sum_h 1(y_{hi} > 0) 1(y_{hj} > 0)
reciprocity            1(y_{ji} > 0)
=====================  =============================================

Sums over ``h`` run over every registered actor, including actors that
left the network by ``t``. Because that can push a value past the
nominal maximum, non-binary statistics are capped at 100.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .network import EventPanel, EventFormat, IngestionError

DEGREE_STATISTICS = (
    "in_degree_sender",
    "in_degree_receiver",
    "out_degree_sender",
    "out_degree_receiver",
)
TRIADIC_STATISTICS = ("transitivity", "shared_supplier")
STRUCTURAL_STATISTICS = DEGREE_STATISTICS + TRIADIC_STATISTICS + ("reciprocity",)
BINARY_STATISTICS = frozenset({"reciprocity"})

MISSING_POLICIES = ("fail", "interpolate", "zero-fill")
TRANSFORMS = ("none", "log", "log1p", "absdiff")
ROLES = ("sender", "receiver", "dyad")


class MissingCovariateError(ValueError):
    pass


def _lagged(panel: EventPanel, t: int) -> tuple[np.ndarray, int]:
    if t < 2 or t > panel.T:
        raise IndexError(f"statistics need 2 <= t <= {panel.T}, got {t}")
    a = (panel.dense(t - 1) > 0).astype(np.int64)
    return a, int(panel.risk_mask(t).sum())


def structural_matrices(
    indicator: np.ndarray, n_t: int, names: Sequence[str] = STRUCTURAL_STATISTICS
) -> dict[str, np.ndarray]:
    """Statistic values for every ordered pair ``(i, j)`` given the 0/1 lagged network.

    Diagonal entries are meaningless and left as computed.
    """
    a = indicator
    n = a.shape[0]
    out = {}
    need_deg = any(s in DEGREE_STATISTICS for s in names)
    need_tri = any(s in TRIADIC_STATISTICS for s in names)
    if need_deg:
        if n_t <= 1:
            raise ValueError(f"degree statistics need at least 2 actors at risk (n_t={n_t})")
        c1 = 100.0 / (n_t - 1)
        indeg = a.sum(axis=0)
        outdeg = a.sum(axis=1)
    if need_tri:
        if n_t <= 2:
            raise ValueError(f"triadic statistics need at least 3 actors at risk (n_t={n_t})")
        c2 = 100.0 / (n_t - 2)
    ones = np.ones(n)
    for name in names:
        if name == "in_degree_sender":
            m = np.outer(indeg * c1, ones)
        elif name == "in_degree_receiver":
            m = np.outer(ones, indeg * c1)
        elif name == "out_degree_sender":
            m = np.outer(outdeg * c1, ones)
        elif name == "out_degree_receiver":
            m = np.outer(ones, outdeg * c1)
        elif name == "transitivity":
            m = (a @ a) * c2
        elif name == "shared_supplier":
            m = (a.T @ a) * c2
        elif name == "reciprocity":
            m = a.T.astype(float)
        else:
            raise KeyError(f"unknown structural statistic {name!r}")
        if name not in BINARY_STATISTICS:
            m = np.minimum(m, 100.0)
        out[name] = m
    return out


def _actor_stat(panel, t, actor, name):
    a, n_t = _lagged(panel, t)
    k = panel.registry.index(actor)
    if not panel.risk_mask(t)[k]:
        raise ValueError(f"actor {actor!r} is not at risk in period {t}")
    # degree matrices are broadcast over the partner, so the diagonal holds the actor's value
    return float(structural_matrices(a, n_t, [name])[name][k, k])


def in_degree_sender(panel: EventPanel, t: int, i: str) -> float:
    return _actor_stat(panel, t, i, "in_degree_sender")


def in_degree_receiver(panel: EventPanel, t: int, j: str) -> float:
    return _actor_stat(panel, t, j, "in_degree_receiver")


def out_degree_sender(panel: EventPanel, t: int, i: str) -> float:
    return _actor_stat(panel, t, i, "out_degree_sender")


def out_degree_receiver(panel: EventPanel, t: int, j: str) -> float:
    return _actor_stat(panel, t, j, "out_degree_receiver")


def _dyad_stat(panel, t, i, j, name):
    if i == j:
        raise ValueError("dyadic statistics need sender != receiver")
    a, n_t = _lagged(panel, t)
    ki, kj = panel.registry.index(i), panel.registry.index(j)
    mask = panel.risk_mask(t)
    if not (mask[ki] and mask[kj]):
        raise ValueError(f"dyad {i}->{j} is not at risk in period {t}")
    return float(structural_matrices(a, n_t, [name])[name][ki, kj])


def transitivity(panel: EventPanel, t: int, i: str, j: str) -> float:
    return _dyad_stat(panel, t, i, j, "transitivity")


def shared_supplier(panel: EventPanel, t: int, i: str, j: str) -> float:
    return _dyad_stat(panel, t, i, j, "shared_supplier")


def reciprocity(panel: EventPanel, t: int, i: str, j: str) -> float:
    return _dyad_stat(panel, t, i, j, "reciprocity")


class Interpolated(NamedTuple):
    values: dict[int, float | None]
    below_coverage: bool


def interpolate_series(series: Mapping[int, float | None], min_coverage: float = 0.6) -> Interpolated:
    """Fill gaps linearly when enough of the series is observed.

    Interior gaps are interpolated linearly in the period index; leading
    and trailing gaps take the nearest observation. A series whose
    observed fraction is below ``min_coverage`` is returned unchanged with
    ``below_coverage=True``.
    """
    if not 0 < min_coverage <= 1:
        raise ValueError("min_coverage must lie in (0, 1]")
    periods = sorted(series)
    if not periods:
        return Interpolated({}, False)
    obs = [p for p in periods if series[p] is not None and not _isnan(series[p])]
    if len(obs) / len(periods) < min_coverage or not obs:
        return Interpolated(dict(series), True)
    xp = np.array(obs, dtype=float)
    fp = np.array([series[p] for p in obs], dtype=float)
    # np.interp holds boundary values constant outside [xp[0], xp[-1]]
    filled = np.interp(np.array(periods, dtype=float), xp, fp)
    out = {p: (float(series[p]) if p in set(obs) else float(v)) for p, v in zip(periods, filled)}
    return Interpolated(out, False)


def _isnan(x) -> bool:
    return isinstance(x, float) and math.isnan(x)


@dataclass(frozen=True)
class Term:
    """One covariate in the model specification.

    ``covariate`` is a structural statistic name, ``"intercept"``, or the
    name of a node/dyad covariate in the :class:`CovariateTable`.
    """

    covariate: str
    role: str = "dyad"
    transform: str = "none"
    name: str | None = None
    regime: str = "both"
    time_varying: bool = True
    spline: Mapping | None = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"term role must be one of {ROLES}")
        if self.transform not in TRANSFORMS:
            raise ValueError(f"term transform must be one of {TRANSFORMS}")
        if self.regime not in ("onset", "repetition", "both"):
            raise ValueError("term regime must be onset, repetition or both")

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.covariate in STRUCTURAL_STATISTICS or self.covariate == "intercept":
            return self.covariate
        parts = [self.covariate]
        if self.transform != "none":
            parts.insert(0, self.transform)
        if self.role != "dyad":
            parts.append(self.role)
        return "_".join(parts)

    @classmethod
    def from_dict(cls, d: Mapping) -> Term:
        d = dict(d)
        return cls(**{k: d[k] for k in (
            "covariate", "role", "transform", "name", "regime", "time_varying", "spline") if k in d})


@dataclass
class CovariateTable:
    """Node- and dyad-level exogenous covariates keyed by period index."""

    node: dict[str, dict[tuple[str, int], float]] = field(default_factory=dict)
    dyad: dict[str, dict[tuple[str, str, int], float]] = field(default_factory=dict)
    missing_policy: dict[str, str] = field(default_factory=dict)
    min_coverage: float = 0.6

    def __post_init__(self):
        both = set(self.node) & set(self.dyad)
        if both:
            raise ValueError(f"covariates {sorted(both)} are declared both node- and dyad-level")
        for name, pol in self.missing_policy.items():
            if pol not in MISSING_POLICIES:
                raise ValueError(f"unknown missing policy {pol!r} for {name}")

    def policy(self, name: str) -> str:
        return self.missing_policy.get(name, "fail")

    def kind(self, name: str) -> str:
        if name in self.node:
            return "node"
        if name in self.dyad:
            return "dyad"
        raise KeyError(f"unknown covariate {name!r}")

    def _fill(self, name, series):
        pol = self.policy(name)
        if pol == "interpolate":
            res = interpolate_series(series, self.min_coverage)
            return res.values, res.below_coverage
        if pol == "zero-fill":
            return {p: (0.0 if v is None else v) for p, v in series.items()}, False
        return series, False

    def node_array(self, name: str, registry, T: int) -> tuple[np.ndarray, list[str]]:
        """``(n, T)`` array of resolved values (NaN where unresolved) and below-coverage actors."""
        data = self.node[name]
        out = np.full((registry.n, T), np.nan)
        flagged = []
        for k, a in enumerate(registry.actors):
            periods = _needed_periods(registry.presence[a])
            if not periods:
                continue
            series = {p: data.get((a, p)) for p in periods}
            vals, low = self._fill(name, series)
            if low:
                flagged.append(a)
            for p, v in vals.items():
                if v is not None:
                    out[k, p - 1] = v
        return out, flagged

    def dyad_array(self, name: str, registry, T: int) -> tuple[np.ndarray, list[tuple[str, str]]]:
        """``(T, n, n)`` array of resolved values and below-coverage dyads."""
        data = self.dyad[name]
        n = registry.n
        out = np.full((T, n, n), np.nan)
        pos = {a: k for k, a in enumerate(registry.actors)}
        pol = self.policy(name)
        if pol == "fail":
            for (i, j, p), v in data.items():
                if i in pos and j in pos and 1 <= p <= T:
                    out[p - 1, pos[i], pos[j]] = v
            return out, []
        flagged = []
        for i in registry.actors:
            for j in registry.actors:
                if i == j:
                    continue
                periods = _needed_periods(registry.presence[i] & registry.presence[j])
                if not periods:
                    continue
                vals, low = self._fill(name, {p: data.get((i, j, p)) for p in periods})
                if low:
                    flagged.append((i, j))
                for p, v in vals.items():
                    if v is not None:
                        out[p - 1, pos[i], pos[j]] = v
        return out, flagged

    def coverage_violations(self, registry, T: int) -> list[str]:
        """Human-readable problems that would make a design build fail."""
        problems = []
        for name in self.node:
            arr, flagged = self.node_array(name, registry, T)
            for a in flagged:
                problems.append(
                    f"covariate {name!r}: actor {a!r} below {self.min_coverage:.0%} coverage")
            if self.policy(name) != "zero-fill":
                for k, a in enumerate(registry.actors):
                    if a in flagged:
                        continue
                    for p in _needed_periods(registry.presence[a]):
                        if np.isnan(arr[k, p - 1]):
                            problems.append(f"covariate {name!r}: missing value for {a!r} in period {p}")
                            break
        for name in self.dyad:
            _, flagged = self.dyad_array(name, registry, T)
            for i, j in flagged:
                problems.append(
                    f"covariate {name!r}: dyad {i!r}->{j!r} below {self.min_coverage:.0%} coverage")
        return problems


def _needed_periods(presence) -> list[int]:
    """Periods whose covariate values a design may read: presence plus one-period lags."""
    need = set(presence) | {p - 1 for p in presence if p >= 2}
    return sorted(need)


def load_covariates(
    paths: str | Path | Sequence[str | Path],
    fmt: EventFormat | None = None,
    missing_policy: Mapping[str, str] | None = None,
    min_coverage: float = 0.6,
) -> CovariateTable:
    """Read node (``name,actor,period,value``) and dyad (``name,sender,receiver,period,value``) files.

    Empty ``value`` cells are read as missing.
    """
    if isinstance(paths, (str, Path)):
        paths = [paths]
    fmt = fmt or EventFormat()
    to_period = fmt.period_mapper()
    node: dict = {}
    dyad: dict = {}
    for path in paths:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh, delimiter=fmt.delimiter)
            header = [h.strip() for h in next(reader, [])]
            if header == ["name", "actor", "period", "value"]:
                target, width = node, 4
            elif header == ["name", "sender", "receiver", "period", "value"]:
                target, width = dyad, 5
            else:
                raise IngestionError(f"{path}: bad covariate header {header}")
            for rownum, row in enumerate(reader, start=1):
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) != width:
                    raise IngestionError(f"{path} row {rownum}: expected {width} fields")
                p = to_period(row[-2])
                if p is None or p < 1:
                    raise IngestionError(f"{path} row {rownum}: bad period {row[-2]!r}")
                raw = row[-1].strip()
                if not raw or raw.upper() == "NA":
                    continue
                try:
                    v = float(raw)
                except ValueError:
                    raise IngestionError(f"{path} row {rownum}: value {raw!r} is not a number") from None
                key = tuple(c.strip() for c in row[1:-2]) + (p,)
                target.setdefault(row[0].strip(), {})[key] = v
    return CovariateTable(node, dyad, dict(missing_policy or {}), min_coverage)


def _transform(values: np.ndarray, transform: str, what: str) -> np.ndarray:
    if transform == "log":
        bad = values <= 0
        if bad.any():
            raise ValueError(f"{what}: log of nonpositive value; use log1p or clean the data")
        return np.log(values)
    if transform == "log1p":
        if (values <= -1).any():
            raise ValueError(f"{what}: log1p of value <= -1")
        return np.log1p(values)
    return values


class CovariateCache:
    """Resolved covariate arrays for one panel, computed once per design build."""

    def __init__(self, panel: EventPanel, table: CovariateTable | None):
        self.panel = panel
        self.table = table
        self._node: dict[str, np.ndarray] = {}
        self._dyad: dict[str, np.ndarray] = {}

    def node(self, name):
        if name not in self._node:
            self._node[name] = self.table.node_array(name, self.panel.registry, self.panel.T)[0]
        return self._node[name]

    def dyad(self, name):
        if name not in self._dyad:
            self._dyad[name] = self.table.dyad_array(name, self.panel.registry, self.panel.T)[0]
        return self._dyad[name]


def term_matrix(
    panel: EventPanel,
    cache: CovariateCache,
    term: Term,
    t: int,
    structural: Mapping[str, np.ndarray] | None = None,
) -> np.ndarray:
    """``(n, n)`` values of ``term`` for period ``t`` (reading period ``t-1``).

    Only at-risk off-diagonal entries are validated; others may hold NaN.
    """
    n = panel.n
    if term.covariate == "intercept":
        return np.ones((n, n))
    if term.covariate in STRUCTURAL_STATISTICS:
        if structural is not None and term.covariate in structural:
            return structural[term.covariate]
        a, n_t = _lagged(panel, t)
        return structural_matrices(a, n_t, [term.covariate])[term.covariate]
    table = cache.table
    if table is None:
        raise MissingCovariateError(f"term {term.label!r} needs covariate data but none was given")
    kind = table.kind(term.covariate)
    mask = panel.risk_mask(t)
    at_risk = np.outer(mask, mask)
    np.fill_diagonal(at_risk, False)
    if kind == "node":
        x = cache.node(term.covariate)[:, t - 2]
        _check_missing(x, mask, term.covariate, panel, t - 1)
        if term.transform == "absdiff":
            m = np.abs(x[:, None] - x[None, :])
        else:
            x = np.where(mask, x, 1.0)
            x = _transform(x, term.transform, f"covariate {term.covariate!r} period {t - 1}")
            if term.role == "sender":
                m = np.repeat(x[:, None], n, axis=1)
            elif term.role == "receiver":
                m = np.repeat(x[None, :], n, axis=0)
            else:
                raise ValueError(f"node covariate {term.covariate!r} needs role sender/receiver or absdiff")
        return m
    x = cache.dyad(term.covariate)[t - 2]
    holes = at_risk & np.isnan(x)
    if holes.any():
        i, j = np.argwhere(holes)[0]
        raise MissingCovariateError(
            f"covariate {term.covariate!r}: missing value for dyad "
            f"{panel.actors[i]!r}->{panel.actors[j]!r} in period {t - 1}")
    if term.transform == "absdiff":
        raise ValueError("absdiff applies to node covariates only")
    x = np.where(at_risk, x, 1.0)
    return _transform(x, term.transform, f"covariate {term.covariate!r} period {t - 1}")


def _check_missing(x, mask, name, panel, period):
    holes = mask & np.isnan(x)
    if holes.any():
        a = panel.actors[int(np.flatnonzero(holes)[0])]
        raise MissingCovariateError(f"covariate {name!r}: missing value for actor {a!r} in period {period}")


@dataclass(frozen=True)
class StatisticVector:
    period: int
    sender: str
    receiver: str
    values: dict[str, float]


def join_covariates(
    panel: EventPanel,
    table: CovariateTable | None,
    terms: Sequence[Term],
    t: int,
    i: str,
    j: str,
) -> StatisticVector:
    """Assemble the named statistic vector of dyad ``(i, j)`` at period ``t``."""
    if i == j:
        raise ValueError("sender and receiver must differ")
    cache = CovariateCache(panel, table)
    ki, kj = panel.registry.index(i), panel.registry.index(j)
    mask = panel.risk_mask(t)
    if not (mask[ki] and mask[kj]):
        raise ValueError(f"dyad {i}->{j} is not at risk in period {t}")
    values = {}
    for term in terms:
        values[term.label] = float(term_matrix(panel, cache, term, t)[ki, kj])
    return StatisticVector(t, i, j, values)


def _units_values(panel: EventPanel, t: int, statistic: str) -> dict:
    """Statistic values of the network ``y_t`` itself, keyed by actor or ordered dyad."""
    mask = panel.risk_mask(t)
    n_t = int(mask.sum())
    a = (panel.dense(t) > 0).astype(np.int64)
    m = structural_matrices(a, n_t, [statistic])[statistic]
    idx = np.flatnonzero(mask)
    actors = panel.actors
    if statistic in DEGREE_STATISTICS:
        return {actors[k]: m[k, k] for k in idx}
    return {(actors[p], actors[q]): m[p, q] for p in idx for q in idx if p != q}


def statistic_autocorrelation(panel: EventPanel, statistic: str) -> dict[int, float]:
    """Pearson correlation of a statistic between consecutive years.

    For each ``t >= 2`` the statistic is evaluated on ``y_{t-1}`` and on
    ``y_t`` (each normalised by its own risk-set size) and correlated over
    the units present in both years: actors for the degree statistics,
    ordered dyads otherwise. Years with fewer than two shared units or
    zero variance map to NaN.
    """
    if statistic not in STRUCTURAL_STATISTICS:
        raise KeyError(f"unknown structural statistic {statistic!r}")
    out = {}
    prev = None
    for t in range(1, panel.T + 1):
        try:
            cur = _units_values(panel, t, statistic)
        except ValueError:
            cur = {}
        if prev is not None:
            shared = sorted(set(prev) & set(cur))
            r = float("nan")
            if len(shared) >= 2:
                x = np.array([prev[u] for u in shared], dtype=float)
                y = np.array([cur[u] for u in shared], dtype=float)
                if x.std() > 0 and y.std() > 0:
                    r = float(np.corrcoef(x, y)[0, 1])
            out[t] = r
        prev = cur
    return out
