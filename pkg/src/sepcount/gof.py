"""Simulation-based goodness of fit for fitted counting-process models.

Replicate panels are drawn dyad-wise from ``Poisson(lambda_hat)``. By
default intensities condition on the observed history (one step ahead);
``trajectory=True`` recomputes statistics and regimes from the simulated
history instead.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .design import DesignMatrix, build_design, period_rows
from .estimation import FitResult, predict_intensities
from .network import EventPanel
from .statistics import CovariateCache, CovariateTable

QUANTILES = (0.0, 0.25, 0.5, 0.75, 1.0)


def _rng(seed: int, replicate: int | None = None) -> np.random.Generator:
    if replicate is None:
        return np.random.default_rng(seed)
    return np.random.default_rng(np.random.SeedSequence([seed, replicate]))


def _assemble(panel: EventPanel, design: DesignMatrix, draws: np.ndarray) -> EventPanel:
    counts = []
    first = design.layout.first_period
    for t in range(1, panel.T + 1):
        if t < first:
            counts.append(panel.dense(t))
            continue
        y = np.zeros((panel.n, panel.n), dtype=np.int64)
        rows = design.period == t
        y[design.sender[rows], design.receiver[rows]] = draws[rows]
        counts.append(y)
    return panel.replace_counts(counts)


def _trajectory(fit: FitResult, panel: EventPanel, covariates, rng) -> EventPanel:
    layout = fit.layout
    spec = layout.spec
    cache = CovariateCache(panel, covariates)
    history = [panel.dense(t) for t in range(1, layout.first_period)]
    L = spec.separability.lag
    beta = fit.coefficients
    for t in range(layout.first_period, panel.T + 1):
        lagged = [history[t - 1 - l] for l in range(1, L + 1) if t - l >= 1]
        mask = panel.risk_mask(t)
        I, J, X, _ = period_rows(layout, cache, t, mask, lagged)
        eta = X @ beta[: layout.n_fixed]
        if layout.n_random_sender:
            eta = eta + beta[layout.sender_offset + I]
        if layout.n_random_receiver:
            eta = eta + beta[layout.receiver_offset + J]
        y = np.zeros((panel.n, panel.n), dtype=np.int64)
        y[I, J] = rng.poisson(np.exp(eta))
        history.append(y)
    return panel.replace_counts(history)


def simulate_panel(
    fit: FitResult,
    panel: EventPanel,
    covariates: CovariateTable | None = None,
    seed: int = 0,
    trajectory: bool = False,
    design: DesignMatrix | None = None,
) -> EventPanel:
    """One replicate panel of the same shape as ``panel``.

    Periods before the first modeled period are copied from ``panel``.
    Pass a prebuilt ``design`` to skip rebuilding the observed-history rows.
    """
    rng = _rng(seed)
    if trajectory:
        return _trajectory(fit, panel, covariates, rng)
    if design is None:
        design = build_design(panel, covariates, fit.layout.spec, layout=fit.layout)
    lam = predict_intensities(fit, design)
    return _assemble(panel, design, rng.poisson(lam))


def rootogram_frequencies(panel: EventPanel, periods=None) -> dict[int, int]:
    """Frequency of each count value over all at-risk ordered dyad-periods."""
    periods = range(1, panel.T + 1) if periods is None else periods
    tally: Counter = Counter()
    for t in periods:
        mask = panel.risk_mask(t)
        at_risk = np.outer(mask, mask)
        np.fill_diagonal(at_risk, False)
        vals, cnt = np.unique(panel.dense(t)[at_risk], return_counts=True)
        tally.update(dict(zip(vals.tolist(), cnt.tolist())))
    return dict(sorted(tally.items()))


def weighted_clustering(y: np.ndarray) -> float:
    """Directed weighted clustering with arithmetic-mean triplet values.

    A triplet is a pair of positive edges ``i -> k -> j`` with ``i != j``,
    valued ``(y_ik + y_kj) / 2`` and closed when ``y_ij > 0``. Returns the
    closed share of total triplet value, or NaN when no triplet exists.
    """
    y = np.asarray(y, dtype=float)
    if y.shape[0] < 3:
        return math.nan
    y = y.copy()
    np.fill_diagonal(y, 0.0)
    a = (y > 0).astype(float)
    outdeg = a.sum(axis=1)
    indeg = a.sum(axis=0)
    # first edge i->k continues along any k->j with j != i; second edge k->j preceded by any i->k with i != j
    total = (np.sum(y * (outdeg[None, :] - a.T)) + np.sum(y * (indeg[:, None] - a.T))) / 2
    if total <= 0:
        return math.nan
    closed = (np.sum(y * (a @ a.T)) + np.sum(y * (a.T @ a))) / 2
    return float(closed / total)


def average_in_count(y: np.ndarray, risk_mask) -> float:
    """Mean over at-risk actors of their received event counts."""
    mask = np.asarray(risk_mask, dtype=bool)
    if not mask.any():
        raise ValueError("average in-count needs a nonempty risk set")
    return float(np.asarray(y).sum(axis=0)[mask].mean())


def count_distributions(panel: EventPanel, periods=None) -> tuple[list[int], list[int]]:
    """In- and out-counts of every at-risk actor, concatenated over periods."""
    periods = range(1, panel.T + 1) if periods is None else periods
    ins: list[int] = []
    outs: list[int] = []
    for t in periods:
        y = panel.dense(t)
        mask = panel.risk_mask(t)
        ins += y.sum(axis=0)[mask].astype(int).tolist()
        outs += y.sum(axis=1)[mask].astype(int).tolist()
    return ins, outs


def panel_statistics(panel: EventPanel, periods) -> dict[str, dict]:
    """All goodness-of-fit statistics of one panel keyed by statistic and cell."""
    periods = list(periods)
    out = {
        "rootogram": {k: float(v) for k, v in rootogram_frequencies(panel, periods).items()},
        "clustering": {},
        "average_in_count": {},
    }
    for t in periods:
        y = panel.dense(t)
        label = panel.period_labels[t - 1]
        out["clustering"][label] = weighted_clustering(y)
        out["average_in_count"][label] = average_in_count(y, panel.risk_mask(t))
    ins, outs = count_distributions(panel, periods)
    out["in_count"] = {k: float(v) for k, v in sorted(Counter(ins).items())}
    out["out_count"] = {k: float(v) for k, v in sorted(Counter(outs).items())}
    return out


@dataclass
class SimulationSummary:
    """Observed statistics and their simulated distributions.

    ``simulated[stat][cell]`` holds exactly ``n_sims`` values (NaN where a
    replicate leaves the statistic undefined).
    """

    n_sims: int
    seed: int
    observed: dict[str, dict]
    simulated: dict[str, dict[object, np.ndarray]]
    cells: dict[str, list] = field(default_factory=dict)

    def summary_rows(self) -> list[list]:
        rows = []
        for stat, cells in self.cells.items():
            for cell in cells:
                sims = self.simulated[stat][cell]
                obs = self.observed[stat].get(cell, math.nan)
                finite = sims[~np.isnan(sims)]
                if finite.size:
                    qs = np.quantile(finite, QUANTILES).tolist()
                    mean = float(finite.mean())
                else:
                    qs, mean = [math.nan] * len(QUANTILES), math.nan
                rows.append([stat, cell, obs, *qs, mean])
        return rows

    def envelope(self, stat: str, cell, lo: float = 0.0, hi: float = 1.0) -> tuple[float, float]:
        sims = self.simulated[stat][cell]
        sims = sims[~np.isnan(sims)]
        return float(np.quantile(sims, lo)), float(np.quantile(sims, hi))

    def write(self, summary_path: str | Path, replicates_path: str | Path) -> None:
        with open(summary_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["statistic", "cell", "observed", "sim_min", "sim_q25", "sim_q50",
                        "sim_q75", "sim_max", "sim_mean"])
            for row in self.summary_rows():
                w.writerow(row[:2] + [_fmt(v) for v in row[2:]])
        with open(replicates_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["statistic", "cell", "replicate", "value"])
            for stat, cells in self.cells.items():
                for cell in cells:
                    for s, v in enumerate(self.simulated[stat][cell]):
                        w.writerow([stat, cell, s, _fmt(v)])


def _fmt(v) -> str:
    v = float(v)
    return "NA" if math.isnan(v) else format(v, ".12g")


def gof_report(
    fit: FitResult,
    panel: EventPanel,
    covariates: CovariateTable | None = None,
    n_sims: int = 1000,
    seed: int = 0,
    threads: int = 1,
    trajectory: bool = False,
) -> SimulationSummary:
    """Compare observed statistics with ``n_sims`` simulated replicates.

    Statistics cover the modeled periods only: pooled count frequencies,
    per-period weighted clustering and average in-count, and the pooled
    in-/out-count distributions. Replicate ``s`` uses a random stream
    derived from ``(seed, s)``, so results do not depend on ``threads``.
    """
    if n_sims < 1:
        raise ValueError("n_sims must be >= 1")
    periods = list(range(fit.layout.first_period, panel.T + 1))
    observed = panel_statistics(panel, periods)
    design = None
    lam = None
    if not trajectory:
        design = build_design(panel, covariates, fit.layout.spec, layout=fit.layout)
        lam = predict_intensities(fit, design)

    def replicate(s):
        rng = _rng(seed, s)
        if trajectory:
            sim = _trajectory(fit, panel, covariates, rng)
        else:
            sim = _assemble(panel, design, rng.poisson(lam))
        return panel_statistics(sim, periods)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            reps = list(ex.map(replicate, range(n_sims)))
    else:
        reps = [replicate(s) for s in range(n_sims)]

    cells: dict[str, list] = {}
    simulated: dict[str, dict] = {}
    for stat in observed:
        if stat in ("clustering", "average_in_count"):
            keys = list(observed[stat])
            fill = math.nan
        else:
            keys = sorted(set(observed[stat]).union(*(r[stat] for r in reps)))
            fill = 0.0
        cells[stat] = keys
        simulated[stat] = {k: np.array([r[stat].get(k, fill) for r in reps], dtype=float) for k in keys}
        if fill == 0.0:
            observed[stat] = {k: observed[stat].get(k, 0.0) for k in keys}
    return SimulationSummary(n_sims, seed, observed, simulated, cells)
