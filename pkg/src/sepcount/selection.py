"""Conditional AIC comparison of nested separable specifications."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .design import ModelSpec, SeparabilityConfig, build_design
from .estimation import EstimationError, FitResult, PenaltyConfig, fit
from .network import EventPanel
from .statistics import CovariateTable


def conditional_aic(fit: FitResult) -> float:
    """``-2 loglik + 2 edf`` with the full Poisson log-likelihood and trace-based edf."""
    return -2.0 * fit.loglik + 2.0 * fit.edf


def aicc_from(caic: float, edf: float, n_rows: int) -> float:
    """Finite-sample correction; NaN unless ``n_rows > edf + 1``."""
    if n_rows <= edf + 1:
        return math.nan
    return caic + 2.0 * edf * (edf + 1.0) / (n_rows - edf - 1.0)


def corrected_aic(fit: FitResult) -> float:
    return aicc_from(conditional_aic(fit), fit.edf, fit.n_rows)


@dataclass
class ComparisonEntry:
    label: str
    separable: bool
    time_varying: bool
    random_effects: bool
    loglik: float = math.nan
    edf: float = math.nan
    caic: float = math.nan
    aicc: float = math.nan
    n_rows: int = 0
    error: str | None = None
    fit: FitResult | None = field(default=None, repr=False)


@dataclass
class ModelComparison:
    entries: list[ComparisonEntry]

    def ranked(self) -> list[ComparisonEntry]:
        ok = [e for e in self.entries if e.error is None]
        return sorted(ok, key=lambda e: e.caic)

    def best(self, criterion: str = "caic") -> ComparisonEntry:
        ok = [e for e in self.entries if e.error is None]
        return min(ok, key=lambda e: getattr(e, criterion))

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model", "separability", "time_varying", "random_effects",
                        "loglik", "edf", "cAIC", "AICc", "status"])
            for e in self.entries:
                w.writerow([e.label, int(e.separable), int(e.time_varying), int(e.random_effects),
                            _fmt(e.loglik), _fmt(e.edf), _fmt(e.caic), _fmt(e.aicc),
                            "ok" if e.error is None else f"failed: {e.error}"])


def _fmt(x):
    return "NA" if x is None or math.isnan(x) else format(x, ".12g")


def suite_specs(base: ModelSpec) -> list[tuple[str, ModelSpec, tuple[bool, bool, bool]]]:
    """The four nested configurations, from pooled linear to the full model."""
    lag = base.separability.lag
    no_re = dict(random_sender=False, random_receiver=False, center_random_effects=False)
    pooled = base.replace(separability=SeparabilityConfig(False, lag), time_constant=True, **no_re)
    sep = SeparabilityConfig(True, lag)
    linear = base.replace(separability=sep, time_constant=True, **no_re)
    tv = base.replace(separability=sep, time_constant=False, **no_re)
    if base.random_effects:
        full = base.replace(separability=sep, time_constant=False)
    else:
        full = base.replace(separability=sep, time_constant=False, random_sender=True, random_receiver=True)
    return [
        ("Model 1", pooled, (False, False, False)),
        ("Model 2", linear, (True, False, False)),
        ("Model 3", tv, (True, True, False)),
        ("Model 4", full, (True, True, True)),
    ]


def compare_suite(
    panel: EventPanel,
    covariates: CovariateTable | None,
    base_spec: ModelSpec,
    config: PenaltyConfig | None = None,
    threads: int = 1,
    keep_fits: bool = False,
) -> ModelComparison:
    """Fit the four nested models and tabulate loglik, edf, cAIC and AICc.

    A member that fails is reported with its error; the others are kept.
    Entries are always returned in suite order.
    """
    specs = suite_specs(base_spec)

    def run(item):
        label, spec, (s, tv, re) = item
        entry = ComparisonEntry(label, s, tv, re)
        try:
            design = build_design(panel, covariates, spec)
            f = fit(design, config)
        except (EstimationError, ValueError, FloatingPointError) as exc:
            entry.error = str(exc)
            return entry
        entry.loglik = f.loglik
        entry.edf = f.edf
        entry.caic = conditional_aic(f)
        entry.aicc = aicc_from(entry.caic, f.edf, f.n_rows)
        entry.n_rows = f.n_rows
        if keep_fits:
            entry.fit = f
        return entry

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            entries = list(ex.map(run, specs))
    else:
        entries = [run(s) for s in specs]
    return ModelComparison(entries)
