import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.special import gammaln
from scipy.stats import chi2

from sepcount.design import ModelSpec, SeparabilityConfig, build_design
from sepcount.estimation import PenaltyConfig, fit
from sepcount.selection import (
    ModelComparison,
    aicc_from,
    compare_suite,
    conditional_aic,
    corrected_aic,
    suite_specs,
)
from sepcount.statistics import CovariateTable, Term
from sepcount.synthetic import dyad_covariate_table, separability_scenario

CONST_X = ModelSpec(terms=(Term("x", time_varying=False),), intercept_time_varying=False)


def _fit(seed=0, spec=CONST_X):
    data = separability_scenario(seed, True, n=10, T=8)
    return fit(build_design(data.panel, data.covariates, spec))


def test_unpenalized_caic_is_classical_aic():
    data = separability_scenario(1, True, n=10, T=8)
    d = build_design(data.panel, data.covariates, CONST_X)
    f = fit(d)
    assert f.edf == pytest.approx(d.layout.n_columns, abs=1e-9)
    eta = d.X @ f.coefficients
    ll = float(np.sum(d.y * eta - np.exp(eta) - gammaln(d.y + 1)))
    assert conditional_aic(f) == pytest.approx(-2 * ll + 2 * d.layout.n_columns, rel=1e-10)


def test_caic_difference_is_twice_edf_difference():
    f = _fit()
    g = replace(f, edf=f.edf + 1.75)
    assert conditional_aic(g) - conditional_aic(f) == pytest.approx(2 * 1.75, abs=1e-9)


def test_aicc_exceeds_caic_and_is_undefined_for_tiny_samples():
    f = _fit()
    assert corrected_aic(f) > conditional_aic(f)
    for edf, R in [(3.0, 10), (10.5, 1000), (1.0, 3)]:
        assert aicc_from(0.0, edf, R) > 0.0
    assert math.isnan(aicc_from(5.0, 4.0, 5))
    assert math.isnan(aicc_from(5.0, 4.5, 5))


def test_noise_covariate_never_lowers_loglik_and_usually_raises_caic():
    raised = 0
    for s in range(100):
        data = separability_scenario(s, True, n=12, T=10)
        z = np.random.default_rng(10_000 + s).standard_normal((10, 12, 12))
        table = CovariateTable(dyad={**data.covariates.dyad,
                                     **dyad_covariate_table("z", z, data.panel.actors).dyad})
        f0 = fit(build_design(data.panel, table, CONST_X))
        big = CONST_X.replace(terms=CONST_X.terms + (Term("z", time_varying=False),))
        f1 = fit(build_design(data.panel, table, big))
        assert f1.loglik >= f0.loglik - 1e-9
        raised += conditional_aic(f1) > conditional_aic(f0)
    assert raised >= 90, f"cAIC rose in {raised}/100 replicates"


def test_noise_rate_matches_chi_square_reference():
    # two unpenalized noise columns: P(cAIC up) = P(chi2_2 < 4)
    p = chi2.cdf(4.0, 2)
    assert 0.86 < p < 0.87


def test_suite_order_and_flags():
    base = ModelSpec(terms=(Term("x"),), random_sender=True)
    specs = suite_specs(base)
    assert [s[0] for s in specs] == ["Model 1", "Model 2", "Model 3", "Model 4"]
    assert [s[2] for s in specs] == [(False, False, False), (True, False, False),
                                     (True, True, False), (True, True, True)]
    assert not specs[0][1].separability.enabled and specs[0][1].time_constant
    assert specs[3][1].random_sender and not specs[2][1].random_effects
    assert suite_specs(ModelSpec())[3][1].random_receiver


def test_compare_suite_returns_four_rows(tmp_path):
    data = separability_scenario(2, True, n=10, T=10)
    spec = ModelSpec(terms=(Term("x"),), spline={"q": 5, "degree": 3, "penalty_order": 2}, random_sender=True)
    cmp = compare_suite(data.panel, data.covariates, spec)
    assert [e.label for e in cmp.entries] == ["Model 1", "Model 2", "Model 3", "Model 4"]
    for e in cmp.entries:
        assert e.error is None
        assert e.caic == pytest.approx(-2 * e.loglik + 2 * e.edf)
        assert e.aicc > e.caic
    assert [e.caic for e in cmp.ranked()] == sorted(e.caic for e in cmp.entries)
    assert cmp.best().label in {"Model 2", "Model 3", "Model 4"}
    out = tmp_path / "cmp.csv"
    cmp.write_csv(out)
    lines = out.read_text().splitlines()
    assert lines[0] == "model,separability,time_varying,random_effects,loglik,edf,cAIC,AICc,status"
    assert len(lines) == 5
    threaded = compare_suite(data.panel, data.covariates, spec, threads=4)
    assert [e.caic for e in threaded.entries] == [e.caic for e in cmp.entries]


def test_failed_member_is_reported():
    data = separability_scenario(3, True, n=8, T=6)
    cmp = compare_suite(data.panel, data.covariates, ModelSpec(terms=(Term("x"),)),
                        config=PenaltyConfig(max_outer=1))
    failed = [e for e in cmp.entries if e.error is not None]
    assert failed and len(cmp.entries) == 4
    assert all(math.isnan(e.caic) for e in failed)


def test_separable_truth_prefers_separable_models():
    wins = 0
    for s in range(10):
        data = separability_scenario(s, True)
        pooled = fit(build_design(data.panel, data.covariates,
                                  CONST_X.replace(separability=SeparabilityConfig(False))))
        sep = fit(build_design(data.panel, data.covariates, CONST_X))
        wins += conditional_aic(sep) < conditional_aic(pooled)
    assert wins >= 9


def test_comparison_best_ignores_failures():
    cmp = ModelComparison([])
    with pytest.raises(ValueError):
        cmp.best()
