import math

import numpy as np
import pytest
from helpers import make_panel
from oracles import naive_loglik, newton_poisson

from sepcount.design import ModelSpec, SeparabilityConfig, build_design
from sepcount.estimation import (
    EstimationError,
    PenaltyConfig,
    RankDeficiencyError,
    coefficient_curve,
    extract_random_effects,
    fit,
    fit_report,
    penalized_gradient,
    penalized_loglik,
    predict_intensities,
    predict_intensity,
    write_coefficients,
)
from sepcount.statistics import Term
from sepcount.synthetic import dyad_covariate_table, random_effects_scenario, recovery_scenario

POOLED_CONST = ModelSpec(intercept_time_varying=False, separability=SeparabilityConfig(False))


def _panel_with_responses(values):
    """Two actors; rows (period, dyad) receive ``values`` in design order."""
    T = len(values) // 2 + 1
    mats = [np.zeros((2, 2), int)]
    for k in range(T - 1):
        mats.append(np.array([[0, values[2 * k]], [values[2 * k + 1], 0]]))
    return make_panel(mats)


def test_penalized_loglik_zero_case():
    panel = make_panel([np.zeros((3, 3), int)] * 3)
    d = build_design(panel, None, POOLED_CONST)
    assert penalized_loglik(d, np.zeros(1)) == -d.n_rows


def test_penalized_loglik_matches_naive_sum_and_scales_with_gamma():
    data = recovery_scenario(3, n=6, T=8)
    spec = ModelSpec(terms=(Term("x"),), spline={"q": 5, "degree": 3, "penalty_order": 2})
    d = build_design(data.panel, data.covariates, spec)
    rng = np.random.default_rng(0)
    beta = rng.normal(0, 0.3, d.layout.n_columns)
    ll = penalized_loglik(d, beta)
    ref = naive_loglik(d.X.tolist(), d.y.tolist(), d.weights.tolist(), beta.tolist())
    assert abs(ll - ref) <= 1e-10 * abs(ref)
    g = {grp.name: 2.5 for grp in d.layout.penalty_groups()}
    g2 = {k: 2 * v for k, v in g.items()}
    p1 = ll - penalized_loglik(d, beta, g)
    p2 = ll - penalized_loglik(d, beta, g2)
    assert p2 == pytest.approx(2 * p1, rel=1e-12)


def test_penalized_loglik_rejects_nonfinite_predictor():
    d = build_design(make_panel([np.zeros((2, 2), int)] * 2), None, POOLED_CONST)
    with pytest.raises(FloatingPointError, match="row 0"):
        penalized_loglik(d, np.array([np.inf]))
    with pytest.raises(ValueError):
        penalized_loglik(d, np.zeros(3))


def test_gradient_matches_central_differences():
    data = random_effects_scenario(2, n=6, T=5)
    spec = ModelSpec(terms=(Term("reciprocity", time_varying=False),),
                     spline={"q": 4, "degree": 3, "penalty_order": 2},
                     random_sender=True, random_receiver=True)
    d = build_design(data.panel, None, spec)
    gam = {g.name: 0.7 for g in d.layout.penalty_groups()}
    rng = np.random.default_rng(1)
    h = 1e-6
    for _ in range(100):
        beta = rng.normal(0, 0.5, d.layout.n_columns)
        g = penalized_gradient(d, beta, gam)
        fd = np.empty_like(beta)
        for k in range(len(beta)):
            e = np.zeros_like(beta)
            e[k] = h
            fd[k] = (penalized_loglik(d, beta + e, gam) - penalized_loglik(d, beta - e, gam)) / (2 * h)
        assert np.max(np.abs(fd - g)) <= 1e-4 * max(1.0, np.max(np.abs(g)))


def test_intercept_only_is_log_mean():
    d = build_design(_panel_with_responses([0, 1, 2, 3]), None, POOLED_CONST)
    assert sorted(d.y.tolist()) == [0, 1, 2, 3]
    f = fit(d)
    assert abs(f.coefficients[0] - math.log(1.5)) <= 1e-8
    assert f.edf == pytest.approx(1.0, abs=1e-12)


def test_two_group_closed_form():
    rng = np.random.default_rng(7)
    n, T = 5, 6
    x = (rng.random((T, n, n)) < 0.5).astype(float)
    mats = [np.zeros((n, n), int)]
    for t in range(1, T):
        y = rng.poisson(np.where(x[t - 1] > 0, 2.0, 0.5))
        np.fill_diagonal(y, 0)
        mats.append(y)
    panel = make_panel(mats)
    table = dyad_covariate_table("g", x, panel.actors)
    d = build_design(panel, table, POOLED_CONST.replace(terms=(Term("g", time_varying=False),)))
    xcol = d.X[:, 1]
    m0, m1 = d.y[xcol == 0].mean(), d.y[xcol == 1].mean()
    f = fit(d)
    assert abs(f.coefficients[0] - math.log(m0)) <= 1e-8
    assert abs(f.coefficients[1] - (math.log(m1) - math.log(m0))) <= 1e-8


def test_unpenalized_matches_independent_newton():
    data = recovery_scenario(5, n=8, T=10)
    spec = ModelSpec(terms=(Term("x", time_varying=False), Term("reciprocity", time_varying=False)),
                     intercept_time_varying=False)
    d = build_design(data.panel, data.covariates, spec)
    f = fit(d)
    ref = newton_poisson(d.X, d.y)
    assert np.max(np.abs(f.coefficients - ref)) <= 1e-8
    assert f.edf == pytest.approx(d.layout.n_columns, abs=1e-8)


def test_separable_fit_equals_two_regime_fits():
    data = recovery_scenario(6, n=8, T=10)
    spec = ModelSpec(terms=(Term("x", time_varying=False),), intercept_time_varying=False)
    d = build_design(data.panel, data.covariates, spec)
    f = fit(d)
    for regime, name in ((0, "onset"), (1, "repetition")):
        rows = d.regime == regime
        cols = np.concatenate([np.arange(b.start, b.stop) for b in d.layout.blocks if b.regime == name])
        ref = newton_poisson(d.X[rows][:, cols], d.y[rows])
        assert np.max(np.abs(f.coefficients[cols] - ref)) <= 1e-8


def test_fit_result_invariants():
    data = recovery_scenario(0, n=10, T=20)
    spec = ModelSpec(terms=(Term("x"),), spline={"q": 8, "degree": 3, "penalty_order": 2},
                     random_sender=True, random_receiver=True)
    d = build_design(data.panel, data.covariates, spec)
    f = fit(d)
    assert f.converged
    assert f.gradient_max < f.gradient_tolerance
    grad = penalized_gradient(d, f.coefficients, f.gammas)
    assert np.max(np.abs(grad)) < f.gradient_tolerance
    V = f.posterior_covariance
    assert np.allclose(V, V.T, atol=0)
    assert np.linalg.eigvalsh(V).min() > 0
    for b in d.layout.blocks:
        assert 0 < f.edf_terms[b.key] <= b.width + 1e-9
    assert f.edf <= d.layout.n_columns
    # mean intensity tracks the mean count when intercepts are present
    assert abs(f.fitted.mean() / d.y.mean() - 1) < 0.02


def test_inner_loop_monotone_with_fixed_gammas():
    data = recovery_scenario(1, n=10, T=15)
    d = build_design(data.panel, data.covariates,
                     ModelSpec(terms=(Term("x"),), spline={"q": 6, "degree": 3, "penalty_order": 2}))
    gam = {g.name: 3.0 for g in d.layout.penalty_groups()}
    f = fit(d, PenaltyConfig(gammas=gam, selection="fixed"))
    plls = [t["penalized_loglik"] for t in f.trace]
    assert all(b >= a - 1e-9 * abs(a) for a, b in zip(plls, plls[1:]))
    assert f.gammas == gam


def _stiff_fit(seed=2):
    data = recovery_scenario(seed, n=10, T=20)
    spec = ModelSpec(terms=(Term("x", regime="onset"),), spline={"q": 10, "degree": 3, "penalty_order": 2})
    d = build_design(data.panel, data.covariates, spec)
    gam = {g.name: 1.0 for g in d.layout.penalty_groups()}
    gam["onset:x"] = 1e12
    return d, fit(d, PenaltyConfig(gammas=gam, selection="fixed"))


def test_large_gamma_gives_polynomial_curve():
    d, f = _stiff_fit()
    grid = np.linspace(d.layout.first_period, d.layout.last_period, 200)
    curve = coefficient_curve(f, "onset:x", grid)[:, 1]
    P = np.vstack([np.ones_like(grid), grid]).T
    resid = curve - P @ np.linalg.lstsq(P, curve, rcond=None)[0]
    assert np.linalg.norm(resid) < 1e-4 * max(np.linalg.norm(curve), 1e-12)


def test_large_gamma_coefficients_in_penalty_null_space():
    _, f = _stiff_fit()
    alpha = f.block_coefficients("onset:x")
    assert np.linalg.norm(np.diff(alpha, n=2)) < 1e-4 * np.linalg.norm(alpha)


def test_large_gamma_edf_tends_to_penalty_order():
    _, f = _stiff_fit()
    assert f.edf_terms["onset:x"] == pytest.approx(2.0, abs=1e-3)


def test_coefficient_curve_examples():
    data = recovery_scenario(0, n=8, T=12)
    spec = ModelSpec(terms=(Term("x", time_varying=False),), spline={"q": 6, "degree": 3, "penalty_order": 2})
    d = build_design(data.panel, data.covariates, spec)
    f = fit(d)
    grid = np.linspace(2, 12, 21)
    flat = coefficient_curve(f, "onset:x", grid)
    assert np.all(flat[:, 1] == f.block_coefficients("onset:x")[0])
    tv = coefficient_curve(f, "onset:intercept", grid)
    assert np.all(tv[:, 3] - tv[:, 2] >= 0)
    with pytest.raises(ValueError):
        coefficient_curve(f, "onset:intercept", [1.0])


def test_predict_intensity_examples():
    data = random_effects_scenario(0, n=8, T=6)
    spec = ModelSpec(intercept_time_varying=False, random_sender=True, random_receiver=True)
    d = build_design(data.panel, None, spec)
    f = fit(d)
    row = d.row(0)
    zero = type(row)(row.period, row.sender, row.receiver, 0, row.regime, np.zeros_like(row.columns),
                     row.sender_index, row.receiver_index)
    L = f.layout
    base = math.exp(f.coefficients[L.sender_offset + row.sender_index] +
                    f.coefficients[L.receiver_offset + row.receiver_index])
    assert predict_intensity(f, zero) == pytest.approx(base, rel=1e-14)
    f.coefficients[L.sender_offset + row.sender_index] += 0.3
    assert predict_intensity(f, zero) == pytest.approx(base * math.exp(0.3), rel=1e-14)
    bad = type(row)(1, "a", "b", 0, "onset", row.columns, 99, 0)
    with pytest.raises(IndexError):
        predict_intensity(f, bad)
    lam = predict_intensities(f, d)
    assert (lam > 0).all()


def test_intercept_only_row_prediction():
    d = build_design(_panel_with_responses([0, 1, 2, 3]), None, POOLED_CONST)
    f = fit(d)
    r = d.row(0)
    assert predict_intensity(f, r) == pytest.approx(1.5, rel=1e-8)


def test_random_effects_shrink_to_zero_under_huge_gamma():
    data = random_effects_scenario(1, n=10, T=6)
    spec = ModelSpec(intercept_time_varying=False, random_sender=True, random_receiver=True)
    d = build_design(data.panel, None, spec)
    f = fit(d, PenaltyConfig(gammas={"sender": 1e12, "receiver": 1.0}, selection="fixed"))
    re = extract_random_effects(f)
    assert max(abs(v[0]) for v in re.sender.values()) < 1e-4
    assert re.tau2_sender == pytest.approx(1e-12)


def test_actor_never_at_risk_gets_prior():
    rng = np.random.default_rng(3)
    n, T = 6, 5
    actors = [f"a{k}" for k in range(n)]
    presence = {a: range(1, T + 1) for a in actors}
    presence["a5"] = []
    mats = []
    for _ in range(T):
        y = rng.poisson(0.5, (n, n))
        np.fill_diagonal(y, 0)
        y[5, :] = y[:, 5] = 0
        mats.append(y)
    panel = make_panel(mats, actors, presence)
    spec = ModelSpec(intercept_time_varying=False, random_sender=True, random_receiver=True)
    f = fit(build_design(panel, None, spec))
    re = extract_random_effects(f)
    est, sd = re.sender["a5"]
    assert abs(est) < 1e-12
    assert sd == pytest.approx(1 / math.sqrt(f.gammas["sender"]), rel=1e-9)


def test_standard_errors_shrink_with_more_periods():
    short = recovery_scenario(4, n=10, T=15)
    long = recovery_scenario(4, n=10, T=30)
    spec = ModelSpec(terms=(Term("x", time_varying=False),), intercept_time_varying=False)
    se = []
    for data in (short, long):
        f = fit(build_design(data.panel, data.covariates, spec))
        se.append(np.median(f.standard_errors))
    assert se[1] < se[0]


def test_rank_deficiency_names_columns():
    data = recovery_scenario(0, n=6, T=6)
    spec = ModelSpec(terms=(Term("x", time_varying=False), Term("x", name="x_copy", time_varying=False)),
                     intercept_time_varying=False)
    d = build_design(data.panel, data.covariates, spec)
    with pytest.raises(RankDeficiencyError) as err:
        fit(d)
    msg = str(err.value)
    assert "onset:x" in msg and "onset:x_copy" in msg


def test_iteration_cap_attaches_last_iterate():
    data = recovery_scenario(0, n=8, T=10)
    d = build_design(data.panel, data.covariates, ModelSpec(terms=(Term("x"),),
                                                            spline={"q": 6, "degree": 3, "penalty_order": 2}))
    with pytest.raises(EstimationError) as err:
        fit(d, PenaltyConfig(max_outer=2))
    assert err.value.coefficients is not None and len(err.value.trace) == 2


def test_empty_design_rejected():
    d = build_design(make_panel([np.zeros((2, 2), int)] * 2), None, POOLED_CONST)
    with pytest.raises(EstimationError):
        fit(d.subset(np.array([], dtype=int)))


def test_reports_and_coefficient_file(tmp_path):
    data = random_effects_scenario(0, n=6, T=5)
    spec = ModelSpec(intercept_time_varying=False, random_sender=True)
    f = fit(build_design(data.panel, None, spec))
    out = tmp_path / "coef.csv"
    write_coefficients(f, out)
    lines = out.read_text().splitlines()
    assert lines[0] == "term,basis_index,estimate,se"
    assert len(lines) == 1 + f.layout.n_columns
    text = fit_report(f)
    assert "tau2_sender" in text and "converged: True" in text


def test_threads_do_not_change_results():
    data = random_effects_scenario(3, n=20, T=10)
    spec = ModelSpec(terms=(Term("reciprocity", time_varying=False),),
                     spline={"q": 5, "degree": 3, "penalty_order": 2}, random_sender=True, random_receiver=True)
    d = build_design(data.panel, None, spec)
    a = fit(d, PenaltyConfig(threads=1, block_rows=500))
    b = fit(d, PenaltyConfig(threads=4, block_rows=500))
    assert np.array_equal(a.coefficients, b.coefficients)
    assert a.loglik == b.loglik and a.edf == b.edf


def test_optional_gamma_tolerance_only_tightens():
    data = recovery_scenario(1, n=10, T=15)
    d = build_design(data.panel, data.covariates,
                     ModelSpec(terms=(Term("x"),), spline={"q": 6, "degree": 3, "penalty_order": 2}))
    loose = fit(d)
    strict = fit(d, PenaltyConfig(tol_gamma=1e-6))
    assert strict.n_iter >= loose.n_iter
    steps = [abs(np.log(strict.trace[-1]["gammas"][k]) - np.log(strict.trace[-2]["gammas"][k]))
             for k in strict.gammas]
    assert max(steps) < 1e-6
