"""Acceptance criteria at their pinned tolerances.

Each test appends one ``CRITERION n: PASS|FAIL ...`` line to the shared list
printed at the end of the pytest run. ``python3 tests/test_acceptance.py``
runs them without pytest.
"""

import math
import shutil
import sys
import tempfile
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))

import helpers  # noqa: E402
from helpers import make_panel, random_panel  # noqa: E402
from oracles import brute_dyad_statistic, explicit_difference, naive_loglik  # noqa: E402

import sepcount  # noqa: E402
from sepcount.cli import main as cli_main  # noqa: E402
from sepcount.design import REPETITION, ModelSpec, SeparabilityConfig, build_design  # noqa: E402
from sepcount.estimation import (  # noqa: E402
    coefficient_curve,
    extract_random_effects,
    fit,
    penalized_gradient,
    penalized_loglik,
)
from sepcount.gof import gof_report  # noqa: E402
from sepcount.network import EventFormat, load_events  # noqa: E402
from sepcount.selection import compare_suite  # noqa: E402
from sepcount.splines import SplineBasisSpec, basis_matrix, penalty_matrix, penalty_value  # noqa: E402
from sepcount.statistics import STRUCTURAL_STATISTICS, TRIADIC_STATISTICS, Term, structural_matrices  # noqa: E402
from sepcount.synthetic import (  # noqa: E402
    dyad_covariate_table,
    lag_scenario,
    random_effects_scenario,
    recovery_scenario,
    separability_scenario,
)

TOY = Path(sepcount.__file__).parent / "data" / "toy"


class _Result:
    def __init__(self):
        self.checks: list[tuple[bool, str]] = []

    def check(self, ok, detail):
        self.checks.append((bool(ok), detail))


@contextmanager
def criterion(n):
    res = _Result()
    err = None
    try:
        yield res
    except Exception as exc:  # recorded as a failure, then re-raised
        err = exc
        res.check(False, f"error: {type(exc).__name__}: {exc}")
    ok = all(c for c, _ in res.checks) and bool(res.checks)
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} " + "; ".join(d for _, d in res.checks)
    helpers.ACCEPTANCE_LINES.append(line)
    print(line)
    if err is not None:
        raise err
    assert ok, line


def test_criterion_1_statistic_oracle():
    with criterion(1) as c:
        rng = np.random.default_rng(2024)
        worst = 0.0
        compared = 0
        elapsed = 0.0
        for _ in range(1000):
            panel = random_panel(rng, int(rng.integers(3, 9)), int(rng.integers(2, 6)))
            for t in range(2, panel.T + 1):
                mask = panel.risk_mask(t)
                n_t = int(mask.sum())
                names = [s for s in STRUCTURAL_STATISTICS
                         if n_t >= (3 if s in TRIADIC_STATISTICS else 2)]
                if not names:
                    continue
                t0 = time.perf_counter()
                mats = structural_matrices((panel.dense(t - 1) > 0).astype(np.int64), n_t, names)
                elapsed += time.perf_counter() - t0
                prev = panel.dense(t - 1).tolist()
                idx = np.flatnonzero(mask)
                for i in idx:
                    for j in idx:
                        if i != j:
                            for s in names:
                                worst = max(worst, abs(mats[s][i, j] - brute_dyad_statistic(s, prev, mask, i, j)))
                                compared += 1
        c.check(worst <= 1e-12, f"max |diff| {worst:.1e} over {compared} values (tol 1e-12)")
        c.check(elapsed < 10, f"package runtime {elapsed:.2f}s (< 10s)")


def test_criterion_2_splines():
    with criterion(2) as c:
        worst = 0.0
        rng = np.random.default_rng(0)
        for degree in (0, 1, 2, 3):
            spec = SplineBasisSpec(1.0, 40.0, q=20, degree=degree, penalty_order=1)
            B = basis_matrix(spec, rng.uniform(1.0, 40.0, 10_000))
            worst = max(worst, float(np.max(np.abs(B.sum(axis=1) - 1))))
        c.check(worst <= 1e-12, f"partition of unity max {worst:.1e} at 1e4 points (tol 1e-12)")
        ratio = 0.0
        for m in (1, 2, 3):
            spec = SplineBasisSpec(0.0, 1.0, q=20, degree=3, penalty_order=m)
            r = np.arange(20, dtype=float)
            for _ in range(100):
                alpha = np.vstack([r ** k for k in range(m)]).T @ rng.normal(size=m)
                ratio = max(ratio, penalty_value(spec, alpha) / (alpha @ alpha))
        c.check(ratio <= 1e-18, f"null-space residual {ratio:.1e}*|a|^2 (tol 1e-18)")
        D = penalty_matrix(SplineBasisSpec(0.0, 1.0, q=3, degree=1, penalty_order=1))
        hand = np.array([[1, -1, 0], [-1, 2, -1], [0, -1, 1]], dtype=float)
        c.check(np.array_equal(D, hand) and np.array_equal(explicit_difference(3, 1).T @ explicit_difference(3, 1), hand),
                "m=1,q=3 penalty equals hand matrix")


def test_criterion_3_likelihood_and_gradient():
    with criterion(3) as c:
        t0 = time.perf_counter()
        data = random_effects_scenario(5, n=8, T=6)
        spec = ModelSpec(terms=(Term("reciprocity", time_varying=False), Term("out_degree_sender")),
                         spline={"q": 5, "degree": 3, "penalty_order": 2},
                         random_sender=True, random_receiver=True)
        d = build_design(data.panel, None, spec)
        gam = {g.name: 1.3 for g in d.layout.penalty_groups()}
        rng = np.random.default_rng(3)
        X = d.full_matrix().tolist()
        worst_ll = worst_g = 0.0
        for _ in range(100):
            beta = rng.normal(0, 0.3, d.layout.n_columns)
            ll = penalized_loglik(d, beta)
            ref = naive_loglik(X, d.y.tolist(), d.weights.tolist(), beta.tolist())
            worst_ll = max(worst_ll, abs(ll - ref) / abs(ref))
            g = penalized_gradient(d, beta, gam)
            fd = np.empty_like(beta)
            h = 1e-6
            for k in range(len(beta)):
                e = np.zeros_like(beta)
                e[k] = h
                fd[k] = (penalized_loglik(d, beta + e, gam) - penalized_loglik(d, beta - e, gam)) / (2 * h)
            worst_g = max(worst_g, float(np.max(np.abs(fd - g)) / max(1.0, np.max(np.abs(g)))))
        elapsed = time.perf_counter() - t0
        c.check(worst_ll <= 1e-10, f"loglik rel diff {worst_ll:.1e} (tol 1e-10)")
        c.check(worst_g <= 1e-4, f"gradient rel diff {worst_g:.1e} at 100 points (tol 1e-4)")
        c.check(elapsed < 30, f"runtime {elapsed:.1f}s (< 30s)")


def test_criterion_4_closed_forms():
    with criterion(4) as c:
        pooled = ModelSpec(intercept_time_varying=False, separability=SeparabilityConfig(False))
        panel = make_panel([np.zeros((2, 2), int), np.array([[0, 0], [1, 0]]), np.array([[0, 2], [3, 0]])])
        f = fit(build_design(panel, None, pooled))
        e1 = abs(f.coefficients[0] - math.log(1.5))
        c.check(e1 <= 1e-8, f"intercept-only error {e1:.1e} (tol 1e-8)")
        rng = np.random.default_rng(7)
        n, T = 6, 6
        x = (rng.random((T, n, n)) < 0.5).astype(float)
        mats = [np.zeros((n, n), int)]
        for t in range(1, T):
            y = rng.poisson(np.where(x[t - 1] > 0, 2.0, 0.5))
            np.fill_diagonal(y, 0)
            mats.append(y)
        panel = make_panel(mats)
        d = build_design(panel, dyad_covariate_table("g", x, panel.actors),
                         pooled.replace(terms=(Term("g", time_varying=False),)))
        m0, m1 = d.y[d.X[:, 1] == 0].mean(), d.y[d.X[:, 1] == 1].mean()
        f = fit(d)
        e2 = max(abs(f.coefficients[0] - math.log(m0)), abs(f.coefficients[1] - math.log(m1 / m0)))
        c.check(e2 <= 1e-8, f"two-group error {e2:.1e} (tol 1e-8)")


def test_criterion_5_parameter_recovery():
    with criterion(5) as c:
        t0 = time.perf_counter()
        rmses, covs = [], []
        spec = ModelSpec(terms=(Term("x", regime="onset"),), spline={"q": 10, "degree": 3, "penalty_order": 2})
        for seed in range(20):
            data = recovery_scenario(seed, n=20, T=40)
            f = fit(build_design(data.panel, data.covariates, spec))
            grid = np.linspace(f.layout.first_period, f.layout.last_period, 101)
            cur = coefficient_curve(f, "onset:x", grid)
            truth = data.truth["theta"](grid)
            rmses.append(float(np.sqrt(np.mean((cur[:, 1] - truth) ** 2))))
            covs.append(float(np.mean((cur[:, 2] <= truth) & (truth <= cur[:, 3]))))
        elapsed = time.perf_counter() - t0
        c.check(np.median(rmses) < 0.1, f"median RMSE {np.median(rmses):.3f} (< 0.1)")
        c.check(np.median(covs) >= 0.8, f"median band coverage {np.median(covs):.2f} (>= 0.80)")
        c.check(elapsed < 300, f"runtime {elapsed:.0f}s (< 300s)")


def test_criterion_6_random_effect_recovery():
    with criterion(6) as c:
        cors, within = [], 0
        spec = ModelSpec(intercept_time_varying=False, random_sender=True, random_receiver=True)
        for seed in range(10):
            data = random_effects_scenario(seed, n=50, T=40, tau2=0.25)
            f = fit(build_design(data.panel, None, spec))
            re = extract_random_effects(f)
            est = np.array([re.sender[a][0] for a in data.panel.actors])
            cors.append(float(np.corrcoef(data.truth["sender"], est)[0, 1]))
            within += 0.125 <= re.tau2_sender <= 0.5
        c.check(np.median(cors) > 0.7, f"median sender correlation {np.median(cors):.3f} (> 0.7)")
        c.check(within >= 8, f"tau2_S within factor 2 in {within}/10 seeds (>= 8)")


def test_criterion_7_separability_detection():
    with criterion(7) as c:
        linear = ModelSpec(terms=(Term("x", time_varying=False),), intercept_time_varying=False)
        sep_wins = 0
        for seed in range(50):
            data = separability_scenario(seed, True)
            pooled = fit(build_design(data.panel, data.covariates,
                                      linear.replace(separability=SeparabilityConfig(False))))
            sep = fit(build_design(data.panel, data.covariates, linear))
            sep_wins += (-2 * sep.loglik + 2 * sep.edf) < (-2 * pooled.loglik + 2 * pooled.edf)
        c.check(sep_wins >= 45, f"separable beats pooled in cAIC {sep_wins}/50 (>= 45)")
        base = ModelSpec(terms=(Term("x"),), spline={"q": 6, "degree": 3, "penalty_order": 2},
                         random_sender=True, random_receiver=True)
        pooled_wins = 0
        for seed in range(50):
            data = separability_scenario(1000 + seed, False)
            cmp = compare_suite(data.panel, data.covariates, base)
            pooled_wins += cmp.best("aicc").label == "Model 1"
        c.check(pooled_wins > 25, f"pooled linear lowest AICc {pooled_wins}/50 (> 25)")


def test_criterion_8_gof_self_consistency():
    with criterion(8) as c:
        data = recovery_scenario(0, n=20, T=40)
        spec = ModelSpec(terms=(Term("x", regime="onset"),), spline={"q": 10, "degree": 3, "penalty_order": 2})
        f = fit(build_design(data.panel, data.covariates, spec))
        rep = gof_report(f, data.panel, data.covariates, n_sims=200, seed=0)
        cells = rep.cells["average_in_count"]
        inside = 0
        for cell in cells:
            lo, hi = rep.envelope("average_in_count", cell)
            inside += lo <= rep.observed["average_in_count"][cell] <= hi
        share = inside / len(cells)
        c.check(share >= 0.95, f"in-count inside envelope in {inside}/{len(cells)} periods (>= 95%)")
        lo, hi = rep.envelope("rootogram", 0, 0.25, 0.75)
        obs = rep.observed["rootogram"][0]
        c.check(lo <= obs <= hi, f"zero frequency {obs:.0f} vs simulated IQR [{lo:.0f}, {hi:.0f}]")


def test_criterion_9_lag_monotonicity():
    with criterion(9) as c:
        panel = load_events(TOY / "events.csv", EventFormat(T=20, period_start=2000,
                                                            presence_path=TOY / "presence.csv"))
        prev, nested = None, True
        for L in range(1, 11):
            spec = ModelSpec(intercept_time_varying=False, separability=SeparabilityConfig(True, L), first_period=11)
            d = build_design(panel, None, spec)
            rep = set(zip(d.period[d.regime == REPETITION], d.sender[d.regime == REPETITION],
                          d.receiver[d.regime == REPETITION]))
            nested &= prev is None or prev <= rep
            prev = rep
        c.check(nested, "toy repetition sets nested for L=1..10")
        data = lag_scenario(0)
        ll = {}
        for L in range(1, 11):
            spec = ModelSpec(intercept_time_varying=False, separability=SeparabilityConfig(True, L), first_period=11)
            ll[L] = fit(build_design(data.panel, None, spec)).loglik
        best = max(ll, key=ll.get)
        worse = max(ll[L] for L in range(5, 11)) < max(ll[1], ll[2])
        c.check(best in (1, 2), f"loglik maximal at L={best}")
        c.check(worse, f"L>=5 below best of L in (1,2) by {max(ll[1], ll[2]) - max(ll[L] for L in range(5, 11)):.1f}")


def _outputs(out):
    return {p.name: p.read_bytes() for p in sorted(out.iterdir())}


def test_criterion_10_determinism():
    with criterion(10) as c:
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)
            toy = tmp / "toy"
            shutil.copytree(TOY, toy)
            cfg = str(toy / "config.yaml")
            runs = {}
            for name, threads in (("a", 1), ("b", 1), ("c", 8)):
                out = tmp / name
                codes = (cli_main(["fit", "--config", cfg, "--out", str(out), "--threads", str(threads)]),
                         cli_main(["gof", "--config", cfg, "--out", str(out), "--threads", str(threads)]))
                c.check(codes == (0, 0), f"run {name} exit codes {codes}")
                runs[name] = _outputs(out)
            c.check(runs["a"] == runs["b"], f"repeat identical over {len(runs['a'])} files")
            c.check(runs["a"] == runs["c"], "threads 1 vs 8 identical")


if __name__ == "__main__":
    failed = 0
    for name, fn in sorted(globals().items(), key=lambda kv: int(kv[0].split("_")[2]) if kv[0].startswith("test_criterion_") else 0):
        if name.startswith("test_criterion_"):
            try:
                fn()
            except Exception:
                failed += 1
    sys.exit(1 if failed else 0)
