"""Penalized Poisson fitting with automatic smoothing-parameter selection.

The inner loop is penalized IRLS (Newton on the log link) with step
halving; between inner steps every penalty group's tuning parameter gets
a single generalized Fellner-Schall update. Dispersion is fixed at 1.

Random-effect blocks are treated as ridge-penalized groups, so their
variance components are ``tau^2 = 1 / gamma``.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg, sparse
from scipy.special import gammaln

from .design import DesignLayout, DesignMatrix, DesignRow, PenaltyGroup
from .splines import basis_matrix

logger = logging.getLogger(__name__)

GAMMA_MIN = 1e-10
GAMMA_MAX = 1e8
LOG_FLOOR = math.log(1e-8)


class EstimationError(RuntimeError):
    """Fit failure; carries the convergence trace (and last iterate if any)."""

    def __init__(self, message, trace=None, coefficients=None):
        super().__init__(message)
        self.trace = trace or []
        self.coefficients = coefficients


class RankDeficiencyError(EstimationError):
    pass


@dataclass
class PenaltyConfig:
    """Tuning parameters and numerical controls for :func:`fit`.

    ``gammas`` maps penalty-group names (block keys such as
    ``"onset:intercept"``, or ``"sender"``/``"receiver"``) to starting
    values; unspecified groups start at 1. With ``selection="fixed"`` the
    values are kept as given. ``tol_grad`` is relative to
    ``max(1, max|X^T W y|)``. Iteration stops on the objective and
    coefficient changes; setting ``tol_gamma`` additionally requires the
    largest per-iteration change in ``log(gamma)`` to fall below it.
    """

    gammas: Mapping[str, float] = field(default_factory=dict)
    selection: str = "automatic"
    tol_outer: float = 1e-7
    tol_coef: float = 1e-6
    tol_gamma: float | None = None
    tol_grad: float = 1e-8
    max_outer: int = 400
    max_halving: int = 40
    threads: int = 1
    block_rows: int = 16384

    def __post_init__(self):
        if self.selection not in ("automatic", "fixed"):
            raise ValueError("selection must be 'automatic' or 'fixed'")
        if any(g < 0 for g in self.gammas.values()):
            raise ValueError("tuning parameters must be >= 0")


class _Operator:
    """Row-blocked products with ``[X | sender one-hot | receiver one-hot]``.

    Block boundaries depend only on ``block_rows`` and reductions run in
    block order, so results do not depend on the thread count.
    """

    def __init__(self, design: DesignMatrix, threads: int = 1, block_rows: int = 16384):
        L = design.layout
        self.design = design
        self.p_fixed = L.n_fixed
        self.p = L.n_columns
        self.n = L.n_actors
        self.rs = L.n_random_sender > 0
        self.rr = L.n_random_receiver > 0
        R = design.n_rows
        self.bounds = [(a, min(a + block_rows, R)) for a in range(0, R, block_rows)] or [(0, 0)]
        self.threads = max(1, int(threads))
        self._Z = []
        for a, b in self.bounds:
            parts = [sparse.csr_array(design.X[a:b])]
            rows = np.arange(b - a)
            if self.rs:
                parts.append(sparse.csr_array((np.ones(b - a), (rows, design.sender[a:b])), shape=(b - a, self.n)))
            if self.rr:
                parts.append(sparse.csr_array((np.ones(b - a), (rows, design.receiver[a:b])), shape=(b - a, self.n)))
            self._Z.append(sparse.hstack(parts, format="csr") if len(parts) > 1 else parts[0])

    def _map(self, fn):
        if self.threads == 1 or len(self.bounds) == 1:
            return [fn(k) for k in range(len(self.bounds))]
        with ThreadPoolExecutor(self.threads) as ex:
            return list(ex.map(fn, range(len(self.bounds))))

    def eta(self, beta: np.ndarray) -> np.ndarray:
        d = self.design
        out = d.X @ beta[: self.p_fixed]
        off = self.p_fixed
        if self.rs:
            out = out + beta[off: off + self.n][d.sender]
            off += self.n
        if self.rr:
            out = out + beta[off: off + self.n][d.receiver]
        return out

    def xt(self, v: np.ndarray) -> np.ndarray:
        parts = self._map(lambda k: self._Z[k].T @ v[self.bounds[k][0]: self.bounds[k][1]])
        out = np.zeros(self.p)
        for part in parts:
            out += part
        return out

    def cross(self, c: np.ndarray) -> np.ndarray:
        """``Z^T diag(c) Z`` as a dense symmetric matrix."""
        def block(k):
            a, b = self.bounds[k]
            Z = self._Z[k]
            return (Z.T @ (Z.multiply(c[a:b, None]))).toarray()
        parts = self._map(block)
        out = np.zeros((self.p, self.p))
        for part in parts:
            out += part
        return (out + out.T) / 2


def _penalty_matrix(layout: DesignLayout, gammas: Mapping[str, float]) -> np.ndarray:
    p = layout.n_columns
    S = np.zeros((p, p))
    for g in layout.penalty_groups():
        S[g.slice, g.slice] += gammas.get(g.name, 0.0) * g.S
    F = layout.fixed_penalty()
    if F is not None:
        S += F
    return S


def _check_eta(eta: np.ndarray) -> None:
    bad = ~np.isfinite(eta)
    if bad.any():
        raise FloatingPointError(f"non-finite linear predictor in row {int(np.flatnonzero(bad)[0])}")
    if eta.max() > 700:
        raise FloatingPointError(f"linear predictor overflows in row {int(np.argmax(eta))}")


def penalized_loglik(
    design: DesignMatrix, coefficients: np.ndarray, gammas: Mapping[str, float] | None = None
) -> float:
    """Weighted Poisson log-likelihood minus half the quadratic penalties.

    The ``log(y!)`` constant is omitted. Missing tuning parameters count
    as zero.
    """
    beta = _check_beta(design, coefficients)
    eta = _Operator(design).eta(beta)
    _check_eta(eta)
    ll = float(np.sum(design.weights * (design.y * eta - np.exp(eta))))
    S = _penalty_matrix(design.layout, gammas or {})
    return ll - 0.5 * float(beta @ S @ beta)


def penalized_gradient(
    design: DesignMatrix, coefficients: np.ndarray, gammas: Mapping[str, float] | None = None
) -> np.ndarray:
    beta = _check_beta(design, coefficients)
    op = _Operator(design)
    eta = op.eta(beta)
    _check_eta(eta)
    r = design.weights * (design.y - np.exp(eta))
    return op.xt(r) - _penalty_matrix(design.layout, gammas or {}) @ beta


def poisson_loglik(y: np.ndarray, mu: np.ndarray, weights: np.ndarray | None = None) -> float:
    """Full Poisson log-likelihood including ``-log(y!)``."""
    w = np.ones_like(mu) if weights is None else weights
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(y > 0, y * np.log(mu), 0.0)
    return float(np.sum(w * (term - mu - gammaln(y + 1.0))))


def _check_beta(design, beta):
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (design.layout.n_columns,):
        raise ValueError(f"expected {design.layout.n_columns} coefficients, got {beta.shape}")
    return beta


def _scaled_min_eig(H: np.ndarray) -> tuple[float, np.ndarray]:
    d = np.sqrt(np.maximum(np.diag(H), 1e-300))
    w, v = linalg.eigh(H / np.outer(d, d))
    return float(w[0]), v[:, w <= max(1e-12, w[0] * 10)]


def _factor(H: np.ndarray, names: Sequence[str]):
    """Cholesky of ``H``, retried with diagonal jitter up to ``1e-6``.

    Rank deficiency is judged on the Jacobi-scaled matrix so that large
    tuning parameters alone do not trigger it.
    """
    scale = max(float(np.mean(np.abs(np.diag(H)))), 1e-300)
    for jitter in (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6):
        try:
            Hj = H + jitter * scale * np.eye(len(H)) if jitter else H
            c = linalg.cho_factor(Hj, lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
        if not np.all(np.isfinite(c[0])):
            continue
        pivots = np.diag(c[0]) ** 2
        suspicious = jitter > 0 or np.any(pivots < 1e-15 * np.maximum(np.diag(H), 1e-300))
        if suspicious:
            w0, _ = _scaled_min_eig(H)
            if w0 <= 1e-14 * len(H):
                break
            logger.debug("penalized Hessian needed jitter %g", jitter)
        return c
    _, null = _scaled_min_eig(H)
    load = np.abs(null).max(axis=1)
    cols = [names[k] for k in np.flatnonzero(load > 0.1)]
    raise RankDeficiencyError(f"penalized system is rank deficient; confounded columns: {cols}")


@dataclass
class FitResult:
    """Estimates and inference quantities at convergence."""

    layout: DesignLayout
    coefficients: np.ndarray
    gammas: dict[str, float]
    variance_components: dict[str, float]
    edf: float
    edf_terms: dict[str, float]
    covariance: np.ndarray
    loglik: float
    penalized_loglik: float
    n_rows: int
    fitted: np.ndarray
    gradient_max: float
    gradient_tolerance: float
    converged: bool
    n_iter: int
    trace: list[dict] = field(default_factory=list)

    @property
    def posterior_covariance(self) -> np.ndarray:
        return self.covariance

    @property
    def standard_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    def block_coefficients(self, key: str) -> np.ndarray:
        return self.coefficients[self.layout.block(key).slice]


def _initial_coefficients(design: DesignMatrix) -> np.ndarray:
    beta = np.zeros(design.layout.n_columns)
    for b in design.layout.blocks:
        if b.term != "intercept":
            continue
        if b.regime == "pooled":
            rows = np.ones(design.n_rows, dtype=bool)
        else:
            rows = design.regime == ("onset", "repetition").index(b.regime)
        w = design.weights[rows]
        m = float(np.sum(w * design.y[rows]) / np.sum(w)) if rows.any() and w.sum() > 0 else 0.0
        beta[b.slice] = max(math.log(m), LOG_FLOOR) if m > 0 else LOG_FLOOR
    return beta


def fit(design: DesignMatrix, config: PenaltyConfig | None = None) -> FitResult:
    """Maximize the penalized Poisson log-likelihood.

    Raises :class:`EstimationError` on divergence or when the iteration cap
    is hit, and :class:`RankDeficiencyError` when the penalized normal
    equations are singular.
    """
    config = config or PenaltyConfig()
    if design.n_rows == 0:
        raise EstimationError("design has no rows")
    layout = design.layout
    names = layout.column_names()
    groups = layout.penalty_groups()
    gam = {g.name: float(config.gammas.get(g.name, 1.0)) for g in groups}
    unknown = set(config.gammas) - set(gam)
    if unknown:
        raise ValueError(f"unknown penalty groups {sorted(unknown)}")
    op = _Operator(design, config.threads, config.block_rows)
    y, w = design.y.astype(float), design.weights
    grad_scale = max(1.0, float(np.max(np.abs(op.xt(w * y)))))
    tol_grad = config.tol_grad * grad_scale

    def objective(beta, S):
        eta = op.eta(beta)
        if not np.all(np.isfinite(eta)) or eta.max() > 700:
            return -np.inf, eta
        return float(np.sum(w * (y * eta - np.exp(eta))) - 0.5 * beta @ S @ beta), eta

    beta = _initial_coefficients(design)
    S = _penalty_matrix(layout, gam)
    pll, eta = objective(beta, S)
    if not np.isfinite(pll):
        raise EstimationError("initial linear predictor is not finite")
    trace: list[dict] = []
    converged = False
    automatic = config.selection == "automatic" and groups
    XtWX = op.cross(w * np.exp(eta))
    it = 0
    for it in range(1, config.max_outer + 1):
        mu = np.exp(eta)
        H = XtWX + S
        grad = op.xt(w * (y - mu)) - S @ beta
        chol = _factor(H, names)
        step = linalg.cho_solve(chol, grad, check_finite=False)
        new_beta, new_pll, new_eta = _line_search(objective, beta, step, S, pll, config.max_halving)
        if new_beta is None:
            if np.max(np.abs(grad)) < tol_grad:
                new_beta, new_pll, new_eta = beta, pll, eta
            else:
                raise EstimationError(
                    f"penalized log-likelihood failed to increase at iteration {it}",
                    trace, beta)
        d_beta = float(np.max(np.abs(new_beta - beta)))
        d_pll = abs(new_pll - pll) / (abs(new_pll) + 1e-12)
        beta, pll, eta = new_beta, new_pll, new_eta
        XtWX = op.cross(w * np.exp(eta))
        d_gam = 0.0
        if automatic:
            chol = _factor(XtWX + S, names)
            blocks = _block_inverses(chol, groups, layout.n_columns)
            new_gam = {g.name: _fellner_schall(g, gam[g.name], beta, blocks[g.name]) for g in groups}
            d_gam = max(abs(math.log(new_gam[k]) - math.log(gam[k])) for k in gam)
            gam = new_gam
            S = _penalty_matrix(layout, gam)
            pll, eta = objective(beta, S)
        trace.append({"iteration": it, "penalized_loglik": pll, "max_coef_change": d_beta,
                      "rel_pll_change": d_pll, "gammas": dict(gam)})
        logger.debug("iter %d pll=%.10g dbeta=%.3g dgam=%.3g", it, pll, d_beta, d_gam)
        if (d_pll < config.tol_outer and d_beta < config.tol_coef
                and (config.tol_gamma is None or d_gam < config.tol_gamma)):
            converged = True
            break
    if not converged:
        raise EstimationError(f"no convergence within {config.max_outer} iterations", trace, beta)

    # polish at the final tuning parameters so the gradient condition holds
    for k in range(50):
        mu = np.exp(eta)
        if k:
            XtWX = op.cross(w * mu)
        H = XtWX + S
        grad = op.xt(w * (y - mu)) - S @ beta
        chol = _factor(H, names)
        if np.max(np.abs(grad)) < tol_grad:
            break
        step = linalg.cho_solve(chol, grad, check_finite=False)
        nb, npll, neta = _line_search(objective, beta, step, S, pll, config.max_halving)
        if nb is None:
            break
        beta, pll, eta = nb, npll, neta
    grad_max = float(np.max(np.abs(grad)))
    V = linalg.cho_solve(chol, np.eye(layout.n_columns), check_finite=False)
    V = (V + V.T) / 2
    infl = np.einsum("ij,ji->i", V, XtWX)
    edf_terms = {b.key: float(infl[b.slice].sum()) for b in layout.blocks}
    if layout.n_random_sender:
        edf_terms["sender"] = float(infl[layout.sender_offset: layout.sender_offset + layout.n_actors].sum())
    if layout.n_random_receiver:
        edf_terms["receiver"] = float(infl[layout.receiver_offset: layout.receiver_offset + layout.n_actors].sum())
    mu = np.exp(eta)
    tau2 = {g.name: 1.0 / gam[g.name] if gam[g.name] > 0 else math.inf
            for g in groups if g.kind == "ridge"}
    return FitResult(
        layout=layout,
        coefficients=beta,
        gammas=gam,
        variance_components=tau2,
        edf=float(infl.sum()),
        edf_terms=edf_terms,
        covariance=V,
        loglik=poisson_loglik(design.y, mu, w),
        penalized_loglik=pll,
        n_rows=design.n_rows,
        fitted=mu,
        gradient_max=grad_max,
        gradient_tolerance=tol_grad,
        converged=converged,
        n_iter=it,
        trace=trace,
    )


def _line_search(objective, beta, step, S, pll, max_halving):
    alpha = 1.0
    tol = 1e-12 * (abs(pll) + 1.0)
    for _ in range(max_halving):
        cand = beta + alpha * step
        val, eta = objective(cand, S)
        if np.isfinite(val) and val >= pll - tol:
            return cand, val, eta
        alpha /= 2
    return None, None, None


def _block_inverses(chol, groups: Sequence[PenaltyGroup], p: int) -> dict[str, np.ndarray]:
    out = {}
    for g in groups:
        E = np.zeros((p, g.stop - g.start))
        E[g.start:g.stop] = np.eye(g.stop - g.start)
        out[g.name] = linalg.cho_solve(chol, E, check_finite=False)[g.slice]
    return out


def _fellner_schall(group: PenaltyGroup, gamma: float, beta: np.ndarray, Vblock: np.ndarray) -> float:
    """One generalized Fellner-Schall step for a single non-overlapping penalty.

    ``gamma_new = (rank(S) - gamma * tr(V S)) / (b^T S b)``, limited to a
    tenfold change per step.
    """
    b = beta[group.slice]
    bSb = float(b @ group.S @ b)
    num = group.rank - gamma * float(np.sum(Vblock * group.S))
    if bSb <= 0 or num <= 0:
        new = gamma * 10.0 if bSb <= 0 else gamma / 10.0
    else:
        new = num / bSb
    new = min(max(new, gamma / 10.0), gamma * 10.0)
    return float(min(max(new, GAMMA_MIN), GAMMA_MAX))


def coefficient_curve(fit: FitResult, term: str, grid: Sequence[float], level: float = 1.96) -> np.ndarray:
    """Estimated coefficient function with pointwise bands.

    Returns an array with rows ``(t, estimate, lower, upper)``. Time-constant
    terms yield flat curves.
    """
    b = fit.layout.block(term)
    grid = np.asarray(grid, dtype=float)
    beta = fit.coefficients[b.slice]
    V = fit.covariance[b.slice, b.slice]
    if b.spline is None:
        B = np.ones((len(grid), 1))
    else:
        B = basis_matrix(b.spline, grid)
    est = B @ beta
    se = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", B, V, B), 0.0))
    return np.column_stack([grid, est, est - level * se, est + level * se])


def predict_intensity(fit: FitResult, row: DesignRow) -> float:
    """``exp(x^T beta + u_sender + u_receiver)`` for a single row (weights ignored)."""
    L = fit.layout
    x = np.asarray(row.columns, dtype=float)
    if x.shape != (L.n_fixed,):
        raise ValueError(f"row has {x.shape} columns, fit expects {L.n_fixed}")
    eta = float(x @ fit.coefficients[: L.n_fixed])
    for on, idx, off in ((L.n_random_sender, row.sender_index, L.sender_offset),
                         (L.n_random_receiver, row.receiver_index, L.receiver_offset)):
        if on:
            if not 0 <= idx < L.n_actors:
                raise IndexError(f"actor index {idx} out of range")
            eta += fit.coefficients[off + idx]
    return math.exp(eta)


def predict_intensities(fit: FitResult, design: DesignMatrix) -> np.ndarray:
    """Vectorized :func:`predict_intensity` over all rows of a conforming design."""
    if design.layout.n_fixed != fit.layout.n_fixed:
        raise ValueError("design does not conform to the fit")
    d = design.with_layout(fit.layout)
    return np.exp(_Operator(d).eta(fit.coefficients))


@dataclass
class RandomEffects:
    sender: dict[str, tuple[float, float]]
    receiver: dict[str, tuple[float, float]]
    tau2_sender: float | None
    tau2_receiver: float | None


def extract_random_effects(fit: FitResult) -> RandomEffects:
    """Per-actor effect estimates with posterior standard deviations."""
    L = fit.layout
    if not L.spec.random_effects:
        raise ValueError("fit has no random effects")
    se = fit.standard_errors
    out = {}
    for name, on, off in (("sender", L.n_random_sender, L.sender_offset),
                          ("receiver", L.n_random_receiver, L.receiver_offset)):
        out[name] = {a: (float(fit.coefficients[off + k]), float(se[off + k]))
                     for k, a in enumerate(L.actors)} if on else {}
    return RandomEffects(out["sender"], out["receiver"],
                         fit.variance_components.get("sender"), fit.variance_components.get("receiver"))


def write_coefficients(fit: FitResult, path: str | Path) -> None:
    """Machine-readable ``term,basis_index,estimate,se`` table."""
    L = fit.layout
    se = fit.standard_errors
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["term", "basis_index", "estimate", "se"])
        for b in L.blocks:
            for r in range(b.width):
                k = b.start + r
                w.writerow([b.key, r, _num(fit.coefficients[k]), _num(se[k])])
        for name, on, off in (("sender", L.n_random_sender, L.sender_offset),
                              ("receiver", L.n_random_receiver, L.receiver_offset)):
            for k in range(on):
                w.writerow([name, L.actors[k], _num(fit.coefficients[off + k]), _num(se[off + k])])


def fit_report(fit: FitResult) -> str:
    """Plain-text summary: likelihood, edf, tuning parameters, trace."""
    lines = [
        f"rows: {fit.n_rows}",
        f"columns: {fit.layout.n_columns}",
        f"converged: {fit.converged} after {fit.n_iter} iterations",
        f"loglik: {_num(fit.loglik)}",
        f"penalized_loglik: {_num(fit.penalized_loglik)}",
        f"edf: {_num(fit.edf)}",
        f"max_abs_gradient: {fit.gradient_max:.3e}",
        "",
        "term edf:",
    ]
    lines += [f"  {k}: {_num(v)}" for k, v in fit.edf_terms.items()]
    lines += ["", "tuning parameters:"]
    lines += [f"  {k}: {_num(v)}" for k, v in fit.gammas.items()]
    if fit.variance_components:
        lines += ["", "variance components:"]
        lines += [f"  tau2_{k}: {_num(v)}" for k, v in fit.variance_components.items()]
    lines += ["", "trace (iteration, penalized_loglik, max_coef_change):"]
    lines += [f"  {t['iteration']} {_num(t['penalized_loglik'])} {t['max_coef_change']:.3e}" for t in fit.trace]
    return "\n".join(lines) + "\n"


def _num(x: float) -> str:
    return format(float(x), ".12g")
