"""Counting-process design matrices for separable dyadic intensities.

One row per at-risk ordered dyad and modeled period. Each term gets one
column block per regime (onset, repetition) whose entries are zero for
rows of the other regime; with separability disabled a single pooled
block is used. Time-varying terms are expanded on a B-spline basis.
Sender and receiver random effects are kept as integer incidence indices
rather than dense one-hot columns.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .network import EventPanel, EventRecord
from .splines import SplineBasisSpec, basis_matrix, penalty_matrix
from .statistics import (
    STRUCTURAL_STATISTICS,
    CovariateCache,
    CovariateTable,
    Term,
    structural_matrices,
    term_matrix,
)

ONSET, REPETITION, POOLED = 0, 1, 2
REGIME_NAMES = ("onset", "repetition", "pooled")

DEFAULT_SPLINE = {"q": 20, "degree": 3, "penalty_order": 2}


@dataclass(frozen=True)
class SeparabilityConfig:
    enabled: bool = True
    lag: int = 1

    def __post_init__(self):
        if self.lag < 1:
            raise ValueError("separability lag must be >= 1")


@dataclass(frozen=True)
class ModelSpec:
    """Everything needed to turn a panel into a design matrix."""

    terms: tuple[Term, ...] = ()
    intercept: bool = True
    intercept_time_varying: bool = True
    spline: Mapping = field(default_factory=lambda: dict(DEFAULT_SPLINE))
    separability: SeparabilityConfig = SeparabilityConfig()
    random_sender: bool = False
    random_receiver: bool = False
    center_random_effects: bool = False
    weights: str = "unit"
    first_period: int | None = None
    time_constant: bool = False

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if self.weights not in ("unit", "tiv_log"):
            raise ValueError("weights must be 'unit' or 'tiv_log'")
        labels = [t.label for t in self.all_terms()]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate term labels in {labels}")

    @property
    def start(self) -> int:
        return self.first_period if self.first_period is not None else self.separability.lag + 1

    @property
    def random_effects(self) -> bool:
        return self.random_sender or self.random_receiver

    def all_terms(self) -> list[Term]:
        terms = list(self.terms)
        if self.intercept:
            terms.insert(0, Term("intercept", time_varying=self.intercept_time_varying))
        return terms

    def replace(self, **changes) -> ModelSpec:
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, d: Mapping) -> ModelSpec:
        d = dict(d)
        sep = d.get("separability", {})
        if isinstance(sep, bool):
            sep = {"enabled": sep}
        re = d.get("random_effects", {})
        if isinstance(re, bool):
            re = {"sender": re, "receiver": re}
        icpt = d.get("intercept", True)
        icpt_tv = True
        if isinstance(icpt, Mapping):
            icpt_tv = bool(icpt.get("time_varying", True))
            icpt = True
        spline = dict(DEFAULT_SPLINE)
        spline.update(d.get("spline", {}))
        return cls(
            terms=tuple(Term.from_dict(t) for t in d.get("terms", [])),
            intercept=bool(icpt),
            intercept_time_varying=icpt_tv,
            spline=spline,
            separability=SeparabilityConfig(bool(sep.get("enabled", True)), int(sep.get("lag", 1))),
            random_sender=bool(re.get("sender", False)),
            random_receiver=bool(re.get("receiver", False)),
            center_random_effects=bool(re.get("center", False)),
            weights=d.get("weights", "unit"),
            first_period=d.get("first_period"),
            time_constant=bool(d.get("time_constant", False)),
        )

    def to_dict(self) -> dict:
        terms = []
        for t in self.terms:
            td = {"covariate": t.covariate, "role": t.role, "transform": t.transform,
                  "regime": t.regime, "time_varying": t.time_varying}
            if t.name:
                td["name"] = t.name
            if t.spline:
                td["spline"] = dict(t.spline)
            terms.append(td)
        return {
            "terms": terms,
            "intercept": {"time_varying": self.intercept_time_varying} if self.intercept else False,
            "spline": dict(self.spline),
            "separability": {"enabled": self.separability.enabled, "lag": self.separability.lag},
            "random_effects": {"sender": self.random_sender, "receiver": self.random_receiver,
                               "center": self.center_random_effects},
            "weights": self.weights,
            "first_period": self.first_period,
            "time_constant": self.time_constant,
        }


@dataclass(frozen=True)
class ColumnBlock:
    """Contiguous fixed-effect columns of one term in one regime."""

    regime: str
    term: str
    start: int
    stop: int
    spline: SplineBasisSpec | None = None

    @property
    def key(self) -> str:
        return f"{self.regime}:{self.term}"

    @property
    def slice(self) -> slice:
        return slice(self.start, self.stop)

    @property
    def width(self) -> int:
        return self.stop - self.start

    @property
    def time_varying(self) -> bool:
        return self.spline is not None

    @property
    def penalty(self) -> str:
        return "spline" if self.spline is not None else "none"


@dataclass(frozen=True)
class PenaltyGroup:
    """Quadratic penalty ``gamma * b[sl]^T S b[sl]`` on a coefficient range."""

    name: str
    start: int
    stop: int
    S: np.ndarray
    rank: int
    kind: str  # "spline" or "ridge"

    @property
    def slice(self) -> slice:
        return slice(self.start, self.stop)


@dataclass(frozen=True)
class DesignLayout:
    """Column structure of a design, independent of the rows."""

    spec: ModelSpec
    blocks: tuple[ColumnBlock, ...]
    actors: tuple[str, ...]
    first_period: int
    last_period: int

    @property
    def n_fixed(self) -> int:
        return self.blocks[-1].stop if self.blocks else 0

    @property
    def n_actors(self) -> int:
        return len(self.actors)

    @property
    def n_random_sender(self) -> int:
        return self.n_actors if self.spec.random_sender else 0

    @property
    def n_random_receiver(self) -> int:
        return self.n_actors if self.spec.random_receiver else 0

    @property
    def sender_offset(self) -> int:
        return self.n_fixed

    @property
    def receiver_offset(self) -> int:
        return self.n_fixed + self.n_random_sender

    @property
    def n_columns(self) -> int:
        return self.n_fixed + self.n_random_sender + self.n_random_receiver

    def block(self, key: str) -> ColumnBlock:
        for b in self.blocks:
            if b.key == key or (b.term == key and sum(c.term == key for c in self.blocks) == 1):
                return b
        raise KeyError(f"no term block {key!r}; have {[b.key for b in self.blocks]}")

    def column_names(self) -> list[str]:
        names = []
        for b in self.blocks:
            if b.width == 1 and b.spline is None:
                names.append(b.key)
            else:
                names.extend(f"{b.key}[{r}]" for r in range(b.width))
        names += [f"sender:{a}" for a in self.actors][: self.n_random_sender]
        names += [f"receiver:{a}" for a in self.actors][: self.n_random_receiver]
        return names

    def penalty_groups(self) -> list[PenaltyGroup]:
        groups = []
        for b in self.blocks:
            if b.spline is not None:
                S = penalty_matrix(b.spline)
                groups.append(PenaltyGroup(b.key, b.start, b.stop, S,
                                           b.spline.q - b.spline.penalty_order, "spline"))
        n = self.n_actors
        if self.spec.random_sender:
            groups.append(PenaltyGroup("sender", self.sender_offset, self.sender_offset + n,
                                       np.eye(n), n, "ridge"))
        if self.spec.random_receiver:
            groups.append(PenaltyGroup("receiver", self.receiver_offset, self.receiver_offset + n,
                                       np.eye(n), n, "ridge"))
        return groups

    def fixed_penalty(self) -> np.ndarray | None:
        """Optional sum-to-zero penalty on each random-effect block."""
        if not (self.spec.center_random_effects and self.spec.random_effects):
            return None
        p = self.n_columns
        F = np.zeros((p, p))
        n = self.n_actors
        for off, on in ((self.sender_offset, self.spec.random_sender),
                        (self.receiver_offset, self.spec.random_receiver)):
            if on:
                F[off:off + n, off:off + n] += 1e6 / n
        return F


@dataclass(frozen=True)
class DesignRow:
    period: int
    sender: str
    receiver: str
    response: int
    regime: str
    columns: np.ndarray
    sender_index: int
    receiver_index: int
    weight: float = 1.0


@dataclass
class DesignMatrix:
    """Rows of the counting-process representation.

    ``X`` holds the fixed-effect columns; ``sender``/``receiver`` are actor
    positions used both for labelling and random-effect incidence.
    """

    layout: DesignLayout
    X: np.ndarray
    y: np.ndarray
    weights: np.ndarray
    period: np.ndarray
    sender: np.ndarray
    receiver: np.ndarray
    regime: np.ndarray
    value: np.ndarray | None = None

    @property
    def n_rows(self) -> int:
        return len(self.y)

    @property
    def spec(self) -> ModelSpec:
        return self.layout.spec

    @property
    def column_map(self) -> dict[str, ColumnBlock]:
        return {b.key: b for b in self.layout.blocks}

    @property
    def n_random_sender(self) -> int:
        return self.layout.n_random_sender

    @property
    def n_random_receiver(self) -> int:
        return self.layout.n_random_receiver

    def row(self, k: int) -> DesignRow:
        return DesignRow(
            int(self.period[k]),
            self.layout.actors[self.sender[k]],
            self.layout.actors[self.receiver[k]],
            int(self.y[k]),
            REGIME_NAMES[self.regime[k]],
            self.X[k].copy(),
            int(self.sender[k]),
            int(self.receiver[k]),
            float(self.weights[k]),
        )

    def full_matrix(self) -> np.ndarray:
        """Dense ``[X | sender one-hot | receiver one-hot]`` (small designs only)."""
        L = self.layout
        out = np.zeros((self.n_rows, L.n_columns))
        out[:, : L.n_fixed] = self.X
        r = np.arange(self.n_rows)
        if L.n_random_sender:
            out[r, L.sender_offset + self.sender] = 1.0
        if L.n_random_receiver:
            out[r, L.receiver_offset + self.receiver] = 1.0
        return out

    def subset(self, rows) -> DesignMatrix:
        rows = np.asarray(rows)
        return DesignMatrix(
            self.layout, self.X[rows], self.y[rows], self.weights[rows], self.period[rows],
            self.sender[rows], self.receiver[rows], self.regime[rows],
            None if self.value is None else self.value[rows],
        )

    def with_layout(self, layout: DesignLayout) -> DesignMatrix:
        return dataclasses.replace(self, layout=layout)


def _make_layout(spec: ModelSpec, actors, first: int, last: int) -> DesignLayout:
    regimes = ("onset", "repetition") if spec.separability.enabled else ("pooled",)
    blocks = []
    col = 0
    for regime in regimes:
        for term in spec.all_terms():
            if regime != "pooled" and term.regime not in (regime, "both"):
                continue
            tv = term.time_varying and not spec.time_constant
            spline = None
            if tv:
                cfg = dict(spec.spline)
                cfg.update(term.spline or {})
                t_min = cfg.pop("t_min", first)
                t_max = cfg.pop("t_max", last)
                if not t_max > t_min:
                    raise ValueError(
                        f"spline domain mismatch for {term.label!r}: modeled periods {first}..{last} "
                        "leave no room for a time-varying effect")
                if t_min > first or t_max < last:
                    raise ValueError(
                        f"spline domain [{t_min}, {t_max}] of {term.label!r} does not cover "
                        f"modeled periods {first}..{last}")
                spline = SplineBasisSpec(float(t_min), float(t_max), int(cfg["q"]),
                                         int(cfg["degree"]), int(cfg["penalty_order"]))
            width = spline.q if spline is not None else 1
            blocks.append(ColumnBlock(regime, term.label, col, col + width, spline))
            col += width
    return DesignLayout(spec, tuple(blocks), tuple(actors), first, last)


def regime_for(window_sum: np.ndarray, separable: bool) -> np.ndarray:
    if not separable:
        return np.full(window_sum.shape, POOLED, dtype=np.int8)
    return np.where(window_sum > 0, REPETITION, ONSET).astype(np.int8)


def period_rows(
    layout: DesignLayout,
    cache: CovariateCache,
    t: int,
    mask: np.ndarray,
    lagged: Sequence[np.ndarray],
):
    """Rows for period ``t`` given risk mask and lagged count matrices ``[y_{t-1}, y_{t-2}, ...]``.

    Structural statistics are read from ``lagged[0]``; the regime uses the
    whole window. Returned arrays: ``(I, J, X, regime)``.
    """
    spec = layout.spec
    n = len(mask)
    at_risk = np.outer(mask, mask)
    np.fill_diagonal(at_risk, False)
    I, J = np.nonzero(at_risk)
    if len(I) == 0:
        return I, J, np.zeros((0, layout.n_fixed)), np.zeros(0, dtype=np.int8)
    n_t = int(mask.sum())
    structural_needed = [t_.covariate for t_ in spec.all_terms() if t_.covariate in STRUCTURAL_STATISTICS]
    structural = {}
    if structural_needed:
        structural = structural_matrices((lagged[0] > 0).astype(np.int64), n_t, structural_needed)
    window = np.zeros((n, n))
    for y in lagged[: spec.separability.lag]:
        window = window + y
    regime = regime_for(window[I, J], spec.separability.enabled)
    X = np.zeros((len(I), layout.n_fixed))
    values = {}
    for term in spec.all_terms():
        values[term.label] = term_matrix(cache.panel, cache, term, t, structural)[I, J]
    for b in layout.blocks:
        s = values[b.term]
        if b.regime != "pooled":
            s = np.where(regime == REGIME_NAMES.index(b.regime), s, 0.0)
        if b.spline is not None:
            X[:, b.slice] = s[:, None] * basis_matrix(b.spline, np.full(len(I), float(t)))
        else:
            X[:, b.start] = s
    return I, J, X, regime


def build_design(
    panel: EventPanel,
    covariates: CovariateTable | None,
    spec: ModelSpec,
    layout: DesignLayout | None = None,
) -> DesignMatrix:
    """Counting-process rows for periods ``spec.start .. T``.

    Rows are ordered by period, then sender position, then receiver
    position. Pass ``layout`` to reuse the columns of an earlier build
    (e.g. when simulating from a fitted model).
    """
    L = spec.separability.lag
    first = spec.start
    if panel.T <= L:
        raise ValueError(f"panel has T={panel.T} periods; lag {L} needs T > {L}")
    if first < 2 or first > panel.T:
        raise ValueError(f"first modeled period {first} outside [2, {panel.T}]")
    if layout is None:
        layout = _make_layout(spec, panel.actors, first, panel.T)
    cache = CovariateCache(panel, covariates)
    parts = []
    for t in range(first, panel.T + 1):
        lagged = [panel.dense(t - l) for l in range(1, L + 1) if t - l >= 1]
        mask = panel.risk_mask(t)
        I, J, X, regime = period_rows(layout, cache, t, mask, lagged)
        y = panel.dense(t)[I, J]
        v = panel.values(t)[I, J] if panel.has_values else None
        parts.append((t, I, J, X, regime, y, v))
    X = np.concatenate([p[3] for p in parts]) if parts else np.zeros((0, layout.n_fixed))
    design = DesignMatrix(
        layout=layout,
        X=X,
        y=np.concatenate([p[5] for p in parts]).astype(np.int64),
        weights=np.ones(len(X)),
        period=np.concatenate([np.full(len(p[1]), p[0]) for p in parts]).astype(np.int64),
        sender=np.concatenate([p[1] for p in parts]).astype(np.int64),
        receiver=np.concatenate([p[2] for p in parts]).astype(np.int64),
        regime=np.concatenate([p[4] for p in parts]).astype(np.int8),
        value=np.concatenate([p[6] for p in parts]) if panel.has_values else None,
    )
    if spec.weights == "tiv_log":
        if design.value is None:
            raise ValueError("tiv_log weights need event values in the panel")
        design = attach_weights(design, design.value, "tiv_log")
    return design


def attach_weights(design: DesignMatrix, tiv, scheme: str = "tiv_log") -> DesignMatrix:
    """Set observation weights.

    ``tiv`` is either an array aligned with the rows or an iterable of
    :class:`EventRecord` whose values are summed per ``(t, i, j)``.
    Under ``tiv_log`` the weight is ``log(TIV + 1) + 1`` rescaled to sum
    to one over all rows.
    """
    if scheme == "unit":
        return dataclasses.replace(design, weights=np.ones(design.n_rows))
    if scheme != "tiv_log":
        raise ValueError(f"unknown weight scheme {scheme!r}")
    if isinstance(tiv, np.ndarray):
        v = np.asarray(tiv, dtype=float)
    else:
        v = _row_values(design, tiv)
    if v.shape != (design.n_rows,):
        raise ValueError("need one TIV per design row")
    if (v < 0).any() or not np.isfinite(v).all():
        raise ValueError("TIV must be finite and nonnegative")
    w = np.log(v + 1.0) + 1.0
    return dataclasses.replace(design, weights=w / w.sum())


def _row_values(design: DesignMatrix, records: Iterable[EventRecord]) -> np.ndarray:
    pos = {a: k for k, a in enumerate(design.layout.actors)}
    agg: dict[tuple[int, int, int], float] = {}
    for r in records:
        if r.value is None:
            raise ValueError("record without value")
        key = (r.period, pos[r.sender], pos[r.receiver])
        agg[key] = agg.get(key, 0.0) + r.value
    return np.array([agg.get((int(t), int(i), int(j)), 0.0)
                     for t, i, j in zip(design.period, design.sender, design.receiver)])


def random_effect_blocks(
    design: DesignMatrix, registry=None, sender: bool = True, receiver: bool = True
) -> DesignMatrix:
    """Enable sender/receiver random-effect blocks on an existing design.

    Each row already carries its sender and receiver positions; this only
    switches on the ``n + n`` ridge-penalised effect columns.
    """
    if registry is not None and tuple(registry.actors) != design.layout.actors:
        raise ValueError("registry actor order differs from the design's")
    spec = design.spec.replace(random_sender=sender, random_receiver=receiver)
    return design.with_layout(dataclasses.replace(design.layout, spec=spec))
