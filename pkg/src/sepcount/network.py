"""Longitudinal count-valued networks with changing actor composition.

Periods are 1-based integers. Calendar labels (e.g. years) are mapped to
period indices at ingestion and kept on the panel as metadata only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import sparse


class IngestionError(ValueError):
    """Raised when an event, presence or covariate file cannot be parsed."""


@dataclass(frozen=True)
class EventRecord:
    period: int
    sender: str
    receiver: str
    count: int
    value: float | None = None

    def __post_init__(self):
        if self.sender == self.receiver:
            raise ValueError(f"self-loop event for actor {self.sender!r}")
        if self.count < 1:
            raise ValueError("an event record must carry a count >= 1")
        if self.value is not None and not self.value >= 0:
            raise ValueError("event value must be a nonnegative real")


@dataclass(frozen=True)
class ActorRegistry:
    """Actors in a fixed order plus the periods in which each one exists."""

    actors: tuple[str, ...]
    presence: Mapping[str, frozenset[int]]
    labels: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.actors)) != len(self.actors):
            raise ValueError("actor ids must be unique")
        missing = set(self.actors) - set(self.presence)
        if missing:
            raise ValueError(f"no presence given for actors {sorted(missing)}")

    @property
    def n(self) -> int:
        return len(self.actors)

    def index(self, actor: str) -> int:
        return self._positions[actor]

    @property
    def _positions(self) -> dict[str, int]:
        cache = self.__dict__.get("_pos_cache")
        if cache is None:
            cache = {a: k for k, a in enumerate(self.actors)}
            object.__setattr__(self, "_pos_cache", cache)
        return cache

    def label(self, actor: str) -> str:
        return self.labels.get(actor, actor)

    def present_mask(self, t: int) -> np.ndarray:
        return np.array([t in self.presence[a] for a in self.actors], dtype=bool)


class EventPanel:
    """T yearly n x n count matrices with per-period risk sets.

    Counts are stored sparsely, one CSR matrix per period. The panel is
    treated as immutable once constructed; ``dense`` returns copies.
    """

    def __init__(
        self,
        counts: Sequence[sparse.spmatrix | np.ndarray],
        registry: ActorRegistry,
        values: Sequence[sparse.spmatrix | np.ndarray] | None = None,
        period_labels: Sequence[str] | None = None,
    ):
        self.registry = registry
        n = registry.n
        self._counts = []
        for t, y in enumerate(counts, start=1):
            y = sparse.csr_array(y, shape=(n, n), dtype=np.int64)
            y.eliminate_zeros()
            self._check_counts(y, t)
            self._counts.append(y)
        self.T = len(self._counts)
        for a in registry.actors:
            bad = [t for t in registry.presence[a] if not 1 <= t <= self.T]
            if bad:
                raise ValueError(f"actor {a!r} present in periods {bad} outside [1, {self.T}]")
        if values is not None:
            if len(values) != self.T:
                raise ValueError("values must have one matrix per period")
            self._values = [sparse.csr_array(v, shape=(n, n), dtype=float) for v in values]
        else:
            self._values = None
        if period_labels is None:
            period_labels = [str(t) for t in range(1, self.T + 1)]
        if len(period_labels) != self.T:
            raise ValueError("need one calendar label per period")
        self.period_labels = tuple(str(p) for p in period_labels)

    def _check_counts(self, y: sparse.csr_array, t: int) -> None:
        if y.nnz == 0:
            return
        if (y.data < 0).any():
            raise ValueError(f"negative count in period {t}")
        if y.diagonal().any():
            raise ValueError(f"nonzero diagonal count in period {t}")
        mask = self.registry.present_mask(t)
        rows, cols = y.nonzero()
        if not (mask[rows] & mask[cols]).all():
            k = np.flatnonzero(~(mask[rows] & mask[cols]))[0]
            a, b = self.registry.actors[rows[k]], self.registry.actors[cols[k]]
            raise ValueError(f"event {a}->{b} in period {t} involves an actor outside the risk set")

    @property
    def n(self) -> int:
        return self.registry.n

    @property
    def actors(self) -> tuple[str, ...]:
        return self.registry.actors

    @property
    def has_values(self) -> bool:
        return self._values is not None

    def _check_period(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise IndexError(f"period {t} outside [1, {self.T}]")

    def counts(self, t: int) -> sparse.csr_array:
        self._check_period(t)
        return self._counts[t - 1]

    def dense(self, t: int) -> np.ndarray:
        return self.counts(t).toarray()

    def values(self, t: int) -> np.ndarray:
        """Aggregated event values (e.g. TIV) for period ``t``; zeros for non-events."""
        self._check_period(t)
        if self._values is None:
            raise ValueError("panel carries no event values")
        return self._values[t - 1].toarray()

    def risk_mask(self, t: int) -> np.ndarray:
        self._check_period(t)
        return self.registry.present_mask(t)

    def __eq__(self, other):
        if not isinstance(other, EventPanel):
            return NotImplemented
        if self.T != other.T or self.registry.actors != other.registry.actors:
            return False
        if dict(self.registry.presence) != dict(other.registry.presence):
            return False
        return all((a != b).nnz == 0 for a, b in zip(self._counts, other._counts))

    def replace_counts(self, counts: Sequence[np.ndarray]) -> EventPanel:
        """New panel on the same registry with different counts (values dropped)."""
        return EventPanel(counts, self.registry, period_labels=self.period_labels)

    def records(self) -> list[EventRecord]:
        out = []
        for t in range(1, self.T + 1):
            y = self._counts[t - 1].tocoo()
            v = self._values[t - 1].toarray() if self._values is not None else None
            for i, j, c in sorted(zip(y.row.tolist(), y.col.tolist(), y.data.tolist())):
                out.append(EventRecord(
                    t, self.actors[i], self.actors[j], int(c),
                    None if v is None else float(v[i, j]),
                ))
        return out

    def __repr__(self):
        total = sum(int(y.sum()) for y in self._counts)
        return f"EventPanel(T={self.T}, n={self.n}, events={total})"


def risk_set(panel: EventPanel, t: int) -> set[str]:
    """Actors present at period ``t``."""
    mask = panel.risk_mask(t)
    return {a for a, m in zip(panel.actors, mask) if m}


@dataclass
class EventFormat:
    """Ingestion options for :func:`load_events`.

    Periods in the file are either integers in ``[1, T]``, calendar labels
    listed in ``period_labels``, or integers offset by ``period_start``
    (``period_start=1950`` maps 1950 to period 1).
    """

    T: int | None = None
    period_labels: Sequence[str] | None = None
    period_start: int | None = None
    actors: Sequence[str] | None = None
    presence_path: str | Path | None = None
    delimiter: str = ","

    def period_mapper(self):
        if self.period_labels is not None:
            lookup = {str(p): k for k, p in enumerate(self.period_labels, start=1)}
            return lambda raw: lookup.get(raw.strip())
        offset = 0 if self.period_start is None else self.period_start - 1

        def to_int(raw):
            try:
                return int(raw) - offset
            except ValueError:
                return None
        return to_int

    def labels(self, T: int) -> list[str]:
        if self.period_labels is not None:
            return [str(p) for p in self.period_labels]
        start = 1 if self.period_start is None else self.period_start
        return [str(start + k) for k in range(T)]


def read_event_records(path: str | Path, fmt: EventFormat | None = None) -> list[EventRecord]:
    """Parse an event file into records without aggregating duplicates.

    Row numbers in error messages count data rows from 1 (header excluded).
    """
    fmt = fmt or EventFormat()
    to_period = fmt.period_mapper()
    limit = len(fmt.period_labels) if fmt.period_labels is not None else fmt.T
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=fmt.delimiter)
        header = next(reader, None)
        if header is None:
            return records
        header = [h.strip() for h in header]
        if header[:4] != ["period", "sender", "receiver", "count"]:
            raise IngestionError(f"bad header {header}; expected period,sender,receiver,count[,value]")
        has_value = len(header) > 4 and header[4] == "value"
        for rownum, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 4 or len(row) > len(header):
                raise IngestionError(f"row {rownum}: expected {len(header)} fields, got {len(row)}")
            period = to_period(row[0])
            if period is None or period < 1 or (limit is not None and period > limit):
                raise IngestionError(f"row {rownum}: period {row[0]!r} outside the declared range")
            sender, receiver = row[1].strip(), row[2].strip()
            if not sender or not receiver:
                raise IngestionError(f"row {rownum}: empty actor id")
            if sender == receiver:
                raise IngestionError(f"row {rownum}: sender equals receiver ({sender!r})")
            try:
                count = int(row[3])
            except ValueError:
                raise IngestionError(f"row {rownum}: count {row[3]!r} is not an integer") from None
            if count < 0:
                raise IngestionError(f"row {rownum}: negative count {count}")
            value = None
            if has_value and len(row) > 4 and row[4].strip():
                try:
                    value = float(row[4])
                except ValueError:
                    raise IngestionError(f"row {rownum}: value {row[4]!r} is not a number") from None
                if not value >= 0:
                    raise IngestionError(f"row {rownum}: negative or non-finite value {row[4]!r}")
            if count == 0:
                continue
            records.append(EventRecord(period, sender, receiver, count, value))
    return records


def read_presence(path: str | Path, fmt: EventFormat | None = None) -> dict[str, set[int]]:
    """Parse a presence file in span (``actor,first_period,last_period``) or long (``actor,period``) form."""
    fmt = fmt or EventFormat()
    to_period = fmt.period_mapper()
    presence: dict[str, set[int]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=fmt.delimiter)
        header = [h.strip() for h in next(reader, [])]
        if header == ["actor", "first_period", "last_period"]:
            span = True
        elif header == ["actor", "period"]:
            span = False
        else:
            raise IngestionError(f"bad presence header {header}")
        for rownum, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise IngestionError(f"presence row {rownum}: expected {len(header)} fields")
            actor = row[0].strip()
            periods = [to_period(c) for c in row[1:]]
            if any(p is None or p < 1 for p in periods):
                raise IngestionError(f"presence row {rownum}: unknown period")
            if span:
                first, last = periods
                if last < first:
                    raise IngestionError(f"presence row {rownum}: last period before first")
                presence.setdefault(actor, set()).update(range(first, last + 1))
            else:
                presence.setdefault(actor, set()).add(periods[0])
    return presence


def panel_from_records(
    records: Iterable[EventRecord],
    T: int | None = None,
    actors: Sequence[str] | None = None,
    presence: Mapping[str, Iterable[int]] | None = None,
    period_labels: Sequence[str] | None = None,
) -> EventPanel:
    """Aggregate records into a panel.

    Duplicate ``(t, i, j)`` records are summed (counts and values). Actors
    without an explicit presence entry are present from their first to
    their last appearance; declared actors that never appear are present
    throughout.
    """
    records = list(records)
    if T is None:
        T = len(period_labels) if period_labels is not None else max((r.period for r in records), default=0)
    if T < 1:
        raise ValueError("panel needs at least one period")
    order: list[str] = list(actors) if actors is not None else []
    seen = set(order)
    first: dict[str, int] = {}
    last: dict[str, int] = {}
    for r in records:
        if not 1 <= r.period <= T:
            raise ValueError(f"record period {r.period} outside [1, {T}]")
        for a in (r.sender, r.receiver):
            if a not in seen:
                seen.add(a)
                order.append(a)
            first[a] = min(first.get(a, r.period), r.period)
            last[a] = max(last.get(a, r.period), r.period)
    if presence is not None:
        for a in presence:
            if a not in seen:
                seen.add(a)
                order.append(a)
    pres = {}
    for a in order:
        if presence is not None and a in presence:
            pres[a] = frozenset(int(t) for t in presence[a])
        elif a in first:
            pres[a] = frozenset(range(first[a], last[a] + 1))
        else:
            pres[a] = frozenset(range(1, T + 1))
    registry = ActorRegistry(tuple(order), pres)
    pos = {a: k for k, a in enumerate(order)}
    n = len(order)
    rows = [[] for _ in range(T)]
    has_values = bool(records) and all(r.value is not None for r in records)
    for r in records:
        rows[r.period - 1].append((pos[r.sender], pos[r.receiver], r.count, r.value or 0.0))
    counts, values = [], []
    for entries in rows:
        if entries:
            i, j, c, v = (np.array(x) for x in zip(*entries))
        else:
            i = j = c = v = np.zeros(0)
        # coo -> csr sums duplicates
        counts.append(sparse.coo_array((c.astype(np.int64), (i.astype(int), j.astype(int))), shape=(n, n)).tocsr())
        values.append(sparse.coo_array((v.astype(float), (i.astype(int), j.astype(int))), shape=(n, n)).tocsr())
    return EventPanel(counts, registry, values if has_values else None, period_labels)


def load_events(path: str | Path, fmt: EventFormat | None = None) -> EventPanel:
    """Read an event file (and optional presence file) into an :class:`EventPanel`."""
    fmt = fmt or EventFormat()
    records = read_event_records(path, fmt)
    presence = read_presence(fmt.presence_path, fmt) if fmt.presence_path else None
    T = fmt.T
    if fmt.period_labels is not None:
        T = len(fmt.period_labels)
    if T is None:
        T = max([r.period for r in records] + [max(p) for p in (presence or {}).values() if p] + [0])
        if T == 0:
            raise IngestionError("cannot infer T from an empty file; declare it")
    labels = fmt.labels(T)
    return panel_from_records(records, T, fmt.actors, presence, labels)


def write_events(panel: EventPanel, path: str | Path) -> None:
    """Write the panel in the event-file format using period indices."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["period", "sender", "receiver", "count"]
        if panel.has_values:
            header.append("value")
        w.writerow(header)
        for r in panel.records():
            row = [r.period, r.sender, r.receiver, r.count]
            if panel.has_values:
                row.append(repr(r.value))
            w.writerow(row)


def write_presence(panel: EventPanel, path: str | Path) -> None:
    """Write presence in long ``actor,period`` form (handles gaps exactly)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["actor", "period"])
        for a in panel.actors:
            for t in sorted(panel.registry.presence[a]):
                w.writerow([a, t])


def filter_by_value_quantile(records: Sequence[EventRecord], q: float) -> list[EventRecord]:
    """Keep records whose value strictly exceeds the empirical ``q``-quantile.

    The quantile is the linear-interpolation (type 7) estimator over all
    record values. ``q=0`` therefore drops only records at the minimum.
    """
    if not 0 <= q < 1:
        raise ValueError("q must lie in [0, 1)")
    if not records:
        return []
    if any(r.value is None for r in records):
        raise ValueError("every record needs a value to filter by quantile")
    vals = np.array([r.value for r in records], dtype=float)
    cut = np.quantile(vals, q, method="linear")
    return [r for r, v in zip(records, vals) if v > cut]
