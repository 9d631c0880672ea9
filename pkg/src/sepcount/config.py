"""YAML run configuration shared by the command-line entry points.

Relative paths are resolved against the directory holding the config
file. Layout::

    data:
      events: events.csv
      presence: presence.csv        # optional
      covariates: [covariates.csv]  # optional
      period_start: 1990            # or period_labels / T
    covariates:
      missing_policy: {gdp: interpolate}
      min_coverage: 0.6
    model: {...}                    # ModelSpec.from_dict
    estimation: {...}               # PenaltyConfig fields
    simulation: {n_sims: 1000, seed: 0, trajectory: false}
    compare: true
    output: out
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .design import ModelSpec, SeparabilityConfig, build_design
from .estimation import PenaltyConfig
from .network import EventFormat, EventPanel, IngestionError, load_events
from .statistics import STRUCTURAL_STATISTICS, CovariateTable, load_covariates


class ConfigError(ValueError):
    """The configuration file is malformed."""


@dataclass
class RunConfig:
    events: Path
    presence: Path | None = None
    covariates: list[Path] = field(default_factory=list)
    event_format: EventFormat = field(default_factory=EventFormat)
    missing_policy: dict[str, str] = field(default_factory=dict)
    min_coverage: float = 0.6
    model: ModelSpec = field(default_factory=ModelSpec)
    estimation: PenaltyConfig = field(default_factory=PenaltyConfig)
    n_sims: int = 1000
    seed: int = 0
    trajectory: bool = False
    compare: bool = True
    output: Path = Path("out")

    def input_paths(self) -> list[tuple[str, Path]]:
        paths = [("events", self.events)]
        if self.presence is not None:
            paths.append(("presence", self.presence))
        paths += [("covariates", p) for p in self.covariates]
        return paths

    def with_overrides(
        self,
        out: str | None = None,
        seed: int | None = None,
        threads: int | None = None,
        time_constant: bool = False,
        no_random_effects: bool = False,
        lag: int | None = None,
        weights: str | None = None,
    ) -> RunConfig:
        model = self.model
        if time_constant:
            model = model.replace(time_constant=True)
        if no_random_effects:
            model = model.replace(random_sender=False, random_receiver=False, center_random_effects=False)
        if lag is not None:
            model = model.replace(separability=SeparabilityConfig(model.separability.enabled, lag))
        if weights is not None:
            model = model.replace(weights=weights)
        est = self.estimation
        if threads is not None:
            est = dataclasses.replace(est, threads=threads)
        return dataclasses.replace(
            self,
            model=model,
            estimation=est,
            seed=self.seed if seed is None else seed,
            output=self.output if out is None else Path(out),
        )


def _path(base: Path, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p


def parse_config(path: str | Path) -> RunConfig:
    """Read and structurally check a config file; input files are not opened."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        try:
            raw = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    base = path.parent
    data = raw.get("data") or {}
    if "events" not in data:
        raise ConfigError("data.events is required")
    covs = data.get("covariates") or []
    if isinstance(covs, str):
        covs = [covs]
    fmt = EventFormat(
        T=data.get("T"),
        period_labels=data.get("period_labels"),
        period_start=data.get("period_start"),
        actors=data.get("actors"),
        presence_path=_path(base, data["presence"]) if data.get("presence") else None,
        delimiter=data.get("delimiter", ","),
    )
    cov_opts = raw.get("covariates") or {}
    sim = raw.get("simulation") or {}
    try:
        model = ModelSpec.from_dict(raw.get("model") or {})
        est = PenaltyConfig(**(raw.get("estimation") or {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return RunConfig(
        events=_path(base, data["events"]),
        presence=fmt.presence_path,
        covariates=[_path(base, c) for c in covs],
        event_format=fmt,
        missing_policy=dict(cov_opts.get("missing_policy") or {}),
        min_coverage=float(cov_opts.get("min_coverage", 0.6)),
        model=model,
        estimation=est,
        n_sims=int(sim.get("n_sims", 1000)),
        seed=int(sim.get("seed", 0)),
        trajectory=bool(sim.get("trajectory", False)),
        compare=bool(raw.get("compare", True)),
        output=_path(base, raw.get("output", "out")),
    )


def load_inputs(cfg: RunConfig) -> tuple[EventPanel, CovariateTable | None]:
    panel = load_events(cfg.events, cfg.event_format)
    table = None
    if cfg.covariates:
        table = load_covariates(cfg.covariates, cfg.event_format, cfg.missing_policy, cfg.min_coverage)
    return panel, table


def validate(cfg: RunConfig) -> list[str]:
    """All problems found in the inputs, each prefixed with where it was found."""
    problems = []
    for what, p in cfg.input_paths():
        if not p.is_file():
            problems.append(f"{what}: file not found: {p}")
    if problems:
        return problems
    try:
        panel, table = load_inputs(cfg)
    except (IngestionError, ValueError) as exc:
        return [f"input: {exc}"]

    spec = cfg.model
    for term in spec.terms:
        c = term.covariate
        if c in STRUCTURAL_STATISTICS:
            continue
        if table is None or (c not in table.node and c not in table.dyad):
            problems.append(f"model: term {term.label!r} references unknown covariate {c!r}")
        elif table.kind(c) == "node" and term.role == "dyad" and term.transform != "absdiff":
            problems.append(f"model: node covariate {c!r} needs role sender/receiver or transform absdiff")
    if table is not None:
        problems += [f"covariates: {p}" for p in table.coverage_violations(panel.registry, panel.T)]
    if panel.T <= spec.separability.lag:
        problems.append(f"model: lag {spec.separability.lag} needs more than {panel.T} periods")
    if problems:
        return problems
    try:
        build_design(panel, table, spec)
    except ValueError as exc:
        problems.append(f"design: {exc}")
    return problems
