"""Campaign configuration: factor declarations, objective, phase parameters."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .doe import FactorSpec, parse_generator
from .errors import ConfigError, DesignError
from .objective import ObjectiveSpec


@dataclass
class PhaseConfig:
    n_c: int = 1
    n_01: int = 4
    n_t: int = 10
    t_schedule: list[float] | None = None
    n_c_prime: int = 1
    n_s: int = 1
    n_02: int = 4
    generators: list[str] = field(default_factory=list)
    alpha: float | None = None
    drop_p_threshold: float = 0.5
    half_widths: dict[str, float] = field(default_factory=dict)
    replicates: int = 1

    def schedule(self) -> list[float]:
        if self.t_schedule is not None:
            return list(self.t_schedule)
        return [-float(i) for i in range(1, self.n_t + 1)]


@dataclass
class CampaignConfig:
    factors: list[FactorSpec]
    objective: ObjectiveSpec | None = None
    phases: PhaseConfig = field(default_factory=PhaseConfig)
    seed: int = 0
    jobs: int = 1

    def factor(self, name: str) -> FactorSpec:
        for f in self.factors:
            if f.name == name:
                return f
        raise KeyError(name)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.factors]

    def to_dict(self) -> dict:
        ph = self.phases
        return {
            "factors": [f.to_dict() for f in self.factors],
            "objective": None if self.objective is None else self.objective.to_dict(),
            "phases": {
                "n_c": ph.n_c, "n_01": ph.n_01, "n_t": ph.n_t, "t_schedule": ph.t_schedule,
                "n_c_prime": ph.n_c_prime, "n_s": ph.n_s, "n_02": ph.n_02,
                "generators": list(ph.generators), "alpha": ph.alpha,
                "drop_p_threshold": ph.drop_p_threshold, "half_widths": dict(ph.half_widths),
                "replicates": ph.replicates,
            },
            "seed": self.seed,
            "jobs": self.jobs,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


_INT_FIELDS = ("n_c", "n_01", "n_t", "n_c_prime", "n_s", "n_02", "replicates")


def _phase_config(d: dict) -> PhaseConfig:
    known = set(PhaseConfig.__dataclass_fields__)
    extra = set(d) - known
    if extra:
        raise ConfigError(f"phases: unknown keys {sorted(extra)}")
    ph = PhaseConfig(**d)
    for name in _INT_FIELDS:
        v = getattr(ph, name)
        minimum = 1 if name in ("n_c", "n_c_prime", "n_s") else 0
        if not isinstance(v, int) or isinstance(v, bool) or v < minimum:
            raise ConfigError(f"phases.{name}: must be an integer >= {minimum}, got {v!r}")
    if ph.t_schedule is not None:
        ph.t_schedule = [float(t) for t in ph.t_schedule]
        if not ph.t_schedule:
            raise ConfigError("phases.t_schedule: must not be empty")
        bad = [t for t in ph.t_schedule if not (math.isfinite(t) and t < 0)]
        if bad:
            raise ConfigError(f"phases.t_schedule: descent steps must be negative, got {bad}")
    elif ph.n_t < 1:
        raise ConfigError("phases.n_t: must be >= 1")
    if not 0 <= ph.drop_p_threshold <= 1:
        raise ConfigError("phases.drop_p_threshold: must lie in [0, 1]")
    ph.generators = list(ph.generators or [])
    for g in ph.generators:
        try:
            parse_generator(g)
        except DesignError as exc:
            raise ConfigError(f"phases.generators: {exc}") from None
    if ph.alpha is not None and not ph.alpha > 0:
        raise ConfigError("phases.alpha: must be > 0")
    ph.half_widths = {str(k): float(v) for k, v in (ph.half_widths or {}).items()}
    for k, v in ph.half_widths.items():
        if not v > 0:
            raise ConfigError(f"phases.half_widths.{k}: must be > 0, got {v}")
    return ph


def config_from_dict(d: dict) -> CampaignConfig:
    if not isinstance(d, dict):
        raise ConfigError("config: expected a mapping at top level")
    extra = set(d) - {"factors", "objective", "phases", "seed", "jobs"}
    if extra:
        raise ConfigError(f"config: unknown keys {sorted(extra)}")
    raw = d.get("factors")
    if not raw:
        raise ConfigError("factors: at least one factor is required")
    factors, seen = [], set()
    for i, fd in enumerate(raw):
        try:
            f = FactorSpec.from_dict(fd)
        except ConfigError as exc:
            raise ConfigError(f"factors[{i}]: {exc}") from None
        if f.name in seen:
            raise ConfigError(f"factors[{i}]: duplicate factor name {f.name!r}")
        seen.add(f.name)
        factors.append(f)

    seed = d.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed: must be an unsigned integer, got {seed!r}")
    jobs = d.get("jobs", 1)
    if not isinstance(jobs, int) or jobs < 1:
        raise ConfigError(f"jobs: must be an integer >= 1, got {jobs!r}")

    objective = None
    if d.get("objective") is not None:
        objective = ObjectiveSpec.from_dict(d["objective"], default_seed=seed)
        if objective.kind == "builtin_quadratic" and objective.b.shape[0] != len(factors):
            raise ConfigError(f"objective.b: expected {len(factors)} entries (one per factor), "
                              f"got {objective.b.shape[0]}")
    phases = _phase_config(dict(d.get("phases") or {}))
    for name in phases.half_widths:
        if name not in seen:
            raise ConfigError(f"phases.half_widths: unknown factor {name!r}")
    if len(phases.generators) >= len(factors):
        raise ConfigError("phases.generators: need fewer generators than factors")
    return CampaignConfig(factors=factors, objective=objective, phases=phases, seed=seed, jobs=jobs)


def load_config(path) -> CampaignConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        if path.suffix.lower() in (".yaml", ".yml"):
            data = yaml.safe_load(text)
        else:
            data = json.loads(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    return config_from_dict(data)
