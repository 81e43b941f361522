"""Objectives: a seeded analytic quadratic, an external trainer process, and
the Poisson deviance loss used to score claim-frequency models.

External wire protocol (UTF-8, one line each way)::

    stdin  <- {"Op":5,"N1":20,...,"run_id":161}
    stdout -> {"loss": 0.2458}

The child must exit 0. Only the last non-empty stdout line is parsed, so a
trainer may log progress to stdout before replying.
"""

from __future__ import annotations

import json
import math
import os
import signal
import subprocess
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import xlogy

from .doe import FactorSpec, encode
from .errors import ConfigError, EvaluationError

DEFAULT_TIMEOUT = 3600.0


@dataclass
class ObjectiveSpec:
    kind: str
    B: np.ndarray | None = None
    b: np.ndarray | None = None
    c: float = 0.0
    noise_sigma: float = 0.0
    seed: int = 0
    command: list[str] = field(default_factory=list)
    timeout_seconds: float = DEFAULT_TIMEOUT

    def __post_init__(self):
        if self.kind == "builtin_quadratic":
            if self.B is None or self.b is None:
                raise ConfigError("objective: builtin_quadratic needs B and b")
            self.B = np.asarray(self.B, dtype=float)
            self.b = np.asarray(self.b, dtype=float)
            p = self.b.shape[0]
            if self.B.shape != (p, p):
                raise ConfigError(f"objective.B: expected shape ({p}, {p}), got {self.B.shape}")
            if not np.array_equal(self.B, self.B.T):
                raise ConfigError("objective.B: must be symmetric")
            if not self.noise_sigma >= 0:
                raise ConfigError("objective.noise_sigma: must be >= 0")
            if self.seed < 0:
                raise ConfigError("objective.seed: must be unsigned")
        elif self.kind == "external":
            if not self.command or not all(isinstance(a, str) for a in self.command):
                raise ConfigError("objective.command: must be a non-empty list of strings")
            if not self.timeout_seconds > 0:
                raise ConfigError("objective.timeout_seconds: must be > 0")
        else:
            raise ConfigError(f"objective.kind: must be builtin_quadratic or external, got {self.kind!r}")

    def to_dict(self) -> dict:
        if self.kind == "external":
            return {"kind": self.kind, "command": list(self.command), "timeout_seconds": self.timeout_seconds}
        return {"kind": self.kind, "B": self.B.tolist(), "b": self.b.tolist(), "c": self.c,
                "noise_sigma": self.noise_sigma, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: Mapping, default_seed: int = 0) -> "ObjectiveSpec":
        d = dict(d)
        kind = d.pop("kind", None)
        if kind == "external":
            cmd = d.get("command")
            if isinstance(cmd, str):
                cmd = cmd.split()
            return cls(kind=kind, command=list(cmd or []),
                       timeout_seconds=float(d.get("timeout_seconds", DEFAULT_TIMEOUT)))
        return cls(kind=kind, B=d.get("B"), b=d.get("b"), c=float(d.get("c", 0.0)),
                   noise_sigma=float(d.get("noise_sigma", 0.0)), seed=int(d.get("seed", default_seed)))


def quadratic_value(spec: ObjectiveSpec, coded) -> float:
    x = np.asarray(coded, dtype=float)
    return float(spec.c + spec.b @ x + x @ spec.B @ x)


def evaluate(spec: ObjectiveSpec, decoded: Mapping[str, float], run_id: int,
             factors: Sequence[FactorSpec] = ()) -> float:
    """Loss at ``decoded`` settings.

    The builtin surface is defined in coded units of ``factors`` (the
    declared domains); its noise stream is keyed by ``(seed, run_id)`` so the
    same run always sees the same draw.
    """
    if spec.kind == "builtin_quadratic":
        if len(factors) != spec.b.shape[0]:
            raise EvaluationError(f"builtin objective has {spec.b.shape[0]} factors, got {len(factors)}")
        missing = [f.name for f in factors if f.name not in decoded]
        if missing:
            raise EvaluationError(f"settings missing factors {missing}")
        x = [encode(f, decoded[f.name]) for f in factors]
        value = quadratic_value(spec, x)
        if spec.noise_sigma > 0:
            rng = np.random.default_rng([spec.seed, run_id])
            value += spec.noise_sigma * float(rng.standard_normal())
        return value
    return _run_external(spec, decoded, run_id)


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return v


def request_line(decoded: Mapping[str, float], run_id: int) -> str:
    payload = {k: _jsonable(v) for k, v in decoded.items()}
    payload["run_id"] = int(run_id)
    return json.dumps(payload, separators=(",", ":"))


def parse_reply(stdout: str) -> float:
    lines = [ln for ln in stdout.splitlines() if ln.strip()]
    if not lines:
        raise EvaluationError("objective produced no reply line")
    try:
        reply = json.loads(lines[-1])
        loss = float(reply["loss"])
    except (ValueError, TypeError, KeyError) as exc:
        raise EvaluationError(f"malformed reply {lines[-1]!r}: {exc}", stdout) from None
    if not math.isfinite(loss):
        raise EvaluationError(f"reply loss is not finite: {lines[-1]!r}", stdout)
    return loss


def _run_external(spec: ObjectiveSpec, decoded, run_id) -> float:
    line = request_line(decoded, run_id) + "\n"
    try:
        proc = subprocess.Popen(spec.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                stderr=subprocess.PIPE, text=True, encoding="utf-8",
                                start_new_session=True)
    except OSError as exc:
        raise EvaluationError(f"run {run_id}: cannot start {spec.command[0]!r}: {exc}") from None
    try:
        out, err = proc.communicate(line, timeout=spec.timeout_seconds)
    except subprocess.TimeoutExpired:
        # kill the whole session so grandchildren holding the pipes go too
        try:
            os.killpg(proc.pid, signal.SIGKILL)
        except ProcessLookupError:
            pass
        out, err = proc.communicate()
        raise EvaluationError(f"run {run_id}: objective timed out after {spec.timeout_seconds}s",
                              (err or "")[-4000:]) from None
    if proc.returncode != 0:
        raise EvaluationError(f"run {run_id}: objective exited with status {proc.returncode}",
                              (err or "")[-4000:])
    try:
        return parse_reply(out)
    except EvaluationError as exc:
        raise EvaluationError(f"run {run_id}: {exc}", (out + err)[-4000:]) from None


@dataclass
class DevianceSample:
    counts: Sequence[int]
    fitted: Sequence[float]

    def __post_init__(self):
        self.counts = np.asarray(self.counts)
        self.fitted = np.asarray(self.fitted, dtype=float)
        if self.counts.shape != self.fitted.shape or self.counts.ndim != 1:
            raise ValueError("counts and fitted must be 1-d and of equal length")
        if np.any(self.counts < 0) or not np.all(self.counts == np.floor(self.counts)):
            raise ValueError("counts must be non-negative integers")
        if not np.all(self.fitted > 0):
            raise ValueError("fitted values must be strictly positive")


def poisson_deviance(sample: DevianceSample) -> float:
    """Mean of 2[mu - N - N log(mu / N)], with the term equal to 2 mu when N = 0."""
    if not isinstance(sample, DevianceSample):
        sample = DevianceSample(*sample)
    N = sample.counts.astype(float)
    mu = sample.fitted
    terms = 2.0 * (mu - N - xlogy(N, mu) + xlogy(N, N))
    return float(np.mean(terms))
