"""Factor coding and two-level / central composite design generation.

Coded units put a factor's low, mid and high levels at -1, 0 and +1. Designs
are built in coded units; :func:`decode` turns a coded coordinate back into a
runnable hyperparameter value, applying integer rounding and the out-of-bound
policy of the factor.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DesignError

KINDS = ("continuous", "integer", "cyclic")
POLICIES = ("none", "clamp", "wrap")
ROLES = ("corner", "center", "star", "descent", "confirmation")


def nint(x: float) -> int:
    """Nearest integer, ties rounded away from zero."""
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def _is_integral(x) -> bool:
    return float(x) == math.floor(float(x))


@dataclass(frozen=True)
class FactorSpec:
    """One tunable hyperparameter.

    ``low``/``high`` define the coding domain of the current phase. The
    ``clamp`` policy clamps to ``[low, high]`` unless explicit ``limits`` are
    declared, in which case those win (and survive re-centering).
    ``mid`` is the level a dropped factor is held at.
    """

    name: str
    kind: str = "continuous"
    low: float = -1.0
    high: float = 1.0
    mid: float | None = None
    modulus: int | None = None
    oob_policy: str | None = None
    limits: tuple[float, float] | None = None

    def __post_init__(self):
        where = f"factor {self.name!r}"
        if not self.name or not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_.-]*", self.name):
            raise ConfigError(f"{where}: name must be an identifier")
        if self.kind not in KINDS:
            raise ConfigError(f"{where}: kind must be one of {KINDS}, got {self.kind!r}")
        if not (math.isfinite(self.low) and math.isfinite(self.high)):
            raise ConfigError(f"{where}: low/high must be finite")
        if not self.low < self.high:
            raise ConfigError(f"{where}: low must be < high (got low={self.low}, high={self.high})")
        if self.kind != "continuous":
            if not (_is_integral(self.low) and _is_integral(self.high)):
                raise ConfigError(f"{where}: {self.kind} factors need integer low/high")
            object.__setattr__(self, "low", int(self.low))
            object.__setattr__(self, "high", int(self.high))
        if self.kind == "cyclic":
            if self.modulus is None or not _is_integral(self.modulus) or self.modulus < 1:
                raise ConfigError(f"{where}: cyclic factors need a positive integer modulus")
            object.__setattr__(self, "modulus", int(self.modulus))
        elif self.modulus is not None:
            raise ConfigError(f"{where}: modulus is only meaningful for cyclic factors")

        policy = self.oob_policy
        if policy is None:
            policy = "wrap" if self.kind == "cyclic" else "none"
        if policy not in POLICIES:
            raise ConfigError(f"{where}: oob_policy must be one of {POLICIES}, got {policy!r}")
        if policy == "wrap" and self.kind != "cyclic":
            raise ConfigError(f"{where}: wrap policy requires a cyclic factor")
        object.__setattr__(self, "oob_policy", policy)

        mid = (self.low + self.high) / 2 if self.mid is None else self.mid
        if not self.low <= mid <= self.high:
            raise ConfigError(f"{where}: mid must lie in [low, high] (got {mid})")
        if self.kind != "continuous" and _is_integral(mid):
            mid = int(mid)
        object.__setattr__(self, "mid", mid)

        if self.limits is not None:
            lo, hi = self.limits
            if not lo <= hi:
                raise ConfigError(f"{where}: limits must satisfy lower <= upper")
            object.__setattr__(self, "limits", (lo, hi))

    @property
    def m(self) -> float:
        return (self.high + self.low) / 2

    @property
    def s(self) -> float:
        return (self.high - self.low) / 2

    @property
    def bounds(self) -> tuple[float, float]:
        if self.limits is not None:
            return self.limits
        return (self.low, self.high)

    def recentered(self, center: float, half_width: float) -> "FactorSpec":
        """Same factor with the coding domain ``center +/- half_width``.

        Declared ``limits`` are carried over unchanged.
        """
        low, high = center - half_width, center + half_width
        return replace(self, low=low, high=high, mid=None)

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind, "low": self.low, "high": self.high,
             "mid": self.mid, "oob_policy": self.oob_policy}
        if self.modulus is not None:
            d["modulus"] = self.modulus
        if self.limits is not None:
            d["limits"] = list(self.limits)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FactorSpec":
        known = {"name", "kind", "low", "high", "mid", "modulus", "oob_policy", "limits", "policy"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"factor {d.get('name')!r}: unknown keys {sorted(extra)}")
        for key in ("name", "low", "high"):
            if key not in d:
                raise ConfigError(f"factor {d.get('name')!r}: missing required key {key!r}")
        limits = d.get("limits")
        return cls(
            name=d["name"],
            kind=d.get("kind", "continuous"),
            low=d["low"],
            high=d["high"],
            mid=d.get("mid"),
            modulus=d.get("modulus"),
            oob_policy=d.get("oob_policy", d.get("policy")),
            limits=tuple(limits) if limits is not None else None,
        )


def encode(factor: FactorSpec, actual: float) -> float:
    """Actual units to coded units. Values outside the domain give |coded| > 1."""
    return (actual - factor.m) / factor.s


def decode(factor: FactorSpec, coded: float):
    """Coded units to a runnable value (float for continuous, int otherwise)."""
    raw = coded * factor.s + factor.m
    lo, hi = factor.bounds
    if factor.kind == "continuous":
        if factor.oob_policy == "clamp":
            raw = min(max(raw, lo), hi)
        return float(raw)
    value = nint(raw)
    if factor.kind == "cyclic" and factor.oob_policy == "wrap":
        if not 0 <= value <= factor.modulus - 1:
            value %= factor.modulus
    elif factor.oob_policy == "clamp":
        value = int(min(max(value, lo), hi))
    return value


@dataclass(frozen=True)
class DesignPoint:
    coded: tuple[float, ...]
    role: str
    replicate: int = 0

    def __post_init__(self):
        if self.role not in ROLES:
            raise DesignError(f"unknown role {self.role!r}")
        object.__setattr__(self, "coded", tuple(float(c) for c in self.coded))


@dataclass
class Design:
    """Ordered design points in coded units, all of the same dimension."""

    points: list[DesignPoint] = field(default_factory=list)

    def __post_init__(self):
        dims = {len(p.coded) for p in self.points}
        if len(dims) > 1:
            raise DesignError(f"design points have mixed dimensions {sorted(dims)}")

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def __add__(self, other: "Design") -> "Design":
        return Design(self.points + other.points)

    @property
    def n_factors(self) -> int:
        return len(self.points[0].coded) if self.points else 0

    @property
    def roles(self) -> list[str]:
        return [p.role for p in self.points]

    def matrix(self) -> np.ndarray:
        if not self.points:
            return np.zeros((0, 0))
        return np.array([p.coded for p in self.points], dtype=float)

    @classmethod
    def from_matrix(cls, rows, role: str = "corner") -> "Design":
        return cls([DesignPoint(tuple(r), role) for r in np.atleast_2d(np.asarray(rows, float))])

    def with_point(self, coded: Sequence[float], role: str = "center") -> "Design":
        return Design(self.points + [DesignPoint(tuple(coded), role)])


def _corners(p: int) -> list[tuple[float, ...]]:
    # itertools.product varies the last position fastest
    return [tuple(float(v) for v in c) for c in itertools.product((-1.0, 1.0), repeat=p)]


def full_factorial(p: int) -> Design:
    """All 2**p corners, standard order with the last factor varying fastest."""
    if p < 1:
        raise DesignError(f"full factorial needs p >= 1, got {p}")
    return Design([DesignPoint(c, "corner") for c in _corners(p)])


_GEN_RE = re.compile(r"^\s*x(\d+)\s*=\s*([+-]?)\s*(x\d+(?:\s*[*·]\s*x\d+)*)\s*$")


def parse_generator(text: str) -> tuple[int, int, tuple[int, ...]]:
    """Parse ``"x3 = x1*x2"`` (or ``"x4 = -x1*x2*x3"``) into 0-based parts.

    Returns ``(target, sign, word)``.
    """
    m = _GEN_RE.match(text)
    if not m:
        raise DesignError(f"cannot parse generator {text!r}; expected e.g. 'x3 = x1*x2'")
    target = int(m.group(1)) - 1
    sign = -1 if m.group(2) == "-" else 1
    word = tuple(int(t) - 1 for t in re.findall(r"x(\d+)", m.group(3)))
    return target, sign, word


def fractional_factorial(p: int, generators: Iterable[str] = ()) -> Design:
    """2**(p-f) corners defined by ``f`` generator relations.

    Each generator assigns one factor column to a signed product of base
    columns (factors not assigned by any generator). The base design follows
    :func:`full_factorial` ordering.
    """
    gens = [parse_generator(g) for g in generators]
    f = len(gens)
    if p < 1:
        raise DesignError(f"fractional factorial needs p >= 1, got {p}")
    if f >= p:
        raise DesignError(f"need f < p (got f={f}, p={p})")
    targets = [g[0] for g in gens]
    if len(set(targets)) != f:
        raise DesignError("contradictory generators: a factor is assigned more than once")
    base = [j for j in range(p) if j not in targets]
    words = set()
    for target, _, word in gens:
        if not 0 <= target < p or any(not 0 <= w < p for w in word):
            raise DesignError(f"generator refers to a factor outside x1..x{p}")
        if any(w in targets for w in word):
            raise DesignError(f"generator for x{target + 1} uses a generated factor; words must use base factors")
        if len(set(word)) != len(word):
            raise DesignError(f"generator for x{target + 1} repeats a factor")
        if len(word) < 2:
            raise DesignError(f"generator for x{target + 1} aliases it with a single main effect (dependent)")
        key = frozenset(word)
        if key in words:
            raise DesignError(f"generator for x{target + 1} duplicates another generator's word (dependent)")
        words.add(key)

    points = []
    for base_row in _corners(len(base)):
        row = [0.0] * p
        for j, v in zip(base, base_row):
            row[j] = v
        for target, sign, word in gens:
            row[target] = float(sign * math.prod(row[w] for w in word))
        points.append(DesignPoint(tuple(row), "corner"))
    return Design(points)


def rotatable_alpha(p: int, f: int = 0, n_c: int = 1, n_s: int = 1) -> float:
    """Axial distance that makes a CCD rotatable: (2**(p-f) n_c / n_s) ** (1/4)."""
    return (2 ** (p - f) * n_c / n_s) ** 0.25


@dataclass(frozen=True)
class CcdSpec:
    p: int
    f: int = 0
    n_c: int = 1
    n_s: int = 1
    n_0: int = 1
    alpha: float | None = None
    generators: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "generators", tuple(self.generators))
        if self.p < 1:
            raise DesignError(f"CCD needs p >= 1, got {self.p}")
        if self.f < 0 or self.f >= self.p:
            raise DesignError(f"CCD fractionation must satisfy 0 <= f < p (got f={self.f})")
        if len(self.generators) != self.f:
            raise DesignError(f"f={self.f} needs exactly {self.f} generators, got {len(self.generators)}")
        for name in ("n_c", "n_s"):
            if getattr(self, name) < 1:
                raise DesignError(f"{name} must be >= 1")
        if self.n_0 < 0:
            raise DesignError("n_0 must be >= 0")
        if self.alpha is None:
            object.__setattr__(self, "alpha", rotatable_alpha(self.p, self.f, self.n_c, self.n_s))
        elif not self.alpha > 0:
            raise DesignError("alpha must be > 0")

    @property
    def size(self) -> int:
        return 2 ** (self.p - self.f) * self.n_c + 2 * self.p * self.n_s + self.n_0


def ccd(spec: CcdSpec) -> Design:
    """Corners (n_c blocks), then star points, then n_0 centers.

    Star points are ordered by factor, negative side first, each pair
    replicated n_s times.
    """
    base = fractional_factorial(spec.p, spec.generators) if spec.f else full_factorial(spec.p)
    points = []
    for r in range(spec.n_c):
        points += [DesignPoint(c.coded, "corner", r) for c in base]
    for j in range(spec.p):
        for sign in (-1.0, 1.0):
            row = [0.0] * spec.p
            row[j] = sign * spec.alpha
            points += [DesignPoint(tuple(row), "star", r) for r in range(spec.n_s)]
    zero = (0.0,) * spec.p
    points += [DesignPoint(zero, "center", r) for r in range(spec.n_0)]
    return Design(points)


def screening_design(k: int, n_c: int = 1, n_0: int = 1) -> Design:
    """Two-level factorial over ``k`` factors followed by center replicates."""
    corners = full_factorial(k)
    points = []
    for r in range(n_c):
        points += [DesignPoint(c.coded, "corner", r) for c in corners]
    points += [DesignPoint((0.0,) * k, "center", r) for r in range(n_0)]
    return Design(points)


def realized_design(design: Design, factors: Sequence[FactorSpec]) -> Design:
    """Re-encode each decoded point: the coded design that was actually run.

    Rounded, wrapped or clamped coordinates move to where their runnable value
    sits in this phase's coding, e.g. a wrapped optimizer star at 1 with
    m=5, s=1 lands at -4.
    """
    if design.n_factors != len(factors):
        raise DesignError(f"design has {design.n_factors} factors, got {len(factors)} specs")
    pts = []
    for pt in design:
        coded = tuple(encode(f, decode(f, c)) for f, c in zip(factors, pt.coded))
        pts.append(DesignPoint(coded, pt.role, pt.replicate))
    return Design(pts)


def d_criterion(design: Design, order: str = "first", names: Sequence[str] | None = None) -> float:
    """det((X'X)^-1) for the model matrix of the given order; smaller is better."""
    from .regress import check_rank, model_matrix, term_names

    X = model_matrix(design, order)
    check_rank(X, term_names(design.n_factors, order, names))
    sign, logdet = np.linalg.slogdet(X.T @ X)
    return float(math.exp(-logdet))
