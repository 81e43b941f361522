"""Path of steepest descent and canonical analysis of fitted surfaces."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .doe import FactorSpec, decode
from .errors import FlatSurfaceError
from .linalg import jacobi_eigvalsh
from .regress import RegressionFit, predict

DEFAULT_STEPS = 10


def default_schedule(n_t: int = DEFAULT_STEPS) -> list[float]:
    return [-float(i) for i in range(1, n_t + 1)]


@dataclass
class DescentStep:
    t: float
    s: float
    coded: tuple[float, ...]
    decoded: dict

    def to_dict(self) -> dict:
        return {"t": self.t, "s": self.s, "coded": list(self.coded), "decoded": dict(self.decoded)}

    @classmethod
    def from_dict(cls, d: dict) -> "DescentStep":
        return cls(d["t"], d["s"], tuple(d["coded"]), dict(d["decoded"]))


def _check_factors(fit: RegressionFit, factors: Sequence[FactorSpec]):
    if len(factors) != fit.n_factors:
        raise ValueError(f"fit has {fit.n_factors} factors but {len(factors)} specs were given")


def steepest_path(fit: RegressionFit, factors: Sequence[FactorSpec], t_values: Sequence[float],
                  held: Mapping[str, float] | None = None) -> list[DescentStep]:
    """Points ``(t / ||b||) b`` along the fitted gradient, one per step length.

    Negative ``t`` walks downhill. ``held`` supplies the values of factors
    outside the fit (dropped factors); they are copied into every decoded
    mapping unchanged.
    """
    if fit.order != "first":
        raise ValueError("steepest_path needs a first-order fit")
    _check_factors(fit, factors)
    b = np.asarray(fit.linear, dtype=float)
    s = float(np.linalg.norm(b))
    if not s > 0:
        raise FlatSurfaceError("first-order fit has zero gradient; no descent direction")
    direction = b / s
    steps = []
    for t in t_values:
        coded = tuple(float(v) for v in t * direction)
        decoded = dict(held or {})
        for f, c in zip(factors, coded):
            decoded[f.name] = decode(f, c)
        steps.append(DescentStep(float(t), s, coded, decoded))
    return steps


def quadratic_parts(fit: RegressionFit) -> tuple[np.ndarray, np.ndarray]:
    """``(B, b)`` so that the fitted surface is ``b0 + b.x + x'Bx``."""
    if fit.order != "second":
        raise ValueError("need a second-order fit")
    p = fit.n_factors
    coef = np.asarray(fit.coefficients, dtype=float)
    b = coef[1:1 + p].copy()
    B = np.diag(coef[1 + p:1 + 2 * p])
    k = 1 + 2 * p
    for i in range(p):
        for j in range(i + 1, p):
            B[i, j] = B[j, i] = coef[k] / 2.0
            k += 1
    return B, b


def gradient(fit: RegressionFit, coded_point) -> np.ndarray:
    x = np.asarray(coded_point, dtype=float)
    if fit.order == "first":
        return np.asarray(fit.linear, dtype=float).copy()
    B, b = quadratic_parts(fit)
    return b + 2.0 * B @ x


def classify(eigenvalues: Sequence[float], rel_tol: float = 1e-8) -> str:
    w = np.asarray(eigenvalues, dtype=float)
    scale = np.abs(w).max(initial=0.0)
    tau = rel_tol * scale
    if scale == 0.0 or np.any(np.abs(w) <= tau):
        return "degenerate"
    if np.all(w > tau):
        return "minimum"
    if np.all(w < -tau):
        return "maximum"
    return "saddle"


@dataclass
class StationaryAnalysis:
    B: np.ndarray
    b_star: np.ndarray
    eigenvalues: np.ndarray
    classification: str
    x_o_coded: tuple[float, ...] | None = None
    x_o_decoded: dict | None = None
    predicted_response: float | None = None
    outside_region: bool = False
    factor_names: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "B": [[float(v) for v in row] for row in self.B],
            "b_star": [float(v) for v in self.b_star],
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "classification": self.classification,
            "x_o_coded": None if self.x_o_coded is None else list(self.x_o_coded),
            "x_o_decoded": self.x_o_decoded,
            "predicted_response": self.predicted_response,
            "outside_region": self.outside_region,
            "factor_names": list(self.factor_names),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StationaryAnalysis":
        return cls(
            B=np.array(d["B"], dtype=float), b_star=np.array(d["b_star"], dtype=float),
            eigenvalues=np.array(d["eigenvalues"], dtype=float), classification=d["classification"],
            x_o_coded=None if d["x_o_coded"] is None else tuple(d["x_o_coded"]),
            x_o_decoded=d["x_o_decoded"], predicted_response=d["predicted_response"],
            outside_region=d["outside_region"], factor_names=list(d["factor_names"]),
        )


def stationary_point(fit: RegressionFit, factors: Sequence[FactorSpec],
                     held: Mapping[str, float] | None = None) -> StationaryAnalysis:
    """Solve ``b + 2Bx = 0`` and classify the surface by the eigenvalues of B.

    A degenerate B (an eigenvalue within 1e-8 of zero relative to the
    largest) yields no stationary point rather than an error. Points outside
    the coded cube [-1, 1]^p are still reported, with ``outside_region`` set.
    """
    _check_factors(fit, factors)
    B, b = quadratic_parts(fit)
    eig = jacobi_eigvalsh(B)
    kind = classify(eig)
    out = StationaryAnalysis(B=B, b_star=b, eigenvalues=eig, classification=kind,
                             factor_names=[f.name for f in factors])
    if kind == "degenerate":
        return out
    x = np.linalg.solve(B, -0.5 * b)
    out.x_o_coded = tuple(float(v) for v in x)
    out.predicted_response = predict(fit, x)
    out.outside_region = bool(np.any(np.abs(x) > 1.0))
    decoded = dict(held or {})
    for f, c in zip(factors, x):
        decoded[f.name] = decode(f, float(c))
    out.x_o_decoded = decoded
    return out
