"""Model matrices, least squares, and coefficient inference."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
from scipy import special

from .errors import RankDeficiencyError, SaturatedModelError

ORDERS = ("first", "second")
COND_LIMIT = 1e8


def _check_order(order: str):
    if order not in ORDERS:
        raise ValueError(f"order must be one of {ORDERS}, got {order!r}")


def n_terms(p: int, order: str) -> int:
    _check_order(order)
    return 1 + p if order == "first" else 1 + 2 * p + p * (p - 1) // 2


def term_names(p: int, order: str, names: Sequence[str] | None = None) -> list[str]:
    """Intercept, linear terms, then squares and lexicographic interactions."""
    _check_order(order)
    names = list(names) if names is not None else [f"x{j + 1}" for j in range(p)]
    if len(names) != p:
        raise ValueError(f"expected {p} factor names, got {len(names)}")
    out = ["Intercept"] + names
    if order == "second":
        out += [f"{n}^2" for n in names]
        out += [f"{names[i]}*{names[j]}" for i in range(p) for j in range(i + 1, p)]
    return out


def _coded_rows(design) -> np.ndarray:
    if hasattr(design, "matrix"):
        design = design.matrix()
    P = np.asarray(design, dtype=float)
    if P.ndim == 1:
        P = P[None, :]
    return P


def model_matrix(design, order: str = "first") -> np.ndarray:
    """Columns in :func:`term_names` order for a Design or an (n, p) array."""
    _check_order(order)
    P = _coded_rows(design)
    if P.shape[0] == 0:
        raise ValueError("design is empty")
    n, p = P.shape
    cols = [np.ones(n), *P.T]
    if order == "second":
        cols += [P[:, j] ** 2 for j in range(p)]
        cols += [P[:, i] * P[:, j] for i in range(p) for j in range(i + 1, p)]
    return np.column_stack(cols)


def check_rank(X: np.ndarray, names: Sequence[str] | None = None) -> None:
    """Raise :class:`RankDeficiencyError` naming the collinear columns."""
    X = np.asarray(X, dtype=float)
    ncol = X.shape[1]
    names = list(names) if names is not None else [f"c{j}" for j in range(ncol)]
    if np.linalg.matrix_rank(X) == ncol:
        return
    kept, dependent, partners = [], [], {}
    for j in range(ncol):
        trial = kept + [j]
        if np.linalg.matrix_rank(X[:, trial]) == len(trial):
            kept = trial
            continue
        dependent.append(names[j])
        coef, *_ = np.linalg.lstsq(X[:, kept], X[:, j], rcond=None)
        scale = max(np.abs(coef).max(initial=0.0), 1.0)
        partners[names[j]] = [names[k] for k, c in zip(kept, coef) if abs(c) > 1e-9 * scale]
    raise RankDeficiencyError(dependent, partners)


def t_pvalue(t: float, dof: int) -> float:
    """Two-sided Student-t tail probability P(|T| >= |t|)."""
    if dof < 1:
        raise ValueError("dof must be >= 1")
    if math.isnan(t):
        return math.nan
    if math.isinf(t):
        return 0.0
    return float(special.betainc(dof / 2.0, 0.5, dof / (dof + t * t)))


@dataclass
class RegressionFit:
    order: str
    term_names: list[str]
    coefficients: np.ndarray
    standard_errors: np.ndarray | None = None
    t_values: np.ndarray | None = None
    p_values: np.ndarray | None = None
    residual_variance: float | None = None
    dof: int = 0
    n_factors: int = 0
    factor_names: list[str] = field(default_factory=list)

    @property
    def has_inference(self) -> bool:
        return self.standard_errors is not None

    @property
    def linear(self) -> np.ndarray:
        return self.coefficients[1:1 + self.n_factors]

    def p_value(self, name: str) -> float:
        return float(self.p_values[self.term_names.index(name)])

    def to_dict(self) -> dict:
        def lst(a):
            return None if a is None else [float(v) for v in a]
        return {
            "order": self.order,
            "term_names": list(self.term_names),
            "factor_names": list(self.factor_names),
            "n_factors": self.n_factors,
            "coefficients": lst(self.coefficients),
            "standard_errors": lst(self.standard_errors),
            "t_values": lst(self.t_values),
            "p_values": lst(self.p_values),
            "residual_variance": self.residual_variance,
            "dof": self.dof,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionFit":
        def arr(a):
            return None if a is None else np.array(a, dtype=float)
        return cls(
            order=d["order"], term_names=list(d["term_names"]), coefficients=arr(d["coefficients"]),
            standard_errors=arr(d["standard_errors"]), t_values=arr(d["t_values"]),
            p_values=arr(d["p_values"]), residual_variance=d["residual_variance"], dof=d["dof"],
            n_factors=d["n_factors"], factor_names=list(d.get("factor_names", [])),
        )


def _solve(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients and (X'X)^-1.

    Cholesky on the normal equations; QR on X when X'X is ill conditioned.
    """
    XtX = X.T @ X
    if np.linalg.cond(XtX) <= COND_LIMIT:
        cf = scipy.linalg.cho_factor(XtX)
        b = scipy.linalg.cho_solve(cf, X.T @ y)
        cov = scipy.linalg.cho_solve(cf, np.eye(X.shape[1]))
        return b, cov
    Q, R = np.linalg.qr(X)
    b = scipy.linalg.solve_triangular(R, Q.T @ y)
    Rinv = scipy.linalg.solve_triangular(R, np.eye(R.shape[0]))
    return b, Rinv @ Rinv.T


def _factor_count(k: int, order: str) -> int:
    for p in range(k):
        if n_terms(p, order) == k:
            return p
    raise ValueError(f"{k} columns do not form a {order}-order model")


def ols_fit(X, y, names: Sequence[str] | None = None, order: str | None = None,
            fit_only: bool = False) -> RegressionFit:
    """Ordinary least squares with t-based inference.

    ``names`` are the column (term) names. With ``fit_only`` a saturated
    model returns coefficients without inference instead of raising.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    if y.shape != (n,):
        raise ValueError(f"X has {n} rows but y has shape {y.shape}")
    names = list(names) if names is not None else [f"c{j}" for j in range(k)]
    check_rank(X, names)
    dof = n - k
    if dof <= 0 and not fit_only:
        raise SaturatedModelError(f"{n} runs for {k} terms leaves no residual degrees of freedom")

    b, cov = _solve(X, y)
    order = order or "first"
    p = _factor_count(k, order)
    fit = RegressionFit(order=order, term_names=names, coefficients=b, dof=dof, n_factors=p,
                        factor_names=names[1:1 + p])
    if dof <= 0:
        return fit

    resid = y - X @ b
    s2 = float(resid @ resid) / dof
    se = np.sqrt(np.maximum(s2 * np.diag(cov), 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, b / np.where(se > 0, se, 1.0), np.copysign(np.inf, b))
    t = np.where((se == 0) & (b == 0), 0.0, t)
    pv = np.array([t_pvalue(float(v), dof) for v in t])
    fit.standard_errors, fit.t_values, fit.p_values = se, t, pv
    fit.residual_variance = s2
    return fit


def fit_design(design, y, order: str = "first", names: Sequence[str] | None = None,
               fit_only: bool = False) -> RegressionFit:
    """Build the model matrix for ``design`` and fit it."""
    X = model_matrix(design, order)
    p = _coded_rows(design).shape[1]
    return ols_fit(X, y, term_names(p, order, names), order=order, fit_only=fit_only)


def predict(fit: RegressionFit, coded_point) -> float:
    x = np.atleast_1d(np.asarray(coded_point, dtype=float))
    if x.shape != (fit.n_factors,):
        raise ValueError(f"point has dimension {x.size}, fit has {fit.n_factors} factors")
    return float(model_matrix(x[None, :], fit.order)[0] @ fit.coefficients)
