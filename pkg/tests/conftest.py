import numpy as np
import pytest

from rsmtune.doe import FactorSpec, screening_design
from rsmtune.regress import RegressionFit, model_matrix

NAMES = ["Op", "N1", "N2", "N3", "Ep", "Bh", "Lr"]

# first-order screening fit of a seven-factor CANN tuning run: intercept, then NAMES order
SCREENING_COEFS = [46.0791, -21.8703, -0.5261, -11.0132, -0.9574, -16.005, 9.1987, -7.3396]
SCREENING_PVALUES = {"Op": 0.0001, "N1": 0.8552, "N2": 0.0002, "N3": 0.7399,
                     "Ep": 0.0001, "Bh": 0.0018, "Lr": 0.012}
# residual sd implied by the reported standard errors (2.8777 * sqrt(128))
SCREENING_SIGMA = 2.8777 * np.sqrt(128)


def cann_factor_dicts():
    return [
        {"name": "Op", "kind": "cyclic", "low": 0, "high": 6, "modulus": 7},
        {"name": "N1", "kind": "integer", "low": 10, "high": 30},
        {"name": "N2", "kind": "integer", "low": 5, "high": 25},
        {"name": "N3", "kind": "integer", "low": 5, "high": 15},
        {"name": "Ep", "kind": "integer", "low": 100, "high": 900},
        {"name": "Bh", "kind": "integer", "low": 5000, "high": 15000},
        {"name": "Lr", "kind": "integer", "low": 2, "high": 4},
    ]


# second-order domains around the descent optimum (5, 20, 18, 10, 703, 8542, 3)
CCD_HALF_WIDTHS = {"Op": 1, "N1": 5, "N2": 5, "N3": 2, "Ep": 200, "Bh": 2000, "Lr": 1}


@pytest.fixture
def cann_factors():
    return [FactorSpec.from_dict(d) for d in cann_factor_dicts()]


@pytest.fixture
def screening_fit_fixture():
    return RegressionFit(order="first", term_names=["Intercept"] + NAMES,
                         coefficients=np.array(SCREENING_COEFS), n_factors=7, factor_names=NAMES)


def screening_responses(seed=0):
    """132 responses whose first-order fit reproduces the screening table.

    y = X b + e with e orthogonal to the columns of X and scaled so the
    residual variance matches the reported standard errors.
    """
    X = model_matrix(screening_design(7, 1, 4), "first")
    e = np.random.default_rng(seed).standard_normal(X.shape[0])
    e -= X @ np.linalg.lstsq(X, e, rcond=None)[0]
    dof = X.shape[0] - X.shape[1]
    e *= SCREENING_SIGMA * np.sqrt(dof) / np.linalg.norm(e)
    return X @ np.array(SCREENING_COEFS) + e


def cann_config(**phases):
    ph = {"n_c": 1, "n_01": 4, "n_t": 10, "n_c_prime": 1, "n_s": 1, "n_02": 4, "replicates": 1}
    ph.update(phases)
    return {"factors": cann_factor_dicts(), "objective": None, "phases": ph, "seed": 7}


def quadratic_problem(p=7, seed=3, scale=10.0):
    """Well-conditioned quadratic with a known minimizer, coded units."""
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(p, p))
    B = np.eye(p) + 0.15 * (A + A.T) / 2
    x_star = np.clip(rng.normal(scale=1.2, size=p), -2.0, 2.0)
    b = -2.0 * B @ x_star
    c = 1.0
    factors = [{"name": f"h{i}", "low": 0.0, "high": scale} for i in range(p)]
    return B, b, c, x_star, factors
