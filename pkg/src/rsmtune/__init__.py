"""Response-surface hyperparameter tuning: designs, fits, descent, canonical analysis."""

from .doe import (CcdSpec, Design, DesignPoint, FactorSpec, ccd, d_criterion, decode, encode,
                  fractional_factorial, full_factorial, realized_design, rotatable_alpha)
from .errors import (CampaignError, ConfigError, DesignError, EvaluationError, FlatSurfaceError,
                     RankDeficiencyError, RsmError, SaturatedModelError)
from .objective import DevianceSample, ObjectiveSpec, evaluate, poisson_deviance
from .regress import RegressionFit, model_matrix, ols_fit, predict, t_pvalue
from .search import DescentStep, StationaryAnalysis, stationary_point, steepest_path

__version__ = "0.1.0"
