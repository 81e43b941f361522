"""Exception hierarchy shared by every module.

Anything deriving from :class:`RsmError` is a domain error: the CLI maps it
to exit code 1 and leaves the campaign directory untouched.
"""


class RsmError(Exception):
    """Base class for domain errors."""


class ConfigError(RsmError, ValueError):
    """Invalid factor declaration or campaign configuration."""


class DesignError(RsmError, ValueError):
    """Invalid design request (bad generators, bad CCD spec, ...)."""


class RankDeficiencyError(RsmError, ValueError):
    """Model matrix lacks full column rank.

    ``columns`` names the columns that are linear combinations of earlier ones,
    ``partners`` maps each of them to the earlier columns it depends on.
    """

    def __init__(self, columns, partners=None):
        self.columns = list(columns)
        self.partners = dict(partners or {})
        parts = []
        for c in self.columns:
            deps = self.partners.get(c)
            parts.append(f"{c} ~ {' + '.join(deps)}" if deps else c)
        super().__init__("model matrix is rank deficient; collinear columns: " + "; ".join(parts))


class SaturatedModelError(RsmError, ValueError):
    """No residual degrees of freedom left for inference."""


class FlatSurfaceError(RsmError, ValueError):
    """First-order fit has a zero gradient; no descent direction exists."""


class EvaluationError(RsmError):
    """Objective evaluation failed; ``diagnostics`` carries captured output."""

    def __init__(self, message, diagnostics=""):
        super().__init__(message)
        self.diagnostics = diagnostics


class CampaignError(RsmError):
    """Illegal campaign transition or submission."""
