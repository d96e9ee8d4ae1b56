"""Exception types raised across the package.

Every class carries a stable ``code`` used as the machine-parseable prefix
when the CLI reports an error.
"""

from __future__ import annotations


class EcapError(Exception):
    code = "ECAP_ERROR"


class ZeroVarianceColumn(EcapError):
    code = "ZERO_VARIANCE_COLUMN"

    def __init__(self, column: int):
        super().__init__(f"column {column} is constant after centering")
        self.column = column


class SingularGram(EcapError):
    code = "SINGULAR_GRAM"


class NonFiniteScore(EcapError):
    code = "NON_FINITE_SCORE"


class NoConvergence(EcapError):
    code = "NO_CONVERGENCE"

    def __init__(self, level: int, sweeps: int):
        super().__init__(f"coordinate descent did not converge at level {level} after {sweeps} sweeps")
        self.level = level
        self.sweeps = sweeps


class DegenerateObjective(EcapError):
    code = "DEGENERATE_OBJECTIVE"


class AllFiltered(EcapError):
    code = "ALL_FILTERED"


class TooLarge(EcapError):
    code = "TOO_LARGE"


class NotPSD(EcapError):
    code = "NOT_PSD"

    def __init__(self, rho1: float, rho2: float, rho3: float):
        super().__init__(f"block correlation ({rho1}, {rho2}, {rho3}) is not positive semidefinite")
        self.rhos = (rho1, rho2, rho3)


class DimensionMismatch(EcapError):
    code = "DIMENSION_MISMATCH"


class ParseError(EcapError):
    code = "PARSE_ERROR"


class ConfigError(EcapError):
    code = "CONFIG_ERROR"
