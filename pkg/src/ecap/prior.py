"""Prior over configurations.

The size prior puts mass proportional to ``c^-s p^-(a s)`` on ``s = 0..R``.
Within a size, configurations are weighted by ``D(S)^(-lam / 2s)`` where
``D(S)`` is the Gram determinant; the normalizing sum over all size-``s``
configurations is replaced by ``binom(p, s)``.  Configurations whose Gram
condition number exceeds ``kappa_max`` get zero mass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

DEFAULT_KAPPA_MAX = 1e8


@dataclass(frozen=True)
class PriorConfig:
    p: int
    R: int
    lam: float = 0.0
    a: float = 0.05
    c: float = 1.0
    kappa_max: float = DEFAULT_KAPPA_MAX

    def __post_init__(self):
        if not (self.a > 0 and self.c > 0):
            raise ValueError(f"a and c must be positive, got a={self.a}, c={self.c}")
        if not 0 <= self.R <= self.p:
            raise ValueError(f"rank cap R={self.R} must lie in [0, p={self.p}]")
        if not self.kappa_max > 1:
            raise ValueError(f"kappa_max must exceed 1, got {self.kappa_max}")

    def with_lambda(self, lam: float) -> "PriorConfig":
        return PriorConfig(p=self.p, R=self.R, lam=float(lam), a=self.a, c=self.c, kappa_max=self.kappa_max)


def log_binomial(p, s):
    return gammaln(np.add(p, 1.0)) - gammaln(np.add(s, 1.0)) - gammaln(np.subtract(p, s) + 1.0)


def log_size_prior(s: int, pc: PriorConfig) -> float:
    """Unnormalized log mass of configuration size ``s``."""
    if s < 0 or s > pc.R:
        return -math.inf
    return -s * math.log(pc.c) - pc.a * s * math.log(pc.p)


def size_prior_probs(pc: PriorConfig, min_size: int = 0) -> np.ndarray:
    """Normalized size prior over ``min_size..R`` (index ``i`` is size ``min_size + i``)."""
    sizes = np.arange(min_size, pc.R + 1)
    logf = -sizes * (math.log(pc.c) + pc.a * math.log(pc.p))
    w = np.exp(logf - logf.max())
    return w / w.sum()


def log_config_prior_from_spectrum(s: int, logdet: float, kappa: float, pc: PriorConfig) -> float:
    if s == 0:
        return log_size_prior(0, pc)
    if s > pc.R or not kappa <= pc.kappa_max:
        return -math.inf
    return -(pc.lam / (2.0 * s)) * logdet - float(log_binomial(pc.p, s)) + log_size_prior(s, pc)


def log_config_prior(S, ge, pc: PriorConfig) -> float:
    """Log prior mass of configuration ``S`` under the binomial approximation.

    ``ge`` is the :class:`~ecap.core.GramEigen` of ``S`` (ignored when ``S``
    is empty).  Filtered configurations return ``-inf``.
    """
    if len(S) == 0:
        return log_size_prior(0, pc)
    return log_config_prior_from_spectrum(len(S), ge.logdet, ge.kappa, pc)
