"""Empirical-Bayes choice of the hyperparameters.

* ``sigma2``: mean squared error of the adaptive-lasso refit.
* ``phi``: positive-part James-Stein factor from the adaptive-lasso fit,
  clamped at 0.7.
* ``g``: maximizer of the marginal likelihood of a given configuration.
* ``lam``: maximizer of an importance-sampling estimate of the overall
  marginal likelihood, with configurations drawn from the ``lam = 0`` prior
  and one sample set shared across the whole grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .core import Dataset, GramEigen, LeastSquaresFit, gram_eigen, least_squares
from .errors import DegenerateObjective
from .lasso import AdaptiveLassoResult, adaptive_lasso
from .marginal import Hyperparams, _log_kd, _marginal_terms, batch_spectra, maximize_log_g
from .prior import PriorConfig, size_prior_probs

ALPHA = 0.999
SIZE_EXPONENT = 0.05
SIZE_BASE = 1.0
PHI_CAP = 0.7
DEFAULT_N_SAMPLES = 500


def default_hyperparams() -> tuple:
    """``(alpha, a, c)`` used when nothing is overridden."""
    return ALPHA, SIZE_EXPONENT, SIZE_BASE


def default_lambda_grid() -> np.ndarray:
    return np.round(np.arange(-20, 21) * 0.1, 10)


def sample_pi0(pc: PriorConfig, N: int, seed) -> list:
    """Draw ``N`` non-empty configurations from the ``lam = 0`` prior.

    A size is drawn from the normalized size prior on ``1..R``, then a
    uniformly random subset of that size.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    rng = np.random.default_rng(seed)
    probs = size_prior_probs(pc, min_size=1)
    sizes = rng.choice(np.arange(1, pc.R + 1), size=N, p=probs)
    return [tuple(sorted(int(j) for j in rng.choice(pc.p, size=s, replace=False))) for s in sizes]


@dataclass
class LambdaObjective:
    grid: np.ndarray
    values: np.ndarray
    N: int
    seed: object
    samples: list = field(repr=False)
    lam_hat: float = math.nan

    def as_rows(self):
        return [(float(l), float(v)) for l, v in zip(self.grid, self.values)]


def _pick_lambda(grid, values) -> float:
    best = np.max(values)
    ties = [float(l) for l, v in zip(grid, values) if v == best]
    return min(ties, key=lambda l: (abs(l), l))


def estimate_lambda(data: Dataset, h_partial: Hyperparams, pc: PriorConfig, grid=None,
                    N: int = DEFAULT_N_SAMPLES, seed=0, samples: Optional[Sequence[tuple]] = None,
                    log_sample_weights=None, g_of_lambda: Optional[Callable[[float], float]] = None):
    """Grid-maximize the importance-sampling estimate of ``log m_lam(Y)``.

    Parameters
    ----------
    h_partial : Hyperparams
        Supplies ``phi``, ``alpha``, ``sigma2`` and (unless ``g_of_lambda``
        is given) a fixed ``g``; its ``lam`` is ignored.
    samples : sequence of configurations, optional
        Overrides the draw from :func:`sample_pi0`.  With
        ``log_sample_weights`` (log of ``pi_0`` mass per sample, up to a
        constant) the estimate becomes an exact weighted sum, which makes an
        enumeration of all configurations reproduce ``m_lam(Y)`` exactly.
    g_of_lambda : callable, optional
        ``g`` to use at each grid point.

    Returns
    -------
    (lam_hat, LambdaObjective)
    """
    grid = default_lambda_grid() if grid is None else np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty lambda grid")
    if g_of_lambda is None:
        if h_partial.g is None:
            raise ValueError("estimate_lambda needs a fixed g or g_of_lambda")
        g_of_lambda = lambda lam: h_partial.g  # noqa: E731
    if samples is None:
        samples = sample_pi0(pc, N, seed)
    samples = [tuple(S) for S in samples]
    lw0 = np.zeros(len(samples)) if log_sample_weights is None else np.asarray(log_sample_weights, dtype=float)

    groups = {}
    for i, S in enumerate(samples):
        if 1 <= len(S) <= pc.R:
            groups.setdefault(len(S), []).append(i)
    blocks = []
    for s, pos in sorted(groups.items()):
        idx = np.asarray([samples[i] for i in pos], dtype=np.intp)
        d, q, rss = batch_spectra(data, idx)
        ok = (d[:, -1] > 1e-12 * d[:, 0]) & (d[:, 0] <= pc.kappa_max * d[:, -1])
        if ok.any():
            blocks.append((s, np.log(d[ok]), q[ok], rss[ok], lw0[np.asarray(pos)[ok]]))

    values = np.full(grid.shape, -np.inf)
    for gi, lam in enumerate(grid):
        h = h_partial.replace(lam=float(lam), g=None)
        log_g = math.log(g_of_lambda(float(lam)))
        num, den = [], []
        for s, logd, q, rss, lw in blocks:
            const, occam, rss_term, shrink = _marginal_terms(data.n, logd, q, rss, h, log_g)
            lm = const + occam + rss_term + shrink
            lwt = lw - (lam / (2.0 * s)) * logd.sum(axis=1)
            num.append(lm + lwt)
            den.append(lwt)
        if num:
            values[gi] = logsumexp(np.concatenate(num)) - logsumexp(np.concatenate(den))
    finite = np.isfinite(values)
    if not finite.any():
        raise DegenerateObjective("lambda objective is -inf at every grid point")
    lam_hat = _pick_lambda(grid[finite], values[finite])
    obj = LambdaObjective(grid=grid, values=values, N=len(samples), seed=seed, samples=samples, lam_hat=lam_hat)
    return lam_hat, obj


def estimate_g(data: Dataset, S, ge: GramEigen, ls: LeastSquaresFit, h_partial: Hyperparams) -> float:
    """Local empirical-Bayes ``g``: maximizer of the marginal likelihood of ``S``.

    Searches ``g`` in ``[1e-4, 1e8]`` (log-spaced scan, then golden section).
    """
    logd = np.log(ge.d)[None]
    q = (ge.d * ls.theta ** 2)[None]
    shrink_coef = h_partial.alpha * (1.0 - h_partial.phi) ** 2 / (2.0 * h_partial.sigma2)
    return float(np.exp(maximize_log_g(_log_kd(logd, h_partial.lam), q, h_partial.alpha, shrink_coef)[0]))


def phi_from_fit(beta_norm2: float, sigma2: float, trace_inv: float) -> tuple:
    """James-Stein factor and its clamp: returns ``(phi_hat, phi_tilde)``."""
    risk = sigma2 * trace_inv
    denom = beta_norm2 + risk
    phi_hat = max(1.0 - 2.0 * risk / denom, 0.0) if denom > 0 else 0.0
    return phi_hat, min(phi_hat, PHI_CAP)


def estimate_phi(data: Dataset, al: Optional[AdaptiveLassoResult] = None) -> float:
    """Clamped shrinkage factor from the adaptive-lasso selection (0 if it is empty)."""
    al = adaptive_lasso(data) if al is None else al
    if len(al.S_hat) == 0:
        return 0.0
    ge = gram_eigen(data, al.S_hat)
    trace_inv = float(np.sum(1.0 / ge.d))
    return phi_from_fit(float(al.beta_hat @ al.beta_hat), al.sigma2_hat, trace_inv)[1]


@dataclass
class Tuning:
    """Outcome of the full tuning sequence for one dataset."""

    sigma2: float
    phi: float
    lam: float
    g_global: float
    alpha: float
    al: AdaptiveLassoResult = field(repr=False)
    objective: Optional[LambdaObjective] = field(default=None, repr=False)

    def hyperparams(self, g_mode: str = "per-model") -> Hyperparams:
        g = None if g_mode == "per-model" else self.g_global
        return Hyperparams(lam=self.lam, g=g, phi=self.phi, alpha=self.alpha, sigma2=self.sigma2)


def global_g(data: Dataset, S, h_partial: Hyperparams) -> float:
    """``g`` estimated on configuration ``S``; falls back to ``g = n`` for an empty ``S``."""
    if len(S) == 0:
        return float(data.n)
    ge = gram_eigen(data, S)
    return estimate_g(data, S, ge, least_squares(data, S, ge), h_partial)


def tune(data: Dataset, pc: PriorConfig, lam="auto", grid=None, N: int = DEFAULT_N_SAMPLES, seed=0,
         alpha: float = ALPHA, phi: Optional[float] = None, al: Optional[AdaptiveLassoResult] = None) -> Tuning:
    """Run the tuning sequence: sigma2 and phi, then lam, then a global g.

    ``lam="auto"`` estimates lambda with one ``g``, fitted on the
    adaptive-lasso configuration under the independence prior (``lam = 0``)
    and held fixed along the grid; a number fixes lambda instead.
    ``phi`` overrides the James-Stein estimate.
    """
    al = adaptive_lasso(data) if al is None else al
    phi_t = estimate_phi(data, al) if phi is None else float(phi)
    base = Hyperparams(lam=0.0, g=None, phi=phi_t, alpha=alpha, sigma2=al.sigma2_hat)
    objective = None
    if isinstance(lam, str):
        if lam != "auto":
            raise ValueError(f"lambda must be a number or 'auto', got {lam!r}")
        fixed = base.replace(g=global_g(data, al.S_hat, base))
        lam_value, objective = estimate_lambda(data, fixed, pc, grid=grid, N=N, seed=seed)
    else:
        lam_value = float(lam)
    g_glob = global_g(data, al.S_hat, base.replace(lam=lam_value))
    return Tuning(sigma2=al.sigma2_hat, phi=phi_t, lam=lam_value, g_global=g_glob, alpha=alpha, al=al,
                  objective=objective)
