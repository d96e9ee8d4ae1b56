"""Coordinate-descent lasso, adaptive lasso and marginal screening.

The lasso objective is ``1/(2n) ||y - X b||^2 + lam * sum_j w_j |b_j|``
(``w = 1`` for the plain lasso).  Coordinate descent runs on the covariance
form ``X'X / n``, ``X'y / n`` with an active-set strategy, along a
decreasing log-spaced grid with warm starts.  Each grid level is scored by
BIC on the least-squares refit of its support.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np

from .core import Dataset, as_configuration
from .errors import NoConvergence

log = logging.getLogger(__name__)

N_LEVELS = 100
MIN_RATIO = 1e-2
MAX_SWEEPS = 10_000
WEIGHT_FLOOR = 1e-6
_TOL = 1e-11


@numba.njit(cache=True)
def _sweep(G, c, w, lam, beta, Gb, coords):
    """One cyclic pass over ``coords``; returns the largest scaled change."""
    max_delta = 0.0
    for j in coords:
        gjj = G[j, j]
        z = c[j] - Gb[j] + gjj * beta[j]
        thr = lam * w[j]
        if z > thr:
            new = (z - thr) / gjj
        elif z < -thr:
            new = (z + thr) / gjj
        else:
            new = 0.0
        delta = new - beta[j]
        if delta != 0.0:
            for k in range(Gb.shape[0]):
                Gb[k] += delta * G[k, j]
            beta[j] = new
            scaled = abs(delta) * math.sqrt(gjj)
            if scaled > max_delta:
                max_delta = scaled
    return max_delta


def objective(G, c, yy_n, w, lam, beta):
    """Penalized objective in covariance form (``yy_n = y'y / n``)."""
    return 0.5 * yy_n - c @ beta + 0.5 * beta @ G @ beta + lam * np.sum(w * np.abs(beta))


def _exact_on_signs(G, c, w, lam, beta, Gb) -> bool:
    """Jump to the minimizer on the current sign pattern if it keeps the signs."""
    active = np.flatnonzero(beta)
    if active.size == 0:
        return False
    signs = np.sign(beta[active])
    try:
        sol = np.linalg.solve(G[np.ix_(active, active)], c[active] - lam * w[active] * signs)
    except np.linalg.LinAlgError:
        return False
    if not np.all(np.sign(sol) == signs):
        return False
    beta[active] = sol
    Gb[:] = G[:, active] @ sol
    return True


def _solve_level(G, c, w, lam, beta, Gb, max_sweeps=MAX_SWEEPS, tol=_TOL, trace=None, yy_n=0.0):
    """Solve one grid level in place.  Returns (converged, sweeps used).

    Full sweeps alternate with sweeps over the active set; every few active
    sweeps the exact solution on the current sign pattern is tried.
    """
    p = len(beta)
    all_coords = np.arange(p)
    sweeps = 0

    def record():
        if trace is not None:
            trace.append(objective(G, c, yy_n, w, lam, beta))

    while sweeps < max_sweeps:
        delta = _sweep(G, c, w, lam, beta, Gb, all_coords)
        sweeps += 1
        record()
        if delta < tol:
            return True, sweeps
        active = np.flatnonzero(beta)
        while sweeps < max_sweeps:
            delta = _sweep(G, c, w, lam, beta, Gb, active)
            sweeps += 1
            record()
            if delta < tol:
                break
            if sweeps % 4 == 0 and _exact_on_signs(G, c, w, lam, beta, Gb):
                record()
    return False, sweeps


def refit_rss(data: Dataset, support) -> float:
    """Residual sum of squares of the least-squares fit on ``support``."""
    idx = np.asarray(support, dtype=np.intp)
    if idx.size == 0:
        return data.yty
    G = data.gram[np.ix_(idx, idx)]
    b = data.xty[idx]
    try:
        coef = np.linalg.solve(G, b)
    except np.linalg.LinAlgError:
        coef = np.linalg.lstsq(G, b, rcond=None)[0]
    return max(data.yty - float(b @ coef), 0.0)


def bic(n: int, rss: float, size: int) -> float:
    return n * math.log(max(rss, np.finfo(float).tiny) / n) + size * math.log(n)


@dataclass
class LassoPath:
    lambdas: np.ndarray
    betas: np.ndarray
    bic: np.ndarray
    selected: int
    converged: np.ndarray
    weights: np.ndarray

    @property
    def beta(self) -> np.ndarray:
        return self.betas[self.selected]

    def support(self, level: Optional[int] = None) -> tuple:
        level = self.selected if level is None else level
        return as_configuration(np.flatnonzero(self.betas[level]))


def lambda_max(data: Dataset, weights=None) -> float:
    w = np.ones(data.p) if weights is None else np.asarray(weights, dtype=float)
    return float(np.max(np.abs(data.xty) / data.n / w))


def lasso_fit(data: Dataset, grid=None, weights=None, max_sweeps: int = MAX_SWEEPS,
              trace: Optional[list] = None, min_ratio: float = MIN_RATIO) -> LassoPath:
    """Fit the (weighted) lasso path and pick the BIC-optimal level.

    ``grid`` defaults to 100 log-spaced levels from ``lambda_max`` down to
    ``min_ratio * lambda_max``.  Levels that hit ``max_sweeps`` are logged and
    flagged in ``converged``; the path continues from their last iterate.
    If ``trace`` is a list, one inner list of per-sweep objective values is
    appended for each level.
    """
    n, p = data.n, data.p
    w = np.ones(p) if weights is None else np.asarray(weights, dtype=float)
    G = np.ascontiguousarray(data.gram / n)
    c = np.ascontiguousarray(data.xty / n)
    yy_n = data.yty / n
    if grid is None:
        lmax = lambda_max(data, w)
        grid = lmax * np.geomspace(1.0, min_ratio, N_LEVELS) if lmax > 0 else np.zeros(1)
    grid = np.asarray(grid, dtype=float)
    beta = np.zeros(p)
    Gb = np.zeros(p)
    betas = np.zeros((len(grid), p))
    scores = np.full(len(grid), np.inf)
    converged = np.ones(len(grid), dtype=bool)
    for lvl, lam in enumerate(grid):
        level_trace = [] if trace is not None else None
        ok, sweeps = _solve_level(G, c, w, lam, beta, Gb, max_sweeps=max_sweeps, trace=level_trace, yy_n=yy_n)
        if trace is not None:
            trace.append(level_trace)
        if not ok:
            converged[lvl] = False
            log.warning("%s", NoConvergence(lvl, sweeps))
        betas[lvl] = beta
        support = np.flatnonzero(beta)
        if support.size < n - 1:
            scores[lvl] = bic(n, refit_rss(data, support), support.size)
    selected = int(np.argmin(scores))
    return LassoPath(lambdas=grid, betas=betas, bic=scores, selected=selected, converged=converged, weights=w)


def kkt_violation(data: Dataset, beta: np.ndarray, lam: float, weights=None) -> float:
    """Largest violation of the lasso optimality conditions at ``beta``."""
    w = np.ones(data.p) if weights is None else np.asarray(weights, dtype=float)
    grad = (data.xty - data.gram @ beta) / data.n
    thr = lam * w
    zero = beta == 0
    viol_zero = np.maximum(np.abs(grad[zero]) - thr[zero], 0.0)
    viol_nz = np.abs(grad[~zero] - thr[~zero] * np.sign(beta[~zero]))
    return float(max(viol_zero.max(initial=0.0), viol_nz.max(initial=0.0)))


@dataclass
class AdaptiveLassoResult:
    S_hat: tuple
    beta_hat: np.ndarray
    sigma2_hat: float
    path: LassoPath


def _refit_coefficients(data: Dataset, support) -> np.ndarray:
    """Least-squares coefficients on ``support``, zero elsewhere."""
    beta = np.zeros(data.p)
    idx = np.asarray(support, dtype=np.intp)
    if idx.size:
        G = data.gram[np.ix_(idx, idx)]
        try:
            beta[idx] = np.linalg.solve(G, data.xty[idx])
        except np.linalg.LinAlgError:
            beta[idx] = np.linalg.lstsq(G, data.xty[idx], rcond=None)[0]
    return beta


def adaptive_lasso(data: Dataset) -> AdaptiveLassoResult:
    """Adaptive lasso with BIC tuning and a least-squares refit.

    Weights are ``1 / (|b_init| + 1e-6)`` where ``b_init`` is the
    least-squares refit on the support of the BIC-selected plain lasso (the
    same fit BIC scored).  The error variance estimate is the final refit's
    ``rss / (n - |S_hat|)``; an empty selection falls back to
    ``||y||^2 / (n - 1)``.
    """
    init = lasso_fit(data)
    weights = 1.0 / (np.abs(_refit_coefficients(data, init.support())) + WEIGHT_FLOOR)
    path = lasso_fit(data, weights=weights)
    S_hat = path.support()
    if len(S_hat) == 0 or len(S_hat) >= data.n:
        return AdaptiveLassoResult(S_hat=(), beta_hat=np.zeros(0), sigma2_hat=data.yty / (data.n - 1), path=path)
    coef = _refit_coefficients(data, S_hat)[list(S_hat)]
    rss = refit_rss(data, S_hat)
    return AdaptiveLassoResult(S_hat=S_hat, beta_hat=coef, sigma2_hat=rss / (data.n - len(S_hat)), path=path)


def screen_marginal(data: Dataset, K: int) -> tuple:
    """Indices of the ``K`` predictors most correlated with the response.

    Ties go to the lower index.  Returned sorted ascending.
    """
    if not 0 <= K <= data.p:
        raise ValueError(f"K={K} must lie in [0, p={data.p}]")
    score = np.abs(data.xty) / np.sqrt(np.diag(data.gram))
    order = np.argsort(-score, kind="stable")
    return as_configuration(order[:K])


def rank_marginal(data: Dataset) -> np.ndarray:
    """All predictor indices ordered by decreasing absolute correlation with ``y``."""
    score = np.abs(data.xty) / np.sqrt(np.diag(data.gram))
    return np.argsort(-score, kind="stable")
