"""Closed-form marginal likelihood and the unnormalized model posterior.

With the Gram eigenvalues ``d_i`` of a configuration, the least-squares
coordinates ``theta = Gamma' beta_hat`` and ``x_i = alpha g k_S d_i^(lam+1)``,
the log marginal likelihood is::

    -(n/2) log(2 pi sigma2) - 1/2 sum log(1 + x_i)
        - alpha / (2 sigma2) * (rss + (1 - phi)^2 sum d_i theta_i^2 / (1 + x_i))

:class:`Scorer` evaluates this for batches of equal-size configurations,
straight from the cached ``X'X`` and ``X'y`` of the dataset, optionally
maximizing over ``g`` per configuration, and memoizes the results.
"""

from __future__ import annotations

import math
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import SINGULAR_RTOL, Dataset, GramEigen, LeastSquaresFit
from .errors import NonFiniteScore
from .prior import PriorConfig, log_binomial, log_size_prior

LOG_G_BOUNDS = (math.log(1e-4), math.log(1e8))
_SCAN_PER_DECADE = 8
_GOLDEN_ITERS = 52
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class Hyperparams:
    """Hyperparameters of the coefficient prior and the power likelihood.

    ``g=None`` means ``g`` is chosen per configuration by maximizing its
    marginal likelihood.
    """

    lam: float = 0.0
    g: Optional[float] = None
    phi: float = 0.0
    alpha: float = 0.999
    sigma2: float = 1.0

    def __post_init__(self):
        if self.g is not None and not self.g > 0:
            raise ValueError(f"g must be positive, got {self.g}")
        if not 0.0 <= self.phi <= 1.0:
            raise ValueError(f"phi must lie in [0, 1], got {self.phi}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")

    def replace(self, **kw) -> "Hyperparams":
        vals = dict(lam=self.lam, g=self.g, phi=self.phi, alpha=self.alpha, sigma2=self.sigma2)
        vals.update(kw)
        return Hyperparams(**vals)


@dataclass(frozen=True)
class ScoredModel:
    S: tuple
    log_marginal: float
    log_prior: float
    log_score: float
    g: float = math.nan
    terms: dict = field(default_factory=dict)

    @property
    def filtered(self) -> bool:
        return self.log_score == -math.inf


def _log_kd(logd: np.ndarray, lam: float) -> np.ndarray:
    """``log(k_S d_i^(lam+1))`` for spectra along the last axis."""
    log_num = np.logaddexp.reduce(-logd, axis=-1)
    log_den = np.logaddexp.reduce(lam * logd, axis=-1)
    return (log_num - log_den)[..., None] + (lam + 1.0) * logd


def _g_objective(log_g, log_kd, q, alpha, shrink_coef):
    """The ``g``-dependent part of the log marginal likelihood.

    ``log_g`` broadcasts against the leading axes of ``log_kd`` and ``q``
    (configurations along the last axis are summed).
    """
    x = np.exp(math.log(alpha) + log_g[..., None] + log_kd)
    return -0.5 * np.log1p(x).sum(axis=-1) - shrink_coef * (q / (1.0 + x)).sum(axis=-1)


def maximize_log_g(log_kd: np.ndarray, q: np.ndarray, alpha: float, shrink_coef: float,
                   bounds=LOG_G_BOUNDS) -> np.ndarray:
    """Maximize the marginal likelihood over ``log g`` for a batch of models.

    A log-spaced scan over ``bounds`` locates the best cell; golden-section
    search then refines inside the two neighbouring cells.  Returns the
    maximizing ``log g`` per model (shape ``log_kd.shape[:-1]``).
    """
    lo, hi = bounds
    npts = int(round((hi - lo) / math.log(10.0) * _SCAN_PER_DECADE)) + 1
    grid = np.linspace(lo, hi, npts)
    batch = log_kd.shape[:-1]
    vals = _g_objective(grid.reshape((npts,) + (1,) * len(batch)) + np.zeros(batch),
                        log_kd[None], q[None], alpha, shrink_coef)
    j = np.argmax(vals, axis=0)
    best_scan = np.take_along_axis(vals, j[None], axis=0)[0]
    a = grid[np.maximum(j - 1, 0)]
    b = grid[np.minimum(j + 1, npts - 1)]
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc = _g_objective(c, log_kd, q, alpha, shrink_coef)
    fd = _g_objective(d, log_kd, q, alpha, shrink_coef)
    for _ in range(_GOLDEN_ITERS):
        left = fc >= fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        nd = np.where(left, c, a + _INVPHI * (b - a))
        nc = np.where(left, b - _INVPHI * (b - a), d)
        fnew = _g_objective(np.where(left, nc, nd), log_kd, q, alpha, shrink_coef)
        fc, fd = np.where(left, fnew, fd), np.where(left, fc, fnew)
        c, d = nc, nd
    x = 0.5 * (a + b)
    fx = _g_objective(x, log_kd, q, alpha, shrink_coef)
    return np.where(fx >= best_scan, x, grid[j])


def _marginal_terms(n, logd, q, rss, h: Hyperparams, log_g):
    """Component terms of the log marginal likelihood, vectorized over models."""
    log_kd = _log_kd(logd, h.lam)
    x = np.exp(math.log(h.alpha) + np.asarray(log_g)[..., None] + log_kd)
    const = -0.5 * n * math.log(2.0 * math.pi * h.sigma2)
    occam = -0.5 * np.log1p(x).sum(axis=-1)
    rss_term = -h.alpha / (2.0 * h.sigma2) * rss
    shrink = -h.alpha * (1.0 - h.phi) ** 2 / (2.0 * h.sigma2) * (q / (1.0 + x)).sum(axis=-1)
    return const, occam, rss_term, shrink


def log_marginal(data: Dataset, S, ge: GramEigen, ls: LeastSquaresFit, h: Hyperparams) -> float:
    """Log marginal likelihood of a non-empty configuration at fixed ``h.g``.

    Raises
    ------
    NonFiniteScore
        If any term overflows.
    """
    if h.g is None:
        raise ValueError("log_marginal needs a fixed g; use estimate_g or Scorer for per-model g")
    if len(S) == 0:
        return log_null_marginal(data, h)
    logd = np.log(ge.d)
    q = ge.d * ls.theta ** 2
    parts = _marginal_terms(data.n, logd, q, ls.rss, h, math.log(h.g))
    total = float(sum(parts))
    if not math.isfinite(total):
        raise NonFiniteScore(f"log marginal of {tuple(S)} is {total}")
    return total


def log_null_marginal(data: Dataset, h: Hyperparams) -> float:
    return -0.5 * data.n * math.log(2.0 * math.pi * h.sigma2) - h.alpha / (2.0 * h.sigma2) * data.yty


def batch_spectra(data: Dataset, idx: np.ndarray):
    """Eigen-quantities for a ``(B, s)`` array of configurations.

    Returns eigenvalues (descending), ``q_i = d_i theta_i^2`` and the
    residual sum of squares for each row.
    """
    G = data.gram[idx[:, :, None], idx[:, None, :]]
    d, gamma = np.linalg.eigh(G)
    d, gamma = d[:, ::-1], gamma[:, :, ::-1]
    u = np.einsum("bij,bi->bj", gamma, data.xty[idx])
    with np.errstate(divide="ignore", invalid="ignore"):
        q = u ** 2 / d
    rss = np.maximum(data.yty - q.sum(axis=1), 0.0)
    return d, q, rss


class Scorer:
    """Memoized scorer of configurations for one dataset and hyperparameter set.

    The cache is keyed by ``(S, lam, g, phi)`` and bounded with LRU eviction.
    It is guarded by a lock so a scorer may be shared between threads.
    """

    def __init__(self, data: Dataset, h: Hyperparams, pc: PriorConfig, cache_size: int = 2 ** 20):
        if pc.lam != h.lam:
            pc = pc.with_lambda(h.lam)
        self.data = data
        self.h = h
        self.pc = pc
        self.cache_size = cache_size
        self._cache: OrderedDict = OrderedDict()
        self._lock = threading.Lock()
        self._key_tail = (h.lam, h.g, h.phi)
        self.n_evaluated = 0

    def _key(self, S):
        return (S,) + self._key_tail

    def _evaluate(self, configs: Sequence[tuple]) -> list:
        """Score configurations of one common size; returns cache records."""
        data, h, pc = self.data, self.h, self.pc
        s = len(configs[0])
        B = len(configs)
        if s == 0:
            lm = log_null_marginal(data, h)
            return [(lm, log_size_prior(0, pc), math.nan, {}) for _ in configs]
        if s > pc.R or s > data.n:
            return [(-math.inf, -math.inf, math.nan, {}) for _ in configs]
        idx = np.asarray(configs, dtype=np.intp).reshape(B, s)
        d, q, rss = batch_spectra(data, idx)
        ok = (d[:, -1] > SINGULAR_RTOL * d[:, 0]) & (d[:, 0] <= pc.kappa_max * d[:, -1])
        records = [(-math.inf, -math.inf, math.nan, {})] * B
        if not ok.any():
            return records
        dk, qk, rk = d[ok], q[ok], rss[ok]
        logd = np.log(dk)
        if h.g is None:
            shrink_coef = h.alpha * (1.0 - h.phi) ** 2 / (2.0 * h.sigma2)
            log_g = maximize_log_g(_log_kd(logd, h.lam), qk, h.alpha, shrink_coef)
        else:
            log_g = np.full(len(dk), math.log(h.g))
        const, occam, rss_term, shrink = _marginal_terms(data.n, logd, qk, rk, h, log_g)
        lm = const + occam + rss_term + shrink
        if not np.all(np.isfinite(lm)):
            raise NonFiniteScore(f"non-finite log marginal for size-{s} configurations")
        logdet = logd.sum(axis=1)
        logdet_term = -(h.lam / (2.0 * s)) * logdet
        lp = logdet_term - float(log_binomial(pc.p, s)) + log_size_prior(s, pc)
        g = np.exp(log_g)
        records = list(records)
        for k, i in enumerate(np.flatnonzero(ok)):
            terms = {
                "constant": const,
                "occam": float(occam[k]),
                "rss": float(rss_term[k]),
                "shrink": float(shrink[k]),
                "logdet": float(logdet_term[k]),
            }
            records[i] = (float(lm[k]), float(lp[k]), float(g[k]), terms)
        return records

    def _lookup(self, configs: Sequence[tuple]) -> list:
        out = [None] * len(configs)
        missing = {}
        with self._lock:
            for i, S in enumerate(configs):
                rec = self._cache.get(self._key(S))
                if rec is None:
                    missing.setdefault(len(S), []).append(i)
                else:
                    self._cache.move_to_end(self._key(S))
                    out[i] = rec
        for positions in missing.values():
            uniq = list(dict.fromkeys(configs[i] for i in positions))
            recs = dict(zip(uniq, self._evaluate(uniq)))
            self.n_evaluated += len(uniq)
            with self._lock:
                for S, rec in recs.items():
                    self._cache[self._key(S)] = rec
                while len(self._cache) > self.cache_size:
                    self._cache.popitem(last=False)
            for i in positions:
                out[i] = recs[configs[i]]
        return out

    def log_scores(self, configs: Sequence[tuple]) -> np.ndarray:
        """Log unnormalized posterior for each configuration (``-inf`` if filtered)."""
        if len(configs) == 0:
            return np.empty(0)
        return np.array([rec[0] + rec[1] for rec in self._lookup(configs)])

    def score(self, S) -> ScoredModel:
        S = tuple(S)
        lm, lp, g, terms = self._lookup([S])[0]
        return ScoredModel(S=S, log_marginal=lm, log_prior=lp, log_score=lm + lp, g=g, terms=dict(terms))

    def __len__(self):
        return len(self._cache)


def score(data: Dataset, S, h: Hyperparams, pc: PriorConfig) -> ScoredModel:
    """One-off scoring of configuration ``S`` (no shared cache)."""
    return Scorer(data, h, pc, cache_size=1).score(tuple(sorted(int(i) for i in S)))
