"""Conditional posterior of the coefficients of a chosen configuration, and prediction.

Given ``S`` the coefficient posterior is Gaussian with precision
``(X_S'X_S + V^{-1}) / sigma2`` where ``V = g k_S (X_S'X_S)^lam``.  Both
matrices share the eigenvectors of ``X_S'X_S``, so everything is diagonal
in that basis.  The likelihood power ``alpha`` is deliberately not applied
here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Dataset, GramEigen, LeastSquaresFit, as_configuration, gram_eigen, least_squares
from .errors import DimensionMismatch
from .marginal import Hyperparams
from .tuning import estimate_g


@dataclass(frozen=True)
class CoefficientPosterior:
    S: tuple
    mean: np.ndarray
    cov: np.ndarray
    hyper: Hyperparams
    g: float

    def sd(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    def as_dict(self) -> dict:
        h = self.hyper
        return {
            "configuration": list(self.S),
            "mean": [float(v) for v in self.mean],
            "sd": [float(v) for v in self.sd()],
            "cov": [[float(v) for v in row] for row in self.cov],
            "hyper": {"lambda": h.lam, "g": float(self.g), "phi": h.phi, "alpha": h.alpha, "sigma2": h.sigma2},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CoefficientPosterior":
        hd = doc["hyper"]
        h = Hyperparams(lam=hd["lambda"], g=hd["g"], phi=hd["phi"], alpha=hd["alpha"], sigma2=hd["sigma2"])
        return cls(S=tuple(int(j) for j in doc["configuration"]), mean=np.asarray(doc["mean"], dtype=float),
                   cov=np.asarray(doc["cov"], dtype=float).reshape(len(doc["mean"]), -1), hyper=h, g=hd["g"])


def _prior_precision(ge: GramEigen, lam: float, g: float) -> np.ndarray:
    """Eigenvalues of ``V^{-1}``: ``d_i^(-lam) / (g k_S)``; zero when ``g`` is infinite."""
    if math.isinf(g):
        return np.zeros_like(ge.d)
    logd = np.log(ge.d)
    return np.exp(-lam * logd - math.log(g) - math.log(ge.k(lam)))


def coefficient_posterior(data: Dataset, S, ge: GramEigen | None = None, ls: LeastSquaresFit | None = None,
                          h: Hyperparams = Hyperparams()) -> CoefficientPosterior:
    """Posterior mean and covariance of ``beta_S`` given ``S``.

    ``h.g = None`` uses the local empirical-Bayes ``g`` of ``S``.
    """
    S = as_configuration(S, data.p)
    if not S:
        raise ValueError("the coefficient posterior needs a non-empty configuration")
    ge = gram_eigen(data, S) if ge is None else ge
    ls = least_squares(data, S, ge) if ls is None else ls
    g = h.g
    if g is None:
        g = estimate_g(data, S, ge, ls, h)
    w = _prior_precision(ge, h.lam, g)
    post_prec = ge.d + w
    # eigen-coordinates: (d theta + phi w theta) / (d + w)
    mean_eig = ls.theta * (ge.d + h.phi * w) / post_prec
    mean = ge.gamma @ mean_eig
    cov = h.sigma2 * (ge.gamma / post_prec) @ ge.gamma.T
    cov = 0.5 * (cov + cov.T)
    return CoefficientPosterior(S=S, mean=mean, cov=cov, hyper=h.replace(g=g), g=g)


def predict(post: CoefficientPosterior, X_new, scaling) -> np.ndarray:
    """Predict responses on the original scale for raw rows ``X_new``.

    ``scaling`` is the training :class:`Dataset` or its
    :meth:`~ecap.core.Dataset.scaling_record`.
    """
    rec = scaling.scaling_record() if isinstance(scaling, Dataset) else scaling
    x_mean = np.asarray(rec["x_mean"], dtype=float)
    x_scale = np.asarray(rec["x_scale"], dtype=float)
    X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
    if X_new.shape[1] != x_mean.size:
        raise DimensionMismatch(f"expected {x_mean.size} columns, got {X_new.shape[1]}")
    cols = list(post.S)
    Z = (X_new[:, cols] - x_mean[cols]) / x_scale[cols]
    return Z @ post.mean + float(rec["y_mean"])


def mspe(predictions, truth) -> float:
    a = np.asarray(predictions, dtype=float).ravel()
    b = np.asarray(truth, dtype=float).ravel()
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.size} predictions against {b.size} observed values")
    return float(np.mean((a - b) ** 2))
