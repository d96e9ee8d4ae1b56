"""Dataset handling and per-configuration linear algebra.

A configuration is a sorted tuple of 0-based column indices.  Everything
downstream works from the Gram matrix ``X'X`` and the cross products
``X'y``, which a :class:`Dataset` computes once and keeps.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, ParseError, SingularGram, ZeroVarianceColumn

Configuration = tuple  # sorted tuple of int column indices

SINGULAR_RTOL = 1e-12


def as_configuration(indices: Iterable[int], p: Optional[int] = None) -> tuple:
    """Normalize ``indices`` into a sorted duplicate-free tuple."""
    S = tuple(sorted(int(i) for i in indices))
    if len(set(S)) != len(S):
        raise ValueError(f"duplicate indices in configuration {S}")
    if S and S[0] < 0:
        raise ValueError(f"negative index in configuration {S}")
    if p is not None and S and S[-1] >= p:
        raise ValueError(f"index {S[-1]} out of range for p={p}")
    return S


@dataclass(frozen=True)
class Dataset:
    """Centered response and standardized predictors.

    ``x_mean``, ``x_scale`` and ``y_mean`` record the transformation applied
    to the raw inputs so new rows can be mapped into the same coordinates.
    """

    y: np.ndarray
    X: np.ndarray
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float = 0.0
    column_names: Optional[tuple] = None

    def __post_init__(self):
        if self.X.ndim != 2 or self.y.ndim != 1 or self.X.shape[0] != self.y.shape[0]:
            raise DimensionMismatch(f"X has shape {self.X.shape} but y has shape {self.y.shape}")
        if self.n < 2 or self.p < 1:
            raise DimensionMismatch(f"need n >= 2 and p >= 1, got n={self.n}, p={self.p}")
        for arr in (self.y, self.X, self.x_mean, self.x_scale):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @cached_property
    def gram(self) -> np.ndarray:
        G = self.X.T @ self.X
        G = 0.5 * (G + G.T)
        G.setflags(write=False)
        return G

    @cached_property
    def xty(self) -> np.ndarray:
        v = self.X.T @ self.y
        v.setflags(write=False)
        return v

    @cached_property
    def yty(self) -> float:
        return float(self.y @ self.y)

    @cached_property
    def rank(self) -> int:
        return int(np.linalg.matrix_rank(self.X))

    def transform_X(self, X_new: np.ndarray) -> np.ndarray:
        X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
        if X_new.shape[1] != self.p:
            raise DimensionMismatch(f"expected {self.p} columns, got {X_new.shape[1]}")
        return (X_new - self.x_mean) / self.x_scale

    def scaling_record(self) -> dict:
        return {
            "y_mean": float(self.y_mean),
            "x_mean": [float(v) for v in self.x_mean],
            "x_scale": [float(v) for v in self.x_scale],
        }


def standardize(raw_y, raw_X, scale: bool = True, column_names: Optional[Sequence[str]] = None) -> Dataset:
    """Center ``raw_y`` and center (and by default unit-variance scale) ``raw_X``.

    Columns are scaled to unit sample standard deviation (``ddof=1``), so
    each column has squared norm ``n - 1``.

    Raises
    ------
    ZeroVarianceColumn
        If a column of ``raw_X`` is constant.
    """
    y = np.asarray(raw_y, dtype=float).ravel()
    X = np.asarray(raw_X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    x_mean = X.mean(axis=0)
    Xc = X - x_mean
    y_mean = float(y.mean())
    yc = y - y_mean
    norms = np.sqrt((Xc ** 2).sum(axis=0))
    tol = 1e-12 * np.maximum(1.0, np.abs(X).max(axis=0))
    for j in np.flatnonzero(norms <= tol * np.sqrt(X.shape[0])):
        raise ZeroVarianceColumn(int(j))
    if scale:
        x_scale = Xc.std(axis=0, ddof=1)
        Xc = Xc / x_scale
        # recentre to kill rounding drift from the division
        Xc = Xc - Xc.mean(axis=0)
    else:
        x_scale = np.ones(X.shape[1])
    names = tuple(column_names) if column_names is not None else None
    return Dataset(y=yc, X=Xc, x_mean=x_mean, x_scale=x_scale, y_mean=y_mean, column_names=names)


@dataclass(frozen=True)
class GramEigen:
    """Spectral decomposition of ``X_S' X_S`` with eigenvalues descending."""

    S: tuple
    d: np.ndarray
    gamma: np.ndarray
    logdet: float = field(init=False)
    kappa: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "logdet", float(np.log(self.d).sum()))
        object.__setattr__(self, "kappa", float(self.d[0] / self.d[-1]))

    @property
    def s(self) -> int:
        return len(self.S)

    def k(self, lam: float) -> float:
        return k_factor(self, lam)


@dataclass(frozen=True)
class LeastSquaresFit:
    beta_hat: np.ndarray
    y_hat: np.ndarray
    rss: float
    theta: np.ndarray


def _check_size(data: Dataset, S: tuple):
    if not 1 <= len(S) <= min(data.n, data.p):
        raise ValueError(f"configuration size {len(S)} outside [1, {min(data.n, data.p)}]")


def gram_eigen(data: Dataset, S: Sequence[int]) -> GramEigen:
    """Eigendecomposition of the Gram submatrix for configuration ``S``.

    ``S`` is used in the order given, so ``gamma`` rows follow that order.

    Raises
    ------
    SingularGram
        If the smallest eigenvalue is not above ``1e-12`` times the largest.
    """
    S = tuple(int(i) for i in S)
    _check_size(data, S)
    idx = np.asarray(S)
    G = data.gram[np.ix_(idx, idx)]
    d, gamma = np.linalg.eigh(G)
    d, gamma = d[::-1], gamma[:, ::-1]
    if not d[-1] > SINGULAR_RTOL * d[0]:
        raise SingularGram(f"Gram matrix of {S} is singular (d_min={d[-1]:.3g}, d_max={d[0]:.3g})")
    return GramEigen(S=S, d=d, gamma=gamma)


def k_factor(ge: GramEigen, lam: float) -> float:
    """``tr{(X_S'X_S)^-1} / tr{(X_S'X_S)^lam}`` from the eigenvalues."""
    d = ge.d
    return float(np.sum(1.0 / d) / np.sum(np.exp(lam * np.log(d))))


def least_squares(data: Dataset, S: Sequence[int], ge: GramEigen) -> LeastSquaresFit:
    S = tuple(int(i) for i in S)
    if S != ge.S:
        raise ValueError("eigensystem was computed for a different configuration")
    idx = np.asarray(S)
    u = ge.gamma.T @ data.xty[idx]
    theta = u / ge.d
    beta = ge.gamma @ theta
    y_hat = data.X[:, idx] @ beta
    rss = max(data.yty - float(np.sum(ge.d * theta ** 2)), 0.0)
    return LeastSquaresFit(beta_hat=beta, y_hat=y_hat, rss=rss, theta=theta)


def read_matrix(path, header: bool = False):
    """Read a comma-separated numeric table.

    Returns the float matrix and the header names (``None`` without header).
    """
    rows = []
    names = None
    width = None
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not f.strip() for f in rec):
                continue
            if header and names is None:
                names = [f.strip() for f in rec]
                width = len(names)
                continue
            if width is None:
                width = len(rec)
            if len(rec) != width:
                raise ParseError(f"{path}: line {lineno}: expected {width} fields, got {len(rec)}")
            try:
                rows.append([float(f) for f in rec])
            except ValueError as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from None
    if not rows:
        raise ParseError(f"{path}: no data rows")
    return np.asarray(rows, dtype=float), names


def load_dataset(x_path, y_path=None, header: bool = False, response: Optional[str] = None, scale: bool = True):
    """Load predictors and response from delimited text and standardize.

    The response comes either from ``y_path`` (single column) or from the
    column named ``response`` inside the predictor file (requires a header).
    """
    X, names = read_matrix(x_path, header=header)
    if response is not None:
        if names is None or response not in names:
            raise ParseError(f"{x_path}: response column {response!r} not found in header")
        j = names.index(response)
        y = X[:, j]
        X = np.delete(X, j, axis=1)
        names = [nm for i, nm in enumerate(names) if i != j]
    else:
        if y_path is None:
            raise ParseError("no response given: pass a response file or a response column name")
        Y, _ = read_matrix(y_path, header=header)
        if Y.shape[1] != 1:
            raise ParseError(f"{y_path}: response file must have exactly one column, got {Y.shape[1]}")
        y = Y[:, 0]
    if X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"predictors have {X.shape[0]} rows but response has {y.shape[0]}")
    return standardize(y, X, scale=scale, column_names=names)
