"""Simulated designs and the replication harness for selection metrics.

Five benchmark cases with ``n = 100``, ``p = 500`` and unit noise variance:

===== ===================================== ==========================================
case  design                                true coefficients
===== ===================================== ==========================================
1     AR(1), rho = 0.8                      0.5, 0.55, ..., 0.95 on 11-15, 31-35
2     AR(1), rho = 0.8                      1, 1.5, ..., 5.5 on 11-15, 31-35
3     block (0.25, 0.75, 0.5)               0.6, 1.2, 1.8, 2.4, 3.0 on 1-5
4     block (0.75, 0.25, 0.4)               1, 1.5, 2, 2.5, 3 on 1-5
5     equicorrelated, rho = 0.25            0.6, 1.2, 1.8, 2.4, 3.0 on 1-5
===== ===================================== ==========================================

Predictor numbers above are 1-based; :class:`CaseSpec` stores 0-based
indices.  Every replication draws from its own stream of the root seed.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .core import Dataset, standardize
from .errors import NotPSD
from .lasso import lasso_fit
from .prior import PriorConfig
from .search import SearchSettings, median_probability_model, run_search, seed_stream
from .tuning import DEFAULT_N_SAMPLES, tune

log = logging.getLogger(__name__)


def gen_ar1(n: int, p: int, rho: float, seed) -> np.ndarray:
    """Rows iid normal with ``cov[j, k] = rho^|j - k|`` via the AR recursion."""
    if not abs(rho) < 1:
        raise ValueError(f"|rho| must be below 1, got {rho}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    Z = rng.standard_normal((n, p))
    X = np.empty((n, p))
    X[:, 0] = Z[:, 0]
    innov = math.sqrt(1.0 - rho * rho)
    for j in range(1, p):
        X[:, j] = rho * X[:, j - 1] + innov * Z[:, j]
    return X


def ar1_cov(p: int, rho: float) -> np.ndarray:
    idx = np.arange(p)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def block_cov(p: int, s_true: int, rho1: float, rho2: float, rho3: float) -> np.ndarray:
    C = np.full((p, p), rho3)
    C[:s_true, :s_true] = rho1
    C[s_true:, s_true:] = rho2
    np.fill_diagonal(C, 1.0)
    return C


def _block_reduced(p: int, s_true: int, rho1: float, rho2: float, rho3: float) -> np.ndarray:
    """Covariance restricted to the span of the two normalized block indicators."""
    s1, s2 = s_true, p - s_true
    off = math.sqrt(s1 * s2) * rho3
    return np.array([[1.0 + (s1 - 1) * rho1, off], [off, 1.0 + (s2 - 1) * rho2]])


def block_psd(p: int, s_true: int, rho1: float, rho2: float, rho3: float) -> bool:
    """Positive semidefiniteness of the two-block equicorrelation matrix.

    Its eigenvalues are ``1 - rho1`` and ``1 - rho2`` (within-block
    contrasts) and those of the 2x2 reduced matrix.
    """
    if (s_true > 1 and rho1 > 1) or (p - s_true > 1 and rho2 > 1):
        return False
    A = _block_reduced(p, s_true, rho1, rho2, rho3)
    if 0 < s_true < p:
        return bool(np.trace(A) >= 0 and np.linalg.det(A) >= -1e-12)
    return bool(A[0, 0] >= 0 if s_true == p else A[1, 1] >= 0)


def gen_block(n: int, p: int, s_true: int, rho1: float, rho2: float, rho3: float, seed) -> np.ndarray:
    """Rows iid ``N(0, Sigma)`` for the two-block equicorrelation matrix.

    Uses the symmetric square root of ``Sigma``: block-mean contrasts are
    scaled by ``sqrt(1 - rho)``, the two block means are mixed by the square
    root of the 2x2 reduced matrix.  Cost is O(p) per row.
    """
    if not 0 <= s_true <= p:
        raise ValueError("s_true must lie in [0, p]")
    if not block_psd(p, s_true, rho1, rho2, rho3):
        raise NotPSD(rho1, rho2, rho3)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    Z = rng.standard_normal((n, p))
    X = np.empty_like(Z)
    blocks = [(slice(0, s_true), rho1), (slice(s_true, p), rho2)]
    sums = []
    for sl, rho in blocks:
        Zb = Z[:, sl]
        m = Zb.shape[1]
        if m == 0:
            sums.append(np.zeros(n))
            continue
        mean = Zb.mean(axis=1, keepdims=True)
        X[:, sl] = math.sqrt(max(1.0 - rho, 0.0)) * (Zb - mean)
        sums.append(Zb.sum(axis=1) / math.sqrt(m))
    A = _block_reduced(p, s_true, rho1, rho2, rho3)
    w, V = np.linalg.eigh(A)
    root = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
    mixed = np.column_stack(sums) @ root.T
    for k, (sl, _) in enumerate(blocks):
        m = sl.stop - sl.start
        if m:
            X[:, sl] += mixed[:, [k]] / math.sqrt(m)
    return X


@dataclass(frozen=True)
class CaseSpec:
    case_id: int
    support: tuple
    beta: tuple
    n: int = 100
    p: int = 500
    design: str = "ar1"
    rho: tuple = (0.8,)
    sigma: float = 1.0

    def __post_init__(self):
        if len(self.support) != len(self.beta):
            raise ValueError("support and beta lengths differ")
        if self.design == "block" and not block_psd(self.p, len(self.support), *self.rho):
            raise NotPSD(*self.rho)

    def covariance(self) -> np.ndarray:
        if self.design == "ar1":
            return ar1_cov(self.p, self.rho[0])
        return block_cov(self.p, len(self.support), *self.rho)


_PAIRED_BLOCKS = tuple(range(10, 15)) + tuple(range(30, 35))


def case_spec(case_id: int, n: int = 100, p: int = 500) -> CaseSpec:
    if case_id == 1:
        return CaseSpec(1, _PAIRED_BLOCKS, tuple(np.round(np.arange(0.5, 0.951, 0.05), 10)), n, p, "ar1", (0.8,))
    if case_id == 2:
        return CaseSpec(2, _PAIRED_BLOCKS, tuple(np.round(np.arange(1.0, 5.51, 0.5), 10)), n, p, "ar1", (0.8,))
    if case_id == 3:
        return CaseSpec(3, tuple(range(5)), (0.6, 1.2, 1.8, 2.4, 3.0), n, p, "block", (0.25, 0.75, 0.5))
    if case_id == 4:
        return CaseSpec(4, tuple(range(5)), (1.0, 1.5, 2.0, 2.5, 3.0), n, p, "block", (0.75, 0.25, 0.4))
    if case_id == 5:
        return CaseSpec(5, tuple(range(5)), (0.6, 1.2, 1.8, 2.4, 3.0), n, p, "block", (0.25, 0.25, 0.25))
    raise ValueError(f"case must be in 1..5, got {case_id}")


def gen_design(spec: CaseSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.design == "ar1":
        return gen_ar1(spec.n, spec.p, spec.rho[0], rng)
    return gen_block(spec.n, spec.p, len(spec.support), *spec.rho, rng)


def gen_case(spec: CaseSpec, seed):
    """Simulate one dataset; returns the standardized data and the true support."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    X = gen_design(spec, rng)
    beta = np.zeros(spec.p)
    beta[list(spec.support)] = spec.beta
    y = X @ beta + spec.sigma * rng.standard_normal(spec.n)
    return standardize(y, X), tuple(spec.support)


@dataclass
class MetricsRow:
    method: str
    prob_exact: float
    prob_superset: float
    avg_size: float
    se_size: float
    se_exact: float
    se_superset: float
    reps: int
    failures: int = 0
    case: Optional[int] = None

    def as_dict(self) -> dict:
        return {
            "case": self.case,
            "method": self.method,
            "prob_exact": self.prob_exact,
            "prob_superset": self.prob_superset,
            "avg_size": self.avg_size,
            "se": self.se_size,
            "se_exact": self.se_exact,
            "se_superset": self.se_superset,
            "reps": self.reps,
            "failures": self.failures,
        }


def metrics(method: str, selections, truth, case: Optional[int] = None, failures: int = 0) -> MetricsRow:
    truth = set(truth)
    m = len(selections)
    exact = np.array([set(S) == truth for S in selections], dtype=float)
    sup = np.array([truth <= set(S) for S in selections], dtype=float)
    sizes = np.array([len(S) for S in selections], dtype=float)

    def binom_se(v):
        return math.sqrt(v * (1 - v) / m) if m else math.nan

    pe = float(exact.mean()) if m else math.nan
    ps = float(sup.mean()) if m else math.nan
    return MetricsRow(
        method=method,
        prob_exact=pe,
        prob_superset=ps,
        avg_size=float(sizes.mean()) if m else math.nan,
        se_size=float(sizes.std(ddof=1) / math.sqrt(m)) if m > 1 else 0.0,
        se_exact=binom_se(pe),
        se_superset=binom_se(ps),
        reps=m,
        failures=failures,
        case=case,
    )


@dataclass
class ReplicationResult:
    rep: int
    ecap: tuple
    lasso: tuple
    alasso: tuple
    lam: float
    phi: float
    sigma2: float
    seconds: float


@dataclass(frozen=True)
class RunOptions:
    settings: SearchSettings = field(default_factory=lambda: SearchSettings(iterations=200, restarts=2))
    N: int = DEFAULT_N_SAMPLES
    lam: object = "auto"
    phi: Optional[float] = None
    kappa_max: float = 1e8
    a: float = 0.05
    c: float = 1.0
    alpha: float = 0.999
    grid: Optional[tuple] = None


def select_ecap(data: Dataset, options: RunOptions, seed):
    """Full pipeline on one dataset: tune, search, median probability model."""
    pc = PriorConfig(p=data.p, R=data.rank, a=options.a, c=options.c, kappa_max=options.kappa_max)
    t = tune(data, pc, lam=options.lam, grid=options.grid, N=options.N,
             seed=np.random.SeedSequence(seed, spawn_key=(1,)), alpha=options.alpha, phi=options.phi)
    h = t.hyperparams(options.settings.g_mode)
    settings = replace(options.settings, seed=seed)
    ledger = run_search(data, h, pc.with_lambda(t.lam), settings, init=t.al.S_hat)
    return median_probability_model(ledger, data.p), t, ledger


def run_replication(spec: CaseSpec, rep: int, options: RunOptions, seed: int) -> ReplicationResult:
    t0 = time.perf_counter()
    rng = seed_stream(seed, rep, 0)
    data, _ = gen_case(spec, rng)
    rep_seed = int(seed_stream(seed, rep, 1).integers(2 ** 63))
    S_hat, t, _ = select_ecap(data, options, rep_seed)
    lasso_S = lasso_fit(data).support()
    return ReplicationResult(rep=rep, ecap=S_hat, lasso=lasso_S, alasso=t.al.S_hat, lam=t.lam, phi=t.phi,
                             sigma2=t.sigma2, seconds=time.perf_counter() - t0)


def _run_one(args):
    spec, rep, options, seed = args
    try:
        return run_replication(spec, rep, options, seed)
    except Exception as exc:  # per-replication failures are counted, not fatal
        log.warning("replication %d failed: %s", rep, exc)
        return None


def run_case(spec: CaseSpec, reps: int, options: Optional[RunOptions] = None, seed: int = 0,
             workers: int = 1, baselines: bool = False):
    """Replicate the pipeline ``reps`` times and aggregate selection metrics.

    Returns ``(rows, results)``: the ECAP :class:`MetricsRow` first, then
    lasso and adaptive-lasso rows when ``baselines`` is set.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    options = RunOptions() if options is None else options
    jobs = [(spec, r, options, seed) for r in range(reps)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            raw = list(ex.map(_run_one, jobs))
    else:
        raw = [_run_one(j) for j in jobs]
    results = [r for r in raw if r is not None]
    failures = reps - len(results)
    truth = spec.support
    rows = [metrics("ECAP", [r.ecap for r in results], truth, spec.case_id, failures)]
    if baselines:
        rows.append(metrics("lasso", [r.lasso for r in results], truth, spec.case_id, failures))
        rows.append(metrics("alasso", [r.alasso for r in results], truth, spec.case_id, failures))
    return rows, results
