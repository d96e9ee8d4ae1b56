import itertools
import math

import numpy as np
import pytest

from ecap.core import gram_eigen, standardize
from ecap.prior import PriorConfig, log_config_prior, log_size_prior, size_prior_probs


def small_design(p=4, n=12, seed=0, rho=0.6):
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((n, p))
    X = Z.copy()
    for j in range(1, p):
        X[:, j] = rho * X[:, j - 1] + math.sqrt(1 - rho ** 2) * Z[:, j]
    return standardize(rng.standard_normal(n), X)


class TestSizePrior:
    def test_empty(self):
        assert log_size_prior(0, PriorConfig(p=500, R=99)) == 0.0

    def test_arithmetic(self):
        pc = PriorConfig(p=500, R=99, a=0.05, c=1.0)
        assert log_size_prior(2, pc) == pytest.approx(-0.1 * math.log(500), abs=1e-12)
        assert log_size_prior(2, pc) == pytest.approx(-0.62146, abs=1e-5)

    def test_geometric_ratio(self):
        pc = PriorConfig(p=50, R=20, a=0.3, c=1.7)
        for s in range(pc.R):
            ratio = math.exp(log_size_prior(s + 1, pc) - log_size_prior(s, pc))
            assert ratio == pytest.approx(1.0 / (pc.c * pc.p ** pc.a))

    def test_above_cap(self):
        assert log_size_prior(6, PriorConfig(p=10, R=5)) == -math.inf

    def test_normalized_probs(self):
        pc = PriorConfig(p=30, R=8, a=0.5)
        pr = size_prior_probs(pc, min_size=1)
        assert pr.sum() == pytest.approx(1.0)
        assert len(pr) == 8


class TestConfigPrior:
    def test_lambda_zero_exchangeable(self):
        d = small_design(p=6)
        pc = PriorConfig(p=6, R=6, lam=0.0)
        for s in (1, 2, 3):
            vals = {log_config_prior(S, gram_eigen(d, S), pc) for S in itertools.combinations(range(6), s)}
            assert max(vals) - min(vals) < 1e-12

    def test_within_size_weights_match_enumeration(self):
        d = small_design(p=4)
        pc = PriorConfig(p=4, R=4, lam=1.0)
        configs = list(itertools.combinations(range(4), 2))
        logs = np.array([log_config_prior(S, gram_eigen(d, S), pc) for S in configs])
        ours = np.exp(logs - logs.max())
        ours /= ours.sum()
        # direct determinants, no eigensolver
        w = np.array([np.linalg.det(d.X[:, S].T @ d.X[:, S]) ** (-pc.lam / 4) for S in configs])
        np.testing.assert_allclose(ours, w / w.sum(), rtol=1e-10)

    def test_condition_filter(self):
        X = np.zeros((4, 2))
        X[:, 0] = [np.sqrt(10), -np.sqrt(10), 0, 0]
        X[:, 1] = [0, 0, np.sqrt(0.25), -np.sqrt(0.25)]
        d = standardize(np.zeros(4), X, scale=False)
        ge = gram_eigen(d, (0, 1))
        assert ge.kappa == pytest.approx(40.0)
        assert log_config_prior((0, 1), ge, PriorConfig(p=2, R=2, kappa_max=20.0)) == -math.inf
        assert math.isfinite(log_config_prior((0, 1), ge, PriorConfig(p=2, R=2, kappa_max=50.0)))

    def test_null_model(self):
        assert log_config_prior((), None, PriorConfig(p=5, R=5)) == 0.0

    def test_size_penalty(self):
        p = 9
        d = small_design(p=p)
        pc = PriorConfig(p=p, R=p, lam=0.0, a=0.2, c=1.0)
        prior = {S: log_config_prior(S, gram_eigen(d, S), pc)
                 for s in range(1, p + 1) for S in itertools.combinations(range(p), s)}
        for s in range(1, p):
            small = [v for S, v in prior.items() if len(S) == s]
            big = [v for S, v in prior.items() if len(S) == s + 1]
            gap = min(small) - max(big)
            exact = math.log(pc.c * p ** pc.a) + math.log((p - s) / (s + 1))
            assert gap == pytest.approx(exact, abs=1e-10)
            if p - s >= s + 1:
                assert gap >= math.log(pc.c * p ** pc.a) + math.log((s + 1) / (p - s)) - 1e-12
                assert gap > 0

    def test_order_invariance(self):
        d = small_design(p=5)
        pc = PriorConfig(p=5, R=5, lam=-1.3)
        a = log_config_prior((0, 2, 4), gram_eigen(d, (0, 2, 4)), pc)
        b = log_config_prior((4, 0, 2), gram_eigen(d, (4, 0, 2)), pc)
        assert a == pytest.approx(b, rel=1e-12)

    def test_large_p_binomial_finite(self):
        pc = PriorConfig(p=22575, R=60, lam=0.0)
        d = small_design(p=3)
        assert math.isfinite(log_config_prior((0, 1, 2), gram_eigen(d, (0, 1, 2)), pc))

    def test_invalid(self):
        with pytest.raises(ValueError):
            PriorConfig(p=10, R=5, a=0.0)
        with pytest.raises(ValueError):
            PriorConfig(p=10, R=5, kappa_max=1.0)
