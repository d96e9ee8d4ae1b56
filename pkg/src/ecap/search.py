"""Shotgun stochastic search with screening over the configuration posterior.

Each step scores the add / swap / delete neighbourhoods of the current
configuration (additions and swap-ins restricted to the ``K`` predictors
most correlated with the current residual), draws one candidate from each
neighbourhood in proportion to posterior mass, and moves to one of the
three with probability proportional to each neighbourhood's total mass.
Every scored configuration is kept in a :class:`VisitedLedger`.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np
from scipy.special import logsumexp

from .core import Dataset
from .errors import AllFiltered, TooLarge
from .marginal import Hyperparams, ScoredModel, Scorer
from .prior import PriorConfig, log_binomial, log_size_prior

MAX_ENUMERATE_P = 20
_INCLUSION_TOL = 1e-12


def seed_stream(seed, *key) -> np.random.Generator:
    """Generator for the sub-stream ``key`` of root ``seed``.

    Streams are PCG64 generators seeded by ``SeedSequence(seed, spawn_key=key)``;
    the simulation harness uses ``(replication,)`` and the search uses
    ``(..., chain)``.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


@dataclass(frozen=True)
class SearchSettings:
    iterations: int = 1000
    restarts: int = 3
    screen_K: int = 50
    seed: int = 0
    g_mode: str = "per-model"

    def __post_init__(self):
        if self.iterations < 1 or self.restarts < 1 or self.screen_K < 1:
            raise ValueError("iterations, restarts and screen_K must all be at least 1")
        if self.g_mode not in ("per-model", "global"):
            raise ValueError(f"g_mode must be 'per-model' or 'global', got {self.g_mode!r}")


@dataclass(frozen=True)
class Neighborhood:
    """Lazy description of the add / swap / delete neighbours of ``S``.

    ``candidates`` restricts additions and swap-ins; ``None`` means all
    predictors outside ``S``.
    """

    S: tuple
    p: int
    candidates: Optional[tuple] = None

    @property
    def incoming(self) -> tuple:
        if self.candidates is not None:
            return self.candidates
        inside = set(self.S)
        return tuple(j for j in range(self.p) if j not in inside)

    def additions(self) -> Iterator[tuple]:
        for j in self.incoming:
            yield tuple(sorted(self.S + (j,)))

    def swaps(self) -> Iterator[tuple]:
        for i in self.S:
            rest = tuple(k for k in self.S if k != i)
            for j in self.incoming:
                yield tuple(sorted(rest + (j,)))

    def deletions(self) -> Iterator[tuple]:
        for i in self.S:
            yield tuple(k for k in self.S if k != i)

    def sizes(self) -> tuple:
        m = len(self.incoming)
        return m, len(self.S) * m, len(self.S)


def neighborhood(S, p: int) -> Neighborhood:
    return Neighborhood(S=tuple(S), p=p)


def _ls_beta(data: Dataset, S: tuple) -> np.ndarray:
    idx = np.asarray(S, dtype=np.intp)
    G = data.gram[np.ix_(idx, idx)]
    try:
        return np.linalg.solve(G, data.xty[idx])
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(G, data.xty[idx], rcond=None)[0]


def screened_candidates(data: Dataset, S, beta_hat: Optional[np.ndarray], K: int) -> tuple:
    """The ``K`` predictors outside ``S`` most correlated with the residual.

    ``beta_hat`` are the least-squares coefficients of ``S`` (ignored for an
    empty ``S``).  Ordered by decreasing ``|x_j' r|``, ties to the lower
    index; values at roundoff level relative to ``||x|| ||y||`` count as ties.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    S = tuple(S)
    if S:
        idx = np.asarray(S, dtype=np.intp)
        corr = np.abs(data.xty - data.gram[:, idx] @ beta_hat)
    else:
        corr = np.abs(np.asarray(data.xty, dtype=float))
    corr = corr.copy()
    # roundoff-level residual correlations count as exact zeros so ties resolve by index
    scale = math.sqrt(float(np.max(np.diag(data.gram))) * max(data.yty, 0.0))
    corr[corr <= 1e-10 * scale] = 0.0
    if S:
        corr[list(S)] = -np.inf
    order = np.argsort(-corr, kind="stable")
    m = data.p - len(S)
    return tuple(int(j) for j in order[: min(K, m)])


class VisitedLedger:
    """Every configuration scored during a search, plus chain histories."""

    def __init__(self):
        self.scores: dict = {}
        self.best: Optional[tuple] = None
        self.best_score = -math.inf
        self.history: list = []

    def add(self, S: tuple, log_score: float):
        if S not in self.scores:
            self.scores[S] = log_score
            if log_score > self.best_score or (log_score == self.best_score and self.best is not None
                                               and S < self.best):
                self.best, self.best_score = S, log_score

    def add_many(self, configs, log_scores):
        for S, v in zip(configs, log_scores):
            self.add(S, float(v))

    def merge(self, other: "VisitedLedger") -> "VisitedLedger":
        out = VisitedLedger()
        for led in (self, other):
            for S, v in led.scores.items():
                out.add(S, v)
        out.history = self.history + other.history
        return out

    def __len__(self):
        return len(self.scores)

    def __contains__(self, S):
        return S in self.scores

    def _finite(self):
        items = [(S, v) for S, v in self.scores.items() if v > -math.inf]
        if not items:
            raise AllFiltered("every recorded configuration has zero posterior mass")
        return items

    def posterior(self) -> tuple:
        """Configurations and their mass renormalized over the ledger."""
        items = self._finite()
        configs = [S for S, _ in items]
        v = np.array([x for _, x in items])
        return configs, np.exp(v - logsumexp(v))

    def top(self, M: int = 100) -> list:
        items = sorted(self.scores.items(), key=lambda kv: (-kv[1], len(kv[0]), kv[0]))
        return items[:M]

    def inclusion_probabilities(self, p: int) -> np.ndarray:
        configs, mass = self.posterior()
        probs = np.zeros(p)
        for S, w in zip(configs, mass):
            if S:
                probs[list(S)] += w
        return np.clip(probs, 0.0, 1.0)


def median_probability_model(ledger: VisitedLedger, p: Optional[int] = None) -> tuple:
    """Predictors whose ledger-relative inclusion probability is at least 0.5."""
    configs, _ = ledger.posterior()
    if p is None:
        p = 1 + max((max(S) for S in configs if S), default=-1)
    probs = ledger.inclusion_probabilities(p)
    return tuple(int(j) for j in np.flatnonzero(probs >= 0.5 - _INCLUSION_TOL))


class _ChainState:
    __slots__ = ("S", "incoming", "blocks")

    def __init__(self, S, incoming, blocks):
        self.S = S
        self.incoming = incoming
        self.blocks = blocks


class Searcher:
    """Runs search chains on one dataset with one scorer.

    Neighbourhood scores are cached per configuration, so revisiting a state
    costs no rescoring.
    """

    def __init__(self, data: Dataset, scorer: Scorer, screen_K: int = 50):
        self.data = data
        self.scorer = scorer
        self.screen_K = screen_K
        self.ledger = VisitedLedger()
        self._nbhd: dict = {}

    def _expand(self, S: tuple) -> _ChainState:
        state = self._nbhd.get(S)
        if state is not None:
            return state
        beta = _ls_beta(self.data, S) if S else None
        incoming = screened_candidates(self.data, S, beta, self.screen_K)
        nb = Neighborhood(S=S, p=self.data.p, candidates=incoming)
        sets = [list(nb.additions()), list(nb.swaps()), list(nb.deletions())]
        flat = sets[0] + sets[1] + sets[2]
        scores = self.scorer.log_scores(flat)
        self.ledger.add_many(flat, scores)
        blocks = []
        start = 0
        for members in sets:
            sc = scores[start:start + len(members)]
            start += len(members)
            blocks.append((sc, logsumexp(sc) if len(sc) and np.isfinite(sc).any() else -math.inf))
        state = _ChainState(S, incoming, blocks)
        self._nbhd[S] = state
        return state

    def _member(self, state: _ChainState, which: int, k: int) -> tuple:
        S, inc = state.S, state.incoming
        if which == 0:
            return tuple(sorted(S + (inc[k],)))
        if which == 1:
            i, j = divmod(k, len(inc))
            return tuple(sorted(tuple(x for x in S if x != S[i]) + (inc[j],)))
        return tuple(x for x in S if x != S[k])

    def step(self, S: tuple, rng: np.random.Generator) -> tuple:
        """One search iteration from ``S``; returns the next configuration."""
        state = self._expand(S)
        picks, totals = [], []
        for which, (sc, total) in enumerate(state.blocks):
            if total == -math.inf:
                continue
            probs = np.exp(sc - total)
            k = int(rng.choice(len(sc), p=probs / probs.sum()))
            picks.append(self._member(state, which, k))
            totals.append(total)
        if not picks:
            return S
        totals = np.asarray(totals)
        w = np.exp(totals - logsumexp(totals))
        return picks[int(rng.choice(len(picks), p=w / w.sum()))]

    def run_chain(self, S0: tuple, iterations: int, rng: np.random.Generator) -> list:
        S0 = tuple(S0)
        self.ledger.add(S0, float(self.scorer.log_scores([S0])[0]))
        hist = [S0]
        S = S0
        for _ in range(iterations):
            S = self.step(S, rng)
            hist.append(S)
        self.ledger.history.append(hist)
        return hist


def sss_step(state: tuple, data: Dataset, h: Hyperparams, pc: PriorConfig, settings: SearchSettings,
             rng: np.random.Generator, searcher: Optional[Searcher] = None) -> tuple:
    """Advance a chain by one step.  ``searcher`` carries the ledger and caches."""
    if searcher is None:
        searcher = Searcher(data, Scorer(data, h, pc), settings.screen_K)
    return searcher.step(tuple(state), rng)


def run_search(data: Dataset, h: Hyperparams, pc: PriorConfig, settings: SearchSettings,
               init: Optional[tuple] = None, scorer: Optional[Scorer] = None) -> VisitedLedger:
    """Run ``settings.restarts`` chains and return the merged ledger.

    The first chain starts at ``init`` when given (typically the
    adaptive-lasso support); the others start from a random single
    predictor.  Chain ``c`` draws from stream ``(settings.seed, c)``.
    """
    scorer = Scorer(data, h, pc) if scorer is None else scorer
    searcher = Searcher(data, scorer, settings.screen_K)
    for chain in range(settings.restarts):
        rng = seed_stream(settings.seed, chain)
        if chain == 0 and init is not None:
            S0 = tuple(sorted(int(j) for j in init))
        else:
            S0 = (int(rng.integers(data.p)),)
        searcher.run_chain(S0, settings.iterations, rng)
    return searcher.ledger


@dataclass
class Enumeration:
    """Exact posterior over every configuration of size ``0..R``."""

    configs: list
    log_scores: np.ndarray
    probs: np.ndarray
    log_prior_denominators: dict = field(default_factory=dict)

    def map(self) -> tuple:
        return self.configs[int(np.argmax(self.log_scores))]

    def inclusion_probabilities(self, p: int) -> np.ndarray:
        out = np.zeros(p)
        for S, w in zip(self.configs, self.probs):
            if S:
                out[list(S)] += w
        return out

    def mpm(self, p: int) -> tuple:
        return tuple(int(j) for j in np.flatnonzero(self.inclusion_probabilities(p) >= 0.5 - _INCLUSION_TOL))

    def as_ledger(self) -> VisitedLedger:
        led = VisitedLedger()
        led.add_many(self.configs, self.log_scores)
        return led


def enumerate_exact(data: Dataset, h: Hyperparams, pc: PriorConfig, scorer: Optional[Scorer] = None) -> Enumeration:
    """Score every configuration with at most ``R`` predictors.

    Also records, per size ``s``, the log of the exact within-size prior
    normalizer ``sum D(S)^(-lam/2s)`` over unfiltered configurations.

    Raises
    ------
    TooLarge
        If ``p > 20``.
    """
    if data.p > MAX_ENUMERATE_P:
        raise TooLarge(f"enumeration needs p <= {MAX_ENUMERATE_P}, got p={data.p}")
    scorer = Scorer(data, h, pc) if scorer is None else scorer
    configs, scores = [], []
    denominators = {}
    for s in range(0, min(pc.R, data.p) + 1):
        size_configs = list(itertools.combinations(range(data.p), s))
        sc = scorer.log_scores(size_configs)
        configs.extend(size_configs)
        scores.append(sc)
        if s > 0:
            # prior = -lam/(2s) logdet - logbinom + logf, so recover the determinant term
            det_terms = sc * 0.0
            for k, S in enumerate(size_configs):
                rec = scorer.score(S)
                det_terms[k] = rec.log_prior + float(log_binomial(pc.p, s)) - log_size_prior(s, pc)
            finite = det_terms[np.isfinite(det_terms)]
            denominators[s] = float(logsumexp(finite)) if finite.size else -math.inf
    log_scores = np.concatenate(scores)
    if not np.isfinite(log_scores).any():
        raise AllFiltered("every configuration is filtered")
    probs = np.exp(log_scores - logsumexp(log_scores))
    return Enumeration(configs=configs, log_scores=log_scores, probs=probs, log_prior_denominators=denominators)
