"""UCB selection over candidate offline models, baselines, and regret.

Arms are 0-indexed. Each iteration deploys one model for one supervised
episode; its online score is the bandit feedback.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .scoring import best_available_score, rollout_episode


class UCBSelector(BaseEstimator):
    """Upper-confidence-bound arm selection with bonus ``beta * sqrt(1 / n_i)``.

    The first ``n_arms`` calls to :meth:`select` return each arm once in
    index order; afterwards the arm maximising ``X_i / n_i + beta / sqrt(n_i)``
    is returned, ties going to the lowest index.
    """

    def __init__(self, n_arms=1, beta=1.0):
        self.n_arms = n_arms
        self.beta = beta

    def reset(self):
        if self.n_arms < 1:
            raise ValueError("n_arms must be >= 1")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        self.counts_ = np.zeros(self.n_arms, dtype=int)
        self.sums_ = np.zeros(self.n_arms)
        self.k_ = 0
        return self

    def _ensure(self):
        if not hasattr(self, "counts_"):
            self.reset()

    def ucb(self) -> np.ndarray:
        self._ensure()
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.counts_ > 0,
                            self.sums_ / self.counts_ + self.beta * np.sqrt(1.0 / self.counts_),
                            np.inf)

    def select(self) -> int:
        self._ensure()
        unpulled = np.flatnonzero(self.counts_ == 0)
        if unpulled.size:
            return int(unpulled[0])
        return int(np.argmax(self.ucb()))

    def update(self, arm: int, score: float):
        self._ensure()
        if not 0 <= arm < self.n_arms:
            raise IndexError(f"arm {arm} out of range [0, {self.n_arms})")
        self.counts_[arm] += 1
        self.sums_[arm] += score
        self.k_ += 1
        return self

    def empirical_means(self) -> np.ndarray:
        self._ensure()
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.counts_ > 0, self.sums_ / np.maximum(self.counts_, 1), -np.inf)

    def best_arm(self) -> int:
        return int(np.argmax(self.empirical_means()))


def regret(scores, s_star: float) -> np.ndarray:
    """Cumulative ``sum_k (s_k - S*)``; nonpositive in expectation."""
    if not np.isfinite(s_star):
        raise ValueError("S* must be finite")
    return np.cumsum(np.asarray(scores, dtype=float) - s_star)


@dataclass
class SelectionTrace:
    arms: list = field(default_factory=list)
    scores: list = field(default_factory=list)
    best_so_far: list = field(default_factory=list)
    s_star: float = 0.0
    method: str = "ucb"

    @property
    def K(self) -> int:
        return len(self.scores)

    @property
    def regret(self) -> np.ndarray:
        return regret(self.scores, self.s_star)

    def rows(self):
        """CSV rows ``k, arm, score, regret_paper_sign, best_arm_so_far`` (1-based ``k``)."""
        cum = self.regret
        for k in range(self.K):
            yield k + 1, self.arms[k], self.scores[k], cum[k], self.best_so_far[k]


def candidate_scores(models, env, expert, params, n=10_000, rng=None):
    """Expected online score of every candidate (exact DP or Monte Carlo)."""
    return np.array([best_available_score(m, expert, env, params, n, rng).value for m in models])


def _play(choose, models, env, expert, params, K, rng, s_star, method, feedback=None):
    trace = SelectionTrace(s_star=s_star, method=method)
    sums, counts = np.zeros(len(models)), np.zeros(len(models), dtype=int)
    for _ in range(K):
        arm = choose()
        score = rollout_episode(models[arm], expert, env, params, rng).score
        if feedback is not None:
            feedback(arm, score)
        sums[arm] += score
        counts[arm] += 1
        trace.arms.append(arm)
        trace.scores.append(score)
        means = np.where(counts > 0, sums / np.maximum(counts, 1), -np.inf)
        trace.best_so_far.append(int(np.argmax(means)))
    return trace


def run_selection(models, env, expert, params, K: int, beta: float = 1.0, rng=None,
                  s_star=None) -> SelectionTrace:
    """Deploy models chosen by UCB for ``K`` episodes and record the trace."""
    if K < 1:
        raise ValueError("K must be >= 1")
    rng = np.random.default_rng(rng)
    if s_star is None:
        s_star = float(candidate_scores(models, env, expert, params, rng=rng).max())
    ucb = UCBSelector(len(models), beta).reset()
    return _play(ucb.select, models, env, expert, params, K, rng, s_star, "ucb", ucb.update)


def run_fixed(models, arm: int, env, expert, params, K: int, rng=None, s_star=0.0,
              method="fixed") -> SelectionTrace:
    """Deploy the same arm every iteration (Highest Q and Oracle baselines)."""
    rng = np.random.default_rng(rng)
    return _play(lambda: arm, models, env, expert, params, K, rng, s_star, method)


def run_random_ensemble(models, env, expert, params, K: int, rng=None, s_star=0.0) -> SelectionTrace:
    """Deploy a uniformly random arm every iteration."""
    rng = np.random.default_rng(rng)
    return _play(lambda: baseline_random_ensemble(len(models), rng), models, env, expert, params,
                 K, rng, s_star, "random_ensemble")


def baseline_highest_q(models, dataset) -> int:
    """Arm whose mean greedy value ``Q_i(s, pi_i(s))`` over dataset states is largest."""
    if dataset is None or len(dataset) == 0:
        raise ValueError("dataset is empty")
    values = [float(np.mean(m.greedy_value(dataset.s))) for m in models]
    return int(np.argmax(values))


def baseline_random_ensemble(n_arms: int, rng: np.random.Generator) -> int:
    if n_arms < 1:
        raise ValueError("n_arms must be >= 1")
    return int(rng.integers(n_arms))


def baseline_oracle(scores) -> int:
    """Arm with the largest expected online score."""
    return int(np.argmax(scores))
