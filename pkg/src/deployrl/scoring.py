"""Supervised episode rollouts and the online score.

The per-episode score is ``alpha1 * sum_t r_t - alpha2 * sum_t 1{disagree_t}``
over at most ``horizon`` steps (undiscounted). A step disagrees when the
model's proposed action differs from the expert's (discrete) or when their
squared distance exceeds ``tau`` (continuous).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .envs import FiniteMDP, UnsupportedError, action_table


@dataclass(frozen=True)
class ScoreParams:
    alpha1: float
    alpha2: float
    horizon: int
    tau: float = 0.09

    def __post_init__(self):
        if self.alpha1 <= 0 or self.alpha2 <= 0:
            raise ValueError("alpha1 and alpha2 must be positive")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


# All built-in returns are costs, so scores are negative; alpha1 normalises
# the expert to about -0.9 on grid5.
DEFAULT_SCORE_PARAMS = {
    "grid5": ScoreParams(alpha1=0.01, alpha2=0.2, horizon=50),
    "queue2": ScoreParams(alpha1=1 / 200, alpha2=1 / 200, horizon=200),
    "pointmass": ScoreParams(alpha1=1 / 10, alpha2=1 / 100, horizon=100, tau=0.09),
}


def online_score(env_return: float, disagreements: int, params: ScoreParams) -> float:
    if disagreements < 0:
        raise ValueError("disagreements must be >= 0")
    return params.alpha1 * env_return - params.alpha2 * disagreements


def disagrees(action, expert_action, discrete: bool, tau: float) -> bool:
    if discrete:
        return int(action) != int(expert_action)
    diff = np.asarray(action, dtype=float) - np.asarray(expert_action, dtype=float)
    return float(np.sum(diff**2)) > tau


@dataclass
class EpisodeLog:
    env_return: float
    disagreements: int
    steps: int
    score: float
    transitions: Optional[list] = field(default=None, repr=False)

    def consistent(self, params: ScoreParams) -> bool:
        return (0 <= self.disagreements <= self.steps <= params.horizon
                and self.score == online_score(self.env_return, self.disagreements, params))


def rollout_episode(policy, expert, env, params: ScoreParams, rng: np.random.Generator,
                    log_transitions: bool = False) -> EpisodeLog:
    """Run the policy's own actions for one episode, counting expert disagreements."""
    s = env.reset(rng)
    total, n_dis, steps = 0.0, 0, 0
    log = [] if log_transitions else None
    if env.discrete and env.terminal[s]:
        return EpisodeLog(total, 0, 0, online_score(total, 0, params), log)
    for _ in range(params.horizon):
        a = policy.act(s)
        n_dis += disagrees(a, expert.act(s), env.discrete, params.tau)
        s2, r, done = env.step(s, a, rng)
        total += r
        steps += 1
        if log is not None:
            log.append((s, a, r, s2, done))
        s = s2
        if done:
            break
    return EpisodeLog(total, n_dis, steps, online_score(total, n_dis, params), log)


@dataclass
class ExpectedScore:
    value: float
    method: str
    n: Optional[int] = None
    stderr: Optional[float] = None

    @property
    def ci(self):
        """95% normal-approximation interval (Monte Carlo only)."""
        if self.stderr is None:
            return None
        return self.value - 1.96 * self.stderr, self.value + 1.96 * self.stderr


def exact_expected_score(actions, expert_actions, mdp: FiniteMDP, params: ScoreParams) -> float:
    """Finite-horizon DP over the Markov chain of a deterministic tabular policy.

    ``V_T = 0``; ``V_t(s) = [alpha1 r(s, pi(s)) - alpha2 1{pi(s) != piE(s)}
    + sum_s' p(s'|s, pi(s)) V_{t+1}(s')]`` for non-terminal ``s`` and 0 for
    terminal ``s``. Returns ``rho . V_0``.
    """
    states = np.arange(mdp.n_states)
    P = mdp.transitions[states, actions]
    per_step = (params.alpha1 * mdp.expected_rewards[states, actions]
                - params.alpha2 * (actions != expert_actions))
    live = ~mdp.terminal
    v = np.zeros(mdp.n_states)
    for _ in range(params.horizon):
        v = np.where(live, per_step + P @ v, 0.0)
    return float(mdp.initial_dist @ v)


def mc_scores(policy, expert, env, params: ScoreParams, n: int, rng: np.random.Generator):
    """Scores of ``n`` independent episodes, simulated as one vectorised batch."""
    discrete = env.discrete
    states = (np.array([env.reset(rng) for _ in range(n)]) if discrete
              else env.reset_batch(n, rng))
    alive = np.ones(n, dtype=bool)
    if discrete:
        pi = action_table(policy, env)
        pe = action_table(expert, env)
        alive &= ~env.terminal[states]
    score = np.zeros(n)
    for _ in range(params.horizon):
        if not alive.any():
            break
        if discrete:
            a, ae = pi[states], pe[states]
            dis = a != ae
        else:
            a = policy.predict(states)
            ae = expert.predict(states)
            dis = np.sum((np.asarray(a) - ae) ** 2, axis=1) > params.tau
        s2, r, done = env.step_batch(states, a, rng)
        score += alive * (params.alpha1 * r - params.alpha2 * dis)
        alive &= ~done
        states = s2
    return score


def expected_score_oracle(policy, expert, env, params: ScoreParams, method: str = "exact",
                          n: int = 10_000, rng=None) -> ExpectedScore:
    """Expected online score of a deterministic policy: exact DP or Monte Carlo."""
    if method == "exact":
        if not isinstance(env, FiniteMDP):
            raise UnsupportedError("exact expected score needs a finite MDP")
        value = exact_expected_score(action_table(policy, env), action_table(expert, env),
                                     env, params)
        return ExpectedScore(value, "exact-dp")
    if method == "mc":
        scores = mc_scores(policy, expert, env, params, n, np.random.default_rng(rng))
        return ExpectedScore(float(scores.mean()), "monte-carlo", n,
                             float(scores.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0)
    raise ValueError(f"unknown method {method!r}")


def best_available_score(policy, expert, env, params, n=10_000, rng=None) -> ExpectedScore:
    """Exact DP where the environment is finite, Monte Carlo otherwise."""
    method = "exact" if isinstance(env, FiniteMDP) else "mc"
    return expected_score_oracle(policy, expert, env, params, method, n, rng)
