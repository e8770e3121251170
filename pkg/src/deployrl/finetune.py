"""Online fine-tuning from expert overrides.

During deployment the model proposes an action at every step. When the
expert disagrees (``a != a_E`` for discrete actions, ``|a - a_E|^2 > tau``
for continuous ones) the expert's action is executed instead and the
transition ``(s, a_E, r, s')`` is logged. After each episode the logged
overrides are used to fine-tune the model and then discarded.

Discrete models are trained on the squared Bellman error plus a large-margin
term; continuous models get a critic Bellman step followed by an actor step on
``-Q(s, pi(s)) + bc_weight * |pi(s) - a_E|^2``.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .approximators import Adam, grad
from .losses import (bellman_loss_continuous, continuous_targets, discrete_targets,
                     margin_finetune_loss)
from .offline import Dataset, _minibatches, train_actor_steps
from .scoring import EpisodeLog, ScoreParams, disagrees, online_score
from .validation import check_batch_size


def deploy_with_overrides(model, expert, env, params: ScoreParams, rng: np.random.Generator,
                          iteration: int = 0):
    """One supervised episode; returns the :class:`EpisodeLog` and the override dataset."""
    s = env.reset(rng)
    rows, total, steps = [], 0.0, 0
    if not (env.discrete and env.terminal[s]):
        for _ in range(params.horizon):
            a = model.act(s)
            a_exp = expert.act(s)
            override = disagrees(a, a_exp, env.discrete, params.tau)
            executed = a_exp if override else a
            s2, r, done = env.step(s, executed, rng)
            if override:
                rows.append((s, a_exp, r, s2, done))
            total += r
            steps += 1
            s = s2
            if done:
                break
    overrides = Dataset.from_transitions(rows, env, meta={"iteration": iteration})
    log = EpisodeLog(total, len(rows), steps, online_score(total, len(rows), params))
    return log, overrides


def _q_model(model):
    return model.q_ if hasattr(model, "q_") else model


def finetune_discrete(model, overrides: Dataset, delta: float = 1.0, epochs: int = 5,
                      batch_size: int = 32, gamma: float = 0.95, opt=None, learning_rate=0.1,
                      rng=None):
    """Descent on Bellman error plus large-margin loss over the override set.

    The bootstrap uses ``max_a' Q(s', a')`` of the current table, held fixed
    within each minibatch. ``model`` is a fitted learner or a bare Q model;
    it is updated in place.
    """
    if len(overrides) == 0:
        raise ValueError("override set is empty; callers must skip fine-tuning")
    if delta <= 0:
        raise ValueError("delta must be positive")
    q = _q_model(model)
    rng = np.random.default_rng(rng)
    opt = opt or Adam(q.params, lr=learning_rate)
    batch_size = check_batch_size(batch_size, len(overrides))
    for _ in range(epochs):
        for bi, idx in enumerate(_minibatches(len(overrides), batch_size, rng)):
            batch = overrides.batch(idx)
            y = discrete_targets(q, batch, gamma)
            _, g = grad(lambda: margin_finetune_loss(q, batch, y, delta), bi)
            opt.step(q.params, g)
    return model


def finetune_critic_continuous(critic, actor, overrides: Dataset, epochs: int = 5,
                               batch_size: int = 32, gamma: float = 0.95, opt=None,
                               learning_rate=1e-3, rng=None):
    """Squared Bellman error on the override set, bootstrapping through the actor."""
    if len(overrides) == 0:
        raise ValueError("override set is empty; callers must skip fine-tuning")
    rng = np.random.default_rng(rng)
    opt = opt or Adam(critic.params, lr=learning_rate)
    batch_size = check_batch_size(batch_size, len(overrides))
    for _ in range(epochs):
        for bi, idx in enumerate(_minibatches(len(overrides), batch_size, rng)):
            batch = overrides.batch(idx)
            y = continuous_targets(critic, actor, batch, gamma)
            _, g = grad(lambda: bellman_loss_continuous(critic, batch, y), bi)
            opt.step(critic.params, g)
    return critic


def finetune_actor_continuous(actor, critic, overrides: Dataset, epochs: int = 5,
                              batch_size: int = 32, bc_weight: float = 1.0, opt=None,
                              learning_rate=1e-3, rng=None):
    """Raise ``Q(s, pi(s))`` while pulling ``pi(s)`` toward the expert's logged actions."""
    if len(overrides) == 0:
        raise ValueError("override set is empty; callers must skip fine-tuning")
    rng = np.random.default_rng(rng)
    opt = opt or Adam(actor.params, lr=learning_rate)
    return train_actor_steps(actor, critic, overrides.s, overrides.a, bc_weight, opt,
                             batch_size, epochs, rng)


@dataclass
class FinetuneTrace:
    env_return: list = field(default_factory=list)
    disagreements: list = field(default_factory=list)
    overrides: list = field(default_factory=list)
    scores: list = field(default_factory=list)

    @property
    def K(self) -> int:
        return len(self.scores)

    def append(self, log: EpisodeLog, n_overrides: int):
        self.env_return.append(log.env_return)
        self.disagreements.append(log.disagreements)
        self.overrides.append(n_overrides)
        self.scores.append(log.score)

    def rows(self):
        """CSV rows ``k, env_return, disagreements, overrides, score`` (1-based ``k``)."""
        for k in range(self.K):
            yield k + 1, self.env_return[k], self.disagreements[k], self.overrides[k], self.scores[k]


def _concat(a: Dataset, b: Dataset) -> Dataset:
    if len(a) == 0:
        return b
    return Dataset(*(np.concatenate([getattr(a, c), getattr(b, c)]) for c in ("s", "a", "r", "s2", "done")),
                   env_id=a.env_id, n_states=a.n_states, n_actions=a.n_actions,
                   action_low=a.action_low, action_high=a.action_high, meta=b.meta)


class OnlineFineTuner(BaseEstimator):
    """Deploy a model under expert supervision and fine-tune it after every episode.

    Parameters
    ----------
    n_iterations : int
        Number of deployment episodes.
    delta : float
        Margin for discrete models.
    tau : float
        Override threshold on the squared action distance for continuous models.
    learning_rate : float or None
        ``None`` picks 0.1 for Q-tables and 1e-3 for networks.
    replay : bool
        Keep overrides from earlier iterations instead of discarding them.
        Off by default; on is a non-faithful variant.
    """

    def __init__(self, n_iterations=200, delta=1.0, tau=0.09, epochs=5, batch_size=32,
                 learning_rate=None, bc_weight=1.0, replay=False, score_params=None,
                 random_state=None):
        self.n_iterations = n_iterations
        self.delta = delta
        self.tau = tau
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.bc_weight = bc_weight
        self.replay = replay
        self.score_params = score_params
        self.random_state = random_state

    def fit(self, model, env, expert):
        """Run the deployment loop on a copy of ``model``; the original is untouched."""
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be >= 1")
        params = self.score_params or ScoreParams(1.0, 1.0, env.horizon, self.tau)
        params = ScoreParams(params.alpha1, params.alpha2, params.horizon, self.tau)
        rng = np.random.default_rng(self.random_state)
        model = copy.deepcopy(model)
        gamma = getattr(model, "gamma", env.gamma)
        if env.discrete:
            q = _q_model(model)
            lr = self.learning_rate or (0.1 if q.kind == "tabular_q" else 1e-3)
            opts = {"q": Adam(q.params, lr=lr)}
        else:
            lr = self.learning_rate or 1e-3
            opts = {"critic": Adam(model.critic_.params, lr=lr),
                    "actor": Adam(model.actor_.params, lr=lr)}
        trace = FinetuneTrace()
        buffer = None
        for k in range(self.n_iterations):
            log, overrides = deploy_with_overrides(model, expert, env, params, rng, k)
            trace.append(log, len(overrides))
            buffer = _concat(buffer, overrides) if (self.replay and buffer is not None) else overrides
            if len(buffer) > 0:
                if env.discrete:
                    finetune_discrete(model, buffer, self.delta, self.epochs, self.batch_size,
                                      gamma, opts["q"], rng=rng)
                else:
                    finetune_critic_continuous(model.critic_, model.actor_, buffer, self.epochs,
                                               self.batch_size, gamma, opts["critic"], rng=rng)
                    finetune_actor_continuous(model.actor_, model.critic_, buffer, self.epochs,
                                              self.batch_size, self.bc_weight, opts["actor"],
                                              rng=rng)
            if not self.replay:
                buffer = None
        self.model_, self.trace_ = model, trace
        return self

    def predict(self, states):
        return self.model_.predict(states)


def run_finetuning(model, expert, env, params: ScoreParams, n_iterations: int = 200, rng=None,
                   **config) -> FinetuneTrace:
    """Functional wrapper around :class:`OnlineFineTuner`; returns the trace."""
    tuner = OnlineFineTuner(n_iterations=n_iterations, score_params=params,
                            tau=config.pop("tau", params.tau), random_state=rng, **config)
    return tuner.fit(model, env, expert).trace_
