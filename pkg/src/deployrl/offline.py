"""Offline datasets and conservative offline learners.

``ConservativeQLearner`` minimises the squared Bellman error plus
``conservatism * mean[logsumexp_a Q(s, a) - Q(s, a_data)]`` for discrete
actions. ``ConservativeActorCritic`` alternates a critic Bellman step with an
actor step maximising ``Q(s, pi(s)) - conservatism * |pi(s) - a_data|^2``.
Sweeping ``conservatism`` yields the heterogeneous candidate sets that online
selection chooses from.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from sklearn.base import BaseEstimator

from .approximators import Adam, MlpActor, MlpQ, TabularQ, grad
from .envs import EpsilonGreedyPolicy
from .losses import (actor_loss, bellman_loss_continuous, conservative_q_loss,
                     continuous_targets, discrete_targets)
from .seeding import stage_int
from .validation import check_batch_size, check_dataset, check_is_fitted, check_states


class Transition(NamedTuple):
    s: object
    a: object
    r: float
    s2: object
    done: bool


def _as_rows(x, n):
    x = np.asarray(x, dtype=float)
    return x.reshape(n, x.shape[-1] if x.ndim == 2 else -1)


@dataclass(eq=False)
class Dataset:
    """Column-stored transitions ``(s, a, r, s', done)`` from one environment.

    Discrete datasets keep integer states/actions and record the state and
    action counts; continuous ones keep ``(n, d)`` float arrays and the
    action bounds.
    """

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    done: np.ndarray
    env_id: str
    epsilon: float = 0.0
    seed: Optional[int] = None
    n_states: Optional[int] = None
    n_actions: Optional[int] = None
    action_low: float = -1.0
    action_high: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.r)
        self.r = np.asarray(self.r, dtype=float)
        self.done = np.asarray(self.done, dtype=float)
        if self.discrete:
            self.s, self.a, self.s2 = (np.asarray(x, dtype=int).reshape(n) for x in (self.s, self.a, self.s2))
        else:
            self.s, self.a, self.s2 = (_as_rows(x, n) for x in (self.s, self.a, self.s2))
        if not all(len(x) == n for x in (self.s, self.a, self.s2, self.done)):
            raise ValueError("transition columns have different lengths")

    @property
    def discrete(self) -> bool:
        return self.n_actions is not None

    def __len__(self) -> int:
        return len(self.r)

    def batch(self, idx) -> dict:
        return {"s": self.s[idx], "a": self.a[idx], "r": self.r[idx],
                "s2": self.s2[idx], "done": self.done[idx]}

    def transitions(self):
        for i in range(len(self)):
            yield Transition(self.s[i], self.a[i], float(self.r[i]), self.s2[i], bool(self.done[i]))

    @classmethod
    def from_transitions(cls, transitions, env, **kwargs):
        rows = list(transitions)
        cols = list(zip(*rows)) if rows else [[], [], [], [], []]
        kw = space_kwargs(env)
        kw.update(kwargs)
        if not env.discrete and not rows:
            return cls(np.zeros((0, env.state_dim)), np.zeros((0, env.action_dim)), [],
                       np.zeros((0, env.state_dim)), [], env.env_id, **kw)
        return cls(*(np.asarray(c) for c in cols), env_id=env.env_id, **kw)


def space_kwargs(env) -> dict:
    if env.discrete:
        return {"n_states": env.n_states, "n_actions": env.n_actions}
    return {"action_low": env.action_low, "action_high": env.action_high}


def collect_dataset(env, expert, epsilon: float, n_steps: int, rng: np.random.Generator,
                    seed=None) -> Dataset:
    """Roll out an epsilon-greedy version of ``expert`` for exactly ``n_steps`` steps.

    Episodes restart when they terminate or reach the horizon; a horizon cut
    is logged with ``done = False``.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    behavior = EpsilonGreedyPolicy(expert, epsilon, env)
    rows = []
    s, t = env.reset(rng), 0
    for _ in range(n_steps):
        a = behavior.act(s, rng)
        s2, r, done = env.step(s, a, rng)
        rows.append(Transition(s, a, r, s2, done))
        t += 1
        if done or t >= env.horizon:
            s, t = env.reset(rng), 0
        else:
            s = s2
    return Dataset.from_transitions(rows, env, epsilon=epsilon, seed=seed)


def _minibatches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


class ConservativeQLearner(BaseEstimator):
    """Offline Q-learning with a logsumexp conservatism penalty (discrete actions).

    Parameters
    ----------
    conservatism : float
        Penalty scale; 0 gives plain fitted Q-learning.
    model : {"tabular", "mlp"}
        Q-table, or a tanh MLP on one-hot states.
    learning_rate : float or None
        Adam step size; ``None`` picks 0.1 for tables and 1e-3 for the MLP.
    target_update : int
        Updates between refreshes of the frozen bootstrap copy.
    """

    def __init__(self, conservatism=0.0, model="tabular", hidden_sizes=(32, 32), epochs=30,
                 batch_size=64, learning_rate=None, target_update=100, gamma=0.95,
                 random_state=None):
        self.conservatism = conservatism
        self.model = model
        self.hidden_sizes = hidden_sizes
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.target_update = target_update
        self.gamma = gamma
        self.random_state = random_state

    def _init_model(self, n_states, n_actions, rng):
        if self.model == "tabular":
            return TabularQ(n_states, n_actions)
        if self.model == "mlp":
            sizes = (n_states, *self.hidden_sizes, n_actions)
            return MlpQ(sizes, rng, n_states=n_states)
        raise ValueError(f"unknown model {self.model!r}")

    def fit(self, dataset, q_init=None):
        check_dataset(dataset, discrete=True)
        if self.conservatism < 0:
            raise ValueError("conservatism must be >= 0")
        rng = np.random.default_rng(self.random_state)
        q = q_init.copy() if q_init is not None else self._init_model(
            dataset.n_states, dataset.n_actions, rng)
        lr = self.learning_rate or (0.1 if self.model == "tabular" else 1e-3)
        opt = Adam(q.params, lr=lr)
        batch_size = check_batch_size(self.batch_size, len(dataset))
        target, updates = q.copy(), 0
        for _ in range(self.epochs):
            for bi, idx in enumerate(_minibatches(len(dataset), batch_size, rng)):
                batch = dataset.batch(idx)
                y = discrete_targets(target, batch, self.gamma)
                _, g = grad(lambda: conservative_q_loss(q, batch, y, self.conservatism), bi)
                opt.step(q.params, g)
                updates += 1
                if updates % self.target_update == 0:
                    target = q.copy()
        self.q_ = q
        self.n_states_, self.n_actions_ = dataset.n_states, dataset.n_actions
        self.n_updates_ = updates
        return self

    def q_values(self, states) -> np.ndarray:
        check_is_fitted(self, "q_")
        return self.q_(check_states(states, n_states=self.n_states_))

    def predict(self, states) -> np.ndarray:
        return np.argmax(self.q_values(states), axis=1)

    def act(self, state, rng=None) -> int:
        return int(self.predict([int(state)])[0])

    def greedy_value(self, states) -> np.ndarray:
        """``Q(s, pi(s)) = max_a Q(s, a)``."""
        return self.q_values(states).max(axis=1)

    def bellman_residual(self, dataset) -> float:
        """Mean squared one-step Bellman error on ``dataset`` using the model itself as target."""
        y = discrete_targets(self.q_, dataset.batch(slice(None)), self.gamma)
        return float(np.mean((self.q_(dataset.s)[np.arange(len(dataset)), dataset.a] - y) ** 2))


def train_actor_steps(actor, critic, states, ref_actions, bc_weight, opt, batch_size, epochs, rng,
                      q_weight=1.0):
    """Minibatch descent on :func:`deployrl.losses.actor_loss` with ``critic`` frozen."""
    batch_size = check_batch_size(batch_size, len(states))
    for _ in range(epochs):
        for bi, idx in enumerate(_minibatches(len(states), batch_size, rng)):
            _, g = grad(lambda: actor_loss(actor, critic, states[idx], ref_actions[idx],
                                           bc_weight, q_weight), bi)
            opt.step(actor.params, g)
    return actor


class ConservativeActorCritic(BaseEstimator):
    """Offline actor-critic with a behaviour-cloning conservatism term (continuous actions).

    Each minibatch takes one critic step on the squared Bellman error (targets
    from frozen copies of both networks) and one actor step on
    ``-Q(s, pi(s)) + conservatism * |pi(s) - a_data|^2``.
    """

    def __init__(self, conservatism=0.0, hidden_sizes=(32, 32), epochs=30, batch_size=64,
                 learning_rate=1e-3, target_update=100, gamma=0.95, random_state=None):
        self.conservatism = conservatism
        self.hidden_sizes = hidden_sizes
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.target_update = target_update
        self.gamma = gamma
        self.random_state = random_state

    def fit(self, dataset):
        check_dataset(dataset, discrete=False)
        if self.conservatism < 0:
            raise ValueError("conservatism must be >= 0")
        rng = np.random.default_rng(self.random_state)
        sd, ad = dataset.s.shape[1], dataset.a.shape[1]
        critic = MlpQ((sd + ad, *self.hidden_sizes, 1), rng)
        actor = MlpActor((sd, *self.hidden_sizes, ad), rng, dataset.action_low, dataset.action_high)
        c_opt = Adam(critic.params, lr=self.learning_rate)
        a_opt = Adam(actor.params, lr=self.learning_rate)
        batch_size = check_batch_size(self.batch_size, len(dataset))
        c_target, a_target, updates = critic.copy(), actor.copy(), 0
        for _ in range(self.epochs):
            for bi, idx in enumerate(_minibatches(len(dataset), batch_size, rng)):
                batch = dataset.batch(idx)
                y = continuous_targets(c_target, a_target, batch, self.gamma)
                _, g = grad(lambda: bellman_loss_continuous(critic, batch, y), bi)
                c_opt.step(critic.params, g)
                _, g = grad(lambda: actor_loss(actor, critic, batch["s"], batch["a"],
                                               self.conservatism), bi)
                a_opt.step(actor.params, g)
                updates += 1
                if updates % self.target_update == 0:
                    c_target, a_target = critic.copy(), actor.copy()
        self.actor_, self.critic_ = actor, critic
        self.state_dim_ = sd
        self.n_updates_ = updates
        return self

    def predict(self, states) -> np.ndarray:
        check_is_fitted(self, "actor_")
        return self.actor_(check_states(states, state_dim=self.state_dim_))

    def act(self, state, rng=None) -> np.ndarray:
        return self.predict(state)[0]

    def q_values(self, states, actions) -> np.ndarray:
        check_is_fitted(self, "critic_")
        states = check_states(states, state_dim=self.state_dim_)
        return self.critic_(np.hstack([states, np.atleast_2d(actions)]))[:, 0]

    def greedy_value(self, states) -> np.ndarray:
        """``Q(s, pi(s))``."""
        return self.q_values(states, self.predict(states))

    def bellman_residual(self, dataset) -> float:
        b = dataset.batch(slice(None))
        y = continuous_targets(self.critic_, self.actor_, b, self.gamma)
        return float(np.mean((self.q_values(b["s"], b["a"]) - y) ** 2))


def make_learner(dataset, conservatism, random_state=None, **params):
    cls = ConservativeQLearner if dataset.discrete else ConservativeActorCritic
    return cls(conservatism=conservatism, random_state=random_state, **params)


@dataclass
class CandidateSet:
    """Trained offline models, ordered as their conservatism labels."""

    models: list
    lambdas: list
    env_id: str
    dataset: Optional[Dataset] = None

    def __post_init__(self):
        if len(self.models) < 1:
            raise ValueError("a candidate set needs at least one model")
        if len(self.models) != len(self.lambdas):
            raise ValueError("one conservatism label per model")

    def __len__(self):
        return len(self.models)

    def __getitem__(self, i):
        return self.models[i]


DEFAULT_LAMBDAS = (0.0, 1.0, 5.0, 10.0, 100.0)


def build_candidates(env, expert, lambdas=DEFAULT_LAMBDAS, n_steps=20_000, epsilon=0.2, seed=0,
                     dataset=None, **learner_params) -> CandidateSet:
    """Collect one epsilon-greedy dataset and train one learner per conservatism value.

    Each learner receives a distinct seed derived from ``seed`` and its position.
    """
    lambdas = list(lambdas)
    if not lambdas:
        raise ValueError("lambdas must be nonempty")
    if dataset is None:
        rng = np.random.default_rng(stage_int(seed, "dataset"))
        dataset = collect_dataset(env, expert, epsilon, n_steps, rng, seed=seed)
    learner_params.setdefault("gamma", env.gamma)
    models = []
    for i, lam in enumerate(lambdas):
        learner = make_learner(dataset, lam, stage_int(seed, "train", i), **learner_params)
        models.append(learner.fit(dataset))
    return CandidateSet(models, lambdas, env.env_id, dataset)
