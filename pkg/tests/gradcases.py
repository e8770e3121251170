"""Random instances of every training objective, for finite-difference checks."""

import numpy as np

from deployrl.approximators import MlpActor, MlpQ, TabularQ
from deployrl.losses import (actor_loss, bellman_loss_continuous, bellman_loss_discrete,
                             conservative_q_loss, cql_penalty, margin_finetune_loss)


def _discrete_batch(rng, n_states=6, n_actions=3, n=12):
    return {"s": rng.integers(n_states, size=n), "a": rng.integers(n_actions, size=n),
            "r": rng.normal(size=n), "s2": rng.integers(n_states, size=n),
            "done": (rng.random(n) < 0.2).astype(float)}


def _continuous_batch(rng, n=12):
    return {"s": rng.normal(size=(n, 2)), "a": rng.uniform(-1, 1, size=(n, 1)),
            "r": rng.normal(size=n), "s2": rng.normal(size=(n, 2)),
            "done": np.zeros(n)}


def bellman_tabular(rng):
    q = TabularQ(6, 3, rng.normal(size=(6, 3)))
    b = _discrete_batch(rng)
    y = rng.normal(size=len(b["a"]))
    return q.params, lambda: bellman_loss_discrete(q, b, y)


def bellman_mlp(rng):
    q = MlpQ((6, 16, 16, 3), rng=rng, n_states=6)
    b = _discrete_batch(rng)
    y = rng.normal(size=len(b["a"]))
    return q.params, lambda: bellman_loss_discrete(q, b, y)


def conservative_mlp(rng):
    q = MlpQ((6, 16, 16, 3), rng=rng, n_states=6)
    b = _discrete_batch(rng)
    y = rng.normal(size=len(b["a"]))
    lam = float(rng.choice([1.0, 5.0, 10.0, 100.0]))
    return q.params, lambda: conservative_q_loss(q, b, y, lam)


def penalty_tabular(rng):
    q = TabularQ(6, 3, rng.normal(size=(6, 3)))
    b = _discrete_batch(rng)
    return q.params, lambda: cql_penalty(q, b)


def critic_continuous(rng):
    critic = MlpQ((3, 16, 16, 1), rng=rng)
    b = _continuous_batch(rng)
    y = rng.normal(size=len(b["r"]))
    return critic.params, lambda: bellman_loss_continuous(critic, b, y)


def actor_continuous(rng):
    actor = MlpActor((2, 16, 16, 1), rng=rng)
    critic = MlpQ((3, 16, 16, 1), rng=rng)
    b = _continuous_batch(rng)
    w = float(rng.uniform(0.1, 10.0))
    return actor.params, lambda: actor_loss(actor, critic, b["s"], b["a"], w)


def margin_tabular(rng):
    q = TabularQ(6, 3, rng.normal(size=(6, 3)))
    b = _discrete_batch(rng)
    y = rng.normal(size=len(b["a"]))
    return q.params, lambda: margin_finetune_loss(q, b, y, 1.0)


def margin_mlp(rng):
    q = MlpQ((6, 16, 16, 3), rng=rng, n_states=6)
    b = _discrete_batch(rng)
    y = rng.normal(size=len(b["a"]))
    return q.params, lambda: margin_finetune_loss(q, b, y, 1.0)


CASES = {
    "bellman_tabular": bellman_tabular,
    "bellman_mlp": bellman_mlp,
    "conservative_mlp": conservative_mlp,
    "penalty_tabular": penalty_tabular,
    "critic_continuous": critic_continuous,
    "actor_continuous": actor_continuous,
    "margin_tabular": margin_tabular,
    "margin_mlp": margin_mlp,
}
