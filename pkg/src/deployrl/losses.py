"""Training objectives with exact gradients.

Each function returns ``(loss, grads)`` where ``grads`` lines up with
``model.params``. Bootstrap targets are passed in precomputed, so no gradient
flows through them. Batches are dicts with keys ``s, a, r, s2, done``.
"""

from __future__ import annotations

import numpy as np


def discrete_targets(target_q, batch, gamma: float) -> np.ndarray:
    """``r + gamma * (1 - done) * max_a' Q_target(s', a')``."""
    q_next = target_q(batch["s2"])
    return batch["r"] + gamma * (1.0 - batch["done"]) * q_next.max(axis=1)


def continuous_targets(target_critic, target_actor, batch, gamma: float) -> np.ndarray:
    """``r + gamma * (1 - done) * Q_target(s', pi_target(s'))``."""
    a_next = target_actor(batch["s2"])
    q_next = target_critic(np.hstack([batch["s2"], a_next]))[:, 0]
    return batch["r"] + gamma * (1.0 - batch["done"]) * q_next


def _chosen(q_rows, actions):
    return q_rows[np.arange(len(actions)), actions]


def _bellman_rows(rows, a, targets):
    resid = _chosen(rows, a) - targets
    d_rows = np.zeros_like(rows)
    d_rows[np.arange(len(a)), a] = 2.0 * resid / len(a)
    return float(np.mean(resid**2)), d_rows


def _penalty_rows(rows, a):
    n = len(a)
    # shifted by the row max; scipy's logsumexp costs more in overhead than math here
    shift = rows.max(axis=1, keepdims=True)
    e = np.exp(rows - shift)
    z = e.sum(axis=1, keepdims=True)
    value = np.mean(np.log(z[:, 0]) + shift[:, 0] - _chosen(rows, a))
    d_rows = e / z
    d_rows[np.arange(n), a] -= 1.0
    return float(value), d_rows / n


def bellman_loss_discrete(q, batch, targets):
    """Mean squared Bellman error over a minibatch of discrete transitions."""
    rows, cache = q.forward(batch["s"])
    loss, d_rows = _bellman_rows(rows, batch["a"], targets)
    grads, _ = q.backward(cache, d_rows)
    return loss, grads


def cql_penalty(q, batch):
    """``mean_s [logsumexp_a Q(s, a) - Q(s, a_data)]``."""
    rows, cache = q.forward(batch["s"])
    value, d_rows = _penalty_rows(rows, batch["a"])
    grads, _ = q.backward(cache, d_rows)
    return value, grads


def conservative_q_loss(q, batch, targets, conservatism: float):
    """Bellman error plus ``conservatism`` times the logsumexp penalty."""
    rows, cache = q.forward(batch["s"])
    loss, d_rows = _bellman_rows(rows, batch["a"], targets)
    if conservatism:
        pen, d_pen = _penalty_rows(rows, batch["a"])
        loss += conservatism * pen
        d_rows += conservatism * d_pen
    grads, _ = q.backward(cache, d_rows)
    return loss, grads


def bellman_loss_continuous(critic, batch, targets):
    """Mean squared Bellman error for a critic on ``[s, a]`` inputs."""
    X = np.hstack([batch["s"], batch["a"]])
    out, cache = critic.forward(X)
    resid = out[:, 0] - targets
    grads, _ = critic.backward(cache, (2.0 * resid / len(resid))[:, None])
    return float(np.mean(resid**2)), grads


def actor_loss(actor, critic, states, ref_actions, bc_weight: float, q_weight: float = 1.0):
    """``-q_weight * mean Q(s, pi(s)) + bc_weight * mean |pi(s) - a_ref|^2``.

    Minimising this maximises the critic's value of the actor's actions while
    pulling them toward ``ref_actions`` (dataset or expert actions).
    Gradients are taken with respect to the actor only.
    """
    n = len(states)
    pi, a_cache = actor.forward(states)
    q_out, c_cache = critic.forward(np.hstack([states, pi]))
    diff = pi - ref_actions
    loss = -q_weight * np.mean(q_out) + bc_weight * np.mean(np.sum(diff**2, axis=1))
    _, d_in = critic.backward(c_cache, np.full_like(q_out, -q_weight / n), input_only=True)
    d_pi = d_in[:, states.shape[1]:] + bc_weight * 2.0 * diff / n
    grads, _ = actor.backward(a_cache, d_pi)
    return float(loss), grads


def margin_loss(q_row, expert_action: int, delta: float) -> float:
    """``max_a' [Q(s,a') + l(a,a')] - Q(s,a)`` with ``l = delta`` off the expert action.

    Always ``>= 0`` because ``a' = a`` contributes zero.
    """
    q_row = np.asarray(q_row, dtype=float)
    bumped = q_row + delta
    bumped[expert_action] = q_row[expert_action]
    return float(bumped.max() - q_row[expert_action])


def margin_finetune_loss(q, batch, targets, delta: float):
    """Squared Bellman error plus the large-margin term, averaged over the batch.

    The subgradient of the max flows through the maximising action only,
    ties resolved toward the lowest index.
    """
    rows, cache = q.forward(batch["s"])
    a = batch["a"]
    n = len(a)
    idx = np.arange(n)
    chosen = rows[idx, a]
    resid = chosen - targets
    bumped = rows + delta
    bumped[idx, a] = chosen
    top = np.argmax(bumped, axis=1)
    margin = bumped[idx, top] - chosen
    d_rows = np.zeros_like(rows)
    d_rows[idx, a] += 2.0 * resid / n
    np.add.at(d_rows, (idx, top), 1.0 / n)
    d_rows[idx, a] -= 1.0 / n
    grads, _ = q.backward(cache, d_rows)
    return float(np.mean(resid**2 + margin)), grads
