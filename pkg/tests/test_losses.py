import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from deployrl.approximators import MlpActor, MlpQ, TabularQ, finite_diff_check
from deployrl.losses import (actor_loss, conservative_q_loss, cql_penalty, discrete_targets,
                             margin_finetune_loss, margin_loss)

from gradcases import CASES

rows = arrays(np.float64, st.integers(2, 6), elements=st.floats(-50, 50))


@pytest.mark.parametrize("name", sorted(CASES))
def test_gradients_match_finite_differences(name):
    for point in range(3):
        params, closure = CASES[name](np.random.default_rng(100 + point))
        report = finite_diff_check(params, closure)
        assert report.max_rel_error < 1e-4, (name, point, report.worst)


@pytest.mark.parametrize("q, a, delta, expected", [
    ([3.0, 1.0], 0, 1.0, 0.0),
    ([1.0, 2.0], 0, 1.0, 2.0),
    ([2.0, 2.0], 1, 0.5, 0.5),
])
def test_margin_loss_examples(q, a, delta, expected):
    assert margin_loss(q, a, delta) == pytest.approx(expected)


@given(rows, st.data(), st.floats(0.01, 5))
def test_margin_loss_nonnegative_and_zero_iff_dominant(q, data, delta):
    a = data.draw(st.integers(0, len(q) - 1))
    loss = margin_loss(q, a, delta)
    assert loss >= 0
    others = np.delete(q, a)
    assert (loss == 0) == bool(np.all(q[a] >= others + delta))


@given(rows, st.data())
def test_penalty_nonnegative(q, data):
    a = data.draw(st.integers(0, len(q) - 1))
    table = TabularQ(1, len(q), q[None, :])
    value, _ = cql_penalty(table, {"s": np.array([0]), "a": np.array([a])})
    assert value >= -1e-12


def test_penalty_matches_direct_formula():
    q = np.array([[0.5, -1.0, 2.0]])
    value, _ = cql_penalty(TabularQ(1, 3, q), {"s": np.array([0]), "a": np.array([1])})
    assert value == pytest.approx(np.log(np.exp(q).sum()) - q[0, 1], abs=1e-12)


def test_penalty_stable_for_large_values():
    q = np.array([[1000.0, 999.0]])
    value, grads = cql_penalty(TabularQ(1, 2, q), {"s": np.array([0]), "a": np.array([0])})
    assert np.isfinite(value) and all(np.all(np.isfinite(g)) for g in grads)


def test_discrete_targets_use_greedy_max_and_done():
    q = TabularQ(2, 2, np.array([[0.0, 0.0], [1.0, 3.0]]))
    batch = {"s2": np.array([1, 1]), "r": np.array([1.0, 1.0]), "done": np.array([0.0, 1.0])}
    np.testing.assert_allclose(discrete_targets(q, batch, 0.5), [2.5, 1.0])


def test_margin_term_zero_when_expert_dominates():
    q = TabularQ(1, 2, np.array([[3.0, 1.0]]))
    batch = {"s": np.array([0]), "a": np.array([0])}
    loss, (g,) = margin_finetune_loss(q, batch, np.array([3.0]), 1.0)
    assert loss == 0.0
    np.testing.assert_array_equal(g, 0.0)


def test_margin_subgradient_ties_go_to_lowest_index():
    # bumped row [2, 2, 2] for expert 2: argmax over bumped picks action 0
    q = TabularQ(1, 3, np.array([[1.0, 1.0, 2.0]]))
    batch = {"s": np.array([0]), "a": np.array([2])}
    _, (g,) = margin_finetune_loss(q, batch, np.array([2.0]), 1.0)
    np.testing.assert_allclose(g, [[1.0, 0.0, -1.0]])


def test_actor_loss_bc_limit_gradient_direction():
    actor = MlpActor((2, 8, 1), rng=0)
    critic = MlpQ((3, 8, 1), rng=0)
    for p in critic.params:
        p[...] = 0.0
    s = np.zeros((1, 2))
    target = np.array([[0.9]])
    loss, _ = actor_loss(actor, critic, s, target, 1.0)
    assert loss == pytest.approx(float(((actor(s) - target) ** 2).item()))


def test_production_width_networks():
    rng = np.random.default_rng(7)
    q = MlpQ((25, 32, 32, 4), rng=rng, n_states=25)
    batch = {"s": rng.integers(25, size=16), "a": rng.integers(4, size=16)}
    y = rng.normal(size=16)
    assert finite_diff_check(q.params, lambda: conservative_q_loss(q, batch, y, 100.0)).max_rel_error < 1e-4
    actor, critic = MlpActor((2, 32, 32, 1), rng=rng), MlpQ((3, 32, 32, 1), rng=rng)
    s, a = rng.normal(size=(16, 2)), rng.uniform(-1, 1, size=(16, 1))
    assert finite_diff_check(actor.params, lambda: actor_loss(actor, critic, s, a, 1.0)).max_rel_error < 1e-4
