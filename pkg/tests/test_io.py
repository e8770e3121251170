import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from deployrl.io import (FormatError, VersionError, decode_array, encode_array, load_dataset,
                         load_model, read_trace, save_dataset, save_model, write_csv,
                         FINETUNE_HEADER, SELECTION_HEADER)
from deployrl.offline import ConservativeActorCritic, ConservativeQLearner, collect_dataset


@pytest.fixture(scope="module")
def grid_data(grid5):
    env, expert = grid5
    return collect_dataset(env, expert, 0.2, 300, np.random.default_rng(0), seed=0)


@pytest.fixture(scope="module")
def point_data(pointmass):
    env, expert = pointmass
    return collect_dataset(env, expert, 0.2, 300, np.random.default_rng(0), seed=0)


@given(arrays(np.float64, st.integers(0, 20),
              elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_array_encoding_is_exact(values):
    back = decode_array(json.loads(json.dumps(encode_array(values))))
    assert back.shape == values.shape
    assert np.array_equal(back.view(np.int64), values.view(np.int64))


def test_non_finite_parameters_refused():
    with pytest.raises(ValueError):
        encode_array([1.0, np.nan])


@pytest.mark.parametrize("kind", ["tabular", "mlp"])
def test_discrete_model_round_trip(tmp_path, grid_data, kind):
    model = ConservativeQLearner(5.0, model=kind, epochs=2, random_state=0).fit(grid_data)
    loaded = load_model(save_model(model, tmp_path / "m.model", "grid5"))
    states = np.random.default_rng(1).integers(25, size=100)
    assert np.array_equal(loaded.q_values(states), model.q_values(states))
    assert loaded.get_params() == model.get_params()
    assert loaded.env_id_ == "grid5" and loaded.n_updates_ == model.n_updates_


def test_actor_critic_round_trip(tmp_path, point_data):
    model = ConservativeActorCritic(1.0, epochs=2, random_state=0).fit(point_data)
    loaded = load_model(save_model(model, tmp_path / "m.model", "pointmass"))
    states = np.random.default_rng(1).normal(size=(100, 2))
    assert np.array_equal(loaded.predict(states), model.predict(states))
    actions = model.predict(states)
    assert np.array_equal(loaded.q_values(states, actions), model.q_values(states, actions))


def test_version_mismatch(tmp_path, grid_data):
    model = ConservativeQLearner(epochs=1).fit(grid_data)
    path = save_model(model, tmp_path / "m.model", "grid5")
    doc = json.loads(path.read_text())
    doc["format_version"] = 0
    path.write_text(json.dumps(doc))
    with pytest.raises(VersionError, match="format_version 0"):
        load_model(path)


def test_truncated_model_reports_offset(tmp_path, grid_data):
    model = ConservativeQLearner(epochs=1).fit(grid_data)
    path = save_model(model, tmp_path / "m.model", "grid5")
    raw = path.read_bytes()
    path.write_bytes(raw[:len(raw) // 2])
    with pytest.raises(FormatError) as info:
        load_model(path)
    assert 0 < info.value.offset <= len(raw) // 2


def test_missing_model_names_the_path(tmp_path):
    with pytest.raises(FileNotFoundError, match="nowhere.model"):
        load_model(tmp_path / "nowhere.model")


@pytest.mark.parametrize("which", ["grid_data", "point_data"])
def test_dataset_round_trip(tmp_path, request, which):
    data = request.getfixturevalue(which)
    back = load_dataset(save_dataset(data, tmp_path / "d.jsonl"))
    for col in ("s", "a", "r", "s2", "done"):
        assert np.array_equal(getattr(back, col), getattr(data, col)), col
    assert (back.env_id, back.n_states, back.n_actions) == (data.env_id, data.n_states,
                                                              data.n_actions)


def test_truncated_dataset_detected(tmp_path, grid_data):
    path = save_dataset(grid_data, tmp_path / "d.jsonl")
    lines = path.read_bytes().splitlines(keepends=True)
    path.write_bytes(b"".join(lines[:-3]))
    with pytest.raises(FormatError, match="truncated"):
        load_dataset(path)
    path.write_bytes(b"".join(lines[:5]) + lines[5][:7])
    with pytest.raises(FormatError) as info:
        load_dataset(path)
    assert info.value.offset >= sum(len(x) for x in lines[:5])


def test_trace_kinds(tmp_path):
    write_csv(tmp_path / "a.csv", SELECTION_HEADER, [(1, 0, -0.5, -0.1, 0)])
    write_csv(tmp_path / "b.csv", FINETUNE_HEADER, [(1, -50.0, 3, 3, -1.1)])
    assert read_trace(tmp_path / "a.csv")[0] == "selection"
    kind, rows = read_trace(tmp_path / "b.csv")
    assert kind == "finetune" and rows[0]["disagreements"] == "3"
    (tmp_path / "c.csv").write_text("x,y\n1,2\n")
    with pytest.raises(FormatError, match="unrecognised"):
        read_trace(tmp_path / "c.csv")
    with pytest.raises(ValueError):
        write_csv(tmp_path / "d.csv", SELECTION_HEADER, [(1, 2)])


def test_csv_floats_round_trip(tmp_path):
    x = 0.1 + 0.2
    write_csv(tmp_path / "a.csv", SELECTION_HEADER, [(1, 0, x, x, 0)])
    _, rows = read_trace(tmp_path / "a.csv")
    assert float(rows[0]["score"]) == x


def test_retraining_from_a_saved_dataset_is_bit_exact(tmp_path, grid_data):
    back = load_dataset(save_dataset(grid_data, tmp_path / "d.jsonl"))
    a = ConservativeQLearner(5.0, epochs=3, random_state=11).fit(grid_data)
    b = ConservativeQLearner(5.0, epochs=3, random_state=11).fit(back)
    assert np.array_equal(a.q_.values, b.q_.values)
