"""Persistence for models, datasets and CSV traces.

Models are JSON documents::

    {"format_version": 1, "env_id": "grid5", "kind": "conservative_q",
     "estimator_params": {...},
     "components": {"q": {"kind": "tabular_q", "layer_sizes": [25, 4],
                          "params": [{"shape": [25, 4], "values": "..."}]}}}

Parameter values are whitespace-separated decimals with 17 significant
digits, which round-trip every double exactly. Datasets are JSON Lines: a
header object followed by one ``[s, a, r, s2, done]`` array per transition.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path

import numpy as np

from .approximators import MlpActor, MlpQ, TabularQ
from .offline import ConservativeActorCritic, ConservativeQLearner, Dataset

FORMAT_VERSION = 1

SELECTION_HEADER = ("k", "arm", "score", "regret_paper_sign", "best_arm_so_far")
FINETUNE_HEADER = ("k", "env_return", "disagreements", "overrides", "score")
EVAL_HEADER = ("seed", "iteration", "model_id", "env_return", "disagreements", "score")
PROTOCOL_SELECTION_HEADER = ("method", "seed") + SELECTION_HEADER
PROTOCOL_FINETUNE_HEADER = ("seed", "model_id") + FINETUNE_HEADER
CANDIDATES_HEADER = ("seed", "model_id", "lambda", "expected_score", "mean_greedy_q")
KNOWN_HEADERS = {
    SELECTION_HEADER: "selection",
    FINETUNE_HEADER: "finetune",
    EVAL_HEADER: "eval",
    PROTOCOL_SELECTION_HEADER: "protocol-selection",
    PROTOCOL_FINETUNE_HEADER: "protocol-finetune",
    CANDIDATES_HEADER: "candidates",
}


class FormatError(ValueError):
    """Malformed or truncated file; ``offset`` is the byte position of the problem."""

    def __init__(self, path, offset: int, message: str):
        super().__init__(f"{path}: byte {offset}: {message}")
        self.path, self.offset = str(path), offset


class VersionError(ValueError):
    pass


def _num(x) -> str:
    return format(float(x), ".17g")


def encode_array(values) -> dict:
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("cannot serialise non-finite parameters")
    return {"shape": list(arr.shape), "values": " ".join(_num(x) for x in arr.ravel())}


def decode_array(doc: dict) -> np.ndarray:
    values = doc["values"].split()
    return np.array([float(v) for v in values], dtype=float).reshape(doc["shape"])


def _component(net) -> dict:
    doc = {"kind": net.kind, "params": [encode_array(p) for p in net.params]}
    if isinstance(net, TabularQ):
        doc["layer_sizes"] = [net.n_states, net.n_actions]
    else:
        doc["layer_sizes"] = list(net.layer_sizes)
    if isinstance(net, MlpQ) and net.n_states is not None:
        doc["n_states"] = net.n_states
    if isinstance(net, MlpActor):
        doc["bounds"] = [net.low, net.high]
    return doc


def _restore_component(doc: dict):
    params = [decode_array(p) for p in doc["params"]]
    sizes = doc["layer_sizes"]
    kind = doc["kind"]
    if kind == "tabular_q":
        return TabularQ(sizes[0], sizes[1], params[0])
    if kind == "mlp_q":
        return MlpQ(sizes, n_states=doc.get("n_states"), params=params)
    if kind == "mlp_actor":
        low, high = (float(b) for b in doc["bounds"])
        return MlpActor(sizes, low=low, high=high, params=params)
    raise FormatError("<model>", 0, f"unknown component kind {kind!r}")


def model_to_dict(model, env_id: str) -> dict:
    params = model.get_params()
    if isinstance(params.get("hidden_sizes"), tuple):
        params["hidden_sizes"] = list(params["hidden_sizes"])
    if isinstance(model, ConservativeQLearner):
        kind, comps = "conservative_q", {"q": _component(model.q_)}
        fitted = {"n_states": model.n_states_, "n_actions": model.n_actions_}
    elif isinstance(model, ConservativeActorCritic):
        kind = "actor_critic"
        comps = {"actor": _component(model.actor_), "critic": _component(model.critic_)}
        fitted = {"state_dim": model.state_dim_}
    else:
        raise TypeError(f"cannot serialise {type(model).__name__}")
    fitted["n_updates"] = int(getattr(model, "n_updates_", 0))
    return {"format_version": FORMAT_VERSION, "env_id": env_id, "kind": kind,
            "estimator_params": params, "fitted": fitted, "components": comps}


def model_from_dict(doc: dict):
    _check_version(doc, "<model>")
    params = dict(doc["estimator_params"])
    if "hidden_sizes" in params:
        params["hidden_sizes"] = tuple(params["hidden_sizes"])
    comps = {name: _restore_component(c) for name, c in doc["components"].items()}
    fitted = doc["fitted"]
    if doc["kind"] == "conservative_q":
        model = ConservativeQLearner(**params)
        model.q_ = comps["q"]
        model.n_states_, model.n_actions_ = fitted["n_states"], fitted["n_actions"]
    elif doc["kind"] == "actor_critic":
        model = ConservativeActorCritic(**params)
        model.actor_, model.critic_ = comps["actor"], comps["critic"]
        model.state_dim_ = fitted["state_dim"]
    else:
        raise FormatError("<model>", 0, f"unknown model kind {doc['kind']!r}")
    model.n_updates_ = fitted.get("n_updates", 0)
    model.env_id_ = doc["env_id"]
    return model


def _check_version(doc, path):
    version = doc.get("format_version") if isinstance(doc, dict) else None
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: format_version {version!r} is not supported "
                           f"(this reader handles version {FORMAT_VERSION})")


def _parse_json(text: str, path, base: int = 0):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        offset = base + len(text[:exc.pos].encode("utf-8"))
        raise FormatError(path, offset, exc.msg) from None


def save_model(model, path, env_id: str) -> Path:
    path = Path(path)
    path.write_text(json.dumps(model_to_dict(model, env_id), indent=1) + "\n")
    return path


def load_model(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"model file not found: {path}")
    doc = _parse_json(path.read_bytes().decode("utf-8"), path)
    _check_version(doc, path)
    try:
        return model_from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, (FormatError, VersionError)):
            raise
        raise FormatError(path, 0, f"invalid model document: {exc}") from None


def _row(values) -> str:
    if np.ndim(values) == 0:
        v = values.item() if hasattr(values, "item") else values
        return str(int(v)) if isinstance(v, (int, np.integer)) else _num(v)
    return "[" + ", ".join(_num(x) for x in np.ravel(values)) + "]"


def save_dataset(dataset: Dataset, path) -> Path:
    header = {"format_version": FORMAT_VERSION, "type": "dataset", "env_id": dataset.env_id,
              "n_transitions": len(dataset), "epsilon": dataset.epsilon, "seed": dataset.seed,
              "n_states": dataset.n_states, "n_actions": dataset.n_actions,
              "action_low": dataset.action_low, "action_high": dataset.action_high,
              "meta": dataset.meta}
    lines = [json.dumps(header)]
    for t in dataset.transitions():
        r = _num(t.r)
        lines.append(f"[{_row(t.s)}, {_row(t.a)}, {r}, {_row(t.s2)}, {int(t.done)}]")
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def load_dataset(path) -> Dataset:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"dataset file not found: {path}")
    raw = path.read_bytes()
    offset, rows, header = 0, [], None
    for line in raw.split(b"\n"):
        text = line.decode("utf-8")
        if text.strip():
            value = _parse_json(text, path, offset)
            if header is None:
                _check_version(value, path)
                header = value
            elif not (isinstance(value, list) and len(value) == 5):
                raise FormatError(path, offset, "transition must be [s, a, r, s2, done]")
            else:
                rows.append(value)
        offset += len(line) + 1
    if header is None:
        raise FormatError(path, 0, "empty file")
    if len(rows) != header["n_transitions"]:
        raise FormatError(path, len(raw), f"expected {header['n_transitions']} transitions, "
                                          f"found {len(rows)} (truncated?)")
    cols = list(zip(*rows)) if rows else [[], [], [], [], []]
    return Dataset(*(np.asarray(c) for c in cols), env_id=header["env_id"],
                   epsilon=header["epsilon"], seed=header["seed"], n_states=header["n_states"],
                   n_actions=header["n_actions"], action_low=header["action_low"],
                   action_high=header["action_high"], meta=header.get("meta", {}))


def _cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"row has {len(row)} fields, header has {len(header)}")
        writer.writerow([_cell(x) for x in row])
    return buf.getvalue()


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.write_text(csv_text(header, rows))
    return path


def read_trace(path):
    """Parse a CSV written by this package; returns ``(kind, rows as dicts)``."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"trace file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        kind = KNOWN_HEADERS.get(header)
        if kind is None:
            raise FormatError(path, 0, f"unrecognised CSV header {','.join(header)!r}")
        rows = [dict(zip(header, r)) for r in reader]
    return kind, rows


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
