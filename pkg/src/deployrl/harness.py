"""Experiment configuration, run manifests and the full reproduction protocol.

Config files are flat ``key = value`` lines with dotted keys::

    env = grid5
    seed = 0
    n_seeds = 5
    offline.lambdas = 0, 1, 5, 10, 100
    select.K = 100
    finetune.K = 200
    output.dir = runs/grid5

Random streams come from :mod:`deployrl.seeding`: every stage hashes its name
into the master seed together with a repetition index.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Optional

import numpy as np

from .envs import make_env
from .finetune import OnlineFineTuner
from .io import (CANDIDATES_HEADER, FORMAT_VERSION, PROTOCOL_FINETUNE_HEADER,
                 PROTOCOL_SELECTION_HEADER, sha256_file, write_csv)
from .offline import DEFAULT_LAMBDAS, build_candidates
from .scoring import DEFAULT_SCORE_PARAMS, ScoreParams
from .seeding import stage_int, stage_rng
from .selection import (baseline_highest_q, baseline_oracle, candidate_scores, run_fixed,
                        run_random_ensemble, run_selection)

MODES = ("protocol", "select", "finetune", "eval")
STAGES = ("select", "finetune")
SELECTION_METHODS = ("ucb", "highest_q", "random_ensemble", "oracle")


def _floats(text):
    return tuple(float(x) for x in text.replace(",", " ").split())


def _words(text):
    return tuple(x for x in text.replace(",", " ").split())


def _optional_float(text):
    return None if text.strip().lower() in ("", "none", "auto") else float(text)


def _optional_int(text):
    return None if text.strip().lower() in ("", "none", "auto") else int(text)


def _bool(text):
    value = text.strip().lower()
    if value not in ("true", "false", "1", "0", "yes", "no"):
        raise ValueError(f"expected a boolean, got {text!r}")
    return value in ("true", "1", "yes")


# dotted config key -> (ExperimentConfig attribute, parser)
CONFIG_KEYS = {
    "env": ("env_id", str),
    "mode": ("mode", str),
    "seed": ("seed", int),
    "n_seeds": ("n_seeds", int),
    "score.alpha1": ("alpha1", _optional_float),
    "score.alpha2": ("alpha2", _optional_float),
    "score.horizon": ("horizon", _optional_int),
    "score.tau": ("tau", float),
    "offline.lambdas": ("lambdas", _floats),
    "offline.n_steps": ("n_steps", int),
    "offline.epsilon": ("epsilon", float),
    "offline.model": ("model", str),
    "offline.epochs": ("epochs", int),
    "offline.batch_size": ("batch_size", int),
    "offline.learning_rate": ("learning_rate", _optional_float),
    "offline.target_update": ("target_update", int),
    "select.K": ("select_K", int),
    "select.beta": ("beta", float),
    "finetune.K": ("finetune_K", int),
    "finetune.delta": ("delta", float),
    "finetune.epochs": ("finetune_epochs", int),
    "finetune.batch_size": ("finetune_batch_size", int),
    "finetune.learning_rate": ("finetune_learning_rate", _optional_float),
    "finetune.replay": ("replay", _bool),
    "eval.episodes": ("eval_episodes", int),
    "oracle.n": ("oracle_n", int),
    "protocol.stages": ("stages", _words),
    "summary.last": ("summary_last", int),
    "output.dir": ("output_dir", str),
}


@dataclass
class ExperimentConfig:
    env_id: str = "grid5"
    mode: str = "protocol"
    seed: int = 0
    n_seeds: int = 5
    alpha1: Optional[float] = None
    alpha2: Optional[float] = None
    horizon: Optional[int] = None
    tau: float = 0.09
    lambdas: tuple = DEFAULT_LAMBDAS
    n_steps: int = 20_000
    epsilon: float = 0.2
    model: str = "tabular"
    epochs: int = 30
    batch_size: int = 64
    learning_rate: Optional[float] = None
    target_update: int = 100
    select_K: int = 100
    beta: float = 1.0
    finetune_K: int = 200
    delta: float = 1.0
    finetune_epochs: int = 5
    finetune_batch_size: int = 32
    finetune_learning_rate: Optional[float] = None
    replay: bool = False
    eval_episodes: int = 100
    oracle_n: int = 10_000
    stages: tuple = STAGES
    summary_last: int = 10
    output_dir: str = "runs"

    def __post_init__(self):
        self.lambdas = tuple(float(x) for x in self.lambdas)
        self.stages = tuple(self.stages)
        self.validate()

    def validate(self):
        if self.env_id not in DEFAULT_SCORE_PARAMS:
            raise ValueError(f"env: unknown environment {self.env_id!r}")
        if self.mode not in MODES:
            raise ValueError(f"mode: expected one of {MODES}, got {self.mode!r}")
        if not self.lambdas or min(self.lambdas) < 0:
            raise ValueError("offline.lambdas: need at least one value, all >= 0")
        bad = set(self.stages) - set(STAGES)
        if bad:
            raise ValueError(f"protocol.stages: unknown stage(s) {sorted(bad)}")
        for key, value in (("n_seeds", self.n_seeds), ("select.K", self.select_K),
                           ("finetune.K", self.finetune_K), ("offline.n_steps", self.n_steps),
                           ("summary.last", self.summary_last)):
            if value < 1:
                raise ValueError(f"{key}: must be >= 1")
        self.score_params()

    def score_params(self) -> ScoreParams:
        base = DEFAULT_SCORE_PARAMS[self.env_id]
        return ScoreParams(self.alpha1 if self.alpha1 is not None else base.alpha1,
                           self.alpha2 if self.alpha2 is not None else base.alpha2,
                           self.horizon if self.horizon is not None else base.horizon,
                           self.tau)

    def learner_params(self, discrete: bool) -> dict:
        params = {"epochs": self.epochs, "batch_size": self.batch_size,
                  "target_update": self.target_update}
        if self.learning_rate is not None:
            params["learning_rate"] = self.learning_rate
        if discrete:
            params["model"] = self.model
        return params

    def to_dict(self) -> dict:
        return {key: _plain(getattr(self, attr)) for key, (attr, _) in CONFIG_KEYS.items()}

    def config_hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()

    def dumps(self) -> str:
        lines = []
        for key, value in self.to_dict().items():
            if isinstance(value, list):
                value = ", ".join(str(v) for v in value)
            lines.append(f"{key} = {'' if value is None else value}")
        return "\n".join(lines) + "\n"


def _plain(value):
    if isinstance(value, tuple):
        return list(value)
    return value


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse flat dotted-key text; errors name the offending key."""
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                       comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string("[config]\n" + text, source=source)
    except configparser.Error as exc:
        raise ValueError(f"{source}: {exc}") from None
    values = {}
    for key, raw in parser["config"].items():
        if key not in CONFIG_KEYS:
            raise ValueError(f"{source}: unknown key {key!r}")
        attr, conv = CONFIG_KEYS[key]
        try:
            values[attr] = conv(raw)
        except ValueError as exc:
            raise ValueError(f"{source}: {key}: {exc}") from None
    try:
        return ExperimentConfig(**values)
    except ValueError as exc:
        raise ValueError(f"{source}: {exc}") from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_config(path.read_text(), str(path))


def package_versions() -> dict:
    try:
        pkg = metadata.version("deployrl")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"deployrl": pkg, "numpy": np.__version__, "format_version": FORMAT_VERSION}


@dataclass
class RunManifest:
    config_hash: str
    versions: dict = field(default_factory=package_versions)
    seeds: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)

    def add_file(self, path, root=None):
        path = Path(path)
        name = str(path.relative_to(root)) if root else path.name
        self.files[name] = sha256_file(path)

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(dataclasses.asdict(self), indent=1, sort_keys=True) + "\n")
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))

    def verify(self, root) -> list:
        """Names of files whose checksum no longer matches (missing files included)."""
        root = Path(root)
        bad = []
        for name, digest in sorted(self.files.items()):
            target = root / name
            if not target.is_file() or sha256_file(target) != digest:
                bad.append(name)
        return bad


def last_mean(values, last: int) -> float:
    values = np.asarray(values, dtype=float)
    return float(values[-last:].mean())


def mean_std(values):
    """Mean and sample standard deviation (0 for a single value)."""
    values = np.asarray(values, dtype=float)
    std = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return float(values.mean()), std


def pm(mean: float, std: float, digits: int = 2) -> str:
    return f"{mean:.{digits}f} ± {std:.{digits}f}"


@dataclass
class ProtocolResult:
    config: ExperimentConfig
    candidate_rows: list = field(default_factory=list)
    selection_rows: list = field(default_factory=list)
    finetune_rows: list = field(default_factory=list)
    files: dict = field(default_factory=dict)

    def selection_summary(self) -> dict:
        """``method -> per-seed means over the last iterations``."""
        last = self.config.summary_last
        out = {}
        for method in SELECTION_METHODS:
            per_seed = {}
            for row in self.selection_rows:
                if row[0] == method:
                    per_seed.setdefault(row[1], []).append(row[4])
            if per_seed:
                out[method] = [last_mean(v, last) for _, v in sorted(per_seed.items())]
        return out

    def finetune_disagreements(self, window: int = 20):
        """Per-seed ``(first-window mean, last-window mean)`` disagreements."""
        per_seed = {}
        for row in self.finetune_rows:
            per_seed.setdefault(row[0], []).append(row[4])
        return [(float(np.mean(v[:window])), float(np.mean(v[-window:])))
                for _, v in sorted(per_seed.items())]


def run_protocol(config: ExperimentConfig, out_dir=None) -> ProtocolResult:
    """Candidates, selection versus baselines, and fine-tuning of the worst model, per seed.

    With ``out_dir`` set, writes ``candidates.csv``, ``selection.csv``,
    ``finetune.csv``, ``summary.txt``, ``config.txt`` and ``manifest.json``.
    """
    env, expert = make_env(config.env_id)
    params = config.score_params()
    result = ProtocolResult(config)
    manifest = RunManifest(config.config_hash())
    for rep in range(config.n_seeds):
        cand_seed = stage_int(config.seed, "candidates", rep)
        manifest.seeds[f"candidates/{rep}"] = cand_seed
        cs = build_candidates(env, expert, config.lambdas, config.n_steps, config.epsilon,
                              cand_seed, **config.learner_params(env.discrete))
        scores = candidate_scores(cs.models, env, expert, params, config.oracle_n,
                                  stage_rng(config.seed, "oracle", rep))
        for i, (lam, m) in enumerate(zip(cs.lambdas, cs.models)):
            result.candidate_rows.append((rep, i, lam, float(scores[i]),
                                          float(np.mean(m.greedy_value(cs.dataset.s)))))
        s_star = float(scores.max())
        if "select" in config.stages:
            traces = {
                "ucb": run_selection(cs.models, env, expert, params, config.select_K, config.beta,
                                     stage_rng(config.seed, "select/ucb", rep), s_star),
                "highest_q": run_fixed(cs.models, baseline_highest_q(cs.models, cs.dataset), env,
                                       expert, params, config.select_K,
                                       stage_rng(config.seed, "select/highest_q", rep), s_star,
                                       "highest_q"),
                "random_ensemble": run_random_ensemble(
                    cs.models, env, expert, params, config.select_K,
                    stage_rng(config.seed, "select/random_ensemble", rep), s_star),
                "oracle": run_fixed(cs.models, baseline_oracle(scores), env, expert, params,
                                    config.select_K, stage_rng(config.seed, "select/oracle", rep),
                                    s_star, "oracle"),
            }
            for method, trace in traces.items():
                result.selection_rows.extend((method, rep) + row for row in trace.rows())
        if "finetune" in config.stages:
            worst = int(np.argmin(scores))
            ft_seed = stage_int(config.seed, "finetune", rep)
            manifest.seeds[f"finetune/{rep}"] = ft_seed
            tuner = OnlineFineTuner(config.finetune_K, config.delta, config.tau,
                                    config.finetune_epochs, config.finetune_batch_size,
                                    config.finetune_learning_rate, replay=config.replay,
                                    score_params=params, random_state=ft_seed)
            trace = tuner.fit(cs.models[worst], env, expert).trace_
            result.finetune_rows.extend((rep, worst) + row for row in trace.rows())
    if out_dir is not None:
        _write_protocol(result, Path(out_dir), manifest)
    return result


def protocol_summary(result: ProtocolResult) -> str:
    cfg = result.config
    lines = [f"env {cfg.env_id}, {cfg.n_seeds} seeds, mean ± std over seeds"]
    by_lambda = {}
    for _, _, lam, score, _ in result.candidate_rows:
        by_lambda.setdefault(lam, []).append(score)
    lines.append("")
    lines.append("expected score per candidate")
    for lam, vals in sorted(by_lambda.items()):
        lines.append(f"  lambda={lam:g}\t{pm(*mean_std(vals))}")
    summary = result.selection_summary()
    if summary:
        lines.append("")
        lines.append(f"selection, mean score over the last {cfg.summary_last} iterations")
        for method, vals in summary.items():
            lines.append(f"  {method}\t{pm(*mean_std(vals))}")
    if result.finetune_rows:
        pairs = result.finetune_disagreements()
        lines.append("")
        lines.append("fine-tuning disagreements per episode, first 20 -> last 20 iterations")
        lines.append(f"  {pm(*mean_std([a for a, _ in pairs]))} -> "
                     f"{pm(*mean_std([b for _, b in pairs]))}")
    return "\n".join(lines) + "\n"


def _write_protocol(result: ProtocolResult, out: Path, manifest: RunManifest):
    out.mkdir(parents=True, exist_ok=True)
    written = [write_csv(out / "candidates.csv", CANDIDATES_HEADER, result.candidate_rows)]
    if result.selection_rows:
        written.append(write_csv(out / "selection.csv", PROTOCOL_SELECTION_HEADER,
                                 result.selection_rows))
    if result.finetune_rows:
        written.append(write_csv(out / "finetune.csv", PROTOCOL_FINETUNE_HEADER,
                                 result.finetune_rows))
    summary = out / "summary.txt"
    summary.write_text(protocol_summary(result))
    config = out / "config.txt"
    config.write_text(result.config.dumps())
    for path in written + [summary, config]:
        manifest.add_file(path, out)
        result.files[path.name] = path
    manifest.write(out / "manifest.json")
    bad = manifest.verify(out)
    if bad:
        raise RuntimeError(f"manifest checksum mismatch for {bad}")
