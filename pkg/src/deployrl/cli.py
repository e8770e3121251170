"""Command line front end.

    deployrl gen-dataset   --env grid5 --seed 0 --out data.jsonl
    deployrl train-offline --data data.jsonl --lambdas 0,1,5,10,100 --seed 0 --out-dir cands/
    deployrl eval          --env grid5 --model cands/candidate_0.model --episodes 100
    deployrl select        --env grid5 --candidates cands/ --K 300 --beta 1 --seed 7 --out trace.csv
    deployrl finetune      --env grid5 --model cands/candidate_0.model --K 200 --seed 3 --out ft.csv
    deployrl report        --trace trace.csv
    deployrl reproduce     --config grid5.cfg --out-dir runs/grid5

Exit codes: 0 success, 1 runtime failure (message on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import re
import sys
from pathlib import Path

import numpy as np

from . import io
from .envs import ENV_IDS, make_env
from .finetune import OnlineFineTuner
from .harness import RunManifest, load_config, mean_std, pm, run_protocol
from .offline import collect_dataset, make_learner
from .scoring import DEFAULT_SCORE_PARAMS, ScoreParams, rollout_episode
from .seeding import stage_int, stage_rng
from .selection import (baseline_highest_q, baseline_oracle, candidate_scores, run_fixed,
                        run_random_ensemble, run_selection)


class UsageError(Exception):
    pass


def _lambdas(text):
    try:
        return [float(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of numbers: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deployrl",
                                     description="Offline RL model selection and fine-tuning "
                                                 "under expert supervision.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-dataset", help="collect an epsilon-greedy expert dataset")
    p.add_argument("--env", required=True, choices=ENV_IDS)
    p.add_argument("--n-steps", type=int, default=20_000)
    p.add_argument("--epsilon", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-offline", help="train conservative offline models")
    p.add_argument("--data", required=True)
    p.add_argument("--lambda", dest="lam", type=float, help="train one model (use with --out)")
    p.add_argument("--lambdas", type=_lambdas, help="train one model per value (use with --out-dir)")
    p.add_argument("--model", choices=("tabular", "mlp"), default="tabular")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--out-dir")

    p = sub.add_parser("eval", help="roll out a model under supervision and log every episode")
    p.add_argument("--env", required=True, choices=ENV_IDS)
    p.add_argument("--model", required=True)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV path (default: stdout)")

    p = sub.add_parser("select", help="online model selection over a candidate directory")
    p.add_argument("--env", required=True, choices=ENV_IDS)
    p.add_argument("--candidates", required=True, help="directory of .model files")
    p.add_argument("--K", type=int, default=100)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--method", default="ucb",
                   choices=("ucb", "highest_q", "random_ensemble", "oracle"))
    p.add_argument("--data", help="offline dataset, needed by --method highest_q")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("finetune", help="fine-tune one model from expert overrides")
    p.add_argument("--env", required=True, choices=ENV_IDS)
    p.add_argument("--model", required=True)
    p.add_argument("--K", type=int, default=200)
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--tau", type=float, default=0.09)
    p.add_argument("--replay", action="store_true", help="keep overrides across iterations")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--save-model", help="write the fine-tuned model here")

    p = sub.add_parser("report", help="summarise trace CSVs as mean ± std tables")
    p.add_argument("--trace", required=True, nargs="+")
    p.add_argument("--last", type=int, default=10, help="iterations averaged per run")

    p = sub.add_parser("reproduce", help="run the full protocol from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", help="overrides output.dir from the config")

    for name in ("gen-dataset", "train-offline", "eval", "select", "finetune", "reproduce"):
        sub.choices[name].add_argument("--manifest", help="also write a run manifest (JSON) here")
    return parser


def _score_params(env_id, tau=None) -> ScoreParams:
    base = DEFAULT_SCORE_PARAMS[env_id]
    return ScoreParams(base.alpha1, base.alpha2, base.horizon, base.tau if tau is None else tau)


def _load_for_env(path, env_id):
    model = io.load_model(path)
    if model.env_id_ != env_id:
        raise ValueError(f"{path}: model was trained on {model.env_id_!r}, not {env_id!r}")
    return model


def _natural_key(path: Path):
    return [int(t) if t.isdigit() else t for t in re.split(r"(\d+)", path.name)]


def _finish(args, outputs, seeds):
    if getattr(args, "manifest", None):
        manifest = RunManifest(_args_hash(args), seeds=seeds)
        for path in outputs:
            manifest.add_file(path)
        manifest.write(args.manifest)
    return 0


def _args_hash(args) -> str:
    items = {k: v for k, v in sorted(vars(args).items()) if k != "manifest"}
    return hashlib.sha256(json.dumps(items, sort_keys=True, default=str).encode()).hexdigest()


def cmd_gen_dataset(args):
    env, expert = make_env(args.env)
    seed = stage_int(args.seed, "dataset")
    data = collect_dataset(env, expert, args.epsilon, args.n_steps, np.random.default_rng(seed),
                           seed=args.seed)
    out = io.save_dataset(data, args.out)
    print(f"wrote {len(data)} transitions to {out}")
    return _finish(args, [out], {"dataset": seed})


def cmd_train_offline(args):
    if (args.lam is None) == (args.lambdas is None):
        raise UsageError("give exactly one of --lambda or --lambdas")
    if args.lam is not None and not args.out:
        raise UsageError("--lambda needs --out")
    if args.lambdas is not None and not args.out_dir:
        raise UsageError("--lambdas needs --out-dir")
    data = io.load_dataset(args.data)
    env, _ = make_env(data.env_id)
    params = {"epochs": args.epochs, "batch_size": args.batch_size, "gamma": env.gamma}
    if args.learning_rate is not None:
        params["learning_rate"] = args.learning_rate
    if data.discrete:
        params["model"] = args.model
    lambdas = [args.lam] if args.lam is not None else args.lambdas
    outputs, seeds = [], {}
    if args.out_dir:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
    for i, lam in enumerate(lambdas):
        seed = stage_int(args.seed, "train", i)
        seeds[f"train/{i}"] = seed
        model = make_learner(data, lam, seed, **params).fit(data)
        path = Path(args.out) if args.lam is not None else Path(args.out_dir) / f"candidate_{i}.model"
        outputs.append(io.save_model(model, path, data.env_id))
        print(f"lambda={lam:g}: {path}")
    return _finish(args, outputs, seeds)


def cmd_eval(args):
    env, expert = make_env(args.env)
    model = _load_for_env(args.model, args.env)
    params = _score_params(args.env)
    rng = stage_rng(args.seed, "eval")
    model_id = Path(args.model).stem
    rows = []
    for i in range(args.episodes):
        log = rollout_episode(model, expert, env, params, rng)
        rows.append((args.seed, i + 1, model_id, log.env_return, log.disagreements, log.score))
    cols = np.array([r[3:] for r in rows], dtype=float)
    means = cols.mean(axis=0) if len(rows) else np.zeros(3)
    rows.append((args.seed, "mean", model_id, float(means[0]), float(means[1]), float(means[2])))
    text = io.csv_text(io.EVAL_HEADER, rows)
    if args.out:
        Path(args.out).write_text(text)
        return _finish(args, [Path(args.out)], {"eval": stage_int(args.seed, "eval")})
    sys.stdout.write(text)
    return 0


def cmd_select(args):
    env, expert = make_env(args.env)
    folder = Path(args.candidates)
    if not folder.is_dir():
        raise FileNotFoundError(f"candidate directory not found: {folder}")
    paths = sorted(folder.glob("*.model"), key=_natural_key)
    if not paths:
        raise FileNotFoundError(f"no .model files in {folder}")
    models = [_load_for_env(p, args.env) for p in paths]
    params = _score_params(args.env)
    scores = candidate_scores(models, env, expert, params, rng=stage_rng(args.seed, "oracle"))
    s_star = float(scores.max())
    rng = stage_rng(args.seed, f"select/{args.method}")
    if args.method == "ucb":
        trace = run_selection(models, env, expert, params, args.K, args.beta, rng, s_star)
    elif args.method == "random_ensemble":
        trace = run_random_ensemble(models, env, expert, params, args.K, rng, s_star)
    elif args.method == "oracle":
        trace = run_fixed(models, baseline_oracle(scores), env, expert, params, args.K, rng,
                          s_star, "oracle")
    else:
        if not args.data:
            raise UsageError("--method highest_q needs --data")
        arm = baseline_highest_q(models, io.load_dataset(args.data))
        trace = run_fixed(models, arm, env, expert, params, args.K, rng, s_star, "highest_q")
    out = io.write_csv(args.out, io.SELECTION_HEADER, trace.rows())
    for i, p in enumerate(paths):
        print(f"arm {i}: {p.name}  expected score {scores[i]:.4f}")
    print(f"mean score, last 10: {np.mean(trace.scores[-10:]):.4f}; best arm {trace.best_so_far[-1]}")
    return _finish(args, [out], {f"select/{args.method}": args.seed})


def cmd_finetune(args):
    env, expert = make_env(args.env)
    model = _load_for_env(args.model, args.env)
    params = _score_params(args.env, args.tau)
    seed = stage_int(args.seed, "finetune")
    tuner = OnlineFineTuner(args.K, delta=args.delta, tau=args.tau, replay=args.replay,
                            score_params=params, random_state=seed).fit(model, env, expert)
    out = io.write_csv(args.out, io.FINETUNE_HEADER, tuner.trace_.rows())
    outputs = [out]
    if args.save_model:
        outputs.append(io.save_model(tuner.model_, args.save_model, args.env))
    d = np.asarray(tuner.trace_.disagreements, dtype=float)
    print(f"disagreements per episode: first 20 {d[:20].mean():.2f}, last 20 {d[-20:].mean():.2f}")
    return _finish(args, outputs, {"finetune": seed})


def _f(row, key) -> float:
    return float(row[key])


def summarize_trace(kind, rows, last=10):
    """Summary lines for one parsed trace; values are mean ± std over seeds."""
    f = _f
    lines = []
    if kind in ("selection", "finetune"):
        scores = [f(r, "score") for r in rows]
        lines.append(f"score, last {last}\t{pm(*mean_std([np.mean(scores[-last:])]))}")
        if kind == "selection":
            lines.append(f"regret_paper_sign at K={len(rows)}\t{f(rows[-1], 'regret_paper_sign'):.4f}")
            lines.append(f"best arm\t{rows[-1]['best_arm_so_far']}")
        else:
            d = [f(r, "disagreements") for r in rows]
            lines.append(f"disagreements, first 20 -> last 20\t{np.mean(d[:20]):.2f} -> "
                         f"{np.mean(d[-20:]):.2f}")
    elif kind == "eval":
        episodes = [r for r in rows if r["iteration"] != "mean"]
        lines.append(f"score per episode\t{pm(*mean_std([f(r, 'score') for r in episodes]))}")
        lines.append(f"disagreements per episode\t"
                     f"{pm(*mean_std([f(r, 'disagreements') for r in episodes]))}")
    elif kind == "protocol-selection":
        groups = {}
        for r in rows:
            groups.setdefault(r["method"], {}).setdefault(r["seed"], []).append(f(r, "score"))
        for method, seeds in groups.items():
            vals = [np.mean(v[-last:]) for v in seeds.values()]
            lines.append(f"{method}\t{pm(*mean_std(vals))}")
    elif kind == "protocol-finetune":
        seeds = {}
        for r in rows:
            seeds.setdefault(r["seed"], []).append(r)
        first = [np.mean([f(r, "disagreements") for r in v[:20]]) for v in seeds.values()]
        final = [np.mean([f(r, "disagreements") for r in v[-20:]]) for v in seeds.values()]
        score = [np.mean([f(r, "score") for r in v[-last:]]) for v in seeds.values()]
        lines.append(f"score, last {last}\t{pm(*mean_std(score))}")
        lines.append(f"disagreements, first 20\t{pm(*mean_std(first))}")
        lines.append(f"disagreements, last 20\t{pm(*mean_std(final))}")
    elif kind == "candidates":
        groups = {}
        for r in rows:
            groups.setdefault(float(r["lambda"]), []).append(f(r, "expected_score"))
        for lam, vals in sorted(groups.items()):
            lines.append(f"lambda={lam:g}\t{pm(*mean_std(vals))}")
    return lines


def cmd_report(args):
    if args.last < 1:
        raise UsageError("--last must be >= 1")
    for path in args.trace:
        kind, rows = io.read_trace(path)
        if not rows:
            raise ValueError(f"{path}: no data rows")
        print(f"{path} ({kind})")
        for line in summarize_trace(kind, rows, args.last):
            print(f"  {line}")
    return 0


def cmd_reproduce(args):
    config = load_config(args.config)
    out_dir = Path(args.out_dir or config.output_dir)
    result = run_protocol(config, out_dir)
    sys.stdout.write((out_dir / "summary.txt").read_text())
    print(f"outputs in {out_dir}: {', '.join(sorted(result.files))}")
    if getattr(args, "manifest", None):
        RunManifest.read(out_dir / "manifest.json").write(args.manifest)
    return 0


COMMANDS = {
    "gen-dataset": cmd_gen_dataset,
    "train-offline": cmd_train_offline,
    "eval": cmd_eval,
    "select": cmd_select,
    "finetune": cmd_finetune,
    "report": cmd_report,
    "reproduce": cmd_reproduce,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"deployrl {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError, FloatingPointError, KeyError) as exc:
        print(f"deployrl {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
