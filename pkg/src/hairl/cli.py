"""``hairl`` command line: expert data, training, evaluation, exact checks, export.

Exit codes: 0 success, 1 usage / input error, 2 numeric failure, 3 check failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .errors import NumericError

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_CHECK = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- gen-expert ----------------------------------------------------------------

def cmd_gen_expert(args) -> int:
    from .envs import expert_demos, resolve_env_id, write_demos
    env_id = resolve_env_id(args.env, args.task)
    demos = expert_demos(env_id, args.episodes, seed=args.seed, annotate=args.annotate)
    write_demos(args.out, demos)
    reached = sum(t.terminated for t in demos.trajectories)
    print(f"wrote {len(demos)} demonstrations for {demos.env_id} to {args.out}; "
          f"expert return {demos.expert_return:.4f} ± {demos.expert_return_std:.4f}; "
          f"{reached}/{len(demos)} reached the goal")
    return EXIT_OK


# --- train ---------------------------------------------------------------------

RUN_KEYS = ("demos", "out", "init_from", "num_demos")


def load_config(path) -> dict:
    import yaml
    text = Path(path).read_text()
    data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise UsageError("config file must hold a mapping")
    return data


def resolve_run(args) -> tuple:
    """Merge config file and flags into ``(TrainConfig, run options)``; no compute yet."""
    from .trainer import TrainConfig
    raw = load_config(args.config) if args.config else {}
    run = {k: raw.pop(k) for k in RUN_KEYS if k in raw}
    if args.mode:
        raw["mode"] = args.mode
    for key in ("seed", "episodes"):
        if getattr(args, key, None) is not None:
            raw[key] = getattr(args, key)
    for key in ("demos", "out", "init_from"):
        if getattr(args, key, None):
            run[key] = getattr(args, key)
    try:
        cfg = TrainConfig.from_dict(raw)
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid config: {e}") from None
    for key in ("demos", "out"):
        if not run.get(key):
            raise UsageError(f"missing required setting {key!r} (flag or config key)")
    return cfg, run


def cmd_train(args) -> int:
    from .envs import read_demos
    from .trainer import Trainer
    cfg, run = resolve_run(args)
    demos = read_demos(run["demos"])
    if run.get("num_demos"):
        demos = demos.subset(int(run["num_demos"]))
    if cfg.expert_annotations == "inferred":
        demos = demos.without_options()
    trainer = Trainer(cfg, demos)
    if run.get("init_from"):
        trainer.transfer_init(run["init_from"])
    out = Path(run["out"])
    out.mkdir(parents=True, exist_ok=True)
    resolved = {**cfg.to_dict(), **{k: run[k] for k in RUN_KEYS if k in run}}
    (out / "resolved_config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")
    trainer.run(out_dir=out)
    ev = trainer.evaluate()
    summary = {"episodes": trainer.episode, "eval_return_mean": ev.mean, "eval_return_std": ev.std,
               "option_usage": ev.option_usage.tolist(), "expert_return": demos.expert_return}
    (out / "eval.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"trained {trainer.episode} episodes; eval return {ev.mean:.4f} ± {ev.std:.4f} "
          f"(expert {demos.expert_return:.4f}); option usage {np.round(ev.option_usage, 3).tolist()}")
    return EXIT_OK


# --- eval ----------------------------------------------------------------------

def cmd_eval(args) -> int:
    from .envs import make_env
    from .trainer import evaluate, load_policy
    policy, meta = load_policy(args.checkpoint)
    env_id = args.env if args.env else meta["env"]
    env = make_env(env_id, args.task)
    if env.state_dim != policy.state_dim or env.action_spec != policy.action_spec:
        raise UsageError(f"checkpoint does not fit environment {env.env_id}")
    res = evaluate(env, policy, args.episodes, np.random.default_rng(args.seed), greedy=args.greedy)
    print(f"{env.env_id}: return {res.mean:.4f} ± {res.std:.4f} over {args.episodes} episodes")
    print("option usage: " + " ".join(f"{i}:{u:.3f}" for i, u in enumerate(res.option_usage)))
    return EXIT_OK


# --- oracle-check --------------------------------------------------------------

def cmd_oracle_check(args) -> int:
    from .oracle import run_suites
    results = run_suites(args.suite, args.seed)
    for r in results:
        print(f"[{'PASS' if r.passed else 'FAIL'}] {r.name}: {r.detail}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


# --- export --------------------------------------------------------------------

def _read_metrics(path) -> tuple[list[str], list[dict]]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or "env_return_mean" not in reader.fieldnames:
            raise UsageError(f"{path} is not a metrics file")
        return list(reader.fieldnames), list(reader)


def cmd_export(args) -> int:
    tables = [_read_metrics(p) for p in args.metrics]
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        if len(tables) == 1:
            cols, rows = tables[0]
            w.writerow(cols + ["band_lower", "band_upper"])
            for r in rows:
                m, s = float(r["env_return_mean"]), float(r["env_return_std"])
                w.writerow([r[c] for c in cols] + [repr(m - s), repr(m + s)])
        else:
            n = min(len(rows) for _, rows in tables)
            w.writerow(["episode", "env_return_mean", "env_return_std", "band_lower",
                        "band_upper", "num_runs"])
            for i in range(n):
                vals = np.array([float(rows[i]["env_return_mean"]) for _, rows in tables])
                m, s = float(vals.mean()), float(vals.std())
                w.writerow([tables[0][1][i]["episode"], repr(m), repr(s), repr(m - s),
                            repr(m + s), len(tables)])
    print(f"wrote {args.out}")
    return EXIT_OK


# --- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hairl", description="Hierarchical adversarial inverse RL")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-expert", help="write expert demonstrations")
    g.add_argument("--env", required=True, help="e.g. fourrooms, pointroom, fourrooms-t1")
    g.add_argument("--task", default=None, help="t1 or t2 (optional if part of --env)")
    g.add_argument("--episodes", type=int, default=10)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--annotate", action="store_true", help="store option labels")
    g.set_defaults(func=cmd_gen_expert)

    t = sub.add_parser("train", help="run adversarial hierarchical imitation")
    t.add_argument("--config", default=None, help="YAML or JSON file with config keys")
    t.add_argument("--demos", default=None)
    t.add_argument("--mode", choices=("h-airl", "option-airl", "h-gail"), default=None)
    t.add_argument("--init-from", dest="init_from", default=None, help="checkpoint to transfer from")
    t.add_argument("--out", default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--episodes", type=int, default=None)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--env", default=None)
    e.add_argument("--task", default=None)
    e.add_argument("--episodes", type=int, default=20)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--greedy", action="store_true", help="argmax at both levels")
    e.set_defaults(func=cmd_eval)

    o = sub.add_parser("oracle-check", help="exact checks on tiny enumerable instances")
    o.add_argument("--suite", default="all",
                   choices=("all", "bound", "mc", "kl", "em", "factorization"))
    o.add_argument("--seed", type=int, default=0)
    o.set_defaults(func=cmd_oracle_check)

    x = sub.add_parser("export", help="plottable return curves with std bands")
    x.add_argument("--metrics", nargs="+", required=True)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    from .errors import DemoParseError, SchemaError
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, DemoParseError, SchemaError, ValueError, OSError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
