"""Command-line entry point: ``python -m agps <command> ...``.

Configuration is layered: built-in defaults, then ``--config`` files in order
(``key = value`` lines, dotted keys reach nested sections, values parsed as
JSON when possible), then explicit flags.  Exit codes: 0 ok, 1 runtime
failure, 2 usage error.
"""
import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .. import env as envmod
from ..errors import AGPSError, ConfigurationError
from ..orchestrator import RunConfig
from .baselines import BASELINES
from .experiments import ExperimentSpec, ablate_memory, eval_checkpoint, export_qmap, run_experiment

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parse_config_text(text):
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {n}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def _tuplify(v):
    return tuple(_tuplify(x) for x in v) if isinstance(v, list) else v


def build_config(args):
    overrides = {}
    for path in args.config or []:
        p = Path(path)
        if not p.is_file():
            raise UsageError(f"config file not found: {path}")
        overrides.update(parse_config_text(p.read_text()))
    env_kw = {k[4:]: _tuplify(v) for k, v in overrides.items() if k.startswith("env.")}
    rest = {k: _tuplify(v) for k, v in overrides.items() if not k.startswith("env.")}
    task = args.task or rest.pop("task", envmod.INSERTION)
    rest.pop("task", None)
    try:
        cfg = RunConfig(env=envmod.default_config(task, **env_kw))
        cfg = cfg.with_overrides(**rest)
        flags = {}
        if getattr(args, "budget", None) is not None:
            flags["budget"] = args.budget
        if getattr(args, "agent", None) is not None:
            flags["agent"] = args.agent
        if getattr(args, "remote_url", None) is not None:
            flags["remote_url"] = args.remote_url
        if getattr(args, "single_threaded", False):
            flags["threaded"] = False
        elif getattr(args, "threaded", False):
            flags["threaded"] = True
        return cfg.with_overrides(**flags)
    except (ConfigurationError, TypeError) as exc:
        raise UsageError(str(exc)) from exc


def _seeds(text):
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise UsageError(f"--seeds must be a comma-separated list of integers, got {text!r}") from exc
    if not seeds:
        raise UsageError("--seeds must name at least one seed")
    return seeds


def _common(p, budget=True):
    p.add_argument("--task", choices=envmod.TASKS)
    p.add_argument("--config", action="append", help="key = value file; may be repeated")
    if budget:
        p.add_argument("--budget", type=int)


def make_parser():
    parser = _Parser(prog="agps", description="Agent-guided policy search experiments")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("demo-gen", help="generate scripted demonstrations")
    _common(p, budget=False)
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train one baseline over several seeds")
    _common(p)
    p.add_argument("--baseline", choices=BASELINES, default="agps")
    p.add_argument("--demos", help="demonstration file from demo-gen (generated per seed if omitted)")
    p.add_argument("--seeds", default="0")
    p.add_argument("--agent", choices=("oracle", "remote", "none"))
    p.add_argument("--remote-url")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--single-threaded", action="store_true")
    mode.add_argument("--threaded", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="evaluate a checkpoint with the deterministic policy")
    p.add_argument("checkpoint")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = sub.add_parser("ablate-memory", help="paired memory on/off runs")
    _common(p)
    p.add_argument("--seeds", default="0")
    p.add_argument("--agent", choices=("oracle", "remote"))
    p.add_argument("--remote-url")
    p.add_argument("--single-threaded", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("export-qmap", help="critic value map with the oracle box overlay")
    p.add_argument("checkpoint")
    p.add_argument("--resolution", type=int, default=25)
    p.add_argument("--out", required=True)
    return parser


def _say(msg):
    print(msg, flush=True)


def cmd_demo_gen(args):
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    cfg = build_config(args).env
    demos = envmod.generate_demos(cfg, args.n, np.random.default_rng(args.seed))
    demos.save(args.out)
    _say(f"wrote {len(demos)} demonstrations to {args.out}")
    return EXIT_OK


def cmd_train(args):
    cfg = build_config(args)
    demos = None
    if args.demos:
        if not Path(args.demos).is_file():
            raise UsageError(f"demo file not found: {args.demos}")
        demos = envmod.DemoSet.load(args.demos)
        if demos.cfg.task != cfg.env.task:
            raise UsageError(f"demo file is for task {demos.cfg.task!r}, run is {cfg.env.task!r}")
    spec = ExperimentSpec(name=f"{args.baseline}-{cfg.env.task}", baseline=args.baseline,
                          seeds=tuple(_seeds(args.seeds)), base=cfg, out_dir=args.out)
    archive = run_experiment(spec, demos=demos, progress=lambda s, m: _say(
        f"seed {s}: final success {m.final_success:.2f}, triggers {len(m.triggers)}, "
        f"{m.env_steps} steps in {m.wall_clock:.0f}s" + (f" ABORTED: {m.error}" if m.aborted else "")))
    _say(f"median final success {archive.median_final:.2f} over seeds {list(spec.seeds)}")
    return EXIT_RUNTIME if archive.aborted else EXIT_OK


def cmd_eval(args):
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    if not Path(args.checkpoint).is_file():
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    rate = eval_checkpoint(args.checkpoint, args.n, args.seed)
    _say(f"success rate {rate:.2f} over {args.n} episodes")
    if args.out:
        Path(args.out).write_text(json.dumps({"checkpoint": args.checkpoint, "n": args.n, "success_rate": rate}) + "\n")
    return EXIT_OK


def cmd_ablate_memory(args):
    cfg = build_config(args)
    report = ablate_memory(_seeds(args.seeds), cfg, args.out)
    for row in report["rows"]:
        _say(f"seed {row['seed']}: fresh calls {row['fresh_calls_on']} (memory) vs {row['fresh_calls_off']} "
             f"(no memory), speedup {row['speedup']}")
    return EXIT_OK


def cmd_export_qmap(args):
    if not Path(args.checkpoint).is_file():
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    report, _ = export_qmap(args.checkpoint, args.out, args.resolution)
    _say(f"argmax-to-box-centre distance {report['distance']:.4f} m "
         f"(half diagonal {report['bbox_half_diagonal']:.4f} m)")
    return EXIT_OK


COMMANDS = {
    "demo-gen": cmd_demo_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate-memory": cmd_ablate_memory,
    "export-qmap": cmd_export_qmap,
}


def main(argv=None):
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required: " + ", ".join(COMMANDS))
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (AGPSError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
