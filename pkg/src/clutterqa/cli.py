"""Command line entry point: ``clutterqa <command> [options]``.

Options can also come from a JSON config file (``--config``), either flat or
keyed by command name; flags given on the command line win.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import bench, learner, oracle, plotting
from .qa import QType

log = logging.getLogger("clutterqa")

DEFAULTS = {
    "gen": {"n_series": 100, "questions_per_type": 10, "split": None, "difficulty": "mixed",
            "seed": 0},
    "demo": {"split": "train", "limit": None, "max_steps": oracle.MAX_STEPS, "seed": 0},
    "train": {"epochs": 200, "lr": 0.01, "momentum": 0.9, "hidden": learner.DEFAULT_HIDDEN,
              "grid": learner.DEFAULT_GRID, "seed": 0, "kind": "decoupled"},
    "eval": {"split": "test", "policy": "oracle", "checkpoint": None, "max_steps": oracle.MAX_STEPS},
    "ablate": {"split": "test", "policy": "oracle", "checkpoint": None, "steps": [0, 1, 5]},
    "render": {"series": 0, "question": 0, "policy": "oracle", "checkpoint": None,
               "max_steps": oracle.MAX_STEPS},
}


class CliError(Exception):
    """A precondition failed; reported without a traceback."""


def _int_list(s: str) -> list[int]:
    try:
        return [int(v) for v in s.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clutterqa", description=__doc__.splitlines()[0])
    p.add_argument("--config", type=Path, help="JSON file with option values")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a dataset directory")
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--n-series", dest="n_series", type=int)
    g.add_argument("--questions-per-type", dest="questions_per_type", type=int)
    g.add_argument("--split", type=_int_list, help="train,eval,test series counts (default 80/10/10 of n_series)")
    g.add_argument("--difficulty", choices=["easy", "hard", "mixed"])
    g.add_argument("--seed", type=int)

    d = sub.add_parser("demo", help="write oracle trajectories for a split")
    d.add_argument("--data", type=Path, required=True)
    d.add_argument("--out", type=Path, required=True)
    d.add_argument("--split", choices=bench.SPLITS)
    d.add_argument("--limit", type=int)
    d.add_argument("--max-steps", dest="max_steps", type=int)
    d.add_argument("--seed", type=int)

    t = sub.add_parser("train", help="fit the imitation model on a trajectory file")
    t.add_argument("--data", type=Path, required=True)
    t.add_argument("--demos", type=Path, required=True)
    t.add_argument("--out", type=Path, required=True)
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--momentum", type=float)
    t.add_argument("--hidden", type=int)
    t.add_argument("--grid", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--kind", choices=list(learner.HEAD_SIZES))

    for name, helptext in (("eval", "run a policy on a split and report metrics"),
                           ("ablate", "accuracy sweep over max_steps"),
                           ("render", "SVG frames of one episode")):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("--data", type=Path, required=True)
        e.add_argument("--out", type=Path, required=True)
        e.add_argument("--policy", choices=["oracle", "learned", "stop"])
        e.add_argument("--checkpoint", type=Path)
        if name == "render":
            e.add_argument("--series", type=int)
            e.add_argument("--question", type=int)
        else:
            e.add_argument("--split", choices=bench.SPLITS)
        if name == "ablate":
            e.add_argument("--steps", type=_int_list)
        else:
            e.add_argument("--max-steps", dest="max_steps", type=int)
    return p


def resolve_options(args: argparse.Namespace) -> dict:
    """Defaults, then the config file (flat or per command), then explicit flags."""
    opts = dict(DEFAULTS[args.command])
    if args.config is not None:
        if not args.config.is_file():
            raise CliError(f"config file not found: {args.config}")
        try:
            cfg = json.loads(args.config.read_text())
        except json.JSONDecodeError as exc:
            raise CliError(f"{args.config}: invalid JSON ({exc})")
        section = cfg.get(args.command, cfg) if isinstance(cfg, dict) else None
        if not isinstance(section, dict):
            raise CliError(f"{args.config}: expected a JSON object")
        unknown = set(section) - set(opts) - set(DEFAULTS) - {"data", "out", "demos"}
        if unknown:
            raise CliError(f"{args.config}: unknown options {sorted(unknown)}")
        opts.update({k: v for k, v in section.items() if k in opts})
    for k, v in vars(args).items():
        if v is not None and k not in ("command", "config", "verbose"):
            opts[k] = v
    return opts


def _load_dataset(path: Path) -> bench.Dataset:
    if not (path / "manifest.json").is_file():
        raise CliError(f"{path} is not a dataset directory (no manifest.json); run `clutterqa gen` first")
    return bench.load_dataset(path)


def _policy(opts: dict):
    name = opts["policy"]
    if name == "oracle":
        return oracle.OraclePolicy()
    if name == "stop":
        return bench.StopPolicy()
    ckpt = opts.get("checkpoint")
    if ckpt is None:
        raise CliError("--policy learned needs --checkpoint")
    if not Path(ckpt).is_file():
        raise CliError(f"checkpoint not found: {ckpt}")
    return learner.LearnedPolicy(learner.load_checkpoint(ckpt))


def _trajectories_from_file(ds: bench.Dataset, path: Path):
    """Rebuild Trajectory objects from a trajectory file by replaying its actions."""
    if not path.is_file():
        raise CliError(f"trajectory file not found: {path}")
    questions = {(r.series, r.index): r.question for r in ds.records()}
    out = []
    for demo, d in sorted(oracle.read_trajectory_actions(path).items()):
        key = (d["series"], d["question"])
        if key not in questions:
            raise CliError(f"{path}: demo {demo} refers to unknown question {key}")
        obs = bench.replay_observations(ds.scenes[key[0]], d["actions"])
        steps = [oracle.Step(o, questions[key], a) for o, a in zip(obs, d["actions"])]
        out.append(oracle.Trajectory(steps, ds.scenes[key[0]].seed))
    if not out:
        raise CliError(f"{path}: no trajectories")
    return out


def cmd_gen(opts: dict) -> None:
    cfg = bench.DatasetConfig(n_series=opts["n_series"], questions_per_type=opts["questions_per_type"],
                              split=opts["split"], difficulty=opts["difficulty"], seed=opts["seed"])
    ds = bench.generate_dataset(cfg, opts["out"])
    print(f"wrote {len(ds.scenes)} scenes and {len(ds.records())} questions to {opts['out']}")


def cmd_demo(opts: dict) -> None:
    ds = _load_dataset(opts["data"])
    demos = bench.demonstrations(ds, opts["split"], opts["max_steps"], opts["limit"], opts["seed"])
    if not demos:
        raise CliError(f"split {opts['split']!r} is empty")
    Path(opts["out"]).parent.mkdir(parents=True, exist_ok=True)
    oracle.write_trajectories(demos, opts["out"])
    pushes = sum(t.n_pushes for *_, t in demos)
    print(f"wrote {len(demos)} demonstrations ({pushes} pushes) to {opts['out']}")


def cmd_train(opts: dict) -> None:
    ds = _load_dataset(opts["data"])
    trajs = _trajectories_from_file(ds, opts["demos"])
    config = learner.TrainConfig.from_dict(opts)
    params, curve = learner.train(trajs, config)
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    learner.save_checkpoint(params, out / "checkpoint.json")
    curve.write_csv(out / "loss.csv")
    plotting.plot_loss_curves({config.kind: curve}, out / "loss.png")
    first, last = curve.rows[0]["total"], curve.rows[-1]["total"]
    print(f"trained on {len(trajs)} demonstrations: total loss {first:.4f} -> {last:.4f}; wrote {out}")


def cmd_eval(opts: dict) -> None:
    ds = _load_dataset(opts["data"])
    policy = _policy(opts)
    results = bench.run_split(ds, opts["split"], policy, opts["max_steps"])
    if not results:
        raise CliError(f"split {opts['split']!r} is empty")
    report = bench.episode_metrics(results)
    if isinstance(policy, learner.LearnedPolicy):
        demos = [t for *_, t in bench.demonstrations(ds, opts["split"], opts["max_steps"])]
        if any(t.n_pushes for t in demos):
            report.dis_e, report.a_e = learner.imitation_scores(policy.params, demos)
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "metrics.csv")
    plotting.plot_metrics(report, out / "metrics.png")
    with open(out / "episodes.jsonl", "w") as fh:
        for r in results:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")
    print(f"{opts['policy']} on {opts['split']}: accuracy {bench.accuracy(results):.3f} "
          f"over {len(results)} questions; wrote {out}")


def cmd_ablate(opts: dict) -> None:
    ds = _load_dataset(opts["data"])
    if any(k < 0 for k in opts["steps"]):
        raise CliError("max_steps values must be >= 0")
    sweep = bench.ablate_max_steps(ds, opts["split"], _policy(opts), tuple(opts["steps"]))
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    bench.write_ablation_csv(sweep, out / "ablation.csv")
    table = {}
    for k, res in sweep.items():
        row = {t.value: bench.accuracy([r for r in res if r.question.qtype is t]) for t in QType}
        row["overall"] = bench.accuracy(res)
        table[k] = row
    plotting.plot_ablation(table, out / "ablation.png")
    print(" ".join(f"max_steps={k}: {table[k]['overall']:.3f}" for k in sorted(table)))


def cmd_render(opts: dict) -> None:
    ds = _load_dataset(opts["data"])
    matches = [r for r in ds.records() if r.series == opts["series"] and r.index == opts["question"]]
    if not matches:
        raise CliError(f"no question {opts['question']} in series {opts['series']}")
    rec = matches[0]
    scene = ds.scenes[rec.series]
    result = bench.run_episode(scene, rec.question, _policy(opts), opts["max_steps"], rec.answer)
    paths = plotting.render_episode(scene, result, opts["out"])
    print(f"wrote {len(paths)} frames to {opts['out']}")


COMMANDS = {"gen": cmd_gen, "demo": cmd_demo, "train": cmd_train, "eval": cmd_eval,
            "ablate": cmd_ablate, "render": cmd_render}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](resolve_options(args))
    except (CliError, ValueError, KeyError, OSError) as exc:
        print(f"clutterqa {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
