"""Command line driver: ``ltlstitch <subcommand> ...``.

Settings come from built-in defaults, then ``--config FILE`` (flat
``key = value`` text), then explicit flags.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .buchi import build
from .embed import DisconnectedData
from .execute import ExecTrace, check_success, track, Navigator
from .plan import Infeasible, Plan
from .taskgen import GenerationExhausted, TIERS, gen_tasks, load_tasks, save_tasks
from .world import PRESETS, corridor_maze, gen_dataset, load_dataset, load_maze, make_maze, save_dataset, save_maze

EPISODE_VERSION = "ltlstitch.episode/1"


def _common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--config", help="flat key = value settings file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=out_required)


def _planning(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--topk", type=int)
    p.add_argument("--tau-soft", dest="tau_soft", type=float)
    p.add_argument("--htd", type=float)
    p.add_argument("--variant", choices=pl.VARIANTS)


def parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ltlstitch", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen-maze", help="generate a maze layout")
    p.add_argument("--size", default="medium", help=f"preset ({', '.join(PRESETS)}), 'corridor' or a cell count")
    p.add_argument("--length", type=int, default=30, help="corridor length")
    _common(p)

    p = sub.add_parser("gen-dataset", help="roll out an offline dataset in a maze")
    p.add_argument("maze")
    p.add_argument("--regime", choices=("navigate", "stitch", "explore"), default="stitch")
    p.add_argument("--rollouts", type=int, default=100)
    p.add_argument("--max-len", type=int, default=400)
    p.add_argument("--explore-len", type=int, default=100)
    _common(p)

    p = sub.add_parser("build", help="fit the embedding and build the base latent graph")
    p.add_argument("maze")
    p.add_argument("dataset")
    p.add_argument("--htd", type=float)
    _common(p)

    p = sub.add_parser("gen-tasks", help="sample random LTL tasks with regions")
    p.add_argument("maze")
    p.add_argument("--difficulty", choices=tuple(TIERS), default="simple")
    p.add_argument("-n", type=int, default=10)
    _common(p)

    p = sub.add_parser("plan", help="synthesize a prefix-suffix plan for one task")
    p.add_argument("artifact")
    p.add_argument("maze")
    p.add_argument("tasks")
    p.add_argument("--task", type=int, default=0)
    p.add_argument("--start", help="x,y (default: sampled clear of the regions)")
    _planning(p)
    _common(p)

    p = sub.add_parser("exec", help="execute a planned episode")
    p.add_argument("artifact")
    p.add_argument("maze")
    p.add_argument("tasks")
    p.add_argument("episode", help="output of the plan subcommand")
    p.add_argument("--max-steps", dest="max_steps", type=int)
    _common(p)

    p = sub.add_parser("eval", help="plan and execute many episodes, write a metrics CSV")
    p.add_argument("artifact")
    p.add_argument("maze")
    p.add_argument("tasks")
    p.add_argument("--episodes", type=int, help="initial states per task")
    p.add_argument("--no-timing", action="store_true", help="record planning time as 0 for byte-stable CSVs")
    _planning(p)
    _common(p)

    p = sub.add_parser("render", help="draw a task, its anchors and an executed trace as SVG")
    p.add_argument("artifact")
    p.add_argument("maze")
    p.add_argument("tasks")
    p.add_argument("--task", type=int, default=0)
    p.add_argument("--plan", help="episode file (for the start state)")
    p.add_argument("--trace", help="trace file written by exec")
    _common(p)
    return ap


def settings(args: argparse.Namespace) -> pl.Settings:
    values = {}
    if getattr(args, "config", None):
        values.update(pl.parse_config(Path(args.config).read_text()))
    for k in ("seed", "lam", "topk", "tau_soft", "htd", "variant", "episodes", "max_steps"):
        v = getattr(args, k, None)
        if v is not None:
            values[k] = v
    if getattr(args, "no_timing", False):
        values["timing"] = False
    return pl.make_settings(values)


def _load_art(path) -> pl.Artifact:
    return pl.Artifact.loads(Path(path).read_text())


def _task(path, i):
    tasks = load_tasks(path)
    if not 0 <= i < len(tasks):
        raise ValueError(f"task index {i} out of range (0..{len(tasks) - 1})")
    return tasks[i]


def cmd_gen_maze(args, st):
    if args.size == "corridor":
        m = corridor_maze(args.length)
    else:
        m = make_maze(int(args.size) if args.size.isdigit() else args.size, seed=st.seed)
    save_maze(m, args.out)
    print(f"maze {m.shape[0]}x{m.shape[1]} -> {args.out}")


def cmd_gen_dataset(args, st):
    m = load_maze(args.maze)
    ds = gen_dataset(m, args.regime, seed=st.seed, n_rollouts=args.rollouts, max_len=args.max_len,
                     explore_len=args.explore_len)
    save_dataset(ds, args.out)
    print(f"{len(ds)} trajectories, {sum(len(t) for t in ds)} states -> {args.out}")


def cmd_build(args, st):
    load_maze(args.maze)
    art = pl.build_artifact(load_dataset(args.dataset), st)
    Path(args.out).write_text(art.dumps())
    print(f"nodes {art.graph.n_nodes} edges {len(art.graph.edges)} -> {args.out}")


def cmd_gen_tasks(args, st):
    tasks = gen_tasks(load_maze(args.maze), args.difficulty, args.n, seed=st.seed)
    save_tasks(tasks, args.out)
    print(f"{len(tasks)} {args.difficulty} tasks -> {args.out}")


def _start(args, m, task, st):
    if args.start:
        return np.array([float(x) for x in args.start.split(",")])
    return pl.task_starts(m, task, 1, st)[0]


def cmd_plan(args, st):
    art, m = _load_art(args.artifact), load_maze(args.maze)
    task = _task(args.tasks, args.task)
    s0 = _start(args, m, task, st)
    g = pl.task_graph(art, task, m, st)
    p = pl.make_plan(g, build(task.formula, task.labels), s0, art.embedding, st)
    doc = {"version": EPISODE_VERSION, "task": args.task, "start": s0.tolist(), "plan": p.to_json()}
    Path(args.out).write_text(json.dumps(doc) + "\n")
    print(f"{p.variant}: prefix {len(p.prefix)} suffix {len(p.suffix)} J {p.J:.3f} -> {args.out}")


def _episode(path):
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != EPISODE_VERSION:
        raise ValueError(f"unsupported episode format {doc.get('version')!r}")
    return doc["task"], np.array(doc["start"], dtype=float), Plan.from_json(doc["plan"])


def cmd_exec(args, st):
    art, m = _load_art(args.artifact), load_maze(args.maze)
    ti, s0, p = _episode(args.episode)
    task = _task(args.tasks, ti)
    g = pl.task_graph(art, task, m, st)
    tr = track(m, task.regions, g, p, art.embedding, s0, st.exec_config(), Navigator(m, task.regions))
    Path(args.out).write_text(tr.dumps())
    ok = check_success(tr, build(task.formula, task.labels), p)
    print(f"{tr.outcome} success={ok} steps={tr.n_steps} length={tr.length} -> {args.out}")


def cmd_eval(args, st):
    art, m = _load_art(args.artifact), load_maze(args.maze)
    recs = pl.evaluate(art, m, load_tasks(args.tasks), st)
    with open(args.out, "w", newline="") as fh:
        pl.write_csv(recs, fh)
    s = pl.summarize(recs)
    print(f"{st.variant}: SR {100 * s['sr']:.1f}% ({s['successes']}/{s['episodes']}), "
          f"time {s['plan_time'][0]:.3f}s, length {s['length'][0]:.1f} -> {args.out}")


def cmd_render(args, st):
    art, m = _load_art(args.artifact), load_maze(args.maze)
    ti = args.task
    start = None
    if args.plan:
        ti, start, _ = _episode(args.plan)
    task = _task(args.tasks, ti)
    tr = ExecTrace.loads(Path(args.trace).read_text()) if args.trace else None
    svg = pl.render_svg(m, task, tr, pl.task_graph(art, task, m, st), start)
    Path(args.out).write_text(svg)
    print(f"figure -> {args.out}")


COMMANDS = {
    "gen-maze": cmd_gen_maze, "gen-dataset": cmd_gen_dataset, "build": cmd_build,
    "gen-tasks": cmd_gen_tasks, "plan": cmd_plan, "exec": cmd_exec, "eval": cmd_eval,
    "render": cmd_render,
}


def main(argv=None) -> int:
    args = parser().parse_args(argv)
    try:
        COMMANDS[args.cmd](args, settings(args))
    except (OSError, ValueError, KeyError, DisconnectedData, GenerationExhausted, Infeasible) as exc:
        print(f"ltlstitch {args.cmd}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
