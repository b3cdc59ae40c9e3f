"""Command-line entry points: gen-scenes, run-suite, eval, serve."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import evaluation
from .agent import EpisodeConfig, EpisodeRecord
from .suite import build_suite, run_suite, save_suite, suite_config
from .world import load_scene, load_tasks

_CONFIG_KEYS = (
    "theta", "alpha", "step_size", "cell_size", "max_steps", "camera_width",
    "camera_height", "camera_hfov_deg", "camera_max_range", "oracle_mode",
    "p_label_noise", "occlusion_mode",
)


def load_config_file(path: Path | str | None) -> dict:
    """Defaults from an avos.toml-style file; missing file is an error,
    missing argument means no overrides."""
    if path is None:
        return {}
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    out = dict(doc.get("defaults", {}))
    out.update({f"server_{k}": v for k, v in doc.get("server", {}).items()})
    if "oracle" in doc and "mode" in doc["oracle"]:
        out["oracle_mode"] = doc["oracle"]["mode"]
    return out


def _apply_config(base: EpisodeConfig, file_values: dict, args) -> EpisodeConfig:
    values = {k: v for k, v in file_values.items() if k in _CONFIG_KEYS}
    for key in _CONFIG_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            values[key] = val
    return replace(base, **values)


def _cmd_gen_scenes(args) -> int:
    scenes, tasks = build_suite(
        args.seed, n_easy=args.easy, n_medium=args.medium, n_hard=args.hard
    )
    out = Path(args.out)
    task_path = save_suite(scenes, tasks, out)
    if args.images:
        from .world import render_cue_image

        rendered = 0
        for task in tasks:
            rendered += render_cue_image(
                scenes[task.scene_id], task, out / task.image, seed=args.seed
            )
        print(f"rendered {rendered}/{len(tasks)} target cue images")
    print(f"wrote {len(scenes)} scenes and {len(tasks)} tasks under {out}")
    print(f"task file: {task_path}")
    return 0


def _cmd_run_suite(args) -> int:
    tasks, scene_files = load_tasks(args.tasks)
    scenes = {sid: load_scene(path) for sid, path in scene_files.items()}
    file_values = load_config_file(args.config)
    config = _apply_config(suite_config(args.agent, seed=args.seed), file_values, args)
    if not args.quiet:
        print(f"running {args.agent} on {min(len(tasks), args.episodes)} episodes ...")
    records = run_suite(tasks, scenes, config, out_dir=args.out, limit=args.episodes)
    result = evaluation.metrics(records, tasks)
    report = evaluation.report(result, "table-text")
    if args.out:
        Path(args.out, "suite_result.json").write_text(
            evaluation.report(result, "json")
        )
    if not args.quiet:
        print(report, end="")
    return 0


def _cmd_eval(args) -> int:
    tasks, _scene_files = load_tasks(args.tasks)
    record_files = sorted(Path(args.records).glob("*.episode.jsonl"))
    if not record_files:
        print("error: no episode records found", file=sys.stderr)
        return 2
    records = [EpisodeRecord.load(p) for p in record_files]
    result = evaluation.metrics(records, tasks)
    print(evaluation.report(result, args.format), end="")
    return 0


def _cmd_serve(args) -> int:
    import socket

    import uvicorn

    from .server import create_app

    file_values = load_config_file(args.config)
    config = _apply_config(EpisodeConfig(agent="human"), file_values, args)
    app = create_app(args.tasks, session_root=args.sessions, config=config)

    host = args.host or file_values.get("server_host", "127.0.0.1")
    port = args.port if args.port is not None else int(file_values.get("server_port", 8732))
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.bind((host, port))
    print(f"serving on http://{host}:{sock.getsockname()[1]}", flush=True)
    server = uvicorn.Server(
        uvicorn.Config(app, log_level="warning", callback_notify=None)
    )
    server.run(sockets=[sock])
    return 0


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="avos.toml defaults file")
    parser.add_argument("--theta", type=float, default=None)
    parser.add_argument("--alpha", type=float, default=None)
    parser.add_argument("--step-size", dest="step_size", type=float, default=None)
    parser.add_argument("--cell-size", dest="cell_size", type=float, default=None)
    parser.add_argument("--max-steps", dest="max_steps", type=int, default=None)
    parser.add_argument("--oracle-mode", dest="oracle_mode", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avos", description="Aerial visual object search benchmark tools"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-scenes", help="generate a seeded scene/task suite")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--easy", type=int, default=20)
    gen.add_argument("--medium", type=int, default=20)
    gen.add_argument("--hard", type=int, default=20)
    gen.add_argument("--out", required=True)
    gen.add_argument("--images", action="store_true", help="render target cue images")
    gen.set_defaults(func=_cmd_gen_scenes)

    run = sub.add_parser("run-suite", help="run an agent over a task file")
    run.add_argument("--tasks", required=True)
    run.add_argument("--agent", default="prpsearcher", choices=("prpsearcher", "re", "fbe"))
    run.add_argument("--episodes", type=int, default=10**9, help="limit of tasks to run")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--out", default=None, help="directory for episode records")
    run.add_argument("--quiet", action="store_true")
    _add_config_flags(run)
    run.set_defaults(func=_cmd_run_suite)

    ev = sub.add_parser("eval", help="aggregate metrics over episode records")
    ev.add_argument("--records", required=True)
    ev.add_argument("--tasks", required=True)
    ev.add_argument("--format", default="table-text", choices=("table-text", "csv", "json"))
    ev.set_defaults(func=_cmd_eval)

    srv = sub.add_parser("serve", help="serve the interactive episode API")
    srv.add_argument("--tasks", required=True)
    srv.add_argument("--sessions", default="sessions")
    srv.add_argument("--host", default=None)
    srv.add_argument("--port", type=int, default=None, help="0 picks a free port")
    _add_config_flags(srv)
    srv.set_defaults(func=_cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
