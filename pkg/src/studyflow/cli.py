"""Command line entry points: serve, validate, simulate, leakcheck."""

from __future__ import annotations

import argparse
import json
import sys
import tempfile

from .config import ServerConfig
from .model import load_manifest, validate_study
from .simclient import LeakDetectedError, leakcheck, walk
from .web import build_engine, create_app


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="studyflow",
                                     description="Survey/experiment workflow server and tools")
    sub = parser.add_subparsers(dest="command", required=True)

    p_serve = sub.add_parser("serve", help="run the HTTP server")
    p_serve.add_argument("--config", help="JSON config file")
    p_serve.add_argument("--addr", help="host:port (overrides config)")
    p_serve.add_argument("--data-dir", help="record directory (overrides config)")
    p_serve.add_argument("--admin-token", help="bearer token for /admin/api")
    p_serve.add_argument("--test-mode", action="store_true", default=None,
                         help="honor the X-Studyflow-Seed header")

    p_validate = sub.add_parser("validate", help="check a study manifest")
    p_validate.add_argument("manifest", help="path to a study manifest (JSON)")

    p_sim = sub.add_parser("simulate", help="walk a study like a participant")
    p_sim.add_argument("--sessions", type=int, default=1)
    p_sim.add_argument("--steps", type=int, default=50)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--policy", default="first-action",
                       choices=["first-action", "random", "scripted"])
    p_sim.add_argument("--labels", nargs="*", default=[],
                       help="action labels for the scripted policy")
    p_sim.add_argument("--study", default="example-study")
    p_sim.add_argument("--base-url", help="walk a live server instead of in-process")
    p_sim.add_argument("--config", help="JSON config for the in-process server")

    p_leak = sub.add_parser("leakcheck", help="bounded-resume-state check under load")
    p_leak.add_argument("--sessions", type=int, default=50)
    p_leak.add_argument("--steps", type=int, default=200)
    p_leak.add_argument("--study", default="depth3")
    p_leak.add_argument("--base-url", help="check a live server instead of in-process")
    p_leak.add_argument("--admin-token", default="leakcheck",
                        help="bearer token (required with --base-url)")
    p_leak.add_argument("--disable-forget", action="store_true",
                        help="test hook: retain consumed pages (must be flagged)")
    p_leak.add_argument("--series", action="store_true", help="print the sampled series")

    args = parser.parse_args(argv)
    if args.command == "serve":
        return _serve(args)
    if args.command == "validate":
        return _validate(args)
    if args.command == "simulate":
        return _simulate(args)
    return _leakcheck(args)


def _serve(args) -> int:
    import uvicorn

    config = ServerConfig.load(args.config, overrides={
        "address": args.addr,
        "data_dir": args.data_dir,
        "admin_token": args.admin_token,
        "test_mode": args.test_mode,
    })
    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
    return 0


def _validate(args) -> int:
    study = load_manifest(args.manifest)
    problems = validate_study(study)
    if not problems:
        print(f"{args.manifest}: ok ({study.id})")
        return 0
    for diagnostic in problems:
        print(f"{args.manifest}: {diagnostic}")
    return 1


def _in_process_app(config_path: str | None, *, test_mode: bool = True,
                    admin_token: str = "", disable_forget: bool = False):
    overrides = {
        "test_mode": test_mode,
        "disable_page_forget": disable_forget or None,
        "admin_token": admin_token or None,
    }
    config = ServerConfig.load(config_path, overrides=overrides)
    if config_path is None:
        config.data_dir = tempfile.mkdtemp(prefix="studyflow-sim-")
    return create_app(config, build_engine(config))


def _simulate(args) -> int:
    target = args.base_url or _in_process_app(args.config)
    exit_code = 0
    for i in range(args.sessions):
        trace = walk(target, args.study, args.policy,
                     seed=args.seed + i, script=args.labels, max_steps=args.steps)
        status = "complete" if trace.completed else "stopped"
        print(f"session {i}: {status} after {len(trace.delivery_statuses)} deliveries")
        for n, text in enumerate(trace.page_texts):
            print(f"  page {n}: {text}")
        if trace.gone:
            print(f"  gone responses: {trace.gone}")
            exit_code = 1
    return exit_code


def _leakcheck(args) -> int:
    token = args.admin_token
    target = args.base_url or _in_process_app(
        None, admin_token=token, disable_forget=args.disable_forget)
    try:
        report = leakcheck(target, sessions=args.sessions, steps=args.steps,
                           study_id=args.study, admin_token=token)
    except LeakDetectedError as exc:
        print(exc.report.summary())
        if args.series:
            print(json.dumps({"suspensions": exc.report.suspension_series,
                              "bytes": exc.report.bytes_series}))
        return 2
    print(report.summary())
    if args.series:
        print(json.dumps({"suspensions": report.suspension_series,
                          "bytes": report.bytes_series}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
