"""Command line entry point.

Subcommands execute in-process unless ``--server URL`` is given, in which
case the CLI forwards the request to a running ``breedal serve`` instance.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from .errors import BreedalError
from .harness.config import load_config


def _client(url: str):
    import httpx

    return httpx.Client(base_url=url, timeout=60.0)


def _check(resp):
    if resp.status_code >= 400:
        try:
            detail = resp.json().get("detail")
        except ValueError:
            detail = resp.text
        raise BreedalError(f"server returned {resp.status_code}: {detail}")
    return resp.json()


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.server:
        with _client(args.server) as http:
            status = _check(http.post("/runs", json={"config": cfg.model_dump()}))
            while status["status"] in ("queued", "running"):
                time.sleep(args.poll)
                status = _check(http.get(f"/runs/{status['run_id']}"))
        if status["status"] == "failed":
            raise BreedalError(status["error"])
        print(json.dumps(status["summary"], indent=2, sort_keys=True))
        return 0
    from .orchestrator.server import run

    print(run(cfg).to_json())
    return 0


def cmd_study(args) -> int:
    if args.server:
        with _client(args.server) as http:
            result = _check(http.post("/studies", json={"grid_path": str(Path(args.grid).resolve())},
                                      timeout=None))
        dirs = result["directories"]
    else:
        from .harness.study import study

        dirs = study(args.grid, jobs=args.jobs)
    for d in dirs:
        print(d)
    return 0


def cmd_gen_validation(args) -> int:
    cfg = load_config(args.config)
    out = args.out or cfg.validation_path or str(Path(cfg.output_dir) / "validation.bin")
    if args.server:
        with _client(args.server) as http:
            result = _check(http.post("/validation", json={"config": cfg.model_dump(), "path": out},
                                      timeout=None))
        print(result["path"])
        return 0
    from .harness.validation import gen_validation, save_validation

    Path(out).parent.mkdir(parents=True, exist_ok=True)
    save_validation(gen_validation(cfg.validation_size, cfg.bounds, cfg.solver_config()), out)
    print(out)
    return 0


def cmd_analyze(args) -> int:
    if args.server:
        with _client(args.server) as http:
            files = _check(http.post("/analyze", json={"run_dir": args.dir, "other_dir": args.dir2,
                                                       "out_dir": args.out}))["files"]
    else:
        from .harness.analysis import analyze

        files = {k: str(v) for k, v in analyze(args.dir, args.dir2, args.out).items()}
    for name in sorted(files):
        print(files[name])
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("breedal.service:app", host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="breedal", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_server(p):
        p.add_argument("--server", metavar="URL", help="forward to a running breedal service")
        return p

    p = with_server(sub.add_parser("run", help="run one experiment from a config file"))
    p.add_argument("config")
    p.add_argument("--poll", type=float, default=1.0, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_run)

    p = with_server(sub.add_parser("study", help="run every point of a grid config"))
    p.add_argument("grid")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_study)

    p = with_server(sub.add_parser("gen-validation", help="generate the Halton validation set"))
    p.add_argument("config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_validation)

    p = with_server(sub.add_parser("analyze", help="deviation histograms, correlations, loss curves"))
    p.add_argument("dir")
    p.add_argument("dir2", nargs="?")
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (BreedalError, OSError) as exc:
        print(f"breedal: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
