"""Command-line client for the experiment job service.

Every subcommand assembles the same request payload the HTTP API takes.
With --server the request is POSTed to a running service and polled to
completion; without it the job executor runs in-process. Exit status is
0 only when the job succeeded and every declared output file exists.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

from .config import PRESETS, ExperimentConfig
from .harness import execute_job

POLL_SECONDS = 0.5


class _FlagPair(argparse.Action):
    """--flag stores True, --not-flag stores False; unset stays None.

    argparse's BooleanOptionalAction reads any option starting with
    --no- as the negative form, which would make --no-context (whose
    positive name already starts that way) impossible to turn on.
    """

    def __call__(self, parser, namespace, values, option_string=None):
        setattr(namespace, self.dest, option_string == self.option_strings[0])


def _add_config_flags(parser: argparse.ArgumentParser):
    group = parser.add_argument_group("config overrides")
    for f in dataclasses.fields(ExperimentConfig):
        flag = "--" + f.name.replace("_", "-")
        if isinstance(f.default, bool):
            group.add_argument(flag, "--not-" + flag[2:], dest=f.name,
                               default=None, nargs=0, action=_FlagPair)
        elif f.name == "seeds":
            group.add_argument(flag, dest=f.name, default=None,
                               help="comma-separated, e.g. 0,1,2")
        else:
            group.add_argument(flag, dest=f.name, default=None,
                               type=type(f.default) if f.default is not None else str)


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--server", default=None,
                        help="URL of a running service; omit to run in-process")
    parser.add_argument("--quiet", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polydyn")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="start the HTTP job service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)

    run = sub.add_parser("run", help="train on one env family")
    _add_common(run)
    run.add_argument("--preset", choices=sorted(PRESETS))
    run.add_argument("--config", dest="config_file",
                     help="key = value config file")
    _add_config_flags(run)

    sweep = sub.add_parser("sweep", help="grid over one hyperparameter axis")
    _add_common(sweep)
    sweep.add_argument("--axis", required=True, choices=["H", "M", "N"])
    sweep.add_argument("--values", required=True,
                       help="comma-separated integers, e.g. 1,5,10,20,30")
    sweep.add_argument("--preset", choices=sorted(PRESETS))
    sweep.add_argument("--config", dest="config_file")
    _add_config_flags(sweep)

    for name, extra in (("eval", True), ("assignments", False),
                        ("export-features", False)):
        cp = sub.add_parser(name)
        _add_common(cp)
        cp.add_argument("--checkpoint", required=True)
        cp.add_argument("--split", choices=["train", "test"])
        cp.add_argument("--episodes", type=int)
        cp.add_argument("--seed", type=int)
        cp.add_argument("--output-dir", dest="output_dir")
        if extra:
            cp.add_argument("--non-adaptive-planning",
                            "--not-non-adaptive-planning",
                            dest="non_adaptive_planning",
                            default=None, nargs=0, action=_FlagPair)
    return parser


def _config_payload(args) -> dict:
    overrides = {}
    for f in dataclasses.fields(ExperimentConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            overrides[f.name] = value
    return {"preset": args.preset, "config_file": args.config_file,
            "overrides": overrides}


def _checkpoint_payload(args) -> dict:
    payload = {"checkpoint": args.checkpoint}
    for key in ("split", "episodes", "seed", "output_dir",
                "non_adaptive_planning"):
        value = getattr(args, key, None)
        if value is not None:
            payload[key] = value
    return payload


def _submit_remote(server: str, kind: str, payload: dict) -> dict:
    import httpx

    base = server.rstrip("/")
    with httpx.Client(base_url=base, timeout=30.0) as client:
        resp = client.post(f"/jobs/{kind}", json=_remote_body(kind, payload))
        resp.raise_for_status()
        job_id = resp.json()["job_id"]
        while True:
            time.sleep(POLL_SECONDS)
            status = client.get(f"/jobs/{job_id}")
            status.raise_for_status()
            body = status.json()
            if body["status"] in ("done", "failed"):
                return body


def _remote_body(kind: str, payload: dict) -> dict:
    if kind in ("run", "sweep"):
        body = {"preset": payload.get("preset"),
                "config_file": payload.get("config_file"),
                "overrides": payload.get("overrides") or {}}
        if kind == "sweep":
            body["axis"] = payload["axis"]
            body["values"] = payload["values"]
        return body
    return payload


def _finish(result: dict, quiet: bool) -> int:
    outputs = result.get("outputs", [])
    missing = [p for p in outputs if not Path(p).exists()]
    if result.get("status") == "failed":
        print(f"job failed: {result.get('error')}", file=sys.stderr)
        return 1
    if missing:
        print(f"missing declared outputs: {missing}", file=sys.stderr)
        return 1
    if not quiet:
        print(json.dumps(result.get("summary", {}), indent=2, sort_keys=True,
                         default=str))
        for path in outputs:
            print(f"wrote {path}")
    return 0


def _dispatch(kind: str, payload: dict, args) -> int:
    if args.server:
        result = _submit_remote(args.server, kind, payload)
        return _finish(result, args.quiet)
    try:
        result = execute_job(kind, payload)
    except Exception as exc:
        print(f"job failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return _finish(result, args.quiet)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if not getattr(args, "quiet", False):
        logging.basicConfig(level=logging.INFO, format="%(message)s")

    if args.command == "serve":
        import uvicorn

        from .service import create_app
        uvicorn.run(create_app(), host=args.host, port=args.port)
        return 0

    if args.command == "run":
        return _dispatch("run", _config_payload(args), args)
    if args.command == "sweep":
        payload = _config_payload(args)
        payload["axis"] = args.axis
        payload["values"] = [int(v) for v in args.values.split(",") if v.strip()]
        return _dispatch("sweep", payload, args)
    if args.command in ("eval", "assignments", "export-features"):
        return _dispatch(args.command, _checkpoint_payload(args), args)
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
