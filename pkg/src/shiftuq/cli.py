"""Command-line front: a thin client for the pipeline service.

Each subcommand loads the config file, applies --seed/--out overrides, and
POSTs one request per seed to the service.  By default the service runs
in-process; --server targets a remote instance instead.  Errors print as a
single `error: ...` line on stderr with a nonzero exit code.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys

import httpx

from .config import ExperimentConfig, load_config

STAGES = ("gen-data", "pretrain", "fit", "predict", "eval", "envcheck", "prior-grid")
_PER_SEED = {"gen-data", "pretrain", "fit", "predict"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shiftuq", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        cmd = sub.add_parser(name, help=f"run the {name} stage")
        cmd.add_argument("--config", required=True, help="experiment config file (INI)")
        cmd.add_argument("--seed", type=int, default=None, help="override: run only this seed")
        cmd.add_argument("--out", default=None, help="override the configured output directory")
        cmd.add_argument("--server", default=None, help="base URL of a running service (default: in-process)")
    serve = sub.add_parser("serve", help="run the pipeline service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.out is not None:
        cfg.run.out_dir = args.out
    return cfg


async def _post_asgi(path: str, payload: dict) -> httpx.Response:
    from .service.app import create_app

    transport = httpx.ASGITransport(app=create_app())
    async with httpx.AsyncClient(transport=transport, base_url="http://pipeline") as client:
        return await client.post(path, json=payload, timeout=None)


def _post(path: str, payload: dict, server: str | None) -> httpx.Response:
    if server is None:
        return asyncio.run(_post_asgi(path, payload))
    with httpx.Client(base_url=server, timeout=None) as client:
        return client.post(path, json=payload)


def _fail(message: str) -> int:
    print(f"error: {message}".splitlines()[0], file=sys.stderr)
    return 1


def _print_result(body: dict) -> None:
    seed = body.get("seed")
    prefix = body["stage"] if seed is None else f"{body['stage']} seed={seed}"
    for name, path in sorted(body["outputs"].items()):
        print(f"{prefix}: wrote {path}")
    for key, value in sorted(body["values"].items()):
        print(f"{prefix}: {key} = {value}")


def _run_stage(stage: str, args) -> int:
    try:
        cfg = _load(args)
    except (OSError, ValueError) as err:
        return _fail(str(err))
    config_payload = cfg.model_dump(mode="json")

    if stage == "eval":
        seeds = None if args.seed is None else [args.seed]
        payload = {"config": config_payload, "seeds": seeds}
        requests = [("/stages/eval", payload)]
    else:
        seeds = cfg.run.seeds if (stage in _PER_SEED and args.seed is None) else [
            cfg.run.seeds[0] if args.seed is None else args.seed
        ]
        requests = [(f"/stages/{stage}", {"config": config_payload, "seed": s}) for s in seeds]

    for path, payload in requests:
        try:
            response = _post(path, payload, args.server)
        except httpx.HTTPError as err:
            return _fail(f"service unreachable: {err}")
        if response.status_code != 200:
            try:
                detail = response.json()
            except json.JSONDecodeError:
                detail = {"error": response.text}
            message = detail.get("error") or json.dumps(detail.get("detail", detail))
            return _fail(f"{stage}: {message}")
        _print_result(response.json())
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        import uvicorn

        from .service.app import create_app

        uvicorn.run(create_app(), host=args.host, port=args.port)
        return 0
    return _run_stage(args.command, args)


if __name__ == "__main__":
    sys.exit(main())
