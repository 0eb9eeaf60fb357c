"""Command-line frontend.

Each command issues one request against the HTTP service. By default the
service runs in-process (no daemon, no sockets); ``--server`` or the
``MHEL_SERVER`` environment variable points at a remote instance instead,
in which case every path flag names a file on the server's filesystem.
"""

from __future__ import annotations

import argparse
import asyncio
import os
import sys
from typing import Optional

import httpx

from .service import create_app

EXIT_OK = 0
EXIT_ERROR = 1


def _parse_k_steps(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad k-steps value {text!r}; expected e.g. 10,20,30")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mhel", description=__doc__)
    parser.add_argument(
        "--server",
        default=os.environ.get("MHEL_SERVER"),
        help="URL of a running service; default runs the service in-process",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("import-kb", help="import an entity JSONL into a KB store")
    p.add_argument("jsonl")
    p.add_argument("--out", required=True)

    p = sub.add_parser("build-index", help="load and validate a vector index")
    p.add_argument("--vectors", required=True)
    p.add_argument("--ids", required=True)
    p.add_argument("--check", action="store_true", help="run the exact-search self-test")

    p = sub.add_parser("calibrate", help="derive threshold and block size from dev retrievals")
    p.add_argument("--dev", required=True)
    p.add_argument("--k-steps", type=_parse_k_steps, default=[10, 20, 30, 40, 50])
    p.add_argument("--epsilon", type=float, default=0.01)

    p = sub.add_parser("link", help="link a mention corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--out", required=True)
    p.add_argument("--variant", choices=["vanilla", "threshold"])
    p.add_argument("--prompt", choices=["chain", "single"])
    p.add_argument("--k", type=int)
    p.add_argument("--theta", type=float)
    p.add_argument("--encoder-endpoint")
    p.add_argument("--chat-endpoint")
    p.add_argument("--max-inflight", type=int)
    p.add_argument("--on-backend-failure", choices=["fallback-top1", "fail"])

    p = sub.add_parser("evaluate", help="score predictions against gold labels")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold")
    p.add_argument("--nil", action="store_true", help="also report NIL-class P/R/F1")
    p.add_argument("--report", help="write the machine-readable report here")

    p = sub.add_parser("correlate", help="point-biserial between top scores and correctness")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold")

    p = sub.add_parser("tally-errors", help="count error relations per dataset")
    p.add_argument("--annotations", required=True)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8100)

    return parser


async def _request(server: Optional[str], path: str, payload: dict) -> dict:
    if server:
        async with httpx.AsyncClient(base_url=server, timeout=600.0) as client:
            response = await client.post(path, json=payload)
            body = response.json() if _is_json(response) else None
    else:
        transport = httpx.ASGITransport(app=create_app())
        async with httpx.AsyncClient(
            transport=transport, base_url="http://mhel.internal", timeout=600.0
        ) as client:
            response = await client.post(path, json=payload)
            body = response.json() if _is_json(response) else None
    if response.status_code >= 400:
        raise _ServiceError.from_response(response, body)
    if not isinstance(body, dict):
        raise _ServiceError("malformed", f"service returned non-object body for {path}")
    return body


def _is_json(response: httpx.Response) -> bool:
    return response.headers.get("content-type", "").startswith("application/json")


class _ServiceError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code

    @classmethod
    def from_response(cls, response: httpx.Response, body) -> "_ServiceError":
        if isinstance(body, dict) and isinstance(body.get("error"), dict):
            err = body["error"]
            return cls(str(err.get("code", "error")), str(err.get("message", "")))
        text = " ".join(response.text.split())
        return cls(f"http-{response.status_code}", text[:500])

    def one_line(self) -> str:
        message = " ".join(str(self).split())
        return f"error: {self.code}: {message}"


def _call(server: Optional[str], path: str, payload: dict) -> dict:
    return asyncio.run(_request(server, path, payload))


def cmd_import_kb(args) -> int:
    body = _call(args.server, "/kb/import", {"jsonl": args.jsonl, "out": args.out})
    print(f"imported {body['entities']} entities -> {body['store']}")
    return EXIT_OK


def cmd_build_index(args) -> int:
    body = _call(
        args.server,
        "/index/build",
        {"vectors": args.vectors, "ids": args.ids, "check": args.check},
    )
    print(f"count: {body['count']}")
    print(f"dim: {body['dim']}")
    if args.check:
        print(f"self-test: ok ({body['checked_queries']} queries)")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    body = _call(
        args.server,
        "/calibrate",
        {"dev": args.dev, "k_steps": args.k_steps, "epsilon": args.epsilon},
    )
    print(f"theta: {body['theta']!r}")
    print(f"k: {body['k']}")
    for step, recall in body["curve"]:
        print(f"recall@{step}: {recall:.6f}")
    return EXIT_OK


def cmd_link(args) -> int:
    overrides = {
        key: value
        for key, value in {
            "variant": args.variant,
            "prompt": args.prompt,
            "k": args.k,
            "theta": args.theta,
            "encoder_endpoint": args.encoder_endpoint,
            "chat_endpoint": args.chat_endpoint,
            "max_inflight": args.max_inflight,
            "on_backend_failure": args.on_backend_failure,
        }.items()
        if value is not None
    }
    body = _call(
        args.server,
        "/link",
        {
            "corpus": args.corpus,
            "out": args.out,
            "config_path": args.config,
            "overrides": overrides,
        },
    )
    stats = body["stats"]
    routes = ", ".join(
        f"{route}={count}" for route, count in sorted(stats["route_counts"].items()) if count
    )
    print(f"linked {body['mentions']} mentions -> {body['out']}")
    print(f"routes: {routes or 'none'}")
    print(f"chat_calls: {stats['chat_calls']}")
    print(f"manifest: {body['manifest']}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    body = _call(
        args.server,
        "/evaluate",
        {"pred": args.pred, "gold": args.gold, "nil": args.nil, "report": args.report},
    )
    print(f"pairs: {body['pairs']}")
    print(f"accuracy_f1: {body['accuracy_f1']:.6f}")
    link_only = body["link_only"]
    print(f"link_precision: {link_only['precision']:.6f}")
    print(f"link_recall: {link_only['recall']:.6f}")
    print(f"link_f1: {link_only['f1']:.6f}")
    if args.nil:
        nil = body["nil"]
        print(f"nil_precision: {nil['precision']:.6f}")
        print(f"nil_recall: {nil['recall']:.6f}")
        print(f"nil_f1: {nil['f1']:.6f}")
        print(f"nil_counts: tp={nil['tp']} fp={nil['fp']} fn={nil['fn']}")
    if args.report:
        print(f"report: {args.report}")
    return EXIT_OK


def cmd_correlate(args) -> int:
    body = _call(args.server, "/correlate", {"pred": args.pred, "gold": args.gold})
    print(f"r_pb: {body['r_pb']!r}")
    print(f"n: {body['n']}")
    print(f"t_stat: {body['t_stat']!r}")
    print(f"p_value: {body['p_value']!r}")
    if body.get("skipped_unscored"):
        print(f"skipped_unscored: {body['skipped_unscored']}")
    return EXIT_OK


def cmd_tally_errors(args) -> int:
    body = _call(args.server, "/tally-errors", {"annotations": args.annotations})
    relations = list(body["totals"].keys())
    width = max([len(d) for d in body["datasets"]] + [len("dataset"), len("total")])
    print("  ".join(["dataset".ljust(width)] + [r.rjust(8) for r in relations]))
    for dataset in sorted(body["datasets"]):
        row = body["datasets"][dataset]
        print("  ".join([dataset.ljust(width)] + [str(row[r]).rjust(8) for r in relations]))
    print("  ".join(["total".ljust(width)] + [str(body["totals"][r]).rjust(8) for r in relations]))
    print(f"annotations: {body['total']}")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run(create_app(), host=args.host, port=args.port, log_level="info")
    return EXIT_OK


_COMMANDS = {
    "import-kb": cmd_import_kb,
    "build-index": cmd_build_index,
    "calibrate": cmd_calibrate,
    "link": cmd_link,
    "evaluate": cmd_evaluate,
    "correlate": cmd_correlate,
    "tally-errors": cmd_tally_errors,
    "serve": cmd_serve,
}


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except _ServiceError as exc:
        print(exc.one_line(), file=sys.stderr)
        return EXIT_ERROR
    except httpx.TransportError as exc:
        print(f"error: transport: {exc}", file=sys.stderr)
        return EXIT_ERROR


def entry() -> None:
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    entry()
