"""Command-line client for the evaluation service.

Subcommands: run, sweep, synth, validate. By default requests are served by
the FastAPI app in-process (no network, no running server needed); pass
--server URL to talk to a remote instance instead. Reports are printed as
JSON with sorted keys so identical runs produce identical bytes apart from
the duration_s field.

Exit codes: 0 success, 2 invalid flags or arguments, 3 store I/O or
validation failure, 4 evaluation abort or transport failure.
"""
from __future__ import annotations

import argparse
import json
import sys

import httpx

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_STORE = 3
EXIT_EVAL = 4

_GEOMETRIES = ("exact", "paper")
_WEIGHT_FNS = ("paper", "uniform", "linear", "quadratic")
_ANCHOR_INITS = ("pseudokm", "random")
_WEIGHT_INITS = ("prototype", "random")


def _csv_of(choices: tuple[str, ...]):
    def parse(text: str) -> list[str]:
        items = [item.strip() for item in text.split(",") if item.strip()]
        if not items:
            raise argparse.ArgumentTypeError("empty list")
        for item in items:
            if item not in choices:
                raise argparse.ArgumentTypeError(
                    f"invalid choice {item!r} (choose from {', '.join(choices)})"
                )
        return items
    return parse


def _csv_ints(text: str) -> list[int]:
    try:
        items = [int(item) for item in text.split(",") if item.strip()]
    except ValueError as err:
        raise argparse.ArgumentTypeError(str(err)) from None
    if not items:
        raise argparse.ArgumentTypeError("empty list")
    return items


def _add_source_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("data source")
    group.add_argument("--features", metavar="PATH", help="feature-store file to evaluate")
    group.add_argument("--synth", action="store_true",
                       help="evaluate an in-memory synthetic store instead of a file")
    group.add_argument("--classes", type=int, default=10, help="synthetic class count")
    group.add_argument("--per-class", type=int, default=40, help="synthetic records per class")
    group.add_argument("--dim", type=int, default=16, help="synthetic feature dimension n")
    group.add_argument("--separation", type=float, default=6.0,
                       help="synthetic cluster separation (noise spread is 1/separation)")
    group.add_argument("--shift", type=float, default=0.0,
                       help="synthetic support-to-query center shift")


def _add_config_flags(parser: argparse.ArgumentParser, sweepable: bool) -> None:
    group = parser.add_argument_group("classifier configuration")
    if sweepable:
        group.add_argument("--tau", type=_csv_ints, default=[14],
                           help="anchor count minus one; comma list sweeps it")
        group.add_argument("--pyramid", type=_csv_ints, default=[11],
                           help="region count p; comma list sweeps it (raw stores only)")
        group.add_argument("--weight-fn", type=_csv_of(_WEIGHT_FNS), default=["paper"],
                           help=f"anchor weight profile, comma list sweeps it ({', '.join(_WEIGHT_FNS)})")
        group.add_argument("--anchor-init", type=_csv_of(_ANCHOR_INITS), default=["pseudokm"],
                           help="anchor initialization, comma list sweeps it")
        group.add_argument("--weight-init", type=_csv_of(_WEIGHT_INITS), default=["prototype"],
                           help="weight initialization, comma list sweeps it")
    else:
        group.add_argument("--tau", type=int, default=14, help="anchor count minus one")
        group.add_argument("--pyramid", type=int, default=11, help="region count p")
        group.add_argument("--weight-fn", choices=_WEIGHT_FNS, default="paper",
                           help="anchor weight profile")
        group.add_argument("--anchor-init", choices=_ANCHOR_INITS, default="pseudokm",
                           help="anchor initialization")
        group.add_argument("--weight-init", choices=_WEIGHT_INITS, default="prototype",
                           help="weight initialization")
    group.add_argument("--gamma", type=float, default=7.5, help="softmax temperature")
    group.add_argument("--alpha", type=float, default=0.1, help="mutual-information weight")
    group.add_argument("--lambda", dest="lam", type=float, default=0.1,
                       help="cross-entropy weight")
    group.add_argument("--lr", type=float, default=0.1, help="Riemannian SGD step size")
    group.add_argument("--iters", type=int, default=100, help="optimization iterations")
    group.add_argument("--geometry", choices=_GEOMETRIES, default="exact",
                       help="exp/log variant: per-column exact maps or the global-norm formulas")
    group.add_argument("--inductive", action="store_true",
                       help="drop the mutual-information term entirely")
    group.add_argument("--seed", type=int, default=0, help="master RNG seed")


def _add_eval_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("episodes")
    group.add_argument("--ways", type=int, default=5, help="classes per episode")
    group.add_argument("--shots", type=int, default=5, help="support samples per class")
    group.add_argument("--queries", type=int, default=15, help="query samples per class")
    group.add_argument("--episodes", type=int, default=100, help="episode count")
    group.add_argument("--threads", type=int, default=1, help="parallel episode workers")
    parser.add_argument("--output", metavar="PATH", help="write the JSON report here instead of stdout")


def _add_server_flag(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--server", metavar="URL",
                        help="remote service URL (default: serve in-process)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="omfsl",
        description="Few-shot evaluation with a tangent-space classifier on the oblique manifold.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="evaluate one configuration")
    _add_source_flags(run_p)
    _add_config_flags(run_p, sweepable=False)
    _add_eval_flags(run_p)
    _add_server_flag(run_p)

    sweep_p = sub.add_parser("sweep", help="evaluate a grid of configurations")
    _add_source_flags(sweep_p)
    _add_config_flags(sweep_p, sweepable=True)
    _add_eval_flags(sweep_p)
    _add_server_flag(sweep_p)

    synth_p = sub.add_parser("synth", help="write a synthetic feature store")
    synth_p.add_argument("--output", required=True, metavar="PATH")
    synth_p.add_argument("--classes", type=int, default=10)
    synth_p.add_argument("--per-class", type=int, default=40)
    synth_p.add_argument("--dim", type=int, default=16)
    synth_p.add_argument("--pyramid", type=int, default=11, help="region count p")
    synth_p.add_argument("--separation", type=float, default=6.0)
    synth_p.add_argument("--shift", type=float, default=0.0)
    synth_p.add_argument("--seed", type=int, default=0)
    _add_server_flag(synth_p)

    val_p = sub.add_parser("validate", help="check a feature-store file")
    val_p.add_argument("path", help="store file to validate")
    _add_server_flag(val_p)

    return parser


class _Client:
    """POSTs to a remote server or to the app mounted in-process."""

    def __init__(self, server: str | None):
        if server:
            self._client = httpx.Client(base_url=server.rstrip("/"), timeout=None)
        else:
            import warnings

            with warnings.catch_warnings():
                # mounting in-process is deliberate; the test-client pairing
                # warning is for environment maintainers, not CLI users
                warnings.simplefilter("ignore", DeprecationWarning)
                from fastapi.testclient import TestClient

                from .service import app

            self._client = TestClient(app, raise_server_exceptions=False)

    def post(self, path: str, payload: dict) -> httpx.Response:
        return self._client.post(path, json=payload)


def _config_payload(args: argparse.Namespace) -> dict:
    # Sweep flags arrive as lists; the base config takes their first value.
    def scalar(value):
        return value[0] if isinstance(value, list) else value

    return {
        "tau": scalar(args.tau),
        "pyramid": scalar(args.pyramid),
        "gamma": args.gamma,
        "alpha": args.alpha,
        "lambda": args.lam,
        "lr": args.lr,
        "iterations": args.iters,
        "geometry": args.geometry,
        "weight_fn": scalar(args.weight_fn),
        "anchor_init": scalar(args.anchor_init),
        "weight_init": scalar(args.weight_init),
        "inductive": args.inductive,
        "seed": args.seed,
    }


def _source_payload(args: argparse.Namespace, parser: argparse.ArgumentParser) -> dict:
    if bool(args.features) == bool(args.synth):
        parser.error("exactly one of --features and --synth is required")
    if args.features:
        return {"features": args.features}
    return {
        "synth": {
            "classes": args.classes,
            "per_class": args.per_class,
            "dim": args.dim,
            "separation": args.separation,
            "shift": args.shift,
        }
    }


def _emit(payload: dict, output: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if output:
        with open(output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _fail(response: httpx.Response) -> int:
    if response.status_code == 422:
        sys.stderr.write(f"invalid request: {response.text}\n")
        return EXIT_USAGE
    try:
        envelope = response.json().get("error", {})
    except ValueError:
        envelope = {}
    kind = envelope.get("kind", "evaluation")
    message = envelope.get("message", response.text)
    sys.stderr.write(f"{kind} error: {message}\n")
    if kind == "store":
        return EXIT_STORE
    if kind == "invalid":
        return EXIT_USAGE
    return EXIT_EVAL


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        client = _Client(args.server)
    except httpx.HTTPError as err:
        sys.stderr.write(f"cannot reach server: {err}\n")
        return EXIT_EVAL

    try:
        if args.command == "run":
            payload = _source_payload(args, parser)
            payload.update(
                config=_config_payload(args),
                protocol={"ways": args.ways, "shots": args.shots, "queries": args.queries},
                episodes=args.episodes,
                threads=args.threads,
            )
            resp = client.post("/run", payload)
            if resp.status_code != 200:
                return _fail(resp)
            _emit(resp.json(), args.output)
            return EXIT_OK

        if args.command == "sweep":
            payload = _source_payload(args, parser)
            payload.update(
                config=_config_payload(args),
                protocol={"ways": args.ways, "shots": args.shots, "queries": args.queries},
                episodes=args.episodes,
                threads=args.threads,
                axes={
                    "tau": args.tau,
                    "pyramid": args.pyramid,
                    "weight_fn": args.weight_fn,
                    "anchor_init": args.anchor_init,
                    "weight_init": args.weight_init,
                },
            )
            resp = client.post("/sweep", payload)
            if resp.status_code != 200:
                return _fail(resp)
            _emit(resp.json(), args.output)
            return EXIT_OK

        if args.command == "synth":
            resp = client.post("/synth", {
                "output": args.output,
                "classes": args.classes,
                "per_class": args.per_class,
                "dim": args.dim,
                "pyramid": args.pyramid,
                "separation": args.separation,
                "shift": args.shift,
                "seed": args.seed,
            })
            if resp.status_code != 200:
                return _fail(resp)
            _emit(resp.json(), None)
            return EXIT_OK

        # validate
        resp = client.post("/validate", {"path": args.path})
        if resp.status_code != 200:
            return _fail(resp)
        body = resp.json()
        if not body.get("valid"):
            sys.stderr.write(f"invalid store: {body.get('error')}\n")
            return EXIT_STORE
        _emit(body.get("summary", {}), None)
        return EXIT_OK
    except httpx.HTTPError as err:
        sys.stderr.write(f"transport failure: {err}\n")
        return EXIT_EVAL


if __name__ == "__main__":
    sys.exit(main())
