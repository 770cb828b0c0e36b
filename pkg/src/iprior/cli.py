"""Command-line client for the fitting service.

The CLI only parses arguments and INI configs, reads and writes files,
and talks HTTP.  All modelling happens behind the service endpoints; by
default the app runs in-process over an ASGI transport, and --server (or
IPRIOR_SERVER) points the same calls at a remote instance.

Exit codes: 0 success, 1 unexpected/connection failure, 2 configuration
or usage error, 3 data schema error, 4 model/data mismatch, 5 estimation
failure.
"""

import argparse
import asyncio
import json
import os
import sys
import tempfile

import httpx

from .config import parse_ini, realize_config
from .errors import ConfigError, IpriorError
from .service.app import create_app

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_SCHEMA = 3
EXIT_MISMATCH = 4
EXIT_FIT = 5

_CODE_EXITS = {
    "CONFIG_ERROR": EXIT_CONFIG,
    "SCHEMA_ERROR": EXIT_SCHEMA,
    "DATA_MISMATCH": EXIT_MISMATCH,
    "FIT_ERROR": EXIT_FIT,
}


class _CliFailure(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code
        self.exit_code = _CODE_EXITS.get(code, EXIT_FAILURE)


class _LocalClient:
    """Synchronous facade over the in-process ASGI app.

    httpx.ASGITransport only works with the async client, so each call
    spins an AsyncClient inside asyncio.run; fine for one-shot CLI use.
    """

    def __init__(self):
        self._app = create_app()

    def post(self, path, json):
        async def call():
            transport = httpx.ASGITransport(app=self._app)
            async with httpx.AsyncClient(transport=transport,
                                         base_url="http://iprior.local",
                                         timeout=600.0) as client:
                return await client.post(path, json=json)

        return asyncio.run(call())

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def _client(server):
    if server:
        return httpx.Client(base_url=server, timeout=600.0)
    return _LocalClient()


def _read_text(path, what):
    try:
        with open(path) as fh:
            return fh.read()
    except OSError as exc:
        raise _CliFailure("CONFIG_ERROR", f"cannot read {what} {path!r}: {exc}")


def _write_text(path, text):
    """Atomic write: the target never holds a half-written artifact."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".iprior-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    print(f"wrote {path}")


def _post(client, url, payload):
    try:
        resp = client.post(url, json=payload)
    except httpx.HTTPError as exc:
        raise _CliFailure("CONNECTION_ERROR", f"request to {url} failed: {exc}")
    if resp.status_code == 200:
        return resp.json()
    try:
        detail = resp.json().get("detail")
    except json.JSONDecodeError:
        detail = None
    if isinstance(detail, dict) and "code" in detail:
        raise _CliFailure(detail["code"], detail.get("message", ""))
    # pydantic validation errors arrive as a list of field problems
    if isinstance(detail, list):
        parts = "; ".join(f"{'/'.join(map(str, e.get('loc', ())))}: {e.get('msg')}"
                          for e in detail)
        raise _CliFailure("CONFIG_ERROR", parts or "invalid request")
    raise _CliFailure("CONNECTION_ERROR", f"{url} answered {resp.status_code}")


def _load_config(path):
    payload = parse_ini(_read_text(path, "config"))
    # catch semantic config problems before any network round trip
    config = realize_config(payload)
    return payload, config


def _scales_arg(raw):
    if raw is None:
        return None
    try:
        return [float(v) for v in raw.replace(",", " ").split()]
    except ValueError:
        raise _CliFailure("CONFIG_ERROR", f"--scales {raw!r} is not a list of numbers")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_fit(args):
    payload, config = _load_config(args.config)
    body = {"config": payload, "train_csv": _read_text(args.train, "training data")}
    if args.test:
        body["test_csv"] = _read_text(args.test, "test data")

    with _client(args.server) as client:
        out = _post(client, "/fit", body)

    directory = args.out or config.output_dir
    stem = config.stem
    print(f"fitted {out['label']} ({out['kind']}): status={out['status']} "
          f"loglik={out['loglik']:.6f}")
    _write_text(os.path.join(directory, f"{stem}.model.json"),
                json.dumps(out["model"], indent=1) + "\n")
    for artifact in ("trace", "report", "fitted", "scales"):
        _write_text(os.path.join(directory, f"{stem}.{artifact}.csv"),
                    out[f"{artifact}_csv"])
    if out.get("predictions_csv") is not None:
        _write_text(os.path.join(directory, f"{stem}.predictions.csv"),
                    out["predictions_csv"])
    return EXIT_OK


def _cmd_predict(args):
    model_text = _read_text(args.model, "model file")
    try:
        model_payload = json.loads(model_text)
    except json.JSONDecodeError as exc:
        raise _CliFailure("SCHEMA_ERROR", f"model file is not valid JSON: {exc}")
    body = {"model": model_payload,
            "data_csv": _read_text(args.data, "prediction data")}
    if args.config:
        body["config"] = parse_ini(_read_text(args.config, "config"))

    with _client(args.server) as client:
        out = _post(client, "/predict", body)

    print(f"predicted {out['n_rows']} rows with {out['label']} ({out['kind']})")
    _write_text(args.out, out["predictions_csv"])
    return EXIT_OK


def _cmd_compare(args):
    train_csv = _read_text(args.train, "training data")
    entries = []
    for path in args.configs:
        payload, _ = _load_config(path)
        entries.append({"config": payload})
    body = {"entries": entries, "train_csv": train_csv}

    with _client(args.server) as client:
        out = _post(client, "/compare", body)

    for rank, label in enumerate(out["ranked"], start=1):
        marker = " (best)" if label == out["best"] else ""
        print(f"{rank}. {label}{marker}")
    for a, b in out["comparable_pairs"]:
        print(f"likelihoods of {a} and {b} are directly comparable")
    _write_text(args.out, out["report_csv"])
    return EXIT_OK


def _cmd_gram(args):
    payload, _ = _load_config(args.config)
    body = {"config": payload, "data_csv": _read_text(args.data, "data")}
    scales = _scales_arg(args.scales)
    if scales is not None:
        body["scales"] = scales

    with _client(args.server) as client:
        out = _post(client, "/gram", body)

    print(f"gram matrix: {out['n']} x {out['n']}")
    _write_text(args.out, out["gram_csv"])
    return EXIT_OK


def _cmd_serve(args):
    import uvicorn

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="iprior",
        description="Fit and use regression models with kernel-based priors.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_server(p):
        p.add_argument("--server", default=os.environ.get("IPRIOR_SERVER") or None,
                       help="base URL of a running service (default: in-process)")

    p = sub.add_parser("fit", help="fit a model from an INI config and a CSV")
    p.add_argument("config", help="INI configuration file")
    p.add_argument("--train", required=True, help="training CSV")
    p.add_argument("--test", help="optional CSV to score after fitting")
    p.add_argument("--out", help="artifact directory (default: config [output] dir)")
    add_server(p)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("predict", help="score a CSV with a saved model")
    p.add_argument("model", help="model JSON file from a fit")
    p.add_argument("data", help="CSV with covariate columns")
    p.add_argument("--config", help="INI config whose [data] section describes the CSV")
    p.add_argument("--out", default="predictions.csv", help="output CSV path")
    add_server(p)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("compare", help="fit several configs on one CSV and rank them")
    p.add_argument("configs", nargs="+", help="INI configuration files")
    p.add_argument("--train", required=True, help="shared training CSV")
    p.add_argument("--out", default="comparison.csv", help="output CSV path")
    add_server(p)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("gram", help="dump the combined kernel matrix on a CSV")
    p.add_argument("config", help="INI configuration file")
    p.add_argument("--data", required=True, help="CSV with covariate columns")
    p.add_argument("--scales", help="scale coordinates, e.g. '1.0,0.5'")
    p.add_argument("--out", default="gram.csv", help="output CSV path")
    add_server(p)
    p.set_defaults(func=_cmd_gram)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _CliFailure as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return exc.exit_code
    except ConfigError as exc:
        print(f"CONFIG_ERROR: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IpriorError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
