"""Command-line client for the detection service.

Every subcommand is a thin wrapper over the HTTP API: inputs are read
from local files, shipped to the service, and the response contents are
written back to local files. By default the service runs in-process (no
network, same wire format); pass --server to talk to a remote instance.

Model bundles, verdict streams and reports are therefore always owned by
the caller's filesystem, and repeated runs with the same seed produce
byte-identical bundle and verdict files. Manifests carry timestamps and
are exempt from that guarantee.
"""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path

import click
import httpx

from . import __version__
from .errors import CorpusFormatError
from .normalizer import read_corpus_with_lines

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}

BUNDLE_FILES = {
    "encoder": "encoder.json",
    "ensemble": "ensemble.json",
    "classifier": "classifier.json",
    "thresholds": "thresholds.json",
}


def _setup_logging() -> None:
    level_name = os.environ.get("SQLSENTINEL_LOG", "warn").lower()
    level = LOG_LEVELS.get(level_name, logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


class ServiceClient:
    """POSTs to a remote server when given one, else to the in-process app."""

    def __init__(self, server: str | None):
        if server:
            self._client = httpx.Client(base_url=server, timeout=600.0)
        else:
            from fastapi.testclient import TestClient

            from .service.app import app

            self._client = TestClient(app)

    def post(self, path: str, payload: dict) -> dict:
        response = self._client.post(path, json=payload)
        if response.status_code != 200:
            detail = {}
            try:
                detail = response.json().get("detail", {})
            except Exception:
                pass
            message = detail.get("error", response.text) if isinstance(detail, dict) else detail
            raise ServiceError(message, detail if isinstance(detail, dict) else {})
        return response.json()


class ServiceError(Exception):
    def __init__(self, message: str, detail: dict):
        super().__init__(message)
        self.detail = detail


def _read_corpus_file(path: str):
    """Returns (record payloads, line numbers aligned by index)."""
    try:
        pairs = read_corpus_with_lines(path)
    except CorpusFormatError as exc:
        raise click.ClickException(str(exc))
    except OSError as exc:
        raise click.ClickException(str(exc))
    lines = [line for line, _ in pairs]
    payload = [rec.to_json_obj() for _, rec in pairs]
    return payload, lines


def _fail_with_line(exc: ServiceError, lines: list[int]) -> None:
    index = exc.detail.get("record_index")
    if index is not None and 0 <= index < len(lines):
        raise click.ClickException(f"line {lines[index]}: {exc}")
    raise click.ClickException(str(exc))


def _load_config_document(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise click.ClickException(f"cannot read config {path}: {exc}")


def _config_payload(config_path: str | None, seed: int | None,
                    slack_unsup: float | None = None, slack_sup: float | None = None,
                    repeats: int | None = None) -> dict:
    doc = _load_config_document(config_path)
    doc.setdefault("encoder", {})
    doc.setdefault("train", {})
    doc.setdefault("ensemble", {})
    doc.setdefault("supervised", {})
    if seed is not None:
        doc["train"]["seed"] = seed
        doc["encoder"].setdefault("seed", seed)
    if slack_unsup is not None:
        doc["ensemble"]["slack"] = slack_unsup
    if slack_sup is not None:
        doc["supervised"]["slack"] = slack_sup
    if repeats is not None:
        doc["supervised"]["repeats"] = repeats
    return doc


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _write_json(path: Path, obj) -> None:
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_jsonl(path: Path, objs) -> None:
    _write_text(path, "".join(json.dumps(o, sort_keys=True) + "\n" for o in objs))


def _read_embeddings_file(path: str | None):
    if path is None:
        return None
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read().splitlines()
    except OSError as exc:
        raise click.ClickException(str(exc))


@click.group()
@click.version_option(version=__version__, prog_name="sqlsentinel")
@click.option("--server", default=None, envvar="SQLSENTINEL_SERVER",
              help="Base URL of a running service; defaults to in-process execution.")
@click.pass_context
def main(ctx, server):
    """Two-tier SQL anomaly detection client."""
    _setup_logging()
    ctx.obj = ServiceClient(server)


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--dedup/--no-dedup", default=True, show_default=True)
@click.pass_obj
def normalize(client: ServiceClient, in_path, out_path, dedup):
    """Normalize a raw corpus file and write the canonical corpus."""
    records, lines = _read_corpus_file(in_path)
    try:
        result = client.post("/v1/normalize", {"records": records, "dedup": dedup})
    except ServiceError as exc:
        _fail_with_line(exc, lines)
    _write_jsonl(Path(out_path), result["records"])
    _write_json(Path(out_path).with_suffix(".manifest.json"), result["manifest"])
    click.echo(f"read {result['read']} queries, kept {result['kept']} "
               f"({result['duplicates_removed']} duplicates removed)")


@main.command()
@click.option("--out-learn", required=True, type=click.Path(dir_okay=False),
              help="Learning-period corpus file (normals only).")
@click.option("--out-detect", required=True, type=click.Path(dir_okay=False),
              help="Detection-period corpus file (held-out normals + injections).")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--normal-per-role", default=100, show_default=True, type=int)
@click.option("--heldout-per-role", default=20, show_default=True, type=int)
@click.option("--attacks", default=30, show_default=True, type=int)
@click.option("--attack-kinds", default="data_leak,sabotage,sqli", show_default=True)
@click.option("--masquerade", default=None,
              help="victim:source:count, e.g. hr:finance:30.")
@click.option("--mode", type=click.Choice(["short", "long"]), default="short",
              show_default=True)
@click.option("--target-mean-tokens", default=200, show_default=True, type=int)
@click.option("--max-tokens", default=1900, show_default=True, type=int)
@click.pass_obj
def gen(client: ServiceClient, out_learn, out_detect, seed, normal_per_role,
        heldout_per_role, attacks, attack_kinds, masquerade, mode,
        target_mean_tokens, max_tokens):
    """Generate labeled role-scoped corpora with injected attacks."""
    payload = {
        "seed": seed,
        "normal_per_role": normal_per_role,
        "heldout_per_role": heldout_per_role,
        "attack_count": attacks,
        "attack_kinds": [k.strip() for k in attack_kinds.split(",") if k.strip()],
        "mode": mode,
        "target_mean_tokens": target_mean_tokens,
        "max_tokens": max_tokens,
    }
    if masquerade:
        try:
            victim, source, count = masquerade.split(":")
            payload.update(masquerade_victim=victim, masquerade_source=source,
                           masquerade_count=int(count))
        except ValueError:
            raise click.ClickException("--masquerade expects victim:source:count")
    try:
        result = client.post("/v1/generate", payload)
    except ServiceError as exc:
        raise click.ClickException(str(exc))
    _write_jsonl(Path(out_learn), result["learning"])
    _write_jsonl(Path(out_detect), result["detection"])
    _write_json(Path(out_learn).with_suffix(".manifest.json"), result["manifest"])
    click.echo(f"wrote {len(result['learning'])} learning and "
               f"{len(result['detection'])} detection records")


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--bundle-dir", required=True, type=click.Path(file_okay=False))
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@click.option("--seed", default=None, type=int)
@click.option("--embeddings", default=None, type=click.Path(exists=True, dir_okay=False),
              help="External embedding file to use instead of the hashing encoder.")
@click.pass_obj
def learn(client: ServiceClient, in_path, bundle_dir, config_path, seed, embeddings):
    """Fit both tiers on a learning corpus and persist the model bundle."""
    records, lines = _read_corpus_file(in_path)
    payload = {
        "records": records,
        "config": _config_payload(config_path, seed),
        "external_embeddings": _read_embeddings_file(embeddings),
    }
    try:
        result = client.post("/v1/learn", payload)
    except ServiceError as exc:
        _fail_with_line(exc, lines)
    bundle = result["bundle"]
    out = Path(bundle_dir)
    for key, filename in BUNDLE_FILES.items():
        _write_json(out / filename, bundle[key])
    _write_text(out / "probability_matrix.csv", result["probability_matrix_csv"])
    _write_json(out / "manifest.json", result["manifest"])
    for message in result["warnings"]:
        click.echo(f"warning: {message}", err=True)
    users = bundle["classifier"]["users"]
    click.echo(f"bundle written to {out} ({len(users)} users: {', '.join(users)})")


def _load_bundle(bundle_dir: str) -> dict:
    out = Path(bundle_dir)
    bundle = {"format": "sqlsentinel-bundle", "version": 1}
    for key, filename in BUNDLE_FILES.items():
        path = out / filename
        if not path.exists():
            raise click.ClickException(f"missing bundle file: {path}")
        with open(path, "r", encoding="utf-8") as fh:
            bundle[key] = json.load(fh)
    return bundle


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--bundle-dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--slack-unsup", default=None, type=float,
              help="Override the ensemble slack stored in the bundle.")
@click.option("--slack-sup", default=None, type=float,
              help="Override the supervised slack stored in the bundle.")
@click.option("--embeddings", default=None, type=click.Path(exists=True, dir_okay=False))
@click.pass_obj
def detect(client: ServiceClient, in_path, bundle_dir, out_dir, slack_unsup,
           slack_sup, embeddings):
    """Score a detection corpus against a persisted bundle."""
    records, lines = _read_corpus_file(in_path)
    payload = {
        "records": records,
        "bundle": _load_bundle(bundle_dir),
        "slack_unsup": slack_unsup,
        "slack_sup": slack_sup,
        "external_embeddings": _read_embeddings_file(embeddings),
    }
    try:
        result = client.post("/v1/detect", payload)
    except ServiceError as exc:
        _fail_with_line(exc, lines)
    out = Path(out_dir)
    _write_jsonl(out / "verdicts.jsonl", result["verdicts"])
    _write_text(out / "scores.csv", result["score_csv"])
    _write_text(out / "score_histogram.csv", result["histogram_csv"])
    _write_json(out / "manifest.json", result["manifest"])
    s = result["summary"]
    click.echo(f"{s['queries']} queries: tier1 flagged {s['tier1_flagged']}, "
               f"tier2 wrong-user {s['tier2_wrong_user']}, "
               f"tier2 below-threshold {s['tier2_below_threshold']}, "
               f"tier2 errors {s['tier2_errors']}, tier2 skipped {s['tier2_skipped']}")


@main.command(name="eval")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@click.option("--seed", default=None, type=int)
@click.option("--repeats", default=None, type=int)
@click.pass_obj
def eval_cmd(client: ServiceClient, in_path, out_path, config_path, seed, repeats):
    """Repeated supervised evaluation over a labeled corpus."""
    records, lines = _read_corpus_file(in_path)
    payload = {
        "records": records,
        "config": _config_payload(config_path, seed, repeats=repeats),
        "seed": seed,
    }
    try:
        result = client.post("/v1/evaluate", payload)
    except ServiceError as exc:
        _fail_with_line(exc, lines)
    _write_text(Path(out_path), result["csv"])
    _write_json(Path(out_path).with_suffix(".manifest.json"), result["manifest"])
    mean = result["mean"]

    def fmt(v):
        return "undefined" if v is None else f"{v:.4f}"

    click.echo(f"mean over {len(result['runs'])} runs: "
               f"precision {fmt(mean['precision'])}, recall {fmt(mean['recall'])}, "
               f"f1 {fmt(mean['f1'])}")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    _setup_logging()
    uvicorn.run("sqlsentinel.service.app:app", host=host, port=port)


if __name__ == "__main__":
    main()
