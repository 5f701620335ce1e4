"""Command-line interface.

The ``map`` command is a thin client over the HTTP service: it either talks
to a running server (--server) or boots the service in-process on an
ephemeral port and drives it through the same API.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from .decomposer import load_dictionary
from .errors import ConceptLinkError
from .metrics import evaluate, load_gold_csv, render_report, write_report
from .pipeline import build_context, load_results, make_providers
from .reranker import NA_LITERAL
from .reservoir import Reservoir

logger = logging.getLogger(__name__)


@click.group()
@click.option("--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool) -> None:
    """Link data-dictionary variables to controlled-vocabulary concepts."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def _job_options(k: int, tau: float, n: int, t: int, tau_rel: float, parallelism: int, trace: bool) -> dict:
    return {
        "k": k,
        "tau": tau,
        "n": n,
        "t": t,
        "tau_rel": tau_rel,
        "parallelism": parallelism,
        "trace": trace,
    }


def _summarize(records: list[dict]) -> str:
    total = 0
    linked = 0
    for record in records:
        for outcome in record.get("component_results", {}).values():
            total += 1
            if outcome.get("status") != NA_LITERAL:
                linked += 1
    return f"{len(records)} entries, {linked}/{total} components linked"


@main.command("map")
@click.option("--dict", "dictionary_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--kb", "kb_dir", type=click.Path(exists=True, file_okay=False), default=None,
              help="Knowledge-base directory (required unless --server is given).")
@click.option("--rules", "rules_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--k", default=10, show_default=True, type=click.IntRange(min=1))
@click.option("--tau", default=0.5, show_default=True, type=click.FloatRange(0.0, 1.0))
@click.option("--n", default=3, show_default=True, type=click.IntRange(min=1))
@click.option("--t", default=8, show_default=True, type=click.IntRange(1, 10))
@click.option("--tau-rel", default=0.85, show_default=True, type=click.FloatRange(0.0, 1.0))
@click.option("--parallelism", default=1, show_default=True, type=click.IntRange(min=1))
@click.option("--provider", default="mock", show_default=True,
              help="mock, wire, or scripted:<completions file>.")
@click.option("--embed-url", default=None, help="Embedding service URL for --provider wire.")
@click.option("--llm-url", default=None, help="Completion service URL for --provider wire.")
@click.option("--reservoir", "reservoir_path", type=click.Path(dir_okay=False), default=None)
@click.option("--trace", is_flag=True, help="Record per-stage trace in the results.")
@click.option("--server", "server_url", default=None, help="Use a running service instead of local state.")
def map_command(
    dictionary_path: str,
    kb_dir: str | None,
    rules_path: str | None,
    out_path: str,
    k: int,
    tau: float,
    n: int,
    t: int,
    tau_rel: float,
    parallelism: int,
    provider: str,
    embed_url: str | None,
    llm_url: str | None,
    reservoir_path: str | None,
    trace: bool,
    server_url: str | None,
) -> None:
    """Map every entry of a data dictionary and write JSON Lines results."""
    from .service import EphemeralServer, ServiceClient, create_app

    try:
        entries = load_dictionary(dictionary_path)
    except ConceptLinkError as exc:
        raise click.ClickException(str(exc))
    payload = [entry.to_record() for entry in entries]
    options = _job_options(k, tau, n, t, tau_rel, parallelism, trace)

    def run(client: ServiceClient) -> list[dict]:
        job_id = client.submit_job(payload, options)
        job = client.wait_for_job(job_id)
        if job["state"] != "done":
            raise click.ClickException(f"mapping job failed: {job.get('error', 'unknown error')}")
        return job["results"]

    try:
        if server_url:
            with ServiceClient(server_url) as client:
                records = run(client)
        else:
            if not kb_dir:
                raise click.ClickException("--kb is required when no --server is given")
            embedding_provider, llm = make_providers(provider, embed_url=embed_url, llm_url=llm_url)
            ctx = build_context(
                kb_dir,
                embedding_provider,
                llm,
                rules_path=rules_path,
                reservoir_path=reservoir_path,
            )
            app = create_app(ctx, rules_path=rules_path)
            with EphemeralServer(app) as server:
                with ServiceClient(server.url) as client:
                    records = run(client)
    except ConceptLinkError as exc:
        raise click.ClickException(str(exc))

    with open(out_path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    click.echo(f"wrote {out_path}: {_summarize(records)}")


@main.command("eval")
@click.option("--results", "results_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--gold", "gold_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--k", "ks", default="1,3,5,10", show_default=True,
              help="Comma-separated ranking cutoffs.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None,
              help="Also write the report as JSON.")
def eval_command(results_path: str, gold_path: str, ks: str, out_path: str | None) -> None:
    """Score traced mapping results against gold concept ids."""
    try:
        cutoffs = [int(v) for v in ks.split(",") if v.strip()]
    except ValueError:
        raise click.ClickException(f"bad cutoff list {ks!r}")
    if not cutoffs:
        raise click.ClickException("at least one cutoff is required")
    try:
        records = load_results(results_path)
        gold = load_gold_csv(gold_path)
        report = evaluate(records, gold, cutoffs)
    except ConceptLinkError as exc:
        raise click.ClickException(str(exc))
    click.echo(render_report(report))
    if out_path:
        write_report(out_path, report)
        click.echo(f"wrote {out_path}")


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
@click.option("--kb", "kb_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--rules", "rules_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--reservoir", "reservoir_path", type=click.Path(dir_okay=False), default=None)
@click.option("--provider", default="mock", show_default=True,
              help="mock, wire, or scripted:<completions file>.")
@click.option("--embed-url", default=None)
@click.option("--llm-url", default=None)
@click.option("--ui-dir", type=click.Path(file_okay=False), default=None,
              help="Serve a static review UI from this directory at /ui.")
def serve_command(
    host: str,
    port: int,
    kb_dir: str,
    rules_path: str | None,
    reservoir_path: str | None,
    provider: str,
    embed_url: str | None,
    llm_url: str | None,
    ui_dir: str | None,
) -> None:
    """Run the mapping service."""
    import uvicorn

    from .service import create_app

    try:
        embedding_provider, llm = make_providers(provider, embed_url=embed_url, llm_url=llm_url)
        ctx = build_context(
            kb_dir,
            embedding_provider,
            llm,
            rules_path=rules_path,
            reservoir_path=reservoir_path,
        )
    except (ConceptLinkError, ValueError) as exc:
        raise click.ClickException(str(exc))
    app = create_app(ctx, rules_path=rules_path, ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port)


@main.command("export")
@click.option("--reservoir", "reservoir_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--triples", "triples_path", type=click.Path(dir_okay=False), default=None)
@click.option("--dictionary", "dictionary_path", type=click.Path(dir_okay=False), default=None)
def export_command(reservoir_path: str, triples_path: str | None, dictionary_path: str | None) -> None:
    """Export approved mappings as triples or as a mapped dictionary."""
    if not triples_path and not dictionary_path:
        raise click.ClickException("nothing to do: pass --triples and/or --dictionary")
    reservoir = Reservoir(reservoir_path)
    if triples_path:
        reservoir.write_triples(triples_path)
        click.echo(f"wrote {triples_path}")
    if dictionary_path:
        reservoir.write_dictionary(dictionary_path)
        click.echo(f"wrote {dictionary_path}")


if __name__ == "__main__":
    main()
