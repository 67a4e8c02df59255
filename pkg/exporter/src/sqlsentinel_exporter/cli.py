import logging

import click

from .export import ExporterConfig, ExporterError, export


@click.command()
@click.option("--corpus", "corpus_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Normalized corpus file (JSON-lines with fingerprints).")
@click.option("--model", required=True,
              help="Encoder checkpoint: local path or hub name.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--batch-size", default=16, show_default=True, type=int)
@click.option("--capacity", default=0, type=int,
              help="Max tokens per chunk; defaults to the model maximum.")
def main(corpus_path, model, out_path, batch_size, capacity):
    """Embed a normalized SQL corpus with a transformer encoder."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    cfg = ExporterConfig(model=model, capacity=capacity, batch_size=batch_size)
    try:
        count = export(corpus_path, cfg, out_path)
    except ExporterError as exc:
        raise click.ClickException(str(exc))
    click.echo(f"wrote {count} embeddings to {out_path}")


if __name__ == "__main__":
    main()
