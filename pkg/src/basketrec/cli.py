"""Command line entry point: ingest, train, build-index, eval, bench, serve, recommend."""

from __future__ import annotations

import functools
import json
import logging
import sys
from pathlib import Path

import click
import numpy as np
import yaml

from .corpus import CorpusError, FrequencyTable, item_frequencies, load_baskets, split_holdout, user_frequencies, write_baskets
from .evaluation import default_strategies, evaluate, make_eval_split
from .index import IndexParams, build_catalog, save_index
from .model import TrainConfig, TrainingDiverged, init_model, load_model, save_model, train
from .triples import make_zipf_sampler, read_triples, sample_triples, write_triples

log = logging.getLogger("basketrec")


def _load_config(ctx: click.Context, param: click.Parameter, value: str | None):
    """Eager ``--config`` callback: YAML keys (option names, dashes or underscores) become defaults."""
    if value is None:
        return None
    try:
        doc = yaml.safe_load(Path(value).read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise click.BadParameter(f"cannot read {value}: {exc}", ctx=ctx, param=param) from exc
    if not isinstance(doc, dict):
        raise click.BadParameter(f"{value} must hold a mapping of option names", ctx=ctx, param=param)
    section = doc.get(ctx.info_name, doc)
    ctx.default_map = {str(k).replace("-", "_"): v for k, v in section.items() if not isinstance(v, dict)}
    return value


def common_options(fn):
    @click.option("--config", type=click.Path(dir_okay=False), callback=_load_config, is_eager=True,
                  expose_value=False, help="YAML file of option defaults; a section named after the command wins.")
    @click.option("--seed", type=int, default=0, show_default=True, help="Seed for every random choice.")
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        return fn(*args, **kwargs)

    return wrapper


def _need_file(path: str | None, what: str, hint: str) -> Path:
    if path is None:
        raise click.UsageError(f"no {what} given; {hint}")
    p = Path(path)
    if not p.is_file():
        raise click.ClickException(f"{what} not found: {p}. {hint}")
    return p


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool):
    """Within-basket recommendations from (user, item, item) embeddings."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="CSV with header user_id,basket_id,item_id.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Cache directory to write.")
@click.option("--test-fraction", type=float, default=0.2, show_default=True)
@click.option("--triples", "n_triples", type=int, default=5_000_000, show_default=True,
              help="Training triples to sample from the train split (0 skips the triple cache).")
@common_options
def ingest(input_path, out_dir, test_fraction, n_triples, seed):
    """Split a transaction CSV into train/test and cache training triples."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        log_ = load_baskets(input_path)
        tr, te = split_holdout(log_, test_fraction, seed)
    except CorpusError as exc:
        raise click.ClickException(str(exc)) from exc
    write_baskets(tr, out / "train.csv")
    write_baskets(te, out / "test.csv")
    if n_triples > 0:
        write_triples(sample_triples(tr, n_triples, seed), out / "triples.bin")
    click.echo(
        f"{len(log_)} baskets, {log_.vocabulary.user_count} users, {log_.vocabulary.item_count} items -> "
        f"{len(tr)} train / {len(te)} test baskets in {out}"
    )


@main.command("train")
@click.option("--data", "data_path", required=True, type=click.Path(exists=True),
              help="Cache directory from ingest, or a train CSV.")
@click.option("--triples", "triples_path", type=click.Path(exists=True, dir_okay=False),
              help="Triple cache; defaults to triples.bin in the cache directory, else sampled fresh.")
@click.option("--num-triples", type=int, default=5_000_000, show_default=True,
              help="Triples to sample when no cache is available.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--dim", type=int, default=64, show_default=True)
@click.option("--lr", "learning_rate", type=float, default=1.0, show_default=True)
@click.option("--batch-size", type=int, default=1000, show_default=True)
@click.option("--epochs", type=int, default=100, show_default=True)
@click.option("--negatives", type=int, default=5, show_default=True)
@common_options
def train_cmd(data_path, triples_path, num_triples, out_path, dim, learning_rate, batch_size, epochs, negatives, seed):
    """Fit embeddings and write the model file. ``--epochs 0`` writes the initialization."""
    data = Path(data_path)
    csv_path = data / "train.csv" if data.is_dir() else data
    try:
        tr = load_baskets(csv_path)
    except (CorpusError, OSError) as exc:
        raise click.ClickException(str(exc)) from exc
    vocab = tr.vocabulary
    if triples_path is None and data.is_dir() and (data / "triples.bin").is_file():
        triples_path = data / "triples.bin"
    if triples_path is not None:
        triples = read_triples(triples_path)
        if triples.size and (triples[:, 0].max() >= vocab.user_count or triples[:, 1:].max() >= vocab.item_count):
            raise click.ClickException(f"{triples_path} refers to ids outside {csv_path}")
    else:
        triples = sample_triples(tr, num_triples, seed)

    config = TrainConfig(dim=dim, learning_rate=learning_rate, batch_size=batch_size,
                         max_epochs=epochs, negatives=negatives, seed=seed)
    item_freq, user_freq = item_frequencies(tr), user_frequencies(tr)
    if epochs == 0:
        model = init_model(vocab.user_count, vocab.item_count, config, vocab)
    else:
        def progress(epoch, loss):
            click.echo(f"epoch {epoch + 1}/{epochs} loss {loss:.4f}", err=True)

        try:
            model = train(triples, vocab.user_count, vocab.item_count, config,
                          make_zipf_sampler(item_freq), make_zipf_sampler(user_freq), vocab, progress)
        except TrainingDiverged as exc:
            raise click.ClickException(str(exc)) from exc
    model.item_counts = item_freq.counts
    save_model(model, out_path)
    click.echo(f"model n={model.n} m={model.m} d={model.d} -> {out_path}")


@main.command("build-index")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--backend", type=click.Choice(["exact", "approximate"]), default="approximate", show_default=True)
@click.option("--layout", type=click.Choice(["symmetric", "asymmetric"]), default="symmetric", show_default=True)
@click.option("--M", "M", type=int, default=16, show_default=True, help="Graph out-degree.")
@click.option("--efc", type=int, default=200, show_default=True, help="Build-time beam width.")
@click.option("--efs", type=int, default=100, show_default=True, help="Query-time beam width.")
@common_options
def build_index(model_path, out_path, backend, layout, M, efc, efs, seed):
    """Build the catalog index from a model file."""
    model = load_model(model_path)
    index = build_catalog(model, backend, IndexParams(M=M, efc=efc, efs=efs, seed=seed), layout=layout)
    save_index(index, out_path)
    click.echo(f"{backend} {layout} index n={index.n} dim={index.dim} -> {out_path}")


@main.command("eval")
@click.option("--model", "model_path", type=click.Path(dir_okay=False), help="Model file from train.")
@click.option("--test", "test_path", required=True, type=click.Path(exists=True),
              help="Test CSV, or a cache directory holding test.csv.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="Report CSV.")
@click.option("--figure", "figure_path", type=click.Path(dir_okay=False),
              help="Chart path; defaults to the report path with a .png suffix.")
@click.option("--k", type=int, default=20, show_default=True)
@click.option("--backend", type=click.Choice(["exact", "approximate"]), default="exact", show_default=True)
@click.option("--efs", type=int, default=100, show_default=True)
@click.option("--anchor-threshold", type=int, default=6, show_default=True)
@click.option("--postprocess", "postprocess_path", type=click.Path(exists=True, dir_okay=False))
@common_options
def eval_cmd(model_path, test_path, out_path, figure_path, k, backend, efs, anchor_threshold, postprocess_path, seed):
    """Score every strategy on the held-out baskets; write CSV, chart and a table."""
    from .plotting import plot_metrics
    from .recommend import PostProcessConfig

    mpath = _need_file(model_path, "model file", "run `basketrec train --data <cache> --out model.bin` first and pass --model.")
    model = load_model(mpath)
    test = Path(test_path)
    test = test / "test.csv" if test.is_dir() else test
    try:
        test_log = load_baskets(test, vocabulary=model.vocabulary)
    except CorpusError as exc:
        raise click.ClickException(str(exc)) from exc
    splits, skipped = make_eval_split(test_log, seed=seed)
    if not splits:
        raise click.ClickException(f"{test} has no basket with two or more items to evaluate")
    counts = model.item_counts if model.item_counts is not None else np.zeros(model.n, dtype=np.int64)
    post = PostProcessConfig.load(postprocess_path, model.vocabulary) if postprocess_path else None
    strategies = default_strategies(model, backend, IndexParams(efs=efs, seed=seed), seed, anchor_threshold)
    report = evaluate(model, strategies, splits, FrequencyTable.from_counts(counts), k, skipped, post)
    report.to_csv(out_path)
    fig = Path(figure_path) if figure_path else Path(out_path).with_suffix(".png")
    plot_metrics(report, fig)
    click.echo(report.format_table())
    click.echo(f"report -> {out_path}, chart -> {fig}")


@main.command()
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False),
              help="Model file; omitted means a random model of --items/--users/--dim.")
@click.option("--items", "n_items", type=int, default=50_000, show_default=True)
@click.option("--users", "n_users", type=int, default=1_000, show_default=True)
@click.option("--dim", type=int, default=64, show_default=True)
@click.option("--sizes", default="1,5,10,20", show_default=True, help="Comma-separated basket sizes.")
@click.option("--repetitions", type=int, default=100, show_default=True)
@click.option("--backends", default="exact,approximate", show_default=True)
@click.option("--k", type=int, default=20, show_default=True)
@click.option("--efs", type=int, default=100, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="Latency CSV.")
@click.option("--figure", "figure_path", type=click.Path(dir_okay=False),
              help="Chart path; defaults to the CSV path with a .png suffix.")
@common_options
def bench(model_path, n_items, n_users, dim, sizes, repetitions, backends, k, efs, out_path, figure_path, seed):
    """Time the recommend path per backend and basket size."""
    from .benchmark import benchmark_latency, write_latency_csv
    from .plotting import plot_latency
    from .synthetic import random_model

    try:
        basket_sizes = [int(s) for s in sizes.split(",") if s.strip()]
    except ValueError as exc:
        raise click.BadParameter(f"--sizes must be integers: {sizes}") from exc
    names = [b.strip() for b in backends.split(",") if b.strip()]
    if any(b not in ("exact", "approximate") for b in names):
        raise click.BadParameter(f"--backends takes exact and/or approximate, got {backends}")
    if model_path:
        model = load_model(model_path)
    else:
        model = random_model(n_items, n_users, dim, seed=seed, dtype=np.float32, scale=1.0 / np.sqrt(dim))
    params = IndexParams(efs=efs, seed=seed)
    indexes = {b: build_catalog(model, b, params) for b in names}
    rows = benchmark_latency(model, indexes, basket_sizes, repetitions, k, seed)
    write_latency_csv(rows, out_path)
    fig = Path(figure_path) if figure_path else Path(out_path).with_suffix(".png")
    plot_latency(rows, fig, title=f"Recommendation latency, n={model.n}, d={model.d}")
    for r in rows:
        click.echo(f"{r.backend:<12} size {r.basket_size:>3}  mean {r.mean_ms:8.3f} ms  p99 {r.p99_ms:8.3f} ms")
    click.echo(f"latency -> {out_path}, chart -> {fig}")


def _service_config(model_path, index_path, postprocess_path, host, port, k, anchor_threshold, seed_mode, timeout, seed):
    from .service import ServiceConfig

    return ServiceConfig(
        model_path=Path(model_path), index_path=Path(index_path),
        postprocess_path=Path(postprocess_path) if postprocess_path else None,
        host=host, port=port, default_k=k, anchor_threshold=anchor_threshold,
        seed_mode=seed_mode, seed=seed, timeout_s=timeout,
    )


def service_options(fn):
    for opt in reversed([
        click.option("--model", "model_path", required=True, envvar="BASKETREC_MODEL", show_envvar=True),
        click.option("--index", "index_path", required=True, envvar="BASKETREC_INDEX", show_envvar=True),
        click.option("--postprocess", "postprocess_path", envvar="BASKETREC_POSTPROCESS", show_envvar=True,
                     help="YAML blacklist/diversity rules."),
        click.option("--k", type=click.IntRange(1, 500), default=20, show_default=True),
        click.option("--anchor-threshold", type=int, default=6, show_default=True),
        click.option("--seed-mode", type=click.Choice(["fixed", "per-request"]), default="fixed", show_default=True),
    ]):
        fn = opt(fn)
    return fn


@main.command()
@service_options
@click.option("--host", default="127.0.0.1", show_default=True, envvar="BASKETREC_HOST", show_envvar=True)
@click.option("--port", type=int, default=8080, show_default=True, envvar="BASKETREC_PORT", show_envvar=True)
@click.option("--timeout", type=float, default=2.0, show_default=True, help="Per-request limit in seconds.")
@common_options
def serve(model_path, index_path, postprocess_path, k, anchor_threshold, seed_mode, host, port, timeout, seed):
    """Serve POST /v1/recommendations and GET /v1/health. Restart to load new artifacts."""
    from .service import ServiceStartupError, start

    cfg = _service_config(model_path, index_path, postprocess_path, host, port, k, anchor_threshold, seed_mode, timeout, seed)
    try:
        start(cfg)
    except ServiceStartupError as exc:
        raise click.ClickException(str(exc)) from exc


@main.command("recommend")
@service_options
@click.option("--user", "user_id", help="External user id; unknown or omitted means anonymous.")
@click.option("--basket", required=True, help="Comma-separated external item ids.")
@common_options
def recommend_cmd(model_path, index_path, postprocess_path, k, anchor_threshold, seed_mode, user_id, basket, seed):
    """One request through the service handler, printed as the JSON response body."""
    from .service import RecommenderService, ServiceStartupError

    cfg = _service_config(model_path, index_path, postprocess_path, "127.0.0.1", 0, k, anchor_threshold, seed_mode, 2.0, seed)
    try:
        service = RecommenderService(cfg).load()
    except ServiceStartupError as exc:
        raise click.ClickException(str(exc)) from exc
    items = [b.strip() for b in basket.split(",") if b.strip()]
    body = service.handle_recommend({"user_id": user_id, "basket": items, "k": k})
    json.dump(body, sys.stdout, indent=2)
    click.echo()


if __name__ == "__main__":
    main()
