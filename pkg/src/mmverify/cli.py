"""Command-line entry point: check, eval, record, report."""

from __future__ import annotations

import json
import logging
import os
import sys
import time
from pathlib import Path

import click

from .config import SECRET_ENV, PipelineConfig, load_config
from .core import ImageRef, InvalidRecord, PostRecord, sniff_media_type, validate_post
from .errors import ConfigError, FileUnreadable, OfflineViolation
from .evaluation import FORMATS, RunReport, compare_runs, load_dataset, render_agreement, render_table
from .pipeline import METHODS, Pipeline, PostAborted

EXIT_CONFIG = 3
EXIT_INPUT = 4
EXIT_ABORT = 5
EXIT_IO = 6
EXIT_OFFLINE = 7
EXIT_INCOMPLETE = 8


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _config(ctx_obj, config_path, **overrides) -> PipelineConfig:
    if ctx_obj.get("offline"):
        overrides["offline"] = True
    try:
        return load_config(config_path, **overrides)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))


def _pipeline(cfg: PipelineConfig) -> Pipeline:
    try:
        return Pipeline(cfg)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))


def _ablation_overrides(top_k, batch_size, fixtures, no_initial_stage_infer, no_visual_retrieval) -> dict:
    out = {"top_k": top_k, "batch_size": batch_size}
    if fixtures:
        out["fixtures"] = str(Path(fixtures).resolve())
    if no_initial_stage_infer:
        out["no_initial_stage_infer"] = True
    if no_visual_retrieval:
        out["no_visual_retrieval"] = True
    return out


@click.group()
@click.option("--offline", is_flag=True, help="Forbid every network call.")
@click.option("-v", "--verbose", count=True, help="More logging (repeatable).")
@click.pass_context
def main(ctx, offline, verbose):
    """Check image-text posts for misinformation and evaluate runs."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    ctx.ensure_object(dict)
    ctx.obj["offline"] = offline


_common = [
    click.option("--config", "config_path", type=click.Path(dir_okay=False), help="YAML or JSON pipeline config."),
    click.option("--fixtures", type=click.Path(file_okay=False), help="Fixture store directory."),
    click.option("--top-k", type=int, help="Search results kept per query."),
    click.option("--batch-size", type=int, help="Documents per relevance call."),
    click.option("--no-initial-stage-infer", is_flag=True, help="Skip the gate; always retrieve."),
    click.option("--no-visual-retrieval", is_flag=True, help="Skip reverse-image search."),
]


def common_options(fn):
    for opt in reversed(_common):
        fn = opt(fn)
    return fn


@main.command()
@click.option("--image", "image_path", type=click.Path(dir_okay=False), help="Image file of the post.")
@click.option("--text", required=True, help="Text of the post.")
@click.option("--id", "post_id", default="cli-post", show_default=True)
@click.option("--json", "as_json", is_flag=True, help="Print the verdict as JSON.")
@common_options
@click.pass_context
def check(ctx, image_path, text, post_id, as_json, config_path, fixtures, top_k, batch_size,
          no_initial_stage_infer, no_visual_retrieval):
    """Run the full pipeline on one post and print the verdict."""
    cfg = _config(
        ctx.obj,
        config_path,
        **_ablation_overrides(top_k, batch_size, fixtures, no_initial_stage_infer, no_visual_retrieval),
    )
    image = None
    if image_path:
        try:
            data = Path(image_path).read_bytes()
        except OSError as exc:
            _fail(EXIT_IO, f"cannot read image {image_path}: {exc}")
        mime = sniff_media_type(data)
        if mime is None:
            _fail(EXIT_INPUT, f"image {image_path} does not decode")
        image = ImageRef(data=data, media_type=mime, path=image_path)
    try:
        post = PostRecord(post_id, text, image)
    except InvalidRecord as exc:
        _fail(EXIT_INPUT, str(exc))
    check_ = validate_post(post, cfg.min_text_len, cfg.require_image)
    if not check_:
        _fail(EXIT_INPUT, f"post rejected before any provider call: {check_.reason}")
    pipeline = _pipeline(cfg)
    try:
        verdict = pipeline.run_post(post)
    except OfflineViolation as exc:
        _fail(EXIT_OFFLINE, str(exc))
    except PostAborted as exc:
        _fail(EXIT_ABORT, str(exc))
    if as_json:
        click.echo(json.dumps(verdict.to_dict(), indent=2, sort_keys=True, ensure_ascii=False))
        return
    click.echo(f"category: {verdict.category.value} ({verdict.category.display_name})")
    click.echo(f"label: {verdict.binary.value}")
    click.echo(f"initial prediction: {verdict.direct.prediction.value}")
    click.echo(f"used external evidence: {str(verdict.used_external).lower()}")
    click.echo(f"fell back to initial prediction: {str(verdict.fell_back_to_direct).lower()}")
    if verdict.provenance:
        click.echo(f"flags: {', '.join(verdict.provenance)}")
    for i, t in enumerate(verdict.evidence_text, 1):
        when = t.publication_date.isoformat() if t.publication_date else "undated"
        click.echo(f"evidence [{i}] {t.web_title} ({when})")
        for s in t.segments:
            click.echo(f"    - {s}")
    for title in verdict.evidence_visual.page_titles:
        click.echo(f"image seen on: {title}")
    if verdict.refined_rationale:
        click.echo(f"reason: {verdict.refined_rationale}")
    for w in verdict.warnings:
        click.echo(f"warning: {w}", err=True)


def _load(dataset, fmt, cfg):
    try:
        return load_dataset(dataset, fmt, cfg.min_text_len, require_image=cfg.require_image)
    except FileUnreadable as exc:
        _fail(EXIT_IO, str(exc))


def _execute(pipeline: Pipeline, loaded, method: str, dataset: str) -> RunReport:
    started = time.perf_counter()
    try:
        outcomes = pipeline.run_many(loaded.posts, method)
    except OfflineViolation as exc:
        _fail(EXIT_OFFLINE, str(exc))
    wall = time.perf_counter() - started
    return RunReport.build(
        method,
        Path(dataset).name,
        pipeline.config.snapshot(),
        loaded.posts,
        outcomes,
        stats=pipeline.stats(),
        skipped=dict(loaded.skipped),
        timing={
            "wall_clock_s": round(wall, 4),
            "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "provider_latency_ms": sorted(ms for _, ms in pipeline.gateway.latencies),
        },
    )


@main.command("eval")
@click.argument("dataset", type=click.Path(dir_okay=False))
@click.option("--method", type=click.Choice(METHODS), default="lemma", show_default=True)
@click.option("--format", "fmt", type=click.Choice(FORMATS), default="custom_jsonl", show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default="runs", show_default=True)
@click.option("--name", help="Report file stem (default: method plus ablation flags).")
@common_options
@click.pass_context
def eval_cmd(ctx, dataset, method, fmt, out_dir, name, config_path, fixtures, top_k, batch_size,
             no_initial_stage_infer, no_visual_retrieval):
    """Run a method over a dataset and write a run report."""
    cfg = _config(
        ctx.obj,
        config_path,
        **_ablation_overrides(top_k, batch_size, fixtures, no_initial_stage_infer, no_visual_retrieval),
    )
    loaded = _load(dataset, fmt, cfg)
    pipeline = _pipeline(cfg)
    report = _execute(pipeline, loaded, method, dataset)
    stem = name or "_".join(
        [method]
        + (["no_initial_stage_infer"] if cfg.no_initial_stage_infer else [])
        + (["no_visual_retrieval"] if cfg.no_visual_retrieval else [])
    )
    paths = report.write(out_dir, stem)
    click.echo(render_table({stem: report}), nl=False)
    click.echo(f"report: {paths['json']}")


@main.command()
@click.argument("dataset", type=click.Path(dir_okay=False))
@click.option("--method", "methods", type=click.Choice(METHODS), multiple=True, default=("lemma", "direct"),
              show_default=True)
@click.option("--format", "fmt", type=click.Choice(FORMATS), default="custom_jsonl", show_default=True)
@common_options
@click.pass_context
def record(ctx, dataset, methods, fmt, config_path, fixtures, top_k, batch_size,
           no_initial_stage_infer, no_visual_retrieval):
    """Run live and write every model, search and page interaction to the fixture store."""
    if ctx.obj.get("offline"):
        _fail(EXIT_CONFIG, "record needs network access; drop --offline")
    if not os.environ.get(SECRET_ENV["api_key"]):
        _fail(EXIT_CONFIG, f"record needs live credentials in {SECRET_ENV['api_key']}")
    overrides = _ablation_overrides(top_k, batch_size, fixtures, no_initial_stage_infer, no_visual_retrieval)
    base = _config(ctx.obj, config_path, **overrides)
    image_provider = "http" if base.image_endpoint else "stub_fixture"
    cfg = base.replace(mode="live", record=True, search_provider="duckduckgo_like", image_provider=image_provider,
                       fetch_mode="live")
    loaded = _load(dataset, fmt, cfg)
    pipeline = _pipeline(cfg)
    complete = True
    for method in methods:
        report = _execute(pipeline, loaded, method, dataset)
        complete &= not report.failures
        click.echo(f"{method}: {len(report.verdicts)} verdicts, {len(report.failures)} failures")
    for part in (pipeline.search, pipeline.images):
        complete &= getattr(part, "failures", 0) == 0
    complete &= pipeline.fetcher.failures == 0
    pipeline.store.mark_complete(complete)
    retries = getattr(pipeline.gateway.client, "retries", 0)
    click.echo(f"model retries: {retries}")
    click.echo(f"fixture store {'complete' if complete else 'INCOMPLETE'}: {pipeline.store.root}")
    if not complete:
        sys.exit(EXIT_INCOMPLETE)


@main.command()
@click.argument("reports", nargs=-1, required=True, type=click.Path(dir_okay=False))
@click.option("--compare/--no-compare", default=True, help="Agreement summary when exactly two reports are given.")
def report(reports, compare):
    """Render saved run reports as a table (and compare two of them)."""
    loaded = {}
    for path in reports:
        try:
            loaded[Path(path).stem] = RunReport.load(path)
        except (OSError, ValueError, KeyError) as exc:
            _fail(EXIT_IO, f"cannot read report {path}: {exc}")
    click.echo(render_table(loaded), nl=False)
    if compare and len(loaded) == 2:
        (a_name, a), (b_name, b) = loaded.items()
        try:
            stats = compare_runs(a, b)
        except ValueError as exc:
            _fail(EXIT_INPUT, str(exc))
        click.echo()
        click.echo(render_agreement(stats, a_name, b_name), nl=False)


if __name__ == "__main__":
    main()
