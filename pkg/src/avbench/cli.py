"""avbench command line: one entry point wiring all pipeline stages.

Exit codes: 0 ok, 1 validation failure, 2 runtime failure, 3 partial result
(gaps present).
"""

import json
import logging
import sys
from pathlib import Path

import click

from avbench import __version__, manifest
from avbench.config import load_config

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_PARTIAL = 3

log = logging.getLogger("avbench")


def _fail_validation(errors) -> None:
    for e in errors:
        click.echo(f"config error: {e}", err=True)
    sys.exit(EXIT_VALIDATION)


def _load(config_path, overrides):
    cfg, errors = load_config(config_path, overrides=overrides)
    if errors:
        _fail_validation(errors)
    return cfg


@click.group()
@click.version_option(version=__version__, prog_name="avbench")
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="YAML config file; env (AVBENCH_*) and flags override it.")
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
@click.pass_context
def main(ctx, config_path, verbose):
    """Hard-negative construction, benchmark curation and human-aligned
    scoring for audio-video generation evaluation."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path


@main.command("validate-config")
@click.pass_context
def validate_config_cmd(ctx):
    """Check the config file and print the complete violation list."""
    cfg, errors = load_config(ctx.obj["config_path"])
    if errors:
        _fail_validation(errors)
    click.echo(f"config ok (hash {cfg.hash[:12]})")


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--min-s", type=float, default=8.0, show_default=True)
@click.option("--max-s", type=float, default=12.0, show_default=True)
@click.option("--min-height", type=int, default=720, show_default=True)
@click.option("--annotate/--no-annotate", default=None,
              help="Attach dense captions via the configured annotator.")
@click.option("--verified", is_flag=True, default=False,
              help="Mark every emitted record as manually verified.")
@click.pass_context
def ingest(ctx, in_path, out_path, min_s, max_s, min_height, annotate, verified):
    """Filter a clip manifest to the corpus criteria and annotate captions."""
    overrides = {"ingest": {"min_s": min_s, "max_s": max_s, "min_height": min_height}}
    if annotate is not None:
        overrides["ingest"]["annotate"] = annotate
    cfg = _load(ctx.obj["config_path"], overrides)

    from avbench.corpus import FilterPolicy, annotate_corpus, filter_corpus, load_clips, save_clips
    from avbench.pipeline import _make_annotator
    from avbench.schema import AttributeSchema
    from avbench.assetutil import load_text

    try:
        schema = AttributeSchema.load(cfg["assets"]["attribute_schema"])
        policy = FilterPolicy(min_s=min_s, max_s=max_s, min_height=min_height)
        records = list(filter_corpus(load_clips(in_path, schema), policy))
        for r in records:
            if not r.content_hash:
                r.content_hash = r.compute_content_hash()
            if verified:
                r.verified = True
        if cfg["ingest"]["annotate"]:
            pending = [r for r in records if not r.fully_captioned]
            if pending:
                annotator = _make_annotator(cfg["endpoints"]["annotator"])
                annotated = {r.clip_id: r for r in annotate_corpus(
                    pending, annotator, load_text("prompts", "annotator.txt"),
                    retry_budget=int(cfg["ingest"]["retry_budget"]),
                    max_in_flight=int(cfg["ingest"]["max_in_flight"]))}
                records = [annotated.get(r.clip_id, r) for r in records]
        n = save_clips(out_path, records, meta=manifest.run_meta(cfg.seed, cfg.hash))
    except Exception as exc:
        click.echo(f"ingest failed: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)
    click.echo(f"ingest: {n} records -> {out_path}")


@main.command()
@click.option("--axis", type=click.Choice(["av"]), default="av", show_default=True)
@click.option("--strategy", default="balanced", show_default=True,
              help="One strategy name, or 'balanced' to rotate all eight.")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--noise-bank", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.pass_context
def perturb(ctx, axis, strategy, in_path, noise_bank, seed, out_dir):
    """Generate audio-video misalignment negatives from a clip manifest."""
    overrides = {"perturb": {"strategy": strategy}}
    if noise_bank:
        overrides["perturb"]["noise_bank"] = noise_bank
    if seed is not None:
        overrides["seed"] = seed
    cfg = _load(ctx.obj["config_path"], overrides)

    from avbench.avperturb import NoiseBank, generate_av_negatives, save_pairs
    from avbench.corpus import load_clips
    from avbench.pipeline import _perturb_ranges
    from avbench.seeding import derive_seed

    try:
        records = list(load_clips(in_path))
        bank = NoiseBank.open(noise_bank) if noise_bank else None
        out = Path(out_dir)
        pairs, report = generate_av_negatives(
            records, out / "audio", seed=derive_seed(cfg.seed, "perturb"),
            strategy=strategy, bank=bank, ranges=_perturb_ranges(cfg),
            working_rate=int(cfg["perturb"]["working_rate"]),
            muxer_cmd=cfg["perturb"]["muxer_cmd"])
        save_pairs(out / "av_pairs.jsonl", pairs, meta=manifest.run_meta(cfg.seed, cfg.hash))
        (out / "report.json").write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except Exception as exc:
        click.echo(f"perturb failed: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)
    click.echo(f"perturb: {report.pairs} pairs -> {out_dir}")
    if report.skipped:
        click.echo(f"perturb: {len(report.skipped)} records skipped", err=True)
        sys.exit(EXIT_PARTIAL)


@main.command()
@click.option("--axis", type=click.Choice(["vt", "at"]), required=True)
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--llm", default=None, help="LLM endpoint URL or stub:wordswap.")
@click.option("--per-record", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.pass_context
def mutate(ctx, axis, in_path, llm, per_record, seed, out_path):
    """Produce LLM-mutated caption negatives gated by the similarity window."""
    overrides = {"mutate": {"per_record": per_record}}
    if llm:
        overrides["endpoints"] = {"llm": llm}
    if seed is not None:
        overrides["seed"] = seed
    cfg = _load(ctx.obj["config_path"], overrides)

    from avbench.corpus import load_clips
    from avbench.pipeline import _make_llm
    from avbench.seeding import derive_seed
    from avbench.textmutate import MutationTaxonomy, build_pair_batch, save_pairs

    try:
        axis_u = axis.upper()
        taxonomy = MutationTaxonomy.load(axis_u, cfg["assets"][f"taxonomy_{axis}"])
        m = cfg["mutate"]
        pairs, report = build_pair_batch(
            load_clips(in_path), axis_u, _make_llm(cfg["endpoints"]["llm"]),
            count_per_record=int(m["per_record"]),
            seed=derive_seed(cfg.seed, "mutate", axis_u), taxonomy=taxonomy,
            temperature=float(m["temperature"]),
            similarity_window=tuple(m["similarity_window"]),
            vt_word_edits=tuple(m["vt_word_edits"]),
            max_in_flight=int(m["max_in_flight"]))
        save_pairs(out_path, pairs, meta=manifest.run_meta(cfg.seed, cfg.hash))
        report_path = Path(out_path).with_suffix(".report.json")
        report_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
                               encoding="utf-8")
    except Exception as exc:
        click.echo(f"mutate failed: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)
    click.echo(f"mutate[{axis}]: {report.positives} positives, "
               f"{report.negatives} negatives -> {out_path}")
    if report.exhausted:
        click.echo(f"mutate[{axis}]: {report.exhausted} mutations exhausted", err=True)
        sys.exit(EXIT_PARTIAL)


@main.command()
@click.option("--pool", required=True, type=click.Path(exists=True))
@click.option("--normal", "normal_size", type=int, default=350, show_default=True)
@click.option("--hard", "hard_size", type=int, default=120, show_default=True)
@click.option("--cap", type=float, default=0.5, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--include-unverified", is_flag=True, default=False)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.pass_context
def curate(ctx, pool, normal_size, hard_size, cap, seed, include_unverified, out_dir):
    """Assemble the Normal/Hard benchmark via quota-capped greedy sampling."""
    overrides = {"curate": {"normal_size": normal_size, "hard_size": hard_size, "cap": cap,
                            "require_verified": not include_unverified}}
    if seed is not None:
        overrides["seed"] = seed
    cfg = _load(ctx.obj["config_path"], overrides)

    from avbench.curator import QuotaPolicy, assemble_benchmark, load_prompts, save_benchmark
    from avbench.schema import load_hard_triggers
    from avbench.seeding import derive_seed

    try:
        bench = assemble_benchmark(
            load_prompts(pool),
            policy_normal=QuotaPolicy(target_size=normal_size, cap=cap),
            policy_hard=QuotaPolicy(target_size=hard_size, cap=cap),
            seed=derive_seed(cfg.seed, "curate"),
            triggers=load_hard_triggers(cfg["assets"]["hard_triggers"]),
            require_verified=not include_unverified)
        save_benchmark(out_dir, bench, meta=manifest.run_meta(cfg.seed, cfg.hash))
    except Exception as exc:
        click.echo(f"curate failed: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)
    click.echo(f"curate: normal={len(bench.normal)} hard={len(bench.hard)} -> {out_dir}")
    shortfall = bench.report["normal"]["shortfall"] + bench.report["hard"]["shortfall"]
    if shortfall:
        click.echo(f"curate: shortfall of {shortfall} entries", err=True)
        sys.exit(EXIT_PARTIAL)


@main.command("sft-export")
@click.option("--in", "in_paths", required=True, multiple=True, type=click.Path(exists=True),
              help="TrainingPair manifest(s); repeatable.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.pass_context
def sft_export_cmd(ctx, in_paths, out_path):
    """Export instruction-template (Yes/No) pairs for evaluator fine-tuning."""
    cfg = _load(ctx.obj["config_path"], {})
    from avbench.scorekit import load_questions, sft_export
    from avbench.textmutate import load_pairs

    try:
        pairs = [p for path in in_paths for p in load_pairs(path)]
        n = sft_export(out_path, pairs, questions=load_questions(cfg["assets"]["questions"]),
                       meta=manifest.run_meta(cfg.seed, cfg.hash))
    except Exception as exc:
        click.echo(f"sft-export failed: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)
    click.echo(f"sft-export: {n} instruction pairs -> {out_path}")


@main.command()
@click.option("--model", "model_id", required=True)
@click.option("--bench", "bench_paths", required=True, multiple=True, type=click.Path(exists=True))
@click.option("--media", "media_dir", required=True, type=click.Path(exists=True))
@click.option("--registry", "registry_path", type=click.Path(exists=True), default=None,
              help="Registry config (YAML/JSON); defaults to all-stub backends.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.pass_context
def score(ctx, model_id, bench_paths, media_dir, registry_path, out_path):
    """Run the ten-dimension suite for one model over a benchmark set."""
    cfg = _load(ctx.obj["config_path"], {})

    import yaml

    from avbench.curator import load_prompts
    from avbench.pipeline import _media_map
    from avbench.scorekit import (SpeechContentWeights, load_questions,
                                  registry_from_config, run_suite, save_scores)

    try:
        bench = [p for path in bench_paths for p in load_prompts(path)]
        if registry_path:
            registry_cfg = yaml.safe_load(Path(registry_path).read_text(encoding="utf-8"))
        else:
            registry_cfg = cfg["score"]["registry"]
        registry = registry_from_config(registry_cfg)
        w = cfg["score"]["weights"]
        result = run_suite(model_id, bench, _media_map(Path(media_dir),
                                                       [p.prompt_id for p in bench]),
                           registry, questions=load_questions(cfg["assets"]["questions"]),
                           weights=SpeechContentWeights(float(w["w_comp"]), float(w["w_acc"]),
                                                        float(w["w_hall"])),
                           max_in_flight=int(cfg["score"]["max_in_flight"]))
        save_scores(out_path, result.records, meta=manifest.run_meta(cfg.seed, cfg.hash))
        gaps_path = Path(out_path).with_suffix(".gaps.json")
        gaps_path.write_text(json.dumps({"gaps": result.gaps}, indent=2, sort_keys=True) + "\n",
                             encoding="utf-8")
    except Exception as exc:
        click.echo(f"score failed: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)
    click.echo(f"score: {len(result.records)} records, {len(result.gaps)} gaps -> {out_path}")
    if result.gaps:
        sys.exit(EXIT_PARTIAL)


@main.command()
@click.option("--scores", "scores_path", required=True, type=click.Path(exists=True))
@click.option("--judgments", "judgments_path", required=True, type=click.Path(exists=True))
@click.option("--pairs", "pairs_path", required=True, type=click.Path(exists=True),
              help="Pair-set file resolving pair ids to model/prompt sides.")
@click.option("--bench", "bench_paths", multiple=True, type=click.Path(exists=True),
              help="Benchmark manifests, for per-tier radar tables.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.pass_context
def align(ctx, scores_path, judgments_path, pairs_path, bench_paths, out_dir):
    """Compute win ratios, Pearson correlation, 2AFC accuracy and radar data."""
    cfg = _load(ctx.obj["config_path"], {})

    from avbench.alignkit import alignment_report, outcomes_from_judgments, save_report_bundle
    from avbench.curator import load_prompts
    from avbench.scorekit import load_scores

    try:
        scores = load_scores(scores_path)
        tier_of = {}
        for path in bench_paths:
            tier = "hard" if "hard" in Path(path).stem else "normal"
            for p in load_prompts(path):
                tier_of[p.prompt_id] = p.tier or tier
        outcomes = outcomes_from_judgments(
            list(manifest.read_jsonl(pairs_path)),
            list(manifest.read_jsonl(judgments_path)), scores)
        report = alignment_report(outcomes, scores, tier_of or None)
        save_report_bundle(out_dir, report)
    except Exception as exc:
        click.echo(f"align failed: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)
    click.echo(f"align: {len(outcomes)} outcomes -> {out_dir}")


@main.command()
@click.option("--pairs", "pairs_path", required=True, type=click.Path(exists=True))
@click.option("--media", "media_dir", type=click.Path(), default=None)
@click.option("--port", type=int, default=None)
@click.option("--store", "store_dir", type=click.Path(), default=None)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.pass_context
def serve(ctx, pairs_path, media_dir, port, store_dir, host):
    """Serve blinded 2AFC annotation sessions over HTTP."""
    overrides = {"serve": {}}
    if port is not None:
        overrides["serve"]["port"] = port
    if media_dir:
        overrides["serve"]["media_dir"] = media_dir
    if store_dir:
        overrides["serve"]["store_dir"] = store_dir
    cfg = _load(ctx.obj["config_path"], overrides)

    import uvicorn

    from avbench.annosvc import create_app

    try:
        app = create_app(pairs_path, media_dir=cfg["serve"]["media_dir"],
                         store_dir=cfg["serve"]["store_dir"])
    except Exception as exc:
        click.echo(f"serve failed to start: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)
    uvicorn.run(app, host=host, port=int(cfg["serve"]["port"]), log_level="info")


@main.command()
@click.option("--align-dir", type=click.Path(exists=True), default=None)
@click.option("--curate-report", type=click.Path(exists=True), default=None)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.pass_context
def report(ctx, align_dir, curate_report, out_dir):
    """Render figures (radar, correlation, composition) plus CSV tables."""
    _load(ctx.obj["config_path"], {})
    from avbench.reports import render_report

    if not align_dir and not curate_report:
        click.echo("report: provide --align-dir and/or --curate-report", err=True)
        sys.exit(EXIT_VALIDATION)
    try:
        written = render_report(align_dir, curate_report, out_dir)
    except Exception as exc:
        click.echo(f"report failed: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)
    for path in written:
        click.echo(f"report: wrote {path}")


@main.command()
@click.option("--stages", default=None,
              help="Comma-separated stage subset (default: training-data path).")
@click.option("--workdir", type=click.Path(), default=None)
@click.option("--clips", type=click.Path(), default=None, help="Input clip manifest.")
@click.option("--pool", type=click.Path(), default=None, help="Prompt pool manifest.")
@click.option("--seed", type=int, default=None)
@click.pass_context
def run(ctx, stages, workdir, clips, pool, seed):
    """Run ordered pipeline stages with manifests and checksums."""
    overrides = {"pipeline": {}}
    if clips:
        overrides["pipeline"]["clips"] = clips
    if pool:
        overrides["pipeline"]["pool"] = pool
    if seed is not None:
        overrides["seed"] = seed
    cfg = _load(ctx.obj["config_path"], overrides)

    from avbench.pipeline import run_pipeline

    stage_list = [s.strip() for s in stages.split(",")] if stages else None
    try:
        result = run_pipeline(cfg, stages=stage_list, workdir=workdir)
    except ValueError as exc:
        click.echo(f"run: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    for entry in result["stages"]:
        click.echo(f"run: {entry['name']}: {entry['status']}")
    if result["status"] != "ok":
        sys.exit(EXIT_RUNTIME)


if __name__ == "__main__":
    main()
