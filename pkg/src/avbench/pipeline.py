"""Stage orchestration: each stage reads declared input manifests, writes its
outputs plus checksums into the run manifest, and re-running with identical
inputs and seed reproduces identical checksums. A stage failure halts its
dependents; independent branches continue.
"""

import json
import logging
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

from avbench import manifest
from avbench.audio import DEFAULT_WORKING_RATE
from avbench.config import RunConfig
from avbench.corpus import (FilterPolicy, annotate_corpus, filter_corpus,
                            load_clips, save_clips)
from avbench.curator import QuotaPolicy, assemble_benchmark, load_prompts, save_benchmark
from avbench.schema import AttributeSchema, load_hard_triggers
from avbench.seeding import derive_seed

log = logging.getLogger(__name__)

STAGE_DEPS: Dict[str, tuple] = {
    "ingest": (),
    "perturb": ("ingest",),
    "mutate_vt": ("ingest",),
    "mutate_at": ("ingest",),
    "sft_export": ("mutate_vt", "mutate_at"),
    "curate": (),
    "score": ("curate",),
    "align": ("score",),
}

STAGE_ORDER = tuple(STAGE_DEPS)


class DependencyError(RuntimeError):
    pass


class StageContext:
    def __init__(self, cfg: RunConfig, workdir: Path):
        self.cfg = cfg
        self.workdir = Path(workdir)
        self.outputs: Dict[str, Dict[str, Path]] = {}

    def meta(self) -> dict:
        return manifest.run_meta(self.cfg.seed, self.cfg.hash)

    def stage_dir(self, stage: str) -> Path:
        d = self.workdir / stage
        d.mkdir(parents=True, exist_ok=True)
        return d

    def require(self, stage: str, label: str) -> Path:
        try:
            return self.outputs[stage][label]
        except KeyError:
            raise DependencyError(f"missing input: {stage}/{label}")


def _make_annotator(spec: str):
    from avbench.endpoints import HttpAnnotator, StubAnnotator
    if spec.startswith("stub:"):
        return StubAnnotator()
    return HttpAnnotator(spec)


def _make_llm(spec: str):
    from avbench.endpoints import HttpLlm, StaticLlm, WordSwapStubLlm
    if spec.startswith("stub:"):
        variant = spec[len("stub:"):] or "wordswap"
        if variant == "wordswap":
            return WordSwapStubLlm()
        if variant.startswith("static:"):
            return StaticLlm(variant[len("static:"):])
        raise ValueError(f"unknown LLM stub variant {variant!r}")
    return HttpLlm(spec)


def _perturb_ranges(cfg: RunConfig):
    from avbench.avperturb import PerturbRanges
    p = cfg["perturb"]
    return PerturbRanges(
        micro_shift_s=tuple(p["micro_shift_s"]), medium_shift_s=tuple(p["medium_shift_s"]),
        speed_factor=tuple(p["speed_factor"]), pitch_semitones=tuple(p["pitch_semitones"]),
        snr_db=tuple(p["snr_db"]), lowpass_hz=tuple(p["lowpass_hz"]),
        highpass_hz=tuple(p["highpass_hz"]))


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Stage bodies


def _stage_ingest(ctx: StageContext) -> Dict[str, Path]:
    cfg = ctx.cfg
    source = cfg["pipeline"]["clips"]
    if not source or not Path(source).is_file():
        raise DependencyError(f"pipeline.clips manifest not found: {source}")
    schema = AttributeSchema.load(cfg["assets"]["attribute_schema"])
    policy = FilterPolicy(min_s=float(cfg["ingest"]["min_s"]),
                          max_s=float(cfg["ingest"]["max_s"]),
                          min_height=int(cfg["ingest"]["min_height"]))
    records = list(filter_corpus(load_clips(source, schema), policy))
    for r in records:
        if not r.content_hash:
            r.content_hash = r.compute_content_hash()
    if cfg["ingest"]["annotate"]:
        pending = [r for r in records if not r.fully_captioned]
        if pending:
            annotator = _make_annotator(cfg["endpoints"]["annotator"])
            from avbench.assetutil import load_text
            prompt = load_text("prompts", "annotator.txt")
            annotated = {r.clip_id: r for r in annotate_corpus(
                pending, annotator, prompt,
                retry_budget=int(cfg["ingest"]["retry_budget"]),
                max_in_flight=int(cfg["ingest"]["max_in_flight"]))}
            records = [annotated.get(r.clip_id, r) for r in records]
    out = ctx.stage_dir("ingest") / "clips.jsonl"
    save_clips(out, records, meta=ctx.meta())
    return {"clips": out}


def _stage_perturb(ctx: StageContext) -> Dict[str, Path]:
    from avbench.avperturb import NoiseBank, generate_av_negatives, save_pairs
    cfg = ctx.cfg
    records = list(load_clips(ctx.require("ingest", "clips")))
    bank_path = cfg["perturb"]["noise_bank"]
    bank = NoiseBank.open(bank_path) if bank_path else None
    out_dir = ctx.stage_dir("perturb")
    pairs, report = generate_av_negatives(
        records, out_dir / "audio", seed=derive_seed(cfg.seed, "perturb"),
        strategy=cfg["perturb"]["strategy"], bank=bank, ranges=_perturb_ranges(cfg),
        working_rate=int(cfg["perturb"].get("working_rate", DEFAULT_WORKING_RATE)),
        muxer_cmd=cfg["perturb"]["muxer_cmd"])
    pairs_path = out_dir / "av_pairs.jsonl"
    save_pairs(pairs_path, pairs, meta=ctx.meta())
    report_path = out_dir / "report.json"
    _write_json(report_path, report.to_dict())
    return {"pairs": pairs_path, "report": report_path}


def _stage_mutate(ctx: StageContext, axis: str) -> Dict[str, Path]:
    from avbench.textmutate import MutationTaxonomy, build_pair_batch, save_pairs
    cfg = ctx.cfg
    records = list(load_clips(ctx.require("ingest", "clips")))
    llm = _make_llm(cfg["endpoints"]["llm"])
    taxonomy = MutationTaxonomy.load(axis, cfg["assets"][f"taxonomy_{axis.lower()}"])
    m = cfg["mutate"]
    pairs, report = build_pair_batch(
        records, axis, llm, count_per_record=int(m["per_record"]),
        seed=derive_seed(cfg.seed, "mutate", axis), taxonomy=taxonomy,
        temperature=float(m["temperature"]),
        similarity_window=tuple(m["similarity_window"]),
        vt_word_edits=tuple(m["vt_word_edits"]),
        max_in_flight=int(m["max_in_flight"]))
    out_dir = ctx.stage_dir(f"mutate_{axis.lower()}")
    pairs_path = out_dir / "pairs.jsonl"
    save_pairs(pairs_path, pairs, meta=ctx.meta())
    report_path = out_dir / "report.json"
    _write_json(report_path, report.to_dict())
    return {"pairs": pairs_path, "report": report_path}


def _stage_sft_export(ctx: StageContext) -> Dict[str, Path]:
    from avbench.scorekit import load_questions, sft_export
    from avbench.textmutate import load_pairs
    cfg = ctx.cfg
    pairs = (load_pairs(ctx.require("mutate_vt", "pairs"))
             + load_pairs(ctx.require("mutate_at", "pairs")))
    out = ctx.stage_dir("sft_export") / "sft_pairs.jsonl"
    sft_export(out, pairs, questions=load_questions(cfg["assets"]["questions"]),
               meta=ctx.meta())
    return {"sft": out}


def _stage_curate(ctx: StageContext) -> Dict[str, Path]:
    cfg = ctx.cfg
    pool_path = cfg["pipeline"]["pool"]
    if not pool_path or not Path(pool_path).is_file():
        raise DependencyError(f"pipeline.pool manifest not found: {pool_path}")
    cur = cfg["curate"]
    bench = assemble_benchmark(
        load_prompts(pool_path),
        policy_normal=QuotaPolicy(target_size=int(cur["normal_size"]), cap=float(cur["cap"])),
        policy_hard=QuotaPolicy(target_size=int(cur["hard_size"]), cap=float(cur["cap"])),
        seed=derive_seed(cfg.seed, "curate"),
        triggers=load_hard_triggers(cfg["assets"]["hard_triggers"]),
        require_verified=bool(cur["require_verified"]))
    paths = save_benchmark(ctx.stage_dir("curate"), bench, meta=ctx.meta())
    return {k: Path(v) for k, v in paths.items()}


def _media_map(media_dir: Path, prompt_ids: Sequence[str]) -> Dict[str, Dict[str, str]]:
    """Per-prompt media refs by file convention: <dir>/<prompt_id>.wav/.mp4."""
    out = {}
    for pid in prompt_ids:
        refs = {}
        wav = media_dir / f"{pid}.wav"
        mp4 = media_dir / f"{pid}.mp4"
        if wav.is_file():
            refs["audio_url"] = str(wav)
        if mp4.is_file():
            refs["video_url"] = str(mp4)
        out[pid] = refs
    return out


def _stage_score(ctx: StageContext) -> Dict[str, Path]:
    from avbench.scorekit import (SpeechContentWeights, load_questions,
                                  registry_from_config, run_suite, save_scores)
    cfg = ctx.cfg
    bench = (load_prompts(ctx.require("curate", "normal"))
             + load_prompts(ctx.require("curate", "hard")))
    models = cfg["pipeline"]["models"]
    if not models:
        raise DependencyError("pipeline.models is empty; nothing to score")
    registry = registry_from_config(cfg["score"]["registry"])
    questions = load_questions(cfg["assets"]["questions"])
    w = cfg["score"]["weights"]
    weights = SpeechContentWeights(w_comp=float(w["w_comp"]), w_acc=float(w["w_acc"]),
                                   w_hall=float(w["w_hall"]))
    out_dir = ctx.stage_dir("score")
    all_records = []
    all_gaps = []
    for model in models:
        media = _media_map(Path(model["media_dir"]), [p.prompt_id for p in bench])
        result = run_suite(model["model_id"], bench, media, registry,
                           questions=questions, weights=weights,
                           max_in_flight=int(cfg["score"]["max_in_flight"]))
        all_records.extend(result.records)
        all_gaps.extend(dict(g, model_id=model["model_id"]) for g in result.gaps)
    scores_path = out_dir / "scores.jsonl"
    save_scores(scores_path, all_records, meta=ctx.meta())
    gaps_path = out_dir / "gaps.json"
    _write_json(gaps_path, {"gaps": all_gaps})
    return {"scores": scores_path, "gaps": gaps_path}


def _stage_align(ctx: StageContext) -> Dict[str, Path]:
    from avbench.alignkit import alignment_report, outcomes_from_judgments, save_report_bundle
    from avbench.scorekit import load_scores
    cfg = ctx.cfg
    judgments_path = cfg["pipeline"]["judgments"]
    pairs_path = cfg["pipeline"].get("pairs")
    if not judgments_path or not Path(judgments_path).is_file():
        raise DependencyError(f"pipeline.judgments file not found: {judgments_path}")
    if not pairs_path or not Path(pairs_path).is_file():
        raise DependencyError(f"pipeline.pairs file not found: {pairs_path}")
    scores = load_scores(ctx.require("score", "scores"))
    tier_of = {}
    for label in ("normal", "hard"):
        for p in load_prompts(ctx.require("curate", label)):
            tier_of[p.prompt_id] = label
    outcomes = outcomes_from_judgments(
        list(manifest.read_jsonl(pairs_path)),
        list(manifest.read_jsonl(judgments_path)), scores)
    report = alignment_report(outcomes, scores, tier_of)
    paths = save_report_bundle(ctx.stage_dir("align"), report)
    return {k: Path(v) for k, v in paths.items()}


_STAGE_BODIES: Dict[str, Callable[[StageContext], Dict[str, Path]]] = {
    "ingest": _stage_ingest,
    "perturb": _stage_perturb,
    "mutate_vt": lambda ctx: _stage_mutate(ctx, "VT"),
    "mutate_at": lambda ctx: _stage_mutate(ctx, "AT"),
    "sft_export": _stage_sft_export,
    "curate": _stage_curate,
    "score": _stage_score,
    "align": _stage_align,
}


def run_pipeline(cfg: RunConfig, stages: Optional[Sequence[str]] = None,
                 workdir: Optional[str] = None) -> dict:
    """Execute stages in declaration order, recording per-stage outputs and
    checksums in the run manifest (written to <workdir>/run_manifest.json)."""
    requested = list(stages) if stages else ["ingest", "perturb", "mutate_vt",
                                             "mutate_at", "sft_export"]
    unknown = [s for s in requested if s not in STAGE_DEPS]
    if unknown:
        raise ValueError(f"unknown stages: {unknown}")
    ordered = [s for s in STAGE_ORDER if s in requested]

    ctx = StageContext(cfg, Path(workdir or cfg["pipeline"]["workdir"]))
    ctx.workdir.mkdir(parents=True, exist_ok=True)

    stage_records: List[dict] = []
    failed: set = set()
    for name in ordered:
        broken = [d for d in STAGE_DEPS[name] if d in failed]
        if broken:
            stage_records.append({"name": name, "status": "skipped_dependency",
                                  "blocked_by": broken, "outputs": {}})
            failed.add(name)
            continue
        try:
            outputs = _STAGE_BODIES[name](ctx)
        except Exception as exc:
            log.error("stage %s failed: %s", name, exc)
            stage_records.append({"name": name, "status": "failed",
                                  "error": str(exc), "outputs": {}})
            failed.add(name)
            continue
        ctx.outputs[name] = outputs
        stage_records.append({
            "name": name, "status": "ok",
            "outputs": {label: {"path": str(path.relative_to(ctx.workdir)),
                                "sha256": manifest.file_sha256(path)}
                        for label, path in sorted(outputs.items())},
        })

    run = {"tool_version": manifest.run_meta(cfg.seed, cfg.hash)["tool_version"],
           "config_hash": cfg.hash, "seed": cfg.seed, "stages": stage_records,
           "status": "failed" if failed else "ok"}
    _write_json(ctx.workdir / "run_manifest.json", run)
    return run
