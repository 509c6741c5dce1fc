import json
from pathlib import Path

import pytest

from avbench import manifest
from avbench.config import default_config, load_config, validate_config
from avbench.corpus import save_clips
from avbench.pipeline import run_pipeline


# ---------------------------------------------------------------------------
# config layering and validation


def test_defaults_are_valid():
    cfg, errors = load_config(None, env={})
    assert errors == []
    assert cfg.seed == 0


def test_minimal_file_overrides(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("seed: 99\ningest:\n  min_s: 5\n", encoding="utf-8")
    cfg, errors = load_config(str(path), env={})
    assert errors == []
    assert cfg.seed == 99
    assert cfg["ingest"]["min_s"] == 5
    assert cfg["ingest"]["max_s"] == 12.0  # untouched default


def test_cap_violation_names_quota_policy(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("curate:\n  cap: 1.5\n", encoding="utf-8")
    cfg, errors = load_config(str(path), env={})
    assert cfg is None
    assert any("QuotaPolicy.cap" in e for e in errors)


def test_multiple_violations_all_reported(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("curate:\n  cap: 1.5\ningest:\n  min_s: 20\n  max_s: 10\n",
                    encoding="utf-8")
    cfg, errors = load_config(str(path), env={})
    assert cfg is None
    assert len(errors) >= 2
    assert any("cap" in e for e in errors)
    assert any("min_s" in e for e in errors)


def test_unknown_keys_listed(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("nonsense: 1\ningest:\n  bogus_flag: true\n", encoding="utf-8")
    cfg, errors = load_config(str(path), env={})
    assert cfg is None
    assert any("nonsense" in e for e in errors)
    assert any("ingest.bogus_flag" in e for e in errors)


def test_env_overrides_file_and_flags_override_env(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("seed: 1\ncurate:\n  cap: 0.4\n", encoding="utf-8")
    env = {"AVBENCH_SEED": "2", "AVBENCH_CURATE__CAP": "0.6"}
    cfg, errors = load_config(str(path), env=env)
    assert errors == []
    assert cfg.seed == 2
    assert cfg["curate"]["cap"] == 0.6
    cfg, errors = load_config(str(path), env=env, overrides={"seed": 3})
    assert cfg.seed == 3


def test_registry_subtree_is_open_but_validated(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("score:\n  registry:\n    NotADim:\n      backend: stub\n",
                    encoding="utf-8")
    cfg, errors = load_config(str(path), env={})
    assert cfg is None
    assert any("NotADim" in e for e in errors)


def test_missing_asset_paths_reported(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("assets:\n  hard_triggers: /no/such/file.json\n", encoding="utf-8")
    cfg, errors = load_config(str(path), env={})
    assert cfg is None
    assert any("hard_triggers" in e for e in errors)


def test_validate_config_missing_file():
    cfg, errors = validate_config("/no/such/config.yaml")
    assert cfg is None
    assert errors


def test_config_hash_stable():
    a, _ = load_config(None, env={})
    b, _ = load_config(None, env={})
    assert a.hash == b.hash


# ---------------------------------------------------------------------------
# pipeline


@pytest.fixture
def fixture_config(tmp_path, annotated_corpus):
    clips_path = tmp_path / "clips.jsonl"
    # strip captions: the pipeline annotates via the stub endpoint
    for r in annotated_corpus:
        r.captions = {"visual": "", "motion": "", "acoustic": ""}
    save_clips(clips_path, annotated_corpus)
    overrides = {"pipeline": {"clips": str(clips_path),
                              "workdir": str(tmp_path / "run")},
                 "seed": 1234}
    cfg, errors = load_config(None, env={}, overrides=overrides)
    assert errors == []
    return cfg, tmp_path


def run_checksums(result):
    return {f"{s['name']}/{label}": entry["sha256"]
            for s in result["stages"] for label, entry in s["outputs"].items()}


def test_pipeline_training_path(fixture_config):
    cfg, tmp_path = fixture_config
    result = run_pipeline(cfg, workdir=tmp_path / "run")
    statuses = {s["name"]: s["status"] for s in result["stages"]}
    assert statuses == {"ingest": "ok", "perturb": "ok", "mutate_vt": "ok",
                        "mutate_at": "ok", "sft_export": "ok"}
    manifest_path = tmp_path / "run" / "run_manifest.json"
    assert manifest_path.is_file()
    saved = json.loads(manifest_path.read_text())
    assert saved["seed"] == 1234
    assert saved["config_hash"] == cfg.hash
    # every output manifest embeds tool version, config hash and seed
    clips_meta = manifest.read_meta(tmp_path / "run" / "ingest" / "clips.jsonl")
    assert clips_meta == {"tool_version": saved["tool_version"],
                          "config_hash": cfg.hash, "seed": 1234}


def test_pipeline_rerun_reproduces_checksums(fixture_config):
    cfg, tmp_path = fixture_config
    first = run_checksums(run_pipeline(cfg, workdir=tmp_path / "run"))
    second = run_checksums(run_pipeline(cfg, workdir=tmp_path / "run"))
    assert first == second
    assert first  # non-empty


def test_pipeline_missing_input_is_dependency_error(tmp_path):
    cfg, errors = load_config(None, env={}, overrides={
        "pipeline": {"clips": str(tmp_path / "absent.jsonl")}})
    assert errors == []
    result = run_pipeline(cfg, stages=["ingest", "perturb"], workdir=tmp_path / "run")
    statuses = {s["name"]: s["status"] for s in result["stages"]}
    assert statuses["ingest"] == "failed"
    assert statuses["perturb"] == "skipped_dependency"
    assert result["status"] == "failed"


def test_pipeline_independent_branch_continues(tmp_path, annotated_corpus):
    from avbench.curator import save_prompts
    from test_curator import make_pool

    from avbench.schema import AttributeSchema

    pool = make_pool(AttributeSchema.load(), 40, 20)
    pool_path = tmp_path / "pool.jsonl"
    save_prompts(pool_path, pool)
    cfg, errors = load_config(None, env={}, overrides={
        "pipeline": {"clips": str(tmp_path / "absent.jsonl"), "pool": str(pool_path)},
        "curate": {"normal_size": 10, "hard_size": 5}})
    assert errors == []
    result = run_pipeline(cfg, stages=["ingest", "perturb", "curate"],
                          workdir=tmp_path / "run")
    statuses = {s["name"]: s["status"] for s in result["stages"]}
    assert statuses["ingest"] == "failed"
    assert statuses["perturb"] == "skipped_dependency"
    assert statuses["curate"] == "ok"  # independent branch unaffected


def test_pipeline_unknown_stage_rejected(fixture_config):
    cfg, tmp_path = fixture_config
    with pytest.raises(ValueError):
        run_pipeline(cfg, stages=["ingest", "zap"], workdir=tmp_path / "run")
