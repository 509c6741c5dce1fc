"""Layered run configuration: defaults < file < environment < flags.

The file is YAML; environment overrides use AVBENCH_<SECTION>__<KEY> with
YAML-parsed values; CLI flags are applied last. Validation returns the
complete violation list, never failing fast.
"""

import copy
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import yaml

from avbench import manifest
from avbench.avperturb import STRATEGIES
from avbench.scorekit import ALL_DIMENSIONS

ENV_PREFIX = "AVBENCH_"


def default_config() -> dict:
    return {
        "seed": 0,
        "assets": {
            "attribute_schema": None,
            "hard_triggers": None,
            "taxonomy_vt": None,
            "taxonomy_at": None,
            "questions": None,
        },
        "endpoints": {
            "annotator": "stub:",
            "llm": "stub:wordswap",
            "evaluator": "stub:",
        },
        "ingest": {
            "min_s": 8.0, "max_s": 12.0, "min_height": 720,
            "annotate": True, "retry_budget": 3, "max_in_flight": 4,
        },
        "perturb": {
            "strategy": "balanced", "working_rate": 16000,
            "noise_bank": None, "muxer_cmd": None,
            "micro_shift_s": [0.2, 1.0], "medium_shift_s": [1.0, 3.0],
            "speed_factor": [0.8, 1.2], "pitch_semitones": [2.0, 3.0],
            "snr_db": [5.0, 20.0],
            "lowpass_hz": [1000.0, 4000.0], "highpass_hz": [300.0, 1000.0],
        },
        "mutate": {
            "per_record": 1, "temperature": 0.7, "max_attempts": 3,
            "similarity_window": [0.70, 0.995], "vt_word_edits": [1, 3],
            "max_in_flight": 1,
        },
        "curate": {
            "normal_size": 350, "hard_size": 120, "cap": 0.5,
            "require_verified": True,
        },
        "score": {
            "registry": {dim: {"backend": "stub"} for dim in ALL_DIMENSIONS},
            "weights": {"w_comp": 0.5, "w_acc": 0.5, "w_hall": 0.5},
            "max_in_flight": 1,
        },
        "align": {"epsilon": 0.0},
        "serve": {"port": 8321, "media_dir": None, "store_dir": None},
        "pipeline": {
            "workdir": "runs", "clips": None, "pool": None,
            "media": None, "judgments": None, "models": [],
        },
    }


@dataclass
class RunConfig:
    data: dict
    path: Optional[str] = None

    def __getitem__(self, key):
        return self.data[key]

    def get(self, key, default=None):
        return self.data.get(key, default)

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def hash(self) -> str:
        return manifest.config_hash(self.data)


def _deep_merge(base: dict, override: dict, path: str, errors: List[str],
                open_subtrees: Tuple[str, ...]) -> None:
    """Merge override into base in place, flagging keys absent from the
    defaults (except under open subtrees like the metric registry)."""
    for key, value in override.items():
        here = f"{path}.{key}" if path else str(key)
        if key not in base:
            if any(path == p or path.startswith(p + ".") for p in open_subtrees):
                base[key] = value
                continue
            errors.append(f"unknown config key: {here}")
            continue
        if isinstance(base[key], dict) and isinstance(value, dict):
            _deep_merge(base[key], value, here, errors, open_subtrees)
        else:
            base[key] = value


_OPEN_SUBTREES = ("score.registry",)


def _env_overrides(env: Dict[str, str]) -> dict:
    out: dict = {}
    for name, raw in env.items():
        if not name.startswith(ENV_PREFIX):
            continue
        trail = name[len(ENV_PREFIX):].lower()
        parts = trail.split("__")
        node = out
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = yaml.safe_load(raw)
    return out


def _validate_ranges(cfg: dict, errors: List[str]) -> None:
    ing = cfg["ingest"]
    if not ing["min_s"] < ing["max_s"]:
        errors.append("ingest.min_s must be < ingest.max_s")
    if ing["min_height"] <= 0:
        errors.append("ingest.min_height must be > 0")

    per = cfg["perturb"]
    for key in ("micro_shift_s", "medium_shift_s", "speed_factor",
                "pitch_semitones", "snr_db", "lowpass_hz", "highpass_hz"):
        pair = per.get(key)
        if (not isinstance(pair, (list, tuple)) or len(pair) != 2
                or not all(isinstance(v, (int, float)) for v in pair) or not pair[0] <= pair[1]):
            errors.append(f"perturb.{key} must be a [low, high] pair with low <= high")
    if per.get("strategy") not in ("balanced",) + STRATEGIES:
        errors.append(f"perturb.strategy {per.get('strategy')!r} is not a known strategy")
    if per.get("working_rate", 0) <= 0:
        errors.append("perturb.working_rate must be > 0")

    mut = cfg["mutate"]
    window = mut.get("similarity_window")
    if (not isinstance(window, (list, tuple)) or len(window) != 2
            or not 0.0 <= float(window[0]) < float(window[1]) <= 1.0):
        errors.append("mutate.similarity_window must be [low, high] within [0, 1]")
    if int(mut.get("per_record", 0)) < 1:
        errors.append("mutate.per_record must be >= 1")
    if int(mut.get("max_attempts", 0)) < 1:
        errors.append("mutate.max_attempts must be >= 1")

    cur = cfg["curate"]
    if not 0.0 < float(cur.get("cap", 0)) <= 1.0:
        errors.append(f"QuotaPolicy.cap out of range (0, 1]: curate.cap = {cur.get('cap')}")
    for key in ("normal_size", "hard_size"):
        if int(cur.get(key, 0)) < 1:
            errors.append(f"curate.{key} must be >= 1")

    w = cfg["score"]["weights"]
    if min(float(w["w_comp"]), float(w["w_acc"]), float(w["w_hall"])) < 0:
        errors.append("score.weights must be non-negative")
    if abs(float(w["w_comp"]) + float(w["w_acc"]) - 1.0) > 1e-9:
        errors.append("score.weights w_comp + w_acc must equal 1")
    for dim, spec in cfg["score"]["registry"].items():
        if dim not in ALL_DIMENSIONS:
            errors.append(f"score.registry references unknown dimension {dim!r}")
        elif not isinstance(spec, dict) or spec.get("backend") not in ("stub", "http"):
            errors.append(f"score.registry.{dim}.backend must be stub or http")
        elif spec.get("backend") == "http" and not spec.get("url"):
            errors.append(f"score.registry.{dim} needs a url for the http backend")

    port = cfg["serve"]["port"]
    if not isinstance(port, int) or not 1 <= port <= 65535:
        errors.append("serve.port must be an integer in [1, 65535]")


def _validate_assets(cfg: dict, errors: List[str]) -> None:
    for key, path in cfg["assets"].items():
        if path is not None and not Path(path).is_file():
            errors.append(f"assets.{key} not found: {path}")
    bank = cfg["perturb"].get("noise_bank")
    if bank is not None:
        if not Path(bank).is_dir():
            errors.append(f"perturb.noise_bank is not a directory: {bank}")
        elif not (Path(bank) / "tags.json").is_file():
            errors.append(f"perturb.noise_bank missing tags.json sidecar: {bank}")
    for key in ("annotator", "llm", "evaluator"):
        value = cfg["endpoints"].get(key) or ""
        if not (value.startswith("stub:") or value.startswith("http://")
                or value.startswith("https://")):
            errors.append(f"endpoints.{key} must be stub:... or an http(s) URL")


def load_config(path: Optional[str] = None, env: Optional[Dict[str, str]] = None,
                overrides: Optional[dict] = None) -> Tuple[Optional[RunConfig], List[str]]:
    """Resolve the layered config. Returns (config, errors); config is None
    when any violation is found, and the error list is complete."""
    errors: List[str] = []
    cfg = default_config()

    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except FileNotFoundError:
            return None, [f"config file not found: {path}"]
        except yaml.YAMLError as exc:
            return None, [f"config file is not valid YAML: {exc}"]
        if not isinstance(loaded, dict):
            return None, ["config file must contain a mapping"]
        _deep_merge(cfg, loaded, "", errors, _OPEN_SUBTREES)

    env_layer = _env_overrides(env if env is not None else dict(os.environ))
    _deep_merge(cfg, env_layer, "", errors, _OPEN_SUBTREES)

    if overrides:
        _deep_merge(cfg, copy.deepcopy(overrides), "", errors, _OPEN_SUBTREES)

    _validate_ranges(cfg, errors)
    _validate_assets(cfg, errors)

    if errors:
        return None, sorted(set(errors))
    return RunConfig(data=cfg, path=path), []


def validate_config(path: Optional[str]) -> Tuple[Optional[RunConfig], List[str]]:
    return load_config(path)
