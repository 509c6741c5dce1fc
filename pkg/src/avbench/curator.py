"""Benchmark test-set curation: quota-capped greedy sampling over attributes
and Normal/Hard tier stratification."""

import logging
import math
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from avbench import manifest
from avbench.schema import load_hard_triggers

log = logging.getLogger(__name__)

DEFAULT_NORMAL_SIZE = 350
DEFAULT_HARD_SIZE = 120
DEFAULT_CAP = 0.5


class TierClassificationError(ValueError):
    """An entry is missing an attribute key referenced by a tier trigger."""


@dataclass
class PromptEntry:
    prompt_id: str
    text: str
    attributes: Dict[str, str] = field(default_factory=dict)
    tier: str = ""  # normal | hard | "" before classification
    verified: bool = False
    rewritten: bool = False
    source_hash: str = ""

    def to_dict(self) -> dict:
        return {"prompt_id": self.prompt_id, "text": self.text,
                "attributes": self.attributes, "tier": self.tier,
                "verified": self.verified, "rewritten": self.rewritten,
                "source_hash": self.source_hash}

    @classmethod
    def from_dict(cls, d: dict) -> "PromptEntry":
        return cls(prompt_id=d["prompt_id"], text=d.get("text", ""),
                   attributes=dict(d.get("attributes", {})), tier=d.get("tier", ""),
                   verified=bool(d.get("verified", False)),
                   rewritten=bool(d.get("rewritten", False)),
                   source_hash=d.get("source_hash", ""))


@dataclass(frozen=True)
class QuotaPolicy:
    """No attribute value may exceed floor(cap * target_size) occurrences in
    the sampled subset; the denominator is the target size, not the running
    size, so the cap binds the final composition."""

    target_size: int
    cap: float = DEFAULT_CAP
    attribute_keys: Optional[Tuple[str, ...]] = None  # None = all keys present

    def __post_init__(self):
        if not 0.0 < self.cap <= 1.0:
            raise ValueError(f"QuotaPolicy.cap must be in (0, 1], got {self.cap}")
        if self.target_size < 1:
            raise ValueError("QuotaPolicy.target_size must be >= 1")

    @property
    def per_value_limit(self) -> int:
        return math.floor(self.cap * self.target_size)


def rarity_scores(pool: Sequence[PromptEntry],
                  keys: Optional[Sequence[str]] = None) -> Dict[str, float]:
    """Rarity = sum over attribute keys of 1 / pool-frequency of the entry's
    value; rarer combinations sort first in the greedy pass."""
    freq: Counter = Counter()
    for e in pool:
        for k, v in e.attributes.items():
            if keys is None or k in keys:
                freq[(k, v)] += 1
    scores = {}
    for e in pool:
        scores[e.prompt_id] = sum(1.0 / freq[(k, v)] for k, v in e.attributes.items()
                                  if keys is None or k in keys)
    return scores


def quota_greedy_sample(pool: Sequence[PromptEntry], policy: QuotaPolicy,
                        seed: int = 0) -> Tuple[List[PromptEntry], dict]:
    """Greedy selection by descending rarity under per-value quotas.

    Ties break by prompt_id; the seed only matters through the initial pool
    shuffle (it decides order among entries with identical rarity AND id,
    which cannot happen with unique ids, so output is id-stable).
    Returns (selection, shortfall report).
    """
    entries = list(pool)
    random.Random(seed).shuffle(entries)
    keys = policy.attribute_keys
    scores = rarity_scores(entries, keys)
    entries.sort(key=lambda e: (-scores[e.prompt_id], e.prompt_id))

    limit = policy.per_value_limit
    counts: Counter = Counter()
    selected: List[PromptEntry] = []
    for entry in entries:
        if len(selected) >= policy.target_size:
            break
        relevant = [(k, v) for k, v in entry.attributes.items() if keys is None or k in keys]
        if any(counts[(k, v)] + 1 > limit for k, v in relevant):
            continue
        for kv in relevant:
            counts[kv] += 1
        selected.append(entry)

    report = {"requested": policy.target_size, "selected": len(selected),
              "shortfall": max(0, policy.target_size - len(selected)),
              "per_value_limit": limit, "pool_size": len(pool)}
    if report["shortfall"]:
        log.info("quota sampling shortfall: %d of %d", report["shortfall"], policy.target_size)
    return selected, report


def check_quota(selection: Sequence[PromptEntry], policy: QuotaPolicy) -> List[str]:
    """Independent re-validation of an emitted subset; returns violations."""
    counts: Counter = Counter()
    for e in selection:
        for k, v in e.attributes.items():
            if policy.attribute_keys is None or k in policy.attribute_keys:
                counts[(k, v)] += 1
    limit = policy.per_value_limit
    return [f"{k}={v}: {n} > {limit}" for (k, v), n in sorted(counts.items()) if n > limit]


def classify_tier(entry: PromptEntry,
                  triggers: Optional[Dict[str, Tuple[str, ...]]] = None) -> str:
    """hard iff any trigger predicate fires; a missing attribute key that a
    trigger references is a classification error naming the key."""
    if triggers is None:
        triggers = load_hard_triggers()
    if not entry.attributes:
        raise TierClassificationError(f"{entry.prompt_id}: attributes not populated")
    hard = False
    for key, values in triggers.items():
        if key not in entry.attributes:
            raise TierClassificationError(
                f"{entry.prompt_id}: missing attribute {key!r} required by tier trigger")
        if entry.attributes[key] in values:
            hard = True
    return "hard" if hard else "normal"


def attribute_distribution(entries: Sequence[PromptEntry]) -> Dict[str, Dict[str, int]]:
    """Per-attribute value counts, the data behind the composition charts."""
    out: Dict[str, Dict[str, int]] = {}
    for e in entries:
        for k, v in e.attributes.items():
            out.setdefault(k, {})
            out[k][v] = out[k].get(v, 0) + 1
    return {k: dict(sorted(v.items())) for k, v in sorted(out.items())}


@dataclass
class BenchmarkSet:
    normal: List[PromptEntry]
    hard: List[PromptEntry]
    report: dict


def assemble_benchmark(pool: Iterable[PromptEntry],
                       policy_normal: Optional[QuotaPolicy] = None,
                       policy_hard: Optional[QuotaPolicy] = None,
                       seed: int = 0,
                       triggers: Optional[Dict[str, Tuple[str, ...]]] = None,
                       require_verified: bool = True) -> BenchmarkSet:
    """Classify, then quota-sample each tier. Shortfalls are reported, never
    fatal; unverified entries are excluded by default."""
    policy_normal = policy_normal or QuotaPolicy(target_size=DEFAULT_NORMAL_SIZE)
    policy_hard = policy_hard or QuotaPolicy(target_size=DEFAULT_HARD_SIZE)
    if triggers is None:
        triggers = load_hard_triggers()

    tiers: Dict[str, List[PromptEntry]] = {"normal": [], "hard": []}
    excluded = {"unverified": 0, "classification_errors": []}
    for entry in pool:
        if require_verified and not entry.verified:
            excluded["unverified"] += 1
            continue
        try:
            tier = classify_tier(entry, triggers)
        except TierClassificationError as exc:
            excluded["classification_errors"].append(str(exc))
            continue
        entry.tier = tier
        tiers[tier].append(entry)

    normal, normal_report = quota_greedy_sample(tiers["normal"], policy_normal, seed)
    hard, hard_report = quota_greedy_sample(tiers["hard"], policy_hard, seed)

    overlap = {e.prompt_id for e in normal} & {e.prompt_id for e in hard}
    if overlap:  # tiers partition the pool, so this is unreachable by construction
        raise RuntimeError(f"cross-tier prompt ids: {sorted(overlap)}")

    report = {
        "normal": normal_report,
        "hard": hard_report,
        "excluded": excluded,
        "distribution": {"normal": attribute_distribution(normal),
                         "hard": attribute_distribution(hard)},
    }
    return BenchmarkSet(normal=normal, hard=hard, report=report)


def save_benchmark(out_dir, bench: BenchmarkSet, meta: Optional[dict] = None) -> dict:
    """Write per-tier manifests plus the sidecar distribution report."""
    import json
    from pathlib import Path

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"normal": out_dir / "benchmark_normal.jsonl",
             "hard": out_dir / "benchmark_hard.jsonl",
             "report": out_dir / "distribution_report.json"}
    manifest.write_jsonl(paths["normal"], (e.to_dict() for e in bench.normal), meta=meta)
    manifest.write_jsonl(paths["hard"], (e.to_dict() for e in bench.hard), meta=meta)
    paths["report"].write_text(json.dumps(bench.report, indent=2, sort_keys=True) + "\n",
                               encoding="utf-8")
    return {k: str(v) for k, v in paths.items()}


def load_prompts(path) -> List[PromptEntry]:
    return [PromptEntry.from_dict(d) for d in manifest.read_jsonl(path)]


def save_prompts(path, entries: Iterable[PromptEntry], meta: Optional[dict] = None) -> int:
    return manifest.write_jsonl(path, (e.to_dict() for e in entries), meta=meta)
