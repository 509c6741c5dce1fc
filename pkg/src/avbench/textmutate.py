"""Caption mutation for audio-text / video-text hard negatives.

An LLM proposes a minimally edited caption along a scheduled taxonomy
dimension; an algorithmic gate (character-level similarity window, a word
edit bound for video-text, structural-marker preservation for audio-text)
accepts or rejects, regenerating up to three times.
"""

import difflib
import json
import logging
import re
import string
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from avbench import assetutil, manifest
from avbench.corpus import ClipRecord
from avbench.endpoints import TransportError
from avbench.seeding import derive_seed

log = logging.getLogger(__name__)

SIMILARITY_WINDOW = (0.70, 0.995)
VT_WORD_EDIT_BOUNDS = (1, 3)
MAX_ATTEMPTS = 3

STATUS_ACCEPTED = "accepted"
STATUS_REJECTED_SIMILARITY = "rejected_similarity"
STATUS_REJECTED_EDITS = "rejected_edits"
STATUS_EXHAUSTED = "exhausted"


class TaxonomyError(ValueError):
    pass


@dataclass(frozen=True)
class Dimension:
    key: str
    category: str
    focus: str
    description: str


@dataclass(frozen=True)
class MutationTaxonomy:
    axis: str  # "AT" | "VT"
    dimensions: Tuple[Dimension, ...]

    @classmethod
    def load(cls, axis: str, path: Optional[str] = None) -> "MutationTaxonomy":
        axis = axis.upper()
        if axis not in ("AT", "VT"):
            raise TaxonomyError(f"axis must be AT or VT, got {axis!r}")
        if path is None:
            raw = assetutil.load_json(f"taxonomy_{axis.lower()}.json")
        else:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        dims = tuple(Dimension(**d) for d in raw["dimensions"])
        if len({d.key for d in dims}) != len(dims):
            raise TaxonomyError("taxonomy contains duplicate dimension keys")
        return cls(axis=axis, dimensions=dims)

    def __len__(self) -> int:
        return len(self.dimensions)

    @property
    def keys(self) -> Tuple[str, ...]:
        return tuple(d.key for d in self.dimensions)

    def get(self, key: str) -> Dimension:
        for d in self.dimensions:
            if d.key == key:
                return d
        raise TaxonomyError(f"dimension {key!r} not in {self.axis} taxonomy")


def schedule_dimensions(sample_index: int, taxonomy: MutationTaxonomy) -> List[str]:
    """Three distinct dimensions for a sample, rotating round-robin so every
    dimension recurs within ceil(len/3) consecutive samples."""
    n = len(taxonomy)
    if n < 3:
        raise TaxonomyError(f"taxonomy needs >= 3 dimensions, has {n}")
    if sample_index < 0:
        raise ValueError("sample_index must be non-negative")
    start = (3 * sample_index) % n
    return [taxonomy.keys[(start + j) % n] for j in range(3)]


def similarity_ratio(a: str, b: str) -> float:
    """Character-level similarity 2*M / (len(a)+len(b)), where M counts
    characters matched by recursive longest-common-block decomposition.

    Block-selection ties break to the earliest block in `a` (then in `b`).
    Two empty strings score 1.0.
    """
    return difflib.SequenceMatcher(None, a, b, autojunk=False).ratio()


_TOKEN_PUNCT = string.punctuation + "‘’“”…"


def _word_tokens(text: str) -> List[str]:
    """Whitespace tokens with edge punctuation stripped; punctuation-only
    tokens vanish, so punctuation-only changes count as zero edits."""
    out = []
    for tok in text.split():
        tok = tok.strip(_TOKEN_PUNCT)
        if tok:
            out.append(tok)
    return out


def word_edit_count(a: str, b: str) -> int:
    """Minimal token-level edit script length (substitution = 1 edit)."""
    ta, tb = _word_tokens(a), _word_tokens(b)
    prev = list(range(len(tb) + 1))
    for i, wa in enumerate(ta, start=1):
        cur = [i] + [0] * len(tb)
        for j, wb in enumerate(tb, start=1):
            cost = 0 if wa == wb else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
        prev = cur
    return prev[-1]


_MARKER_LINE = re.compile(r"^\s*(\[[^\]]+\]|[^\s:][^:]{0,59}:)\s*$")


def structural_marker_lines(text: str) -> List[str]:
    """Section-label lines: bracketed headers or short `Label:` lines."""
    return [line.strip() for line in text.split("\n") if _MARKER_LINE.match(line)]


@dataclass
class MutationResult:
    original: str
    mutated: str
    dimension: str
    similarity: float
    word_edits: int
    attempts: int
    status: str
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return {"original": self.original, "mutated": self.mutated,
                "dimension": self.dimension, "similarity": self.similarity,
                "word_edits": self.word_edits, "attempts": self.attempts,
                "status": self.status, "error": self.error}


def gate_candidate(original: str, candidate: str, axis: str,
                   similarity_window: Tuple[float, float] = SIMILARITY_WINDOW,
                   vt_word_edits: Tuple[int, int] = VT_WORD_EDIT_BOUNDS) -> Tuple[str, float, int]:
    """Classify one candidate; returns (status, similarity, word_edits)."""
    sim = similarity_ratio(original, candidate)
    edits = word_edit_count(original, candidate)
    lo, hi = similarity_window
    if not lo <= sim <= hi:
        return STATUS_REJECTED_SIMILARITY, sim, edits
    if axis == "VT":
        e_lo, e_hi = vt_word_edits
        if not e_lo <= edits <= e_hi:
            return STATUS_REJECTED_EDITS, sim, edits
    else:  # AT: structural isolation instead of a word-edit bound
        if Counter(structural_marker_lines(original)) != Counter(structural_marker_lines(candidate)):
            return STATUS_REJECTED_EDITS, sim, edits
    return STATUS_ACCEPTED, sim, edits


def build_prompt(original: str, dimension: Dimension, axis: str) -> str:
    template = assetutil.load_text("prompts", f"mutate_{axis.lower()}.txt")
    return template.format(original=original, dimension=dimension.focus,
                           description=dimension.description)


def mutate_caption(original: str, dimension_key: str, axis: str, llm, seed: int,
                   taxonomy: Optional[MutationTaxonomy] = None,
                   temperature: float = 0.7,
                   similarity_window: Tuple[float, float] = SIMILARITY_WINDOW,
                   vt_word_edits: Tuple[int, int] = VT_WORD_EDIT_BOUNDS,
                   max_attempts: int = MAX_ATTEMPTS) -> MutationResult:
    """Generate a gated mutation, regenerating up to max_attempts times.

    Never raises past the batch loop: transport failures and persistent gate
    rejections both end in status "exhausted" (error attached for the former).
    """
    if not original.strip():
        raise ValueError("original caption must be non-empty")
    axis = axis.upper()
    taxonomy = taxonomy or MutationTaxonomy.load(axis)
    dimension = taxonomy.get(dimension_key)
    prompt = build_prompt(original, dimension, axis)

    last = MutationResult(original=original, mutated="", dimension=dimension_key,
                          similarity=0.0, word_edits=0, attempts=0, status=STATUS_EXHAUSTED)
    for attempt in range(1, max_attempts + 1):
        try:
            candidate = llm.complete(prompt, temperature=temperature,
                                     seed=derive_seed(seed, "attempt", attempt))
        except TransportError as exc:
            last = MutationResult(original=original, mutated="", dimension=dimension_key,
                                  similarity=0.0, word_edits=0, attempts=attempt,
                                  status=STATUS_EXHAUSTED, error=str(exc))
            continue
        status, sim, edits = gate_candidate(original, candidate, axis,
                                            similarity_window, vt_word_edits)
        last = MutationResult(original=original, mutated=candidate, dimension=dimension_key,
                              similarity=sim, word_edits=edits, attempts=attempt, status=status)
        if status == STATUS_ACCEPTED:
            return last

    # budget exhausted; keep the last rejection reason in the error field
    if last.status != STATUS_EXHAUSTED:
        last.error = last.status
        last.status = STATUS_EXHAUSTED
    return last


@dataclass
class TrainingPair:
    pair_id: str
    axis: str
    clip_id: str
    caption: str
    label: str  # positive | negative
    dimension: Optional[str] = None
    similarity: Optional[float] = None
    word_edits: Optional[int] = None
    attempts: Optional[int] = None

    def to_dict(self) -> dict:
        return {"pair_id": self.pair_id, "axis": self.axis, "clip_id": self.clip_id,
                "caption": self.caption, "label": self.label, "dimension": self.dimension,
                "similarity": self.similarity, "word_edits": self.word_edits,
                "attempts": self.attempts}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingPair":
        return cls(**{k: d.get(k) for k in ("pair_id", "axis", "clip_id", "caption",
                                            "label", "dimension", "similarity",
                                            "word_edits", "attempts")})


def axis_caption(record: ClipRecord, axis: str) -> str:
    """Ground-truth caption per axis: acoustic for AT, visual+motion for VT."""
    if axis == "AT":
        return record.captions.get("acoustic", "")
    return " ".join(filter(None, (record.captions.get("visual", ""),
                                  record.captions.get("motion", "")))).strip()


@dataclass
class MutationBatchReport:
    records_in: int = 0
    records_skipped: int = 0
    positives: int = 0
    negatives: int = 0
    exhausted: int = 0
    dimension_counts: Dict[str, int] = field(default_factory=dict)
    skips: List[dict] = field(default_factory=list)

    @property
    def label_counts(self) -> Dict[str, int]:
        return {"positive": self.positives, "negative": self.negatives}

    def to_dict(self) -> dict:
        return {"records_in": self.records_in, "records_skipped": self.records_skipped,
                "positives": self.positives, "negatives": self.negatives,
                "exhausted": self.exhausted, "dimension_counts": self.dimension_counts,
                "label_counts": self.label_counts, "skips": self.skips}


def build_pair_batch(records: Iterable[ClipRecord], axis: str, llm,
                     count_per_record: int = 1, seed: int = 0,
                     taxonomy: Optional[MutationTaxonomy] = None,
                     temperature: float = 0.7,
                     similarity_window: Tuple[float, float] = SIMILARITY_WINDOW,
                     vt_word_edits: Tuple[int, int] = VT_WORD_EDIT_BOUNDS,
                     max_in_flight: int = 1) -> Tuple[List[TrainingPair], MutationBatchReport]:
    """Emit one positive plus up to count_per_record accepted negatives per
    record. Exhausted mutations are logged and skipped; balance is reported,
    never assumed.
    """
    if count_per_record < 1:
        raise ValueError("count_per_record must be >= 1")
    axis = axis.upper()
    taxonomy = taxonomy or MutationTaxonomy.load(axis)
    report = MutationBatchReport()
    pairs: List[TrainingPair] = []

    jobs = []  # (record, caption, [dimension keys])
    sample_index = 0
    for record in records:
        report.records_in += 1
        caption = axis_caption(record, axis)
        if not record.fully_captioned or not caption.strip():
            report.records_skipped += 1
            report.skips.append({"clip_id": record.clip_id, "reason": "missing captions"})
            continue
        dims: List[str] = []
        while len(dims) < count_per_record:
            dims.extend(schedule_dimensions(sample_index, taxonomy))
            sample_index += 1
        jobs.append((record, caption, dims[:count_per_record]))

    def run_job(job):
        record, caption, dims = job
        results = []
        for j, dim in enumerate(dims):
            results.append(mutate_caption(
                caption, dim, axis, llm,
                seed=derive_seed(seed, "mutate", record.clip_id, dim, j),
                taxonomy=taxonomy, temperature=temperature,
                similarity_window=similarity_window, vt_word_edits=vt_word_edits))
        return record, caption, results

    if max_in_flight > 1:
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            outcomes = list(pool.map(run_job, jobs))
    else:
        outcomes = [run_job(j) for j in jobs]

    for record, caption, results in outcomes:
        pairs.append(TrainingPair(pair_id=f"{record.clip_id}__{axis}__pos",
                                  axis=axis, clip_id=record.clip_id,
                                  caption=caption, label="positive"))
        report.positives += 1
        for j, result in enumerate(results):
            if result.status != STATUS_ACCEPTED:
                report.exhausted += 1
                report.skips.append({"clip_id": record.clip_id, "dimension": result.dimension,
                                     "reason": result.status if result.error is None
                                     else f"{result.status}: {result.error}"})
                log.info("mutation exhausted for %s (%s)", record.clip_id, result.dimension)
                continue
            pairs.append(TrainingPair(pair_id=f"{record.clip_id}__{axis}__neg{j}",
                                      axis=axis, clip_id=record.clip_id,
                                      caption=result.mutated, label="negative",
                                      dimension=result.dimension,
                                      similarity=result.similarity,
                                      word_edits=result.word_edits,
                                      attempts=result.attempts))
            report.negatives += 1
            report.dimension_counts[result.dimension] = \
                report.dimension_counts.get(result.dimension, 0) + 1

    return pairs, report


def save_pairs(path, pairs: Iterable[TrainingPair], meta: Optional[dict] = None) -> int:
    return manifest.write_jsonl(path, (p.to_dict() for p in pairs), meta=meta)


def load_pairs(path) -> List[TrainingPair]:
    return [TrainingPair.from_dict(d) for d in manifest.read_jsonl(path)]
