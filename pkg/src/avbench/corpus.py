"""Clip ingest: metadata records, corpus filtering, dense-caption annotation
and train/test disjointness guarantees."""

import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Optional

from avbench import manifest
from avbench.schema import AttributeSchema

log = logging.getLogger(__name__)

CAPTION_KEYS = ("visual", "motion", "acoustic")

ANNOTATION_OK = "ok"
ANNOTATION_PENDING = "pending"
ANNOTATION_FAILED = "annotation_failed"
ANNOTATION_INVALID = "annotation_invalid"


@dataclass
class MediaRefs:
    audio_path: str
    video_ref: str


@dataclass
class ClipRecord:
    """One source clip: media refs, duration/resolution, attribute tags and
    the three dense captions (visual / motion / acoustic)."""

    clip_id: str
    media: MediaRefs
    duration_s: float
    resolution: Dict[str, int]
    attributes: Dict[str, str] = field(default_factory=dict)
    captions: Dict[str, str] = field(default_factory=lambda: {k: "" for k in CAPTION_KEYS})
    content_hash: str = ""
    verified: bool = False
    annotation_status: str = ANNOTATION_PENDING

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ValueError(f"clip {self.clip_id}: duration_s must be > 0")
        if self.resolution.get("width", 0) <= 0 or self.resolution.get("height", 0) <= 0:
            raise ValueError(f"clip {self.clip_id}: resolution must be positive")
        for key in CAPTION_KEYS:
            self.captions.setdefault(key, "")

    @property
    def fully_captioned(self) -> bool:
        return all(self.captions.get(k, "").strip() for k in CAPTION_KEYS)

    def compute_content_hash(self) -> str:
        """Digest over raw media bytes (audio file + video container ref)."""
        return manifest.content_hash(self.media.audio_path, self.media.video_ref)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["media"] = {"audio_path": self.media.audio_path, "video_ref": self.media.video_ref}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ClipRecord":
        media = MediaRefs(**d["media"])
        return cls(
            clip_id=d["clip_id"],
            media=media,
            duration_s=float(d["duration_s"]),
            resolution={k: int(v) for k, v in d["resolution"].items()},
            attributes=dict(d.get("attributes", {})),
            captions=dict(d.get("captions", {})),
            content_hash=d.get("content_hash", ""),
            verified=bool(d.get("verified", False)),
            annotation_status=d.get("annotation_status", ANNOTATION_PENDING),
        )


def load_clips(path, schema: Optional[AttributeSchema] = None) -> Iterator[ClipRecord]:
    """Load clip records from a manifest; malformed lines are skipped with a
    logged reason, never aborting the stream."""
    for i, raw in enumerate(manifest.read_jsonl(path, skip_malformed=True)):
        try:
            record = ClipRecord.from_dict(raw)
            if schema is not None:
                schema.check(record.attributes)
        except Exception as exc:
            log.warning("skipping unreadable record %d (%s): %s", i, raw.get("clip_id", "?"), exc)
            continue
        yield record


def save_clips(path, records: Iterable[ClipRecord], meta: Optional[dict] = None) -> int:
    return manifest.write_jsonl(path, (r.to_dict() for r in records), meta=meta)


@dataclass(frozen=True)
class FilterPolicy:
    min_s: float
    max_s: float
    min_height: int

    def __post_init__(self):
        if not self.min_s < self.max_s:
            raise ValueError("filter policy requires min_s < max_s")
        if self.min_height <= 0:
            raise ValueError("filter policy requires min_height > 0")


def filter_corpus(records: Iterable[ClipRecord], policy: FilterPolicy) -> Iterator[ClipRecord]:
    """Keep clips inside the duration window (inclusive) and at or above the
    minimum height; relative order is preserved and rejections are logged."""
    for record in records:
        if not policy.min_s <= record.duration_s <= policy.max_s:
            log.info("reject %s: duration %.3fs outside [%g, %g]",
                     record.clip_id, record.duration_s, policy.min_s, policy.max_s)
            continue
        if record.resolution["height"] < policy.min_height:
            log.info("reject %s: height %d below %d",
                     record.clip_id, record.resolution["height"], policy.min_height)
            continue
        yield record


def annotate_clip(record: ClipRecord, annotator, prompt: str, retry_budget: int = 3) -> ClipRecord:
    """Attach the three dense captions via the annotator endpoint.

    The input record is never mutated. Transport failures are retried up to
    the budget and then surface as annotation_status="annotation_failed"; a
    response missing any caption field yields "annotation_invalid".
    """
    from avbench.endpoints import TransportError

    out = dataclasses.replace(record, captions=dict(record.captions))
    attempts = 0
    while True:
        attempts += 1
        try:
            captions = annotator.annotate(
                clip_id=record.clip_id,
                audio_url=record.media.audio_path,
                video_ref=record.media.video_ref,
                prompt=prompt,
            )
        except TransportError as exc:
            if attempts >= retry_budget:
                log.warning("annotation failed for %s after %d attempts: %s",
                            record.clip_id, attempts, exc)
                out.annotation_status = ANNOTATION_FAILED
                return out
            continue
        missing = [k for k in CAPTION_KEYS
                   if not isinstance(captions.get(k), str) or not captions[k].strip()]
        if missing:
            log.warning("annotation invalid for %s: missing %s", record.clip_id, missing)
            out.annotation_status = ANNOTATION_INVALID
            return out
        out.captions = {k: captions[k] for k in CAPTION_KEYS}
        out.annotation_status = ANNOTATION_OK
        return out


def annotate_corpus(records: Iterable[ClipRecord], annotator, prompt: str,
                    retry_budget: int = 3, max_in_flight: int = 4) -> List[ClipRecord]:
    """Fan annotation out over N in-flight endpoint calls; results are merged
    deterministically by clip_id ordering regardless of completion order."""
    records = list(records)
    if max_in_flight <= 1:
        out = [annotate_clip(r, annotator, prompt, retry_budget) for r in records]
    else:
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            out = list(pool.map(lambda r: annotate_clip(r, annotator, prompt, retry_budget), records))
    return sorted(out, key=lambda r: r.clip_id)


@dataclass
class DisjointnessReport:
    collisions: List[dict] = field(default_factory=list)
    errors: List[dict] = field(default_factory=list)
    quarantined: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.collisions and not self.errors

    def to_dict(self) -> dict:
        return {"collisions": self.collisions, "errors": self.errors,
                "quarantined": self.quarantined, "ok": self.ok}


def dedup_guard(train: Iterable[ClipRecord], test: Iterable[ClipRecord],
                mode: str = "strict") -> DisjointnessReport:
    """Report every content-hash collision across the two sets.

    strict: a missing hash is treated as a collision-grade error.
    lenient: colliding ids are listed as quarantined so the caller can drop
    them and proceed.
    """
    if mode not in ("strict", "lenient"):
        raise ValueError(f"unknown dedup mode: {mode!r}")
    report = DisjointnessReport()

    by_hash: Dict[str, Dict[str, List[str]]] = {}
    for side, records in (("train", train), ("test", test)):
        for r in records:
            if not r.content_hash:
                entry = {"clip_id": r.clip_id, "side": side, "reason": "missing content_hash"}
                if mode == "strict":
                    report.errors.append(entry)
                else:
                    report.quarantined.append(r.clip_id)
                continue
            by_hash.setdefault(r.content_hash, {"train": [], "test": []})[side].append(r.clip_id)

    for h in sorted(by_hash):
        sides = by_hash[h]
        if sides["train"] and sides["test"]:
            collision = {"hash": h, "train_ids": sorted(sides["train"]),
                         "test_ids": sorted(sides["test"])}
            report.collisions.append(collision)
            if mode == "lenient":
                report.quarantined.extend(collision["train_ids"] + collision["test_ids"])
    return report
