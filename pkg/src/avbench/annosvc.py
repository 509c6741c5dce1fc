"""HTTP service for blinded pairwise (2AFC) annotation sessions.

Persistence is an append-only judgment log plus per-session snapshot files:
desk-scale, crash-safe and diffable. Model identities never leave the server
before export; media is served through session-scoped opaque aliases so even
model-named files stay blinded. Left/right order is randomized per pair and
recorded server-side only.
"""

import json
import logging
import os
import random
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from avbench import manifest
from avbench.seeding import derive_seed

log = logging.getLogger(__name__)

VERDICTS = ("A", "B", "Tie")


class SessionNotFoundError(KeyError):
    pass


class PairSetNotFoundError(KeyError):
    pass


class ValidationFailure(ValueError):
    def __init__(self, message: str, gaps: Optional[List[str]] = None):
        super().__init__(message)
        self.gaps = gaps or []


class DuplicateSubmissionError(ValueError):
    pass


@dataclass
class PairRecord:
    pair_id: str
    prompt_id: str
    side_a: Dict[str, str]  # {model_id, media}
    side_b: Dict[str, str]

    @classmethod
    def from_dict(cls, d: dict) -> "PairRecord":
        return cls(pair_id=d["pair_id"], prompt_id=d["prompt_id"],
                   side_a=dict(d["side_a"]), side_b=dict(d["side_b"]))

    def to_dict(self) -> dict:
        return {"pair_id": self.pair_id, "prompt_id": self.prompt_id,
                "side_a": self.side_a, "side_b": self.side_b}


def load_pair_set(path) -> List[PairRecord]:
    return [PairRecord.from_dict(d) for d in manifest.read_jsonl(path)]


@dataclass
class Session:
    session_id: str
    annotator_id: str
    pair_set: str
    dimensions: List[str]
    queue: List[str]
    cursor: int = 0
    # Per-pair left/right swap, server-side only: when True the displayed
    # left slot is side_b.
    swaps: Dict[str, bool] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"session_id": self.session_id, "annotator_id": self.annotator_id,
                "pair_set": self.pair_set, "dimensions": self.dimensions,
                "queue": self.queue, "cursor": self.cursor, "swaps": self.swaps}

    @classmethod
    def from_dict(cls, d: dict) -> "Session":
        return cls(session_id=d["session_id"], annotator_id=d["annotator_id"],
                   pair_set=d["pair_set"], dimensions=list(d["dimensions"]),
                   queue=list(d["queue"]), cursor=int(d["cursor"]),
                   swaps={k: bool(v) for k, v in d.get("swaps", {}).items()})


class JudgmentStore:
    """Judgment log plus session snapshots under one directory.

    A submission is one log line carrying all its per-dimension verdicts, so
    a crash leaves either the whole submission or none of it; torn trailing
    lines are discarded on replay.
    """

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.sessions_dir = self.root / "sessions"
        self.sessions_dir.mkdir(exist_ok=True)
        self.log_path = self.root / "judgments.jsonl"
        self._lock = threading.Lock()
        self.sessions: Dict[str, Session] = {}
        self.submissions: List[dict] = []
        self._seen: set = set()  # (session_id, pair_id)
        self._replay()

    def _replay(self) -> None:
        for snap in sorted(self.sessions_dir.glob("*.json")):
            session = Session.from_dict(json.loads(snap.read_text(encoding="utf-8")))
            self.sessions[session.session_id] = session
        if self.log_path.is_file():
            with open(self.log_path, "r", encoding="utf-8") as fh:
                for line in fh:
                    if not line.endswith("\n"):
                        log.warning("discarding torn judgment log tail")
                        break
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        record = json.loads(line)
                    except ValueError:
                        log.warning("discarding unparseable judgment log line")
                        continue
                    self.submissions.append(record)
                    self._seen.add((record["session_id"], record["pair_id"]))

    def _append(self, record: dict) -> None:
        # Single write + fsync: the atomicity unit of a submission.
        line = (manifest.dumps_record(record) + "\n").encode("utf-8")
        with open(self.log_path, "ab") as fh:
            fh.write(line)
            fh.flush()
            os.fsync(fh.fileno())

    def _save_session(self, session: Session) -> None:
        path = self.sessions_dir / f"{session.session_id}.json"
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(session.to_dict(), sort_keys=True), encoding="utf-8")
        tmp.replace(path)

    def create_session(self, annotator_id: str, pair_set: str, pair_ids: List[str],
                       dimensions: List[str], seed: Optional[int] = None) -> Session:
        if not dimensions:
            raise ValidationFailure("dimensions must be non-empty")
        if seed is None:
            seed = random.SystemRandom().getrandbits(48)
        rng = random.Random(derive_seed(seed, "queue", annotator_id))
        queue = list(pair_ids)
        rng.shuffle(queue)
        swaps = {pid: bool(rng.getrandbits(1)) for pid in queue}
        session = Session(session_id=uuid.uuid4().hex[:12], annotator_id=annotator_id,
                          pair_set=pair_set, dimensions=list(dimensions),
                          queue=queue, swaps=swaps)
        with self._lock:
            self.sessions[session.session_id] = session
            self._save_session(session)
        return session

    def get(self, session_id: str) -> Session:
        session = self.sessions.get(session_id)
        if session is None:
            raise SessionNotFoundError(session_id)
        return session

    def submit(self, session_id: str, pair_id: str, verdicts: Dict[str, str],
               submitted_at: str = "") -> dict:
        with self._lock:
            session = self.get(session_id)
            if session.cursor >= len(session.queue):
                raise ValidationFailure("session already complete")
            current = session.queue[session.cursor]
            if pair_id != current:
                raise ValidationFailure(
                    f"pair {pair_id!r} is not the session's current pair ({current!r})")
            if (session_id, pair_id) in self._seen:
                raise DuplicateSubmissionError(f"judgments already recorded for pair {pair_id!r}")
            missing = [d for d in session.dimensions if d not in verdicts]
            extra = [d for d in verdicts if d not in session.dimensions]
            bad = [d for d, v in verdicts.items() if v not in VERDICTS]
            if missing or extra or bad:
                raise ValidationFailure(
                    "verdicts must cover exactly the session dimensions",
                    gaps=[f"missing: {d}" for d in missing]
                         + [f"unexpected: {d}" for d in extra]
                         + [f"bad verdict for {d}" for d in bad])

            record = {
                "judgment_id": uuid.uuid4().hex[:12],
                "session_id": session_id,
                "annotator_id": session.annotator_id,
                "pair_set": session.pair_set,
                "pair_id": pair_id,
                "verdicts": dict(sorted(verdicts.items())),
                "swapped": session.swaps.get(pair_id, False),
                "submitted_at": submitted_at,
            }
            # All-or-nothing: state advances only after the log write lands.
            self._append(record)
            self.submissions.append(record)
            self._seen.add((session_id, pair_id))
            session.cursor += 1
            self._save_session(session)
            return {"ok": True, "cursor": session.cursor, "remaining": len(session.queue) - session.cursor}

    def export_rows(self, pair_set: str):
        """Unblind: map displayed-left/right verdicts back onto side_a/side_b."""
        for record in self.submissions:
            if record["pair_set"] != pair_set:
                continue
            swapped = record.get("swapped", False)
            for dimension in sorted(record["verdicts"]):
                displayed = record["verdicts"][dimension]
                if displayed == "Tie" or not swapped:
                    verdict = displayed
                else:
                    verdict = "B" if displayed == "A" else "A"
                yield {"judgment_id": record["judgment_id"], "pair_id": record["pair_id"],
                       "dimension": dimension, "verdict": verdict,
                       "annotator_id": record["annotator_id"],
                       "session_id": record["session_id"],
                       "submitted_at": record["submitted_at"]}


# ---------------------------------------------------------------------------
# FastAPI application


def create_app(pairs_path, media_dir=None, store_dir=None, pair_set_name: Optional[str] = None):
    from fastapi import FastAPI, HTTPException, Request
    from fastapi.responses import FileResponse, PlainTextResponse

    pairs = load_pair_set(pairs_path)
    pair_by_id = {p.pair_id: p for p in pairs}
    pair_set_id = pair_set_name or Path(pairs_path).stem
    store = JudgmentStore(store_dir or (Path(pairs_path).parent / "annostore"))
    media_root = Path(media_dir) if media_dir else None

    app = FastAPI(title="avbench annotation service")
    app.state.store = store
    app.state.pair_set = pair_set_id

    def _resolve_media(ref: str) -> Optional[Path]:
        if ref.startswith(("http://", "https://")):
            return None
        p = Path(ref)
        if not p.is_absolute() and media_root is not None:
            p = media_root / ref
        return p

    def _displayed_sides(session: Session, pair: PairRecord):
        swapped = session.swaps.get(pair.pair_id, False)
        left, right = (pair.side_b, pair.side_a) if swapped else (pair.side_a, pair.side_b)
        return left, right

    def _media_url(session_id: str, pair_id: str, slot: str, ref: str) -> str:
        if ref.startswith(("http://", "https://")):
            return ref
        return f"/media/{session_id}/{pair_id}/{slot}"

    @app.post("/sessions")
    def create_session(payload: dict):
        annotator_id = payload.get("annotator_id")
        dimensions = payload.get("dimensions") or []
        if not annotator_id:
            raise HTTPException(status_code=422, detail="annotator_id is required")
        if not dimensions:
            raise HTTPException(status_code=422, detail="dimensions must be non-empty")
        requested_set = payload.get("pair_set", pair_set_id)
        if requested_set != pair_set_id:
            raise HTTPException(status_code=404, detail=f"unknown pair set {requested_set!r}")
        session = store.create_session(annotator_id, pair_set_id, [p.pair_id for p in pairs],
                                       dimensions, seed=payload.get("seed"))
        return {"session_id": session.session_id, "total": len(session.queue),
                "cursor": session.cursor, "dimensions": session.dimensions}

    @app.get("/sessions/{session_id}/next")
    def next_pair(session_id: str):
        try:
            session = store.get(session_id)
        except SessionNotFoundError:
            raise HTTPException(status_code=404, detail="unknown session")
        if session.cursor >= len(session.queue):
            return {"done": True, "progress": {"done": session.cursor, "total": len(session.queue)}}
        pair = pair_by_id[session.queue[session.cursor]]
        left, right = _displayed_sides(session, pair)
        return {
            "pair_id": pair.pair_id,
            "media_a": _media_url(session_id, pair.pair_id, "a", left["media"]),
            "media_b": _media_url(session_id, pair.pair_id, "b", right["media"]),
            "dimensions": session.dimensions,
            "progress": {"done": session.cursor, "total": len(session.queue)},
        }

    @app.get("/media/{session_id}/{pair_id}/{slot}")
    def media(session_id: str, pair_id: str, slot: str):
        try:
            session = store.get(session_id)
        except SessionNotFoundError:
            raise HTTPException(status_code=404, detail="unknown session")
        pair = pair_by_id.get(pair_id)
        if pair is None or slot not in ("a", "b"):
            raise HTTPException(status_code=404, detail="unknown media")
        left, right = _displayed_sides(session, pair)
        ref = (left if slot == "a" else right)["media"]
        path = _resolve_media(ref)
        if path is None or not path.is_file():
            raise HTTPException(status_code=404, detail="media not available")
        return FileResponse(path)

    @app.post("/sessions/{session_id}/judgments")
    def submit(session_id: str, payload: dict, request: Request):
        pair_id = payload.get("pair_id")
        verdicts = payload.get("verdicts") or {}
        if not pair_id:
            raise HTTPException(status_code=422, detail="pair_id is required")
        try:
            ack = store.submit(session_id, pair_id, verdicts,
                               submitted_at=payload.get("submitted_at", ""))
        except SessionNotFoundError:
            raise HTTPException(status_code=404, detail="unknown session")
        except DuplicateSubmissionError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except ValidationFailure as exc:
            raise HTTPException(status_code=400,
                                detail={"message": str(exc), "gaps": exc.gaps})
        return ack

    @app.get("/export")
    def export(pair_set: Optional[str] = None):
        requested = pair_set or pair_set_id
        if requested != pair_set_id:
            raise HTTPException(status_code=404, detail=f"unknown pair set {requested!r}")
        meta = {"pair_set": pair_set_id, "left_right_randomized": True}
        lines = [manifest.dumps_record({manifest.META_KEY: meta})]
        lines += [manifest.dumps_record(row) for row in store.export_rows(pair_set_id)]
        return PlainTextResponse("\n".join(lines) + "\n", media_type="application/x-ndjson")

    return app
