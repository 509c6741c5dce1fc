"""Wire contracts for the external services the pipeline orchestrates:
dense-caption annotator, mutation LLM, Yes/No evaluators and unimodal metric
models. Each contract has an HTTP client and a deterministic stub, so every
pipeline path runs offline in tests and fixture mode.

The neural models themselves live behind these contracts and are out of
scope; this module owns request/response shapes, retry classification and
stub determinism only.
"""

import base64
import hashlib
import math
import re
from pathlib import Path
from typing import Dict, List, Optional

import httpx


class TransportError(RuntimeError):
    """Timeout, connection failure or 5xx: retryable."""


class ProtocolError(RuntimeError):
    """Contract violation (missing field, non-retryable status)."""


DEFAULT_TIMEOUT = 30.0


def post_json(url: str, payload: dict, timeout: float = DEFAULT_TIMEOUT) -> dict:
    """Single-attempt POST; retry budgets belong to the calling operation."""
    try:
        resp = httpx.post(url, json=payload, timeout=timeout)
    except httpx.HTTPError as exc:
        raise TransportError(f"POST {url}: {exc}") from exc
    if resp.status_code >= 500:
        raise TransportError(f"POST {url}: server returned {resp.status_code}")
    if not 200 <= resp.status_code < 300:
        raise ProtocolError(f"POST {url}: unexpected status {resp.status_code}")
    try:
        return resp.json()
    except ValueError as exc:
        raise ProtocolError(f"POST {url}: non-JSON response") from exc


def _hash01(*parts: str) -> float:
    """Deterministic float in [0, 1) from string parts."""
    h = hashlib.sha256("\x1f".join(parts).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "big") / 2.0 ** 64


# ---------------------------------------------------------------------------
# Annotator: POST <url> {clip_id, audio_url|audio_b64, video_ref, prompt}
#            -> {visual, motion, acoustic}


class HttpAnnotator:
    def __init__(self, url: str, timeout: float = DEFAULT_TIMEOUT, inline_audio: bool = False):
        self.url = url
        self.timeout = timeout
        self.inline_audio = inline_audio

    def annotate(self, clip_id: str, audio_url: str, video_ref: str, prompt: str) -> dict:
        payload: dict = {"clip_id": clip_id, "video_ref": video_ref, "prompt": prompt}
        if self.inline_audio and Path(audio_url).is_file():
            payload["audio_b64"] = base64.b64encode(Path(audio_url).read_bytes()).decode("ascii")
        else:
            payload["audio_url"] = audio_url
        return post_json(self.url, payload, self.timeout)


_STUB_SUBJECTS = ("a young woman", "an elderly man", "two friends", "a reporter",
                  "three colleagues", "a street musician", "a teacher", "a chef")
_STUB_PLACES = ("in a bright kitchen", "on a rainy street", "inside a quiet office",
                "at a crowded market", "in a dim studio", "on a sunlit balcony")
_STUB_ACTIONS = ("describes the recipe step by step", "argues about the schedule",
                 "reads the evening news aloud", "hums a gentle melody",
                 "explains the diagram on the wall", "greets every passerby warmly")
_STUB_SOUNDS = ("calm speech over a soft room tone", "rapid dialogue with distant traffic",
                "a clear narration with faint music", "overlapping voices and clattering dishes",
                "slow speech broken by long pauses", "an animated voice over birdsong")


class StubAnnotator:
    """Deterministic captions derived from clip_id; echo table overrides win."""

    def __init__(self, table: Optional[Dict[str, dict]] = None):
        self.table = table or {}

    def annotate(self, clip_id: str, audio_url: str, video_ref: str, prompt: str) -> dict:
        if clip_id in self.table:
            return dict(self.table[clip_id])

        def pick(options, salt):
            return options[int(_hash01(clip_id, salt) * len(options))]

        subject = pick(_STUB_SUBJECTS, "subject")
        place = pick(_STUB_PLACES, "place")
        action = pick(_STUB_ACTIONS, "action")
        sound = pick(_STUB_SOUNDS, "sound")
        return {
            "visual": f"{subject} {place}, framed in a steady medium shot",
            "motion": f"{subject} {action} while gesturing slowly",
            "acoustic": f"The audio carries {sound}",
        }


class FlakyAnnotator:
    """Test helper: raises TransportError for the first n calls, then delegates."""

    def __init__(self, inner, failures: int):
        self.inner = inner
        self.failures = failures
        self.calls = 0

    def annotate(self, **kwargs) -> dict:
        self.calls += 1
        if self.calls <= self.failures:
            raise TransportError("injected timeout")
        return self.inner.annotate(**kwargs)


# ---------------------------------------------------------------------------
# Mutation LLM: POST <url> {prompt, temperature, seed?} -> {text}


class HttpLlm:
    def __init__(self, url: str, timeout: float = DEFAULT_TIMEOUT):
        self.url = url
        self.timeout = timeout

    def complete(self, prompt: str, temperature: float = 0.7, seed: Optional[int] = None) -> str:
        payload: dict = {"prompt": prompt, "temperature": temperature}
        if seed is not None:
            payload["seed"] = seed
        resp = post_json(self.url, payload, self.timeout)
        if "text" not in resp or not isinstance(resp["text"], str):
            raise ProtocolError("LLM response missing 'text'")
        return resp["text"]


class TableStubLlm:
    """Deterministic table keyed by prompt hash (hex sha256 prefix)."""

    def __init__(self, table: Dict[str, str], default: Optional[str] = None):
        self.table = table
        self.default = default

    @staticmethod
    def key_for(prompt: str) -> str:
        return hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]

    def complete(self, prompt: str, temperature: float = 0.7, seed: Optional[int] = None) -> str:
        key = self.key_for(prompt)
        if key in self.table:
            return self.table[key]
        if self.default is not None:
            return self.default
        raise ProtocolError(f"stub table has no entry for prompt key {key}")


_SWAP_WORDS = ("crimson", "seven", "ancient", "plastic", "silent", "enormous",
               "triangular", "midnight", "frozen", "violet", "wooden", "restless")

_ORIGINAL_BLOCK = re.compile(r"<<<\n(.*?)\n>>>", re.DOTALL)
_MARKER_LINE = re.compile(r"^\s*(\[[^\]]+\]|[^\s:][^:]{0,59}:)\s*$")


class WordSwapStubLlm:
    """Offline mutation backend: swaps exactly one content word of the
    original (found between <<< >>> markers in the prompt), chosen
    deterministically from (prompt, seed). Marker lines are left untouched.
    """

    def complete(self, prompt: str, temperature: float = 0.7, seed: Optional[int] = None) -> str:
        m = _ORIGINAL_BLOCK.search(prompt)
        if not m:
            raise ProtocolError("prompt carries no original block to mutate")
        original = m.group(1)
        lines = original.split("\n")
        editable = [i for i, line in enumerate(lines)
                    if line.strip() and not _MARKER_LINE.match(line)]
        if not editable:
            return original
        u = _hash01(prompt, str(seed))
        line_idx = editable[int(u * len(editable))]
        words = lines[line_idx].split(" ")
        positions = [i for i, w in enumerate(words) if len(w.strip(".,!?;:")) > 2]
        if not positions:
            return original
        pos = positions[int(_hash01(prompt, str(seed), "pos") * len(positions))]
        old = words[pos]
        core = old.rstrip(".,!?;:")
        suffix = old[len(core):]
        for offset in range(len(_SWAP_WORDS)):
            idx = (int(_hash01(prompt, str(seed), "word") * len(_SWAP_WORDS)) + offset) % len(_SWAP_WORDS)
            candidate = _SWAP_WORDS[idx]
            if candidate != core.lower():
                words[pos] = candidate + suffix
                break
        lines[line_idx] = " ".join(words)
        return "\n".join(lines)


class StaticLlm:
    """Always returns the same text (used to exercise gate rejections)."""

    def __init__(self, text: str):
        self.text = text

    def complete(self, prompt: str, temperature: float = 0.7, seed: Optional[int] = None) -> str:
        return self.text


class FailingLlm:
    def complete(self, prompt: str, temperature: float = 0.7, seed: Optional[int] = None) -> str:
        raise TransportError("injected LLM outage")


# ---------------------------------------------------------------------------
# Yes/No evaluator: POST <base>/v1/judge {axis, question, audio_url?,
#                   video_url?, caption?} -> {logp_yes, logp_no}


class HttpEvaluator:
    def __init__(self, base_url: str, timeout: float = DEFAULT_TIMEOUT):
        self.base_url = base_url.rstrip("/")
        self.backend_id = f"http:{base_url}"
        self.timeout = timeout

    def judge(self, axis: str, question: str, audio_url: Optional[str] = None,
              video_url: Optional[str] = None, caption: Optional[str] = None) -> dict:
        payload = {"axis": axis, "question": question}
        if audio_url:
            payload["audio_url"] = audio_url
        if video_url:
            payload["video_url"] = video_url
        if caption:
            payload["caption"] = caption
        return post_json(f"{self.base_url}/v1/judge", payload, self.timeout)


class HashStubEvaluator:
    """Deterministic logits derived from the request content."""

    backend_id = "stub:hash"

    def judge(self, axis: str, question: str, audio_url: Optional[str] = None,
              video_url: Optional[str] = None, caption: Optional[str] = None) -> dict:
        u = _hash01(axis, question, audio_url or "", video_url or "", caption or "")
        p_yes = 0.05 + 0.90 * u
        return {"logp_yes": math.log(p_yes), "logp_no": math.log(1.0 - p_yes)}


class TruthStubEvaluator:
    """Ground-truth stub: requests the predicate marks positive get logits
    favoring Yes 9:1, everything else favors No 9:1."""

    backend_id = "stub:truth"

    def __init__(self, is_positive):
        self.is_positive = is_positive

    def judge(self, axis: str, question: str, audio_url: Optional[str] = None,
              video_url: Optional[str] = None, caption: Optional[str] = None) -> dict:
        positive = self.is_positive(axis=axis, audio_url=audio_url,
                                    video_url=video_url, caption=caption)
        if positive:
            return {"logp_yes": math.log(0.9), "logp_no": math.log(0.1)}
        return {"logp_yes": math.log(0.1), "logp_no": math.log(0.9)}


# ---------------------------------------------------------------------------
# Metric adapters: POST <base>/v1/metric/<name> {audio_url?, video_url?}
#                  -> {value} | {ce, cu, pc, pq} | {text} (ASR transcripts)


class HttpMetricAdapter:
    def __init__(self, name: str, base_url: str, timeout: float = DEFAULT_TIMEOUT):
        self.name = name
        self.base_url = base_url.rstrip("/")
        self.backend_id = f"http:{name}"
        self.timeout = timeout

    def evaluate(self, audio_url: Optional[str] = None, video_url: Optional[str] = None) -> dict:
        payload = {}
        if audio_url:
            payload["audio_url"] = audio_url
        if video_url:
            payload["video_url"] = video_url
        return post_json(f"{self.base_url}/v1/metric/{self.name}", payload, self.timeout)


# Native output ranges for the stub metric backends.
_STUB_RANGES = {
    "syncnet": (0.0, 10.0),
    "df_arena": (0.0, 1.0),
    "nisqa": (1.0, 5.0),
    "dover": (0.0, 100.0),
    "laion_aesthetic": (0.0, 10.0),
}


class StubMetricAdapter:
    """Deterministic native-scale scalar derived from the media refs."""

    def __init__(self, name: str):
        self.name = name
        self.backend_id = f"stub:{name}"

    def evaluate(self, audio_url: Optional[str] = None, video_url: Optional[str] = None) -> dict:
        u = _hash01(self.name, audio_url or "", video_url or "")
        if self.name == "audiobox":
            return {k: round(1.0 + 9.0 * _hash01(self.name, k, audio_url or ""), 4)
                    for k in ("ce", "cu", "pc", "pq")}
        if self.name == "asr":
            words = ("hello", "there", "please", "open", "door", "today", "morning", "friend")
            n = 3 + int(u * 5)
            text = " ".join(words[int(_hash01(self.name, audio_url or "", str(i)) * len(words))]
                            for i in range(n))
            return {"text": text}
        lo, hi = _STUB_RANGES.get(self.name, (0.0, 1.0))
        return {"value": round(lo + (hi - lo) * u, 6)}


class DownAdapter:
    """Test helper: adapter that always fails with a transport error."""

    def __init__(self, name: str):
        self.name = name
        self.backend_id = f"down:{name}"

    def evaluate(self, audio_url: Optional[str] = None, video_url: Optional[str] = None) -> dict:
        raise TransportError(f"{self.name} adapter unavailable")
