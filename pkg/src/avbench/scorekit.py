"""The ten-dimension scoring suite.

Consistency dimensions (AV / AT / VT) convert an evaluator's Yes/No token
log-probabilities into a continuous score; speech content accuracy is
computed from ASR transcripts against dialogue extracted from the prompt;
audio aesthetics aggregates the four component scores; the remaining
dimensions pass through external metric adapters at their native scale.
Normalization happens only at reporting time, never here.
"""

import logging
import math
import re
import string
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from avbench import assetutil, manifest
from avbench.curator import PromptEntry
from avbench.endpoints import ProtocolError, TransportError
from avbench.textmutate import TrainingPair

log = logging.getLogger(__name__)

CONSISTENCY_AXES = ("AV", "AT", "VT")
ALL_DIMENSIONS = ("AV", "AT", "VT", "LipSync", "SpeechContent", "SpeechRealism",
                  "AudioQuality", "AudioAesthetics", "VideoQuality", "VideoAesthetics")

# Metric-native scale descriptors, for provenance on every record.
DIMENSION_SCALES = {
    "AV": "unit_interval", "AT": "unit_interval", "VT": "unit_interval",
    "LipSync": "sync_confidence", "SpeechContent": "percent",
    "SpeechRealism": "bonafide_probability", "AudioQuality": "mos_1_5",
    "AudioAesthetics": "aggregate_1_10", "VideoQuality": "score_0_100",
    "VideoAesthetics": "score_0_10",
}

# Adapter names used by the metric registry for non-evaluator dimensions.
ADAPTER_NAMES = {
    "LipSync": "syncnet", "SpeechContent": "asr", "SpeechRealism": "df_arena",
    "AudioQuality": "nisqa", "AudioAesthetics": "audiobox",
    "VideoQuality": "dover", "VideoAesthetics": "laion_aesthetic",
}


class NoExpectedSpeechError(ValueError):
    code = "no_expected_speech"


@dataclass(frozen=True)
class YesNoLogits:
    logp_yes: float
    logp_no: float

    def __post_init__(self):
        for name, v in (("logp_yes", self.logp_yes), ("logp_no", self.logp_no)):
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ProtocolError(f"{name} must be finite, got {v!r}")
            if v > 0.0:
                raise ProtocolError(f"{name} is a log-probability and must be <= 0, got {v}")

    @classmethod
    def parse(cls, payload: dict) -> "YesNoLogits":
        missing = [k for k in ("logp_yes", "logp_no") if k not in payload]
        if missing:
            raise ProtocolError(f"evaluator response missing {missing}")
        return cls(logp_yes=float(payload["logp_yes"]), logp_no=float(payload["logp_no"]))


def yes_no_score(logp_yes: float, logp_no: float) -> float:
    """P(Yes) / (P(Yes) + P(No)) from log-probabilities.

    Computed in log space (max subtracted) so hugely negative logits neither
    overflow nor underflow; strictly increasing in logp_yes - logp_no.
    """
    if not (math.isfinite(logp_yes) and math.isfinite(logp_no)):
        raise ValueError("logits must be finite")
    m = max(logp_yes, logp_no)
    py = math.exp(logp_yes - m)
    pn = math.exp(logp_no - m)
    return py / (py + pn)


@dataclass
class ScoreRecord:
    model_id: str
    prompt_id: str
    dimension: str
    value: float
    scale: str
    backend: str

    def __post_init__(self):
        if self.dimension in CONSISTENCY_AXES and not 0.0 <= self.value <= 1.0:
            raise ValueError(f"{self.dimension} score must be in [0, 1], got {self.value}")

    def to_dict(self) -> dict:
        return {"model_id": self.model_id, "prompt_id": self.prompt_id,
                "dimension": self.dimension, "value": self.value,
                "scale": self.scale, "backend": self.backend}

    @classmethod
    def from_dict(cls, d: dict) -> "ScoreRecord":
        return cls(model_id=d["model_id"], prompt_id=d["prompt_id"],
                   dimension=d["dimension"], value=float(d["value"]),
                   scale=d.get("scale", ""), backend=d.get("backend", ""))


def load_questions(path: Optional[str] = None) -> Dict[str, str]:
    if path is None:
        return assetutil.load_json("questions.json")
    import json
    from pathlib import Path
    return json.loads(Path(path).read_text(encoding="utf-8"))


def judge(media: Dict[str, str], caption: Optional[str], axis: str, backend,
          model_id: str = "", prompt_id: str = "",
          questions: Optional[Dict[str, str]] = None, retry_budget: int = 3) -> ScoreRecord:
    """Ask the axis's fixed Yes/No question about the content and convert the
    returned logits into a continuous score."""
    axis = axis.upper()
    if axis not in CONSISTENCY_AXES:
        raise ValueError(f"axis must be one of {CONSISTENCY_AXES}, got {axis!r}")
    questions = questions or load_questions()

    audio_url = media.get("audio_url")
    video_url = media.get("video_url")
    if axis == "AV" and not (audio_url and video_url):
        raise ValueError("AV judging needs audio and video refs")
    if axis == "AT" and not (audio_url and caption):
        raise ValueError("AT judging needs an audio ref and a caption")
    if axis == "VT" and not (video_url and caption):
        raise ValueError("VT judging needs a video ref and a caption")

    kwargs = {"axis": axis, "question": questions[axis], "caption": caption}
    if axis in ("AV", "AT"):
        kwargs["audio_url"] = audio_url
    if axis in ("AV", "VT"):
        kwargs["video_url"] = video_url

    last_exc: Optional[Exception] = None
    for _ in range(retry_budget):
        try:
            payload = backend.judge(**kwargs)
            break
        except TransportError as exc:
            last_exc = exc
    else:
        raise TransportError(f"backend_unavailable after {retry_budget} attempts: {last_exc}")

    logits = YesNoLogits.parse(payload)
    return ScoreRecord(model_id=model_id, prompt_id=prompt_id, dimension=axis,
                       value=yes_no_score(logits.logp_yes, logits.logp_no),
                       scale=DIMENSION_SCALES[axis],
                       backend=getattr(backend, "backend_id", "unknown"))


# ---------------------------------------------------------------------------
# Speech content accuracy

_QUOTE_SPANS = re.compile(r'"([^"]+)"|“([^”]+)”'
                          r"|'([^']+)'|‘([^’]+)’")

_PUNCT = string.punctuation + "‘’“”…"


def extract_expected_speech(prompt_text: str) -> str:
    """Dialogue = text inside ASCII or typographic quotes, in order."""
    spans = ["".join(groups) for groups in _QUOTE_SPANS.findall(prompt_text)]
    spans = [s.strip() for s in spans if s.strip()]
    if not spans:
        raise NoExpectedSpeechError("prompt contains no quoted dialogue")
    return " ".join(spans)


def tokenize(text: str) -> List[str]:
    out = []
    for tok in text.casefold().split():
        tok = tok.strip(_PUNCT)
        if tok:
            out.append(tok)
    return out


def content_keywords(tokens: Sequence[str], stopwords: Optional[frozenset] = None) -> List[str]:
    if stopwords is None:
        stopwords = assetutil.load_stopwords()
    return [t for t in tokens if t not in stopwords]


def word_error_rate(expected_tokens: Sequence[str], transcript_tokens: Sequence[str]) -> float:
    """Word-level minimal edit distance divided by the expected length."""
    if not expected_tokens:
        return 0.0 if not transcript_tokens else 1.0
    prev = list(range(len(transcript_tokens) + 1))
    for i, ref in enumerate(expected_tokens, start=1):
        cur = [i] + [0] * len(transcript_tokens)
        for j, hyp in enumerate(transcript_tokens, start=1):
            cost = 0 if ref == hyp else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
        prev = cur
    return prev[-1] / len(expected_tokens)


@dataclass(frozen=True)
class SpeechContentWeights:
    w_comp: float = 0.5
    w_acc: float = 0.5
    w_hall: float = 0.5

    def __post_init__(self):
        if min(self.w_comp, self.w_acc, self.w_hall) < 0:
            raise ValueError("speech-content weights must be non-negative")
        if abs(self.w_comp + self.w_acc - 1.0) > 1e-9:
            raise ValueError("w_comp + w_acc must equal 1")


@dataclass
class SpeechContentInputs:
    expected_text: str
    transcript: str
    weights: SpeechContentWeights = SpeechContentWeights()


@dataclass
class SpeechContentResult:
    s_comp: float
    s_acc: float
    s_hall: float
    final: float  # [0, 1]; multiply by 100 for the suite's reported scale

    @property
    def percent(self) -> float:
        return 100.0 * self.final


def speech_content_score(inputs: SpeechContentInputs,
                         stopwords: Optional[frozenset] = None) -> SpeechContentResult:
    """Completeness over content keywords, lexical accuracy via 1 - WER, and
    a hallucination penalty for transcript tokens absent from the dialogue.
    """
    from collections import Counter

    if stopwords is None:
        stopwords = assetutil.load_stopwords()
    exp_tokens = tokenize(inputs.expected_text)
    hyp_tokens = tokenize(inputs.transcript)

    exp_kw = Counter(content_keywords(exp_tokens, stopwords))
    hyp_kw = Counter(content_keywords(hyp_tokens, stopwords))
    total_kw = sum(exp_kw.values())
    matched = sum(min(n, hyp_kw[k]) for k, n in exp_kw.items())
    s_comp = matched / total_kw if total_kw else 1.0

    s_acc = 1.0 - min(1.0, word_error_rate(exp_tokens, hyp_tokens))

    exp_counts = Counter(exp_tokens)
    unmatched = sum(max(0, n - exp_counts[t]) for t, n in Counter(hyp_tokens).items())
    s_hall = unmatched / max(1, len(hyp_tokens))

    w = inputs.weights
    final = min(1.0, max(0.0, w.w_comp * s_comp + w.w_acc * s_acc - w.w_hall * s_hall))
    return SpeechContentResult(s_comp=s_comp, s_acc=s_acc, s_hall=s_hall, final=final)


def audio_aesthetics(ce: float, cu: float, pc: float, pq: float) -> float:
    """Aggregate of the four component scores; production complexity counts
    against the total: (CE + CU + PQ - PC) / 4."""
    for name, v in (("ce", ce), ("cu", cu), ("pc", pc), ("pq", pq)):
        if not math.isfinite(v):
            raise ValueError(f"component {name} must be finite, got {v!r}")
    return (ce + cu + pq - pc) / 4.0


# ---------------------------------------------------------------------------
# Suite runner


@dataclass
class MetricRegistry:
    """dimension -> backend. Consistency axes map to evaluator clients, the
    rest to metric adapters."""

    backends: Dict[str, object] = field(default_factory=dict)

    @property
    def enabled(self) -> Tuple[str, ...]:
        return tuple(d for d in ALL_DIMENSIONS if d in self.backends)

    def get(self, dimension: str):
        return self.backends[dimension]


def stub_registry(dimensions: Iterable[str] = ALL_DIMENSIONS) -> MetricRegistry:
    from avbench.endpoints import HashStubEvaluator, StubMetricAdapter

    backends: Dict[str, object] = {}
    for dim in dimensions:
        if dim in CONSISTENCY_AXES:
            backends[dim] = HashStubEvaluator()
        else:
            backends[dim] = StubMetricAdapter(ADAPTER_NAMES[dim])
    return MetricRegistry(backends=backends)


def registry_from_config(config: Dict[str, dict]) -> MetricRegistry:
    """Build a registry from {dimension: {backend: stub|http, url?}}."""
    from avbench.endpoints import (HashStubEvaluator, HttpEvaluator,
                                   HttpMetricAdapter, StubMetricAdapter)

    backends: Dict[str, object] = {}
    for dim, spec in config.items():
        if dim not in ALL_DIMENSIONS:
            raise ValueError(f"unknown suite dimension {dim!r}")
        kind = spec.get("backend", "stub")
        if kind == "stub":
            backends[dim] = (HashStubEvaluator() if dim in CONSISTENCY_AXES
                             else StubMetricAdapter(ADAPTER_NAMES[dim]))
        elif kind == "http":
            url = spec["url"]
            backends[dim] = (HttpEvaluator(url) if dim in CONSISTENCY_AXES
                             else HttpMetricAdapter(spec.get("name", ADAPTER_NAMES[dim]), url))
        else:
            raise ValueError(f"unknown backend kind {kind!r} for {dim}")
    return MetricRegistry(backends=backends)


@dataclass
class SuiteResult:
    records: List[ScoreRecord]
    gaps: List[dict]

    def to_dict(self) -> dict:
        return {"records": [r.to_dict() for r in self.records], "gaps": self.gaps}


def _score_one(model_id: str, prompt: PromptEntry, media: Dict[str, str],
               dimension: str, registry: MetricRegistry,
               questions: Dict[str, str],
               weights: SpeechContentWeights) -> ScoreRecord:
    backend = registry.get(dimension)
    if dimension in CONSISTENCY_AXES:
        caption = prompt.text if dimension in ("AT", "VT") else None
        return judge(media, caption, dimension, backend,
                     model_id=model_id, prompt_id=prompt.prompt_id, questions=questions)

    backend_id = getattr(backend, "backend_id", "unknown")
    if dimension == "SpeechContent":
        expected = extract_expected_speech(prompt.text)  # NoExpectedSpeechError -> gap
        resp = backend.evaluate(audio_url=media.get("audio_url"))
        if "text" not in resp:
            raise ProtocolError("ASR adapter response missing 'text'")
        result = speech_content_score(SpeechContentInputs(expected, resp["text"], weights))
        value = result.percent
    elif dimension == "AudioAesthetics":
        resp = backend.evaluate(audio_url=media.get("audio_url"))
        missing = [k for k in ("ce", "cu", "pc", "pq") if k not in resp]
        if missing:
            raise ProtocolError(f"audiobox adapter response missing {missing}")
        value = audio_aesthetics(float(resp["ce"]), float(resp["cu"]),
                                 float(resp["pc"]), float(resp["pq"]))
    else:
        resp = backend.evaluate(audio_url=media.get("audio_url"),
                                video_url=media.get("video_url"))
        if "value" not in resp:
            raise ProtocolError(f"{dimension} adapter response missing 'value'")
        value = float(resp["value"])

    return ScoreRecord(model_id=model_id, prompt_id=prompt.prompt_id, dimension=dimension,
                       value=value, scale=DIMENSION_SCALES[dimension], backend=backend_id)


def run_suite(model_id: str, benchmark: Sequence[PromptEntry],
              media: Dict[str, Dict[str, str]], registry: MetricRegistry,
              questions: Optional[Dict[str, str]] = None,
              weights: SpeechContentWeights = SpeechContentWeights(),
              max_in_flight: int = 1) -> SuiteResult:
    """One ScoreRecord per (prompt, enabled dimension); per-dimension
    failures become gaps, never fatal. Records are merged in stable
    (prompt_id, dimension) order regardless of execution order."""
    questions = questions or load_questions()
    jobs = [(p, d) for p in benchmark for d in registry.enabled]

    def run(job):
        prompt, dim = job
        prompt_media = media.get(prompt.prompt_id, {})
        try:
            return _score_one(model_id, prompt, prompt_media, dim, registry,
                              questions, weights), None
        except NoExpectedSpeechError:
            return None, {"prompt_id": prompt.prompt_id, "dimension": dim,
                          "reason": "no_expected_speech"}
        except (TransportError, ProtocolError, ValueError, KeyError) as exc:
            return None, {"prompt_id": prompt.prompt_id, "dimension": dim,
                          "reason": str(exc)}

    if max_in_flight > 1:
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            outcomes = list(pool.map(run, jobs))
    else:
        outcomes = [run(j) for j in jobs]

    records = sorted((r for r, _ in outcomes if r is not None),
                     key=lambda r: (r.prompt_id, r.dimension))
    gaps = sorted((g for _, g in outcomes if g is not None),
                  key=lambda g: (g["prompt_id"], g["dimension"]))
    for g in gaps:
        log.warning("suite gap: %s/%s (%s)", g["prompt_id"], g["dimension"], g["reason"])
    return SuiteResult(records=records, gaps=gaps)


def aggregate_means(records: Sequence[ScoreRecord],
                    tier_of: Dict[str, str]) -> List[dict]:
    """Unweighted per-prompt means, split by tier, per (model, dimension)."""
    sums: Dict[Tuple[str, str, str], List[float]] = {}
    for r in records:
        tier = tier_of.get(r.prompt_id, "unknown")
        sums.setdefault((r.model_id, tier, r.dimension), []).append(r.value)
    return [{"model_id": m, "tier": t, "dimension": d,
             "mean": sum(vals) / len(vals), "count": len(vals)}
            for (m, t, d), vals in sorted(sums.items())]


def save_scores(path, records: Iterable[ScoreRecord], meta: Optional[dict] = None) -> int:
    return manifest.write_jsonl(path, (r.to_dict() for r in records), meta=meta)


def load_scores(path) -> List[ScoreRecord]:
    return [ScoreRecord.from_dict(d) for d in manifest.read_jsonl(path)]


# ---------------------------------------------------------------------------
# SFT dataset export


def sft_records(pairs: Iterable[TrainingPair],
                questions: Optional[Dict[str, str]] = None) -> Iterable[dict]:
    """Instruction-template pairs for evaluator fine-tuning: the axis's fixed
    Yes/No question plus the caption, answered per the pair label."""
    questions = questions or load_questions()
    for p in pairs:
        yield {"pair_id": p.pair_id, "axis": p.axis, "clip_id": p.clip_id,
               "instruction": questions[p.axis], "caption": p.caption,
               "answer": "Yes" if p.label == "positive" else "No"}


def sft_export(path, pairs: Iterable[TrainingPair],
               questions: Optional[Dict[str, str]] = None,
               meta: Optional[dict] = None) -> int:
    return manifest.write_jsonl(path, sft_records(pairs, questions), meta=meta)
