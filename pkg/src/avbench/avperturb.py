"""Audio-video misalignment negatives.

Eight strategies, grouped by the fault they inject: semantic swaps
(random/semantic donor mismatch), temporal faults (micro/medium shift, speed
change), physical identity faults (pitch shift) and acoustic environment
faults (noise addition, spectral filtering). Every operation is a pure
function of (input, spec, seed): identical inputs produce byte-identical
output.
"""

import dataclasses
import json
import logging
import random
import shlex
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import signal as sps

from avbench import manifest
from avbench.audio import AudioBuffer, clip_to_unit, load_wav, resample_to_length, save_wav
from avbench.corpus import ClipRecord
from avbench.seeding import derive_seed

log = logging.getLogger(__name__)

STRATEGIES = (
    "random_mismatch",
    "semantic_mismatch",
    "time_shift_micro",
    "time_shift_medium",
    "speed_change",
    "pitch_shift",
    "noise_addition",
    "filter",
)

# Dimension level each strategy belongs to; recorded on every negative pair.
DIMENSION_LABELS = {
    "random_mismatch": "Basic Semantic Negative",
    "semantic_mismatch": "High-level Semantic Negative",
    "time_shift_micro": "High-precision Temporal Negative",
    "time_shift_medium": "Temporal Negative",
    "speed_change": "Temporal-Physical Negative",
    "pitch_shift": "Speaker/Physical Negative",
    "noise_addition": "Acoustic Scene Negative",
    "filter": "Acoustic Structural Negative",
}


class RangeError(ValueError):
    """A perturbation parameter falls outside its allowed range."""


class NoSemanticDonorError(LookupError):
    code = "no_semantic_donor"


class NoConflictAssetError(LookupError):
    code = "no_conflict_asset"


class BankConfigurationError(ValueError):
    """Noise bank missing assets or tags required by the request."""


@dataclass(frozen=True)
class PerturbRanges:
    """Default parameter ranges; all config-overridable."""

    micro_shift_s: Tuple[float, float] = (0.2, 1.0)
    medium_shift_s: Tuple[float, float] = (1.0, 3.0)
    speed_factor: Tuple[float, float] = (0.8, 1.2)
    pitch_semitones: Tuple[float, float] = (2.0, 3.0)
    snr_db: Tuple[float, float] = (5.0, 20.0)
    lowpass_hz: Tuple[float, float] = (1000.0, 4000.0)
    highpass_hz: Tuple[float, float] = (300.0, 1000.0)


@dataclass
class PerturbationSpec:
    """Declarative description of one misalignment transform."""

    strategy: str
    params: Dict[str, object] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise RangeError(f"unknown strategy {self.strategy!r}")

    @property
    def dimension_label(self) -> str:
        return DIMENSION_LABELS[self.strategy]

    def validate(self, ranges: PerturbRanges = PerturbRanges()) -> None:
        s, p = self.strategy, self.params
        if s == "time_shift_micro":
            _check_abs_range(p["delta_s"], ranges.micro_shift_s, "delta_s", low_inclusive=True)
        elif s == "time_shift_medium":
            _check_abs_range(p["delta_s"], ranges.medium_shift_s, "delta_s", low_inclusive=False)
        elif s == "speed_change":
            f = float(p["factor"])
            lo, hi = ranges.speed_factor
            if not lo <= f <= hi or f == 1.0:
                raise RangeError(f"speed factor {f} outside [{lo}, {hi}] \\ {{1.0}}")
        elif s == "pitch_shift":
            _check_abs_range(p["semitones"], ranges.pitch_semitones, "semitones", low_inclusive=True)
        elif s == "noise_addition":
            snr = float(p["snr_db"])
            lo, hi = ranges.snr_db
            if not lo <= snr <= hi:
                raise RangeError(f"snr_db {snr} outside [{lo}, {hi}]")
        elif s == "filter":
            if p.get("kind") not in ("lowpass", "highpass"):
                raise RangeError(f"filter kind must be lowpass or highpass, got {p.get('kind')!r}")
        # mismatch strategies carry no numeric parameters

    def to_dict(self) -> dict:
        return {"strategy": self.strategy, "params": self.params, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "PerturbationSpec":
        return cls(strategy=d["strategy"], params=dict(d.get("params", {})), seed=int(d.get("seed", 0)))


def _check_abs_range(value, bounds, name, low_inclusive: bool) -> None:
    v = abs(float(value))
    lo, hi = bounds
    ok = (lo <= v <= hi) if low_inclusive else (lo < v <= hi)
    if not ok:
        op = "<=" if low_inclusive else "<"
        raise RangeError(f"|{name}| = {v} violates {lo} {op} |{name}| <= {hi}")


# ---------------------------------------------------------------------------
# Temporal faults


def time_shift(a: AudioBuffer, delta_s: float, mode: str,
               ranges: PerturbRanges = PerturbRanges()) -> AudioBuffer:
    """Delay (positive delta) or advance (negative) the audio against the
    video timeline. Duration is preserved; the vacated region is silence.
    """
    if mode == "micro":
        _check_abs_range(delta_s, ranges.micro_shift_s, "delta_s", low_inclusive=True)
    elif mode == "medium":
        _check_abs_range(delta_s, ranges.medium_shift_s, "delta_s", low_inclusive=False)
    else:
        raise RangeError(f"unknown time-shift mode {mode!r}")
    if abs(delta_s) >= a.duration_s:
        raise RangeError(f"|delta_s| = {abs(delta_s)} must be < duration {a.duration_s}")

    shift = int(round(delta_s * a.sample_rate))
    out = np.zeros_like(a.samples)
    if shift > 0:
        out[shift:] = a.samples[: a.num_samples - shift]
    elif shift < 0:
        out[: a.num_samples + shift] = a.samples[-shift:]
    else:
        out[:] = a.samples
    return AudioBuffer(out, a.sample_rate)


def speed_change(a: AudioBuffer, factor: float,
                 ranges: PerturbRanges = PerturbRanges()) -> AudioBuffer:
    """Playback-speed change by resampling: duration scales by 1/factor and
    pitch scales with factor (the intended physical artifact)."""
    f = float(factor)
    lo, hi = ranges.speed_factor
    if not lo <= f <= hi or f == 1.0:
        raise RangeError(f"speed factor {f} outside [{lo}, {hi}] \\ {{1.0}}")
    out_n = int(round(a.num_samples / f))
    return AudioBuffer(resample_to_length(a.samples, out_n), a.sample_rate)


# ---------------------------------------------------------------------------
# Pitch shift: resample then overlap-add stretch back to the original length


def _wsola_stretch(x: np.ndarray, target_len: int, sample_rate: int,
                   window_s: float = 0.030, hop_s: float = 0.010,
                   search_s: float = 0.005) -> np.ndarray:
    """Waveform-similarity overlap-add time stretch of (n, ch) to target_len.

    Each synthesis frame is picked near its nominal analysis position,
    aligned by cross-correlation against the natural continuation of the
    previous frame, so periodic content stays phase-coherent.
    """
    n, ch = x.shape
    if target_len == n:
        return x.copy()
    win_len = max(int(round(window_s * sample_rate)), 4)
    hop = max(int(round(hop_s * sample_rate)), 1)
    tol = max(int(round(search_s * sample_rate)), 1)
    if n <= win_len + 2 * tol:
        return resample_to_length(x, target_len)

    ana_hop = hop * n / target_len
    win = np.hanning(win_len)
    mono = x.mean(axis=1)

    out = np.zeros((target_len + win_len, ch))
    wsum = np.zeros(target_len + win_len)
    prev = None
    for k in range(target_len // hop + 2):
        s_pos = k * hop
        if s_pos >= target_len:
            break
        nominal = int(round(k * ana_hop))
        nominal = min(max(nominal, 0), n - win_len)
        if prev is None:
            sel = nominal
        else:
            ideal_start = min(prev + hop, n - win_len)
            ideal = mono[ideal_start: ideal_start + win_len]
            lo = max(nominal - tol, 0)
            hi = min(nominal + tol, n - win_len)
            cands = np.lib.stride_tricks.sliding_window_view(mono[lo: hi + win_len], win_len)
            sel = lo + int(np.argmax(cands @ ideal))
        seg = x[sel: sel + win_len]
        out[s_pos: s_pos + win_len] += seg * win[:, np.newaxis]
        wsum[s_pos: s_pos + win_len] += win
        prev = sel

    nz = wsum > 1e-8
    out[nz] /= wsum[nz, np.newaxis]
    return out[:target_len]


def pitch_shift(a: AudioBuffer, semitones: float,
                ranges: PerturbRanges = PerturbRanges()) -> AudioBuffer:
    """Shift pitch by resampling (which scales both pitch and duration) and
    stretching back to the original duration with overlap-add."""
    _check_abs_range(semitones, ranges.pitch_semitones, "semitones", low_inclusive=True)
    ratio = 2.0 ** (-float(semitones) / 12.0)
    mid_n = max(int(round(a.num_samples * ratio)), 2)
    mid = resample_to_length(a.samples, mid_n)
    out = _wsola_stretch(mid, a.num_samples, a.sample_rate)
    return AudioBuffer(out, a.sample_rate)


# ---------------------------------------------------------------------------
# Acoustic environment faults


def spectral_filter(a: AudioBuffer, kind: str, cutoff_hz: float) -> AudioBuffer:
    """4th-order Butterworth low/high-pass applied per channel."""
    if kind not in ("lowpass", "highpass"):
        raise RangeError(f"filter kind must be lowpass or highpass, got {kind!r}")
    nyquist = a.sample_rate / 2.0
    if not 0.0 < cutoff_hz < nyquist:
        raise RangeError(f"cutoff {cutoff_hz} Hz outside (0, {nyquist})")
    sos = sps.butter(4, cutoff_hz, btype="low" if kind == "lowpass" else "high",
                     fs=a.sample_rate, output="sos")
    out = sps.sosfilt(sos, a.samples, axis=0)
    return AudioBuffer(out, a.sample_rate)


@dataclass
class NoiseBank:
    """Directory of WAV assets with a sidecar tag file (kind + environment).

    Layout: <dir>/tags.json maps filename -> {"kind": ..., "environment":
    [...], "implied_speakers": ...}; every tagged file must exist.
    """

    root: Path
    tags: Dict[str, dict]

    @classmethod
    def open(cls, root) -> "NoiseBank":
        root = Path(root)
        tag_path = root / "tags.json"
        if not tag_path.is_file():
            raise BankConfigurationError(f"noise bank sidecar missing: {tag_path}")
        tags = json.loads(tag_path.read_text(encoding="utf-8"))
        for name in tags:
            if not (root / name).is_file():
                raise BankConfigurationError(f"tagged asset missing from bank: {name}")
        return cls(root=root, tags=tags)

    def assets(self, kind: str) -> List[str]:
        return sorted(n for n, t in self.tags.items() if t.get("kind") == kind)

    def load(self, name: str, sample_rate: int) -> AudioBuffer:
        return load_wav(self.root / name, target_rate=sample_rate)


def _fit_to(noise: AudioBuffer, n: int, channels: int) -> np.ndarray:
    """Loop or truncate a noise asset to n samples and map to channel count."""
    x = noise.samples
    if x.shape[1] != channels:
        x = np.tile(x.mean(axis=1, keepdims=True), (1, channels))
    reps = int(np.ceil(n / x.shape[0]))
    return np.tile(x, (reps, 1))[:n]


def mix_at_snr(a: AudioBuffer, noise: AudioBuffer, snr_db: float) -> Tuple[AudioBuffer, dict]:
    """Mix noise into the signal at the requested SNR over the full region.

    Gain solves 10*log10(P_signal / P_noise_scaled) = snr_db with powers
    measured as mean square over the mixed region.
    """
    tiled = _fit_to(noise, a.num_samples, a.channels)
    p_sig = float(np.mean(a.samples ** 2))
    p_noise = float(np.mean(tiled ** 2))
    if p_noise <= 0.0:
        raise BankConfigurationError("noise asset is silent; cannot reach target SNR")
    if p_sig <= 0.0:
        raise RangeError("input signal is silent; SNR is undefined")
    gain = float(np.sqrt(p_sig / (p_noise * 10.0 ** (snr_db / 10.0))))
    mixed = AudioBuffer(a.samples + gain * tiled, a.sample_rate)
    out, clipped = clip_to_unit(mixed)
    return out, {"gain": gain, "clipped_samples": clipped}


def noise_addition(a: AudioBuffer, bank: NoiseBank, kind: str, snr_db: float, seed: int,
                   snr_range: Tuple[float, float] = PerturbRanges().snr_db) -> AudioBuffer:
    """Overlay a bank asset of the given kind at the requested SNR; the asset
    is chosen deterministically from the seed."""
    lo, hi = snr_range
    if not lo <= snr_db <= hi:
        raise RangeError(f"snr_db {snr_db} outside configured range [{lo}, {hi}]")
    names = bank.assets(kind)
    if not names:
        raise BankConfigurationError(f"noise bank has no assets of kind {kind!r}")
    name = names[random.Random(seed).randrange(len(names))]
    noise = bank.load(name, a.sample_rate)
    out, info = mix_at_snr(a, noise, snr_db)
    log.debug("noise_addition: asset=%s gain=%.4f clipped=%d", name, info["gain"], info["clipped_samples"])
    return out


# ---------------------------------------------------------------------------
# Semantic and environmental mismatches


def mismatch_pair(target: ClipRecord, pool: Sequence[ClipRecord], mode: str, seed: int,
                  subject_key: str = "num_speakers") -> str:
    """Pick a donor clip whose audio replaces the target's.

    random: uniform draw under the seed. semantic: the donor maximizing
    attribute overlap with the target while differing on the subject
    attribute; ties break to the lexicographically smallest clip_id.
    """
    candidates = sorted((c for c in pool if c.clip_id != target.clip_id), key=lambda c: c.clip_id)
    if not candidates:
        raise ValueError("donor pool is empty after excluding the target")
    if mode == "random":
        return candidates[random.Random(seed).randrange(len(candidates))].clip_id
    if mode != "semantic":
        raise ValueError(f"unknown mismatch mode {mode!r}")

    if not target.attributes or any(not c.attributes for c in candidates):
        raise ValueError("semantic mismatch requires attribute maps on all clips")
    subject_value = target.attributes.get(subject_key)
    eligible = [c for c in candidates if c.attributes.get(subject_key) != subject_value]
    if not eligible:
        raise NoSemanticDonorError(
            f"no pool clip differs from target on subject attribute {subject_key!r}")

    def overlap(c: ClipRecord) -> int:
        return sum(1 for k, v in target.attributes.items() if c.attributes.get(k) == v)

    return min(eligible, key=lambda c: (-overlap(c), c.clip_id)).clip_id


@dataclass
class EnvConflictResult:
    audio: AudioBuffer
    contradicted_attribute: str
    asset: str
    snr_db: float


def env_conflict(target: ClipRecord, kind: str, bank: NoiseBank, seed: int,
                 audio: Optional[AudioBuffer] = None,
                 snr_range: Tuple[float, float] = PerturbRanges().snr_db,
                 working_rate: int = 16000) -> EnvConflictResult:
    """Mix in sound that contradicts the clip's tagged environment.

    speaker_count: overlay babble whose implied speaker count contradicts
    num_speakers. ambient: mix an asset whose environment tags conflict with
    acoustic_background (or time_of_day when background is untagged).
    """
    if not target.attributes:
        raise ValueError("env_conflict requires populated attributes")
    if audio is None:
        audio = load_wav(target.media.audio_path, target_rate=working_rate)
    rng = random.Random(seed)

    if kind == "speaker_count":
        stated = target.attributes.get("num_speakers")
        names = [n for n in bank.assets("babble")
                 if bank.tags[n].get("implied_speakers", "4+") != stated]
        contradicted = "num_speakers"
    elif kind == "ambient":
        if "acoustic_background" in target.attributes:
            contradicted = "acoustic_background"
        elif "time_of_day" in target.attributes:
            contradicted = "time_of_day"
        else:
            raise ValueError("env_conflict(ambient) requires acoustic_background or time_of_day")
        clip_value = target.attributes[contradicted]
        names = [n for n in bank.assets("ambient")
                 if clip_value not in bank.tags[n].get("environment", [])]
    else:
        raise ValueError(f"unknown env_conflict kind {kind!r}")

    if not names:
        raise NoConflictAssetError(f"no bank asset contradicts the clip for kind {kind!r}")
    name = sorted(names)[rng.randrange(len(names))]
    snr_db = rng.uniform(*snr_range)
    noise = bank.load(name, audio.sample_rate)
    mixed, _ = mix_at_snr(audio, noise, snr_db)
    return EnvConflictResult(audio=mixed, contradicted_attribute=contradicted,
                             asset=name, snr_db=snr_db)


# ---------------------------------------------------------------------------
# Batch generation


@dataclass
class NegativePairAV:
    pair_id: str
    positive: Dict[str, str]  # audio_ref, video_ref
    negative: Dict[str, str]
    spec: PerturbationSpec
    dimension_label: str

    def to_dict(self) -> dict:
        return {"pair_id": self.pair_id, "positive": self.positive,
                "negative": self.negative, "spec": self.spec.to_dict(),
                "dimension_label": self.dimension_label}

    @classmethod
    def from_dict(cls, d: dict) -> "NegativePairAV":
        return cls(pair_id=d["pair_id"], positive=dict(d["positive"]),
                   negative=dict(d["negative"]), spec=PerturbationSpec.from_dict(d["spec"]),
                   dimension_label=d["dimension_label"])


def draw_spec(strategy: str, seed: int, ranges: PerturbRanges = PerturbRanges()) -> PerturbationSpec:
    """Draw concrete parameters for a strategy from its configured ranges."""
    rng = random.Random(seed)
    params: Dict[str, object] = {}
    if strategy == "time_shift_micro":
        params["delta_s"] = rng.choice([-1, 1]) * rng.uniform(*ranges.micro_shift_s)
    elif strategy == "time_shift_medium":
        lo, hi = ranges.medium_shift_s
        # keep strictly above the micro/medium boundary
        params["delta_s"] = rng.choice([-1, 1]) * rng.uniform(lo + 1e-6, hi)
    elif strategy == "speed_change":
        lo, hi = ranges.speed_factor
        params["factor"] = rng.uniform(lo, 0.97) if rng.random() < 0.5 else rng.uniform(1.03, hi)
    elif strategy == "pitch_shift":
        params["semitones"] = rng.choice([-1, 1]) * rng.uniform(*ranges.pitch_semitones)
    elif strategy == "noise_addition":
        params["kind"] = rng.choice(["babble", "crowd", "ambient"])
        params["snr_db"] = rng.uniform(*ranges.snr_db)
    elif strategy == "filter":
        if rng.random() < 0.5:
            params["kind"], bounds = "lowpass", ranges.lowpass_hz
        else:
            params["kind"], bounds = "highpass", ranges.highpass_hz
        params["cutoff_hz"] = rng.uniform(*bounds)
    elif strategy in ("random_mismatch", "semantic_mismatch"):
        params["mode"] = strategy.split("_")[0]
    spec = PerturbationSpec(strategy=strategy, params=params, seed=seed)
    spec.validate(ranges)
    return spec


def apply_spec(audio: AudioBuffer, spec: PerturbationSpec, bank: Optional[NoiseBank] = None,
               ranges: PerturbRanges = PerturbRanges()) -> AudioBuffer:
    """Apply a DSP strategy to an audio buffer (mismatch strategies are
    handled at the pair level, not here)."""
    s, p = spec.strategy, spec.params
    if s == "time_shift_micro":
        return time_shift(audio, float(p["delta_s"]), "micro", ranges)
    if s == "time_shift_medium":
        return time_shift(audio, float(p["delta_s"]), "medium", ranges)
    if s == "speed_change":
        return speed_change(audio, float(p["factor"]), ranges)
    if s == "pitch_shift":
        return pitch_shift(audio, float(p["semitones"]), ranges)
    if s == "noise_addition":
        if bank is None:
            raise BankConfigurationError("noise_addition requires a noise bank")
        return noise_addition(audio, bank, str(p["kind"]), float(p["snr_db"]), spec.seed,
                              snr_range=ranges.snr_db)
    if s == "filter":
        return spectral_filter(audio, str(p["kind"]), float(p["cutoff_hz"]))
    raise ValueError(f"strategy {s!r} does not apply to a single audio buffer")


@dataclass
class BatchReport:
    strategy_counts: Dict[str, int] = field(default_factory=dict)
    pairs: int = 0
    skipped: List[dict] = field(default_factory=list)
    clipped_samples: int = 0
    total_samples: int = 0
    flagged: bool = False

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def generate_av_negatives(records: Sequence[ClipRecord], out_dir, seed: int,
                          strategy: str = "balanced", bank: Optional[NoiseBank] = None,
                          ranges: PerturbRanges = PerturbRanges(),
                          working_rate: int = 16000,
                          muxer_cmd: Optional[str] = None) -> Tuple[List[NegativePairAV], BatchReport]:
    """Generate one negative per record.

    balanced mode rotates through all eight strategies so per-strategy counts
    stay within one of batch_size/8. Perturbed audio is written as WAV under
    out_dir; manifest refs are relative to out_dir.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = list(records)
    report = BatchReport(strategy_counts={s: 0 for s in STRATEGIES})
    pairs: List[NegativePairAV] = []

    for i, record in enumerate(records):
        name = STRATEGIES[i % len(STRATEGIES)] if strategy == "balanced" else strategy
        child = derive_seed(seed, "avperturb", record.clip_id, name)
        spec = draw_spec(name, child, ranges)
        try:
            pair = _generate_one(record, records, spec, bank, ranges, working_rate, out_dir, report)
        except (RangeError, NoSemanticDonorError, NoConflictAssetError,
                BankConfigurationError, FileNotFoundError, ValueError) as exc:
            log.warning("skipping %s (%s): %s", record.clip_id, name, exc)
            report.skipped.append({"clip_id": record.clip_id, "strategy": name, "reason": str(exc)})
            continue
        report.strategy_counts[name] += 1
        report.pairs += 1
        pairs.append(pair)
        if muxer_cmd:
            _run_muxer(muxer_cmd, record.media.video_ref,
                       out_dir / pair.negative["audio_ref"],
                       out_dir / (pair.pair_id + ".mux.out"))

    if report.total_samples and report.clipped_samples / report.total_samples > 0.01:
        report.flagged = True
        log.warning("batch flagged: %.2f%% of samples clipped",
                    100.0 * report.clipped_samples / report.total_samples)
    return pairs, report


def _generate_one(record: ClipRecord, pool: Sequence[ClipRecord], spec: PerturbationSpec,
                  bank: Optional[NoiseBank], ranges: PerturbRanges, working_rate: int,
                  out_dir: Path, report: BatchReport) -> NegativePairAV:
    positive = {"audio_ref": record.media.audio_path, "video_ref": record.media.video_ref}
    pair_id = f"{record.clip_id}__{spec.strategy}"

    if spec.strategy in ("random_mismatch", "semantic_mismatch"):
        donor_id = mismatch_pair(record, pool, str(spec.params["mode"]), spec.seed)
        donor = next(c for c in pool if c.clip_id == donor_id)
        if manifest.content_hash(donor.media.audio_path) == manifest.content_hash(record.media.audio_path):
            raise ValueError(f"donor {donor_id} audio is byte-identical to the target")
        negative = {"audio_ref": donor.media.audio_path, "video_ref": record.media.video_ref,
                    "donor_clip_id": donor_id}
    else:
        audio = load_wav(record.media.audio_path, target_rate=working_rate)
        perturbed = apply_spec(audio, spec, bank=bank, ranges=ranges)
        perturbed, clipped = clip_to_unit(perturbed)
        report.clipped_samples += clipped
        report.total_samples += perturbed.num_samples * perturbed.channels
        rel = f"{pair_id}.wav"
        save_wav(out_dir / rel, perturbed)
        if manifest.file_sha256(out_dir / rel) == manifest.content_hash(record.media.audio_path):
            raise ValueError("perturbed audio is byte-identical to the source")
        negative = {"audio_ref": rel, "video_ref": record.media.video_ref}

    return NegativePairAV(pair_id=pair_id, positive=positive, negative=negative,
                          spec=spec, dimension_label=spec.dimension_label)


def _run_muxer(template: str, video_in, audio_in, out) -> None:
    """Remuxing is delegated to a user-configured command template with
    {video_in} {audio_in} {out} placeholders."""
    cmd = [part.format(video_in=str(video_in), audio_in=str(audio_in), out=str(out))
           for part in shlex.split(template)]
    subprocess.run(cmd, check=True)


def save_pairs(path, pairs: Iterable[NegativePairAV], meta: Optional[dict] = None) -> int:
    return manifest.write_jsonl(path, (p.to_dict() for p in pairs), meta=meta)


def load_pairs(path) -> List[NegativePairAV]:
    return [NegativePairAV.from_dict(d) for d in manifest.read_jsonl(path)]
