import json
import random

import numpy as np
import pytest

from avbench.audio import AudioBuffer, save_wav
from avbench.corpus import ClipRecord, MediaRefs
from avbench.schema import AttributeSchema

SR = 16000


def tone_with_texture(freq_hz: float, duration_s: float, seed: int,
                      sr: int = SR, amplitude: float = 0.4) -> AudioBuffer:
    """A sine with a dash of seeded noise so every clip's audio is unique."""
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sr))
    t = np.arange(n) / sr
    x = amplitude * np.sin(2 * np.pi * freq_hz * t) + 0.02 * rng.standard_normal(n)
    return AudioBuffer(np.clip(x, -1, 1), sr)


def make_clip(tmp_path, clip_id: str, duration_s: float = 10.0, freq: float = 300.0,
              height: int = 1080, attributes=None, captions=None, seed: int = 0,
              verified: bool = False) -> ClipRecord:
    audio_path = tmp_path / f"{clip_id}.wav"
    save_wav(audio_path, tone_with_texture(freq, duration_s, seed))
    record = ClipRecord(
        clip_id=clip_id,
        media=MediaRefs(audio_path=str(audio_path), video_ref=f"container://{clip_id}.mp4"),
        duration_s=duration_s,
        resolution={"width": height * 16 // 9, "height": height},
        attributes=attributes or {},
        captions=captions or {"visual": "", "motion": "", "acoustic": ""},
        verified=verified,
    )
    record.content_hash = record.compute_content_hash()
    return record


def random_attributes(rng: random.Random, schema: AttributeSchema) -> dict:
    return {key: rng.choice(list(values)) for key, values in schema.attributes.items()}


@pytest.fixture(scope="session")
def schema() -> AttributeSchema:
    return AttributeSchema.load()


@pytest.fixture
def clip_factory(tmp_path):
    counter = {"n": 0}

    def factory(**kwargs):
        counter["n"] += 1
        clip_id = kwargs.pop("clip_id", f"clip{counter['n']:03d}")
        seed = kwargs.pop("seed", counter["n"])
        freq = kwargs.pop("freq", 200.0 + 35.0 * counter["n"])
        return make_clip(tmp_path, clip_id, freq=freq, seed=seed, **kwargs)

    return factory


@pytest.fixture
def annotated_corpus(tmp_path, schema):
    """Twenty clips with valid attributes and stub-grade captions."""
    from avbench.endpoints import StubAnnotator

    rng = random.Random(7)
    annotator = StubAnnotator()
    records = []
    for i in range(20):
        clip_id = f"clip{i:03d}"
        record = make_clip(tmp_path, clip_id, duration_s=9.0 + (i % 4), freq=220.0 + 30.0 * i,
                           attributes=random_attributes(rng, schema), seed=i, verified=True)
        captions = annotator.annotate(clip_id=clip_id, audio_url=record.media.audio_path,
                                      video_ref=record.media.video_ref, prompt="")
        record.captions = captions
        record.annotation_status = "ok"
        records.append(record)
    return records


@pytest.fixture
def noise_bank_dir(tmp_path):
    """Noise bank with one asset per kind plus tags.json."""
    bank = tmp_path / "bank"
    bank.mkdir()
    rng = np.random.default_rng(99)
    assets = {
        "babble_a.wav": {"kind": "babble", "environment": ["indoor"], "implied_speakers": "4+"},
        "crowd_a.wav": {"kind": "crowd", "environment": ["crowd"]},
        "ambient_rain.wav": {"kind": "ambient", "environment": ["outdoor"]},
        "ambient_room.wav": {"kind": "ambient", "environment": ["clean", "indoor"]},
    }
    for name in assets:
        x = 0.3 * rng.standard_normal(SR * 2)
        save_wav(bank / name, AudioBuffer(np.clip(x, -1, 1), SR))
    (bank / "tags.json").write_text(json.dumps(assets, indent=1), encoding="utf-8")
    return bank
