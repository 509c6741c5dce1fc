"""PCM audio buffers and WAV I/O.

Samples are float64 in [-1, 1], shaped (num_samples, channels) with 1 or 2
channels. Files are RIFF WAV, 16-bit PCM or 32-bit float, any sample rate;
loading can resample to a configured working rate (default 16 kHz).
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

log = logging.getLogger(__name__)

DEFAULT_WORKING_RATE = 16000


@dataclass
class AudioBuffer:
    samples: np.ndarray  # float64, shape (n, channels)
    sample_rate: int

    def __post_init__(self):
        a = np.asarray(self.samples, dtype=np.float64)
        if a.ndim == 1:
            a = a[:, np.newaxis]
        if a.ndim != 2 or a.shape[1] not in (1, 2):
            raise ValueError(f"expected mono or stereo samples, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("samples must be finite")
        self.samples = a
        self.sample_rate = int(self.sample_rate)

    @property
    def num_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def channels(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.num_samples / self.sample_rate

    def copy(self) -> "AudioBuffer":
        return AudioBuffer(self.samples.copy(), self.sample_rate)


def clip_to_unit(buf: AudioBuffer) -> tuple:
    """Peak-clip to [-1, 1]; returns (buffer, clipped_sample_count)."""
    clipped = int(np.count_nonzero(np.abs(buf.samples) > 1.0))
    if clipped:
        log.info("clipping %d samples to [-1, 1]", clipped)
        return AudioBuffer(np.clip(buf.samples, -1.0, 1.0), buf.sample_rate), clipped
    return buf, 0


def sine(freq_hz: float, duration_s: float, sample_rate: int = DEFAULT_WORKING_RATE,
         amplitude: float = 0.5, channels: int = 1) -> AudioBuffer:
    """Test-tone generator, used by fixtures and oracles."""
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    x = amplitude * np.sin(2.0 * np.pi * freq_hz * t)
    return AudioBuffer(np.tile(x[:, np.newaxis], (1, channels)), sample_rate)


def resample_to_length(x: np.ndarray, out_n: int) -> np.ndarray:
    """Linear-interpolation resample of a (n, ch) array to out_n samples."""
    n = x.shape[0]
    if out_n == n:
        return x.copy()
    if out_n <= 0:
        raise ValueError("resample target length must be positive")
    pos = np.linspace(0.0, n - 1, out_n)
    out = np.empty((out_n, x.shape[1]), dtype=np.float64)
    idx = np.arange(n, dtype=np.float64)
    for c in range(x.shape[1]):
        out[:, c] = np.interp(pos, idx, x[:, c])
    return out


def resample(buf: AudioBuffer, target_rate: int) -> AudioBuffer:
    if buf.sample_rate == target_rate:
        return buf
    out_n = int(round(buf.num_samples * target_rate / buf.sample_rate))
    return AudioBuffer(resample_to_length(buf.samples, out_n), target_rate)


def load_wav(path, target_rate: int = None) -> AudioBuffer:
    rate, data = wavfile.read(str(path))
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    else:
        raise ValueError(f"unsupported WAV sample format: {data.dtype}")
    buf = AudioBuffer(samples, rate)
    if target_rate is not None and rate != target_rate:
        buf = resample(buf, target_rate)
    return buf


def save_wav(path, buf: AudioBuffer, fmt: str = "float32") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = buf.samples if buf.channels > 1 else buf.samples[:, 0]
    if fmt == "float32":
        wavfile.write(str(path), buf.sample_rate, data.astype(np.float32))
    elif fmt == "pcm16":
        scaled = np.clip(np.round(data * 32767.0), -32768, 32767).astype(np.int16)
        wavfile.write(str(path), buf.sample_rate, scaled)
    else:
        raise ValueError(f"unsupported WAV output format: {fmt!r}")
