"""16-bit PCM WAV reading and writing."""
from __future__ import annotations

import wave
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

DEFAULT_SAMPLE_RATE = 16000
_FULL_SCALE = 32768.0


class WavFormatError(ValueError):
    pass


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"waveform samples must be 1-D, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


def read_wav(path) -> list[Waveform]:
    """Read a 16-bit PCM file; returns one :class:`Waveform` per channel."""
    try:
        with wave.open(str(path), "rb") as fh:
            channels = fh.getnchannels()
            width = fh.getsampwidth()
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except (wave.Error, EOFError) as exc:
        raise WavFormatError(f"{path}: malformed WAV header ({exc})") from exc
    if width != 2:
        raise WavFormatError(f"{path}: unsupported sample width {8 * width} bits (need 16-bit PCM)")
    data = np.frombuffer(raw, dtype="<i2")
    if data.size % channels:
        raise WavFormatError(f"{path}: truncated sample data")
    data = data.reshape(-1, channels).astype(np.float64) / _FULL_SCALE
    return [Waveform(data[:, c].copy(), rate) for c in range(channels)]


def write_wav(path, waveforms: Union[Waveform, Sequence[Waveform]]) -> None:
    """Write one or more equal-length waveforms as interleaved 16-bit PCM.

    Samples are clamped to [-1, 1) and rounded to the nearest code.
    """
    if isinstance(waveforms, Waveform):
        waveforms = [waveforms]
    if not waveforms:
        raise ValueError("nothing to write")
    rate = waveforms[0].sample_rate
    length = len(waveforms[0])
    if any(w.sample_rate != rate or len(w) != length for w in waveforms):
        raise ValueError("all channels must share sample rate and length")
    stacked = np.stack([w.samples for w in waveforms], axis=1)
    codes = np.clip(np.round(stacked * _FULL_SCALE), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(len(waveforms))
        fh.setsampwidth(2)
        fh.setframerate(rate)
        fh.writeframes(codes.tobytes())
