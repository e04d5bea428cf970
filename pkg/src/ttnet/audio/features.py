"""STFT, log-power spectra, normalization and context-window regression datasets."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ttnet.audio.wavio import DEFAULT_SAMPLE_RATE, Waveform
from ttnet.tensor import ShapeError
from ttnet.tt import ModeFactorization

FRAME_LEN = 512
HOP = 256
N_BINS = FRAME_LEN // 2 + 1
LPS_FLOOR = 1e-12
VAR_FLOOR = 1e-8

FEATURE_FORMAT = "ttnet.features"
FEATURE_VERSION = 1


def periodic_hann(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


@dataclass
class Spectrogram:
    """``T x F`` complex STFT held as separate real and imaginary parts."""

    real: np.ndarray
    imag: np.ndarray
    length: int
    frame_len: int = FRAME_LEN
    hop: int = HOP
    window: str = "hann-periodic"
    sample_rate: int = DEFAULT_SAMPLE_RATE

    @property
    def shape(self) -> tuple[int, int]:
        return self.real.shape

    def phase(self) -> tuple[np.ndarray, np.ndarray]:
        """Unit phasors (cos, sin); bins with zero magnitude get phase 0."""
        mag = np.hypot(self.real, self.imag)
        safe = np.where(mag > 0, mag, 1.0)
        return np.where(mag > 0, self.real / safe, 1.0), np.where(mag > 0, self.imag / safe, 0.0)


def stft(w: Waveform, frame_len: int = FRAME_LEN, hop: int = HOP) -> Spectrogram:
    """Centered STFT: the signal is zero-padded by ``frame_len // 2`` on both sides."""
    x = w.samples
    if x.size < frame_len:
        raise ValueError(f"signal of {x.size} samples is shorter than one frame ({frame_len})")
    half = frame_len // 2
    n_frames = 1 + -(-x.size // hop)
    padded = np.zeros((n_frames - 1) * hop + frame_len)
    padded[half : half + x.size] = x
    frames = np.lib.stride_tricks.sliding_window_view(padded, frame_len)[::hop]
    spec = np.fft.rfft(frames * periodic_hann(frame_len), axis=1)
    return Spectrogram(spec.real.copy(), spec.imag.copy(), x.size, frame_len, hop, sample_rate=w.sample_rate)


def istft(s: Spectrogram) -> Waveform:
    """Weighted overlap-add inverse (least-squares estimate for modified spectra)."""
    win = periodic_hann(s.frame_len)
    frames = np.fft.irfft(s.real + 1j * s.imag, n=s.frame_len, axis=1) * win
    n_frames = frames.shape[0]
    total = (n_frames - 1) * s.hop + s.frame_len
    out = np.zeros(total)
    norm = np.zeros(total)
    for t in range(n_frames):
        out[t * s.hop : t * s.hop + s.frame_len] += frames[t]
        norm[t * s.hop : t * s.hop + s.frame_len] += win**2
    out = np.where(norm > 1e-10, out / np.where(norm > 1e-10, norm, 1.0), 0.0)
    half = s.frame_len // 2
    return Waveform(out[half : half + s.length], s.sample_rate)


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, values: np.ndarray) -> "NormStats":
        return cls(values.mean(axis=0), np.sqrt(np.maximum(values.var(axis=0), VAR_FLOOR)))


@dataclass
class FeatureMatrix:
    values: np.ndarray  # T x F
    norm_stats: Optional[NormStats] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ShapeError(f"features must be T x F, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("features contain non-finite values")

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


def lps(s: Spectrogram) -> FeatureMatrix:
    return FeatureMatrix(np.log(s.real**2 + s.imag**2 + LPS_FLOOR))


def lps_invert(features: FeatureMatrix, phase: Spectrogram) -> Spectrogram:
    """Spectrogram with magnitude ``exp(lps / 2)`` and the phase of ``phase``."""
    if features.values.shape != phase.shape:
        raise ShapeError(f"feature shape {features.values.shape} != spectrogram shape {phase.shape}")
    mag = np.exp(features.values / 2.0)
    cos, sin = phase.phase()
    return Spectrogram(mag * cos, mag * sin, phase.length, phase.frame_len, phase.hop, phase.window, phase.sample_rate)


def normalize(f: FeatureMatrix, stats: Optional[NormStats] = None) -> tuple[FeatureMatrix, NormStats]:
    """Per-bin standardization; fits the statistics on ``f`` when none are given."""
    if stats is None:
        stats = NormStats.fit(f.values)
    if stats.mean.shape != (f.values.shape[1],):
        raise ShapeError(f"stats cover {stats.mean.shape[0]} bins, features have {f.values.shape[1]}")
    return FeatureMatrix((f.values - stats.mean) / stats.std, stats), stats


def denormalize(f: FeatureMatrix, stats: NormStats) -> FeatureMatrix:
    return FeatureMatrix(f.values * stats.std + stats.mean)


@dataclass(frozen=True)
class FeatureGeometry:
    """How feature frames map onto network inputs and outputs.

    ``mode="dense"`` regresses bins ``0..max_bin``; ``mode="tt"`` drops the DC
    bin and regresses ``1..max_bin``, passing the noisy DC value through.
    Bins above ``max_bin`` are always passed through from the noisy reference.
    """

    context: int = 5
    channels: int = 1
    mode: str = "dense"
    max_bin: int = N_BINS - 1

    def __post_init__(self):
        if self.mode not in ("dense", "tt"):
            raise ValueError(f"mode must be 'dense' or 'tt', got {self.mode!r}")
        if self.context < 0 or self.channels < 1:
            raise ValueError("context must be >= 0 and channels >= 1")
        if not 1 <= self.max_bin <= N_BINS - 1:
            raise ValueError(f"max_bin must lie in [1, {N_BINS - 1}]")

    @property
    def first_bin(self) -> int:
        return 1 if self.mode == "tt" else 0

    @property
    def bins(self) -> slice:
        return slice(self.first_bin, self.max_bin + 1)

    @property
    def n_bins(self) -> int:
        return self.max_bin + 1 - self.first_bin

    @property
    def window(self) -> int:
        return 2 * self.context + 1

    @property
    def input_dim(self) -> int:
        return self.n_bins * self.window * self.channels

    @property
    def output_dim(self) -> int:
        return self.n_bins

    def to_dict(self) -> dict:
        return {"context": self.context, "channels": self.channels, "mode": self.mode, "max_bin": self.max_bin}


@dataclass
class RegressionDataset:
    inputs: np.ndarray  # N x D, rows laid out (channel, context offset, bin)
    targets: np.ndarray  # N x F'
    geometry: FeatureGeometry
    tensor_fact: Optional[ModeFactorization] = None
    dc_channel: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self.inputs.shape[0]


def context_stack(values: np.ndarray, context: int) -> np.ndarray:
    """``T x F`` -> ``T x (2M+1) x F`` with edge frames replicated."""
    padded = np.pad(values, ((context, context), (0, 0)), mode="edge")
    window = 2 * context + 1
    return np.stack([padded[c : c + values.shape[0]] for c in range(window)], axis=1)


def stack_inputs(channels: Sequence[FeatureMatrix], geometry: FeatureGeometry) -> np.ndarray:
    if len(channels) != geometry.channels:
        raise ShapeError(f"expected {geometry.channels} channels, got {len(channels)}")
    n_frames = channels[0].n_frames
    if any(c.n_frames != n_frames for c in channels):
        raise ShapeError("all channels must have the same frame count")
    stacked = np.stack(
        [context_stack(c.values[:, geometry.bins], geometry.context) for c in channels], axis=1
    )  # T x B x (2M+1) x F'
    return np.ascontiguousarray(stacked.reshape(n_frames, -1))


def build_dataset(
    channels: Sequence[FeatureMatrix],
    clean_ref: FeatureMatrix,
    geometry: FeatureGeometry,
    fact: Optional[ModeFactorization] = None,
) -> RegressionDataset:
    """Context-window regression rows from (already normalized) features.

    Targets are the clean reference-channel bins matching the input bins.
    """
    if clean_ref.n_frames != channels[0].n_frames:
        raise ShapeError("clean reference and noisy channels differ in frame count")
    if fact is not None and fact.in_dim != geometry.input_dim:
        raise ShapeError(
            f"factorization input product {fact.in_dim} != row width {geometry.input_dim} "
            f"({geometry.n_bins} x {geometry.window} x {geometry.channels})"
        )
    inputs = stack_inputs(channels, geometry)
    targets = np.ascontiguousarray(clean_ref.values[:, geometry.bins])
    dc = channels[0].values[:, 0].copy() if geometry.mode == "tt" else None
    return RegressionDataset(inputs, targets, geometry, fact, dc)


def concat_datasets(parts: Sequence[RegressionDataset]) -> RegressionDataset:
    first = parts[0]
    return RegressionDataset(
        np.concatenate([p.inputs for p in parts]),
        np.concatenate([p.targets for p in parts]),
        first.geometry,
        first.tensor_fact,
        None if first.dc_channel is None else np.concatenate([p.dc_channel for p in parts]),
    )


def save_features(path, f: FeatureMatrix) -> None:
    header = {"format": FEATURE_FORMAT, "version": FEATURE_VERSION, "shape": list(f.values.shape),
              "has_stats": f.norm_stats is not None}
    arrays = {"values": f.values}
    if f.norm_stats is not None:
        arrays.update(mean=f.norm_stats.mean, std=f.norm_stats.std)
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header)), **arrays)


def load_features(path) -> FeatureMatrix:
    with np.load(Path(path), allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header.get("format") != FEATURE_FORMAT or header.get("version") != FEATURE_VERSION:
            raise ValueError(f"{path}: not a version {FEATURE_VERSION} feature cache")
        values = data["values"]
        if list(values.shape) != header["shape"]:
            raise ValueError(f"{path}: shape header {header['shape']} != stored {values.shape}")
        stats = NormStats(data["mean"], data["std"]) if header["has_stats"] else None
    return FeatureMatrix(values, stats)
