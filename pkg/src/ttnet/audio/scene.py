"""Synthetic sources, SNR-controlled mixing and delay-and-gain multichannel scenes."""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ttnet.audio.wavio import DEFAULT_SAMPLE_RATE, Waveform, read_wav

# (SINR dB, SNR dB) pairs used to build training mixtures
SINR_SNR_PRESETS = ((5.0, 10.0), (5.0, 15.0), (10.0, 15.0), (15.0, 20.0))

NOISE_KINDS = ("white", "pink", "brown", "lowpass")


def energy(x: np.ndarray) -> float:
    return float(np.dot(x, x))


@dataclass(frozen=True)
class SpeakerProfile:
    """Pitch range and vowel inventory of one synthetic "target speaker"."""

    f0_range: tuple = (100.0, 220.0)
    glide: float = 0.2
    # (F1, F2) formant centres in Hz
    vowels: tuple = ((730.0, 1090.0), (530.0, 1840.0), (270.0, 2290.0), (570.0, 840.0), (300.0, 870.0),
                     (660.0, 1720.0), (490.0, 1350.0))
    formant_jitter: float = 0.1
    breath_level: float = 0.02


DEFAULT_SPEAKER = SpeakerProfile()


def synth_speech(duration: float, seed, sample_rate: int = DEFAULT_SAMPLE_RATE, max_freq: float = 1900.0,
                 speaker: SpeakerProfile = DEFAULT_SPEAKER) -> Waveform:
    """Harmonic-plus-noise stand-in for a speech utterance.

    Voiced "syllables" of 120-320 ms with gliding pitch and two formant
    resonances drawn from the speaker's vowel inventory, separated by short
    pauses, plus a faint aspiration component. Energy sits below ``max_freq``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    out = np.zeros(n)
    pos = int(rng.uniform(0.02, 0.08) * sample_rate)
    while pos < n:
        seg = int(rng.uniform(0.12, 0.32) * sample_rate)
        seg = min(seg, n - pos)
        if seg < 32:
            break
        ramp = np.arange(seg) / (seg - 1)
        f0_start = rng.uniform(*speaker.f0_range)
        f0 = f0_start * (1.0 + rng.uniform(-speaker.glide, speaker.glide) * ramp)
        v1, v2 = rng.choice(len(speaker.vowels), size=2)
        f1 = speaker.vowels[v1][0] + (speaker.vowels[v2][0] - speaker.vowels[v1][0]) * ramp
        f2 = speaker.vowels[v1][1] + (speaker.vowels[v2][1] - speaker.vowels[v1][1]) * ramp
        f1 = f1 * (1.0 + rng.uniform(-speaker.formant_jitter, speaker.formant_jitter))
        f2 = f2 * (1.0 + rng.uniform(-speaker.formant_jitter, speaker.formant_jitter))
        phase = 2.0 * np.pi * np.cumsum(f0) / sample_rate + rng.uniform(0, 2 * np.pi)
        voiced = np.zeros(seg)
        for h in range(1, int(max_freq / f0_start) + 1):
            fh = h * f0
            env = np.exp(-0.5 * ((fh - f1) / 150.0) ** 2) + 0.6 * np.exp(-0.5 * ((fh - f2) / 200.0) ** 2)
            amp = (env + 0.05) / h**0.5 * (fh < max_freq)
            voiced += amp * np.sin(h * phase)
        voiced *= np.hanning(seg) ** 0.5 * rng.uniform(0.5, 1.0)
        out[pos : pos + seg] += voiced
        pos += seg + int(rng.uniform(0.03, 0.12) * sample_rate)
    breath = _shape_noise(rng.standard_normal(n), sample_rate, "lowpass", cutoff=max_freq)
    out += speaker.breath_level * np.sqrt(np.mean(out**2) + 1e-12) / np.sqrt(np.mean(breath**2)) * breath
    peak = np.max(np.abs(out))
    if peak > 0:
        out *= 0.5 / peak
    return Waveform(out, sample_rate)


def _shape_noise(white: np.ndarray, sample_rate: int, kind: str, cutoff: float = 2000.0) -> np.ndarray:
    if kind == "white":
        return white
    spec = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(white.size, 1.0 / sample_rate)
    f = np.maximum(freqs, 20.0)
    if kind == "pink":
        gain = 1.0 / np.sqrt(f)
    elif kind == "brown":
        gain = 1.0 / f
    elif kind == "lowpass":
        gain = 1.0 / np.sqrt(1.0 + (freqs / cutoff) ** 8)
    else:
        raise ValueError(f"unknown noise kind {kind!r}; expected one of {NOISE_KINDS}")
    return np.fft.irfft(spec * gain, n=white.size)


def synth_noise(duration: float, seed, kind: str = "white", sample_rate: int = DEFAULT_SAMPLE_RATE,
                cutoff: float = 2000.0) -> Waveform:
    """Stationary coloured Gaussian noise with RMS 0.1."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    x = _shape_noise(rng.standard_normal(n), sample_rate, kind, cutoff)
    return Waveform(0.1 * x / np.sqrt(np.mean(x**2)), sample_rate)


def fit_length(x: np.ndarray, n: int) -> np.ndarray:
    """Loop or truncate ``x`` to exactly ``n`` samples."""
    if x.size == 0:
        raise ValueError("cannot loop an empty signal")
    return np.resize(x, n)


def snr_gain(signal_energy: float, noise_energy: float, snr_db: float) -> float:
    """Scale for the noise so that ``signal / (gain**2 * noise)`` equals ``snr_db``."""
    if signal_energy <= 0:
        raise ValueError("reference signal is silent (zero energy)")
    if noise_energy <= 0:
        raise ValueError("noise is silent (zero energy)")
    return float(np.sqrt(signal_energy / (noise_energy * 10.0 ** (snr_db / 10.0))))


def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float) -> Waveform:
    n = fit_length(noise.samples, len(clean))
    alpha = snr_gain(energy(clean.samples), energy(n), snr_db)
    return Waveform(clean.samples + alpha * n, clean.sample_rate)


def delay(x: np.ndarray, d: int) -> np.ndarray:
    """Shift right by ``d`` samples, zero-filling, keeping the length."""
    d = int(d)
    if d < 0:
        raise ValueError("delay must be non-negative")
    if d >= x.size:
        raise ValueError(f"delay {d} exceeds signal length {x.size}")
    out = np.zeros_like(x)
    out[d:] = x[: x.size - d]
    return out


@dataclass
class MixtureScene:
    clean: Waveform
    noise: Waveform
    snr_db: float
    channels: int = 1
    delays: Sequence[int] = (0,)
    gains: Sequence[float] = (1.0,)
    interferer: Optional[Waveform] = None
    sinr_db: Optional[float] = None
    interferer_delays: Optional[Sequence[int]] = None
    seed: int = 0

    def __post_init__(self):
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        self.delays = tuple(int(d) for d in _per_channel(self.delays, self.channels, "delays"))
        self.gains = tuple(float(g) for g in _per_channel(self.gains, self.channels, "gains"))
        if self.interferer_delays is None:
            self.interferer_delays = (0,) * self.channels
        self.interferer_delays = tuple(
            int(d) for d in _per_channel(self.interferer_delays, self.channels, "interferer_delays")
        )
        if any(d < 0 for d in self.delays + self.interferer_delays):
            raise ValueError("delays must be >= 0")
        if any(g <= 0 for g in self.gains):
            raise ValueError("gains must be > 0")
        if (self.interferer is None) != (self.sinr_db is None):
            raise ValueError("an interferer and sinr_db must be given together")
        if self.sinr_db is not None and self.sinr_db >= self.snr_db:
            raise ValueError(f"SINR {self.sinr_db} dB must be below SNR {self.snr_db} dB")


def _per_channel(values, channels: int, name: str):
    values = tuple(values)
    if len(values) == 1 and channels > 1:
        values = values * channels
    if len(values) != channels:
        raise ValueError(f"{name}: need {channels} values, got {len(values)}")
    return values


@dataclass
class ChannelComponents:
    speech: np.ndarray
    interference: np.ndarray
    noise: np.ndarray

    @property
    def mixture(self) -> np.ndarray:
        return self.speech + self.interference + self.noise


def channel_components(scene: MixtureScene) -> list[ChannelComponents]:
    """Per-channel speech, interference and noise before summation.

    Channel ``b`` carries ``gain_b * delay(clean, d_b)`` plus the delayed,
    gained interferer and its own copy of the noise (channel 0 uses the noise
    as given, later channels a seeded circular shift of it). Interference and
    noise are scaled per channel against that channel's speech energy.
    """
    n = len(scene.clean)
    rng = np.random.default_rng(scene.seed)
    base_noise = fit_length(scene.noise.samples, n)
    offsets = [0] + [int(rng.integers(n // 4, n - n // 4 + 1)) for _ in range(scene.channels - 1)]
    interf = None if scene.interferer is None else fit_length(scene.interferer.samples, n)
    out = []
    for b in range(scene.channels):
        speech = scene.gains[b] * delay(scene.clean.samples, scene.delays[b])
        es = energy(speech)
        noise = np.roll(base_noise, offsets[b])
        noise = snr_gain(es, energy(noise), scene.snr_db) * noise
        interference = np.zeros(n)
        if interf is not None:
            raw = scene.gains[b] * delay(interf, scene.interferer_delays[b])
            target = es / 10.0 ** (scene.sinr_db / 10.0) - energy(noise)
            interference = np.sqrt(target / energy(raw)) * raw
        out.append(ChannelComponents(speech, interference, noise))
    return out


def simulate_multichannel(scene: MixtureScene) -> list[Waveform]:
    rate = scene.clean.sample_rate
    return [Waveform(c.mixture, rate) for c in channel_components(scene)]


def reference_clean(scene: MixtureScene) -> Waveform:
    """Clean speech as received on the reference (first) channel."""
    return Waveform(scene.gains[0] * delay(scene.clean.samples, scene.delays[0]), scene.clean.sample_rate)


@dataclass
class SceneSpec:
    """Parsed scene description: source choices, geometry and dataset size."""

    clean: str = "synthetic"
    noise: str = "lowpass"
    interferer: str = "none"
    snr_db: Optional[float] = 5.0
    sinr_db: Optional[float] = None
    use_presets: bool = False
    channels: int = 1
    delays: tuple = (0,)
    gains: tuple = (1.0,)
    interferer_delays: tuple = (0,)
    duration: float = 2.0
    sample_rate: int = DEFAULT_SAMPLE_RATE
    noise_cutoff: float = 2000.0
    n_train: int = 8
    n_test: int = 2
    test_snr_db: Optional[float] = None
    seed: int = 0
    base_dir: Path = field(default_factory=Path)


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _opt_float(text: Optional[str]) -> Optional[float]:
    if text is None or text.strip().lower() in ("", "none"):
        return None
    return float(text)


def load_scene_spec(path) -> SceneSpec:
    """Parse an INI-style scene file with a ``[scene]`` section."""
    path = Path(path)
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise FileNotFoundError(f"scene file not found: {path}")
    if "scene" not in parser:
        raise ValueError(f"{path}: missing [scene] section")
    sec = parser["scene"]
    channels = sec.getint("channels", 1)
    snr = sec.get("snr_db", "5")
    spec = SceneSpec(
        clean=sec.get("clean", "synthetic"),
        noise=sec.get("noise", "lowpass"),
        interferer=sec.get("interferer", "none"),
        snr_db=None if snr.strip().lower() == "presets" else float(snr),
        sinr_db=_opt_float(sec.get("sinr_db")),
        use_presets=snr.strip().lower() == "presets",
        channels=channels,
        delays=tuple(int(v) for v in _floats(sec.get("delays", "0"))),
        gains=_floats(sec.get("gains", "1.0")),
        interferer_delays=tuple(int(v) for v in _floats(sec.get("interferer_delays", "0"))),
        duration=sec.getfloat("duration", 2.0),
        sample_rate=sec.getint("sample_rate", DEFAULT_SAMPLE_RATE),
        noise_cutoff=sec.getfloat("noise_cutoff", 2000.0),
        n_train=sec.getint("n_train", 8),
        n_test=sec.getint("n_test", 2),
        test_snr_db=_opt_float(sec.get("test_snr_db")),
        seed=sec.getint("seed", 0),
        base_dir=path.parent,
    )
    _per_channel(spec.delays, channels, "delays")
    _per_channel(spec.gains, channels, "gains")
    _per_channel(spec.interferer_delays, channels, "interferer_delays")
    return spec


def _source(choice: str, spec: SceneSpec, rng: np.random.Generator, role: str) -> Waveform:
    choice = choice.strip()
    if choice == "synthetic":
        return synth_speech(spec.duration, rng, spec.sample_rate)
    if role == "noise" and choice in NOISE_KINDS:
        return synth_noise(spec.duration, rng, choice, spec.sample_rate, spec.noise_cutoff)
    path = Path(choice)
    if not path.is_absolute():
        path = spec.base_dir / path
    if not path.exists():
        raise FileNotFoundError(f"{role} source not found: {path}")
    w = read_wav(path)[0]
    n = int(round(spec.duration * w.sample_rate))
    start = int(rng.integers(0, max(len(w) - n, 0) + 1))
    return Waveform(fit_length(w.samples[start:], n), w.sample_rate)


def make_scene(spec: SceneSpec, index: int, snr_db: float, sinr_db: Optional[float]) -> MixtureScene:
    """Draw the ``index``-th utterance scene; deterministic in ``(spec.seed, index)``."""
    rng = np.random.default_rng([spec.seed, index])
    clean = _source(spec.clean, spec, rng, "clean")
    noise = _source(spec.noise, spec, rng, "noise")
    interferer = None
    if spec.interferer.strip().lower() != "none" and sinr_db is not None:
        interferer = _source(spec.interferer, spec, rng, "interferer")
    else:
        sinr_db = None
    return MixtureScene(
        clean=clean,
        noise=noise,
        snr_db=snr_db,
        channels=spec.channels,
        delays=spec.delays,
        gains=spec.gains,
        interferer=interferer,
        sinr_db=sinr_db,
        interferer_delays=spec.interferer_delays,
        seed=int(rng.integers(2**31)),
    )


def conditions(spec: SceneSpec, count: int, offset: int = 0) -> list[tuple[float, Optional[float]]]:
    """(SNR, SINR) per utterance; presets are cycled so each level appears equally often."""
    if spec.use_presets:
        return [
            (SINR_SNR_PRESETS[(offset + i) % len(SINR_SNR_PRESETS)][1],
             SINR_SNR_PRESETS[(offset + i) % len(SINR_SNR_PRESETS)][0])
            for i in range(count)
        ]
    return [(spec.snr_db, spec.sinr_db)] * count
