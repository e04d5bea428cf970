"""Desk-scale parameter/quality trade-off: dense baseline vs TT networks.

Synthetic harmonic "speech" is mixed with band-limited noise, the low bins of
the reference channel are regressed from noisy context windows, and each model
is scored by SI-SDR and segmental SNR on held-out mixtures. Every random draw
derives from ``ExperimentConfig.seed``, so a rerun reproduces the loss traces
and the table bit for bit.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from ttnet.audio.features import FeatureGeometry
from ttnet.audio.pipeline import EnhancementModel, corpus_dataset, fit_stats
from ttnet.audio.scene import MixtureScene, SpeakerProfile, reference_clean, simulate_multichannel, synth_noise, synth_speech
from ttnet.compression import compress_network, finetune
from ttnet.metrics import segmental_snr, si_sdr
from ttnet.nn import Network, TrainConfig, build_network, count_params, mlp, train

log = logging.getLogger(__name__)


@dataclass
class ExperimentConfig:
    channels: tuple = (1, 2)
    n_train: int = 240
    n_test: int = 10
    duration: float = 2.0
    train_snr_db: tuple = (5.0,)
    test_snr_db: float = 5.0
    noise_cutoff: float = 1500.0
    # channel b > 0 is delayed and attenuated relative to the reference
    delays: tuple = (0, 3)
    gains: tuple = (1.0, 0.9)
    f0_range: tuple = (110.0, 150.0)
    glide: float = 0.1
    context: int = 2
    max_bin: int = 64
    hidden: int = 256
    n_hidden: int = 3
    small_rank: int = 8
    large_rank: int = 32
    tt_inner: int = 4
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 2e-4
    seed: int = 0
    dtype: str = "float32"
    svd_baseline: bool = False

    def train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size, epochs=self.epochs,
                           seed=self.seed, dtype=self.dtype)


@dataclass
class ResultRow:
    model: str
    channels: int
    params: int
    si_sdr: float
    seg_snr: float
    losses: list = field(default_factory=list)
    seconds: float = 0.0


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list

    def row(self, model: str, channels: int) -> ResultRow:
        for r in self.rows:
            if r.model == model and r.channels == channels:
                return r
        raise KeyError((model, channels))

    def table(self) -> str:
        return format_table(self.rows)

    def to_dict(self) -> dict:
        return {"config": asdict(self.config), "rows": [asdict(r) for r in self.rows]}


def format_table(rows) -> str:
    lines = ["model\tchannels\tparams\tsi_sdr_db\tseg_snr_db"]
    for r in rows:
        lines.append(f"{r.model}\t{r.channels}\t{r.params}\t{r.si_sdr:.4f}\t{r.seg_snr:.4f}")
    return "\n".join(lines) + "\n"


def make_corpus(cfg: ExperimentConfig, channels: int, count: int, offset: int, snrs) -> list:
    """``(noisy_channels, clean_reference)`` pairs; utterance ``i`` depends only on ``(seed, offset + i)``."""
    speaker = SpeakerProfile(f0_range=tuple(cfg.f0_range), glide=cfg.glide)
    pairs = []
    for i in range(count):
        rng = np.random.default_rng([cfg.seed, offset + i])
        clean = synth_speech(cfg.duration, rng, speaker=speaker)
        noise = synth_noise(cfg.duration, rng, "lowpass", cutoff=cfg.noise_cutoff)
        scene = MixtureScene(clean, noise, snrs[i % len(snrs)], channels=channels,
                             delays=cfg.delays[:channels], gains=cfg.gains[:channels], seed=offset + i)
        pairs.append((simulate_multichannel(scene), reference_clean(scene)))
    return pairs


def tt_modes(in_dim: int, hidden: int, inner: int) -> tuple:
    """Two-core mode pairs ``(in_dim / inner, inner) -> (inner, hidden / inner)``.

    A two-core layer costs about ``rank * inner * (in_dim + hidden)`` multiply-adds
    per row, so a small ``inner`` keeps the rank affordable.
    """
    if in_dim % inner or hidden % inner:
        raise ValueError(f"inner mode {inner} must divide {in_dim} and {hidden}")
    return (in_dim // inner, inner), (inner, hidden // inner)


def dense_model(cfg: ExperimentConfig, geometry: FeatureGeometry) -> Network:
    dims = [geometry.input_dim] + [cfg.hidden] * cfg.n_hidden + [geometry.output_dim]
    return mlp(dims, cfg.seed)


def tt_model(cfg: ExperimentConfig, geometry: FeatureGeometry, rank: int) -> Network:
    """TT hidden layers (two cores each) with a dense output layer."""
    specs = []
    width = geometry.input_dim
    for _ in range(cfg.n_hidden):
        in_modes, out_modes = tt_modes(width, cfg.hidden, cfg.tt_inner)
        specs.append(dict(kind="tt", input_modes=in_modes, output_modes=out_modes, ranks=(1, rank, 1)))
        width = cfg.hidden
    specs.append(dict(kind="dense", in_dim=cfg.hidden, out_dim=geometry.output_dim, activation="identity"))
    return build_network(specs, cfg.seed)


def evaluate_model(model: EnhancementModel, pairs) -> tuple[float, float]:
    sd, seg = [], []
    for noisy, clean in pairs:
        out = model.enhance(noisy)
        sd.append(si_sdr(out, clean))
        seg.append(segmental_snr(out, clean))
    return float(np.mean(sd)), float(np.mean(seg))


def noisy_scores(pairs) -> tuple[float, float]:
    return (float(np.mean([si_sdr(n[0], c) for n, c in pairs])),
            float(np.mean([segmental_snr(n[0], c) for n, c in pairs])))


def run_experiment(cfg: ExperimentConfig, progress: Optional[Callable[[ResultRow], None]] = None,
                   models: Optional[dict] = None) -> ExperimentResult:
    """Train and score every model for every channel count.

    Rows are ``noisy`` (unprocessed reference channel), ``dense``,
    ``ttn-r{small}``, ``ttn-r{large}`` and optionally ``svd`` (the dense model
    factored to the small TTN's budget and fine-tuned). Trained models are
    stored in ``models`` keyed by ``(name, channels)`` when a dict is given.
    """
    rows = []
    tcfg = cfg.train_config()

    def emit(row):
        rows.append(row)
        log.info("%s B=%d params=%d si_sdr=%.3f seg_snr=%.3f (%.0fs)", row.model, row.channels, row.params,
                 row.si_sdr, row.seg_snr, row.seconds)
        if progress is not None:
            progress(row)

    for b in cfg.channels:
        train_pairs = make_corpus(cfg, b, cfg.n_train, 0, cfg.train_snr_db)
        test_pairs = make_corpus(cfg, b, cfg.n_test, 1_000_000, (cfg.test_snr_db,))
        stats = fit_stats([p[0] for p in train_pairs], [p[1] for p in train_pairs])
        emit(ResultRow("noisy", b, 0, *noisy_scores(test_pairs)))

        candidates = [("dense", "dense", lambda g: dense_model(cfg, g))]
        for rank in (cfg.small_rank, cfg.large_rank):
            candidates.append((f"ttn-r{rank}", "tt", lambda g, r=rank: tt_model(cfg, g, r)))
        datasets = {}
        for name, mode, build in candidates:
            geometry = FeatureGeometry(context=cfg.context, channels=b, mode=mode, max_bin=cfg.max_bin)
            if mode not in datasets:
                datasets[mode] = corpus_dataset(train_pairs, stats, geometry)
            ds = datasets[mode]
            net = build(geometry)
            start = time.perf_counter()
            res = train(net, ds.inputs, ds.targets, tcfg)
            model = EnhancementModel(net, geometry, stats, name)
            sd, seg = evaluate_model(model, test_pairs)
            emit(ResultRow(name, b, count_params(net), sd, seg, res.losses, time.perf_counter() - start))
            if models is not None:
                models[(name, b)] = model
            if name == "dense" and cfg.svd_baseline:
                tt_geometry = FeatureGeometry(context=cfg.context, channels=b, mode="tt", max_bin=cfg.max_bin)
                budget = count_params(tt_model(cfg, tt_geometry, cfg.small_rank))
                start = time.perf_counter()
                small = compress_network(net, budget)
                res = finetune(small, ds.inputs, ds.targets, tcfg)
                svd_model = EnhancementModel(small, geometry, stats, "svd")
                sd, seg = evaluate_model(svd_model, test_pairs)
                emit(ResultRow("svd", b, count_params(small), sd, seg, res.losses, time.perf_counter() - start))
                if models is not None:
                    models[("svd", b)] = svd_model
    return ExperimentResult(cfg, rows)


@dataclass
class Verdict:
    name: str
    passed: bool
    detail: str


def judge(result: ExperimentResult) -> list[Verdict]:
    """Check the relative claims: gain over noisy, small TTN near dense, large TTN matching dense."""
    cfg = result.config
    small, large = f"ttn-r{cfg.small_rank}", f"ttn-r{cfg.large_rank}"
    out = []
    for b in cfg.channels:
        noisy = result.row("noisy", b).si_sdr
        dense = result.row("dense", b)
        s, l = result.row(small, b), result.row(large, b)
        out.append(Verdict(f"B={b} param budgets", s.params <= 0.25 * dense.params and l.params <= 0.75 * dense.params,
                           f"{small} {s.params / dense.params:.1%}, {large} {l.params / dense.params:.1%} of dense"))
        gains = {m.model: m.si_sdr - noisy for m in (dense, s)}
        out.append(Verdict(f"B={b} gain >= 3 dB", min(gains.values()) >= 3.0,
                           ", ".join(f"{k} {v:+.2f} dB" for k, v in gains.items())))
        out.append(Verdict(f"B={b} small TTN >= dense - 1 dB", s.si_sdr >= dense.si_sdr - 1.0,
                           f"{small} {s.si_sdr:.2f} vs dense {dense.si_sdr:.2f}"))
        out.append(Verdict(f"B={b} large TTN >= dense - 0.2 dB", l.si_sdr >= dense.si_sdr - 0.2,
                           f"{large} {l.si_sdr:.2f} vs dense {dense.si_sdr:.2f}"))
    return out
