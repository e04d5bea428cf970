"""Waveforms -> normalized LPS regression data -> enhanced waveform."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ttnet.audio.features import (
    FeatureGeometry,
    FeatureMatrix,
    NormStats,
    RegressionDataset,
    Spectrogram,
    build_dataset,
    concat_datasets,
    istft,
    lps,
    lps_invert,
    normalize,
    stack_inputs,
    stft,
)
from ttnet.audio.wavio import Waveform
from ttnet.nn import Network, count_params, load_network, save_network
from ttnet.tensor import ShapeError
from ttnet.tt import ModeFactorization


@dataclass
class PipelineStats:
    """Per-bin statistics: ``input`` from noisy channels, ``target`` from clean references."""

    input: NormStats
    target: NormStats


def analyze(waveforms: Sequence[Waveform]) -> tuple[list[Spectrogram], list[FeatureMatrix]]:
    specs = [stft(w) for w in waveforms]
    return specs, [lps(s) for s in specs]


def fit_stats(noisy_sets: Sequence[Sequence[Waveform]], clean_refs: Sequence[Waveform]) -> PipelineStats:
    """Fit normalization on a training partition; all noisy channels share one set of statistics."""
    noisy = np.concatenate([f.values for chans in noisy_sets for f in analyze(chans)[1]])
    clean = np.concatenate([analyze([c])[1][0].values for c in clean_refs])
    return PipelineStats(NormStats.fit(noisy), NormStats.fit(clean))


def utterance_dataset(
    noisy: Sequence[Waveform],
    clean_ref: Waveform,
    stats: PipelineStats,
    geometry: FeatureGeometry,
    fact: Optional[ModeFactorization] = None,
) -> RegressionDataset:
    _, feats = analyze(noisy)
    normed = [normalize(f, stats.input)[0] for f in feats]
    target = normalize(analyze([clean_ref])[1][0], stats.target)[0]
    ds = build_dataset(normed, target, geometry, fact)
    if ds.dc_channel is not None:
        ds.dc_channel = feats[0].values[:, 0].copy()
    return ds


def corpus_dataset(pairs, stats: PipelineStats, geometry: FeatureGeometry,
                   fact: Optional[ModeFactorization] = None) -> RegressionDataset:
    """Concatenate :func:`utterance_dataset` over ``(noisy_channels, clean_ref)`` pairs."""
    return concat_datasets([utterance_dataset(n, c, stats, geometry, fact) for n, c in pairs])


def _check_geometry(net, geometry: FeatureGeometry) -> None:
    if net.input_dim != geometry.input_dim or net.output_dim != geometry.output_dim:
        raise ShapeError(
            f"network {net.input_dim}->{net.output_dim} does not match feature geometry "
            f"{geometry.input_dim}->{geometry.output_dim}"
        )


def enhance_features(net, noisy_lps: Sequence[FeatureMatrix], stats: PipelineStats,
                     geometry: FeatureGeometry) -> FeatureMatrix:
    """Enhanced reference-channel LPS (all bins).

    Regressed bins come from the network; every other bin, including DC in tt
    mode, is copied unchanged from the noisy reference channel.
    """
    _check_geometry(net, geometry)
    normed = [normalize(f, stats.input)[0] for f in noisy_lps]
    pred = np.asarray(net.predict(stack_inputs(normed, geometry)), dtype=np.float64)
    bins = geometry.bins
    pred = pred * stats.target.std[bins] + stats.target.mean[bins]
    out = noisy_lps[0].values.copy()
    out[:, bins] = pred
    return FeatureMatrix(out)


def enhance(net, noisy: Sequence[Waveform], stats: PipelineStats, geometry: FeatureGeometry) -> Waveform:
    """Enhance the reference channel using the noisy reference phase."""
    specs, feats = analyze(noisy)
    enhanced = enhance_features(net, feats, stats, geometry)
    return istft(lps_invert(enhanced, specs[0]))


@dataclass
class EnhancementModel:
    network: Network
    geometry: FeatureGeometry
    stats: PipelineStats
    name: str = "model"

    @property
    def n_params(self) -> int:
        return count_params(self.network)

    def enhance(self, noisy: Sequence[Waveform]) -> Waveform:
        return enhance(self.network, noisy, self.stats, self.geometry)

    def save(self, path) -> None:
        save_network(
            path,
            self.network,
            meta={"name": self.name, "geometry": self.geometry.to_dict()},
            extra={
                "input_mean": self.stats.input.mean,
                "input_std": self.stats.input.std,
                "target_mean": self.stats.target.mean,
                "target_std": self.stats.target.std,
            },
        )

    @classmethod
    def load(cls, path) -> "EnhancementModel":
        net, meta, extra = load_network(path)
        if "geometry" not in meta:
            raise ValueError(f"{path}: checkpoint has no feature geometry")
        stats = PipelineStats(
            NormStats(extra["input_mean"], extra["input_std"]),
            NormStats(extra["target_mean"], extra["target_std"]),
        )
        geometry = FeatureGeometry(**meta["geometry"])
        _check_geometry(net, geometry)
        return cls(net, geometry, stats, meta.get("name", "model"))

