from ttnet.audio.features import (
    FeatureGeometry,
    FeatureMatrix,
    NormStats,
    RegressionDataset,
    Spectrogram,
    build_dataset,
    denormalize,
    istft,
    lps,
    lps_invert,
    normalize,
    stft,
)
from ttnet.audio.pipeline import EnhancementModel, PipelineStats, enhance, enhance_features, fit_stats
from ttnet.audio.scene import MixtureScene, mix_at_snr, simulate_multichannel, synth_noise, synth_speech
from ttnet.audio.wavio import Waveform, WavFormatError, read_wav, write_wav
