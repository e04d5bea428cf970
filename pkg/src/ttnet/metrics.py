"""Waveform and feature-domain quality measures."""
from __future__ import annotations

import numpy as np

from ttnet.nn import mse_loss

SI_SDR_CAP = 100.0


def _pair(estimate, reference) -> tuple[np.ndarray, np.ndarray]:
    est = np.asarray(getattr(estimate, "samples", estimate), dtype=np.float64)
    ref = np.asarray(getattr(reference, "samples", reference), dtype=np.float64)
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: {est.shape} vs {ref.shape}")
    return est, ref


def si_sdr(estimate, reference) -> float:
    """Scale-invariant SDR in dB, capped at +100 dB."""
    est, ref = _pair(estimate, reference)
    ref_energy = float(np.dot(ref, ref))
    if ref_energy <= 0:
        raise ValueError("si_sdr: reference has zero energy")
    target = (np.dot(est, ref) / ref_energy) * ref
    residual = target - est
    num = float(np.dot(target, target))
    den = float(np.dot(residual, residual))
    if den <= 0 or num / den > 10.0 ** (SI_SDR_CAP / 10.0):
        return SI_SDR_CAP
    if num <= 0:
        return -SI_SDR_CAP
    return 10.0 * np.log10(num / den)


def segmental_snr(estimate, reference, frame: int = 256, floor: float = -10.0, ceil: float = 35.0,
                  silence: float = 1e-10) -> float:
    """Mean per-frame SNR clamped to [floor, ceil]; frames with reference energy <= ``silence`` are skipped."""
    est, ref = _pair(estimate, reference)
    n = ref.size // frame
    ref_f = ref[: n * frame].reshape(n, frame)
    err_f = (ref - est)[: n * frame].reshape(n, frame)
    sig = np.sum(ref_f**2, axis=1)
    err = np.sum(err_f**2, axis=1)
    keep = sig > silence
    if not np.any(keep):
        raise ValueError("segmental_snr: every reference frame is silent")
    sig, err = sig[keep], err[keep]
    with np.errstate(divide="ignore"):
        snr = np.where(err > 0, 10.0 * np.log10(sig / np.where(err > 0, err, 1.0)), ceil)
    return float(np.mean(np.clip(snr, floor, ceil)))


def feature_mse(pred, clean) -> float:
    return mse_loss(getattr(pred, "values", pred), getattr(clean, "values", clean))
