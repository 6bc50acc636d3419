"""Gated integrated loudness (BS.1770-4) and loudness normalisation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from fxprobe.audio_io import AudioClip
from fxprobe.errors import LoudnessError

TARGET_LUFS = -23.0

# K-weighting at 48 kHz: high-shelf stage then RLB high-pass stage.
SHELF_B = np.array([1.53512485958697, -2.69169618940638, 1.19839281085285])
SHELF_A = np.array([1.0, -1.69065929318241, 0.73248077421585])
HIGHPASS_B = np.array([1.0, -2.0, 1.0])
HIGHPASS_A = np.array([1.0, -1.99004745483398, 0.99007225036621])

BLOCK_S = 0.4
OVERLAP = 0.75
ABS_GATE = -70.0
REL_GATE = -10.0


@dataclass(frozen=True)
class LoudnessReport:
    integrated_lufs: float
    gated_block_count: int


def k_weight(x: np.ndarray) -> np.ndarray:
    return lfilter(HIGHPASS_B, HIGHPASS_A, lfilter(SHELF_B, SHELF_A, x, axis=-1), axis=-1)


def _block_loudness(power: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return -0.691 + 10.0 * np.log10(power)


def integrated_loudness(clip: AudioClip) -> LoudnessReport:
    """Gated integrated loudness of a stereo clip (channel weights 1, 1)."""
    fs = clip.sample_rate
    block = int(round(BLOCK_S * fs))
    step = int(round(block * (1.0 - OVERLAP)))
    n = clip.n_samples
    if n < block:
        raise LoudnessError(f"clip of {n} samples is shorter than one {block}-sample block")
    y = k_weight(clip.samples.astype(np.float64))
    n_blocks = (n - block) // step + 1
    csum = np.concatenate([np.zeros((y.shape[0], 1)), np.cumsum(y * y, axis=1)], axis=1)
    starts = np.arange(n_blocks) * step
    z = (csum[:, starts + block] - csum[:, starts]) / block
    power = z.sum(axis=0)
    lk = _block_loudness(power)

    gated = lk > ABS_GATE
    if not np.any(gated):
        return LoudnessReport(float("-inf"), 0)
    rel = _block_loudness(power[gated].mean()) + REL_GATE
    gated &= lk > rel
    if not np.any(gated):
        return LoudnessReport(float("-inf"), 0)
    return LoudnessReport(float(_block_loudness(power[gated].mean())), int(gated.sum()))


def normalize_loudness(clip: AudioClip, target_lufs: float = TARGET_LUFS) -> AudioClip:
    """Apply one uniform gain so the clip measures ``target_lufs``."""
    level = integrated_loudness(clip).integrated_lufs
    if not np.isfinite(level):
        raise LoudnessError("cannot normalise a silent clip")
    gain = 10.0 ** ((target_lufs - level) / 20.0)
    return AudioClip(clip.samples.astype(np.float64) * gain, clip.sample_rate)
