"""The ten effect classes (nine manipulations plus clean bypass) and parameter sweeps."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from fxprobe import _dsp
from fxprobe.audio_io import AudioClip
from fxprobe.errors import ValidationError


class EffectId(str, enum.Enum):
    CHS = "CHS"
    CLN = "CLN"
    CMP = "CMP"
    DLY = "DLY"
    DIS = "DIS"
    HPF = "HPF"
    LPF = "LPF"
    PS = "PS"
    RVB = "RVB"
    TRV = "TRV"


# Column order of the classification report.
CLASS_ORDER = [e.value for e in EffectId]
MANIPULATIONS = [e for e in EffectId if e is not EffectId.CLN]

DEFAULTS: dict[EffectId, dict[str, float]] = {
    EffectId.CLN: {},
    EffectId.TRV: {},
    EffectId.CHS: {"rate_hz": 1.0, "depth": 0.25, "centre_delay_ms": 7.0, "feedback": 0.0, "mix": 0.5},
    EffectId.CMP: {"threshold_db": -50.0, "ratio": 5.0, "attack_ms": 1.0, "release_ms": 100.0},
    EffectId.DLY: {"delay_s": 0.5, "feedback": 0.0, "mix": 0.5},
    EffectId.DIS: {"drive_db": 25.0},
    EffectId.HPF: {"cutoff_hz": 2000.0},
    EffectId.LPF: {"cutoff_hz": 70.0},
    EffectId.PS: {"semitones": 4.0},
    EffectId.RVB: {"room_size": 0.8, "damping": 0.5, "wet": 0.33, "dry": 0.4, "width": 1.0},
}

# The parameter whose value is recorded for each effect in manifests.
KEY_PARAM = {
    EffectId.CHS: "rate_hz",
    EffectId.CMP: "threshold_db",
    EffectId.DLY: "delay_s",
    EffectId.DIS: "drive_db",
    EffectId.HPF: "cutoff_hz",
    EffectId.LPF: "cutoff_hz",
    EffectId.PS: "semitones",
    EffectId.RVB: "room_size",
}


@dataclass(frozen=True)
class EffectSpec:
    id: EffectId
    params: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "id", EffectId(self.id))
        unknown = set(self.params) - set(DEFAULTS[self.id])
        if unknown:
            raise ValidationError(f"{self.id.value}: unknown parameters {sorted(unknown)}")
        merged = {**DEFAULTS[self.id], **{k: float(v) for k, v in self.params.items()}}
        object.__setattr__(self, "params", merged)
        _validate(self.id, merged)

    @property
    def key_value(self) -> float | None:
        name = KEY_PARAM.get(self.id)
        return None if name is None else self.params[name]

    def to_dict(self) -> dict:
        return {"id": self.id.value, "params": dict(sorted(self.params.items()))}

    @classmethod
    def from_dict(cls, d: dict) -> "EffectSpec":
        return cls(EffectId(d["id"]), dict(d.get("params", {})))


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ValidationError(msg)


def _validate(eid: EffectId, p: dict[str, float]) -> None:
    for k, v in p.items():
        _check(math.isfinite(v), f"{eid.value}.{k} must be finite")
    if "cutoff_hz" in p:
        _check(0.0 < p["cutoff_hz"] < 24000.0, "cutoff_hz must lie in (0, 24000)")
    if "ratio" in p:
        _check(p["ratio"] >= 1.0, "ratio must be >= 1")
    if "room_size" in p:
        _check(0.0 <= p["room_size"] <= 1.0, "room_size must lie in [0, 1]")
    if "mix" in p:
        _check(0.0 <= p["mix"] <= 1.0, "mix must lie in [0, 1]")
    if "feedback" in p:
        _check(abs(p["feedback"]) < 1.0, "feedback magnitude must be < 1")
    if eid is EffectId.CHS:
        _check(p["rate_hz"] >= 0 and 0 <= p["depth"] < 1 and p["centre_delay_ms"] > 0,
               "chorus needs rate >= 0, depth in [0, 1), centre delay > 0")
    if eid is EffectId.CMP:
        _check(p["attack_ms"] > 0 and p["release_ms"] > 0, "attack/release must be positive")
    if eid is EffectId.DLY:
        _check(p["delay_s"] > 0, "delay_s must be positive")
    if eid is EffectId.RVB:
        _check(0 <= p["damping"] <= 1 and 0 <= p["width"] <= 1, "damping and width lie in [0, 1]")


TABLE1: dict[EffectId, EffectSpec] = {e: EffectSpec(e) for e in EffectId}


def classification_specs() -> list[EffectSpec]:
    """The fixed settings used for the 10-way classification corpus."""
    return [TABLE1[e] for e in EffectId]


# ---------------------------------------------------------------- effect DSP


def _one_pole_coeff(cutoff_hz: float, fs: int) -> float:
    return math.exp(-2.0 * math.pi * cutoff_hz / fs)


def _lpf(x, p, fs):
    a = _one_pole_coeff(p["cutoff_hz"], fs)
    return lfilter([1.0 - a], [1.0, -a], x, axis=-1)


def highpass_coeffs(cutoff_hz: float, fs: int) -> tuple[float, float]:
    """Bilinear one-pole highpass: ``y[n] = g (x[n] - x[n-1]) + p y[n-1]``.

    Exactly -3.01 dB at the cutoff for every cutoff below Nyquist.
    """
    k = math.tan(math.pi * cutoff_hz / fs)
    pole = (1.0 - k) / (1.0 + k)
    return (1.0 + pole) / 2.0, pole


def _hpf(x, p, fs):
    g, pole = highpass_coeffs(p["cutoff_hz"], fs)
    return lfilter([g, -g], [1.0, -pole], x, axis=-1)


# largest float32 below 1, so stored samples stay strictly inside (-1, 1)
_BELOW_ONE = float(np.nextafter(np.float32(1.0), np.float32(0.0)))


def _distortion(x, p, fs):
    y = np.tanh(10.0 ** (p["drive_db"] / 20.0) * x)
    return np.clip(y, -_BELOW_ONE, _BELOW_ONE)


def _chorus(x, p, fs):
    n = x.shape[-1]
    t = np.arange(n) / fs
    d0 = p["centre_delay_ms"] * 1e-3 * fs
    delay = d0 * (1.0 + p["depth"] * np.sin(2.0 * np.pi * p["rate_hz"] * t))
    wet = _dsp.feedback_delay(x, np.maximum(delay, 1.0), p["feedback"])
    return (1.0 - p["mix"]) * x + p["mix"] * wet


def _delay(x, p, fs):
    d = np.full(x.shape[-1], p["delay_s"] * fs)
    wet = _dsp.feedback_delay(x, d, p["feedback"])
    return (1.0 - p["mix"]) * x + p["mix"] * wet


def compressor_envelope(level_db: np.ndarray, attack_ms: float, release_ms: float, fs: int) -> np.ndarray:
    """One-pole attack/release smoothing of a detector level in dB."""
    aa = math.exp(-1.0 / (attack_ms * 1e-3 * fs))
    ar = math.exp(-1.0 / (release_ms * 1e-3 * fs))
    out = np.empty(level_db.size)
    env = float(level_db[0]) if level_db.size else 0.0
    for i, lvl in enumerate(level_db.tolist()):
        if lvl > env:
            env = aa * env + (1.0 - aa) * lvl
        else:
            env = ar * env + (1.0 - ar) * lvl
        out[i] = env
    return out


def _compressor(x, p, fs):
    peak = np.max(np.abs(x), axis=0)
    level = 20.0 * np.log10(np.maximum(peak, 1e-6))
    env = compressor_envelope(level, p["attack_ms"], p["release_ms"], fs)
    thr, ratio = p["threshold_db"], p["ratio"]
    gain_db = np.where(env > thr, thr + (env - thr) / ratio - env, 0.0)
    return x * 10.0 ** (gain_db / 20.0)


PV_FFT = 2048
PV_HOP = 512


def _pitch_shift(x, p, fs):
    r = 2.0 ** (p["semitones"] / 12.0)
    n = x.shape[-1]
    if r == 1.0:
        return x.copy()
    stretched_len = int(round(n * r))
    # doubled-mono input: process one channel
    chans = x[:1] if np.array_equal(x[0], x[1]) else x
    stretched = np.stack([
        _dsp.istft(_dsp.phase_vocoder(_dsp.stft(c, PV_FFT, PV_HOP), 1.0 / r, PV_HOP),
                   PV_HOP, stretched_len)
        for c in chans])
    y = _dsp.resample(stretched, 1.0 / r, out_len=n)
    return np.broadcast_to(y, x.shape).copy()


FREEVERB_COMBS = (1116, 1188, 1277, 1356, 1422, 1491, 1557, 1617)
FREEVERB_ALLPASSES = (556, 441, 341, 225)
FREEVERB_SPREAD = 23
FREEVERB_INPUT_GAIN = 0.015
FREEVERB_ALLPASS_GAIN = 0.5


def freeverb_tunings(fs: int = 48000) -> tuple[list[int], list[int]]:
    scale = fs / 44100.0
    return ([int(round(d * scale)) for d in FREEVERB_COMBS],
            [int(round(d * scale)) for d in FREEVERB_ALLPASSES])


def _reverb(x, p, fs):
    combs, allpasses = freeverb_tunings(fs)
    feedback = 0.28 * p["room_size"] + 0.7
    damp = 0.4 * p["damping"]
    mono = (x[0] + x[1]) * FREEVERB_INPUT_GAIN
    wet = []
    for offset in (0, FREEVERB_SPREAD):
        acc = np.zeros_like(mono)
        for d in combs:
            acc += _dsp.lowpass_comb(mono, d + offset, feedback, damp)
        for d in allpasses:
            acc = _dsp.schroeder_allpass(acc, d + offset, FREEVERB_ALLPASS_GAIN)
        wet.append(acc)
    w1 = p["wet"] * (p["width"] / 2.0 + 0.5)
    w2 = p["wet"] * ((1.0 - p["width"]) / 2.0)
    left = w1 * wet[0] + w2 * wet[1]
    right = w1 * wet[1] + w2 * wet[0]
    return p["dry"] * x + np.stack([left, right])


_KERNELS = {
    EffectId.CLN: lambda x, p, fs: x.copy(),
    EffectId.TRV: lambda x, p, fs: x[:, ::-1].copy(),
    EffectId.CHS: _chorus,
    EffectId.CMP: _compressor,
    EffectId.DLY: _delay,
    EffectId.DIS: _distortion,
    EffectId.HPF: _hpf,
    EffectId.LPF: _lpf,
    EffectId.PS: _pitch_shift,
    EffectId.RVB: _reverb,
}


def apply_effect(clip: AudioClip, spec: EffectSpec) -> AudioClip:
    """Render ``spec`` on ``clip``; the output has the input's length."""
    if clip.sample_rate != 48000:
        raise ValidationError("effects expect 48 kHz audio")
    if spec.id is EffectId.TRV:
        return AudioClip(clip.samples[:, ::-1].copy(), clip.sample_rate)
    if spec.id is EffectId.CLN:
        return AudioClip(clip.samples.copy(), clip.sample_rate)
    x = clip.samples.astype(np.float64)
    y = _KERNELS[spec.id](x, spec.params, clip.sample_rate)
    return AudioClip(y, clip.sample_rate)


# -------------------------------------------------------------------- sweeps


@dataclass(frozen=True)
class SweepSpec:
    id: EffectId
    param: str
    min: float
    max: float
    steps: int = 32
    scale: str = "linear"

    def __post_init__(self):
        object.__setattr__(self, "id", EffectId(self.id))
        if self.param not in DEFAULTS[self.id]:
            raise ValidationError(f"{self.id.value} has no parameter {self.param!r}")
        if self.scale not in ("linear", "log"):
            raise ValidationError(f"unknown sweep scale {self.scale!r}")
        if self.steps < 2:
            raise ValidationError("a sweep needs at least 2 steps")
        if self.scale == "log" and self.min <= 0:
            raise ValidationError("log sweep requires min > 0")

    def values(self) -> np.ndarray:
        i = np.arange(self.steps) / (self.steps - 1)
        if self.scale == "log":
            return self.min * (self.max / self.min) ** i
        return self.min + i * (self.max - self.min)

    def to_dict(self) -> dict:
        return {"id": self.id.value, "param": self.param, "min": self.min, "max": self.max,
                "steps": self.steps, "scale": self.scale}

    @classmethod
    def from_dict(cls, d: dict) -> "SweepSpec":
        return cls(EffectId(d["id"]), d["param"], float(d["min"]), float(d["max"]),
                   int(d.get("steps", 32)), d.get("scale", "linear"))


TABLE2 = [
    SweepSpec(EffectId.DIS, "drive_db", 0.0, 30.0),
    SweepSpec(EffectId.RVB, "room_size", 0.01, 0.99),
    SweepSpec(EffectId.HPF, "cutoff_hz", 50.0, 10000.0, scale="log"),
    SweepSpec(EffectId.LPF, "cutoff_hz", 50.0, 10000.0, scale="log"),
]


def sweep_specs(sweep: SweepSpec) -> list[EffectSpec]:
    """One EffectSpec per sweep step; other parameters keep their defaults."""
    return [EffectSpec(sweep.id, {sweep.param: float(v)}) for v in sweep.values()]
