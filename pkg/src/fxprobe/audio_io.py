"""Audio buffers, WAV I/O, clip slicing and the synthetic two-instrument corpus."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.io import wavfile

from fxprobe._dsp import resample
from fxprobe.errors import (
    DataError,
    UnsupportedFormatError,
    ValidationError,
    WavFormatError,
)
from fxprobe.rng import derive_rng

SAMPLE_RATE = 48000
CLIP_SAMPLES = 2 ** 18

_PCM = 0x0001
_FLOAT = 0x0003
_EXTENSIBLE = 0xFFFE

INSTRUMENTS = ("guitar-like", "piano-like", "external")
SPLITS = ("train", "val", "test")


@dataclass
class AudioClip:
    """Stereo float32 buffer of shape (2, n) at 48 kHz."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float32)
        if s.ndim != 2 or s.shape[0] != 2:
            raise ValidationError(f"AudioClip needs shape (2, n), got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ValidationError("AudioClip samples must be finite")
        self.samples = s

    @classmethod
    def from_mono(cls, mono: np.ndarray, sample_rate: int = SAMPLE_RATE) -> "AudioClip":
        mono = np.asarray(mono, dtype=np.float32)
        return cls(np.stack([mono, mono]), sample_rate)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate


# --------------------------------------------------------------------------- WAV


def _parse_chunks(data: bytes) -> dict[bytes, bytes]:
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavFormatError("missing RIFF/WAVE header")
    chunks = {}
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack("<I", data[pos + 4:pos + 8])
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size and cid != b"data":
            raise WavFormatError(f"chunk {cid!r} truncated")
        chunks.setdefault(cid, body)
        pos += 8 + size + (size & 1)
    return chunks


def read_wav(path: str | Path) -> AudioClip:
    """Decode a PCM16, PCM24 or float32 WAV file into a 48 kHz stereo clip.

    Mono input is doubled to two identical channels. Other sample rates are
    converted with the windowed-sinc resampler.
    """
    data = Path(path).read_bytes()
    chunks = _parse_chunks(data)
    if b"fmt " not in chunks or b"data" not in chunks:
        raise WavFormatError("WAV lacks fmt or data chunk")
    fmt = chunks[b"fmt "]
    if len(fmt) < 16:
        raise WavFormatError("fmt chunk too short")
    tag, channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", fmt[:16])
    if tag == _EXTENSIBLE and len(fmt) >= 26:
        (tag,) = struct.unpack("<H", fmt[24:26])
    if channels < 1 or rate < 1 or block_align != channels * bits // 8:
        raise WavFormatError("inconsistent fmt chunk")
    if channels > 2:
        raise UnsupportedFormatError(f"{channels}-channel audio is not supported")

    raw = chunks[b"data"]
    raw = raw[: len(raw) - len(raw) % block_align]
    if tag == _PCM and bits == 16:
        x = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    elif tag == _PCM and bits == 24:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        v = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        v = (v << 8) >> 8
        x = v.astype(np.float64) / 8388608.0
    elif tag == _FLOAT and bits == 32:
        x = np.frombuffer(raw, dtype="<f4")
    else:
        raise UnsupportedFormatError(f"format tag {tag:#x} with {bits} bits is not supported")

    x = x.reshape(-1, channels).T
    if channels == 1:
        x = np.concatenate([x, x], axis=0)
    if rate != SAMPLE_RATE:
        x = resample(x, SAMPLE_RATE / rate)
    return AudioClip(x)


def write_wav(clip: AudioClip, path: str | Path) -> None:
    """Write ``clip`` as a 48 kHz IEEE float32 stereo WAV (values are not clipped)."""
    path = Path(path)
    if str(path) in ("", "."):
        raise FileNotFoundError("empty output path")
    wavfile.write(path, clip.sample_rate, np.ascontiguousarray(clip.samples.T, dtype=np.float32))


def slice_clips(clip: AudioClip, length_samples: int) -> list[AudioClip]:
    """Cut consecutive non-overlapping windows; a short trailing remainder is dropped."""
    if length_samples < 1:
        raise ValidationError("length_samples must be >= 1")
    n = clip.n_samples // length_samples
    return [AudioClip(clip.samples[:, i * length_samples:(i + 1) * length_samples].copy(),
                      clip.sample_rate) for i in range(n)]


# ------------------------------------------------------------------ synthesis


def midi_to_hz(note: float) -> float:
    return 440.0 * 2.0 ** ((note - 69) / 12.0)


def karplus_strong(freq: float, n_samples: int, rng: np.random.Generator,
                   decay: float = 0.998, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Plucked string: a noise burst recirculated through an averaging delay loop."""
    period = max(2, int(round(sample_rate / freq)))
    y = np.zeros(n_samples + period + 1)
    y[1:period + 1] = rng.uniform(-1.0, 1.0, period)
    # y[n] = decay * (y[n-P] + y[n-P-1]) / 2, evaluated a period at a time
    for s in range(period + 1, y.size, period):
        e = min(s + period, y.size)
        y[s:e] = 0.5 * decay * (y[s - period:e - period] + y[s - period - 1:e - period - 1])
    return y[1:n_samples + 1]


def piano_note(freq: float, n_samples: int, decay_s: float = 0.8,
               sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Additive tone: partials f..4f, amplitudes 1, 1/2, 1/4, 1/8, exponential decay.

    Partial ``k`` decays ``k`` times faster than the fundamental.
    """
    t = np.arange(n_samples) / sample_rate
    y = np.zeros(n_samples)
    for k in range(1, 5):
        if k * freq >= sample_rate / 2:
            break
        y += 0.5 ** (k - 1) * np.exp(-t * k / decay_s) * np.sin(2 * np.pi * k * freq * t)
    attack = min(n_samples, int(0.005 * sample_rate))
    y[:attack] *= np.linspace(0.0, 1.0, attack, endpoint=False)
    return y


RELEASE_S = 2.0


def _onsets(rng: np.random.Generator, lo: float, hi: float, n_samples: int) -> list[int]:
    """Onset times with uniform gaps in [lo, hi) seconds, first at 0, all before ``n_samples``."""
    onsets = [0]
    while True:
        nxt = onsets[-1] + int(rng.uniform(lo, hi) * SAMPLE_RATE)
        if nxt >= n_samples:
            return onsets
        onsets.append(nxt)


def synth_guitar(rng: np.random.Generator, n_samples: int = CLIP_SAMPLES) -> np.ndarray:
    """Strummed plucked-string phrase, pitches E2..E5.

    Each onset strums 3 to 6 strings 10 ms apart; strings are damped at the
    next onset. No onsets fall in the final ``RELEASE_S`` seconds, so every
    phrase ends by ringing out.
    """
    out = np.zeros(n_samples)
    last = max(1, n_samples - int(RELEASE_S * SAMPLE_RATE))
    onsets = _onsets(rng, 0.1, 0.3, last)
    fade = int(0.05 * SAMPLE_RATE)
    stagger = int(0.01 * SAMPLE_RATE)
    for i, start in enumerate(onsets):
        end = onsets[i + 1] + fade if i + 1 < len(onsets) else n_samples
        end = min(end, n_samples)
        for k in range(rng.integers(3, 7)):
            s = start + k * stagger
            if s >= end:
                break
            note = rng.integers(40, 77)
            amp = rng.uniform(0.5, 1.0)
            y = amp * karplus_strong(midi_to_hz(note), end - s, rng)
            if i + 1 < len(onsets):
                tail = min(fade, y.size)
                y[-tail:] *= np.linspace(1.0, 0.0, tail)
            out[s:end] += y
    return out


def synth_piano(rng: np.random.Generator, n_samples: int = CLIP_SAMPLES) -> np.ndarray:
    """Chordal additive phrase over the full keyboard (A0..C8), 2 to 5 notes per onset.

    Notes ring for up to 4 s; like the guitar phrase, the last ``RELEASE_S``
    seconds hold no onsets.
    """
    out = np.zeros(n_samples)
    ring = int(4.0 * SAMPLE_RATE)
    last = max(1, n_samples - int(RELEASE_S * SAMPLE_RATE))
    for start in _onsets(rng, 0.08, 0.25, last):
        for _ in range(rng.integers(2, 6)):
            note = rng.integers(21, 109)
            amp = rng.uniform(0.4, 1.0)
            length = min(ring, n_samples - start)
            out[start:start + length] += amp * piano_note(midi_to_hz(note), length)
    return out


def _peak_normalize(x: np.ndarray, peak: float = 0.5) -> np.ndarray:
    m = np.max(np.abs(x))
    return x * (peak / m) if m > 0 else x


def synth_clip(instrument: str, seed: int, index: int) -> AudioClip:
    """One deterministic corpus source clip (2^18 samples, doubled mono)."""
    rng = derive_rng(seed, f"synth-{instrument}", index)
    if instrument == "guitar-like":
        mono = synth_guitar(rng)
    elif instrument == "piano-like":
        mono = synth_piano(rng)
    else:
        raise ValidationError(f"unknown synthetic instrument {instrument!r}")
    return AudioClip.from_mono(_peak_normalize(mono))


# ------------------------------------------------------------------- manifest


@dataclass
class ManifestEntry:
    clip_id: str
    source: str
    instrument: str
    effect: str
    param_value: float | None
    split: str
    spec: dict | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["spec"] is None:
            del d["spec"]
        return d


@dataclass
class CorpusManifest:
    entries: list[ManifestEntry]
    seed: int
    extra: dict = field(default_factory=dict)

    def validate(self, classification: bool = False) -> None:
        ids = [e.clip_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate clip_id in manifest")
        splits: dict[str, str] = {}
        effects: dict[str, set] = {}
        for e in self.entries:
            if e.instrument not in INSTRUMENTS:
                raise DataError(f"{e.clip_id}: unknown instrument {e.instrument!r}")
            if e.split not in SPLITS:
                raise DataError(f"{e.clip_id}: unknown split {e.split!r}")
            if splits.setdefault(e.source, e.split) != e.split:
                raise DataError(f"source {e.source} spans several splits")
            effects.setdefault(e.source, set()).add(e.effect)
        if classification:
            from fxprobe.effects import EffectId

            full = {x.value for x in EffectId}
            for src, got in effects.items():
                if got != full:
                    raise DataError(f"source {src} lacks effects {sorted(full - got)}")

    def to_json(self) -> str:
        doc = {"seed": self.seed, **self.extra, "entries": [e.to_dict() for e in self.entries]}
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "CorpusManifest":
        doc = json.loads(text)
        entries = [ManifestEntry(**e) for e in doc.pop("entries")]
        seed = doc.pop("seed")
        return cls(entries, seed, doc)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "CorpusManifest":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def assign_splits(groups: Iterable[tuple[str, list[str]]], seed: int,
                  fractions=(0.8, 0.1, 0.1)) -> dict[str, str]:
    """Shuffle source ids within each stratum and cut 80/10/10.

    ``groups`` yields (stratum, source ids). Val and test get at least one
    source each whenever a stratum has three or more.
    """
    out = {}
    for stratum, ids in groups:
        ids = list(ids)
        order = derive_rng(seed, f"split-{stratum}").permutation(len(ids))
        n = len(ids)
        n_val = int(round(fractions[1] * n))
        n_test = int(round(fractions[2] * n))
        if n >= 3:
            n_val, n_test = max(1, n_val), max(1, n_test)
        n_train = n - n_val - n_test
        for rank, i in enumerate(order):
            out[ids[i]] = "train" if rank < n_train else ("val" if rank < n_train + n_val else "test")
    return out


def synth_corpus(n_per_instrument: int, seed: int, out_dir: str | Path) -> CorpusManifest:
    """Write ``2 * n_per_instrument`` synthetic source WAVs and return their manifest.

    Files go to ``out_dir/<clip_id>.wav``; manifest paths are relative to
    ``out_dir``. Entries carry effect ``CLN`` and a grouped 80/10/10 split.
    """
    if n_per_instrument < 1:
        raise ValidationError("n_per_instrument must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for instrument, prefix in (("guitar-like", "g"), ("piano-like", "p")):
        for i in range(n_per_instrument):
            clip_id = f"{prefix}{i:04d}"
            write_wav(synth_clip(instrument, seed, i), out_dir / f"{clip_id}.wav")
            rows.append((clip_id, instrument))
    splits = assign_splits(
        [(inst, [c for c, k in rows if k == inst]) for inst in ("guitar-like", "piano-like")], seed)
    entries = [ManifestEntry(c, f"{c}.wav", k, "CLN", None, splits[c]) for c, k in rows]
    return CorpusManifest(entries, seed)
