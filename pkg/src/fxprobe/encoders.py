"""Encoders producing (frames x dims) embedding sequences, and the raw f32 exchange format."""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from fxprobe import _dsp
from fxprobe.audio_io import SAMPLE_RATE, AudioClip
from fxprobe.errors import CorruptionError, DataError, ValidationError
from fxprobe.rng import derive_rng

EXTERNAL_DTYPE = "f32le"
EXTERNAL_LAYOUT = "row-major frames×dims"


@dataclass
class EmbeddingSequence:
    data: np.ndarray
    frame_rate_hz: float
    encoder_id: str

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float32)
        if d.ndim != 2 or d.shape[0] < 1 or d.shape[1] < 1:
            raise ValidationError(f"embedding must be a non-empty 2-D matrix, got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValidationError("embedding contains non-finite values")
        self.data = d

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class EncoderConfig:
    kind: str = "mel"
    n_fft: int = 2048
    hop: int = 512
    n_mels: int = 32
    fmin: float = 20.0
    fmax: float = 24000.0
    log_floor: float = 1e-8
    dims: int = 32
    seed: int = 0
    directory: str | None = None

    def __post_init__(self):
        if self.kind not in ("mel", "random_projection", "external"):
            raise ValidationError(f"unknown encoder kind {self.kind!r}")
        if not 8 <= self.n_mels <= 256:
            raise ValidationError("n_mels must lie in [8, 256]")
        if self.hop < 1 or self.n_fft < 2 or self.log_floor <= 0:
            raise ValidationError("hop, n_fft and log_floor must be positive")
        if not 0 <= self.fmin < self.fmax <= SAMPLE_RATE / 2:
            raise ValidationError("need 0 <= fmin < fmax <= Nyquist")
        if self.kind == "random_projection" and self.dims < 1:
            raise ValidationError("random projection needs dims >= 1")
        if self.kind == "external" and not self.directory:
            raise ValidationError("external encoder needs a directory")

    @property
    def encoder_id(self) -> str:
        if self.kind == "mel":
            return f"mel{self.n_mels}"
        if self.kind == "random_projection":
            return f"rp{self.dims}-mel{self.n_mels}-s{self.seed}"
        return "external"

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**d)


# ------------------------------------------------------------ mel filterbank


def hz_to_mel(f):
    """Slaney mel scale: linear to 1 kHz, logarithmic above."""
    f = np.asarray(f, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = math.log(6.4) / 27.0
    lin = f / f_sp
    with np.errstate(divide="ignore"):
        log = min_log_mel + np.log(np.maximum(f, 1e-12) / min_log_hz) / logstep
    return np.where(f >= min_log_hz, log, lin)


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = math.log(6.4) / 27.0
    return np.where(m >= min_log_mel, min_log_hz * np.exp(logstep * (m - min_log_mel)), f_sp * m)


def mel_band_edges(n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    """``n_mels + 2`` Hz points; band ``i`` peaks at element ``i + 1``."""
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))


@functools.lru_cache(maxsize=16)
def mel_filterbank(n_mels: int, n_fft: int, fmin: float, fmax: float,
                   sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Area-normalised triangular filters, shape (n_mels, n_fft // 2 + 1)."""
    bins = np.linspace(0.0, sample_rate / 2, n_fft // 2 + 1)
    edges = mel_band_edges(n_mels, fmin, fmax)
    fdiff = np.diff(edges)
    ramps = edges[:, None] - bins[None, :]
    lower = -ramps[:-2] / fdiff[:-1, None]
    upper = ramps[2:] / fdiff[1:, None]
    weights = np.maximum(0.0, np.minimum(lower, upper))
    weights *= (2.0 / (edges[2:] - edges[:-2]))[:, None]
    weights.setflags(write=False)
    return weights


@functools.lru_cache(maxsize=16)
def projection_matrix(n_mels: int, dims: int, seed: int) -> np.ndarray:
    g = derive_rng(seed, "random-projection").normal(0.0, math.sqrt(1.0 / n_mels), (n_mels, dims))
    g.setflags(write=False)
    return g


def log_mel(clip: AudioClip, config: EncoderConfig) -> np.ndarray:
    n = clip.n_samples
    if n % config.hop:
        raise ValidationError(f"hop {config.hop} does not divide clip length {n}")
    mono = clip.samples.astype(np.float64).mean(axis=0)
    # frame t sits on the middle of hop block t, so the grid mirrors onto itself
    # under time reversal (up to one sample)
    spec = _dsp.stft(mono, config.n_fft, config.hop, n_frames=n // config.hop, offset=config.hop // 2)
    power = spec.real ** 2 + spec.imag ** 2
    fb = mel_filterbank(config.n_mels, config.n_fft, config.fmin, config.fmax, clip.sample_rate)
    return np.log10(fb @ power + config.log_floor).T


def encode(clip: AudioClip, config: EncoderConfig) -> EmbeddingSequence:
    """Embed a clip with the built-in mel or random-projection encoder."""
    if config.kind == "external":
        raise ValidationError("external embeddings are loaded with load_external, not encoded")
    feats = log_mel(clip, config)
    if config.kind == "random_projection":
        feats = feats @ projection_matrix(config.n_mels, config.dims, config.seed)
    return EmbeddingSequence(feats, clip.sample_rate / config.hop, config.encoder_id)


# ------------------------------------------------------ external exchange


def external_meta(dims: int, frame_rate_hz: float, encoder_id: str) -> dict:
    return {"dims": int(dims), "frame_rate_hz": float(frame_rate_hz), "encoder_id": encoder_id,
            "dtype": EXTERNAL_DTYPE, "layout": EXTERNAL_LAYOUT}


def write_meta(directory: str | Path, meta: dict) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    text = json.dumps(meta, indent=1, sort_keys=True, ensure_ascii=False) + "\n"
    (directory / "meta.json").write_text(text, encoding="utf-8")


def read_meta(directory: str | Path) -> dict:
    path = Path(directory) / "meta.json"
    if not path.is_file():
        raise DataError(f"{path} not found")
    meta = json.loads(path.read_text(encoding="utf-8"))
    missing = {"dims", "frame_rate_hz", "encoder_id"} - set(meta)
    if missing:
        raise DataError(f"meta.json lacks {sorted(missing)}")
    if meta.get("dtype", EXTERNAL_DTYPE) != EXTERNAL_DTYPE:
        raise DataError(f"unsupported dtype {meta['dtype']!r}")
    if int(meta["dims"]) < 1:
        raise DataError("dims must be >= 1")
    return meta


def write_sequence(directory: str | Path, clip_id: str, seq: EmbeddingSequence) -> Path:
    path = Path(directory) / f"{clip_id}.f32"
    path.write_bytes(np.ascontiguousarray(seq.data, dtype="<f4").tobytes())
    return path


def write_external(directory: str | Path, sequences: dict[str, EmbeddingSequence]) -> None:
    """Store sequences (all of equal width) in the exchange format."""
    if not sequences:
        raise DataError("nothing to write")
    first = next(iter(sequences.values()))
    if any(s.dims != first.dims for s in sequences.values()):
        raise DataError("sequences differ in width")
    write_meta(directory, external_meta(first.dims, first.frame_rate_hz, first.encoder_id))
    for clip_id, seq in sequences.items():
        write_sequence(directory, clip_id, seq)


def read_sequence(path: str | Path, meta: dict) -> EmbeddingSequence:
    raw = Path(path).read_bytes()
    dims = int(meta["dims"])
    if len(raw) == 0 or len(raw) % (4 * dims):
        raise CorruptionError(f"{path}: {len(raw)} bytes is not a whole number of {dims}-dim frames")
    data = np.frombuffer(raw, dtype="<f4").reshape(-1, dims)
    if not np.all(np.isfinite(data)):
        raise ValidationError(f"{path}: non-finite values")
    return EmbeddingSequence(data, float(meta["frame_rate_hz"]), str(meta["encoder_id"]))


def load_external(directory: str | Path) -> dict[str, EmbeddingSequence]:
    """Read every ``<clip_id>.f32`` in ``directory`` using its ``meta.json``."""
    directory = Path(directory)
    meta = read_meta(directory)
    return {p.stem: read_sequence(p, meta) for p in sorted(directory.glob("*.f32"))}
