"""Audio-effect probing of latent audio representations."""

from fxprobe.audio_io import AudioClip, read_wav, slice_clips, synth_corpus, write_wav
from fxprobe.effects import EffectId, EffectSpec, SweepSpec, apply_effect, sweep_specs
from fxprobe.encoders import EmbeddingSequence, EncoderConfig, encode, load_external
from fxprobe.loudness import integrated_loudness, normalize_loudness

__version__ = "0.1.0"

__all__ = [
    "AudioClip",
    "read_wav",
    "write_wav",
    "slice_clips",
    "synth_corpus",
    "EffectId",
    "EffectSpec",
    "SweepSpec",
    "apply_effect",
    "sweep_specs",
    "EmbeddingSequence",
    "EncoderConfig",
    "encode",
    "load_external",
    "integrated_loudness",
    "normalize_loudness",
]
