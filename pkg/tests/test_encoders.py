import json

import numpy as np
import pytest
from conftest import sine, sine_clip
from hypothesis import given, settings
from hypothesis import strategies as st

from fxprobe import _dsp
from fxprobe.audio_io import CLIP_SAMPLES, AudioClip, synth_clip
from fxprobe.effects import TABLE1, EffectId, apply_effect
from fxprobe.encoders import (
    EmbeddingSequence,
    EncoderConfig,
    encode,
    external_meta,
    hz_to_mel,
    load_external,
    mel_band_edges,
    mel_filterbank,
    mel_to_hz,
    projection_matrix,
    write_external,
    write_meta,
)
from fxprobe.errors import CorruptionError, DataError, ValidationError
from fxprobe.represent import time_average

MEL = EncoderConfig()


def test_default_shape_and_frame_rate():
    seq = encode(synth_clip("piano-like", 0, 0), MEL)
    assert seq.data.shape == (512, 32)
    assert seq.data.size == 16384
    assert seq.frame_rate_hz == 48000 / 512
    assert seq.encoder_id == "mel32"


def test_silence_is_log_floor():
    seq = encode(AudioClip(np.zeros((2, 8192))), MEL)
    assert np.all(seq.data == np.float32(np.log10(1e-8)))


def test_sine_peaks_in_nearest_band():
    seq = encode(sine_clip(1000.0, 2048 * 48 / 48000 * 10), MEL).data
    centres = mel_band_edges(32, 20.0, 24000.0)[1:-1]
    expect = int(np.argmin(np.abs(centres - 1000.0)))
    interior = np.argmax(seq[4:-4], axis=1)
    assert np.all(interior == expect)


def test_hop_must_divide_length():
    with pytest.raises(ValidationError):
        encode(AudioClip(np.zeros((2, 1000))), MEL)


def test_bitwise_deterministic():
    clip = synth_clip("guitar-like", 3, 1)
    assert np.array_equal(encode(clip, MEL).data, encode(clip, MEL).data)


@pytest.mark.parametrize("kw", [dict(n_mels=7), dict(n_mels=257), dict(kind="cqt"), dict(fmax=30000.0),
                                dict(kind="external")])
def test_config_validation(kw):
    with pytest.raises(ValidationError):
        EncoderConfig(**kw)


def test_external_config_cannot_encode():
    with pytest.raises(ValidationError):
        encode(AudioClip(np.zeros((2, 512))), EncoderConfig(kind="external", directory="x"))


# ------------------------------------------------------------------ mel scale


def test_slaney_scale_anchors():
    assert hz_to_mel(1000.0) == pytest.approx(15.0)
    assert hz_to_mel(6400.0) == pytest.approx(42.0)
    assert hz_to_mel(200.0) == pytest.approx(3.0)
    f = np.array([20.0, 500.0, 999.0, 1000.0, 4000.0, 24000.0])
    np.testing.assert_allclose(mel_to_hz(hz_to_mel(f)), f, rtol=1e-12)


def test_filterbank_matches_loop_oracle():
    n_mels, n_fft = 16, 512
    edges = mel_band_edges(n_mels, 20.0, 24000.0)
    freqs = np.arange(n_fft // 2 + 1) * 48000 / n_fft
    oracle = np.zeros((n_mels, freqs.size))
    for i in range(n_mels):
        lo, mid, hi = edges[i], edges[i + 1], edges[i + 2]
        for j, f in enumerate(freqs):
            if lo < f <= mid:
                oracle[i, j] = (f - lo) / (mid - lo)
            elif mid < f < hi:
                oracle[i, j] = (hi - f) / (hi - mid)
        oracle[i] *= 2.0 / (hi - lo)
    np.testing.assert_allclose(mel_filterbank(n_mels, n_fft, 20.0, 24000.0), oracle, atol=1e-12)


@pytest.mark.parametrize("offset", [0, 8])
def test_stft_matches_direct_dft(offset):
    rng = np.random.default_rng(2)
    x = rng.normal(size=256)
    n_fft, hop = 64, 16
    got = _dsp.stft(x, n_fft, hop, n_frames=x.size // hop, offset=offset)
    assert got.shape[1] == x.size // hop
    pad = np.pad(x, n_fft // 2, mode="reflect")
    win = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n_fft) / n_fft)
    k = np.arange(n_fft // 2 + 1)[:, None]
    n = np.arange(n_fft)[None, :]
    basis = np.exp(-2j * np.pi * k * n / n_fft)
    for t in range(got.shape[1]):
        frame = pad[offset + t * hop:offset + t * hop + n_fft] * win
        np.testing.assert_allclose(got[:, t], basis @ frame, atol=1e-10)


def test_istft_inverts_stft():
    x = np.random.default_rng(5).normal(size=8192)
    y = _dsp.istft(_dsp.stft(x, 2048, 512), 512, x.size)
    np.testing.assert_allclose(y, x, atol=1e-9)


def test_resampler_against_analytic_sine():
    fs_in = 44100
    x = sine(3000.0, 0.5, 0.8, fs=fs_in)
    y = _dsp.resample(x, 48000 / fs_in)
    t = np.arange(y.size) / 48000
    ref = 0.8 * np.sin(2 * np.pi * 3000.0 * t)
    assert np.max(np.abs(y[200:-200] - ref[200:-200])) < 1e-3


# ------------------------------------------------------------ time reversal


@pytest.mark.parametrize("inst, idx", [("guitar-like", 0), ("piano-like", 1), ("guitar-like", 5)])
def test_time_average_quasi_invariant_to_reversal(inst, idx):
    clip = synth_clip(inst, 11, idx)
    a = time_average(encode(clip, MEL))
    b = time_average(encode(apply_effect(clip, TABLE1[EffectId.TRV]), MEL))
    assert np.linalg.norm(a - b) <= 1e-3 * np.linalg.norm(a)


# ------------------------------------------------------------ random projection


def test_projection_entries_have_variance_one_over_n_mels():
    g = projection_matrix(64, 256, 3)
    assert g.shape == (64, 256)
    assert np.var(g) == pytest.approx(1 / 64, rel=0.05)
    assert abs(np.mean(g)) < 0.01
    assert np.array_equal(g, projection_matrix(64, 256, 3))
    assert not np.array_equal(g, projection_matrix(64, 256, 4))


def test_projection_preserves_pairwise_distances():
    rng = np.random.default_rng(9)
    cfg = EncoderConfig(kind="random_projection", dims=32, seed=1)
    mel, proj = [], []
    for _ in range(100):
        tilt = rng.uniform(-1, 1)
        x = np.cumsum(rng.normal(size=8192)) * tilt + rng.normal(size=8192) * rng.uniform(0.01, 1)
        clip = AudioClip.from_mono(0.1 * x / np.max(np.abs(x)))
        m = encode(clip, MEL).data.ravel()
        p = encode(clip, cfg)
        assert p.encoder_id == "rp32-mel32-s1"
        mel.append(m)
        proj.append(p.data.ravel())
    mel, proj = np.array(mel, dtype=np.float64), np.array(proj, dtype=np.float64)
    iu = np.triu_indices(100, 1)
    d1 = np.linalg.norm(mel[:, None] - mel[None], axis=-1)[iu]
    d2 = np.linalg.norm(proj[:, None] - proj[None], axis=-1)[iu]
    assert np.corrcoef(d1, d2)[0, 1] > 0.9


# ------------------------------------------------------------ external format


def _write_raw(directory, dims, arrays):
    write_meta(directory, external_meta(dims, 93.75, "ext"))
    for name, a in arrays.items():
        (directory / f"{name}.f32").write_bytes(np.asarray(a, dtype="<f4").tobytes())


def test_external_shapes(tmp_path):
    _write_raw(tmp_path, 32, {"a": np.zeros(16384)})
    assert load_external(tmp_path)["a"].data.shape == (512, 32)
    d2 = tmp_path / "d"
    d2.mkdir()
    _write_raw(d2, 64, {"b": np.zeros(131072)})
    assert load_external(d2)["b"].data.shape == (2048, 64)


def test_external_truncated_and_nan(tmp_path):
    _write_raw(tmp_path, 32, {"a": np.zeros(100)})
    with pytest.raises(CorruptionError):
        load_external(tmp_path)
    bad = np.zeros(64)
    bad[5] = np.nan
    _write_raw(tmp_path, 32, {"a": bad})
    with pytest.raises(ValidationError):
        load_external(tmp_path)


def test_external_meta_checks(tmp_path):
    with pytest.raises(DataError):
        load_external(tmp_path)
    (tmp_path / "meta.json").write_text(json.dumps({"dims": 4}))
    with pytest.raises(DataError):
        load_external(tmp_path)


def test_meta_keys(tmp_path):
    meta = external_meta(32, 93.75, "mel32")
    assert meta == {"dims": 32, "frame_rate_hz": 93.75, "encoder_id": "mel32",
                    "dtype": "f32le", "layout": "row-major frames×dims"}


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 20), st.integers(1, 12), st.integers(0, 2 ** 32 - 1))
def test_write_load_bit_exact(tmp_path_factory, t, d, seed):
    directory = tmp_path_factory.mktemp("ext")
    data = np.random.default_rng(seed).normal(size=(t, d)).astype(np.float32)
    seq = EmbeddingSequence(data, 93.75, "mel32")
    write_external(directory, {"c0": seq})
    back = load_external(directory)["c0"]
    assert np.array_equal(back.data, data)
    assert back.frame_rate_hz == 93.75 and back.encoder_id == "mel32"


def test_encoded_clip_roundtrip(tmp_path):
    seq = encode(synth_clip("guitar-like", 0, 2), MEL)
    write_external(tmp_path, {"g_CLN": seq})
    assert np.array_equal(load_external(tmp_path)["g_CLN"].data, seq.data)
    assert (tmp_path / "g_CLN.f32").stat().st_size == 4 * 16384
    assert CLIP_SAMPLES // MEL.hop == 512
