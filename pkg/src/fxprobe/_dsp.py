"""Shared signal-processing kernels: sinc resampling, STFT framing and
block-vectorised recursive delay lines."""

import functools

import numpy as np
from scipy.signal import get_window, lfilter
from scipy.special import i0

SINC_TAPS = 64
KAISER_BETA = 8.6


PHASES = 4096


@functools.lru_cache(maxsize=8)
def sinc_table(cutoff: float, taps: int = SINC_TAPS, beta: float = KAISER_BETA) -> np.ndarray:
    """Kaiser-windowed sinc sampled at ``PHASES + 1`` fractional offsets per tap.

    Row ``p`` holds the kernel for input position ``base + p / PHASES``; the
    columns are taps ``base - half + 1 .. base + half``.
    """
    half = taps // 2
    offsets = np.arange(-half + 1, half + 1)
    frac = np.arange(PHASES + 1) / PHASES
    dist = frac[:, None] - offsets[None, :]
    u = np.clip(dist / half, -1.0, 1.0)
    window = i0(beta * np.sqrt(1.0 - u * u)) / i0(beta)
    table = cutoff * np.sinc(cutoff * dist) * window
    table.setflags(write=False)
    return table


def resample(x: np.ndarray, ratio: float, out_len: int | None = None,
             taps: int = SINC_TAPS, beta: float = KAISER_BETA) -> np.ndarray:
    """Resample the last axis of ``x`` by ``ratio`` (= fs_out / fs_in).

    Each output sample is a ``taps``-point Kaiser-windowed sinc interpolation
    around its fractional input position; kernel values come from a polyphase
    table, linearly interpolated between phases. When downsampling the kernel
    cutoff follows the output Nyquist frequency.
    """
    x = np.asarray(x, dtype=np.float64)
    n_in = x.shape[-1]
    if out_len is None:
        out_len = int(round(n_in * ratio))
    table = sinc_table(min(1.0, ratio), taps, beta)
    half = taps // 2
    offsets = np.arange(-half + 1, half + 1)
    flat = x.reshape(-1, n_in)
    padded = np.pad(flat, ((0, 0), (half, half + 1)))
    out = np.empty((flat.shape[0], out_len))
    chunk = 32768
    for start in range(0, out_len, chunk):
        m = np.arange(start, min(start + chunk, out_len))
        pos = m / ratio
        base = np.floor(pos).astype(np.int64)
        ph = (pos - base) * PHASES
        p0 = np.minimum(ph.astype(np.int64), PHASES - 1)
        w = (ph - p0)[:, None]
        h = (1.0 - w) * table[p0] + w * table[p0 + 1]
        src = np.clip(base[:, None] + offsets[None, :], -half, n_in + half) + half
        out[:, m] = np.einsum("mk,cmk->cm", h, padded[:, src])
    return out.reshape(x.shape[:-1] + (out_len,))


def hann(n_fft: int) -> np.ndarray:
    return get_window("hann", n_fft, fftbins=True)


def stft(x: np.ndarray, n_fft: int, hop: int, n_frames: int | None = None,
         offset: int = 0) -> np.ndarray:
    """Centered STFT of a 1-D signal with reflection padding.

    Returns complex array (n_fft // 2 + 1, frames). Frame ``t`` is centred on
    sample ``offset + t * hop``.
    """
    pad = n_fft // 2
    xp = np.pad(x, pad, mode="reflect")
    frames = np.lib.stride_tricks.sliding_window_view(xp, n_fft)[offset::hop]
    if n_frames is not None:
        frames = frames[:n_frames]
    return np.fft.rfft(frames * hann(n_fft), axis=-1).T


def istft(spec: np.ndarray, hop: int, length: int) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft`."""
    n_fft = 2 * (spec.shape[0] - 1)
    win = hann(n_fft)
    frames = np.fft.irfft(spec.T, n=n_fft, axis=-1) * win
    n_frames = frames.shape[0]
    total = n_fft + hop * (n_frames - 1)
    y = np.zeros(total)
    wsum = np.zeros(total)
    for t in range(n_frames):
        s = t * hop
        y[s:s + n_fft] += frames[t]
        wsum[s:s + n_fft] += win * win
    y = np.where(wsum > 1e-10, y / np.maximum(wsum, 1e-10), 0.0)
    pad = n_fft // 2
    y = y[pad:pad + length]
    if y.size < length:
        y = np.pad(y, (0, length - y.size))
    return y


def phase_vocoder(spec: np.ndarray, rate: float, hop: int) -> np.ndarray:
    """Time-scale a complex STFT by ``rate`` (< 1 stretches).

    Magnitudes are linearly interpolated between analysis frames; phases are
    propagated from the per-bin instantaneous frequency.
    """
    n_bins, n_frames = spec.shape
    n_fft = 2 * (n_bins - 1)
    steps = np.arange(0.0, n_frames, rate)
    padded = np.concatenate([spec, np.zeros((n_bins, 2), dtype=spec.dtype)], axis=1)
    i0 = steps.astype(np.int64)
    alpha = steps - i0
    c0 = padded[:, i0]
    c1 = padded[:, i0 + 1]
    mag = (1.0 - alpha) * np.abs(c0) + alpha * np.abs(c1)
    expected = 2.0 * np.pi * hop * np.arange(n_bins) / n_fft
    dphi = np.angle(c1) - np.angle(c0) - expected[:, None]
    dphi -= 2.0 * np.pi * np.round(dphi / (2.0 * np.pi))
    inc = expected[:, None] + dphi
    phase = np.angle(spec[:, :1]) + np.concatenate(
        [np.zeros((n_bins, 1)), np.cumsum(inc[:, :-1], axis=1)], axis=1)
    return mag * np.exp(1j * phase)


def _interp(buf: np.ndarray, pos: np.ndarray) -> np.ndarray:
    """Linear interpolation of ``buf`` (channels, n) at fractional ``pos``; zero outside."""
    n = buf.shape[-1]
    i0 = np.floor(pos).astype(np.int64)
    frac = pos - i0
    i1 = i0 + 1
    v0 = np.where((i0 >= 0) & (i0 < n), buf[:, np.clip(i0, 0, n - 1)], 0.0)
    v1 = np.where((i1 >= 0) & (i1 < n), buf[:, np.clip(i1, 0, n - 1)], 0.0)
    return (1.0 - frac) * v0 + frac * v1


def feedback_delay(x: np.ndarray, delay: np.ndarray, feedback: float) -> np.ndarray:
    """Delayed signal of a (possibly modulated) feedback delay line.

    ``v[n] = x[n] + feedback * v(n - delay[n])``; returns ``v(n - delay[n])``.
    ``delay`` is in samples (>= 1), one value per sample.
    """
    n = x.shape[-1]
    pos = np.arange(n) - delay
    if feedback == 0.0:
        return _interp(x, pos)
    v = np.zeros_like(x)
    wet = np.zeros_like(x)
    block = max(1, int(np.floor(delay.min())) - 1)
    for s in range(0, n, block):
        e = min(s + block, n)
        tap = _interp(v, pos[s:e])
        wet[:, s:e] = tap
        v[:, s:e] = x[:, s:e] + feedback * tap
    return wet


def lowpass_comb(x: np.ndarray, delay: int, feedback: float, damp: float) -> np.ndarray:
    """Freeverb comb: delay line whose feedback path runs through a one-pole lowpass."""
    n = x.size
    w = np.zeros(n)
    out = np.zeros(n)
    f_last = 0.0
    b, a = [1.0 - damp], [1.0, -damp]
    for s in range(0, n, delay):
        e = min(s + delay, n)
        lo = s - delay
        prev = np.zeros(e - s)
        if lo + (e - s) > 0:
            src = w[max(lo, 0):lo + (e - s)]
            prev[(e - s) - src.size:] = src
        f, _ = lfilter(b, a, prev, zi=[damp * f_last])
        f_last = f[-1]
        out[s:e] = prev
        w[s:e] = x[s:e] + feedback * f
    return out


def schroeder_allpass(x: np.ndarray, delay: int, gain: float) -> np.ndarray:
    """Freeverb allpass: ``v[n] = x[n] + g v[n-D]``, ``y[n] = v[n-D] - x[n]``."""
    n = x.size
    v = np.zeros(n)
    delayed = np.zeros(n)
    for s in range(0, n, delay):
        e = min(s + delay, n)
        lo = s - delay
        prev = np.zeros(e - s)
        if lo + (e - s) > 0:
            src = v[max(lo, 0):lo + (e - s)]
            prev[(e - s) - src.size:] = src
        delayed[s:e] = prev
        v[s:e] = x[s:e] + gain * prev
    return delayed - x
