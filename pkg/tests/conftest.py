import numpy as np
import pytest

from fxprobe.audio_io import SAMPLE_RATE, AudioClip


def sine(freq, seconds=1.0, amp=0.5, fs=SAMPLE_RATE, phase=0.0):
    t = np.arange(int(round(seconds * fs))) / fs
    return amp * np.sin(2 * np.pi * freq * t + phase)


def sine_clip(freq, seconds=1.0, amp=0.5):
    return AudioClip.from_mono(sine(freq, seconds, amp))


def peak_freq(x, fs=SAMPLE_RATE):
    """Dominant frequency with parabolic interpolation on the log magnitude."""
    x = np.asarray(x, dtype=np.float64)
    spec = np.abs(np.fft.rfft(x * np.hanning(x.size)))
    k = int(np.argmax(spec[1:-1])) + 1
    a, b, c = np.log(spec[k - 1:k + 2] + 1e-300)
    offset = 0.5 * (a - c) / (a - 2 * b + c)
    return (k + offset) * fs / x.size


def rms_db(x):
    return 10 * np.log10(np.mean(np.square(x)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
