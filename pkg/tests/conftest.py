import numpy as np
import pytest

from wattsplit.core import CURRENT, VOLTAGE, Waveform

FS = 10_000.0
F0 = 50.0
V_RMS = 230.0


def sine_wave(amplitude, freq, fs, duration, phase=0.0, kind=CURRENT):
    t = np.arange(int(round(fs * duration))) / fs
    return Waveform(amplitude * np.sin(2 * np.pi * freq * t + phase), fs, kind)


def mains_sine(fs=FS, duration=1.0, v_rms=V_RMS, freq=F0):
    return sine_wave(np.sqrt(2) * v_rms, freq, fs, duration, kind=VOLTAGE)


@pytest.fixture
def voltage_1s():
    return mains_sine()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
