"""Waveform containers, STFT analysis/synthesis and WAV I/O."""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.io.wavfile
import scipy.signal

from .errors import InvalidConfig, InvalidInput

WINDOWS = ("hann", "hamming", "blackman")


@dataclass(frozen=True)
class WaveTensor:
    """Multichannel time-domain audio, shape ``(channels, samples)``."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[0] < 1:
            raise InvalidInput(f"samples must be (channels, samples), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise InvalidInput("samples contain non-finite values")
        if int(self.sample_rate) <= 0:
            raise InvalidInput("sample_rate must be positive")
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class StftConfig:
    fft_size: int = 1024
    hop: int = 512
    window: str = "hann"

    def __post_init__(self):
        n, h = int(self.fft_size), int(self.hop)
        if n <= 0 or n & (n - 1):
            raise InvalidConfig(f"fft_size must be a power of two, got {n}")
        if h <= 0 or h > n or n % h:
            raise InvalidConfig(f"hop {h} must divide fft_size {n}")
        if self.window not in WINDOWS:
            raise InvalidConfig(f"unknown window {self.window!r}; expected one of {WINDOWS}")
        if not scipy.signal.check_COLA(self.window_array(), n, n - h):
            raise InvalidConfig(f"{self.window} window with hop {h} is not COLA")

    def window_array(self) -> np.ndarray:
        return scipy.signal.get_window(self.window, int(self.fft_size), fftbins=True)

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1


@dataclass(frozen=True)
class Spectrogram:
    """One-sided complex STFT, shape ``(channels, bins, frames)``."""

    bins: np.ndarray
    hop: int
    window_len: int
    sample_rate: int

    def __post_init__(self):
        b = np.asarray(self.bins)
        if b.ndim != 3:
            raise InvalidInput(f"bins must be (channels, I, J), got {b.shape}")
        if b.shape[1] != self.window_len // 2 + 1:
            raise InvalidInput("bin count does not match window_len")
        object.__setattr__(self, "bins", b.astype(complex, copy=False))

    @property
    def shape(self):
        return self.bins.shape


def n_frames(n_samples: int, cfg: StftConfig) -> int:
    """Frame count for a signal padded by one window length at each end."""
    return -(-(n_samples + 2 * cfg.fft_size) // cfg.hop)


def stft(wave: WaveTensor, cfg: StftConfig = StftConfig()) -> Spectrogram:
    x = wave.samples
    if x.shape[1] == 0:
        raise InvalidInput("cannot transform an empty signal")
    n, h = cfg.fft_size, cfg.hop
    J = n_frames(x.shape[1], cfg)
    total = (J - 1) * h + n
    padded = np.zeros((x.shape[0], total))
    padded[:, n : n + x.shape[1]] = x
    frames = np.lib.stride_tricks.sliding_window_view(padded, n, axis=1)[:, ::h]
    spec = np.fft.rfft(frames * cfg.window_array(), axis=-1)
    return Spectrogram(spec.transpose(0, 2, 1), h, n, wave.sample_rate)


def istft(spec: Spectrogram, cfg: StftConfig, out_len: int) -> WaveTensor:
    """Weighted overlap-add inverse of :func:`stft`.

    Each frame is multiplied by the synthesis window and the sum is divided
    by the accumulated squared window, which inverts :func:`stft` exactly.
    """
    n, h = cfg.fft_size, cfg.hop
    X = spec.bins
    if X.shape[1] != cfg.n_bins or spec.hop != h or spec.window_len != n:
        raise InvalidInput("spectrogram does not match the STFT configuration")
    if out_len < 0:
        raise InvalidInput("out_len must be non-negative")
    C, _, J = X.shape
    w = cfg.window_array()
    frames = np.fft.irfft(X.transpose(0, 2, 1), n=n, axis=-1) * w
    total = (J - 1) * h + n
    out = np.zeros((C, total))
    norm = np.zeros(total)
    for j in range(J):
        out[:, j * h : j * h + n] += frames[:, j]
        norm[j * h : j * h + n] += w**2
    end = min(total, n + out_len)
    y = np.zeros((C, out_len))
    valid = norm[n:end] > 1e-12
    seg = np.zeros((C, end - n))
    seg[:, valid] = out[:, n:end][:, valid] / norm[n:end][valid]
    y[:, : end - n] = seg
    return WaveTensor(y, spec.sample_rate)


def read_wav(path: str | os.PathLike) -> WaveTensor:
    """Read a PCM16 / PCM32 / float WAV file into a float WaveTensor."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    rate, data = scipy.io.wavfile.read(path)
    if data.dtype == np.int16:
        data = data / 32768.0
    elif data.dtype == np.int32:
        data = data / 2147483648.0
    elif data.dtype == np.uint8:
        data = (data.astype(float) - 128.0) / 128.0
    data = np.asarray(data, dtype=float)
    data = data[None, :] if data.ndim == 1 else data.T
    return WaveTensor(data, rate)


def read_wavs(paths: Sequence[str | os.PathLike]) -> WaveTensor:
    """Read several WAV files and stack their channels.

    All files must share one sample rate; lengths are zero-padded to the
    longest file.
    """
    waves = [read_wav(p) for p in paths]
    if not waves:
        raise InvalidInput("no WAV files given")
    rates = {w.sample_rate for w in waves}
    if len(rates) > 1:
        raise InvalidInput(f"sample-rate mismatch across files: {sorted(rates)}")
    length = max(w.n_samples for w in waves)
    rows = [np.pad(w.samples, ((0, 0), (0, length - w.n_samples))) for w in waves]
    return WaveTensor(np.concatenate(rows, axis=0), waves[0].sample_rate)


def write_wav(path: str | os.PathLike, wave: WaveTensor, subtype: str = "float") -> None:
    """Write ``wave`` as IEEE float32 (``subtype="float"``) or PCM16."""
    data = wave.samples.T
    if subtype == "float":
        data = data.astype(np.float32)
    elif subtype == "pcm16":
        data = np.clip(np.round(data * 32767.0), -32768, 32767).astype(np.int16)
    else:
        raise InvalidInput(f"unsupported WAV subtype {subtype!r}")
    scipy.io.wavfile.write(path, wave.sample_rate, data)
