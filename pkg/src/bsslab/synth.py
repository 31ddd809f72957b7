"""Synthetic source signals with low-rank power spectrograms."""
from __future__ import annotations

import numpy as np

from .errors import InvalidInput
from .signal import WaveTensor

RECIPES = ("am_harmonic", "mod_noise")


def _envelopes(rng, count, n_samples, fs, rate=8.0, gate=0.6):
    """Positive envelopes, one row per component, under a shared gate.

    A common on/off pattern (syllable-like) multiplies smooth per-component
    levels, so components of one source start and stop together.
    """
    n_ctrl = int(np.ceil(n_samples / fs * rate)) + 2
    common = (rng.uniform(size=n_ctrl) < gate) * (0.5 + rng.uniform(size=n_ctrl))
    own = np.abs(rng.normal(size=(count, n_ctrl))) + 0.1
    t_ctrl = np.arange(n_ctrl) / rate
    t = np.arange(n_samples) / fs
    return np.stack([np.interp(t, t_ctrl, common * c) for c in own])


def _harmonic_tone(rng, f0, n_samples, fs, fmax):
    n_harm = int(fmax // f0)
    h = np.arange(1, n_harm + 1)
    amps = rng.uniform(0.3, 1.0, size=n_harm) / np.sqrt(h)
    phases = rng.uniform(0, 2 * np.pi, size=n_harm)
    t = np.arange(n_samples) / fs
    return np.sum(amps[:, None] * np.sin(2 * np.pi * f0 * h[:, None] * t + phases[:, None]), axis=0)


def _am_harmonic(rng, f0_range, rank, n_samples, fs, fmax):
    """``rank`` full-band harmonic tones, each under its own envelope.

    Fundamentals are spread over ``f0_range`` so the tones of one source
    stay distinct; the power spectrogram is then close to rank ``rank``.
    """
    lo, hi = f0_range
    slots = np.linspace(lo, hi, rank + 1)
    f0s = rng.uniform(slots[:-1], slots[1:])
    env = _envelopes(rng, rank, n_samples, fs)
    return sum(env[r] * _harmonic_tone(rng, f0s[r], n_samples, fs, fmax) for r in range(rank))


def _mod_noise(rng, rank, n_samples, fs, fmax, period=512):
    """Band-shaped pseudo-noise with one slow envelope per band.

    The carrier is a random-phase multisine on the grid ``fs / period``;
    every grid line belongs to exactly one band so band spectra do not
    overlap, which keeps the power spectrogram close to rank ``rank``.
    """
    freqs = np.arange(1, int(fmax * period / fs)) * fs / period
    edges = np.geomspace(freqs[0], freqs[-1] * 1.0001, rank + 1)
    band_of = np.clip(np.searchsorted(edges, freqs, side="right") - 1, 0, rank - 1)
    amps = rng.rayleigh(size=len(freqs)) / np.sqrt(freqs / freqs[0]) ** 0.5
    phases = rng.uniform(0, 2 * np.pi, size=len(freqs))
    env = _envelopes(rng, rank, n_samples, fs)
    t = np.arange(n_samples) / fs
    out = np.zeros(n_samples)
    for r in range(rank):
        sel = band_of == r
        carrier = np.sum(amps[sel, None] * np.sin(2 * np.pi * freqs[sel, None] * t + phases[sel, None]), axis=0)
        out += env[r] * carrier
    return out


def make_synthetic_sources(recipe="am_harmonic", n_sources: int = 2, duration: float = 5.0,
                           sample_rate: int = 16000, rank: int = 3, seed: int = 0,
                           fmax: float = 5000.0, floor_db: float = -30.0) -> WaveTensor:
    """Independent unit-RMS mono sources, one per row.

    ``recipe`` is ``"am_harmonic"`` or ``"mod_noise"``, or a dict with a
    ``"recipe"`` key and optional ``rank`` / ``fmax`` overrides.
    For ``am_harmonic`` every source is a sum of ``rank`` harmonic tones whose
    fundamentals lie in a sub-range of 110-330 Hz disjoint from the other
    sources' sub-ranges. A stationary white floor ``floor_db``
    below the tonal part keeps every STFT bin populated.
    """
    if isinstance(recipe, dict):
        opts = dict(recipe)
        recipe = opts.pop("recipe", None)
        rank = int(opts.pop("rank", rank))
        fmax = float(opts.pop("fmax", fmax))
        floor_db = float(opts.pop("floor_db", floor_db))
    if recipe not in RECIPES:
        raise InvalidInput(f"unknown recipe {recipe!r}; expected one of {RECIPES}")
    if n_sources < 1 or rank < 1 or duration <= 0:
        raise InvalidInput("n_sources, rank and duration must be positive")
    rng = np.random.default_rng(seed)
    n_samples = int(round(duration * sample_rate))
    edges = np.linspace(110.0, 330.0, n_sources + 1)
    rows = []
    for n in range(n_sources):
        if recipe == "am_harmonic":
            s = _am_harmonic(rng, (edges[n], edges[n + 1]), rank, n_samples, sample_rate, fmax)
        else:
            s = _mod_noise(rng, rank, n_samples, sample_rate, fmax)
        rms = np.sqrt(np.mean(s**2))
        if rms == 0:
            raise InvalidInput("generated a silent source; increase duration")
        s = s / rms + 10.0 ** (floor_db / 20.0) * rng.normal(size=n_samples)
        rows.append(s / np.sqrt(np.mean(s**2)))
    return WaveTensor(np.stack(rows), sample_rate)
