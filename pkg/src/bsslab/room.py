"""Shoebox room simulation with the image-source method."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.signal

from .errors import InvalidInput, InvalidScenario
from .signal import WaveTensor

SINC_TAPS = 81


@dataclass(frozen=True)
class RoomScenario:
    """Rectangular room with omnidirectional microphones and point sources.

    Positions are in metres, ``t60`` in seconds. ``max_order`` caps the total
    number of wall reflections per image; ``None`` keeps every image that
    arrives within ``1.5 * t60``.
    """

    dims: Sequence[float]
    mic_positions: Sequence[Sequence[float]]
    src_positions: Sequence[Sequence[float]]
    t60: float = 0.0
    speed_of_sound: float = 343.0
    sample_rate: int = 16000
    max_order: Optional[int] = None

    def __post_init__(self):
        dims = np.asarray(self.dims, dtype=float)
        mics = np.atleast_2d(np.asarray(self.mic_positions, dtype=float))
        srcs = np.atleast_2d(np.asarray(self.src_positions, dtype=float))
        if dims.shape != (3,) or np.any(dims <= 0):
            raise InvalidScenario(f"room dims must be three positive lengths, got {self.dims}")
        for name, pos in (("microphone", mics), ("source", srcs)):
            if pos.shape[1] != 3 or pos.shape[0] < 1:
                raise InvalidScenario(f"{name} positions must be (count, 3)")
            if np.any(pos <= 0) or np.any(pos >= dims):
                raise InvalidScenario(f"a {name} lies outside the room")
        if not self.t60 >= 0:
            raise InvalidScenario("t60 must be nonnegative")
        if self.speed_of_sound <= 0 or self.sample_rate <= 0:
            raise InvalidScenario("speed_of_sound and sample_rate must be positive")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "mic_positions", mics)
        object.__setattr__(self, "src_positions", srcs)

    @property
    def n_mics(self) -> int:
        return len(self.mic_positions)

    @property
    def n_sources(self) -> int:
        return len(self.src_positions)

    @property
    def volume(self) -> float:
        return float(np.prod(self.dims))

    @property
    def surface(self) -> float:
        lx, ly, lz = self.dims
        return float(2 * (lx * ly + lx * lz + ly * lz))


@dataclass(frozen=True)
class Rir:
    """Impulse responses, ``taps[m, n]`` from source ``n`` to microphone ``m``."""

    taps: np.ndarray
    sample_rate: int


def array_scenario(t60: float = 0.0, dims=(8.0, 8.0, 3.0), spacing: float = 0.06,
                   distance: float = 2.0, angles_deg=(80.0, 110.0), height: float = 1.5,
                   sample_rate: int = 16000, **kwargs) -> RoomScenario:
    """Two-microphone array at the room centre with sources on a circle.

    The microphones lie on the x axis, ``spacing`` apart. Source angles are
    measured from the array normal (the y axis), so 0 degrees is broadside.
    """
    dims = np.asarray(dims, dtype=float)
    centre = np.array([dims[0] / 2, dims[1] / 2, height])
    mics = [centre - [spacing / 2, 0, 0], centre + [spacing / 2, 0, 0]]
    theta = np.deg2rad(np.asarray(angles_deg, dtype=float))
    srcs = [centre + distance * np.array([np.sin(a), np.cos(a), 0.0]) for a in theta]
    return RoomScenario(dims, mics, srcs, t60=t60, sample_rate=sample_rate, **kwargs)


def sabine_absorption(scn: RoomScenario) -> float:
    """Uniform wall absorption giving ``scn.t60`` by Sabine's formula, clamped to 1."""
    if not scn.t60 > 0:
        raise InvalidScenario("Sabine absorption needs t60 > 0; use the direct path for t60 = 0")
    return min(1.0, 0.161 * scn.volume / (scn.surface * scn.t60))


def _axis_images(src, length, reach):
    """Image coordinates along one axis and their reflection counts."""
    m = np.arange(-int(np.ceil(reach / (2 * length))) - 1, int(np.ceil(reach / (2 * length))) + 2)
    coords = np.concatenate([2 * m * length + src, 2 * m * length - src])
    refl = np.concatenate([np.abs(2 * m), np.abs(2 * m - 1)])
    return coords, refl


def _image_sources(scn: RoomScenario, src, reach):
    cx, rx = _axis_images(src[0], scn.dims[0], reach)
    cy, ry = _axis_images(src[1], scn.dims[1], reach)
    cz, rz = _axis_images(src[2], scn.dims[2], reach)
    pos = np.stack(np.meshgrid(cx, cy, cz, indexing="ij"), axis=-1).reshape(-1, 3)
    refl = (rx[:, None, None] + ry[None, :, None] + rz[None, None, :]).ravel()
    return pos, refl


def _fractional_impulses(out, delays, gains, chunk=20000):
    """Add Hann-windowed sinc impulses at fractional ``delays`` into ``out``."""
    half = SINC_TAPS // 2
    offsets = np.arange(-half, half + 1)
    L = len(out)
    for start in range(0, len(delays), chunk):
        d = delays[start : start + chunk]
        g = gains[start : start + chunk]
        idx = np.round(d).astype(int)[:, None] + offsets[None, :]
        frac = idx - d[:, None]
        w = 0.5 * (1.0 + np.cos(2.0 * np.pi * frac / SINC_TAPS))
        vals = g[:, None] * np.sinc(frac) * w
        keep = (idx >= 0) & (idx < L)
        out += np.bincount(idx[keep], weights=vals[keep], minlength=L)[:L]
    return out


def image_rir(scn: RoomScenario) -> Rir:
    """Room impulse responses by the image-source method.

    Each image contributes ``beta**r / (4 pi d)`` at delay ``d / c`` where
    ``r`` is its reflection count and ``beta = sqrt(1 - alpha)`` with the
    Sabine absorption ``alpha``. ``t60 = 0`` yields the direct path only.
    """
    fs, c = scn.sample_rate, scn.speed_of_sound
    dists = np.linalg.norm(scn.mic_positions[:, None] - scn.src_positions[None], axis=-1)
    beta = 0.0
    if scn.t60 > 0:
        beta = float(np.sqrt(1.0 - sabine_absorption(scn)))
    tail = 1.5 * scn.t60 if beta > 0 else 0.0
    reach = dists.max() + tail * c
    L = int(np.ceil(reach / c * fs)) + SINC_TAPS
    taps = np.zeros((scn.n_mics, scn.n_sources, L))
    for n, src in enumerate(scn.src_positions):
        if beta > 0:
            pos, refl = _image_sources(scn, src, reach)
            if scn.max_order is not None:
                pos, refl = pos[refl <= scn.max_order], refl[refl <= scn.max_order]
        else:
            pos, refl = src[None], np.zeros(1, dtype=int)
        for m, mic in enumerate(scn.mic_positions):
            d = np.linalg.norm(pos - mic, axis=1)
            sel = d <= reach
            dd, rr = d[sel], refl[sel]
            order = np.argsort(dd, kind="stable")
            dd, rr = dd[order], rr[order]
            gains = np.power(beta, rr) / (4.0 * np.pi * dd)
            _fractional_impulses(taps[m, n], dd / c * fs, gains)
    return Rir(taps, fs)


def simulate_mixture(srcs: WaveTensor, rir: Rir):
    """Convolve each source with its impulse responses.

    Returns:
        ``(mixture, images)``: the ``M``-channel mixture as a WaveTensor and
        the per-source images, an array ``(N, M, samples + L - 1)`` whose sum
        over the first axis is the mixture.
    """
    if srcs.sample_rate != rir.sample_rate:
        raise InvalidInput(
            f"sample-rate mismatch: sources {srcs.sample_rate} Hz, RIR {rir.sample_rate} Hz"
        )
    M, N, L = rir.taps.shape
    if srcs.n_channels != N:
        raise InvalidInput(f"RIR has {N} sources but {srcs.n_channels} signals were given")
    out_len = srcs.n_samples + L - 1
    images = np.zeros((N, M, out_len))
    for n in range(N):
        for m in range(M):
            images[n, m] = scipy.signal.fftconvolve(srcs.samples[n], rir.taps[m, n])
    mixture = images.sum(axis=0)
    return WaveTensor(mixture, srcs.sample_rate), images
