"""Delay-and-sum, coherent compounding, f-DMAS and B-mode conversion."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .core import COMPOUND, IqImage, PixelGrid, RfFrame, check

WINDOWS = ("rectangular", "hann")
INTERPOLATIONS = ("nearest", "linear")


@dataclass(frozen=True)
class BeamformConfig:
    f_number: float = 1.0
    apodization_window: str = "hann"
    interpolation: str = "linear"

    def validate(self) -> list[str]:
        v = []
        if not self.f_number > 0:
            v.append("f_number: must be > 0")
        if self.apodization_window not in WINDOWS:
            v.append(f"apodization_window: must be one of {WINDOWS}")
        if self.interpolation not in INTERPOLATIONS:
            v.append(f"interpolation: must be one of {INTERPOLATIONS}")
        return v


@dataclass(frozen=True)
class BmodeImage:
    grid: PixelGrid
    db_values: np.ndarray
    dynamic_range: float = 60.0


def analytic_signal(x, axis: int = -1) -> np.ndarray:
    """Analytic signal by one-sided spectrum doubling (real part is ``x``)."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[axis]
    spec = np.fft.fft(x, axis=axis)
    h = np.zeros(n)
    h[0] = 1.0
    if n % 2 == 0:
        h[n // 2] = 1.0
        h[1:n // 2] = 2.0
    else:
        h[1:(n + 1) // 2] = 2.0
    shape = [1] * x.ndim
    shape[axis] = n
    return np.fft.ifft(spec * h.reshape(shape), axis=axis)


def iq_demodulate(rf: RfFrame) -> np.ndarray:
    """Per-channel analytic signal, [n_elements x n_samples] complex."""
    if rf.n_samples < 8:
        raise ValueError("iq_demodulate needs at least 8 samples per channel")
    return analytic_signal(rf.samples, axis=-1)


def transmit_delay(x, z, angle: float, c: float):
    """Plane-wave arrival time, wavefront crossing the array center at t = 0."""
    return (z * math.cos(angle) + x * math.sin(angle)) / c


def _apodization(d, half_width, window):
    if window == "rectangular":
        return np.ones_like(d)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.cos(np.pi * d / (2 * half_width)) ** 2
    return np.where(half_width > 0, w, 0.0)


class _ChannelSampler:
    """Samples analytic channel data at arbitrary delays.

    Linear mode interpolates the baseband version (analytic * exp(-j w0 t))
    and restores the carrier at the requested delay, which keeps the
    interpolated magnitude exact for a pure carrier at any sampling rate.
    """

    def __init__(self, rf: RfFrame, interpolation: str):
        self.iq = iq_demodulate(rf)
        self.fs, self.t0, self.f0 = rf.probe.fs, rf.t0, rf.probe.f0
        self.n = rf.n_samples
        self.interpolation = interpolation
        if interpolation == "linear":
            t = rf.time
            self.base = self.iq * np.exp(-2j * np.pi * self.f0 * t)[None, :]

    def __call__(self, i: int, tau: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        pos = (tau - self.t0) * self.fs
        if self.interpolation == "nearest":
            k = np.rint(pos).astype(np.int64)
            ok = (k >= 0) & (k < self.n)
            out = self.iq[i][np.clip(k, 0, self.n - 1)]
            return np.where(ok, out, 0.0), ok
        k = np.floor(pos).astype(np.int64)
        frac = pos - k
        ok = (k >= 0) & (k + 1 < self.n)
        k0 = np.clip(k, 0, self.n - 2)
        row = self.base[i]
        val = row[k0] * (1.0 - frac) + row[k0 + 1] * frac
        val = val * np.exp(2j * np.pi * self.f0 * tau)
        return np.where(ok, val, 0.0), ok


def _warn_outside(rf: RfFrame, grid: PixelGrid):
    xe = rf.probe.element_x
    if grid.x0 < xe[0] - 1e-12 or grid.x[-1] > xe[-1] + 1e-12:
        warnings.warn("pixel grid extends laterally beyond the array aperture", stacklevel=3)


def _aligned(rf: RfFrame, cfg: BeamformConfig, X, Z):
    """Yield (element, weight, aligned analytic sample, active mask) in ascending order."""
    check(rf)
    problems = cfg.validate()
    if problems:
        raise ValueError("invalid BeamformConfig: " + "; ".join(problems))
    sampler = _ChannelSampler(rf, cfg.interpolation)
    c = rf.probe.c
    tau_tx = transmit_delay(X, Z, rf.angle, c)
    half = Z / (2 * cfg.f_number)
    for i, xe in enumerate(rf.probe.element_x):
        d = X - xe
        active = np.abs(d) <= half
        tau = tau_tx + np.hypot(d, Z) / c
        val, ok = sampler(i, tau)
        w = np.where(active, _apodization(d, half, cfg.apodization_window), 0.0)
        yield i, w, np.where(ok, val, 0.0), active


def das_beamform(rf: RfFrame, grid: PixelGrid, cfg: BeamformConfig | None = None) -> IqImage:
    """Delay-and-sum over a dynamic receive aperture, normalized by the active count."""
    cfg = cfg or BeamformConfig()
    _warn_outside(rf, grid)
    X, Z = grid.mesh()
    acc = np.zeros(grid.shape, dtype=np.complex128)
    count = np.zeros(grid.shape, dtype=np.int64)
    for _, w, val, active in _aligned(rf, cfg, X, Z):
        acc += w * val
        count += active
    empty = count == 0
    out = np.where(empty, 0.0, acc / np.maximum(count, 1))
    meta = {"empty_aperture_pixels": int(empty.sum()), "beamformer": "das",
            "f_number": cfg.f_number, "apodization": cfg.apodization_window,
            "interpolation": cfg.interpolation}
    return IqImage.from_complex(grid, out, rf.angle, 1.0, meta)


def compound(frames) -> IqImage:
    """Pixel-wise complex mean of frames sharing one grid."""
    frames = list(frames)
    if not frames:
        raise ValueError("compound needs at least one frame")
    grid = frames[0].grid
    if any(f.grid != grid for f in frames):
        raise ValueError("all frames must share one PixelGrid")
    if len(frames) == 1:
        return frames[0]
    acc = np.zeros(grid.shape, dtype=np.complex128)
    for f in frames:
        acc += f.complex
    meta = {"compounded": len(frames)}
    return IqImage.from_complex(grid, acc / len(frames), COMPOUND, frames[0].norm_scale, meta)


def signed_sqrt_product(a, b):
    """Pairwise f-DMAS term sign(a b) sqrt(|a b|)."""
    p = np.asarray(a) * np.asarray(b)
    return np.sign(p) * np.sqrt(np.abs(p))


class _PairSum:
    """Streaming sum_{i<j} sign(s_i s_j) sqrt(w_i w_j |s_i s_j|) / sum_{i<j} sqrt(w_i w_j).

    Uses sum_{i<j} u_i u_j = ((sum u)^2 - sum u^2) / 2 with
    u_i = sign(s_i) sqrt(w_i |s_i|); the normalizer applies the same identity
    to sqrt(w_i) and equals N(N-1)/2 for a rectangular window.
    """

    def __init__(self, shape):
        self.su, self.su2 = np.zeros(shape), np.zeros(shape)
        self.sw, self.sw2 = np.zeros(shape), np.zeros(shape)

    def add(self, s, w):
        u = np.sign(s) * np.sqrt(w * np.abs(s))
        self.su += u
        self.su2 += u * u
        self.sw += np.sqrt(w)
        self.sw2 += w

    def result(self):
        pairs = 0.5 * (self.sw * self.sw - self.sw2)
        ok = pairs > 1e-12
        return np.where(ok, 0.5 * (self.su * self.su - self.su2) / np.where(ok, pairs, 1.0), 0.0)


def dmas_pairwise(samples, weights=None) -> np.ndarray:
    """Normalized signed-sqrt pairwise sum over axis 0 of aligned real samples."""
    samples = np.asarray(samples, dtype=np.float64)
    weights = np.ones_like(samples) if weights is None else np.broadcast_to(weights, samples.shape)
    acc = _PairSum(samples.shape[1:])
    for s, w in zip(samples, weights):
        acc.add(s, w)
    return acc.result()


def dmas_bandpass(f0: float, fs: float) -> np.ndarray:
    """Windowed-sinc band-pass [1.5 f0, 2.5 f0], length 4 periods of f0 rounded odd."""
    n = int(round(4 * fs / f0))
    if n % 2 == 0:
        n += 1
    return signal.firwin(n, [1.5 * f0, 2.5 * f0], pass_zero=False, window="blackman", fs=fs)


def dmas_beamform(rf: RfFrame, grid: PixelGrid, cfg: BeamformConfig | None = None,
                  oversample: int | None = None) -> IqImage:
    """Filtered delay-multiply-and-sum, returned as I/Q about 2 f0.

    The pairwise sum is normalized so N equal samples v give v for any
    window (see ``dmas_pairwise``). Beamforming runs on an axially
    oversampled grid so the 2 f0 band is not aliased, then the filtered
    signal is decimated back onto ``grid``.
    """
    cfg = cfg or BeamformConfig()
    _warn_outside(rf, grid)
    lam = rf.probe.wavelength
    if oversample is None:
        oversample = max(1, math.ceil(grid.dz / (lam / 32)))
    dzf = grid.dz / oversample
    # round-trip time along z: f [Hz] <-> 2 f / c [cycles/m]
    fs_eq = rf.probe.c / (2 * dzf)
    taps = dmas_bandpass(rf.probe.f0, fs_eq)
    pad = len(taps)
    zf = grid.z0 + dzf * np.arange(-pad, (grid.height - 1) * oversample + 1 + pad)
    zf_ok = zf > 0
    X, Z = np.meshgrid(grid.x, np.where(zf_ok, zf, dzf))

    acc = _PairSum(X.shape)
    for _, w, val, active in _aligned(rf, cfg, X, Z):
        acc.add(val.real, w)
    y = acc.result()
    y = np.where(zf_ok[:, None], y, 0.0)

    yf = signal.filtfilt(taps, [1.0], y, axis=0)
    iq = analytic_signal(yf, axis=0)[pad:pad + (grid.height - 1) * oversample + 1:oversample]
    meta = {"beamformer": "f-dmas", "oversample": oversample, "taps": len(taps),
            "f_number": cfg.f_number, "apodization": cfg.apodization_window,
            "interpolation": cfg.interpolation}
    return IqImage.from_complex(grid, iq, rf.angle, 1.0, meta)


def to_bmode(iq: IqImage, dynamic_range: float = 60.0) -> BmodeImage:
    """Envelope detection and log compression, peak-normalized to 0 dB."""
    env = iq.envelope
    peak = float(env.max())
    if not peak > 0:
        raise ValueError("cannot log-compress an all-zero image")
    with np.errstate(divide="ignore"):
        db = 20 * np.log10(env / peak)
    db = np.clip(db, -dynamic_range, 0.0)
    return BmodeImage(iq.grid, db, float(dynamic_range))
