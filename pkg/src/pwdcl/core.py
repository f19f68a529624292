"""Domain types shared across the toolkit.

All types are frozen dataclasses. Constructors do not enforce invariants;
``validate`` reports violations and ``check`` raises on them, so malformed
values can still be built and inspected.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

COMPOUND = float("nan")  # angle sentinel for compounded frames
MAX_ANGLE = math.pi / 4


class DegenerateNormError(ValueError):
    """A zero-norm prediction or target made a normalized product undefined."""


class FormatError(ValueError):
    """A binary or text file did not match its declared layout."""


def _frozen(a, dtype=np.float64) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ProbeGeometry:
    n_elements: int = 128
    pitch: float = 0.3e-3
    f0: float = 5.0e6
    fs: float = 40.0e6
    c: float = 1540.0

    @property
    def wavelength(self) -> float:
        return self.c / self.f0

    @property
    def element_x(self) -> np.ndarray:
        # half-integer offsets are exact in binary, so x[i] == -x[N-1-i]
        idx = np.arange(self.n_elements, dtype=np.float64)
        return (idx - (self.n_elements - 1) / 2.0) * self.pitch

    @property
    def aperture(self) -> float:
        return (self.n_elements - 1) * self.pitch


@dataclass(frozen=True)
class PixelGrid:
    x0: float
    z0: float
    dx: float
    dz: float
    width: int
    height: int

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def x(self) -> np.ndarray:
        return self.x0 + self.dx * np.arange(self.width)

    @property
    def z(self) -> np.ndarray:
        return self.z0 + self.dz * np.arange(self.height)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Pixel-center coordinates as (X, Z), each [height x width]."""
        return np.meshgrid(self.x, self.z)

    def crop(self, row: int, col: int, height: int, width: int) -> "PixelGrid":
        return PixelGrid(self.x0 + col * self.dx, self.z0 + row * self.dz,
                         self.dx, self.dz, width, height)


@dataclass(frozen=True)
class RfFrame:
    probe: ProbeGeometry
    angle: float
    samples: np.ndarray  # [n_elements x n_samples]
    t0: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "samples", _frozen(self.samples))

    @property
    def n_samples(self) -> int:
        return self.samples.shape[-1]

    @property
    def time(self) -> np.ndarray:
        return self.t0 + np.arange(self.n_samples) / self.probe.fs


@dataclass(frozen=True)
class IqImage:
    grid: PixelGrid
    i_plane: np.ndarray
    q_plane: np.ndarray
    angle: float = COMPOUND
    norm_scale: float = 1.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "i_plane", _frozen(self.i_plane))
        object.__setattr__(self, "q_plane", _frozen(self.q_plane))

    @classmethod
    def from_complex(cls, grid: PixelGrid, values, angle=COMPOUND,
                     norm_scale=1.0, meta=None) -> "IqImage":
        values = np.asarray(values)
        return cls(grid, values.real, values.imag, angle, norm_scale, meta or {})

    @property
    def complex(self) -> np.ndarray:
        return self.i_plane + 1j * self.q_plane

    @property
    def envelope(self) -> np.ndarray:
        return np.hypot(self.i_plane, self.q_plane)

    @property
    def is_compound(self) -> bool:
        return math.isnan(self.angle)


@dataclass(frozen=True)
class PwSet:
    frames: tuple
    validation_index: int
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))

    @property
    def k(self) -> int:
        return len(self.frames)

    @property
    def grid(self) -> PixelGrid:
        return self.frames[0].grid

    @property
    def angles(self) -> np.ndarray:
        return np.array([f.angle for f in self.frames])

    def stack(self) -> np.ndarray:
        """All frames as one complex array [k x height x width]."""
        return np.stack([f.complex for f in self.frames])


def make_pixel_grid(probe: ProbeGeometry, depth_max: float,
                    pixels_per_wavelength: float = 4.0,
                    depth_min: float = 0.0) -> PixelGrid:
    """Grid spanning the full aperture laterally and [depth_min, depth_max] axially."""
    check(probe)
    if not depth_max > 0:
        raise ValueError(f"depth_max must be positive, got {depth_max}")
    if not pixels_per_wavelength >= 2:
        raise ValueError(f"pixels_per_wavelength must be >= 2, got {pixels_per_wavelength}")
    if not 0 <= depth_min < depth_max:
        raise ValueError(f"depth_min must lie in [0, depth_max), got {depth_min}")
    dz = probe.wavelength / pixels_per_wavelength
    dx = dz
    x = probe.element_x
    width = math.ceil(probe.aperture / dx) + 1
    height = math.ceil((depth_max - depth_min) / dz) + 1
    return PixelGrid(float(x[0]), float(depth_min), dx, dz, width, height)


def _finite(a) -> bool:
    return bool(np.all(np.isfinite(a)))


def _angle_ok(theta) -> bool:
    return math.isnan(theta) or abs(theta) < MAX_ANGLE


def validate(obj: Any) -> list[str]:
    """Return every violated invariant of a core value as 'field: message'."""
    v = []
    if isinstance(obj, ProbeGeometry):
        if not (isinstance(obj.n_elements, (int, np.integer)) and obj.n_elements >= 2):
            v.append("n_elements: must be an integer >= 2")
        if not obj.pitch > 0:
            v.append("pitch: must be > 0")
        if not obj.c > 0:
            v.append("c: must be > 0")
        if not obj.fs > 0:
            v.append("fs: must be > 0")
        if not 0 < obj.f0 < obj.fs / 2:
            v.append("f0: must satisfy 0 < f0 < fs/2")
    elif isinstance(obj, PixelGrid):
        if not obj.dx > 0:
            v.append("dx: must be > 0")
        if not obj.dz > 0:
            v.append("dz: must be > 0")
        if not obj.z0 >= 0:
            v.append("z0: must be >= 0")
        if not obj.width >= 1:
            v.append("width: must be positive")
        if not obj.height >= 1:
            v.append("height: must be positive")
    elif isinstance(obj, RfFrame):
        v += [f"probe.{m}" for m in validate(obj.probe)]
        if not _angle_ok(obj.angle) or math.isnan(obj.angle):
            v.append("angle: must satisfy |theta| < pi/4")
        s = obj.samples
        if s.ndim != 2 or s.shape[-1] == 0:
            v.append("samples: must be a non-empty 2-D array")
        elif s.shape[0] != obj.probe.n_elements:
            v.append("samples: channel count must equal probe.n_elements")
        if not _finite(s):
            v.append("samples: all values must be finite")
        if not obj.t0 >= 0:
            v.append("t0: must be >= 0")
    elif isinstance(obj, IqImage):
        v += [f"grid.{m}" for m in validate(obj.grid)]
        if obj.i_plane.shape != obj.grid.shape or obj.q_plane.shape != obj.grid.shape:
            v.append("i_plane/q_plane: shapes must match grid (height, width)")
        if not (_finite(obj.i_plane) and _finite(obj.q_plane)):
            v.append("i_plane/q_plane: all values must be finite")
        if not _angle_ok(obj.angle):
            v.append("angle: must satisfy |theta| < pi/4")
        if not obj.norm_scale > 0:
            v.append("norm_scale: must be > 0")
    elif isinstance(obj, PwSet):
        if obj.k < 3:
            v.append("frames: length k >= 3 required")
        if obj.k and any(f.grid != obj.frames[0].grid for f in obj.frames):
            v.append("frames: all frames must share one PixelGrid")
        ang = obj.angles
        if obj.k > 1 and not np.all(np.diff(ang) > 0):
            v.append("frames: angles must be strictly increasing")
        if not 0 <= obj.validation_index < max(obj.k, 0):
            v.append("validation_index: must satisfy 0 <= v < k")
        for n, f in enumerate(obj.frames):
            v += [f"frames[{n}].{m}" for m in validate(f)]
    else:
        raise TypeError(f"no validator for {type(obj).__name__}")
    return v


def check(obj: Any) -> None:
    """Raise ValueError listing every violated invariant."""
    problems = validate(obj)
    if problems:
        raise ValueError(f"invalid {type(obj).__name__}: " + "; ".join(problems))
