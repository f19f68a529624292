"""Linear single-scattering RF simulator for steered plane-wave transmits."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import FormatError, ProbeGeometry, RfFrame, check

MM = 1e-3


@dataclass(frozen=True)
class Pulse:
    """Gaussian-windowed sinusoid whose -6 dB spectral width is bandwidth * f0."""

    f0: float = 5.0e6
    fractional_bandwidth: float = 0.6

    def __post_init__(self):
        if not 0 < self.fractional_bandwidth < 2:
            raise ValueError("fractional_bandwidth must lie in (0, 2)")
        if not self.f0 > 0:
            raise ValueError("f0 must be positive")

    @property
    def sigma(self) -> float:
        # |G(f)| ~ exp(-2 pi^2 sigma^2 (f - f0)^2) halves at +-bandwidth*f0/2
        half_width = 0.5 * self.fractional_bandwidth * self.f0
        return math.sqrt(math.log(2) / 2) / (math.pi * half_width)

    @property
    def n_cycles(self) -> float:
        """Cycles within the -6 dB envelope duration."""
        return 2 * math.sqrt(2 * math.log(2)) * self.sigma * self.f0

    @property
    def support(self) -> float:
        """Half-length beyond which the envelope is below 1.6e-8."""
        return 6.0 * self.sigma

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        return np.exp(-0.5 * (t / self.sigma) ** 2) * np.cos(2 * np.pi * self.f0 * t)


@dataclass(frozen=True)
class Scatterer:
    x: float
    z: float
    amplitude: float = 1.0


@dataclass(frozen=True)
class Phantom:
    x: np.ndarray
    z: np.ndarray
    amplitude: np.ndarray
    label: str = "phantom"
    bbox: tuple = (-20 * MM, 20 * MM, 0.0, 50 * MM)  # xmin, xmax, zmin, zmax
    cysts: tuple = ()  # (x, z, radius) of anechoic disks, if any

    def __post_init__(self):
        for name in ("x", "z", "amplitude"):
            arr = np.array(getattr(self, name), dtype=np.float64).ravel()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if not (len(self.x) == len(self.z) == len(self.amplitude)):
            raise ValueError("x, z and amplitude must have equal length")
        object.__setattr__(self, "cysts", tuple(tuple(map(float, c)) for c in self.cysts))

    @classmethod
    def from_scatterers(cls, scatterers, **kw) -> "Phantom":
        s = list(scatterers)
        return cls([p.x for p in s], [p.z for p in s], [p.amplitude for p in s], **kw)

    def __len__(self):
        return len(self.x)

    @property
    def scatterers(self) -> list[Scatterer]:
        return [Scatterer(*v) for v in zip(self.x.tolist(), self.z.tolist(),
                                           self.amplitude.tolist())]

    def union(self, other: "Phantom") -> "Phantom":
        bb = (min(self.bbox[0], other.bbox[0]), max(self.bbox[1], other.bbox[1]),
              min(self.bbox[2], other.bbox[2]), max(self.bbox[3], other.bbox[3]))
        return Phantom(np.concatenate([self.x, other.x]), np.concatenate([self.z, other.z]),
                       np.concatenate([self.amplitude, other.amplitude]),
                       f"{self.label}+{other.label}", bb, self.cysts + other.cysts)

    def mirrored(self) -> "Phantom":
        xmin, xmax, zmin, zmax = self.bbox
        return Phantom(-self.x, self.z, self.amplitude, self.label + "-mirrored",
                       (-xmax, -xmin, zmin, zmax),
                       tuple((-cx, cz, r) for cx, cz, r in self.cysts))

    def validate(self) -> list[str]:
        v = []
        if np.any(self.z <= 0):
            v.append("z: all scatterers must have z > 0")
        if not np.all(np.isfinite(self.amplitude)):
            v.append("amplitude: must be finite")
        xmin, xmax, zmin, zmax = self.bbox
        inside = (self.x >= xmin) & (self.x <= xmax) & (self.z >= zmin) & (self.z <= zmax)
        if not np.all(inside):
            v.append("x/z: scatterers outside the bounding box")
        return v


def simulate_rf(phantom: Phantom, probe: ProbeGeometry, angle: float, duration: float,
                pulse: Pulse | None = None, seed: int = 0, noise_std: float = 0.0,
                t0: float = 0.0, chunk: int = 1024) -> RfFrame:
    """Superpose one delayed pulse per (scatterer, element) pair.

    Delays follow the plane-wave model with the wavefront crossing the array
    center at t = 0. ``seed`` only drives the optional additive noise.
    """
    check(probe)
    if not abs(angle) < math.pi / 4:
        raise ValueError(f"steering angle {angle} outside |theta| < pi/4")
    if not np.all(np.isfinite(phantom.amplitude)):
        raise ValueError("phantom has non-finite amplitudes")
    if not np.all(np.isfinite(phantom.x)) or not np.all(np.isfinite(phantom.z)):
        raise ValueError("phantom has non-finite coordinates")
    pulse = pulse or Pulse(probe.f0)
    fs, c = probe.fs, probe.c
    n_samples = int(math.ceil(duration * fs - 1e-9))  # tolerate roundoff in the product
    if n_samples <= 0:
        raise ValueError("duration must cover at least one sample")
    n_ch = probe.n_elements
    xe = probe.element_x
    half = int(math.ceil(pulse.support * fs)) + 1
    offsets = np.arange(-half, half + 1)
    rf = np.zeros(n_ch * n_samples)
    meta = {}

    if len(phantom):
        tau_tx = (phantom.z * math.cos(angle) + phantom.x * math.sin(angle)) / c
        t_end = t0 + n_samples / fs
        late = 0
        for start in range(0, len(phantom), chunk):
            sl = slice(start, start + chunk)
            sx, sz, amp = phantom.x[sl], phantom.z[sl], phantom.amplitude[sl]
            tau = tau_tx[sl, None] + np.hypot(sx[:, None] - xe[None, :], sz[:, None]) / c
            late += int(np.count_nonzero(tau + pulse.support > t_end))
            centre = np.floor((tau - t0) * fs).astype(np.int64)
            idx = centre[..., None] + offsets  # [S x N x L]
            tt = t0 + idx / fs - tau[..., None]
            vals = amp[:, None, None] * pulse(tt)
            ok = (idx >= 0) & (idx < n_samples)
            flat = (np.arange(n_ch)[None, :, None] * n_samples + idx)[ok]
            rf += np.bincount(flat, weights=vals[ok], minlength=rf.size)
        if late:
            meta["truncated_pairs"] = late
            meta["warning"] = f"{late} scatterer/element echoes extend past the record"

    rf = rf.reshape(n_ch, n_samples)
    if noise_std > 0:
        rf = rf + np.random.default_rng(seed).normal(0.0, noise_std, rf.shape)
    return RfFrame(probe, float(angle), rf, t0, meta)


def round_trip_duration(phantom: Phantom, probe: ProbeGeometry, margin: float = 2e-6) -> float:
    """Record length covering the deepest scatterer seen from the farthest element."""
    if len(phantom):
        zmax = float(np.max(phantom.z))
        xmax = float(np.max(np.abs(phantom.x)))
    else:
        xmin, xmax_, zmin, zmax = phantom.bbox
        xmax = max(abs(xmin), abs(xmax_))
    far = math.hypot(xmax + probe.aperture / 2, zmax)
    return (zmax + xmax + far) / probe.c + margin


def angle_fan(k: int, max_angle_deg: float = 16.0) -> np.ndarray:
    """k steering angles (radians) uniformly spaced over +-max_angle_deg."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if k == 1:
        return np.zeros(1)
    return np.deg2rad(np.linspace(-max_angle_deg, max_angle_deg, k))


DEFAULT_POINT_DEPTHS = tuple(d * MM for d in (5, 10, 15, 20, 25, 30, 35, 40))
DEFAULT_LATERAL = tuple(d * MM for d in (-10, -5, 0, 5, 10))


def build_point_phantom(depths=DEFAULT_POINT_DEPTHS, lateral_positions=(0.0,),
                        label="points", bbox=None) -> Phantom:
    """Unit scatterers on every (x, z) of lateral_positions x depths."""
    depths = [float(d) for d in depths]
    lateral = [float(x) for x in lateral_positions]
    if not depths or not lateral:
        raise ValueError("depths and lateral_positions must be non-empty")
    if any(d <= 0 for d in depths):
        raise ValueError("all depths must be > 0")
    xs = [x for z in depths for x in lateral]
    zs = [z for z in depths for x in lateral]
    if bbox is None:
        bbox = (min(xs) - 5 * MM, max(xs) + 5 * MM, 0.0, max(zs) + 5 * MM)
    return Phantom(xs, zs, np.ones(len(xs)), label, bbox)


def default_point_layout() -> Phantom:
    """Center-scanline targets 5-40 mm plus lateral rows at 10, 25 and 40 mm."""
    centre = [(0.0, z) for z in DEFAULT_POINT_DEPTHS]
    rows = [(x, z) for z in (10 * MM, 25 * MM, 40 * MM) for x in DEFAULT_LATERAL if x != 0.0]
    pts = centre + rows
    return Phantom([p[0] for p in pts], [p[1] for p in pts], np.ones(len(pts)), "points",
                   (-15 * MM, 15 * MM, 0.0, 45 * MM))


def cyst_grid(spacing_x=6 * MM, spacing_z=6 * MM, centre=(0.0, 25 * MM)) -> list:
    cx, cz = centre
    return [(cx + i * spacing_x, cz + j * spacing_z) for j in (-1, 0, 1) for i in (-1, 0, 1)]


def build_cyst_phantom(cyst_centers=None, cyst_radius=1.5 * MM,
                       scatterer_density=5e7, seed=0, bbox=None,
                       forced=(), label="cysts") -> Phantom:
    """Speckle background with anechoic disks.

    Background positions are uniform over ``bbox``; amplitudes are standard
    normal. ``forced`` adds fixed (x, z, amplitude) scatterers after the
    random ones.
    """
    if cyst_centers is None:
        cyst_centers = cyst_grid()
    if not cyst_radius > 0:
        raise ValueError("cyst_radius must be > 0")
    if not scatterer_density > 0:
        raise ValueError("scatterer_density must be > 0")
    if bbox is None:
        bbox = (-12 * MM, 12 * MM, 14 * MM, 36 * MM)
    xmin, xmax, zmin, zmax = bbox
    if zmin <= 0 and zmax <= 0:
        raise ValueError("bounding box must lie below the array")
    for cx, cz in cyst_centers:
        if not (xmin <= cx <= xmax and zmin <= cz <= zmax):
            raise ValueError(f"cyst centre ({cx}, {cz}) outside bounding box {bbox}")
    rng = np.random.default_rng(seed)
    area = (xmax - xmin) * (zmax - zmin)
    n = int(rng.poisson(scatterer_density * area))
    x = rng.uniform(xmin, xmax, n)
    z = rng.uniform(max(zmin, 1e-9), zmax, n)
    amp = rng.standard_normal(n)
    keep = np.ones(n, dtype=bool)
    for cx, cz in cyst_centers:
        keep &= (x - cx) ** 2 + (z - cz) ** 2 > cyst_radius ** 2
    x, z, amp = x[keep], z[keep], amp[keep]
    if forced:
        fx, fz, fa = (np.array(v, dtype=np.float64) for v in zip(*forced))
        x, z, amp = np.concatenate([x, fx]), np.concatenate([z, fz]), np.concatenate([amp, fa])
    cysts = tuple((float(cx), float(cz), float(cyst_radius)) for cx, cz in cyst_centers)
    return Phantom(x, z, amp, label, tuple(map(float, bbox)), cysts)


# --- phantom description file ----------------------------------------------

def write_phantom(path, phantom: Phantom) -> None:
    lines = [f"PHANTOM v1 {phantom.label}",
             "# bbox " + " ".join(repr(float(b)) for b in phantom.bbox)]
    lines += [f"# cyst {cx!r} {cz!r} {r!r}" for cx, cz, r in phantom.cysts]
    lines += [f"{x!r} {z!r} {a!r}" for x, z, a in zip(phantom.x.tolist(), phantom.z.tolist(),
                                                      phantom.amplitude.tolist())]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_phantom(path) -> Phantom:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("PHANTOM v1"):
        raise FormatError(f"{path}: line 1: expected header 'PHANTOM v1 <label>'")
    label = lines[0][len("PHANTOM v1"):].strip() or "phantom"
    bbox, cysts, rows = None, [], []
    for n, line in enumerate(lines[1:], start=2):
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            parts = s[1:].split()
            try:
                if parts and parts[0] == "bbox":
                    bbox = tuple(float(p) for p in parts[1:5])
                elif parts and parts[0] == "cyst":
                    cysts.append(tuple(float(p) for p in parts[1:4]))
            except ValueError as exc:
                raise FormatError(f"{path}: line {n}: {exc}") from None
            continue
        parts = s.split()
        if len(parts) != 3:
            raise FormatError(f"{path}: line {n}: expected 'x z amplitude', got {s!r}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise FormatError(f"{path}: line {n}: non-numeric field in {s!r}") from None
    arr = np.array(rows, dtype=np.float64).reshape(-1, 3)
    kw = {"cysts": tuple(cysts)}
    if bbox is not None:
        kw["bbox"] = bbox
    return Phantom(arr[:, 0], arr[:, 1], arr[:, 2], label, **kw)
