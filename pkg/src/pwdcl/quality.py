"""Image-quality metrics: FWHM, PRAL, peak side-lobe level, CNR and gCNR."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .beamform import BmodeImage
from .core import IqImage, PixelGrid

HALF_AMPLITUDE_DB = 20 * math.log10(0.5)  # -6.02 dB
LABELS = ("isoechoic", "anechoic", "hyperechoic", "hypoechoic", "background")
MIN_REGION_PIXELS = 16


class OneSidedPeakError(ValueError):
    """The profile never drops below half maximum on one side of its peak."""


class DegenerateVarianceError(ValueError):
    """Both regions have zero variance, so CNR is undefined."""


@dataclass(frozen=True)
class RegionMask:
    grid: PixelGrid
    membership: np.ndarray
    label: str = "background"

    def validate(self) -> list[str]:
        v = []
        if self.membership.shape != self.grid.shape:
            v.append("membership: shape must match grid")
        if int(np.count_nonzero(self.membership)) < MIN_REGION_PIXELS:
            v.append(f"membership: at least {MIN_REGION_PIXELS} member pixels required")
        if self.label not in LABELS:
            v.append(f"label: must be one of {LABELS}")
        return v


@dataclass(frozen=True)
class Profile:
    axis: str
    positions: np.ndarray
    values_db: np.ndarray


def extract_profile(bmode: BmodeImage, axis: str, fixed_coordinate: float,
                    half_window: float = 0.0) -> Profile:
    """Row (lateral) or column (axial) nearest ``fixed_coordinate``, peak at 0 dB.

    With ``half_window`` > 0 the profile is the maximum over all rows/columns
    within +-half_window of the coordinate (beam-plot projection).
    """
    g = bmode.grid
    if axis == "lateral":
        coords, step, along = g.z, g.dz, g.x
    elif axis == "axial":
        coords, step, along = g.x, g.dx, g.z
    else:
        raise ValueError(f"axis must be 'lateral' or 'axial', got {axis!r}")
    lo, hi = coords[0] - step / 2, coords[-1] + step / 2
    if not lo <= fixed_coordinate <= hi:
        raise ValueError(f"coordinate {fixed_coordinate} outside grid span [{lo}, {hi}]")
    centre = int(np.clip(np.rint((fixed_coordinate - coords[0]) / step), 0, len(coords) - 1))
    span = int(round(half_window / step))
    sel = slice(max(centre - span, 0), centre + span + 1)
    db = bmode.db_values[sel] if axis == "lateral" else bmode.db_values[:, sel].T
    values = db.max(axis=0)
    return Profile(axis, np.asarray(along, dtype=np.float64), values - values.max())


def _amplitude(profile: Profile) -> np.ndarray:
    return 10.0 ** (profile.values_db / 20.0)


def fwhm(profile: Profile) -> float:
    """Width between the half-amplitude crossings nearest the peak."""
    amp = _amplitude(profile)
    pos = profile.positions
    k = int(np.argmax(amp))
    if k == 0 or k == len(amp) - 1:
        raise OneSidedPeakError("profile peak lies at an endpoint")
    half = 0.5 * amp[k]
    right = np.nonzero(amp[k:] < half)[0]
    left = np.nonzero(amp[:k + 1][::-1] < half)[0]
    if not len(right) or not len(left):
        raise OneSidedPeakError("no half-maximum crossing on one side of the peak")

    def crossing(i_in, i_out):
        a_in, a_out = amp[i_in], amp[i_out]
        f = (a_in - half) / (a_in - a_out)
        return pos[i_in] + f * (pos[i_out] - pos[i_in])

    r = k + int(right[0])
    l = k - int(left[0])
    return float(crossing(r - 1, r) - crossing(l + 1, l))


def pral(axial_profile: Profile, target_depth: float, guard: float = 1.5e-3,
         window: float = 5e-3, dynamic_range: float | None = None) -> float:
    """Main-lobe peak minus the strongest level in the trailing axial window (dB)."""
    z, db = axial_profile.positions, axial_profile.values_db
    start, stop = target_depth + guard, target_depth + guard + window
    if start < z[0] or stop > z[-1]:
        raise ValueError(f"PRAL window [{start}, {stop}] outside profile [{z[0]}, {z[-1]}]")
    main = np.abs(z - target_depth) <= guard
    if not main.any():
        raise ValueError("no profile samples within guard of target depth")
    in_win = (z >= start) & (z <= stop)
    level = float(db[main].max() - db[in_win].max())
    if dynamic_range is not None:
        level = min(level, float(dynamic_range))
    return level


def main_lobe_extent(profile: Profile) -> tuple[int, int]:
    """Indices of the first local minimum on each side of the peak."""
    db = profile.values_db
    k = int(np.argmax(db))
    l = k
    while l > 0 and db[l - 1] < db[l]:
        l -= 1
    r = k
    while r < len(db) - 1 and db[r + 1] < db[r]:
        r += 1
    return l, r


def peak_sidelobe_level(profile: Profile, exclusion: float | None = None) -> float:
    """Highest level (dB re. peak) outside the main lobe.

    By default the main lobe runs to the first null (local minimum) on each
    side of the peak; with ``exclusion`` it is every sample within that
    distance of the peak instead.
    """
    pos, db = profile.positions, profile.values_db
    k = int(np.argmax(db))
    if exclusion is None:
        l, r = main_lobe_extent(profile)
        outside = np.ones(len(db), bool)
        outside[l:r + 1] = False
    else:
        outside = np.abs(pos - pos[k]) > exclusion
    if not outside.any():
        raise ValueError("main lobe covers the whole profile")
    return float(db[outside].max() - db[k])


def _envelope(image, domain: str) -> np.ndarray:
    if isinstance(image, BmodeImage):
        env = 10.0 ** (image.db_values / 20.0)
    elif isinstance(image, IqImage):
        env = image.envelope
    else:
        env = np.asarray(image, dtype=np.float64)
    if domain == "db":
        with np.errstate(divide="ignore"):
            return 20 * np.log10(env)
    if domain != "envelope":
        raise ValueError("domain must be 'envelope' or 'db'")
    return env


def _regions(image, inner, outer, domain):
    env = _envelope(image, domain)
    for m in (inner, outer):
        problems = m.validate()
        if problems:
            raise ValueError("invalid RegionMask: " + "; ".join(problems))
        if m.membership.shape != env.shape:
            raise ValueError("mask shape does not match image")
    if np.any(inner.membership & outer.membership):
        raise ValueError("inner and outer masks must be disjoint")
    return env[inner.membership], env[outer.membership]


def cnr(image, inner: RegionMask, outer: RegionMask, domain: str = "envelope") -> float:
    """20 log10(|mu_i - mu_o| / sqrt(var_i + var_o)); -inf when the means coincide."""
    a, b = _regions(image, inner, outer, domain)
    pooled = a.var() + b.var()
    if not pooled > 0:
        raise DegenerateVarianceError("zero pooled variance")
    diff = abs(a.mean() - b.mean())
    if diff == 0:
        return -math.inf
    return 20 * math.log10(diff / math.sqrt(pooled))


def gcnr_values(a, b, bins: int = 256) -> float:
    """1 - overlap of the two unit-mass histograms over their pooled range."""
    if bins < 32:
        raise ValueError("bins must be >= 32")
    a, b = np.ravel(a), np.ravel(b)
    if not len(a) or not len(b):
        raise ValueError("both regions must be non-empty")
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    if hi == lo:
        return 0.0
    ha, _ = np.histogram(a, bins=bins, range=(lo, hi))
    hb, _ = np.histogram(b, bins=bins, range=(lo, hi))
    overlap = np.minimum(ha / len(a), hb / len(b)).sum()
    return float(min(1.0, max(0.0, 1.0 - overlap)))


def gcnr(image, inner: RegionMask, outer: RegionMask, bins: int = 256,
         domain: str = "envelope") -> float:
    a, b = _regions(image, inner, outer, domain)
    return gcnr_values(a, b, bins)


def disk_masks(grid: PixelGrid, centre, radius: float, margin: float = 0.25e-3,
               outer_radius: float | None = None):
    """Anechoic disk (radius - margin) and a surrounding background annulus.

    The annulus starts at radius + margin and by default has the disk's area.
    """
    cx, cz = centre
    X, Z = grid.mesh()
    r = np.hypot(X - cx, Z - cz)
    r_in = radius - margin
    r0 = radius + margin
    if outer_radius is None:
        outer_radius = math.sqrt(r_in ** 2 + r0 ** 2)
    inner = RegionMask(grid, r <= r_in, "anechoic")
    outer = RegionMask(grid, (r >= r0) & (r <= outer_radius), "background")
    return inner, outer


def format_report(rows) -> str:
    """'metric region value unit' lines."""
    return "".join(f"{m} {r} {v:.6g} {u}\n" for m, r, v, u in rows)


def parse_report(text: str) -> list[tuple[str, str, float, str]]:
    out = []
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        m, r, v, u = line.split()
        out.append((m, r, float(v), u))
    return out
