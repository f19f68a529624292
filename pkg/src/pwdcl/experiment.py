"""Glue for simulated studies: phantom -> RF per angle -> beamformed PwSet."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .beamform import BeamformConfig, compound, das_beamform, to_bmode
from .core import IqImage, PixelGrid, ProbeGeometry, PwSet
from .dcltrain import default_validation_index
from .quality import (OneSidedPeakError, Profile, cnr, disk_masks, extract_profile, fwhm,
                      gcnr, pral)
from .simfield import MM, Phantom, Pulse, angle_fan, round_trip_duration, simulate_rf


def simulate_frames(phantom: Phantom, probe: ProbeGeometry, angles, pulse: Pulse | None = None,
                    seed: int = 0, noise_std: float = 0.0):
    duration = round_trip_duration(phantom, probe)
    return [simulate_rf(phantom, probe, float(a), duration, pulse, seed + n, noise_std)
            for n, a in enumerate(angles)]


def beamform_set(rfs, grid: PixelGrid, cfg: BeamformConfig | None = None,
                 validation_index: int | None = None) -> PwSet:
    frames = [das_beamform(rf, grid, cfg) for rf in rfs]
    if validation_index is None or validation_index < 0:
        validation_index = default_validation_index([f.angle for f in frames])
    return PwSet(frames, validation_index)


def roi_grid(probe: ProbeGeometry, x_span, z_span, pixels_per_wavelength=2.0) -> PixelGrid:
    """Grid over [x_span] x [z_span] with square pixels of wavelength/ppw."""
    d = probe.wavelength / pixels_per_wavelength
    w = int(round((x_span[1] - x_span[0]) / d))
    h = int(round((z_span[1] - z_span[0]) / d))
    return PixelGrid(x_span[0], z_span[0], d, d, w, h)


@dataclass(frozen=True)
class ToyStudy:
    """Desk-scale cyst study defaults used by the acceptance run and scripts."""

    n_elements: int = 64
    fs: float = 20e6
    n_angles: int = 16
    max_angle_deg: float = 16.0
    frame_px: int = 128
    pixels_per_wavelength: float = 2.0
    cyst_radius: float = 1.5 * MM
    cyst_spacing: float = 5.5 * MM
    centre_depth: float = 25 * MM
    scatterer_density: float = 5e7
    seed: int = 0

    def probe(self) -> ProbeGeometry:
        return ProbeGeometry(n_elements=self.n_elements, fs=self.fs)

    def grid(self) -> PixelGrid:
        p = self.probe()
        d = p.wavelength / self.pixels_per_wavelength
        half = self.frame_px * d / 2
        return PixelGrid(-half + d / 2, self.centre_depth - half + d / 2, d, d,
                         self.frame_px, self.frame_px)

    def cyst_centers(self):
        s, z = self.cyst_spacing, self.centre_depth
        return [(i * s, z + j * s) for j in (-1, 0, 1) for i in (-1, 0, 1)]

    def phantom(self, seed: int | None = None) -> Phantom:
        from .simfield import build_cyst_phantom
        g = self.grid()
        pad = 2 * MM
        bbox = (g.x0 - pad, g.x[-1] + pad, g.z0 - pad, g.z[-1] + pad)
        return build_cyst_phantom(self.cyst_centers(), self.cyst_radius,
                                  self.scatterer_density, self.seed if seed is None else seed,
                                  bbox=bbox)


def cyst_contrast(image, grid: PixelGrid, cysts, margin=0.25e-3, bins=256):
    """Per-cyst (cnr, gcnr) over disk/annulus masks."""
    out = []
    for cx, cz, r in cysts:
        inner, outer = disk_masks(grid, (cx, cz), r, margin)
        out.append((cnr(image, inner, outer), gcnr(image, inner, outer, bins)))
    return out


def _local(profile: Profile, centre: float, half: float) -> Profile:
    keep = np.abs(profile.positions - centre) <= half
    vals = profile.values_db[keep]
    return Profile(profile.axis, profile.positions[keep], vals - vals.max())


def _neighbour_gap(values, v, default):
    gaps = [abs(u - v) for u in values if abs(u - v) > 1e-9]
    return min(gaps) if gaps else default


def point_metrics(image: IqImage, phantom: Phantom, dynamic_range=60.0, guard=1.5e-3,
                  window=5e-3):
    """Lateral/axial FWHM (mm) and PRAL (dB) per point target inside the grid.

    Profiles are cut around each target so neighbouring targets do not enter.
    The PRAL window is shortened when the next deeper target on the same
    scan line, or the grid edge, would fall inside it.
    """
    bmode = to_bmode(image, dynamic_range)
    g = image.grid
    pts = [(x, z) for x, z, a in zip(phantom.x, phantom.z, phantom.amplitude) if a != 0]
    rows = []
    for x, z in pts:
        if not (g.x[0] <= x <= g.x[-1] and g.z[0] <= z <= g.z[-1]):
            continue
        region = f"x{x * 1e3:+.1f}z{z * 1e3:.1f}"
        same_row = [px for px, pz in pts if abs(pz - z) < 1e-9]
        same_col = [pz for px, pz in pts if abs(px - x) < 1e-9]
        half_lat = min(2.5 * MM, 0.5 * _neighbour_gap(same_row, x, np.inf))
        half_ax = min(2.5 * MM, 0.5 * _neighbour_gap(same_col, z, np.inf))
        lat = _local(extract_profile(bmode, "lateral", z), x, half_lat)
        ax_full = extract_profile(bmode, "axial", x)
        for name, prof in (("fwhm_lateral", lat), ("fwhm_axial", _local(ax_full, z, half_ax))):
            try:
                rows.append((name, region, fwhm(prof) / MM, "mm"))
            except OneSidedPeakError:
                pass
        deeper = [pz - z for pz in same_col if pz > z + 1e-9]
        limit = min(deeper) - 2 * guard if deeper else np.inf
        w = min(window, limit, g.z[-1] - z - guard)
        if w >= 2 * g.dz and z - guard >= g.z[0]:
            rows.append(("pral", region, pral(ax_full, z, guard, w), "dB"))
    return rows


def cyst_metrics(image: IqImage, phantom: Phantom, margin=0.25e-3, bins=256, domain="envelope"):
    """CNR (dB) and gCNR per anechoic cyst whose masks fit inside the grid."""
    rows = []
    g = image.grid
    for n, (cx, cz, r) in enumerate(phantom.cysts):
        inner, outer = disk_masks(g, (cx, cz), r, margin)
        if inner.validate() or outer.validate():
            continue
        rows.append(("cnr", f"cyst{n}", cnr(image, inner, outer, domain), "dB"))
        rows.append(("gcnr", f"cyst{n}", gcnr(image, inner, outer, bins, domain), "1"))
    return rows
