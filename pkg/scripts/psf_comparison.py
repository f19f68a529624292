"""Point-spread comparison: DAS 1-PW, DAS 75-PW compound and f-DMAS 1-PW.

    python3 scripts/psf_comparison.py --depths 5 25 40

For each depth a single scatterer at x = 0 is simulated on a 128-element
probe; the table lists lateral FWHM and the off-axis level of the beam plot
(max over +-1 mm of depth) outside twice the 1-PW FWHM.
"""
import argparse

import numpy as np

from pwdcl.beamform import compound, das_beamform, dmas_beamform, to_bmode
from pwdcl.core import PixelGrid, ProbeGeometry
from pwdcl.quality import extract_profile, fwhm, peak_sidelobe_level
from pwdcl.simfield import MM, Phantom, angle_fan, round_trip_duration, simulate_rf


def local_grid(probe, depth, half_width=4 * MM, half_depth=2 * MM):
    d = probe.wavelength / 4
    w = 2 * int(round(half_width / d)) + 1
    h = 2 * int(round(half_depth / d)) + 1
    return PixelGrid(-(w - 1) / 2 * d, max(depth - half_depth, d), d, d, w, h)


def psf_row(probe, depth, n_angles, max_deg):
    ph = Phantom([0.0], [depth], [1.0], "point", (-20 * MM, 20 * MM, 0.0, depth + 5 * MM))
    grid = local_grid(probe, depth)
    duration = round_trip_duration(ph, probe)
    angles = angle_fan(n_angles, max_deg)
    rfs = [simulate_rf(ph, probe, float(a), duration) for a in angles]
    centre = int(np.argmin(np.abs(angles)))
    images = {"DAS-1PW": das_beamform(rfs[centre], grid),
              f"DAS-{n_angles}PW": compound(das_beamform(rf, grid) for rf in rfs),
              "f-DMAS-1PW": dmas_beamform(rfs[centre], grid)}
    profiles = {k: extract_profile(to_bmode(v), "lateral", depth, half_window=1 * MM)
                for k, v in images.items()}
    exclusion = 2 * fwhm(profiles["DAS-1PW"])
    return {k: (fwhm(p) / MM, peak_sidelobe_level(p, exclusion)) for k, p in profiles.items()}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--depths", type=float, nargs="+", default=[5.0, 25.0, 40.0], help="mm")
    ap.add_argument("--angles", type=int, default=75)
    ap.add_argument("--max-angle", type=float, default=16.0)
    ap.add_argument("--elements", type=int, default=128)
    args = ap.parse_args()
    probe = ProbeGeometry(n_elements=args.elements, fs=40e6)
    print(f"{'depth':>6} {'method':<12} {'FWHM mm':>8} {'off-axis dB':>12}")
    for depth in args.depths:
        for name, (w, sl) in psf_row(probe, depth * MM, args.angles, args.max_angle).items():
            print(f"{depth:6.1f} {name:<12} {w:8.3f} {sl:12.1f}")


if __name__ == "__main__":
    main()
