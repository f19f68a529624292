"""Acceptance criteria 1-7, one test per criterion.

Each test prints a single ``criterion N PASS|FAIL`` line with the measured
values and then asserts. Criterion 5 is the slow end-to-end training run
(about three minutes on one core).
"""
import io
import math
import time

import numpy as np
import pytest

from pwdcl import dcltrain, formats, net
from pwdcl.beamform import (BeamformConfig, _aligned, compound, das_beamform, dmas_beamform,
                            dmas_pairwise, to_bmode)
from pwdcl.core import FormatError, PixelGrid, ProbeGeometry
from pwdcl.dcltrain import TrainConfig, coherence_loss, mse_loss
from pwdcl.experiment import ToyStudy, beamform_set, cyst_contrast, simulate_frames
from pwdcl.quality import (Profile, RegionMask, cnr, extract_profile, fwhm, gcnr_values,
                           peak_sidelobe_level, pral)
from pwdcl.simfield import MM, Phantom, angle_fan, simulate_rf

from conftest import record
from helpers import network_errors, numeric_grad, rel_error, small_net


def _cplx(rng, shape=(8, 8)):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


# --- 1: gradient suite --------------------------------------------------------------------

def _layer_errors(rng):
    x, k, b = rng.normal(size=(2, 6, 5)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)
    w = rng.normal(size=(3, 6, 5))
    loss = lambda: float(np.sum(w * net.conv2d(x, k, b)))
    _, cols = net.conv2d(x, k, b, return_cols=True)
    gk, gb = net.conv2d_param_grads(w, cols, k.shape)
    errs = [rel_error(gk, numeric_grad(loss, k)).max(), rel_error(gb, numeric_grad(loss, b)).max(),
            rel_error(net.conv2d_adjoint(w, k), numeric_grad(loss, x)).max()]
    y = rng.normal(size=(2, 4, 4))
    y[np.abs(y) < 1e-3] = 0.5
    wy = rng.normal(size=(2, 4, 4))
    f = lambda: float(np.sum(wy * net.leaky_relu(y, 0.01)))
    errs.append(rel_error(net.leaky_relu_adjoint(wy, y, 0.01), numeric_grad(f, y)).max())
    wp = rng.normal(size=(2, 2, 2))
    _, arg = net.downsample(y)
    f = lambda: float(np.sum(wp * net.downsample(y)[0]))
    errs.append(rel_error(net.downsample_adjoint(wp, arg), numeric_grad(f, y)).max())
    wu = rng.normal(size=(2, 8, 8))
    f = lambda: float(np.sum(wu * net.upsample(y)))
    errs.append(rel_error(net.upsample_adjoint(wu), numeric_grad(f, y)).max())
    f = lambda: float(np.sum(wy * np.tanh(y)))
    errs.append(rel_error(wy * (1 - np.tanh(y) ** 2), numeric_grad(f, y)).max())
    return max(errs)


def _loss_errors(rng):
    worst = 0.0
    for fn, targets in ((coherence_loss, lambda: [_cplx(rng) for _ in range(3)]),
                        (mse_loss, lambda: _cplx(rng))):
        f = np.stack([rng.normal(size=(8, 8)), rng.normal(size=(8, 8))])
        t = targets()
        _, g = fn(f[0] + 1j * f[1], t)
        num = numeric_grad(lambda: fn(f[0] + 1j * f[1], t)[0], f)
        worst = max(worst, rel_error(np.stack([g.real, g.imag]), num).max())
    return worst


def test_criterion_1_gradient_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    layer = _layer_errors(rng)
    full = max(max(network_errors(*small_net(seed=s)).values()) for s in range(2))
    losses = _loss_errors(rng)
    elapsed = time.perf_counter() - t0
    ok = layer < 1e-4 and full < 1e-4 and losses < 1e-5 and elapsed < 60
    record(1, "gradient suite", ok, f"layers {layer:.2e}, 2-level net {full:.2e}, "
           f"losses {losses:.2e}, {elapsed:.1f} s")
    assert ok


# --- 2: coherence-loss laws ----------------------------------------------------------------

def test_criterion_2_coherence_laws():
    rng = np.random.default_rng(1)
    p = _cplx(rng)
    self_t = coherence_loss(p, [p])[0]
    anti = coherence_loss(-p, [p])[0]
    quad = coherence_loss(1j * p, [p])[0]
    scale_err = 0.0
    bound = 0.0
    for _ in range(1000):
        f, t = _cplx(rng, (16, 16)), _cplx(rng, (16, 16))
        a = coherence_loss(f, [t])[0]
        scale_err = max(scale_err, abs(coherence_loss(rng.uniform(1e-3, 1e3) * f, [t])[0] - a))
        bound = max(bound, abs(a))
    ok = (abs(self_t + 1) <= 1e-12 and abs(anti - 1) <= 1e-12 and abs(quad) <= 1e-12
          and scale_err <= 1e-12 and bound <= 1)
    record(2, "coherence-loss laws", ok, f"self {self_t:+.15f}, anti {anti:+.15f}, "
           f"90deg {quad:+.1e}, scale error {scale_err:.1e}, max |term| {bound:.4f}")
    assert ok


# --- 3: compounding physics ------------------------------------------------------------------

def test_criterion_3_compounding_physics():
    t0 = time.perf_counter()
    probe = ProbeGeometry(n_elements=128, fs=40e6)
    ph = Phantom([0.0], [25 * MM], [1.0], "point", (-20 * MM, 20 * MM, 0.0, 50 * MM))
    d = probe.wavelength / 4
    w, h = 2 * int(round(4 * MM / d)) + 1, int(round(6 * MM / d)) + 1
    grid = PixelGrid(-(w - 1) / 2 * d, 22 * MM, d, d, w, h)
    angles = angle_fan(75, 16.0)
    frames = [das_beamform(simulate_rf(ph, probe, float(a), 45e-6), grid) for a in angles]
    one = frames[37]
    many = compound(frames)
    r, c = np.unravel_index(np.argmax(one.envelope), grid.shape)
    peak_err = max(abs(grid.x[c]) / grid.dx, abs(grid.z[r] - 25 * MM) / grid.dz)
    # beam-plot profiles: maximum over +-1 mm of depth around the target
    lat = lambda iq: extract_profile(to_bmode(iq), "lateral", 25 * MM, half_window=1 * MM)
    f1, f75 = fwhm(lat(one)), fwhm(lat(many))
    exclusion = 2 * f1  # one common main-lobe zone for both images
    sl1 = peak_sidelobe_level(lat(one), exclusion)
    sl75 = peak_sidelobe_level(lat(many), exclusion)
    margin = sl1 - sl75
    elapsed = time.perf_counter() - t0
    ok = peak_err <= 1 and f75 <= f1 and margin > 0 and elapsed < 180
    record(3, "75-angle compounding", ok,
           f"peak offset {peak_err:.2f} px, FWHM 1-PW {f1 / MM:.3f} mm vs 75-PW {f75 / MM:.3f} mm, "
           f"side lobe {sl1:.1f} dB vs {sl75:.1f} dB, margin {margin:.1f} dB, {elapsed:.0f} s")
    assert ok


# --- 4: f-DMAS ordering and 2 f0 line ----------------------------------------------------------

def _pairwise_spectrum_db(rf, probe):
    """2 f0 line over baseline of the unfiltered pairwise signal along x = 0."""
    dz = probe.wavelength / 32
    z = np.arange(22 * MM, 28 * MM, dz)
    X, Z = np.zeros((len(z), 1)), z[:, None]
    samples, weights = [], []
    for _, wgt, val, _ in _aligned(rf, BeamformConfig(), X, Z):
        samples.append(val.real[:, 0])  # RF after alignment and remodulation
        weights.append(np.broadcast_to(wgt, Z.shape)[:, 0])
    s = dmas_pairwise(np.array(samples), np.array(weights))
    spec = np.abs(np.fft.rfft(s * np.hanning(len(s)), 8 * len(s)))
    f = np.fft.rfftfreq(8 * len(s), 2 * dz / probe.c)  # round-trip time per depth step
    f0 = probe.f0
    line = spec[np.abs(f - 2 * f0) < 0.3 * f0].max()
    base = (np.abs(f - f0) < 0.4 * f0) | (np.abs(f - 3 * f0) < 0.4 * f0)
    return 20 * np.log10(line / np.median(spec[base]))


def test_criterion_4_dmas_ordering():
    probe = ProbeGeometry(n_elements=128, fs=40e6)
    ph = Phantom([0.0], [25 * MM], [1.0], "point", (-20 * MM, 20 * MM, 0.0, 50 * MM))
    rf = simulate_rf(ph, probe, 0.0, 45e-6)
    d = probe.wavelength / 4
    w = 2 * int(round(3 * MM / d)) + 1
    grid = PixelGrid(-(w - 1) / 2 * d, 23 * MM, d, d, w, int(round(4 * MM / d)) + 1)
    lat = lambda iq: extract_profile(to_bmode(iq), "lateral", 25 * MM)
    f_das = fwhm(lat(das_beamform(rf, grid)))
    f_dmas = fwhm(lat(dmas_beamform(rf, grid)))
    line_db = _pairwise_spectrum_db(rf, probe)
    ok = f_dmas <= f_das and line_db >= 20
    record(4, "f-DMAS ordering", ok, f"FWHM f-DMAS {f_dmas / MM:.3f} mm vs DAS {f_das / MM:.3f} mm, "
           f"2f0 line {line_db:.1f} dB above baseline")
    assert ok


# --- 5: end-to-end toy DCL run ---------------------------------------------------------------

# Desk-scale rate. With the full-scale 1e-4 the validation loss still improves within
# 2000 steps, but the held-out gCNR ends below DAS (0.792 vs 0.838 for seed 0).
LR_DESK = 2e-3


@pytest.mark.slow
def test_criterion_5_toy_dcl_run():
    t0 = time.perf_counter()
    study = ToyStudy(n_angles=16, seed=0)
    ph = study.phantom()
    rfs = simulate_frames(ph, study.probe(), angle_fan(study.n_angles, study.max_angle_deg))
    pw = dcltrain.normalize_set(beamform_set(rfs, study.grid()))
    steps = 2000
    cfg = TrainConfig(lr_init=LR_DESK, total_steps=steps, period_steps=steps, val_interval=200,
                      seed=0, record_time=False)
    ncfg = net.NetworkConfig(levels=3, filters=(8, 16, 32), crop_size=64)
    res = dcltrain.train(pw, cfg, ncfg)
    l0, l_end = res.val_history[0][1], res.val_history[-1][1]
    improvement = (l0 - l_end) / abs(l0)
    held_out = pw.frames[pw.validation_index]
    out = dcltrain.infer(res.params, ncfg, held_out)
    g_das = np.mean([g for _, g in cyst_contrast(held_out, study.grid(), ph.cysts)])
    g_dcl = np.mean([g for _, g in cyst_contrast(out, study.grid(), ph.cysts)])
    elapsed = time.perf_counter() - t0
    ok = improvement >= 0.2 and g_dcl > g_das and elapsed < 900
    record(5, "toy DCL run", ok, f"validation loss {l0:.3f} -> {l_end:.3f} "
           f"({100 * improvement:.0f}% better), gCNR DCL {g_dcl:.3f} vs DAS 1-PW {g_das:.3f}, "
           f"{elapsed:.0f} s")
    assert ok


# --- 6: metric oracles --------------------------------------------------------------------------

def test_criterion_6_metric_oracles():
    g = PixelGrid(0.0, 1e-3, 1e-4, 1e-4, 8, 16)
    top = np.zeros(g.shape, bool)
    top[:8] = True
    alt = np.tile([1.0, -1.0], 32).reshape(8, 8)
    img = np.concatenate([10 + alt, 2 + alt])
    c = cnr(img, RegionMask(g, top, "anechoic"), RegionMask(g, ~top))
    cnr_ok = abs(c - 20 * math.log10(8 / math.sqrt(2))) <= 1e-6 and abs(c - 15.05) < 0.005

    a = np.linspace(0, 1, 1000)
    trivial_ok = gcnr_values(a, a) == 0.0 and gcnr_values(a, a + 2) == 1.0
    n = 100000
    u = (np.arange(n) + 0.5) / n
    overlap = gcnr_values(u, u + 0.5, 256)
    gcnr_ok = trivial_ok and abs(overlap - 0.5) <= 2 / 256

    step = 0.05 * MM
    x = np.arange(-6 * MM, 6 * MM + step / 2, step)
    amp = np.exp(-0.5 * (x / MM) ** 2)
    width = fwhm(Profile("lateral", x, 20 * np.log10(amp)))
    fwhm_ok = abs(width - 2 * math.sqrt(2 * math.log(2)) * MM) <= step

    z = np.arange(15, 35.001, 0.02) * MM
    db = np.full(z.shape, -60.0)
    db[np.argmin(np.abs(z - 20 * MM))] = 0.0
    base = Profile("axial", z, db.copy())
    db[np.argmin(np.abs(z - 23 * MM))] = -33.37
    one = Profile("axial", z, db.copy())
    db[np.argmin(np.abs(z - 23 * MM))] = -60.0
    db[np.argmin(np.abs(z - 22 * MM))] = -50.0
    db[np.argmin(np.abs(z - 24 * MM))] = -40.0
    two = Profile("axial", z, db)
    prals = (pral(one, 20 * MM), pral(base, 20 * MM, dynamic_range=60.0), pral(two, 20 * MM))
    pral_ok = prals == (pytest.approx(33.37, abs=1e-12), 60.0, 40.0)

    ok = cnr_ok and gcnr_ok and fwhm_ok and pral_ok
    record(6, "metric oracles", ok, f"CNR {c:.6f} dB, gCNR trivial {trivial_ok}, "
           f"uniform overlap {overlap:.4f}, Gaussian FWHM {width / MM:.4f} mm, "
           f"PRAL {prals[0]:.2f}/{prals[1]:.0f}/{prals[2]:.0f} dB")
    assert ok


# --- 7: determinism and formats ----------------------------------------------------------------

def test_criterion_7_determinism_and_formats():
    study = ToyStudy(n_elements=16, n_angles=3, frame_px=24, scatterer_density=2e6,
                     cyst_radius=0.5 * MM, cyst_spacing=1 * MM, seed=4)
    probe, grid = study.probe(), study.grid()
    angles = angle_fan(3, 8.0)

    def run():
        ph = study.phantom()
        rfs = simulate_frames(ph, probe, angles, noise_std=0.01, seed=4)
        pw = beamform_set(rfs, grid)
        ncfg = net.NetworkConfig(levels=2, filters=(4, 8), crop_size=8)
        log = io.StringIO()
        res = dcltrain.train(dcltrain.normalize_set(pw), TrainConfig(
            total_steps=5, val_interval=5, crop_size=8, seed=4, record_time=False), ncfg,
            log_file=log)
        blobs = {"rf": b"".join(formats.encode_rf(rf) for rf in rfs),
                 "iq": formats.encode_set(pw),
                 "ckpt": formats.encode_checkpoint(res.params, ncfg),
                 "log": log.getvalue().encode()}
        return blobs, rfs, pw, res.params, ncfg

    a, rfs, pw, params, ncfg = run()
    b = run()[0]
    identical = [k for k in a if a[k] == b[k]]

    trips = []
    for data, dec, enc in ((formats.encode_rf(rfs[0]), formats.decode_rf, formats.encode_rf),
                           (formats.encode_iq(pw.frames[0]), formats.decode_iq, formats.encode_iq),
                           (a["iq"], formats.decode_set, formats.encode_set)):
        trips.append(enc(dec(data)) == data)
    p2, c2, _ = formats.decode_checkpoint(a["ckpt"])
    trips.append(formats.encode_checkpoint(p2, c2) == a["ckpt"])

    positioned = 0
    for data, dec in ((formats.encode_rf(rfs[0]), formats.decode_rf), (a["iq"], formats.decode_set),
                      (a["ckpt"], formats.decode_checkpoint)):
        try:
            dec(data[:-1])
        except FormatError as exc:
            positioned += "byte offset" in str(exc) and str(len(data)) in str(exc)
    ok = len(identical) == len(a) and all(trips) and positioned == 3
    record(7, "determinism and formats", ok, f"bit-identical {sorted(identical)}, "
           f"round trips {sum(trips)}/4, positioned truncation errors {positioned}/3")
    assert ok
