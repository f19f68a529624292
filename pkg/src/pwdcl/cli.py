"""Command-line front end: ``pwdcl <command> --config FILE --in PATH --out PATH``.

Commands chain as simulate -> beamform -> train -> infer -> evaluate -> render;
``pipeline`` runs the whole comparison in one go. Every file written carries
the producing configuration (binary trailer, PGM header comment or trailing
``#`` lines in text reports).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings
from dataclasses import replace

import numpy as np

from . import dcltrain, formats
from .beamform import compound, das_beamform, dmas_beamform, to_bmode
from .config import ConfigError, RunConfig, load_config
from .core import DegenerateNormError, FormatError, IqImage, PwSet, check
from .experiment import beamform_set, cyst_metrics, point_metrics, roi_grid, simulate_frames
from .quality import format_report, parse_report
from .simfield import (Pulse, angle_fan, build_cyst_phantom, default_point_layout,
                       read_phantom, write_phantom)

log = logging.getLogger("pwdcl")


class CommandError(RuntimeError):
    """A command could not complete; the message is the one-line diagnostic."""


# --- config-derived objects ---------------------------------------------------------

def _grid(cfg: RunConfig):
    v = cfg.values
    return roi_grid(cfg.probe(), (v["beamform.x_min"], v["beamform.x_max"]),
                    (v["beamform.depth_min"], v["beamform.depth_max"]),
                    v["beamform.pixels_per_wavelength"])


def _phantom(cfg: RunConfig, path=None):
    v = cfg.values
    path = path or (v["sim.phantom_file"] if v["sim.phantom"] == "file" else None)
    if path:
        return read_phantom(path)
    if v["sim.phantom"] == "point":
        return default_point_layout()
    s, z = v["sim.cyst_spacing"], v["sim.centre_depth"]
    centres = [(i * s, z + j * s) for j in (-1, 0, 1) for i in (-1, 0, 1)]
    pad = 2e-3
    bbox = (v["beamform.x_min"] - pad, v["beamform.x_max"] + pad,
            v["beamform.depth_min"] - pad, v["beamform.depth_max"] + pad)
    return build_cyst_phantom(centres, v["sim.cyst_radius"], v["sim.scatterer_density"],
                              v["sim.seed"], bbox=bbox)


def _pulse(cfg: RunConfig) -> Pulse:
    return Pulse(cfg["probe.f0"], cfg["sim.bandwidth"])


def _angles(cfg: RunConfig, key="sim.n_angles"):
    return angle_fan(cfg[key], cfg["sim.max_angle_deg"])


# --- file helpers ---------------------------------------------------------------------

def _need(path, what):
    if not path:
        raise CommandError(f"missing required {what} path")
    if not os.path.exists(path):
        raise CommandError(f"{what} not found: {path}")
    return path


def _rf_paths(paths):
    out = []
    for p in paths:
        _need(p, "input")
        if os.path.isdir(p):
            found = sorted(os.path.join(p, f) for f in os.listdir(p) if f.endswith(".pwrf"))
            if not found:
                raise CommandError(f"no .pwrf files in directory {p}")
            out += found
        else:
            out.append(p)
    return out


def _read_image(path) -> IqImage:
    """A PWIQ image, or the validation frame of a PWSQ set."""
    obj = formats.read_iq(_need(path, "input"))
    return obj.frames[obj.validation_index] if isinstance(obj, PwSet) else obj


def _read_set(path) -> PwSet:
    obj = formats.read_iq(_need(path, "input"))
    if not isinstance(obj, PwSet):
        raise CommandError(f"{path}: expected a plane-wave set (PWSQ), got a single image")
    return obj


def _trailer_lines(cfg: RunConfig) -> str:
    return "".join(f"# {line}\n" for line in cfg.dump().splitlines())


def _write_text(path, text, cfg):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text + "# config\n" + _trailer_lines(cfg))


def _render(path, image: IqImage, cfg: RunConfig):
    formats.render_pgm(to_bmode(image, cfg["beamform.dynamic_range"]), path,
                       ["config"] + cfg.dump().splitlines())


def _checkpoint(path, cfg: RunConfig):
    params, ncfg, _ = formats.read_checkpoint(_need(path, "checkpoint"))
    return params, ncfg


def _normalized(image: IqImage) -> IqImage:
    """Scale an unnormalized image by its own 99.9th-percentile envelope."""
    if image.norm_scale != 1.0:
        return image
    scale = dcltrain.percentile(image.envelope, 99.9)
    if not scale > 0:
        raise CommandError("input image is all zero")
    return IqImage(image.grid, image.i_plane / scale, image.q_plane / scale, image.angle,
                   scale, dict(image.meta))


def _infer(params, ncfg, image: IqImage) -> IqImage:
    if image.grid.height < ncfg.crop_size or image.grid.width < ncfg.crop_size:
        raise CommandError(f"image {image.grid.shape} smaller than network crop {ncfg.crop_size}")
    out = dcltrain.infer(params, ncfg, image)
    if not np.any(out.envelope > 0):
        raise CommandError("degenerate output: the network produced an all-zero image "
                           "(dead or all-zero checkpoint)")
    return out


def _train(cfg: RunConfig, pw: PwSet, log_path=None, ckpt_path=None, reference=None,
           loss_kind=None):
    tcfg = cfg.train()
    if loss_kind:
        tcfg = replace(tcfg, loss_kind=loss_kind)
    ncfg = cfg.network()
    v = tcfg.validation_index
    if 0 <= v:
        if v >= pw.k:
            raise CommandError(f"train.validation_index {v} out of range for k = {pw.k}")
        pw = PwSet(pw.frames, v, pw.meta)
    if pw.grid.height < ncfg.crop_size or pw.grid.width < ncfg.crop_size:
        raise CommandError(f"grid {pw.grid.shape} smaller than crop size {ncfg.crop_size}")
    meta = cfg.dump()

    def on_ckpt(params, step):
        if ckpt_path:
            formats.write_checkpoint(f"{ckpt_path}.step{step}", params, ncfg, meta)

    fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        res = dcltrain.train(pw, tcfg, ncfg, reference=reference, log_file=fh,
                             on_checkpoint=on_ckpt)
    finally:
        if fh:
            fh.close()
    if ckpt_path:
        formats.write_checkpoint(ckpt_path, res.params, ncfg, meta)
    return res, ncfg


def _metrics(image: IqImage, phantom, cfg: RunConfig):
    if phantom.cysts:
        return cyst_metrics(image, phantom, cfg["metrics.mask_margin"], cfg["metrics.bins"],
                            cfg["metrics.domain"])
    return point_metrics(image, phantom, cfg["beamform.dynamic_range"],
                         cfg["metrics.pral_guard"], cfg["metrics.pral_window"])


# --- commands ---------------------------------------------------------------------------

def cmd_simulate(args, cfg):
    phantom = _phantom(cfg, args.inp)
    if args.out is None:
        raise CommandError("missing required output directory (--out)")
    os.makedirs(args.out, exist_ok=True)
    meta = cfg.dump()
    rfs = simulate_frames(phantom, cfg.probe(), _angles(cfg), _pulse(cfg), cfg["sim.seed"],
                          cfg["sim.noise_std"])
    for n, rf in enumerate(rfs):
        if "warning" in rf.meta:
            log.warning("frame %d: %s", n, rf.meta["warning"])
        formats.write_rf(os.path.join(args.out, f"rf_{n:03d}.pwrf"), rf, meta)
    ph_path = os.path.join(args.out, "phantom.txt")
    write_phantom(ph_path, phantom)
    with open(ph_path, "a", encoding="utf-8") as fh:
        fh.write("# config\n" + _trailer_lines(cfg))
    return f"wrote {len(rfs)} RF frames to {args.out}"


def cmd_beamform(args, cfg):
    paths = _rf_paths(args.inp_list)
    rfs = [formats.read_rf(p) for p in paths]
    grid, bcfg = _grid(cfg), cfg.beamform()
    if len(rfs) == 1:
        out = das_beamform(rfs[0], grid, bcfg)
    else:
        rfs.sort(key=lambda rf: rf.angle)
        out = beamform_set(rfs, grid, bcfg, cfg["train.validation_index"])
        check(out)
    formats.write_iq(args.out, out, cfg.dump())
    return f"beamformed {len(rfs)} frame(s) to {args.out}"


def cmd_compound(args, cfg):
    frames = []
    for p in args.inp_list:
        obj = formats.read_iq(_need(p, "input"))
        frames += list(obj.frames) if isinstance(obj, PwSet) else [obj]
    formats.write_iq(args.out, compound(frames), cfg.dump())
    return f"compounded {len(frames)} frame(s) to {args.out}"


def cmd_dmas(args, cfg):
    rf = formats.read_rf(_need(args.inp, "input"))
    formats.write_iq(args.out, dmas_beamform(rf, _grid(cfg), cfg.beamform()), cfg.dump())
    return f"f-DMAS image written to {args.out}"


def cmd_train(args, cfg):
    pw = dcltrain.normalize_set(_read_set(args.inp))
    reference, kind = None, None
    if args.reference:
        reference = _normalized(_read_image(args.reference))
        kind = "mse"
    elif cfg["train.loss_kind"] == "mse":
        raise CommandError("train.loss_kind = mse needs --reference")
    res, _ = _train(cfg, pw, args.log or cfg.get("io.log"), args.out, reference, kind)
    last = res.val_history[-1][1]
    return f"trained {len(res.records)} steps, final validation loss {last:.6g}"


def cmd_infer(args, cfg):
    params, ncfg = _checkpoint(args.checkpoint or cfg.get("io.checkpoint"), cfg)
    obj = formats.read_iq(_need(args.inp, "input"))
    if isinstance(obj, PwSet):
        obj = dcltrain.normalize_set(obj)
        image = obj.frames[obj.validation_index]
    else:
        image = _normalized(obj)
    formats.write_iq(args.out, _infer(params, ncfg, image), cfg.dump())
    return f"inference written to {args.out}"


def cmd_evaluate(args, cfg):
    image = _read_image(args.inp)
    phantom = _phantom(cfg, args.phantom or cfg.get("io.phantom"))
    rows = _metrics(image, phantom, cfg)
    if not rows:
        raise CommandError("no evaluable targets inside the image grid")
    text = format_report(rows)
    if args.out:
        _write_text(args.out, text, cfg)
    return text.rstrip("\n")


def cmd_render(args, cfg):
    _render(args.out, _read_image(args.inp), cfg)
    return f"B-mode image written to {args.out}"


def summary_table(rows) -> str:
    """Mean of each metric per method, methods as rows."""
    methods = list(dict.fromkeys(r[0] for r in rows))
    metrics = list(dict.fromkeys(r[1] for r in rows))
    head = f"{'method':<14}" + "".join(f"{m:>14}" for m in metrics)
    lines = [head]
    for meth in methods:
        cells = []
        for m in metrics:
            vals = [r[3] for r in rows if r[0] == meth and r[1] == m]
            cells.append(f"{np.mean(vals):>14.4g}" if vals else f"{'-':>14}")
        lines.append(f"{meth:<14}" + "".join(cells))
    return "\n".join(lines)


def cmd_pipeline(args, cfg):
    if args.out is None:
        raise CommandError("missing required output directory (--out)")
    os.makedirs(args.out, exist_ok=True)
    phantom = _phantom(cfg, args.inp)
    probe, grid, bcfg, meta = cfg.probe(), _grid(cfg), cfg.beamform(), cfg.dump()
    angles = _angles(cfg)
    log.info("simulating %d angles over %d scatterers", len(angles), len(phantom))
    rfs = simulate_frames(phantom, probe, angles, _pulse(cfg), cfg["sim.seed"],
                          cfg["sim.noise_std"])
    frames = [das_beamform(rf, grid, bcfg) for rf in rfs]
    k = len(frames)
    v = cfg["train.validation_index"]
    v = dcltrain.default_validation_index(angles) if v < 0 else v
    if not 0 <= v < k:
        raise CommandError(f"train.validation_index {v} out of range for k = {k}")
    images = {"DAS-1PW": frames[v], f"DAS-{k}PW": compound(frames),
              "f-DMAS-1PW": dmas_beamform(rfs[v], grid, bcfg)}

    if k >= 3 or args.checkpoint:
        if args.checkpoint:
            params, ncfg = _checkpoint(args.checkpoint, cfg)
            scale = dcltrain.percentile(images[f"DAS-{k}PW"].envelope, 99.9)
            f = frames[v]
            p_v = IqImage(grid, f.i_plane / scale, f.q_plane / scale, f.angle, scale, {})
        else:
            pw = dcltrain.normalize_set(PwSet(frames, v))
            res, ncfg = _train(cfg, pw, os.path.join(args.out, "train.log"),
                               os.path.join(args.out, "dcl.ckpt"))
            params, p_v = res.params, pw.frames[v]
            first, last = res.val_history[0][1], res.val_history[-1][1]
            log.info("validation loss %.4g -> %.4g", first, last)
        images["DL-DCL-1PW"] = _infer(params, ncfg, p_v)
    else:
        log.warning("DL-DCL skipped: coherence training needs at least 3 angles")

    if cfg["train.baseline"]:
        n_ref = cfg["sim.ref_angles"]
        ref_rfs = simulate_frames(phantom, probe, _angles(cfg, "sim.ref_angles"), _pulse(cfg),
                                  cfg["sim.seed"], cfg["sim.noise_std"])
        ref = compound(das_beamform(rf, grid, bcfg) for rf in ref_rfs)
        images[f"DAS-{n_ref}PW"] = ref
        pw = dcltrain.normalize_set(PwSet(frames, v)) if k >= 3 else None
        if pw is None:
            raise CommandError("DL-SP baseline needs at least 3 training angles")
        res, ncfg = _train(cfg, pw, os.path.join(args.out, "train_sp.log"),
                           os.path.join(args.out, "sp.ckpt"), _normalized(ref), "mse")
        images["DL-SP-1PW"] = _infer(res.params, ncfg, pw.frames[v])

    rows = []
    for name, image in images.items():
        stem = name.lower()
        formats.write_iq(os.path.join(args.out, f"{stem}.pwiq"), image, meta)
        _render(os.path.join(args.out, f"{stem}.pgm"), image, cfg)
        rows += [(name, *r) for r in _metrics(image, phantom, cfg)]
    text = "".join(f"{m} {metric} {region} {val:.6g} {unit}\n"
                   for m, metric, region, val, unit in rows)
    _write_text(os.path.join(args.out, "report.txt"), text, cfg)
    return summary_table([(m, metric, region, val) for m, metric, region, val, _ in rows])


def read_pipeline_report(path):
    """Rows (method, metric, region, value, unit) of a pipeline report."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    out = []
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        m, rest = line.split(" ", 1)
        out.append((m, *parse_report(rest)[0]))
    return out


COMMANDS = {
    "simulate": (cmd_simulate, "simulate RF frames over the configured angle fan"),
    "beamform": (cmd_beamform, "DAS-beamform RF file(s) to an IQ image or plane-wave set"),
    "compound": (cmd_compound, "coherently compound IQ frames"),
    "dmas": (cmd_dmas, "f-DMAS-beamform one RF frame"),
    "train": (cmd_train, "train the network on a plane-wave set"),
    "infer": (cmd_infer, "apply a trained network to an IQ image"),
    "evaluate": (cmd_evaluate, "image-quality metrics against the phantom"),
    "render": (cmd_render, "log-compressed B-mode as binary PGM"),
    "pipeline": (cmd_pipeline, "simulate, beamform, train, evaluate and compare"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pwdcl", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--seed", type=int, help="overrides PWC_SEED and the config seeds")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("beamform", "compound"):
            p.add_argument("--in", dest="inp_list", nargs="+", required=True)
        else:
            p.add_argument("--in", dest="inp", required=name not in ("simulate", "pipeline"),
                           help="input path" + (" (optional phantom file)"
                                                if name in ("simulate", "pipeline") else ""))
        p.add_argument("--out", required=name != "evaluate")
        if name in ("infer", "pipeline"):
            p.add_argument("--checkpoint")
        if name == "train":
            p.add_argument("--log")
            p.add_argument("--reference", help="reference IQ image: trains with the MSE loss")
        if name == "evaluate":
            p.add_argument("--phantom")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    logging.captureWarnings(True)
    warnings.formatwarning = lambda msg, cat, *_a, **_k: f"{cat.__name__}: {msg}"
    func = COMMANDS[args.command][0]
    try:
        cfg = load_config(args.config).with_seed(args.seed)
        msg = func(args, cfg)
    except (CommandError, ConfigError, FormatError, DegenerateNormError,
            FloatingPointError, ValueError, OSError) as exc:
        first = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"pwdcl {args.command}: error: {first}", file=sys.stderr)
        return 1
    if msg:
        print(msg)
    return 0


if __name__ == "__main__":
    sys.exit(main())
