"""Flat ``key = value`` run configuration.

Keys are grouped by prefix (probe., sim., beamform., net., train., metrics.,
io.). Unknown keys are rejected; every key except io paths has a default.
Seeds resolve with precedence flag > PWC_SEED > config file > default.
"""
from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass, field

from .beamform import BeamformConfig
from .core import ProbeGeometry, validate
from .dcltrain import TrainConfig
from .net import NetworkConfig


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _int_list(text: str) -> tuple:
    return tuple(int(p) for p in text.replace(",", " ").split())


# key -> (type parser, default)
SCHEMA = {
    "probe.n_elements": (int, 64),
    "probe.pitch": (float, 0.3e-3),
    "probe.f0": (float, 5.0e6),
    "probe.fs": (float, 20.0e6),
    "probe.c": (float, 1540.0),

    "sim.phantom": (str, "cyst"),  # point | cyst | file
    "sim.phantom_file": (str, ""),
    "sim.n_angles": (int, 16),
    "sim.ref_angles": (int, 75),
    "sim.max_angle_deg": (float, 16.0),
    "sim.bandwidth": (float, 0.6),
    "sim.scatterer_density": (float, 5e7),
    "sim.cyst_radius": (float, 1.5e-3),
    "sim.cyst_spacing": (float, 5.5e-3),
    "sim.centre_depth": (float, 25e-3),
    "sim.noise_std": (float, 0.0),
    "sim.seed": (int, 0),

    "beamform.f_number": (float, 1.0),
    "beamform.window": (str, "hann"),
    "beamform.interpolation": (str, "linear"),
    "beamform.pixels_per_wavelength": (float, 2.0),
    "beamform.x_min": (float, -9.856e-3),
    "beamform.x_max": (float, 9.856e-3),
    "beamform.depth_min": (float, 15.144e-3),
    "beamform.depth_max": (float, 34.856e-3),
    "beamform.dynamic_range": (float, 60.0),

    "net.levels": (int, 3),
    "net.filters": (_int_list, (8, 16, 32)),
    "net.kernel_size": (int, 3),
    "net.leaky_slope": (float, 0.01),
    "net.crop_size": (int, 64),
    "net.dtype": (str, "float64"),

    "train.lr_init": (float, 1e-4),
    "train.lr_min": (float, 1e-7),
    "train.period_steps": (int, 2000),
    "train.weight_decay": (float, 0.01),
    "train.total_steps": (int, 2000),
    "train.seed": (int, 0),
    "train.loss_kind": (str, "coherence"),
    "train.validation_index": (int, -1),
    "train.val_interval": (int, 100),
    "train.checkpoint_interval": (int, 0),
    "train.record_time": (_bool, True),
    "train.baseline": (_bool, False),

    "metrics.bins": (int, 256),
    "metrics.mask_margin": (float, 0.25e-3),
    "metrics.pral_guard": (float, 1.5e-3),
    "metrics.pral_window": (float, 5e-3),
    "metrics.domain": (str, "envelope"),

    "io.log": (str, None),
    "io.checkpoint": (str, None),
    "io.phantom": (str, None),
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)
    explicit: set = field(default_factory=set)

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        v = self.values.get(key)
        return default if v is None else v

    def probe(self) -> ProbeGeometry:
        v = self.values
        return ProbeGeometry(v["probe.n_elements"], v["probe.pitch"], v["probe.f0"],
                             v["probe.fs"], v["probe.c"])

    def beamform(self) -> BeamformConfig:
        v = self.values
        return BeamformConfig(v["beamform.f_number"], v["beamform.window"],
                              v["beamform.interpolation"])

    def network(self) -> NetworkConfig:
        v = self.values
        return NetworkConfig(v["net.levels"], v["net.filters"], v["net.kernel_size"],
                             v["net.leaky_slope"], v["net.crop_size"], v["net.dtype"])

    def train(self) -> TrainConfig:
        v = self.values
        return TrainConfig(lr_init=v["train.lr_init"], lr_min=v["train.lr_min"],
                           period_steps=v["train.period_steps"],
                           weight_decay=v["train.weight_decay"],
                           total_steps=v["train.total_steps"], crop_size=v["net.crop_size"],
                           seed=v["train.seed"], loss_kind=v["train.loss_kind"],
                           validation_index=v["train.validation_index"],
                           val_interval=v["train.val_interval"],
                           checkpoint_interval=v["train.checkpoint_interval"],
                           record_time=v["train.record_time"])

    def dump(self) -> str:
        """Canonical text form; parses back to an equal configuration."""
        lines = []
        for key in SCHEMA:
            val = self.values.get(key)
            if val is None:
                continue
            if isinstance(val, tuple):
                val = ",".join(map(str, val))
            elif isinstance(val, bool):
                val = "true" if val else "false"
            elif isinstance(val, float):
                val = repr(val)
            lines.append(f"{key} = {val}")
        return "\n".join(lines) + "\n"

    def with_seed(self, seed: int | None = None, env=None) -> "RunConfig":
        """Apply seed precedence: explicit flag, then PWC_SEED, then file/default."""
        env = os.environ if env is None else env
        chosen = seed
        if chosen is None and env.get("PWC_SEED", "").strip():
            try:
                chosen = int(env["PWC_SEED"])
            except ValueError:
                raise ConfigError(f"PWC_SEED must be an integer, got {env['PWC_SEED']!r}") from None
        if chosen is None:
            return self
        values = dict(self.values, **{"sim.seed": chosen, "train.seed": chosen})
        return RunConfig(values, set(self.explicit))


def _key_errors(cfg: RunConfig) -> list[str]:
    """Module validator violations mapped back to config keys."""
    out = []
    groups = [("probe", validate(cfg.probe()), {}),
              ("beamform", cfg.beamform().validate(), {"apodization_window": "window"}),
              ("net", cfg.network().validate(), {}),
              ("train", cfg.train().validate(), {"crop_size": None})]
    for prefix, problems, rename in groups:
        for p in problems:
            name, _, msg = p.partition(":")
            name = rename.get(name, name)
            key = "net.crop_size" if name is None else f"{prefix}.{name}"
            out.append(f"{key}:{msg}")
    v = cfg.values
    if v["sim.phantom"] not in ("point", "cyst", "file"):
        out.append("sim.phantom: must be point, cyst or file")
    if not v["sim.n_angles"] >= 1 or not v["sim.ref_angles"] >= 1:
        out.append("sim.n_angles: must be >= 1")
    if v["sim.phantom"] == "file" and not os.path.isfile(v["sim.phantom_file"]):
        out.append(f"sim.phantom_file: file not found: {v['sim.phantom_file']!r}")
    if not 0 <= v["sim.max_angle_deg"] < 45:
        out.append("sim.max_angle_deg: must lie in [0, 45)")
    if not 0 < v["sim.bandwidth"] < 2:
        out.append("sim.bandwidth: must lie in (0, 2)")
    if not v["beamform.pixels_per_wavelength"] >= 2:
        out.append("beamform.pixels_per_wavelength: must be >= 2")
    if not 0 <= v["beamform.depth_min"] < v["beamform.depth_max"]:
        out.append("beamform.depth_min: must satisfy 0 <= depth_min < depth_max")
    if not v["beamform.x_min"] < v["beamform.x_max"]:
        out.append("beamform.x_min: must be < beamform.x_max")
    if not v["beamform.dynamic_range"] > 0:
        out.append("beamform.dynamic_range: must be > 0")
    if not v["metrics.bins"] >= 32:
        out.append("metrics.bins: must be >= 32")
    if v["metrics.domain"] not in ("envelope", "db"):
        out.append("metrics.domain: must be envelope or db")
    return out


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    values = {k: default for k, (_, default) in SCHEMA.items()}
    explicit = set()
    lines = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{n}: malformed line, expected 'key = value': {raw!r}")
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{n}: unknown key {key!r}")
        parser = SCHEMA[key][0]
        try:
            parsed = parser(val)
            if isinstance(parsed, float) and not math.isfinite(parsed):
                raise ValueError("value must be finite")
        except ValueError as exc:
            raise ConfigError(f"{source}:{n}: {key}: type mismatch ({exc})") from None
        if key in explicit:
            warnings.warn(f"{source}:{n}: duplicate key {key!r} overrides line {lines[key]}",
                          stacklevel=2)
        values[key] = parsed
        explicit.add(key)
        lines[key] = n
    cfg = RunConfig(values, explicit)
    problems = _key_errors(cfg)
    if problems:
        raise ConfigError(f"{source}: range error: " + "; ".join(problems))
    return cfg


def load_config(path: str | None) -> RunConfig:
    if not path:
        return parse_config("")
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), str(path))
