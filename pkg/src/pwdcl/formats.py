"""Binary and text file formats.

All binary layouts are little-endian. Any file may end with an optional
metadata trailer: b"META", u32 byte length, UTF-8 text (the producing
configuration). Readers keep the trailer text in ``meta["trailer"]`` and
writers re-emit it, so read -> write is byte-exact.
"""
from __future__ import annotations

import io
import struct

import numpy as np

from .beamform import BmodeImage
from .core import FormatError, IqImage, PixelGrid, ProbeGeometry, PwSet, RfFrame
from .net import NetworkConfig, Parameters, layer_specs

RF_MAGIC, IQ_MAGIC, SET_MAGIC, META_MAGIC = b"PWRF", b"PWIQ", b"PWSQ", b"META"
VERSION = 1
_RF_HEAD = struct.Struct("<4sIII6d")
_IQ_HEAD = struct.Struct("<4sIII6d")
_SET_HEAD = struct.Struct("<4sII")
_META_HEAD = struct.Struct("<4sI")
CKPT_HEADER = b"DCLNET v1\n"


class _Reader:
    def __init__(self, data: bytes, name: str = "<bytes>"):
        self.data, self.pos, self.name = data, 0, name

    def take(self, n: int, what: str) -> bytes:
        end = self.pos + n
        if end > len(self.data):
            raise FormatError(
                f"{self.name}: truncated {what} at byte offset {self.pos}: expected {n} bytes, "
                f"{len(self.data) - self.pos} available (file length {len(self.data)}, "
                f"expected at least {end})")
        chunk = self.data[self.pos:end]
        self.pos = end
        return chunk

    def unpack(self, st: struct.Struct, what: str):
        return st.unpack(self.take(st.size, what))

    def magic(self, expected: bytes, got: bytes, offset: int):
        if got != expected:
            raise FormatError(f"{self.name}: bad magic {got!r} at byte offset {offset}, "
                              f"expected {expected!r}")

    def version(self, v: int, offset: int):
        if v != VERSION:
            raise FormatError(f"{self.name}: unsupported version {v} at byte offset {offset + 4}")

    def trailer(self) -> str | None:
        if self.pos == len(self.data):
            return None
        start = self.pos
        tag, n = self.unpack(_META_HEAD, "metadata header")
        self.magic(META_MAGIC, tag, start)
        text = self.take(n, "metadata block").decode("utf-8")
        if self.pos != len(self.data):
            raise FormatError(f"{self.name}: {len(self.data) - self.pos} unexpected trailing "
                              f"bytes at byte offset {self.pos}")
        return text


def _trailer(text: str | None) -> bytes:
    if text is None:
        return b""
    raw = text.encode("utf-8")
    return _META_HEAD.pack(META_MAGIC, len(raw)) + raw


def _meta_text(obj, metadata):
    return metadata if metadata is not None else obj.meta.get("trailer")


def _with_trailer(meta: dict, text):
    if text is not None:
        meta["trailer"] = text
    return meta


# --- RF -------------------------------------------------------------------------

def encode_rf(rf: RfFrame, metadata: str | None = None) -> bytes:
    p = rf.probe
    n_ch, n_s = rf.samples.shape
    head = _RF_HEAD.pack(RF_MAGIC, VERSION, n_ch, n_s, p.fs, p.f0, p.c, p.pitch, rf.angle, rf.t0)
    body = np.ascontiguousarray(rf.samples, dtype="<f4").tobytes()
    return head + body + _trailer(_meta_text(rf, metadata))


def decode_rf(data: bytes, name="<bytes>") -> RfFrame:
    r = _Reader(data, name)
    magic, version, n_ch, n_s, fs, f0, c, pitch, angle, t0 = r.unpack(_RF_HEAD, "RF header")
    r.magic(RF_MAGIC, magic, 0)
    r.version(version, 0)
    samples = np.frombuffer(r.take(4 * n_ch * n_s, "RF samples"), dtype="<f4")
    samples = samples.reshape(n_ch, n_s).astype(np.float64)
    meta = _with_trailer({}, r.trailer())
    probe = ProbeGeometry(n_elements=n_ch, pitch=pitch, f0=f0, fs=fs, c=c)
    return RfFrame(probe, angle, samples, t0, meta)


# --- IQ / PwSet -------------------------------------------------------------------

def _encode_iq_record(iq: IqImage) -> bytes:
    g = iq.grid
    head = _IQ_HEAD.pack(IQ_MAGIC, VERSION, g.width, g.height, g.x0, g.z0, g.dx, g.dz,
                         iq.angle, iq.norm_scale)
    inter = np.empty((g.height, g.width, 2), dtype="<f4")
    inter[..., 0] = iq.i_plane
    inter[..., 1] = iq.q_plane
    return head + inter.tobytes()


def _decode_iq_record(r: _Reader) -> IqImage:
    start = r.pos
    magic, version, w, h, x0, z0, dx, dz, angle, scale = r.unpack(_IQ_HEAD, "IQ header")
    r.magic(IQ_MAGIC, magic, start)
    r.version(version, start)
    vals = np.frombuffer(r.take(8 * w * h, "IQ payload"), dtype="<f4").reshape(h, w, 2)
    grid = PixelGrid(x0, z0, dx, dz, w, h)
    return IqImage(grid, vals[..., 0].astype(np.float64), vals[..., 1].astype(np.float64),
                   angle, scale, {})


def encode_iq(iq: IqImage, metadata: str | None = None) -> bytes:
    return _encode_iq_record(iq) + _trailer(_meta_text(iq, metadata))


def decode_iq(data: bytes, name="<bytes>") -> IqImage:
    r = _Reader(data, name)
    iq = _decode_iq_record(r)
    text = r.trailer()
    if text is not None:
        iq.meta["trailer"] = text
    return iq


def encode_set(pw: PwSet, metadata: str | None = None) -> bytes:
    head = _SET_HEAD.pack(SET_MAGIC, pw.k, pw.validation_index)
    return head + b"".join(_encode_iq_record(f) for f in pw.frames) + _trailer(_meta_text(pw, metadata))


def decode_set(data: bytes, name="<bytes>") -> PwSet:
    r = _Reader(data, name)
    magic, k, v = r.unpack(_SET_HEAD, "PwSet header")
    r.magic(SET_MAGIC, magic, 0)
    frames = [_decode_iq_record(r) for _ in range(k)]
    text = r.trailer()
    return PwSet(frames, v, _with_trailer({}, text))


# --- network checkpoint -------------------------------------------------------------

def encode_checkpoint(params: Parameters, cfg: NetworkConfig, metadata: str | None = None) -> bytes:
    fields = [("levels", str(cfg.levels)), ("filters", ",".join(map(str, cfg.filters))),
              ("kernel_size", str(cfg.kernel_size)), ("leaky_slope", repr(float(cfg.leaky_slope))),
              ("crop_size", str(cfg.crop_size)), ("iteration", str(params.iteration))]
    head = CKPT_HEADER + "".join(f"{k} {v}\n" for k, v in fields).encode("ascii") + b"END\n"
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in params.arrays())
    return head + body + _trailer(metadata)


def decode_checkpoint(data: bytes, name="<bytes>", dtype="float64"):
    """Returns (Parameters, NetworkConfig, trailer text or None)."""
    if not data.startswith(CKPT_HEADER):
        raise FormatError(f"{name}: bad checkpoint header at byte offset 0, "
                          f"expected {CKPT_HEADER!r}")
    end = data.find(b"END\n")
    if end < 0:
        raise FormatError(f"{name}: checkpoint header not terminated by 'END' "
                          f"(searched {len(data)} bytes)")
    fields = {}
    offset = len(CKPT_HEADER)
    for line in data[offset:end].decode("ascii").splitlines():
        key, _, val = line.partition(" ")
        fields[key] = val
    try:
        cfg = NetworkConfig(levels=int(fields["levels"]),
                            filters=tuple(int(f) for f in fields["filters"].split(",")),
                            kernel_size=int(fields["kernel_size"]),
                            leaky_slope=float(fields["leaky_slope"]),
                            crop_size=int(fields["crop_size"]), dtype=dtype)
        iteration = int(fields["iteration"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{name}: malformed checkpoint header field: {exc}") from None
    problems = cfg.validate()
    if problems:
        raise FormatError(f"{name}: invalid network config in header: {'; '.join(problems)}")
    r = _Reader(data, name)
    r.pos = end + 4
    arrays = []
    for lname, cin, cout in layer_specs(cfg):
        for shape, what in (((cout, cin, 3, 3), "kernel"), ((cout,), "bias")):
            n = int(np.prod(shape))
            raw = r.take(8 * n, f"{lname} {what}")
            arrays.append(np.frombuffer(raw, dtype="<f8").reshape(shape).astype(dtype))
    text = r.trailer()
    return Parameters.from_arrays(arrays, iteration), cfg, text


# --- PGM ---------------------------------------------------------------------------------

def pgm_bytes(bmode: BmodeImage, comments=()) -> bytes:
    """Binary P5 image; gray = round-half-up(255 (db + DR) / DR)."""
    dr = bmode.dynamic_range
    gray = np.floor(255.0 * (bmode.db_values + dr) / dr + 0.5)
    gray = np.clip(gray, 0, 255).astype(np.uint8)
    h, w = gray.shape
    lines = ["P5"] + [f"# {c}" for line in comments for c in str(line).splitlines()]
    lines += [f"{w} {h}", "255"]
    return ("\n".join(lines) + "\n").encode("utf-8") + gray.tobytes()


def render_pgm(bmode: BmodeImage, path, comments=()) -> None:
    with open(path, "wb") as fh:
        fh.write(pgm_bytes(bmode, comments))


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    buf = io.BytesIO(data)
    tokens = []
    while len(tokens) < 4:
        line = buf.readline()
        if not line:
            raise FormatError(f"{path}: truncated PGM header")
        line = line.split(b"#", 1)[0]
        tokens += line.split()
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (P5)")
    w, h, maxval = (int(t) for t in tokens[1:4])
    raster = buf.read()
    if len(raster) != w * h:
        raise FormatError(f"{path}: expected {w * h} raster bytes, found {len(raster)}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w)


# --- path helpers ----------------------------------------------------------------------

def _write(path, data: bytes):
    with open(path, "wb") as fh:
        fh.write(data)


def _read(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def write_rf(path, rf: RfFrame, metadata: str | None = None):
    _write(path, encode_rf(rf, metadata))


def read_rf(path) -> RfFrame:
    return decode_rf(_read(path), str(path))


def write_iq(path, obj, metadata: str | None = None):
    """Write an IqImage (PWIQ) or a PwSet (PWSQ)."""
    if isinstance(obj, PwSet):
        _write(path, encode_set(obj, metadata))
    else:
        _write(path, encode_iq(obj, metadata))


def read_iq(path):
    """Read a PWIQ image or a PWSQ set, dispatching on the magic."""
    data = _read(path)
    if data[:4] == SET_MAGIC:
        return decode_set(data, str(path))
    return decode_iq(data, str(path))


def write_checkpoint(path, params: Parameters, cfg: NetworkConfig, metadata: str | None = None):
    _write(path, encode_checkpoint(params, cfg, metadata))


def read_checkpoint(path, dtype="float64"):
    return decode_checkpoint(_read(path), str(path), dtype)


def read_train_log(path) -> list[tuple[int, float, float, float, float]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            parts = line.split()
            if len(parts) != 5:
                raise FormatError(f"{path}: line {n}: expected 5 fields")
            out.append((int(parts[0]), *(float(p) for p in parts[1:])))
    return out
