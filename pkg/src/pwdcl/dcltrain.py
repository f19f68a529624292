"""Coherence-loss training of the I/Q network, plus the supervised MSE baseline.

One step: pick an input frame other than the validation frame, cut one
random crop shared by every frame, predict from the input crop and score
the prediction against the crops of all remaining frames.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import net
from .beamform import compound
from .core import DegenerateNormError, IqImage, PwSet, check

log = logging.getLogger(__name__)

BETA1, BETA2, EPS = 0.9, 0.999, 1e-8


class DivergenceError(FloatingPointError):
    """A non-finite gradient reached the optimizer."""


@dataclass(frozen=True)
class TrainConfig:
    lr_init: float = 1e-4
    lr_min: float = 1e-7
    period_steps: int = 2000
    weight_decay: float = 0.01
    total_steps: int = 2000
    crop_size: int = 64
    seed: int = 0
    loss_kind: str = "coherence"
    validation_index: int = -1  # -1: frame closest to 0 degrees
    val_interval: int = 100
    checkpoint_interval: int = 0
    record_time: bool = True

    def validate(self) -> list[str]:
        v = []
        if not 0 < self.lr_min <= self.lr_init:
            v.append("lr_min: must satisfy 0 < lr_min <= lr_init")
        if not self.period_steps >= 1:
            v.append("period_steps: must be >= 1")
        if not self.weight_decay >= 0:
            v.append("weight_decay: must be >= 0")
        if not self.total_steps >= 0:
            v.append("total_steps: must be >= 0")
        if not self.crop_size >= 1:
            v.append("crop_size: must be >= 1")
        if self.loss_kind not in ("coherence", "mse"):
            v.append("loss_kind: must be 'coherence' or 'mse'")
        if not self.val_interval >= 1:
            v.append("val_interval: must be >= 1")
        return v


@dataclass
class OptimizerState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def zeros_like(cls, params: net.Parameters) -> "OptimizerState":
        arrs = params.arrays()
        return cls([np.zeros_like(a) for a in arrs], [np.zeros_like(a) for a in arrs], 0)


@dataclass(frozen=True)
class TrainRecord:
    step: int
    lr: float
    train_loss: float
    val_loss: float = math.nan
    elapsed: float = 0.0
    input_index: int = -1
    crop: tuple = ()

    def line(self) -> str:
        return (f"{self.step} {self.lr:.9e} {self.train_loss:.12e} "
                f"{self.val_loss:.12e} {self.elapsed:.3f}")


def _complex(x) -> np.ndarray:
    return x.complex if isinstance(x, IqImage) else np.asarray(x)


def coherence_loss(pred, targets) -> tuple[float, np.ndarray]:
    """Sum over targets of -Re<f, P_t> / (|f| |P_t|), with its gradient.

    The gradient is returned as a complex array whose real and imaginary
    parts are the derivatives w.r.t. the I and Q planes of ``pred``.
    """
    f = _complex(pred)
    targets = [_complex(t) for t in targets]
    if not targets:
        raise ValueError("coherence_loss needs at least one target")
    nf = math.sqrt(float(np.sum(f.real ** 2 + f.imag ** 2)))
    if nf == 0:
        raise DegenerateNormError("prediction has zero norm")
    loss = 0.0
    grad = np.zeros(f.shape, dtype=np.complex128)
    for p in targets:
        if p.shape != f.shape:
            raise ValueError(f"target shape {p.shape} != prediction shape {f.shape}")
        npt = math.sqrt(float(np.sum(p.real ** 2 + p.imag ** 2)))
        if npt == 0:
            raise DegenerateNormError("target has zero norm")
        r = float(np.sum(f.real * p.real + f.imag * p.imag))
        loss -= r / (nf * npt)
        # d/df of -r/(|f||p|) = -p/(|f||p|) + r f/(|f|^3 |p|)
        grad += -p / (nf * npt) + (r / (nf ** 3 * npt)) * f
    return loss, grad


def mse_loss(pred, reference) -> tuple[float, np.ndarray]:
    """Mean squared error over both I and Q planes, with gradient."""
    f, r = _complex(pred), _complex(reference)
    if f.shape != r.shape:
        raise ValueError(f"shape mismatch {f.shape} vs {r.shape}")
    d = f - r
    m = 2 * d.size
    return float(np.sum(d.real ** 2 + d.imag ** 2)) / m, (2.0 / m) * d


def cosine_lr(step: int, cfg: TrainConfig) -> float:
    """Cosine annealing with warm restarts every period_steps."""
    if step < 0:
        raise ValueError("step must be >= 0")
    phase = (step % cfg.period_steps) / cfg.period_steps
    return cfg.lr_min + 0.5 * (cfg.lr_init - cfg.lr_min) * (1 + math.cos(math.pi * phase))


def adamw_step(params: net.Parameters, grads: net.Parameters, state: OptimizerState,
               lr: float, cfg: TrainConfig):
    """Decoupled weight decay Adam; returns new (params, state)."""
    garr = grads.arrays()
    for n, g in enumerate(garr):
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in parameter array {n} at step {state.step}")
    t = state.step + 1
    bc1, bc2 = 1 - BETA1 ** t, 1 - BETA2 ** t
    decay = 1 - lr * cfg.weight_decay
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params.arrays(), garr, state.m, state.v):
        m = BETA1 * m + (1 - BETA1) * g
        v = BETA2 * v + (1 - BETA2) * g * g
        step = (m / bc1) / (np.sqrt(v / bc2) + EPS)
        new_p.append(p * decay - lr * step)
        new_m.append(m)
        new_v.append(v)
    return (net.Parameters.from_arrays(new_p, params.iteration + 1),
            OptimizerState(new_m, new_v, t))


def default_validation_index(angles) -> int:
    return int(np.argmin(np.abs(np.asarray(angles))))


def percentile(values, q: float) -> float:
    """Linear-interpolation percentile (numpy's default definition)."""
    return float(np.percentile(np.ravel(values), q))


def normalize_set(pw: PwSet, q: float = 99.9) -> PwSet:
    """Divide every frame by the q-th percentile envelope of the compound frame."""
    check(pw)
    scale = percentile(compound(pw.frames).envelope, q)
    if not scale > 0:
        raise ValueError("cannot normalize an all-zero plane-wave set")
    frames = [IqImage(f.grid, f.i_plane / scale, f.q_plane / scale, f.angle,
                      f.norm_scale * scale, dict(f.meta)) for f in pw.frames]
    return PwSet(frames, pw.validation_index)


def _planes(z) -> np.ndarray:
    return np.stack([z.real, z.imag])


def _clip_input(z) -> tuple[np.ndarray, int]:
    x = _planes(z)
    clipped = int(np.count_nonzero(np.abs(x) > 1))
    return np.clip(x, -1.0, 1.0), clipped


def predict(params, ncfg: net.NetworkConfig, crop) -> np.ndarray:
    """Network prediction for one complex crop, as a complex array."""
    x, _ = _clip_input(crop)
    y, _ = net.forward(params, ncfg, x)
    return y[0] + 1j * y[1]


def tile_origins(n: int, size: int) -> list[int]:
    """Crop offsets covering [0, n); the last tile is clamped to the edge."""
    if size > n:
        raise ValueError(f"crop {size} larger than frame dimension {n}")
    starts = list(range(0, n - size + 1, size))
    if starts[-1] + size < n:
        starts.append(n - size)
    return starts


def infer(params, ncfg: net.NetworkConfig, frame: IqImage) -> IqImage:
    """Tiled full-frame prediction; overlapping edge tiles take the later tile."""
    S = ncfg.crop_size
    z = frame.complex
    out = np.zeros(z.shape, dtype=np.complex128)
    for r in tile_origins(z.shape[0], S):
        for c in tile_origins(z.shape[1], S):
            out[r:r + S, c:c + S] = predict(params, ncfg, z[r:r + S, c:c + S])
    meta = dict(frame.meta, beamformer="dl")
    return IqImage.from_complex(frame.grid, out, frame.angle, frame.norm_scale, meta)


def validate(pw: PwSet, params, ncfg: net.NetworkConfig) -> float:
    """Coherence loss of P_v's tiled prediction against every other frame, tile-averaged."""
    S = ncfg.crop_size
    stack = pw.stack()
    v = pw.validation_index
    others = [t for t in range(pw.k) if t != v]
    losses = []
    for r in tile_origins(stack.shape[1], S):
        for c in tile_origins(stack.shape[2], S):
            crops = stack[:, r:r + S, c:c + S]
            f = predict(params, ncfg, crops[v])
            loss, _ = coherence_loss(f, [crops[t] for t in others])
            losses.append(loss)
    return float(np.mean(losses))


def train_step(pw: PwSet, params, state: OptimizerState, cfg: TrainConfig,
               ncfg: net.NetworkConfig, rng: np.random.Generator,
               reference: IqImage | None = None, stack=None):
    """One optimizer step; returns (params, state, TrainRecord)."""
    k, v, S = pw.k, pw.validation_index, ncfg.crop_size
    stack = pw.stack() if stack is None else stack
    H, W = stack.shape[1:]
    candidates = [j for j in range(k) if j != v]
    i = candidates[int(rng.integers(len(candidates)))]
    r = int(rng.integers(0, H - S + 1))
    c = int(rng.integers(0, W - S + 1))
    crops = stack[:, r:r + S, c:c + S]
    lr = cosine_lr(state.step, cfg)

    x, _ = _clip_input(crops[i])
    y, cache = net.forward(params, ncfg, x)
    f = y[0] + 1j * y[1]
    try:
        if cfg.loss_kind == "coherence":
            loss, g = coherence_loss(f, [crops[t] for t in range(k) if t not in (i, v)])
        else:
            if reference is None:
                raise ValueError("mse training needs a reference image")
            loss, g = mse_loss(f, reference.complex[r:r + S, c:c + S])
    except DegenerateNormError as exc:
        log.warning("step %d skipped: %s", state.step, exc)
        skipped = OptimizerState(state.m, state.v, state.step + 1)
        return params, skipped, TrainRecord(state.step, lr, math.nan, input_index=i, crop=(r, c))
    grads, _ = net.backward(params, ncfg, cache, _planes(g))
    new_params, new_state = adamw_step(params, grads, state, lr, cfg)
    return new_params, new_state, TrainRecord(state.step, lr, loss, input_index=i, crop=(r, c))


@dataclass
class TrainResult:
    params: net.Parameters
    state: OptimizerState
    records: list = field(default_factory=list)
    val_history: list = field(default_factory=list)  # (step, val_loss)


def train(pw: PwSet, cfg: TrainConfig, ncfg: net.NetworkConfig, params=None,
          reference: IqImage | None = None, log_file=None, on_checkpoint=None) -> TrainResult:
    """Run cfg.total_steps steps; validation every cfg.val_interval steps and at the end.

    ``log_file`` receives one 'step lr train_loss val_loss elapsed_s' line per
    step. ``on_checkpoint(params, step)`` fires every checkpoint_interval steps.
    """
    for problems in (cfg.validate(), ncfg.validate()):
        if problems:
            raise ValueError("; ".join(problems))
    if ncfg.crop_size != cfg.crop_size:
        ncfg = replace(ncfg, crop_size=cfg.crop_size)
    check(pw)
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = net.init_parameters(ncfg, cfg.seed)
    state = OptimizerState.zeros_like(params)
    stack = pw.stack()
    result = TrainResult(params, state)
    t_start = time.perf_counter()

    def run_validation():
        try:
            return validate(pw, params, ncfg)
        except DegenerateNormError as exc:
            log.warning("validation undefined: %s", exc)
            return math.nan

    for step in range(cfg.total_steps + 1):
        val = math.nan
        if step % cfg.val_interval == 0 or step == cfg.total_steps:
            val = run_validation()
            result.val_history.append((step, val))
        if step == cfg.total_steps:
            break
        params, state, rec = train_step(pw, params, state, cfg, ncfg, rng, reference, stack)
        elapsed = time.perf_counter() - t_start if cfg.record_time else 0.0
        rec = replace(rec, val_loss=val, elapsed=elapsed)
        result.records.append(rec)
        if log_file is not None:
            log_file.write(rec.line() + "\n")
        if cfg.checkpoint_interval and on_checkpoint and (step + 1) % cfg.checkpoint_interval == 0:
            on_checkpoint(params, step + 1)
    result.params, result.state = params, state
    return result
