"""Small U-Net style encoder-decoder on [2 x H x W] I/Q crops, numpy only.

Layout: encoder blocks enc0..enc{L-1} (max-pool between levels), a
bottleneck block at the lowest level, then for each level going up a
nearest-neighbor upsample + conv, channel concatenation with the encoder
skip, and a decoder block. A final conv maps to 2 channels through tanh.
Every block is two 3x3 same-padded convolutions with LeakyReLU.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view



@dataclass(frozen=True)
class NetworkConfig:
    levels: int = 3
    filters: tuple = (8, 16, 32)
    kernel_size: int = 3
    leaky_slope: float = 0.01
    crop_size: int = 64
    dtype: str = "float64"

    def __post_init__(self):
        object.__setattr__(self, "filters", tuple(int(f) for f in self.filters))

    def validate(self) -> list[str]:
        v = []
        if not self.levels >= 1:
            v.append("levels: must be >= 1")
        if len(self.filters) != self.levels:
            v.append("filters: length must equal levels")
        if any(f < 1 for f in self.filters):
            v.append("filters: must be positive")
        if self.kernel_size != 3:
            v.append("kernel_size: only 3 is supported")
        if not 0 < self.leaky_slope < 1:
            v.append("leaky_slope: must lie in (0, 1)")
        if not self.crop_size >= 1 or self.crop_size % (2 ** max(self.levels - 1, 0)):
            v.append("crop_size: must be positive and divisible by 2^(levels-1)")
        if self.dtype not in ("float64", "float32"):
            v.append("dtype: must be float64 or float32")
        return v


def layer_specs(cfg: NetworkConfig) -> list[tuple[str, int, int]]:
    """(name, in_channels, out_channels) in parameter layout order."""
    f, L = cfg.filters, cfg.levels
    specs = []
    for l in range(L):
        specs += [(f"enc{l}a", 2 if l == 0 else f[l - 1], f[l]), (f"enc{l}b", f[l], f[l])]
    specs += [("bottleneck_a", f[L - 1], f[L - 1]), ("bottleneck_b", f[L - 1], f[L - 1])]
    for l in range(L - 2, -1, -1):
        specs += [(f"up{l}", f[l + 1], f[l]), (f"dec{l}a", 2 * f[l], f[l]),
                  (f"dec{l}b", f[l], f[l])]
    specs.append(("out", f[0], 2))
    return specs


@dataclass
class Parameters:
    kernels: list
    biases: list
    iteration: int = 0

    def arrays(self) -> list[np.ndarray]:
        """Kernel/bias arrays interleaved in layout order."""
        return [a for pair in zip(self.kernels, self.biases) for a in pair]

    @classmethod
    def from_arrays(cls, arrays, iteration=0) -> "Parameters":
        arrays = list(arrays)
        return cls(arrays[0::2], arrays[1::2], iteration)

    def copy(self) -> "Parameters":
        return Parameters([k.copy() for k in self.kernels], [b.copy() for b in self.biases],
                          self.iteration)

    def scaled(self, s: float) -> "Parameters":
        return Parameters.from_arrays([a * s for a in self.arrays()], self.iteration)

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays())


def _check_cfg(cfg: NetworkConfig):
    problems = cfg.validate()
    if problems:
        raise ValueError("invalid NetworkConfig: " + "; ".join(problems))


def init_parameters(cfg: NetworkConfig, seed: int = 0) -> Parameters:
    """Uniform(-sqrt(3/fan_in), sqrt(3/fan_in)) kernels, zero biases."""
    _check_cfg(cfg)
    rng = np.random.default_rng(seed)
    dt = np.dtype(cfg.dtype)
    kernels, biases = [], []
    for _, cin, cout in layer_specs(cfg):
        bound = np.sqrt(3.0 / (cin * 9))
        kernels.append(rng.uniform(-bound, bound, (cout, cin, 3, 3)).astype(dt))
        biases.append(np.zeros(cout, dtype=dt))
    return Parameters(kernels, biases, 0)


def zero_parameters(cfg: NetworkConfig) -> Parameters:
    _check_cfg(cfg)
    dt = np.dtype(cfg.dtype)
    return Parameters([np.zeros((o, i, 3, 3), dt) for _, i, o in layer_specs(cfg)],
                      [np.zeros(o, dt) for _, _, o in layer_specs(cfg)], 0)


# --- primitive layers ---------------------------------------------------------

def _im2col(x):
    c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))  # c, h, w, 3, 3
    return win.transpose(0, 3, 4, 1, 2).reshape(c * 9, h * w)


def conv2d(x, kernel, bias, return_cols=False):
    """Same-padded (zeros) 3x3 cross-correlation, x: [C x H x W]."""
    c, h, w = x.shape
    if kernel.shape[1] != c or kernel.shape[2:] != (3, 3):
        raise ValueError(f"kernel {kernel.shape} does not match input channels {c}")
    cols = _im2col(x)
    y = (kernel.reshape(kernel.shape[0], -1) @ cols).reshape(-1, h, w) + bias[:, None, None]
    return (y, cols) if return_cols else y


def conv2d_adjoint(grad, kernel):
    """Gradient of conv2d w.r.t. its input."""
    o, c = kernel.shape[:2]
    _, h, w = grad.shape
    dcols = (kernel.reshape(o, -1).T @ grad.reshape(o, -1)).reshape(c, 3, 3, h, w)
    dxp = np.zeros((c, h + 2, w + 2), dtype=grad.dtype)
    for ky in range(3):
        for kx in range(3):
            dxp[:, ky:ky + h, kx:kx + w] += dcols[:, ky, kx]
    return dxp[:, 1:-1, 1:-1]


def conv2d_param_grads(grad, cols, kernel_shape):
    o = kernel_shape[0]
    g = grad.reshape(o, -1)
    return (g @ cols.T).reshape(kernel_shape), g.sum(axis=1)


def downsample(x):
    """2x2 max-pool; returns (pooled, argmax index within each block)."""
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"downsample needs even spatial dims, got {h}x{w}")
    blocks = x.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h // 2, w // 2, 4)
    arg = blocks.argmax(axis=-1)  # first max in row-major order
    return np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0], arg


def downsample_adjoint(grad, arg):
    c, h2, w2 = grad.shape
    blocks = np.zeros((c, h2, w2, 4), dtype=grad.dtype)
    np.put_along_axis(blocks, arg[..., None], grad[..., None], axis=-1)
    return blocks.reshape(c, h2, w2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, 2 * h2, 2 * w2)


def upsample(x):
    """Nearest-neighbor 2x."""
    return x.repeat(2, axis=1).repeat(2, axis=2)


def upsample_adjoint(grad):
    c, h, w = grad.shape
    return grad.reshape(c, h // 2, 2, w // 2, 2).sum(axis=(2, 4))


def leaky_relu(x, slope):
    return np.where(x > 0, x, slope * x)


def leaky_relu_adjoint(grad, pre, slope):
    return np.where(pre > 0, grad, slope * grad)


# --- network ------------------------------------------------------------------

@dataclass
class Cache:
    params: Parameters
    input_shape: tuple
    convs: dict = field(default_factory=dict)  # name -> (cols, pre-activation)
    pools: dict = field(default_factory=dict)
    output: np.ndarray | None = None


def forward(params: Parameters, cfg: NetworkConfig, x) -> tuple[np.ndarray, Cache]:
    """Map a [2 x H x W] crop to a [2 x H x W] prediction in (-1, 1)."""
    _check_cfg(cfg)
    dt = np.dtype(cfg.dtype)
    x = np.asarray(x, dtype=dt)
    L = cfg.levels
    if x.ndim != 3 or x.shape[0] != 2:
        raise ValueError(f"input must be [2 x H x W], got {x.shape}")
    if x.shape[1] % 2 ** (L - 1) or x.shape[2] % 2 ** (L - 1):
        raise ValueError(f"spatial dims {x.shape[1:]} not divisible by 2^{L - 1}")
    if len(params.kernels) != len(layer_specs(cfg)):
        raise ValueError("parameters do not match the network configuration")
    layer = {name: n for n, (name, _, _) in enumerate(layer_specs(cfg))}
    cache = Cache(params, x.shape)
    slope = cfg.leaky_slope

    def conv(h, name, act=True):
        n = layer[name]
        pre, cols = conv2d(h, params.kernels[n], params.biases[n], return_cols=True)
        cache.convs[name] = (cols, pre)
        return leaky_relu(pre, slope) if act else pre

    h = x
    skips = []
    for l in range(L):
        if l > 0:
            h, cache.pools[l] = downsample(h)
        h = conv(conv(h, f"enc{l}a"), f"enc{l}b")
        skips.append(h)
    h = conv(conv(h, "bottleneck_a"), "bottleneck_b")
    for l in range(L - 2, -1, -1):
        h = conv(upsample(h), f"up{l}")
        h = np.concatenate([h, skips[l]], axis=0)
        h = conv(conv(h, f"dec{l}a"), f"dec{l}b")
    below_one = np.nextafter(dt.type(1), dt.type(0))  # keeps tanh strictly inside (-1, 1)
    y = np.clip(np.tanh(conv(h, "out", act=False)), -below_one, below_one)
    cache.output = y
    return y, cache


def backward(params: Parameters, cfg: NetworkConfig, cache: Cache, grad_output):
    """Reverse-mode pass; returns (parameter gradients, input gradient)."""
    if cache.params is not params or cache.output is None:
        raise ValueError("cache does not belong to these parameters (stale forward pass)")
    g = np.asarray(grad_output, dtype=cache.output.dtype)
    if g.shape != cache.output.shape:
        raise ValueError(f"grad_output shape {g.shape} != output shape {cache.output.shape}")
    specs = layer_specs(cfg)
    layer = {name: n for n, (name, _, _) in enumerate(specs)}
    gk = [None] * len(specs)
    gb = [None] * len(specs)
    slope = cfg.leaky_slope
    L = cfg.levels

    def conv_back(g, name, act=True):
        n = layer[name]
        cols, pre = cache.convs[name]
        if act:
            g = leaky_relu_adjoint(g, pre, slope)
        gk[n], gb[n] = conv2d_param_grads(g, cols, params.kernels[n].shape)
        return conv2d_adjoint(g, params.kernels[n])

    g = g * (1.0 - cache.output ** 2)
    g = conv_back(g, "out", act=False)
    skip_grads = [None] * L
    # decoder levels were applied L-2 .. 0, so unwind 0 .. L-2
    for l in range(0, L - 1):
        g = conv_back(conv_back(g, f"dec{l}b"), f"dec{l}a")
        n_up = params.kernels[layer[f"up{l}"]].shape[0]
        g, skip_grads[l] = g[:n_up], g[n_up:]
        g = upsample_adjoint(conv_back(g, f"up{l}"))
    g = conv_back(conv_back(g, "bottleneck_b"), "bottleneck_a")
    for l in range(L - 1, -1, -1):
        if skip_grads[l] is not None:
            g = g + skip_grads[l]
        g = conv_back(conv_back(g, f"enc{l}b"), f"enc{l}a")
        if l > 0:
            g = downsample_adjoint(g, cache.pools[l])
    return Parameters(gk, gb, params.iteration), g
