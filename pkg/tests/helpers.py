"""Shared test oracles: central finite differences and a hand-built identity network."""
import numpy as np

from pwdcl import net

H = 1e-5


def rel_error(a, n):
    a, n = np.asarray(a), np.asarray(n)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def numeric_grad(f, x, h=H):
    """d f / d x by central differences, perturbing ``x`` in place."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def small_net(levels=2, filters=(3, 4), crop=8, seed=0):
    """A small network whose gradients are well above finite-difference noise.

    Kernels are doubled so activations keep their scale through the LeakyReLU
    stack, and biases are randomized so every bias gradient is exercised.
    """
    cfg = net.NetworkConfig(levels=levels, filters=filters, crop_size=crop)
    rng = np.random.default_rng(seed)
    p = net.init_parameters(cfg, seed).scaled(2.0)
    p = net.Parameters(p.kernels, [rng.normal(0, 0.1, b.shape) for b in p.biases])
    x = rng.uniform(-1, 1, (2, crop, crop))
    w = rng.normal(size=(2, crop, crop))
    return cfg, p, x, w


def network_errors(cfg, p, x, w):
    """Max relative error per parameter array and for the input gradient."""
    loss = lambda: float(np.sum(w * net.forward(p, cfg, x)[0]))
    _, cache = net.forward(p, cfg, x)
    grads, gx = net.backward(p, cfg, cache, w)
    errs = {}
    for name, arr, g in zip([f"{s[0]}.{k}" for s in net.layer_specs(cfg) for k in ("w", "b")],
                            p.arrays(), grads.arrays()):
        errs[name] = float(rel_error(g, numeric_grad(loss, arr)).max())
    errs["input"] = float(rel_error(gx, numeric_grad(loss, x)).max())
    return errs


def identity_net(slope=0.01, crop=8):
    """1-level net that reproduces its input before the tanh.

    Each hidden layer carries (a, -a, b, -b); since lrelu(a) - lrelu(-a) =
    (1 + slope) a, the next layer recovers a exactly with weights 1/(1+slope).
    """
    cfg = net.NetworkConfig(levels=1, filters=(4,), leaky_slope=slope, crop_size=crop)
    p = net.zero_parameters(cfg)
    s = 1.0 / (1.0 + slope)
    split = np.array([[1, 0], [-1, 0], [0, 1], [0, -1]], dtype=float)
    merge = np.array([[s, -s, 0, 0], [0, 0, s, -s]])
    for n, (name, _, _) in enumerate(net.layer_specs(cfg)):
        if name == "enc0a":
            m = split
        elif name == "out":
            m = merge
        else:
            m = split @ merge
        p.kernels[n][:, :, 1, 1] = m
    return cfg, p
