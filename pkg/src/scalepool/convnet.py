"""Stacked circular convolutions with ReLU, a linear readout, and exact gradients.

Layer ``k`` computes ``f_k[c, a] = relu(b_c + sum_c' w_{c,c'} . patch_a(f_{k-1}[c']))``.
With stride 1 the patch around ``a`` covers offsets ``-left .. F-1-left`` with
``left = (F-1)//2`` for odd ``F`` and ``F//2`` for even ``F`` (periodic
boundaries). With stride ``F`` output ``j`` reads the block ``jF .. jF+F-1``.
In two dimensions the same rule is applied on each axis.

Arrays are batched as ``(batch, channels, *spatial)``.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ParameterError


@dataclass
class ConvLayer:
    weight: np.ndarray  # (out, in, F) or (out, in, F, F)
    bias: np.ndarray  # (out,)
    stride: int

    @property
    def F(self) -> int:
        return self.weight.shape[-1]

    @property
    def dim(self) -> int:
        return self.weight.ndim - 2

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]


@dataclass
class Network:
    layers: list[ConvLayer]
    L: int
    dim: int = 1
    readout_w: np.ndarray | None = None  # (C_K * S_K,) for "flatten", (C_K,) for "mean"
    readout_b: float = 0.0
    relu: bool = True
    meta: dict = field(default_factory=dict)
    readout_pool: str = "flatten"  # "flatten", or "mean"/"sum" over positions per channel

    @property
    def depth(self) -> int:
        return len(self.layers)

    def sizes(self) -> list[int]:
        """Spatial side length of each representation f_0..f_K."""
        out = [self.L]
        for layer in self.layers:
            out.append(out[-1] // layer.stride)
        return out

    def copy(self) -> "Network":
        return copy.deepcopy(self)


@dataclass
class LayerTaps:
    reps: list[np.ndarray]
    output: np.ndarray | None


READOUT_POOLS = ("flatten", "mean", "sum")


def _left(F: int) -> int:
    return (F - 1) // 2 if F % 2 else F // 2


def _wrap_pad(x: np.ndarray, before: int, after: int) -> np.ndarray:
    """Periodic padding of every spatial axis."""
    for ax in range(2, x.ndim):
        parts = []
        if before:
            parts.append(x.take(range(x.shape[ax] - before, x.shape[ax]), axis=ax))
        parts.append(x)
        if after:
            parts.append(x.take(range(after), axis=ax))
        x = np.concatenate(parts, axis=ax)
    return x


def patches(x: np.ndarray, F: int, stride: int, left: int | None = None) -> np.ndarray:
    """Read-only view ``P[b, c, *taps, *out]`` of the input seen by each tap.

    ``left`` overrides the number of taps left of the centre (stride 1 only).
    """
    dim = x.ndim - 2
    if stride == 1:
        left = _left(F) if left is None else left
        xp = _wrap_pad(x, left, F - 1 - left)
        side = x.shape[2]
        return sliding_window_view(xp, (side,) * dim, axis=tuple(range(2, 2 + dim)))
    B, C, side = x.shape[:3]
    n = side // stride
    if dim == 1:
        return x.reshape(B, C, n, stride).transpose(0, 1, 3, 2)
    return x.reshape(B, C, n, stride, n, stride).transpose(0, 1, 3, 5, 2, 4)


def _check_arch(depth: int, F: int, stride: int, L: int, dim: int) -> None:
    if dim not in (1, 2):
        raise ParameterError(f"dim must be 1 or 2, got {dim}")
    if F < 2:
        raise ParameterError(f"filter size must be >= 2, got F={F}")
    if stride not in (1, F):
        raise ParameterError(f"stride must be 1 or F={F}, got {stride}")
    if depth < 1:
        raise ParameterError("depth must be >= 1")
    if stride == F and L % F**depth != 0:
        raise ParameterError(f"stride-F network needs F**depth={F**depth} to divide L={L}")
    if stride == 1 and L < F:
        raise ParameterError(f"L={L} smaller than filter size F={F}")


def build_network(
    depth: int,
    channels: int,
    F: int,
    stride: int,
    L: int,
    dim: int = 1,
    seed: int = 0,
    readout: bool = True,
    readout_pool: str = "flatten",
) -> Network:
    """Random network: Gaussian weights of variance 1/fan-in, zero biases.

    The readout is linear on the flattened last layer (``"flatten"``) or on
    its per-channel spatial mean or sum (``"mean"``, ``"sum"``).
    """
    _check_arch(depth, F, stride, L, dim)
    if readout_pool not in READOUT_POOLS:
        raise ParameterError(f"readout_pool must be one of {READOUT_POOLS}, got {readout_pool!r}")
    rng = np.random.default_rng(seed)
    layers = []
    c_in = 1
    for _ in range(depth):
        fan_in = c_in * F**dim
        w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(channels, c_in) + (F,) * dim)
        layers.append(ConvLayer(w, np.zeros(channels), stride))
        c_in = channels
    net = Network(layers, L, dim, meta={"seed": seed, "init": "gaussian-fan-in"}, readout_pool=readout_pool)
    if readout:
        n_feat = channels * net.sizes()[-1] ** dim if readout_pool == "flatten" else channels
        net.readout_w = rng.normal(0.0, 1.0 / np.sqrt(n_feat), size=n_feat)
    return net


def homogeneous_network(depth: int, F: int, stride: int, L: int, dim: int = 1) -> Network:
    """Single channel, every tap ``1/F**dim``, no biases, no readout."""
    _check_arch(depth, F, stride, L, dim)
    w = np.full((1, 1) + (F,) * dim, 1.0 / F**dim)
    layers = [ConvLayer(w.copy(), np.zeros(1), stride) for _ in range(depth)]
    return Network(layers, L, dim, meta={"homogeneous": True})


def as_batch(net: Network, x) -> tuple[np.ndarray, bool]:
    """Return ``(batch, single)`` where ``single`` marks an unbatched input."""
    x = getattr(x, "pixels", x)
    x = np.asarray(x, dtype=float)
    if x.ndim == net.dim:
        x = x[None, None]
        single = True
    elif x.ndim == net.dim + 2:
        single = False
    else:
        raise ParameterError(f"input of shape {x.shape} incompatible with a {net.dim}D network")
    if x.shape[2:] != (net.L,) * net.dim or x.shape[1] != net.layers[0].in_channels:
        raise ParameterError(f"input of shape {x.shape} does not match L={net.L}, dim={net.dim}")
    return x, single


def _spatial(n: int, dim: int) -> list[int]:
    return list(range(n, n + dim))


def _fast1d(layer: ConvLayer, x: np.ndarray) -> bool:
    return x.ndim == 3 and layer.stride == 1


def _cols1d(x: np.ndarray, F: int, left: int) -> np.ndarray:
    """Contiguous ``(B, C, F, L)`` copy of the stride-1 patches."""
    xp = _wrap_pad(x, left, F - 1 - left)
    L = x.shape[2]
    return np.stack([xp[..., t : t + L] for t in range(F)], axis=2)


def layer_preactivation(layer: ConvLayer, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(z, P)``: pre-activation ``(B, out, *spatial_out)`` and the patches ``P[b, c, *taps, *out]``."""
    dim = x.ndim - 2
    if _fast1d(layer, x):
        P = _cols1d(x, layer.F, _left(layer.F))
        B, C, F, L = P.shape
        z = np.matmul(layer.weight.reshape(-1, C * F), P.reshape(B, C * F, L))
        z += layer.bias[:, None]
        return z, P
    P = patches(x, layer.F, layer.stride)
    # weight (O, C, *taps) against P (B, C, *taps, *out) -> (O, B, *out)
    z = np.tensordot(layer.weight, P, axes=([1] + _spatial(2, dim), [1] + _spatial(2, dim)))
    z = np.moveaxis(z, 0, 1)
    z += layer.bias.reshape((1, -1) + (1,) * dim)
    return z, P


def layer_input_grad(layer: ConvLayer, dz: np.ndarray) -> np.ndarray:
    """Adjoint of the convolution: gradient w.r.t. the layer input."""
    dim = dz.ndim - 2
    F = layer.F
    if _fast1d(layer, dz):
        O, C = layer.weight.shape[:2]
        G = np.matmul(layer.weight.reshape(O, C * F).T, dz).reshape(dz.shape[0], C, F, -1)
        left = _left(F)
        return sum(np.roll(G[:, :, t], t - left, axis=-1) for t in range(F))
    if layer.stride == 1:
        flipped = layer.weight[(slice(None), slice(None)) + (slice(None, None, -1),) * dim]
        Q = patches(dz, F, 1, left=F - 1 - _left(F))
        g = np.tensordot(flipped, Q, axes=([0] + _spatial(2, dim), [1] + _spatial(2, dim)))
        return np.moveaxis(g, 0, 1)
    # non-overlapping blocks: scatter each output back onto its block
    g = np.tensordot(layer.weight, dz, axes=([0], [1]))  # (C, *taps, B, *out)
    B, n = dz.shape[0], dz.shape[2]
    C = layer.in_channels
    if dim == 1:
        return g.transpose(2, 0, 3, 1).reshape(B, C, n * F)
    return g.transpose(3, 0, 4, 1, 5, 2).reshape(B, C, n * F, n * F)


def iter_reps(net: Network, x: np.ndarray) -> Iterator[np.ndarray]:
    """Yield f_0, f_1, ..., f_K for a batch without keeping them all."""
    yield x
    for layer in net.layers:
        z, _ = layer_preactivation(layer, x)
        x = np.maximum(z, 0.0) if net.relu else z
        yield x


def features(net: Network, fK: np.ndarray) -> np.ndarray:
    """Readout input: flattened ``f_K`` or its per-channel spatial mean or sum."""
    if net.readout_pool == "mean":
        return fK.reshape(fK.shape[0], fK.shape[1], -1).mean(axis=2)
    if net.readout_pool == "sum":
        return fK.reshape(fK.shape[0], fK.shape[1], -1).sum(axis=2)
    return fK.reshape(fK.shape[0], -1)


def readout(net: Network, fK: np.ndarray) -> np.ndarray | None:
    if net.readout_w is None:
        return None
    return features(net, fK) @ net.readout_w + net.readout_b


def forward(net: Network, x) -> LayerTaps:
    """Forward pass keeping every layer representation."""
    xb, single = as_batch(net, x)
    reps = list(iter_reps(net, xb))
    out = readout(net, reps[-1])
    if out is None:
        out = reps[-1].reshape(reps[-1].shape[0], -1)
    if single:
        reps = [r[0] for r in reps]
        out = out[0]
    return LayerTaps(reps, out)


def predict(net: Network, x: np.ndarray, batch: int = 512) -> np.ndarray:
    """Scalar outputs for a batch ``(B, 1, *spatial)``."""
    if net.readout_w is None:
        raise ParameterError("network has no readout")
    out = []
    for s in range(0, len(x), batch):
        *_, fK = iter_reps(net, x[s : s + batch])
        out.append(readout(net, fK))
    return np.concatenate(out) if out else np.zeros(0)


@dataclass
class Grads:
    weight: list[np.ndarray]
    bias: list[np.ndarray]
    readout_w: np.ndarray
    readout_b: float


def hinge_loss_and_grads(
    net: Network,
    x: np.ndarray,
    y: np.ndarray,
    weight_decay: float = 0.0,
    decay_readout: bool = True,
    return_output: bool = False,
):
    """Mean hinge loss ``max(0, 1 - y f(x))`` plus ``wd/2 * ||w||^2`` and its gradient.

    The ridge term covers every filter and, if ``decay_readout``, the readout
    weights; biases are never decayed.
    """
    if net.readout_w is None:
        raise ParameterError("training requires a readout")
    B = x.shape[0]
    dim = net.dim
    acts = [x]
    cache = []
    for layer in net.layers:
        z, P = layer_preactivation(layer, acts[-1])
        cache.append((z, P))
        acts.append(np.maximum(z, 0.0) if net.relu else z)
    feat = features(net, acts[-1])
    out = feat @ net.readout_w + net.readout_b
    margin = 1.0 - y * out
    active = margin > 0
    loss = float(np.mean(np.where(active, margin, 0.0)))

    d_out = np.where(active, -y, 0.0) / B
    g_rw = feat.T @ d_out
    g_rb = float(d_out.sum())
    if net.readout_pool in ("mean", "sum"):
        fK = acts[-1]
        n_pos = int(np.prod(fK.shape[2:])) if net.readout_pool == "mean" else 1
        delta = np.broadcast_to(np.outer(d_out, net.readout_w).reshape(fK.shape[:2] + (1,) * dim) / n_pos, fK.shape)
    else:
        delta = np.outer(d_out, net.readout_w).reshape(acts[-1].shape)

    gw: list[np.ndarray] = [None] * net.depth  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * net.depth  # type: ignore[list-item]
    for k in range(net.depth - 1, -1, -1):
        layer = net.layers[k]
        z, P = cache[k]
        dz = delta * (z > 0) if net.relu else delta
        gb[k] = dz.sum(axis=tuple([0] + _spatial(2, dim)))
        if _fast1d(layer, acts[k]):
            B_, C, F, L = P.shape
            gw[k] = np.matmul(dz, P.reshape(B_, C * F, L).transpose(0, 2, 1)).sum(axis=0).reshape(layer.weight.shape)
        else:
            out_axes = _spatial(2 + dim, dim)
            gw[k] = np.tensordot(dz, P, axes=([0] + _spatial(2, dim), [0] + out_axes))
        if k > 0:
            delta = layer_input_grad(layer, dz)

    if weight_decay:
        sq = sum(float(np.sum(l.weight**2)) for l in net.layers)
        for k, layer in enumerate(net.layers):
            gw[k] = gw[k] + weight_decay * layer.weight
        if decay_readout:
            sq += float(np.sum(net.readout_w**2))
            g_rw = g_rw + weight_decay * net.readout_w
        loss += 0.5 * weight_decay * sq
    grads = Grads(gw, gb, g_rw, g_rb)
    return (loss, grads, out) if return_output else (loss, grads)


def shuffle_channels(net: Network, seed: int = 0) -> Network:
    """Permute the in-channel index of every layer's filters independently."""
    rng = np.random.default_rng(seed)
    out = net.copy()
    for layer in out.layers:
        perm = rng.permutation(layer.in_channels)
        layer.weight = layer.weight[:, perm]
    return out


def mean_channel(net: Network, scale_by_fan_in: bool = False) -> Network:
    """Single-channel network whose filters and biases are the channel averages.

    Layer ``k`` gets ``w_bar = mean_{c,c'} w_{c,c'}`` and the mean bias; the
    readout sums its weights over channels. With ``scale_by_fan_in`` the filter
    is ``H_{k-1} * w_bar``, which reproduces a network where every channel
    carries ``w_bar``.
    """
    layers = []
    for layer in net.layers:
        w_bar = layer.weight.mean(axis=(0, 1), keepdims=True)
        if scale_by_fan_in:
            w_bar = w_bar * layer.in_channels
        layers.append(ConvLayer(w_bar, np.array([layer.bias.mean()]), layer.stride))
    out = Network(layers, net.L, net.dim, relu=net.relu, meta={**net.meta, "mean_channel": True}, readout_pool=net.readout_pool)
    if net.readout_w is not None:
        C = net.layers[-1].out_channels
        out.readout_w = net.readout_w.reshape(C, -1).sum(axis=0)
        out.readout_b = net.readout_b
    return out


def save_checkpoint(net: Network, path: str | Path) -> None:
    """Write architecture, weights and seed lineage to one ``.npz`` file."""
    arrays = {}
    for k, layer in enumerate(net.layers):
        arrays[f"w{k}"] = layer.weight
        arrays[f"b{k}"] = layer.bias
    if net.readout_w is not None:
        arrays["readout_w"] = net.readout_w
    meta = {
        "L": net.L,
        "dim": net.dim,
        "depth": net.depth,
        "strides": [l.stride for l in net.layers],
        "readout_b": net.readout_b,
        "relu": net.relu,
        "meta": net.meta,
        "readout_pool": net.readout_pool,
    }
    arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path) -> Network:
    with np.load(path) as z:
        meta = json.loads(str(z["meta"]))
        layers = [
            ConvLayer(z[f"w{k}"].copy(), z[f"b{k}"].copy(), s) for k, s in enumerate(meta["strides"])
        ]
        rw = z["readout_w"].copy() if "readout_w" in z.files else None
    return Network(
        layers, meta["L"], meta["dim"], rw, meta["readout_b"], meta["relu"], meta["meta"], meta.get("readout_pool", "flatten")
    )
