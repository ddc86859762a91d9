"""Siamese embedding network and contrastive pair loss.

A fixed three-block conv net: 3x3 conv (stride 1, pad 1), ReLU, 2x2 max
pool, with channel widths growing 8/16/32 by default, then global average
pooling and a fully connected head to a 128-d descriptor.  Global pooling
makes the descriptor length independent of tile size, so any square input
of at least 8 px embeds to the same dimension.

Both branches of a pair share one parameter set; "siamese" is simply the
same forward applied twice.  Gradients are exact analytic derivatives of
the mean pair loss, accumulated in float64 while parameters and
activations stay float32 in production.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DivergenceError
from .rng import STREAM_INIT, Stream

DEFAULT_WIDTHS = (8, 16, 32)
EMBED_DIM = 128
MIN_INPUT = 8


@dataclass(frozen=True)
class LossHyper:
    """Contrastive loss margin; dissimilar pairs push apart up to this."""

    margin: float = 1.0

    def __post_init__(self):
        if not self.margin > 0:
            raise ValueError("margin must be positive")


@dataclass
class NetParams:
    """Parameter tensors in checkpoint order.

    Conv weights are (3, 3, c_in, c_out); the head weight is (widths[-1],
    embed_dim).  All tensors are float32.
    """

    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    conv3_w: np.ndarray
    conv3_b: np.ndarray
    fc_w: np.ndarray
    fc_b: np.ndarray

    def tensors(self) -> list[np.ndarray]:
        return [
            self.conv1_w,
            self.conv1_b,
            self.conv2_w,
            self.conv2_b,
            self.conv3_w,
            self.conv3_b,
            self.fc_w,
            self.fc_b,
        ]

    @staticmethod
    def from_tensors(ts: list[np.ndarray]) -> "NetParams":
        if len(ts) != 8:
            raise ValueError(f"expected 8 parameter tensors, got {len(ts)}")
        return NetParams(*ts)

    @property
    def widths(self) -> tuple[int, int, int]:
        return (self.conv1_w.shape[3], self.conv2_w.shape[3], self.conv3_w.shape[3])

    @property
    def embed_dim(self) -> int:
        return self.fc_w.shape[1]

    def copy(self) -> "NetParams":
        return NetParams.from_tensors([t.copy() for t in self.tensors()])


def _glorot_uniform(stream: Stream, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    u = stream.uniforms(int(np.prod(shape)))
    return ((2.0 * u - 1.0) * bound).astype(np.float32).reshape(shape)


def init_params(seed: int, widths: tuple[int, int, int] = DEFAULT_WIDTHS, embed_dim: int = EMBED_DIM) -> NetParams:
    """Glorot-uniform weights, zero biases; same seed, same bits."""
    w1, w2, w3 = widths
    layers = [(3, w1), (w1, w2), (w2, w3)]
    tensors: list[np.ndarray] = []
    for li, (cin, cout) in enumerate(layers):
        stream = Stream(seed, STREAM_INIT, li)
        fan_in, fan_out = cin * 9, cout * 9
        tensors.append(_glorot_uniform(stream, (3, 3, cin, cout), fan_in, fan_out))
        tensors.append(np.zeros(cout, dtype=np.float32))
    stream = Stream(seed, STREAM_INIT, len(layers))
    tensors.append(_glorot_uniform(stream, (w3, embed_dim), w3, embed_dim))
    tensors.append(np.zeros(embed_dim, dtype=np.float32))
    return NetParams.from_tensors(tensors)


def _as_batch(x: np.ndarray):
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"input must be (S, S, 3) or (N, S, S, 3), got shape {x.shape}")


def forward(params: NetParams, x: np.ndarray, want_cache: bool = False):
    """Embed tiles scaled to [0, 1].

    x is (S, S, 3) or (N, S, S, 3) float32/float64 with S >= 8.  Returns the
    embedding(s), plus the activation cache when want_cache is set.
    """
    xb, single = _as_batch(np.ascontiguousarray(x))
    if xb.dtype not in (np.float32, np.float64):
        raise ValueError("input must be float32 or float64")
    s = xb.shape[1]
    if xb.shape[2] != s or xb.shape[3] != 3:
        raise ValueError(f"expected square RGB input, got shape {xb.shape}")
    if s < MIN_INPUT:
        raise ValueError(f"input size must be at least {MIN_INPUT}, got {s}")
    if not np.isfinite(xb).all():
        raise ValueError("non-finite values in network input")

    dtype = xb.dtype
    cache = {"x0": xb} if want_cache else None
    cur = xb
    conv_ws = (params.conv1_w, params.conv2_w, params.conv3_w)
    conv_bs = (params.conv1_b, params.conv2_b, params.conv3_b)
    for k in range(3):
        w = conv_ws[k].astype(dtype, copy=False)
        b = conv_bs[k].astype(dtype, copy=False)
        z = kernels.conv3x3_forward(cur, w, b)
        a = np.maximum(z, 0)
        pooled, idx = kernels.maxpool2_forward(a)
        if want_cache:
            cache[f"in{k}"] = cur
            cache[f"z{k}"] = z
            cache[f"a_shape{k}"] = a.shape
            cache[f"idx{k}"] = idx
        cur = pooled

    gap = cur.mean(axis=(1, 2))
    emb = gap @ params.fc_w.astype(dtype, copy=False) + params.fc_b.astype(dtype, copy=False)
    if want_cache:
        cache["pool_out_shape"] = cur.shape
        cache["gap"] = gap
        out = emb[0] if single else emb
        return out, cache
    return emb[0] if single else emb


def contrastive_loss(f1: np.ndarray, f2: np.ndarray, y: int, h: LossHyper) -> float:
    """(1-y)*||f1-f2|| + y*max(0, margin - ||f1-f2||) with y in {0, 1}."""
    f1 = np.asarray(f1, dtype=np.float64)
    f2 = np.asarray(f2, dtype=np.float64)
    if f1.shape != f2.shape:
        raise ValueError("embeddings must have equal length")
    if not (np.isfinite(f1).all() and np.isfinite(f2).all()):
        raise ValueError("embeddings must be finite")
    if y not in (0, 1):
        raise ValueError("pair label must be 0 (similar) or 1 (dissimilar)")
    d = float(np.linalg.norm(f1 - f2))
    return (1 - y) * d + y * max(0.0, h.margin - d)


def pair_losses(f1: np.ndarray, f2: np.ndarray, y: np.ndarray, margin: float) -> np.ndarray:
    """Vectorized per-pair contrastive losses in float64."""
    diff = f1.astype(np.float64) - f2.astype(np.float64)
    d = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    yf = y.astype(np.float64)
    return (1.0 - yf) * d + yf * np.maximum(0.0, margin - d)


def batch_loss(params: NetParams, xa: np.ndarray, xb: np.ndarray, y: np.ndarray, h: LossHyper) -> float:
    """Mean contrastive loss over a pair batch, no gradients."""
    n = xa.shape[0]
    emb = forward(params, np.concatenate([xa, xb], axis=0))
    return float(pair_losses(emb[:n], emb[n:], y, h.margin).mean())


def backward(params: NetParams, xa: np.ndarray, xb: np.ndarray, y: np.ndarray, h: LossHyper):
    """Mean batch loss and its exact gradients w.r.t. every parameter.

    xa, xb are (B, S, S, 3) pair branches, y the (B,) 0/1 labels.  Both
    branches flow through the shared parameters, so branch gradients sum.
    Subgradient conventions: at zero pair distance the distance gradient is
    the zero vector, and at distance exactly margin the hinge takes the
    inactive branch.  Gradients are returned in float64, tensor order
    matching NetParams.tensors().
    """
    if xa.shape != xb.shape or xa.shape[0] != y.shape[0] or xa.shape[0] == 0:
        raise ValueError("batch branches and labels must align and be non-empty")
    b = xa.shape[0]
    emb, cache = forward(params, np.concatenate([xa, xb], axis=0), want_cache=True)

    f1 = emb[:b].astype(np.float64)
    f2 = emb[b:].astype(np.float64)
    diff = f1 - f2
    d = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    yf = y.astype(np.float64)
    losses = (1.0 - yf) * d + yf * np.maximum(0.0, h.margin - d)
    loss = float(losses.mean())
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite batch loss {loss}")

    # dL/d(distance): +1 for similar, -1 for dissimilar inside the margin.
    safe_d = np.where(d > 0.0, d, 1.0)
    dd = np.where(d > 0.0, ((1.0 - yf) - yf * (d < h.margin)) / safe_d, 0.0)
    g1 = diff * (dd / b)[:, None]
    de = np.concatenate([g1, -g1], axis=0)

    grads = _net_backward(params, cache, de)
    return grads, loss


def _net_backward(params: NetParams, cache: dict, de: np.ndarray) -> list[np.ndarray]:
    gap = cache["gap"].astype(np.float64)
    fc_w = params.fc_w.astype(np.float64)
    d_fc_w = gap.T @ de
    d_fc_b = de.sum(axis=0)
    dg = de @ fc_w.T

    n, ph, pw, c = cache["pool_out_shape"]
    dcur = np.broadcast_to(dg[:, None, None, :] / (ph * pw), (n, ph, pw, c)).copy()

    conv_ws = (params.conv1_w, params.conv2_w, params.conv3_w)
    out: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for k in (2, 1, 0):
        a_shape = cache[f"a_shape{k}"]
        da = kernels.maxpool2_backward(dcur, cache[f"idx{k}"], a_shape[1], a_shape[2])
        dz = da * (cache[f"z{k}"] > 0)
        xin = cache[f"in{k}"].astype(np.float64)
        xp = np.zeros((xin.shape[0], xin.shape[1] + 2, xin.shape[2] + 2, xin.shape[3]), dtype=np.float64)
        xp[:, 1:-1, 1:-1, :] = xin
        dcur, dw, db = kernels.conv3x3_backward(xp, conv_ws[k].astype(np.float64), dz)
        out[k] = (dw, db)

    return [out[0][0], out[0][1], out[1][0], out[1][1], out[2][0], out[2][1], d_fc_w, d_fc_b]
