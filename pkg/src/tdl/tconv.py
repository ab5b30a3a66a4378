"""Similarity-modulated temporal convolution.

A local similarity matrix a[i, t] (cosine between frame t and its i-th
neighbor, rectified at zero) scales each input column before the kernel
is applied, so the convolution attends only to neighbors that look like
the current frame. Out-of-range or padding neighbors get similarity 0,
which masks them out entirely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .esm import PADDING, EmbeddingSequence, _channel_dot, _normalized
from .nn import Conv1dLayer, _pad_time, _taps_view


@dataclass
class SimilarityMatrix:
    kernel: int
    num_frames: int
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.kernel, self.num_frames):
            raise ShapeError(f"similarity matrix shape {self.values.shape}")


@dataclass
class TconvLayer(Conv1dLayer):
    """Conv1dLayer whose channel count is preserved (in == out)."""

    def __post_init__(self):
        super().__post_init__()
        if self.in_channels != self.out_channels:
            raise ConfigError(
                f"tconv requires in_channels == out_channels, got "
                f"{self.in_channels} vs {self.out_channels}"
            )


def tconv_init(channels: int, kernel: int, rng: np.random.Generator) -> TconvLayer:
    bound = np.sqrt(1.0 / (kernel * channels))
    w = rng.uniform(-bound, bound, size=(kernel, channels, channels))
    b = rng.uniform(-bound, bound, size=channels)
    return TconvLayer(channels, channels, kernel, w, b)


def neighbor_similarity(e: EmbeddingSequence, k: int,
                        rectify: bool = True) -> SimilarityMatrix:
    """a[i, t] = [S(e_t, e_{t - k//2 + i})]+ over valid, non-padding pairs.

    The center row is exactly 1 on non-padding frames (cosine
    self-similarity is scale invariant, so its gradient is zero and the
    constant is exact). With ``rectify`` off, negative similarities are
    kept instead of clipped.
    """
    if k % 2 != 1:
        raise ConfigError(f"neighbor kernel must be odd, got {k}")
    values = e.values
    t_len = e.num_frames
    live = e.frame_class != PADDING
    normed, _ = _normalized(values)
    half = k // 2
    a = np.zeros((k, t_len))
    for i in range(k):
        off = i - half
        if off == 0:
            a[i, live] = 1.0
            continue
        t0, t1 = max(0, -off), min(t_len, t_len - off)
        if t1 <= t0:
            continue
        ts = np.arange(t0, t1)
        ns = ts + off
        sims = np.clip(_channel_dot(normed[:, ts], normed[:, ns]), -1.0, 1.0)
        if rectify:
            sims = np.maximum(sims, 0.0)
        valid = live[ts] & live[ns]
        a[i, ts[valid]] = sims[valid]
    return SimilarityMatrix(k, t_len, a)


def neighbor_similarity_backward(e: EmbeddingSequence, k: int,
                                 grad_a: np.ndarray,
                                 rectify: bool = True) -> np.ndarray:
    """Gradient of the similarity cells with respect to e.values.

    Constant cells (center row, masked borders/padding, rectified
    negatives) pass no gradient.
    """
    values = e.values
    t_len = e.num_frames
    live = e.frame_class != PADDING
    normed, norms = _normalized(values)
    half = k // 2
    grad = np.zeros_like(values)
    for i in range(k):
        off = i - half
        if off == 0:
            continue
        t0, t1 = max(0, -off), min(t_len, t_len - off)
        if t1 <= t0:
            continue
        ts = np.arange(t0, t1)
        ns = ts + off
        # same kernel as the forward pass so the rectification mask matches
        sims = np.clip(_channel_dot(normed[:, ts], normed[:, ns]), -1.0, 1.0)
        active = live[ts] & live[ns]
        if rectify:
            active &= sims > 0.0
        if not np.any(active):
            continue
        ts, ns, sims = ts[active], ns[active], sims[active]
        ga = grad_a[i, ts]
        gu = (normed[:, ns] - sims * normed[:, ts]) / norms[ts]
        gv = (normed[:, ts] - sims * normed[:, ns]) / norms[ns]
        # each t (and each n) appears at most once per offset
        grad[:, ts] += ga * gu
        grad[:, ns] += ga * gv
    return grad


def tconv_forward(layer: TconvLayer, x: np.ndarray,
                  a: SimilarityMatrix) -> np.ndarray:
    """Convolution over similarity-scaled columns.

    out[m, t] = bias[m] + sum_i w_m[i, :] . (x[:, t - k//2 + i] * a[i, t])
    with out-of-range columns contributing zero. With a identically 1
    this reduces exactly to conv1d_forward.
    """
    if a.kernel != layer.kernel:
        raise ShapeError(f"similarity kernel {a.kernel} != layer {layer.kernel}")
    if x.ndim != 2 or x.shape[0] != layer.in_channels:
        raise ShapeError(f"tconv input shape {x.shape}")
    t_len = x.shape[1]
    if a.num_frames != t_len:
        raise ShapeError(f"similarity frames {a.num_frames} != input {t_len}")
    view = _taps_view(_pad_time(x, layer.kernel // 2), layer.kernel, t_len)
    modulated = view * a.values[:, None, :]
    out = np.tensordot(layer.weights, modulated, axes=([0, 1], [0, 1]))
    out += layer.bias[:, None]
    return out


def tconv_backward(layer: TconvLayer, x: np.ndarray, a: SimilarityMatrix,
                   grad_out: np.ndarray):
    """Adjoints for (x, a, weights, bias)."""
    t_len = x.shape[1]
    if grad_out.shape != (layer.out_channels, t_len):
        raise ShapeError(f"grad_out shape {grad_out.shape}")
    k, half = layer.kernel, layer.kernel // 2
    view = _taps_view(_pad_time(x, half), k, t_len)
    modulated = view * a.values[:, None, :]

    grad_bias = grad_out.sum(axis=1)
    grad_weights = np.tensordot(modulated, grad_out, axes=([2], [1]))
    g_mod = np.tensordot(layer.weights, grad_out, axes=([2], [0]))
    grad_a = (g_mod * view).sum(axis=1)
    g_view = g_mod * a.values[:, None, :]
    grad_xp = np.zeros((layer.in_channels, t_len + k - 1))
    for i in range(k):
        grad_xp[:, i:i + t_len] += g_view[i]
    return grad_xp[:, half:half + t_len], grad_a, grad_weights, grad_bias
