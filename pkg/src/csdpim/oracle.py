"""Brute-force reference implementations used to check the main datapath.

Everything here is deliberately loop-literal and shares no code with the
compiler or simulator. These functions are the ground truth for the test
suite; speed is a non-goal.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field

import numpy as np


def mvm_ref(I, W):
    """Exact integer matrix product, triple loop."""
    I = np.asarray(I)
    W = np.asarray(W)
    m, k = I.shape
    k2, n = W.shape
    if k != k2:
        raise ValueError(f"inner dims differ: {k} vs {k2}")
    out = [[0] * n for _ in range(m)]
    for i in range(m):
        for j in range(n):
            acc = 0
            for p in range(k):
                acc += int(I[i][p]) * int(W[p][j])
            out[i][j] = acc
    return np.array(out, dtype=np.int64)


def mvm_ref_alt(I, W):
    """Second independently-ordered accumulation (k-outermost) for cross-checks."""
    I = np.asarray(I)
    W = np.asarray(W)
    m, k = I.shape
    _, n = W.shape
    out = [[0] * n for _ in range(m)]
    for p in range(k):
        for j in range(n):
            w = int(W[p][j])
            for i in range(m):
                out[i][j] += int(I[i][p]) * w
    return np.array(out, dtype=np.int64)


def conv_ref(ifmap, kernels, stride=1, pad=0):
    """Direct sliding-window integer convolution.

    ifmap: (H, W, C); kernels: (kh, kw, C, N); zero padding of `pad` on each
    border. Returns (Ho, Wo, N) int64.
    """
    ifmap = np.asarray(ifmap)
    kernels = np.asarray(kernels)
    h, w, c = ifmap.shape
    kh, kw, kc, n = kernels.shape
    if kc != c:
        raise ValueError(f"channel mismatch: {kc} vs {c}")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ValueError("non-positive output dims")
    out = np.zeros((ho, wo, n), dtype=np.int64)
    for oy in range(ho):
        for ox in range(wo):
            for f in range(n):
                acc = 0
                for ky in range(kh):
                    for kx in range(kw):
                        iy = oy * stride + ky - pad
                        ix = ox * stride + kx - pad
                        if 0 <= iy < h and 0 <= ix < w:
                            for ch in range(c):
                                acc += int(ifmap[iy][ix][ch]) * int(kernels[ky][kx][ch][f])
                out[oy][ox][f] = acc
    return out


def dwconv_ref(ifmap, kernels, stride=1, pad=0):
    """Per-channel (depthwise) direct convolution. kernels: (kh, kw, C)."""
    ifmap = np.asarray(ifmap)
    kernels = np.asarray(kernels)
    h, w, c = ifmap.shape
    kh, kw, kc = kernels.shape
    if kc != c:
        raise ValueError(f"channel mismatch: {kc} vs {c}")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ValueError("non-positive output dims")
    out = np.zeros((ho, wo, c), dtype=np.int64)
    for oy in range(ho):
        for ox in range(wo):
            for ch in range(c):
                acc = 0
                for ky in range(kh):
                    for kx in range(kw):
                        iy = oy * stride + ky - pad
                        ix = ox * stride + kx - pad
                        if 0 <= iy < h and 0 <= ix < w:
                            acc += int(ifmap[iy][ix][ch]) * int(kernels[ky][kx][ch])
                out[oy][ox][ch] = acc
    return out


def gather_ref(values, mask):
    """Values at mask-1 positions, in original order."""
    out = []
    for v, m in zip(values, mask):
        if m:
            out.append(v)
    return out


@functools.lru_cache(maxsize=None)
def _all_ternary_encodings():
    """Bucket every 8-digit ternary string (LSB-first) by its decoded value."""
    buckets: dict[int, list[tuple[int, ...]]] = {}
    for digits in itertools.product((-1, 0, 1), repeat=8):
        value = sum(d << i for i, d in enumerate(digits))
        buckets.setdefault(value, []).append(digits)
    return buckets


def csd_enumerate(v: int):
    """All 8-digit ternary encodings of v, as LSB-first digit tuples."""
    if not -128 <= v <= 127:
        raise ValueError(f"{v} outside INT8 range")
    return list(_all_ternary_encodings().get(v, []))


def nonadjacent_encodings(v: int):
    """The subset of csd_enumerate(v) with no two adjacent non-zero digits."""
    out = []
    for digits in csd_enumerate(v):
        ok = True
        for i in range(7):
            if digits[i] != 0 and digits[i + 1] != 0:
                ok = False
                break
        if ok:
            out.append(digits)
    return out


def min_nonzero_count(v: int) -> int:
    """Minimum non-zero digit count over every 8-digit ternary encoding of v."""
    return min(sum(1 for d in e if d != 0) for e in csd_enumerate(v))


def _relu(x):
    return [max(0, int(v)) for v in x]


def _round_half_away(num: int, den: int) -> int:
    # round(num/den) with halves away from zero; den > 0
    if num >= 0:
        return (2 * num + den) // (2 * den)
    return -((-2 * num + den) // (2 * den))


def requantize_ref(v: int, scale_num: int, scale_den: int, shift: int, zero_point: int) -> int:
    den = scale_den * (1 << shift)
    q = _round_half_away(int(v) * scale_num, den) + zero_point
    return max(-128, min(127, q))


@dataclass
class ReferenceNet:
    """An ordered list of layer specs for the toy end-to-end evaluator.

    Each layer is a dict with a "kind" key:
      conv:    weights (kh,kw,C,N), stride, pad
      dwconv:  weights (kh,kw,C), stride, pad
      fc:      weights (K,N)
      relu:    -
      maxpool / avgpool: size
      requantize: scale_num, scale_den, shift, zero_point
      flatten: -
    """

    layers: list[dict] = field(default_factory=list)


def net_ref(net: ReferenceNet, x):
    """Exact integer inference, layer by layer, using only loop code."""
    cur = np.asarray(x)
    for layer in net.layers:
        kind = layer["kind"]
        if kind == "conv":
            cur = conv_ref(cur, layer["weights"], layer.get("stride", 1), layer.get("pad", 0))
        elif kind == "dwconv":
            cur = dwconv_ref(cur, layer["weights"], layer.get("stride", 1), layer.get("pad", 0))
        elif kind == "fc":
            flat = cur.reshape(cur.shape[0], -1) if cur.ndim == 2 else cur.reshape(1, -1)
            cur = mvm_ref(flat, layer["weights"])
        elif kind == "relu":
            cur = np.array(_relu(cur.reshape(-1)), dtype=np.int64).reshape(cur.shape)
        elif kind == "maxpool":
            cur = _pool_ref(cur, layer["size"], maximum=True)
        elif kind == "avgpool":
            cur = _pool_ref(cur, layer["size"], maximum=False)
        elif kind == "requantize":
            flat = [
                requantize_ref(
                    v,
                    layer["scale_num"],
                    layer["scale_den"],
                    layer["shift"],
                    layer["zero_point"],
                )
                for v in cur.reshape(-1)
            ]
            cur = np.array(flat, dtype=np.int64).reshape(cur.shape)
        elif kind == "flatten":
            cur = cur.reshape(1, -1)
        else:
            raise ValueError(f"unknown layer kind {kind!r}")
    return cur


def _pool_ref(fmap, size, maximum):
    fmap = np.asarray(fmap)
    h, w, c = fmap.shape
    if h % size or w % size:
        raise ValueError("pool size must divide spatial dims")
    out = np.zeros((h // size, w // size, c), dtype=np.int64)
    for oy in range(h // size):
        for ox in range(w // size):
            for ch in range(c):
                vals = []
                for dy in range(size):
                    for dx in range(size):
                        vals.append(int(fmap[oy * size + dy][ox * size + dx][ch]))
                if maximum:
                    out[oy][ox][ch] = max(vals)
                else:
                    out[oy][ox][ch] = sum(vals) // len(vals)
    return out
