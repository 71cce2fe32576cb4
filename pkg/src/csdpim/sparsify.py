"""Hybrid-grained sparsification.

Stage 1 is coarse value pruning: the K x N weight matrix is cut into blocks
of alpha adjacent filters at the same reduction position, ranked by L2 norm,
and the smallest blocks are zeroed. Stage 2 fixes the number of non-zero CSD
digits per filter (the per-filter threshold) and snaps every surviving weight
to the nearest value with exactly that many digits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import csd
from .errors import ShapeError

MAX_THRESHOLD = 2


@dataclass(frozen=True)
class WeightMatrix:
    """K x N INT8 weights; K is the reduction length, N the filter count."""

    data: np.ndarray
    layer_id: str = ""

    def __post_init__(self):
        _check_int8_matrix(self.data)


@dataclass(frozen=True)
class PruneMask:
    """K x G binary mask over filter-group blocks; 0 prunes alpha weights."""

    bits: np.ndarray
    alpha: int

    def expand(self, n: int) -> np.ndarray:
        """Per-weight K x N boolean mask (column f follows group f // alpha)."""
        k, g = self.bits.shape
        if g != -(-n // self.alpha):
            raise ShapeError(f"mask has {g} groups, expected {-(-n // self.alpha)} for N={n}")
        cols = np.arange(n) // self.alpha
        return self.bits[:, cols].astype(bool)


@dataclass(frozen=True)
class ThresholdVector:
    """Per-filter non-zero digit budgets, each in {0, 1, 2}."""

    phi_th: np.ndarray

    def __post_init__(self):
        if self.phi_th.min(initial=0) < 0 or self.phi_th.max(initial=0) > MAX_THRESHOLD:
            raise ValueError("thresholds must lie in [0, 2]")


@dataclass(frozen=True)
class FtaWeights:
    """Approximated weights plus the mask and thresholds they satisfy."""

    data: np.ndarray
    thresholds: ThresholdVector
    mask: PruneMask


def _check_int8_matrix(w: np.ndarray):
    if w.ndim != 2 or w.size == 0:
        raise ShapeError(f"expected a non-empty 2-D matrix, got shape {w.shape}")
    if w.min() < -128 or w.max() > 127:
        raise ValueError("weights outside INT8 range")


def block_l2_prune(weights: np.ndarray, alpha: int, sparsity: float) -> PruneMask:
    """Mask the floor(sparsity * K * G) blocks with the smallest L2 norm.

    Equal norms are broken by lowest (k, g) index so the mask is
    deterministic. A ragged tail group is normed over its actual width.
    """
    _check_int8_matrix(weights)
    if not 0 <= sparsity < 1:
        raise ValueError(f"sparsity {sparsity} not in [0, 1)")
    if alpha < 1:
        raise ValueError("alpha must be >= 1")
    k, n = weights.shape
    g = -(-n // alpha)
    # squared norms are integers, so ranking is exact
    sq = np.zeros((k, g), dtype=np.int64)
    w64 = weights.astype(np.int64)
    for gi in range(g):
        cols = w64[:, gi * alpha : (gi + 1) * alpha]
        sq[:, gi] = (cols * cols).sum(axis=1)
    n_prune = int(sparsity * k * g)
    bits = np.ones((k, g), dtype=np.uint8)
    if n_prune:
        order = np.lexsort((np.tile(np.arange(g), k), np.repeat(np.arange(k), g), sq.reshape(-1)))
        pruned = order[:n_prune]
        bits.reshape(-1)[pruned] = 0
    return PruneMask(bits=bits, alpha=alpha)


def compute_thresholds(weights: np.ndarray, mask: PruneMask) -> ThresholdVector:
    """Per-filter digit budget from the mode of unmasked non-zero counts.

    A filter whose unmasked weights are all zero (or fully masked) gets 0;
    a zero mode is bumped to 1; modes above 2 are capped at 2. Mode ties go
    to the smaller count, which favors filter parallelism.
    """
    _check_int8_matrix(weights)
    k, n = weights.shape
    phi = np.asarray(csd.nonzero_count_table(), dtype=np.int64)[weights.astype(np.int64) & 0xFF]
    keep = mask.expand(n)
    th = np.zeros(n, dtype=np.int64)
    for f in range(n):
        kept = phi[keep[:, f], f]
        if kept.size == 0 or not kept.any():
            th[f] = 0
        else:
            mode = int(np.bincount(kept).argmax())  # argmax takes the smallest tie
            th[f] = 1 if mode == 0 else min(mode, MAX_THRESHOLD)
    return ThresholdVector(phi_th=th)


def _snap_table(phi_th: int) -> np.ndarray:
    """256-entry lookup: INT8 value (biased by +128) -> nearest table member.

    Distance ties are broken toward the positive candidate; members are
    distinct so a tie can only pit t against -t.
    """
    members = csd.query_table(phi_th).members
    table = np.zeros(256, dtype=np.int64)
    for v in range(-128, 128):
        best = min(members, key=lambda t: (abs(t - v), -t))
        table[v + 128] = best
    return table


_SNAP_TABLES: dict[int, np.ndarray] = {}


def snap_table(phi_th: int) -> np.ndarray:
    if phi_th not in _SNAP_TABLES:
        _SNAP_TABLES[phi_th] = _snap_table(phi_th)
    return _SNAP_TABLES[phi_th]


def fta_approximate(weights: np.ndarray, mask: PruneMask, th: ThresholdVector) -> FtaWeights:
    """Snap every unmasked weight to the nearest member of its filter's table."""
    _check_int8_matrix(weights)
    k, n = weights.shape
    if th.phi_th.shape != (n,):
        raise ShapeError(f"threshold vector length {th.phi_th.shape} != N={n}")
    keep = mask.expand(n)
    out = np.zeros((k, n), dtype=np.int64)
    biased = weights.astype(np.int64) + 128
    for f in range(n):
        out[:, f] = snap_table(int(th.phi_th[f]))[biased[:, f]]
    out[~keep] = 0
    return FtaWeights(data=out.astype(np.int8), thresholds=th, mask=mask)


def sparsity_report(weights: np.ndarray, mask: PruneMask, fta: FtaWeights) -> dict:
    """Value- and bit-level sparsity statistics as a JSON-ready dict."""
    _check_int8_matrix(weights)
    k, n = weights.shape
    keep = mask.expand(n)
    pruned = np.where(keep, weights.astype(np.int64), 0)
    phi_tab = np.asarray(csd.nonzero_count_table(), dtype=np.int64)
    phi_before = phi_tab[pruned & 0xFF]
    phi_after = phi_tab[fta.data.astype(np.int64) & 0xFF]
    hist = np.bincount(fta.thresholds.phi_th, minlength=MAX_THRESHOLD + 1)
    return {
        "shape": [int(k), int(n)],
        "value_sparsity": float(np.mean(pruned == 0)),
        "mask_sparsity": float(np.mean(~keep)),
        "csd_zero_bit_fraction_before_fta": float(1.0 - phi_before.mean() / 8.0),
        "csd_zero_bit_fraction_after_fta": float(1.0 - phi_after.mean() / 8.0),
        "threshold_histogram": {str(i): int(c) for i, c in enumerate(hist)},
    }
