"""Shared helpers for building layers through the full pipeline."""

import numpy as np

from csdpim.compiler import ArchConfig, group_filters, pack_weights
from csdpim.sparsify import block_l2_prune, compute_thresholds, fta_approximate


def compile_pipeline(weights, m, sparsity=0.0, arch=None, kind="fc", **kw):
    """Full prune -> approximate -> pack pipeline used across the tests."""
    arch = arch or ArchConfig()
    mask = block_l2_prune(weights, arch.alpha, sparsity)
    th = compute_thresholds(weights, mask)
    fta = fta_approximate(weights, mask, th)
    placement = group_filters(th, arch)
    return pack_weights(fta, placement, arch, m=m, kind=kind, **kw), fta


def effective_weights(layer, fta):
    """K x N matrix the compiled layer actually computes with."""
    keep = fta.mask.expand(layer.n)
    w = np.where(keep, fta.data.astype(np.int64), 0)
    if layer.placement.zero_filters:
        w[:, list(layer.placement.zero_filters)] = 0
    return w
