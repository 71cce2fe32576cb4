"""Sparsity-aware digital PIM compiler and cycle-level simulator.

Pipeline: block-wise L2 pruning -> fixed-threshold CSD approximation ->
packing onto a modeled SRAM-PIM array -> deterministic simulation with
bit-exact outputs, plus utilization/speedup/energy reporting against a
dense bit-serial baseline.
"""

from .compiler import ArchConfig, CompiledLayer, group_filters, im2col, pack_weights
from .csd import CsdWord, count_nonzero, from_csd, query_table, to_blocks, to_csd
from .metrics import CostTable, Report, build_report, energy, speedup, utilization
from .simulator import SimStats, run_dense_baseline, run_layer, simd_op
from .sparsify import (
    FtaWeights,
    PruneMask,
    ThresholdVector,
    WeightMatrix,
    block_l2_prune,
    compute_thresholds,
    fta_approximate,
    sparsity_report,
)

__version__ = "0.1.0"

__all__ = [
    "ArchConfig",
    "CompiledLayer",
    "CostTable",
    "CsdWord",
    "FtaWeights",
    "PruneMask",
    "Report",
    "SimStats",
    "ThresholdVector",
    "WeightMatrix",
    "block_l2_prune",
    "build_report",
    "compute_thresholds",
    "count_nonzero",
    "energy",
    "from_csd",
    "fta_approximate",
    "group_filters",
    "im2col",
    "pack_weights",
    "query_table",
    "run_dense_baseline",
    "run_layer",
    "simd_op",
    "sparsity_report",
    "speedup",
    "to_blocks",
    "to_csd",
    "utilization",
]
