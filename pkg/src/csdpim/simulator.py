"""Cycle-level functional simulation of the sparse PIM datapath.

The datapath per core: routed inputs (gathered at the unmasked reduction
positions) feed 16 compartments; an input pre-processing scan finds the bit
columns that are zero across the whole group and skips those bit-serial
cycles; every stored comp-pattern cell contributes
sign * 2^(2*index + q) * bit, and per-bit partial sums are combined with
two's-complement bit weights (bit 7 weighs -128). A dense bit-serial
baseline shares the engine but stores plain weight bits, two filters per
macro, and never skips.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .compiler import ArchConfig, CompiledLayer, im2col
from .errors import AccumulatorOverflow, ConfigError, ShapeError

INT32_MIN = -(2**31)
INT32_MAX = 2**31 - 1

EVENT_KINDS = (
    "cell_op",
    "adder_tree_op",
    "meta_rf_read",
    "buffer_read",
    "buffer_write",
    "network_switch",
    "simd_op",
    "tile_load",
    "writeback",
)


@dataclass
class SimStats:
    workload: dict = field(default_factory=dict)
    baseline: bool = False
    cycles: int = 0
    rowpass_cycles: int = 0
    overhead_cycles: int = 0
    simd_cycles: int = 0
    row_passes: int = 0
    skipped_bit_cycles: int = 0
    effective_cell_ops: int = 0
    total_cell_ops: int = 0
    events: dict = field(default_factory=lambda: {k: 0 for k in EVENT_KINDS})

    def to_dict(self) -> dict:
        return {
            "workload": self.workload,
            "baseline": self.baseline,
            "cycles": self.cycles,
            "rowpass_cycles": self.rowpass_cycles,
            "overhead_cycles": self.overhead_cycles,
            "simd_cycles": self.simd_cycles,
            "row_passes": self.row_passes,
            "skipped_bit_cycles": self.skipped_bit_cycles,
            "effective_cell_ops": self.effective_cell_ops,
            "total_cell_ops": self.total_cell_ops,
            "events": dict(sorted(self.events.items())),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "SimStats":
        stats = cls()
        for key in (
            "workload",
            "baseline",
            "cycles",
            "rowpass_cycles",
            "overhead_cycles",
            "simd_cycles",
            "row_passes",
            "skipped_bit_cycles",
            "effective_cell_ops",
            "total_cell_ops",
        ):
            setattr(stats, key, d[key])
        stats.events = {k: int(v) for k, v in d["events"].items()}
        return stats

    def merge(self, other: "SimStats") -> None:
        self.cycles += other.cycles
        self.rowpass_cycles += other.rowpass_cycles
        self.overhead_cycles += other.overhead_cycles
        self.simd_cycles += other.simd_cycles
        self.row_passes += other.row_passes
        self.skipped_bit_cycles += other.skipped_bit_cycles
        self.effective_cell_ops += other.effective_cell_ops
        self.total_cell_ops += other.total_cell_ops
        for k, v in other.events.items():
            self.events[k] = self.events.get(k, 0) + v


def sparse_allocate(inputs: np.ndarray, row_mask: np.ndarray) -> np.ndarray:
    """Gather the input columns at unmasked reduction positions, in order."""
    inputs = np.asarray(inputs)
    row_mask = np.asarray(row_mask)
    if inputs.ndim != 2 or inputs.shape[1] != row_mask.shape[0]:
        raise ShapeError(
            f"inputs {inputs.shape} incompatible with routing mask of length {row_mask.shape}"
        )
    return inputs[:, row_mask.astype(bool)]


def ipu_scan(group, input_bits: int = 8) -> tuple[int, int]:
    """Active-bit mask (OR of the group's two's-complement bytes) and its
    popcount, which is the bit-serial cycle count for this row pass."""
    u = np.asarray(group, dtype=np.int64) & ((1 << input_bits) - 1)
    mask = int(np.bitwise_or.reduce(u)) if u.size else 0
    return mask, bin(mask).count("1")


def _bit_weights(input_bits: int) -> np.ndarray:
    w = np.array([1 << b for b in range(input_bits)], dtype=np.int64)
    w[input_bits - 1] = -w[input_bits - 1]  # top bit carries the sign
    return w


def dbmu_rowpass(cell_values: np.ndarray, inputs, active_mask: int, input_bits: int = 8) -> np.ndarray:
    """Per-column partial sums of one row pass.

    cell_values: (live_compartments, columns) signed cell contributions
    (zero for invalid cells). Only the bit planes selected by active_mask
    contribute; the mask produced by ipu_scan makes this exact.
    """
    bw = _bit_weights(input_bits)
    u = np.asarray(inputs, dtype=np.int64) & ((1 << input_bits) - 1)
    planes = (u[:, None] >> np.arange(input_bits)) & 1  # (live, bits)
    sel = (active_mask >> np.arange(input_bits)) & 1
    signed = (planes * sel) @ bw  # (live,)
    return signed @ np.asarray(cell_values, dtype=np.int64)


def _check_int32(acc: np.ndarray) -> None:
    if acc.size and (acc.max() > INT32_MAX or acc.min() < INT32_MIN):
        raise AccumulatorOverflow(
            f"partial sum outside 32-bit range: [{acc.min()}, {acc.max()}]"
        )


def _layer_inputs(compiled: CompiledLayer, inputs: np.ndarray) -> np.ndarray:
    inputs = np.asarray(inputs)
    if compiled.conv is not None and inputs.ndim == 3:
        geom = compiled.conv
        inputs = im2col(inputs, tuple(geom["kernel"]), geom["stride"], geom["pad"])
    if inputs.ndim != 2 or inputs.shape != (compiled.m, compiled.k):
        raise ShapeError(
            f"inputs {inputs.shape} do not match compiled layer ({compiled.m}, {compiled.k})"
        )
    return inputs.astype(np.int64)


def run_layer(
    compiled: CompiledLayer,
    inputs,
    skip_input_bits: bool = True,
    trace=None,
) -> tuple[np.ndarray, SimStats]:
    """Execute one compiled layer; returns (M x N outputs, stats).

    Cycle semantics: cores synchronize per row pass, so a row pass costs the
    maximum active-bit count over all cores and macros; tile loads and
    writebacks charge the fixed overheads from the ArchConfig.
    """
    arch = compiled.arch
    imat = _layer_inputs(compiled, inputs)
    stats = SimStats(
        workload={"m": compiled.m, "n": compiled.n, "k": compiled.k, "kind": compiled.kind}
    )
    acc = np.zeros((compiled.m, compiled.n), dtype=np.int64)

    routed = [sparse_allocate(imat, g.row_mask) for g in compiled.groups]
    values = [g.cell_values() for g in compiled.groups]
    spans = []  # per group: (filters array, threshold)
    for g in compiled.groups:
        spans.append((np.array(g.placement.filters, dtype=np.int64), g.placement.threshold))

    full_mask = (1 << arch.input_bits) - 1
    rows_per_tile = arch.rows_per_tile
    loaded: set[tuple[int, int]] = set()

    for ins in compiled.instructions:
        if ins.opcode == "LOAD_TILE":
            nt, kt = ins.args[0], ins.args[1]
            loaded.add((nt, kt))
            stats.overhead_cycles += arch.load_tile_cycles
            stats.events["tile_load"] += len(compiled.plan.n_tiles[nt])
        elif ins.opcode == "RUN_ROWPASS":
            nt, kt, mt, row = ins.args
            if (nt, kt) not in loaded:
                raise ShapeError("RUN_ROWPASS before LOAD_TILE: malformed stream")
            wall = 0
            for gid in compiled.plan.n_tiles[nt]:
                grp = compiled.groups[gid]
                base = kt * rows_per_tile + row * arch.compartments
                live = min(arch.compartments, grp.kprime - base)
                if live <= 0:
                    continue
                filters, t = spans[gid]
                cells = values[gid][kt, row, :live, :]
                valid_cells = int(grp.valid[kt, row, :live, :].sum())
                core_cycles = 0
                for macro in range(arch.macros_per_core):
                    m_pos = mt * arch.macros_per_core + macro
                    if m_pos >= compiled.m:
                        continue
                    vec = routed[gid][m_pos, base : base + live]
                    mask, nbits = ipu_scan(vec, arch.input_bits)
                    if not skip_input_bits:
                        mask, nbits = full_mask, arch.input_bits
                    sums = dbmu_rowpass(cells, vec, mask, arch.input_bits)
                    per_filter = sums[: filters.size * t].reshape(filters.size, t).sum(axis=1)
                    acc[m_pos, filters] += per_filter
                    core_cycles = max(core_cycles, nbits)
                    stats.effective_cell_ops += valid_cells * nbits
                    stats.total_cell_ops += arch.compartments * arch.columns_per_macro * nbits
                    stats.events["cell_op"] += arch.compartments * arch.columns_per_macro * nbits
                    stats.events["adder_tree_op"] += nbits
                    stats.events["meta_rf_read"] += valid_cells
                    stats.events["buffer_read"] += live
                    stats.events["network_switch"] += 1
                    if trace is not None:
                        trace.write(
                            f"cycle={stats.cycles} core={gid} macro={macro} "
                            f"row={row} mask={mask:0{arch.input_bits}b}\n"
                        )
                wall = max(wall, core_cycles)
            stats.cycles += wall
            stats.rowpass_cycles += wall
            stats.row_passes += 1
            stats.skipped_bit_cycles += arch.input_bits - wall
        elif ins.opcode == "BARRIER":
            pass  # synchronization is implicit in the max-over-cores wall cost
        elif ins.opcode == "ACCUM":
            pass  # partials already live in the accumulator registers
        elif ins.opcode == "WRITEBACK":
            nt, _, mt, _ = ins.args
            stats.overhead_cycles += arch.writeback_cycles
            stats.events["writeback"] += 1
            lanes = sum(len(compiled.groups[g].placement.filters) for g in compiled.plan.n_tiles[nt])
            stats.events["buffer_write"] += lanes * min(
                arch.macros_per_core, compiled.m - mt * arch.macros_per_core
            )
            _check_int32(acc)
        elif ins.opcode == "SIMD_OP":
            pass  # applied below so standalone and fused ops share one path
        else:
            raise ShapeError(f"unknown opcode {ins.opcode}")

    stats.cycles += stats.overhead_cycles
    _check_int32(acc)
    out = acc
    if compiled.simd_post is not None:
        out = simd_op(compiled.simd_post["kind"], [out], compiled.simd_post.get("params", {}))
        stats.events["simd_op"] += int(np.asarray(out).size)
        simd_cycles = -(-int(np.asarray(out).size) // arch.compartments)
        stats.simd_cycles += simd_cycles
        stats.cycles += simd_cycles
    return out, stats


def run_dense_baseline(weights, inputs, arch: ArchConfig | None = None, conv: dict | None = None) -> tuple[np.ndarray, SimStats]:
    """Bit-serial dense reference machine: each filter occupies 8 binary
    columns (two filters per macro), every input bit is processed on every
    row, nothing is skipped."""
    arch = arch or ArchConfig()
    weights = np.asarray(weights, dtype=np.int64)
    if weights.ndim != 2:
        raise ShapeError("weights must be K x N")
    inputs = np.asarray(inputs)
    if conv is not None and inputs.ndim == 3:
        inputs = im2col(inputs, tuple(conv["kernel"]), conv["stride"], conv["pad"])
    inputs = np.asarray(inputs, dtype=np.int64)
    k_dim, n_dim = weights.shape
    if inputs.ndim != 2 or inputs.shape[1] != k_dim:
        raise ShapeError(f"inputs {inputs.shape} do not match weights ({k_dim}, {n_dim})")
    m_dim = inputs.shape[0]

    bits_per_filter = arch.input_bits
    per_macro = arch.columns_per_macro // bits_per_filter  # 2 filters with 8b weights
    groups = [
        tuple(range(i, min(i + per_macro, n_dim))) for i in range(0, n_dim, per_macro)
    ]
    rows_per_tile = arch.rows_per_tile
    n_tiles = [
        tuple(range(i, min(i + arch.cores, len(groups))))
        for i in range(0, len(groups), arch.cores)
    ]
    n_ktiles = max(1, -(-k_dim // rows_per_tile))
    m_tiles = -(-m_dim // arch.macros_per_core)

    stats = SimStats(
        workload={"m": m_dim, "n": n_dim, "k": k_dim, "kind": "dense"},
        baseline=True,
    )
    acc = np.zeros((m_dim, n_dim), dtype=np.int64)
    bw = _bit_weights(arch.input_bits)
    wbits = ((weights[:, :, None] & 0xFF) >> np.arange(arch.input_bits)) & 1  # (K, N, 8)
    full_mask = (1 << arch.input_bits) - 1

    for tile_groups in n_tiles:
        for kt in range(n_ktiles):
            stats.overhead_cycles += arch.load_tile_cycles
            stats.events["tile_load"] += len(tile_groups)
            kmax = min(rows_per_tile, k_dim - kt * rows_per_tile)
            rows = -(-kmax // arch.compartments)
            for mt in range(m_tiles):
                for row in range(rows):
                    base = kt * rows_per_tile + row * arch.compartments
                    live = min(arch.compartments, k_dim - base)
                    for gid in tile_groups:
                        filters = groups[gid]
                        # binary cells: column 8*slot+b holds bit b of the weight
                        cells = np.zeros(
                            (live, arch.columns_per_macro), dtype=np.int64
                        )
                        for slot, f in enumerate(filters):
                            cells[:, slot * bits_per_filter : (slot + 1) * bits_per_filter] = (
                                wbits[base : base + live, f, :] * bw
                            )
                        nz_cells = int(
                            (wbits[base : base + live, list(filters), :] != 0).sum()
                        )
                        for macro in range(arch.macros_per_core):
                            m_pos = mt * arch.macros_per_core + macro
                            if m_pos >= m_dim:
                                continue
                            vec = inputs[m_pos, base : base + live]
                            sums = dbmu_rowpass(cells, vec, full_mask, arch.input_bits)
                            per_filter = sums.reshape(per_macro, bits_per_filter).sum(axis=1)
                            acc[m_pos, list(filters)] += per_filter[: len(filters)]
                            stats.effective_cell_ops += nz_cells * arch.input_bits
                            stats.total_cell_ops += (
                                arch.compartments * arch.columns_per_macro * arch.input_bits
                            )
                            stats.events["cell_op"] += (
                                arch.compartments * arch.columns_per_macro * arch.input_bits
                            )
                            stats.events["adder_tree_op"] += arch.input_bits
                            stats.events["meta_rf_read"] += 0  # no metadata in the dense machine
                            stats.events["buffer_read"] += live
                            stats.events["network_switch"] += 1
                    stats.cycles += arch.input_bits
                    stats.rowpass_cycles += arch.input_bits
                    stats.row_passes += 1
        for mt in range(m_tiles):
            stats.overhead_cycles += arch.writeback_cycles
            stats.events["writeback"] += 1
            lanes = sum(len(groups[g]) for g in tile_groups)
            stats.events["buffer_write"] += lanes * min(
                arch.macros_per_core, m_dim - mt * arch.macros_per_core
            )
    stats.cycles += stats.overhead_cycles
    _check_int32(acc)
    return acc, stats


# ---------------------------------------------------------------------------
# SIMD core
# ---------------------------------------------------------------------------


def _requantize(x: np.ndarray, scale_num: int, scale_den: int, shift: int, zero_point: int) -> np.ndarray:
    den = scale_den * (1 << shift)
    num = x.astype(np.int64) * scale_num
    # round half away from zero
    q = np.where(num >= 0, (2 * num + den) // (2 * den), -((-2 * num + den) // (2 * den)))
    return np.clip(q + zero_point, -128, 127)


def _pool(x: np.ndarray, size: int, maximum: bool) -> np.ndarray:
    h, w, c = x.shape
    if h % size or w % size:
        raise ShapeError("pool size must divide spatial dims")
    view = x.reshape(h // size, size, w // size, size, c)
    if maximum:
        return view.max(axis=(1, 3))
    return view.sum(axis=(1, 3), dtype=np.int64) // (size * size)


def _dw_conv(x: np.ndarray, kernels: np.ndarray, stride: int, pad: int) -> np.ndarray:
    h, w, c = x.shape
    kh, kw, kc = kernels.shape
    if kc != c:
        raise ShapeError(f"depthwise channel mismatch: {kc} vs {c}")
    padded = np.zeros((h + 2 * pad, w + 2 * pad, c), dtype=np.int64)
    padded[pad : pad + h, pad : pad + w, :] = x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError("non-positive depthwise output dims")
    out = np.zeros((ho, wo, c), dtype=np.int64)
    for ky in range(kh):
        for kx in range(kw):
            patch = padded[ky : ky + ho * stride : stride, kx : kx + wo * stride : stride, :]
            out += patch * kernels[ky, kx, :].astype(np.int64)
    return out


def simd_op(kind: str, tensors: list, params: dict | None = None) -> np.ndarray:
    """Exact integer semantics for the post-processing vector unit."""
    params = params or {}
    arrs = [np.asarray(t, dtype=np.int64) for t in tensors]
    if kind == "relu":
        return np.maximum(arrs[0], 0)
    if kind == "maxpool":
        return _pool(arrs[0], int(params["size"]), maximum=True)
    if kind == "avgpool":
        return _pool(arrs[0], int(params["size"]), maximum=False)
    if kind == "requantize":
        return _requantize(
            arrs[0],
            int(params["scale_num"]),
            int(params["scale_den"]),
            int(params["shift"]),
            int(params["zero_point"]),
        )
    if kind == "residual_add":
        if arrs[0].shape != arrs[1].shape:
            raise ShapeError("residual_add shape mismatch")
        return arrs[0] + arrs[1]
    if kind == "eltwise_mul":
        if arrs[0].shape != arrs[1].shape:
            raise ShapeError("eltwise_mul shape mismatch")
        return arrs[0] * arrs[1]
    if kind == "dw_conv":
        return _dw_conv(
            arrs[0],
            np.asarray(params["kernels"], dtype=np.int64),
            int(params.get("stride", 1)),
            int(params.get("pad", 0)),
        )
    raise ConfigError(f"unknown SIMD op {kind!r}")


def run_network(layers: list[dict], x, arch: ArchConfig | None = None) -> tuple[np.ndarray, SimStats]:
    """Chain compiled matrix layers and SIMD ops end to end.

    Each entry is either {"compiled": CompiledLayer, "reshape": optional
    output (H, W, C)} or {"simd": kind, "params": {...}}.
    """
    arch = arch or ArchConfig()
    total = SimStats(workload={"kind": "network"})
    cur = np.asarray(x)
    for entry in layers:
        if "compiled" in entry:
            compiled = entry["compiled"]
            if compiled.conv is None and cur.ndim != 2:
                cur = cur.reshape(1, -1)
            cur, stats = run_layer(compiled, cur)
            total.merge(stats)
            if entry.get("reshape") is not None:
                cur = cur.reshape(entry["reshape"])
        elif "simd" in entry:
            cur = simd_op(entry["simd"], [cur], entry.get("params"))
            total.events["simd_op"] += int(cur.size)
            simd_cycles = -(-int(cur.size) // arch.compartments)
            total.simd_cycles += simd_cycles
            total.cycles += simd_cycles
        else:
            raise ConfigError(f"bad network entry: {sorted(entry)}")
    return cur, total
