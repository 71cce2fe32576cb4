"""Offline compilation of approximated weights onto the modeled PIM array.

A layer is lowered to O = I x W (im2col for convolutions), filters are
grouped into threshold-homogeneous macro allocations, and the surviving
comp-pattern blocks of each weight are packed into per-core macro images
with their sign/index metadata and a per-core routing mask over the
reduction dimension. A tile plan and a small instruction stream drive the
simulator.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import csd
from .errors import ConfigError, FormatError, ShapeError
from .sparsify import FtaWeights, ThresholdVector

MAGIC = b"CPIM"
FORMAT_VERSION = 1

OPCODES = ("LOAD_TILE", "RUN_ROWPASS", "ACCUM", "WRITEBACK", "SIMD_OP", "BARRIER")
_OPCODE_ID = {name: i for i, name in enumerate(OPCODES)}

LAYER_KINDS = ("std-conv", "pw-conv", "fc", "dw-conv", "simd-op")


@dataclass(frozen=True)
class ArchConfig:
    cores: int = 8
    macros_per_core: int = 4
    columns_per_macro: int = 16
    compartments: int = 16
    rows_per_compartment: int = 16
    alpha: int = 8
    input_bits: int = 8
    input_buffer_kb: int = 128
    output_buffer_kb: int = 256
    load_tile_cycles: int = 0
    writeback_cycles: int = 0
    cost_table_path: str | None = None

    def __post_init__(self):
        counts = (
            self.cores,
            self.macros_per_core,
            self.columns_per_macro,
            self.compartments,
            self.rows_per_compartment,
            self.alpha,
            self.input_bits,
        )
        if any(c < 1 for c in counts):
            raise ConfigError("all architecture counts must be >= 1")
        if self.alpha * 2 > self.columns_per_macro:
            raise ConfigError(
                f"alpha={self.alpha} x max threshold 2 exceeds "
                f"{self.columns_per_macro} macro columns"
            )
        if self.load_tile_cycles < 0 or self.writeback_cycles < 0:
            raise ConfigError("cycle overheads must be non-negative")

    @property
    def rows_per_tile(self) -> int:
        return self.compartments * self.rows_per_compartment

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        known = cls.__dataclass_fields__.keys()
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown arch keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class DyadicCell:
    """One packed storage cell: magnitude bit, sign bit, 2-bit block index."""

    q: int
    sign: int  # 1 = negative digit
    index: int
    valid: int

    def value(self) -> int:
        if not self.valid:
            return 0
        return (1 - 2 * self.sign) << (2 * self.index + self.q)


@dataclass(frozen=True)
class GroupPlacement:
    threshold: int
    filters: tuple[int, ...]


@dataclass(frozen=True)
class FilterPlacement:
    groups: tuple[GroupPlacement, ...]
    zero_filters: tuple[int, ...]
    n_filters: int

    def column_span(self, f: int) -> tuple[int, int, int]:
        """(group id, first column, width) for filter f."""
        for gid, grp in enumerate(self.groups):
            if f in grp.filters:
                slot = grp.filters.index(f)
                return gid, slot * grp.threshold, grp.threshold
        raise KeyError(f"filter {f} has no macro placement")


@dataclass
class PackedGroup:
    """One macro image plus metadata for a threshold-homogeneous filter group."""

    placement: GroupPlacement
    row_mask: np.ndarray  # (K,) uint8, 1 = this core consumes input row k
    compressed_k: np.ndarray  # (K',) original k per compressed row
    valid: np.ndarray  # (tiles, Tk2, Tk1, columns) uint8
    q: np.ndarray
    sign: np.ndarray
    index: np.ndarray

    @property
    def kprime(self) -> int:
        return int(self.compressed_k.size)

    def cell_values(self) -> np.ndarray:
        """Signed contribution of every cell: (1-2*sign) << (2*index + q)."""
        mag = np.left_shift(np.int64(1), 2 * self.index.astype(np.int64) + self.q)
        return np.where(self.valid.astype(bool), (1 - 2 * self.sign.astype(np.int64)) * mag, 0)


@dataclass
class TilePlan:
    n_tiles: list[tuple[int, ...]]  # group ids per tile
    k_tiles: list[int]  # per n-tile
    row_passes: list[list[int]]  # per (n-tile, k-tile)
    m_tiles: int

    def to_dict(self) -> dict:
        return {
            "n_tiles": [list(t) for t in self.n_tiles],
            "k_tiles": self.k_tiles,
            "row_passes": self.row_passes,
            "m_tiles": self.m_tiles,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TilePlan":
        return cls(
            n_tiles=[tuple(t) for t in d["n_tiles"]],
            k_tiles=list(d["k_tiles"]),
            row_passes=[list(r) for r in d["row_passes"]],
            m_tiles=int(d["m_tiles"]),
        )


@dataclass(frozen=True)
class Instruction:
    opcode: str
    args: tuple[int, int, int, int] = (0, 0, 0, 0)

    def encode(self) -> list[int]:
        return [_OPCODE_ID[self.opcode], *self.args]

    @classmethod
    def decode(cls, word) -> "Instruction":
        return cls(opcode=OPCODES[int(word[0])], args=tuple(int(x) for x in word[1:5]))


@dataclass
class CompiledLayer:
    kind: str
    arch: ArchConfig
    m: int
    n: int
    k: int
    thresholds: np.ndarray
    placement: FilterPlacement
    groups: list[PackedGroup]
    plan: TilePlan
    instructions: list[Instruction]
    conv: dict | None = None  # {"ifmap": [H,W,C], "kernel": [kh,kw], "stride", "pad"}
    simd_post: dict | None = None  # {"kind": ..., "params": {...}}
    layer_id: str = ""


def im2col(ifmap, kernel_shape, stride=1, pad=0) -> np.ndarray:
    """Unfold (H, W, C) patches into an M x K matrix, K ordered (ky, kx, c)."""
    ifmap = np.asarray(ifmap)
    if ifmap.ndim != 3:
        raise ShapeError(f"ifmap must be 3-D (H, W, C), got {ifmap.shape}")
    kh, kw = kernel_shape
    h, w, c = ifmap.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"non-positive output dims ({ho}, {wo})")
    padded = np.zeros((h + 2 * pad, w + 2 * pad, c), dtype=np.int64)
    padded[pad : pad + h, pad : pad + w, :] = ifmap
    out = np.empty((ho * wo, kh * kw * c), dtype=np.int64)
    for oy in range(ho):
        for ox in range(wo):
            patch = padded[oy * stride : oy * stride + kh, ox * stride : ox * stride + kw, :]
            out[oy * wo + ox, :] = patch.reshape(-1)
    return out


def group_filters(th: ThresholdVector, arch: ArchConfig) -> FilterPlacement:
    """Partition filters into threshold-homogeneous macro-column groups.

    A filter with threshold t occupies t columns, so a macro holds up to
    columns_per_macro // t filters of that threshold. Threshold-0 filters
    get no macro at all; their outputs are constant zero.
    """
    th_vals = np.asarray(th.phi_th, dtype=np.int64)
    zero_filters = tuple(int(f) for f in np.flatnonzero(th_vals == 0))
    groups: list[GroupPlacement] = []
    for t in (1, 2):
        members = [int(f) for f in np.flatnonzero(th_vals == t)]
        cap = arch.columns_per_macro // t
        for i in range(0, len(members), cap):
            groups.append(GroupPlacement(threshold=t, filters=tuple(members[i : i + cap])))
    return FilterPlacement(groups=tuple(groups), zero_filters=zero_filters, n_filters=len(th_vals))


def plan_tiling(m: int, group_rows: list[int], arch: ArchConfig) -> TilePlan:
    """N-K-M loop plan: groups are chunked over the cores, the compressed
    reduction dimension over compartment x row tiles, and M over the macros."""
    if m < 1:
        raise ShapeError("M must be positive")
    rows_per_tile = arch.rows_per_tile
    n_tiles = [
        tuple(range(i, min(i + arch.cores, len(group_rows))))
        for i in range(0, len(group_rows), arch.cores)
    ]
    k_tiles = []
    row_passes = []
    for tile in n_tiles:
        kmax = max(group_rows[g] for g in tile)
        nk = max(1, -(-kmax // rows_per_tile))
        k_tiles.append(nk)
        per_kt = []
        for kt in range(nk):
            remaining = max(0, kmax - kt * rows_per_tile)
            per_kt.append(min(arch.rows_per_compartment, -(-remaining // arch.compartments)))
        row_passes.append(per_kt)
    return TilePlan(
        n_tiles=n_tiles,
        k_tiles=k_tiles,
        row_passes=row_passes,
        m_tiles=-(-m // arch.macros_per_core),
    )


def emit_instructions(plan: TilePlan, kind: str, simd_post: dict | None = None) -> list[Instruction]:
    """Replay the N-K-M loop order; partial sums across K tiles are folded
    with ACCUM before the WRITEBACK that drains an N tile."""
    if kind == "simd-op":
        return [Instruction("SIMD_OP")]
    ins: list[Instruction] = []
    for nt in range(len(plan.n_tiles)):
        for kt in range(plan.k_tiles[nt]):
            ins.append(Instruction("LOAD_TILE", (nt, kt, 0, 0)))
            for mt in range(plan.m_tiles):
                for row in range(plan.row_passes[nt][kt]):
                    ins.append(Instruction("RUN_ROWPASS", (nt, kt, mt, row)))
                ins.append(Instruction("BARRIER"))
                if kt > 0:
                    ins.append(Instruction("ACCUM", (nt, 0, mt, 0)))
        for mt in range(plan.m_tiles):
            ins.append(Instruction("WRITEBACK", (nt, 0, mt, 0)))
    if simd_post is not None:
        ins.append(Instruction("SIMD_OP"))
    return ins


def _pack_group(
    grp: GroupPlacement,
    fta: FtaWeights,
    keep: np.ndarray,
    arch: ArchConfig,
) -> PackedGroup:
    k_dim = fta.data.shape[0]
    t = grp.threshold
    row_mask = np.zeros(k_dim, dtype=np.uint8)
    for f in grp.filters:
        row_mask |= keep[:, f].astype(np.uint8)
    compressed_k = np.flatnonzero(row_mask).astype(np.int64)
    rows_per_tile = arch.rows_per_tile
    n_ktiles = max(1, -(-compressed_k.size // rows_per_tile))
    shape = (n_ktiles, arch.rows_per_compartment, arch.compartments, arch.columns_per_macro)
    valid = np.zeros(shape, dtype=np.uint8)
    qbits = np.zeros(shape, dtype=np.uint8)
    signs = np.zeros(shape, dtype=np.uint8)
    index = np.zeros(shape, dtype=np.uint8)
    blocks = csd.comp_block_table()
    for p, k in enumerate(compressed_k):
        tile, rem = divmod(p, rows_per_tile)
        row, comp = divmod(rem, arch.compartments)
        for slot, f in enumerate(grp.filters):
            if not keep[k, f]:
                continue
            w = int(fta.data[k, f])
            wblocks = blocks[w & 0xFF]
            if len(wblocks) != t:
                raise ShapeError(
                    f"weight {w} in filter {f} has {len(wblocks)} comp blocks, "
                    f"threshold is {t}"
                )
            for j, (q, sbit, idx) in enumerate(wblocks):
                col = slot * t + j
                valid[tile, row, comp, col] = 1
                qbits[tile, row, comp, col] = q
                signs[tile, row, comp, col] = sbit
                index[tile, row, comp, col] = idx
    return PackedGroup(
        placement=grp,
        row_mask=row_mask,
        compressed_k=compressed_k,
        valid=valid,
        q=qbits,
        sign=signs,
        index=index,
    )


def pack_weights(
    fta: FtaWeights,
    placement: FilterPlacement,
    arch: ArchConfig,
    m: int,
    kind: str = "fc",
    conv: dict | None = None,
    simd_post: dict | None = None,
    layer_id: str = "",
) -> CompiledLayer:
    """Pack an approximated layer into macro images, plan its tiles, and
    emit the instruction stream."""
    if kind not in LAYER_KINDS:
        raise ConfigError(f"unknown layer kind {kind!r}")
    k_dim, n_dim = fta.data.shape
    if placement.n_filters != n_dim:
        raise ShapeError("placement built for a different filter count")
    keep = fta.mask.expand(n_dim)
    groups = [_pack_group(grp, fta, keep, arch) for grp in placement.groups]
    plan = plan_tiling(m, [g.kprime for g in groups] or [0], arch)
    if not groups:
        plan = TilePlan(n_tiles=[], k_tiles=[], row_passes=[], m_tiles=plan.m_tiles)
    instructions = emit_instructions(plan, kind, simd_post)
    return CompiledLayer(
        kind=kind,
        arch=arch,
        m=m,
        n=n_dim,
        k=k_dim,
        thresholds=np.asarray(fta.thresholds.phi_th, dtype=np.int64),
        placement=placement,
        groups=groups,
        plan=plan,
        instructions=instructions,
        conv=conv,
        simd_post=simd_post,
        layer_id=layer_id,
    )


# ---------------------------------------------------------------------------
# serialization: JSON header + little-endian raw sections (see docs/formats.md)
# ---------------------------------------------------------------------------


def save_compiled(path, layer: CompiledLayer) -> None:
    sections: list[tuple[str, np.ndarray]] = []
    for i, g in enumerate(layer.groups):
        sections.append((f"group{i}/row_mask", np.packbits(g.row_mask)))
        for name in ("valid", "q", "sign", "index"):
            sections.append((f"group{i}/{name}", getattr(g, name).astype(np.uint8)))
    words = np.array([ins.encode() for ins in layer.instructions], dtype="<i4").reshape(-1, 5)
    sections.append(("instructions", words))

    payload = io.BytesIO()
    table = []
    for name, arr in sections:
        raw = np.ascontiguousarray(arr).tobytes()
        table.append(
            {
                "name": name,
                "offset": payload.tell(),
                "size": len(raw),
                "dtype": str(arr.dtype),
                "shape": list(arr.shape),
            }
        )
        payload.write(raw)
    body = payload.getvalue()

    header = {
        "version": FORMAT_VERSION,
        "kind": layer.kind,
        "layer_id": layer.layer_id,
        "m": layer.m,
        "n": layer.n,
        "k": layer.k,
        "arch": layer.arch.to_dict(),
        "thresholds": [int(t) for t in layer.thresholds],
        "zero_filters": list(layer.placement.zero_filters),
        "groups": [
            {
                "threshold": g.placement.threshold,
                "filters": list(g.placement.filters),
                "kprime": g.kprime,
                "n_ktiles": int(g.valid.shape[0]),
            }
            for g in layer.groups
        ],
        "plan": layer.plan.to_dict(),
        "conv": layer.conv,
        "simd_post": layer.simd_post,
        "sections": table,
        "payload_sha256": hashlib.sha256(body).hexdigest(),
    }
    head = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(head).to_bytes(4, "little"))
        fh.write(head)
        fh.write(body)


def load_compiled(path) -> CompiledLayer:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}")
        head_len = int.from_bytes(fh.read(4), "little")
        header = json.loads(fh.read(head_len))
        body = fh.read()
    if header.get("version") != FORMAT_VERSION:
        raise FormatError(f"unsupported container version {header.get('version')}")
    if hashlib.sha256(body).hexdigest() != header["payload_sha256"]:
        raise FormatError("payload checksum mismatch")

    def section(name):
        for s in header["sections"]:
            if s["name"] == name:
                raw = body[s["offset"] : s["offset"] + s["size"]]
                return np.frombuffer(raw, dtype=s["dtype"]).reshape(s["shape"]).copy()
        raise FormatError(f"missing section {name!r}")

    arch = ArchConfig.from_dict(header["arch"])
    groups = []
    for i, g in enumerate(header["groups"]):
        row_mask = np.unpackbits(section(f"group{i}/row_mask"))[: header["k"]].astype(np.uint8)
        groups.append(
            PackedGroup(
                placement=GroupPlacement(threshold=g["threshold"], filters=tuple(g["filters"])),
                row_mask=row_mask,
                compressed_k=np.flatnonzero(row_mask).astype(np.int64),
                valid=section(f"group{i}/valid"),
                q=section(f"group{i}/q"),
                sign=section(f"group{i}/sign"),
                index=section(f"group{i}/index"),
            )
        )
    placement = FilterPlacement(
        groups=tuple(g.placement for g in groups),
        zero_filters=tuple(header["zero_filters"]),
        n_filters=header["n"],
    )
    instructions = [Instruction.decode(w) for w in section("instructions")]
    return CompiledLayer(
        kind=header["kind"],
        arch=arch,
        m=header["m"],
        n=header["n"],
        k=header["k"],
        thresholds=np.array(header["thresholds"], dtype=np.int64),
        placement=placement,
        groups=groups,
        plan=TilePlan.from_dict(header["plan"]),
        instructions=instructions,
        conv=header["conv"],
        simd_post=header["simd_post"],
        layer_id=header.get("layer_id", ""),
    )


def dump_listing(layer: CompiledLayer) -> str:
    """Human-readable listing of placement, images, and the instruction stream."""
    lines = [
        f"kind={layer.kind} M={layer.m} N={layer.n} K={layer.k}",
        f"zero filters: {list(layer.placement.zero_filters) or '-'}",
    ]
    for i, g in enumerate(layer.groups):
        lines.append(
            f"group {i}: threshold={g.placement.threshold} "
            f"filters={list(g.placement.filters)} K'={g.kprime}"
        )
        occupied = int(g.valid.sum())
        lines.append(f"  valid cells: {occupied}")
    lines.append(f"plan: {layer.plan.to_dict()}")
    lines.append(f"instructions ({len(layer.instructions)}):")
    for ins in layer.instructions:
        lines.append(f"  {ins.opcode} {ins.args}")
    return "\n".join(lines)
