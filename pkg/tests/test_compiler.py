import numpy as np
import pytest

from csdpim import csd, oracle
from csdpim.compiler import (
    ArchConfig,
    Instruction,
    group_filters,
    im2col,
    load_compiled,
    pack_weights,
    plan_tiling,
    save_compiled,
    dump_listing,
)
from csdpim.errors import ConfigError, ShapeError
from csdpim.sparsify import FtaWeights, PruneMask, ThresholdVector

from conftest import compile_pipeline


def unpack_effective_weights(layer):
    """Test-local decoder: rebuild the K x N matrix a compiled layer encodes."""
    out = np.zeros((layer.k, layer.n), dtype=np.int64)
    arch = layer.arch
    for g in layer.groups:
        t = g.placement.threshold
        for p, k in enumerate(g.compressed_k):
            tile, rem = divmod(p, arch.rows_per_tile)
            row, comp = divmod(rem, arch.compartments)
            for slot, f in enumerate(g.placement.filters):
                acc = 0
                for j in range(t):
                    col = slot * t + j
                    if g.valid[tile, row, comp, col]:
                        sign = 1 - 2 * int(g.sign[tile, row, comp, col])
                        shift = 2 * int(g.index[tile, row, comp, col]) + int(
                            g.q[tile, row, comp, col]
                        )
                        acc += sign << shift
                out[k, f] = acc
    return out


# ---------------------------------------------------------------------------
# ArchConfig
# ---------------------------------------------------------------------------


def test_arch_defaults():
    arch = ArchConfig()
    assert arch.cores == 8
    assert arch.rows_per_tile == 256
    assert arch.alpha * 2 <= arch.columns_per_macro


def test_arch_rejects_alpha_over_columns():
    with pytest.raises(ConfigError):
        ArchConfig(alpha=16, columns_per_macro=16)


def test_arch_rejects_unknown_key():
    with pytest.raises(ConfigError):
        ArchConfig.from_dict({"cores": 4, "turbo": True})


def test_arch_rejects_negative_overheads():
    with pytest.raises(ConfigError):
        ArchConfig(load_tile_cycles=-1)


def test_arch_round_trip():
    arch = ArchConfig(cores=2, load_tile_cycles=4)
    assert ArchConfig.from_dict(arch.to_dict()) == arch


# ---------------------------------------------------------------------------
# im2col
# ---------------------------------------------------------------------------


def test_im2col_4x4_3x3():
    x = np.arange(16).reshape(4, 4, 1)
    cols = im2col(x, (3, 3))
    assert cols.shape == (4, 9)
    assert cols[0].tolist() == [0, 1, 2, 4, 5, 6, 8, 9, 10]
    assert cols[3].tolist() == [5, 6, 7, 9, 10, 11, 13, 14, 15]


def test_im2col_channel_ordering():
    # K ordered (ky, kx, c): for a 1x1 kernel the row is just the pixel's channels
    x = np.arange(8).reshape(2, 2, 2)
    cols = im2col(x, (1, 1))
    assert np.array_equal(cols, x.reshape(4, 2))


def test_im2col_matches_conv_oracle_padded():
    rng = np.random.default_rng(3)
    x = rng.integers(-128, 128, size=(8, 8, 4))
    k = rng.integers(-128, 128, size=(3, 3, 4, 6))
    lowered = im2col(x, (3, 3), stride=1, pad=1) @ k.reshape(-1, 6)
    direct = oracle.conv_ref(x, k, stride=1, pad=1).reshape(-1, 6)
    assert np.array_equal(lowered, direct)


def test_im2col_rejects_bad_shapes():
    with pytest.raises(ShapeError):
        im2col(np.zeros((4, 4)), (3, 3))
    with pytest.raises(ShapeError):
        im2col(np.zeros((2, 2, 1)), (3, 3))  # kernel larger than ifmap


# ---------------------------------------------------------------------------
# filter grouping
# ---------------------------------------------------------------------------


def test_group_sixteen_th1_filters_fill_one_macro():
    th = ThresholdVector(np.ones(16, dtype=np.int64))
    placement = group_filters(th, ArchConfig())
    assert len(placement.groups) == 1
    assert placement.groups[0].threshold == 1
    assert placement.groups[0].filters == tuple(range(16))


def test_group_eight_th2_filters_fill_one_macro():
    th = ThresholdVector(np.full(8, 2, dtype=np.int64))
    placement = group_filters(th, ArchConfig())
    assert len(placement.groups) == 1
    assert placement.groups[0].filters == tuple(range(8))


def test_group_five_th2_filters_leave_padding():
    th = ThresholdVector(np.full(5, 2, dtype=np.int64))
    placement = group_filters(th, ArchConfig())
    grp = placement.groups[0]
    assert len(grp.filters) == 5  # 10 columns used, 6 padded
    assert placement.column_span(2) == (0, 4, 2)


def test_group_mixed_thresholds_and_zero_filters():
    th = ThresholdVector(np.array([0, 1, 2, 1, 0, 2], dtype=np.int64))
    placement = group_filters(th, ArchConfig())
    assert placement.zero_filters == (0, 4)
    by_t = {g.threshold: g.filters for g in placement.groups}
    assert by_t[1] == (1, 3)
    assert by_t[2] == (2, 5)


def test_group_overflow_spills_to_second_macro():
    th = ThresholdVector(np.full(17, 1, dtype=np.int64))
    placement = group_filters(th, ArchConfig())
    assert len(placement.groups) == 2
    assert placement.groups[1].filters == (16,)


# ---------------------------------------------------------------------------
# cell packing
# ---------------------------------------------------------------------------


def _single_filter_layer(weight_column, threshold, m=1):
    k = len(weight_column)
    fta = FtaWeights(
        data=np.array(weight_column, dtype=np.int8).reshape(k, 1),
        thresholds=ThresholdVector(np.array([threshold])),
        mask=PruneMask(bits=np.ones((k, 1), dtype=np.uint8), alpha=1),
    )
    arch = ArchConfig()
    return pack_weights(fta, group_filters(fta.thresholds, arch), arch, m=m)


def test_pack_minus_64_cell():
    layer = _single_filter_layer([-64], 1)
    g = layer.groups[0]
    assert g.valid[0, 0, 0, 0] == 1
    assert (int(g.q[0, 0, 0, 0]), int(g.sign[0, 0, 0, 0]), int(g.index[0, 0, 0, 0])) == (0, 1, 3)


def test_pack_plus_2_cell():
    layer = _single_filter_layer([2], 1)
    g = layer.groups[0]
    assert (int(g.q[0, 0, 0, 0]), int(g.sign[0, 0, 0, 0]), int(g.index[0, 0, 0, 0])) == (1, 0, 0)


def test_pack_compressed_row_addressing():
    # 20 rows: row p lands at compartment p % 16, row p // 16
    layer = _single_filter_layer([64] * 20, 1)
    g = layer.groups[0]
    assert g.kprime == 20
    assert g.valid[0, 0, :, 0].sum() == 16
    assert g.valid[0, 1, :4, 0].sum() == 4
    assert g.valid[0, 1, 4:, 0].sum() == 0


def test_pack_rejects_threshold_mismatch():
    fta = FtaWeights(
        data=np.array([[-67]], dtype=np.int8),  # 3 comp blocks after csd, 2 stored max
        thresholds=ThresholdVector(np.array([2])),
        mask=PruneMask(bits=np.ones((1, 1), dtype=np.uint8), alpha=1),
    )
    arch = ArchConfig()
    with pytest.raises(ShapeError):
        pack_weights(fta, group_filters(fta.thresholds, arch), arch, m=1)


def test_pack_round_trip_random_layers():
    rng = np.random.default_rng(21)
    for _ in range(10):
        k = int(rng.integers(4, 300))
        n = int(rng.integers(1, 40))
        weights = rng.integers(-128, 128, size=(k, n)).astype(np.int8)
        layer, fta = compile_pipeline(weights, m=1, sparsity=float(rng.choice([0, 0.3])))
        keep = fta.mask.expand(n)
        expected = np.where(keep, fta.data.astype(np.int64), 0)
        expected[:, list(layer.placement.zero_filters)] = 0
        assert np.array_equal(unpack_effective_weights(layer), expected)


def test_pack_respects_column_budget():
    layer, _ = compile_pipeline(
        np.random.default_rng(2).integers(-128, 128, size=(64, 40)).astype(np.int8), m=1
    )
    for g in layer.groups:
        assert len(g.placement.filters) * g.placement.threshold <= layer.arch.columns_per_macro
        used = len(g.placement.filters) * g.placement.threshold
        assert not g.valid[:, :, :, used:].any()  # padding columns stay empty


# ---------------------------------------------------------------------------
# tiling and instructions
# ---------------------------------------------------------------------------


def test_plan_single_tile_shapes():
    plan = plan_tiling(4, [256] * 8, ArchConfig())
    assert plan.n_tiles == [tuple(range(8))]
    assert plan.k_tiles == [1]
    assert plan.row_passes == [[16]]
    assert plan.m_tiles == 1


def test_plan_halved_rows_after_pruning():
    plan = plan_tiling(4, [128] * 8, ArchConfig())
    assert plan.row_passes == [[8]]


def test_plan_two_k_tiles():
    plan = plan_tiling(1, [512], ArchConfig())
    assert plan.k_tiles == [1 + 1]
    assert plan.row_passes == [[16, 16]]


def test_plan_spills_groups_over_cores():
    plan = plan_tiling(1, [16] * 10, ArchConfig())
    assert plan.n_tiles == [tuple(range(8)), (8, 9)]


def test_instruction_stream_single_tile():
    layer, _ = compile_pipeline(
        np.full((32, 4), 64, dtype=np.int8), m=2
    )
    ops = [ins.opcode for ins in layer.instructions]
    rows = layer.plan.row_passes[0][0]
    assert ops == ["LOAD_TILE"] + ["RUN_ROWPASS"] * rows + ["BARRIER", "WRITEBACK"]


def test_instruction_stream_accumulates_across_k_tiles():
    layer, _ = compile_pipeline(
        np.full((512, 4), 64, dtype=np.int8), m=1
    )
    ops = [ins.opcode for ins in layer.instructions]
    assert ops.count("LOAD_TILE") == 2
    assert ops.count("ACCUM") == 1
    assert ops.index("ACCUM") > ops.index("BARRIER")
    assert ops[-1] == "WRITEBACK"


def test_instruction_encode_decode():
    ins = Instruction("RUN_ROWPASS", (1, 2, 3, 4))
    assert Instruction.decode(ins.encode()) == ins


def test_pack_rejects_unknown_kind():
    with pytest.raises(ConfigError):
        compile_pipeline(np.full((4, 4), 64, dtype=np.int8), m=1, kind="lstm")


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(31)
    weights = rng.integers(-128, 128, size=(300, 24)).astype(np.int8)
    layer, _ = compile_pipeline(weights, m=6, sparsity=0.25)
    path = tmp_path / "layer.cpim"
    save_compiled(path, layer)
    loaded = load_compiled(path)
    assert loaded.kind == layer.kind
    assert (loaded.m, loaded.n, loaded.k) == (layer.m, layer.n, layer.k)
    assert loaded.arch == layer.arch
    assert np.array_equal(loaded.thresholds, layer.thresholds)
    assert loaded.placement == layer.placement
    assert loaded.plan.to_dict() == layer.plan.to_dict()
    assert loaded.instructions == layer.instructions
    for a, b in zip(loaded.groups, layer.groups):
        assert np.array_equal(a.row_mask, b.row_mask)
        assert np.array_equal(a.compressed_k, b.compressed_k)
        for name in ("valid", "q", "sign", "index"):
            assert np.array_equal(getattr(a, name), getattr(b, name))


def test_load_rejects_corruption(tmp_path):
    layer, _ = compile_pipeline(np.full((8, 2), 64, dtype=np.int8), m=1)
    path = tmp_path / "layer.cpim"
    save_compiled(path, layer)
    blob = bytearray(path.read_bytes())
    blob[-1] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(Exception):
        load_compiled(path)


def test_dump_listing_mentions_instructions():
    layer, _ = compile_pipeline(np.full((8, 2), 64, dtype=np.int8), m=1)
    text = dump_listing(layer)
    assert "RUN_ROWPASS" in text
    assert "kind=fc" in text
