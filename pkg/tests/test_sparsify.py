import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from csdpim import csd
from csdpim.errors import ShapeError
from csdpim.sparsify import (
    PruneMask,
    ThresholdVector,
    block_l2_prune,
    compute_thresholds,
    fta_approximate,
    snap_table,
    sparsity_report,
)

PHI = np.asarray(csd.nonzero_count_table(), dtype=np.int64)


def phi_of(arr):
    return PHI[np.asarray(arr, dtype=np.int64) & 0xFF]


# ---------------------------------------------------------------------------
# block_l2_prune
# ---------------------------------------------------------------------------


def test_zero_sparsity_keeps_everything():
    W = np.arange(32, dtype=np.int8).reshape(4, 8)
    mask = block_l2_prune(W, alpha=8, sparsity=0.0)
    assert mask.bits.shape == (4, 1)
    assert mask.bits.all()


def test_prune_smallest_norm_blocks():
    # alpha=4, one filter group per 4 columns; norms constructed so blocks
    # 1, 3, 4 (in row-major block order) are the three smallest
    W = np.zeros((3, 8), dtype=np.int8)
    blocks = {  # (k, g) -> fill value
        (0, 0): 9,
        (0, 1): 1,  # block 1: small
        (1, 0): 8,
        (1, 1): 2,  # block 3: small
        (2, 0): 1,  # block 4: small
        (2, 1): 7,
    }
    for (k, g), val in blocks.items():
        W[k, g * 4 : (g + 1) * 4] = val
    mask = block_l2_prune(W, alpha=4, sparsity=0.5)  # floor(0.5*6)=3 blocks
    assert mask.bits.tolist() == [[1, 0], [1, 0], [0, 1]]


def test_prune_matches_full_sort_oracle():
    rng = np.random.default_rng(5)
    W = rng.integers(-128, 128, size=(16, 16)).astype(np.int8)
    alpha, sparsity = 4, 0.5
    mask = block_l2_prune(W, alpha=alpha, sparsity=sparsity)
    # oracle: sort every block by (squared norm, k, g) and cut
    norms = []
    for k in range(16):
        for g in range(4):
            blk = W[k, g * alpha : (g + 1) * alpha].astype(np.int64)
            norms.append((int((blk * blk).sum()), k, g))
    pruned = set((k, g) for _, k, g in sorted(norms)[: int(sparsity * len(norms))])
    for k in range(16):
        for g in range(4):
            assert mask.bits[k, g] == (0 if (k, g) in pruned else 1)


def test_prune_rejects_bad_args():
    W = np.ones((2, 4), dtype=np.int8)
    with pytest.raises(ValueError):
        block_l2_prune(W, 4, 1.0)
    with pytest.raises(ShapeError):
        block_l2_prune(np.zeros((0, 4), dtype=np.int8), 4, 0.0)


def test_prune_ragged_tail_group():
    W = np.ones((2, 10), dtype=np.int8)  # alpha=8 -> tail group of width 2
    mask = block_l2_prune(W, alpha=8, sparsity=0.0)
    assert mask.bits.shape == (2, 2)
    assert mask.expand(10).shape == (2, 10)


# ---------------------------------------------------------------------------
# compute_thresholds
# ---------------------------------------------------------------------------


def _column_matrix(values):
    return np.array(values, dtype=np.int8).reshape(-1, 1)


def _column_mask(bits):
    return PruneMask(bits=np.array(bits, dtype=np.uint8).reshape(-1, 1), alpha=1)


def test_threshold_worked_example():
    # phi = {2,0,1,0,0,1,3}, mask = {1,0,1,1,0,1,1} -> mode 1 -> threshold 1
    weights = _column_matrix([-63, 0, 64, 0, 0, -8, 13])
    assert phi_of(weights[:, 0]).tolist() == [2, 0, 1, 0, 0, 1, 3]
    mask = _column_mask([1, 0, 1, 1, 0, 1, 1])
    th = compute_thresholds(weights, mask)
    assert th.phi_th.tolist() == [1]


def test_threshold_all_zero_filter():
    weights = _column_matrix([0, 0, 0])
    th = compute_thresholds(weights, _column_mask([1, 1, 1]))
    assert th.phi_th.tolist() == [0]


def test_threshold_fully_masked_filter():
    weights = _column_matrix([5, 6, 7])
    th = compute_thresholds(weights, _column_mask([0, 0, 0]))
    assert th.phi_th.tolist() == [0]


def test_threshold_mode_capped_at_two():
    weights = _column_matrix([-67] * 5)  # phi(-67) = 3 everywhere
    th = compute_thresholds(weights, _column_mask([1] * 5))
    assert th.phi_th.tolist() == [2]


def test_threshold_mode_tie_takes_smaller():
    # phi values {1,1,2,2}: tie between 1 and 2 -> choose 1
    weights = _column_matrix([1, 2, 3, 5])
    assert phi_of(weights[:, 0]).tolist() == [1, 1, 2, 2]
    th = compute_thresholds(weights, _column_mask([1, 1, 1, 1]))
    assert th.phi_th.tolist() == [1]


# ---------------------------------------------------------------------------
# fta_approximate
# ---------------------------------------------------------------------------


def test_fta_worked_example():
    weights = _column_matrix([-63, 0, 64, 0, 0, -8, 13])
    mask = _column_mask([1, 0, 1, 1, 0, 1, 1])
    th = compute_thresholds(weights, mask)
    fta = fta_approximate(weights, mask, th)
    assert fta.data[:, 0].tolist() == [-64, 0, 64, 1, 0, -8, 16]


def test_fta_members_unchanged():
    members = list(csd.query_table(2).members)
    weights = np.array(members, dtype=np.int8).reshape(-1, 1)
    mask = _column_mask([1] * len(members))
    fta = fta_approximate(weights, mask, ThresholdVector(np.array([2])))
    assert fta.data[:, 0].tolist() == members


def test_fta_matches_bruteforce_argmin():
    rng = np.random.default_rng(9)
    weights = rng.integers(-128, 128, size=(100, 4)).astype(np.int8)
    mask = PruneMask(bits=np.ones((100, 1), dtype=np.uint8), alpha=4)
    th = compute_thresholds(weights, mask)
    fta = fta_approximate(weights, mask, th)
    for f in range(4):
        members = csd.query_table(int(th.phi_th[f])).members
        for k in range(100):
            w = int(weights[k, f])
            best = min(members, key=lambda t: (abs(t - w), -t))  # positive tie-break
            assert fta.data[k, f] == best


def test_fta_post_invariant_exact_counts():
    rng = np.random.default_rng(10)
    weights = rng.integers(-128, 128, size=(64, 24)).astype(np.int8)
    mask = block_l2_prune(weights, 8, 0.4)
    th = compute_thresholds(weights, mask)
    fta = fta_approximate(weights, mask, th)
    keep = mask.expand(24)
    counts = phi_of(fta.data)
    for f in range(24):
        assert (counts[keep[:, f], f] == th.phi_th[f]).all()
        assert (fta.data[~keep[:, f], f] == 0).all()


def test_fta_idempotent():
    rng = np.random.default_rng(11)
    weights = rng.integers(-128, 128, size=(32, 8)).astype(np.int8)
    mask = block_l2_prune(weights, 8, 0.25)
    th = compute_thresholds(weights, mask)
    once = fta_approximate(weights, mask, th)
    twice = fta_approximate(once.data, mask, th)
    assert np.array_equal(once.data, twice.data)


def test_approximation_error_bounds_frozen():
    # max |w - snap(w)| over all INT8, computed once by exhaustive scan
    frozen = {0: 128, 1: 63, 2: 8}
    for phi, bound in frozen.items():
        tab = snap_table(phi)
        worst = max(abs(int(tab[v + 128]) - v) for v in range(-128, 128))
        assert worst == bound


def test_metadata_budget_per_weight():
    # cell bit + sign bit + 2 index bits per stored block, threshold <= 2
    for th in (0, 1, 2):
        assert th * (1 + 1 + 2) <= 8


@settings(max_examples=25)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_fta_idempotent_hypothesis(seed):
    rng = np.random.default_rng(seed)
    weights = rng.integers(-128, 128, size=(16, 8)).astype(np.int8)
    mask = block_l2_prune(weights, 8, 0.5)
    th = compute_thresholds(weights, mask)
    once = fta_approximate(weights, mask, th)
    assert np.array_equal(once.data, fta_approximate(once.data, mask, th).data)


# ---------------------------------------------------------------------------
# sparsity_report
# ---------------------------------------------------------------------------


def test_report_all_zero_matrix():
    W = np.zeros((4, 8), dtype=np.int8)
    mask = block_l2_prune(W, 8, 0.0)
    th = compute_thresholds(W, mask)
    fta = fta_approximate(W, mask, th)
    rep = sparsity_report(W, mask, fta)
    assert rep["value_sparsity"] == 1.0
    assert rep["csd_zero_bit_fraction_after_fta"] == 1.0


def test_report_pm64_matrix_seven_eighths():
    # every weight is +-64 (one non-zero digit) -> 7/8 of digits are zero
    W = np.where(np.indices((8, 8)).sum(axis=0) % 2 == 0, 64, -64).astype(np.int8)
    mask = block_l2_prune(W, 8, 0.0)
    th = compute_thresholds(W, mask)
    fta = fta_approximate(W, mask, th)
    rep = sparsity_report(W, mask, fta)
    assert rep["csd_zero_bit_fraction_after_fta"] == pytest.approx(7 / 8)
    assert rep["threshold_histogram"] == {"0": 0, "1": 8, "2": 0}


def test_report_csd_beats_binary_zero_bits():
    rng = np.random.default_rng(13)
    W = rng.integers(-128, 128, size=(32, 32)).astype(np.int8)
    mask = block_l2_prune(W, 8, 0.0)
    th = compute_thresholds(W, mask)
    fta = fta_approximate(W, mask, th)
    rep = sparsity_report(W, mask, fta)
    binary_zero = 1.0 - np.mean([bin(int(v) & 0xFF).count("1") for v in W.reshape(-1)]) / 8
    assert rep["csd_zero_bit_fraction_before_fta"] > binary_zero
