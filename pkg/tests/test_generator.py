import numpy as np
import pytest

from idslice.generator import (
    Checkpoint,
    EmptyCatalog,
    NoHitStats,
    TimeRange,
    candidate_count,
    checkpoint_from_index,
    enumerate_candidate_blocks,
    enumerate_candidates,
    hit_rate_curve,
    index_from_checkpoint,
    select_patterns,
)
from idslice.idcodec import DEFAULT_LAYOUT, create_time_from_id, decode
from idslice.inference import PatternCatalog


def catalog_of(patterns):
    return PatternCatalog(22, {p: 1 for p in patterns})


def with_stats(spec):
    """spec: {pattern: (requests, hits)}"""
    catalog = PatternCatalog(22, {p: 1 for p in spec})
    for p, (req, hit) in spec.items():
        catalog.requests[p] = req
        catalog.hits[p] = hit
    return catalog


def test_time_range_validation():
    with pytest.raises(ValueError):
        TimeRange(10, 10)
    with pytest.raises(ValueError):
        TimeRange(0, 10, millisecond_stride=0)


def test_one_second_504_patterns_gives_504000():
    rng = TimeRange(1_700_000_000, 1_700_000_001)
    catalog = catalog_of(range(504))
    assert candidate_count(rng, catalog) == 504_000
    n = sum(1 for _ in enumerate_candidates(rng, catalog))
    assert n == 504_000


def test_empty_catalog_raises():
    with pytest.raises(EmptyCatalog):
        list(enumerate_candidates(TimeRange(0, 1), PatternCatalog(22)))


def test_small_range_hand_enumerable():
    rng = TimeRange(100, 102, millisecond_stride=1000)
    catalog = catalog_of([5, 9, 17])
    ids = list(enumerate_candidates(rng, catalog))
    assert len(ids) == 6
    for raw in ids:
        d = decode(raw)
        assert rng.contains(d.create_time())
        assert d.millisecond == 0
    assert [decode(i).suffix_pattern.bits for i in ids] == [5, 9, 17, 5, 9, 17]
    assert [decode(i).epoch_seconds for i in ids] == [100, 100, 100, 101, 101, 101]


def test_containment_and_uniqueness():
    rng = TimeRange(1_700_000_000, 1_700_000_002, millisecond_stride=100)
    catalog = catalog_of([3, 1, 2])
    ids = list(enumerate_candidates(rng, catalog))
    assert len(ids) == len(set(ids)) == candidate_count(rng, catalog)
    for raw in ids:
        assert rng.contains(create_time_from_id(raw))


def test_ordering_time_then_pattern_ascending():
    rng = TimeRange(50, 51, millisecond_stride=500)
    catalog = catalog_of([30, 10, 20])
    ids = list(enumerate_candidates(rng, catalog))
    decoded = [(decode(i).create_time(), decode(i).suffix_pattern.bits) for i in ids]
    assert decoded == sorted(decoded)


def test_checkpoint_index_round_trip():
    rng = TimeRange(1000, 1010, millisecond_stride=7)
    catalog = catalog_of([1, 2, 3, 4, 5])
    for index in [0, 1, 4, 5, 714, 715, 1000, candidate_count(rng, catalog) - 1]:
        ckpt = checkpoint_from_index(rng, catalog, index)
        assert index_from_checkpoint(rng, catalog, ckpt) == index


def test_checkpoint_resume_identical_sequence():
    rng = TimeRange(200, 203, millisecond_stride=250)
    catalog = catalog_of([7, 11, 13])
    full = list(enumerate_candidates(rng, catalog))
    for cut in [0, 1, 5, 11, 12, 35, len(full)]:
        resumed = list(enumerate_candidates(rng, catalog, skip=cut))
        assert full[cut:] == resumed


def test_checkpoint_save_load(tmp_path):
    ckpt = Checkpoint(second=123, millisecond=250, pattern_index=2)
    path = tmp_path / "ckpt.json"
    ckpt.save(path)
    assert Checkpoint.load(path) == ckpt


def test_blocks_match_scalar_stream():
    rng = TimeRange(600, 603, millisecond_stride=200)
    catalog = catalog_of([2, 4, 8])
    scalar = list(enumerate_candidates(rng, catalog))
    for skip in [0, 1, 7, 15, 16, 44]:
        blocks = list(enumerate_candidate_blocks(rng, catalog, skip=skip))
        flat = [int(v) for b in blocks for v in b]
        assert flat == scalar[skip:]
    assert list(enumerate_candidate_blocks(rng, catalog, skip=45)) == []


def test_select_patterns_requires_stats():
    with pytest.raises(NoHitStats):
        select_patterns(catalog_of([1, 2]), 0.9)
    # stats on some but not all patterns is also an error
    partial = with_stats({1: (10, 5)})
    partial.add(2)
    with pytest.raises(NoHitStats):
        select_patterns(partial, 0.9)


def test_select_patterns_arithmetic():
    catalog = with_stats({1: (100, 90), 2: (100, 9), 3: (100, 1)})
    sel = select_patterns(catalog, 0.9)
    assert sel.patterns == [1]
    assert sel.expected_capture == pytest.approx(0.9)
    assert sel.expected_success_rate == pytest.approx(0.9)


def test_select_patterns_target_one_takes_all_hitters():
    catalog = with_stats({1: (10, 5), 2: (10, 2), 3: (10, 0)})
    sel = select_patterns(catalog, 1.0)
    assert sel.patterns == [1, 2]  # the zero-hit pattern is never needed
    assert sel.expected_capture == 1.0


def test_hit_rate_curve_single_pattern():
    curve = hit_rate_curve(with_stats({9: (50, 10)}))
    assert len(curve.points) == 1
    assert curve.points[0].capture_fraction == 1.0
    assert curve.points[0].request_success_rate == pytest.approx(0.2)


def test_hit_rate_curve_two_pattern_arithmetic():
    curve = hit_rate_curve(with_stats({1: (100, 90), 2: (100, 10)}))
    assert [(p.patterns_used, round(p.request_success_rate, 6),
             round(p.capture_fraction, 6)) for p in curve.points] == [
        (1, 0.9, 0.9),
        (2, 0.5, 1.0),
    ]


def test_hit_rate_curve_tie_break_ascending_pattern():
    curve = hit_rate_curve(with_stats({5: (10, 5), 3: (10, 5)}))
    assert curve.points[0].patterns_used == 1
    # equal rates: pattern 3 enters first
    sel = select_patterns(with_stats({5: (10, 5), 3: (10, 5)}), 0.5)
    assert sel.patterns == [3]


def test_curve_monotonicity_random_catalogs():
    rng = np.random.default_rng(31)
    for _ in range(20):
        spec = {}
        for p in rng.choice(1 << 22, size=30, replace=False):
            req = int(rng.integers(1, 1000))
            spec[int(p)] = (req, int(rng.integers(0, req + 1)))
        curve = hit_rate_curve(with_stats(spec))
        captures = [pt.capture_fraction for pt in curve.points]
        rates = [pt.request_success_rate for pt in curve.points]
        assert all(a <= b + 1e-12 for a, b in zip(captures, captures[1:]))
        assert all(a >= b - 1e-12 for a, b in zip(rates, rates[1:]))
        assert captures[-1] == pytest.approx(1.0)
