import numpy as np
import pytest

from idslice.idcodec import (
    DEFAULT_LAYOUT,
    FieldOverflow,
    IdLayout,
    LayoutError,
    SuffixPattern,
    create_time_from_id,
    decode,
    encode,
)

# Known ground-truth decomposition of a production video ID.
KNOWN_ID = 7341456348594310401
KNOWN_EPOCH = 1709316007

TOY_LAYOUT = IdLayout((("timestamp", 0, 40), ("millisecond", 40, 50), ("payload", 50, 64)))


def test_decode_known_id():
    d = decode(KNOWN_ID)
    assert d.epoch_seconds == KNOWN_EPOCH
    assert d.millisecond == 0
    assert d.field_values["sequence"] == 0
    assert d.field_values["entity_type"] == 13
    assert d.field_values["machine"] == 1
    assert d.suffix_pattern.width == 22
    assert not d.anomalous_ms


def test_decode_zero():
    d = decode(0)
    assert d.epoch_seconds == 0
    assert all(v == 0 for v in d.field_values.values())
    assert d.suffix_pattern.bits == 0


def test_encode_known_tail():
    raw = encode(
        {
            "timestamp": KNOWN_EPOCH,
            "millisecond": 0,
            "sequence": 0,
            "entity_type": 13,
            "machine": 1,
        }
    )
    assert raw == KNOWN_ID


def test_encode_all_zero():
    assert encode({}) == 0


def test_round_trip_explicit_fields():
    fields = {"timestamp": 1712768400, "millisecond": 999, "sequence": 5,
              "entity_type": 13, "machine": 7}
    d = decode(encode(fields))
    assert d.field_values == fields


def test_round_trip_random_field_tuples():
    rng = np.random.default_rng(1234)
    layout = DEFAULT_LAYOUT
    names = layout.field_names
    widths = [layout.width(n) for n in names]
    for _ in range(10_000):
        fields = {n: int(rng.integers(0, 1 << w)) for n, w in zip(names, widths)}
        assert decode(encode(fields)).field_values == fields


def test_round_trip_raw_values():
    rng = np.random.default_rng(99)
    raws = [int(v) for v in rng.integers(0, 1 << 64, size=100_000, dtype=np.uint64)]
    raws += [0, (1 << 64) - 1, 1 << 32, (1 << 32) - 1]
    for raw in raws:
        d = decode(raw)
        assert encode(d.field_values) == raw


def test_anomalous_millisecond_flagged_not_rejected():
    raw = encode({"timestamp": 100, "millisecond": 1001})
    d = decode(raw)
    assert d.anomalous_ms
    assert d.millisecond == 1001


def test_encode_overflow():
    with pytest.raises(FieldOverflow):
        encode({"millisecond": 1024})
    with pytest.raises(FieldOverflow):
        encode({"machine": 256})


def test_encode_unknown_field():
    with pytest.raises(LayoutError):
        encode({"timestamp": 1, "worker": 3})


def test_create_time_known_id():
    assert create_time_from_id(KNOWN_ID) == pytest.approx(1709316007.000)


def test_create_time_direct_construction():
    raw = encode({"timestamp": 100, "millisecond": 500})
    assert create_time_from_id(raw) == pytest.approx(100.500)


def test_create_time_monotone_with_fixed_suffix():
    rng = np.random.default_rng(7)
    for _ in range(10_000):
        t1, t2 = sorted(int(v) for v in rng.integers(0, 1 << 32, size=2))
        ms1, ms2 = sorted(int(v) for v in rng.integers(0, 1000, size=2))
        suffix = int(rng.integers(0, 1 << 22))
        id1 = encode({"timestamp": t1, "millisecond": ms1}) | suffix
        id2 = encode({"timestamp": t2, "millisecond": ms2}) | suffix
        assert id1 <= id2
        assert create_time_from_id(id1) <= create_time_from_id(id2)


def test_toy_layout_round_trip():
    fields = {"timestamp": 123456789, "millisecond": 512, "payload": 16001}
    d = decode(encode(fields, TOY_LAYOUT), TOY_LAYOUT)
    assert d.field_values == fields
    assert d.suffix_pattern.width == 14
    assert d.suffix_pattern.bits == 16001


def test_layout_validation():
    with pytest.raises(LayoutError):
        IdLayout((("timestamp", 0, 32), ("millisecond", 33, 42), ("rest", 42, 64)))
    with pytest.raises(LayoutError):
        IdLayout((("timestamp", 0, 32), ("millisecond", 32, 42), ("rest", 42, 60)))
    with pytest.raises(LayoutError):
        IdLayout((("timestamp", 0, 40), ("other", 40, 64)))
    # millisecond as the last field leaves no suffix
    with pytest.raises(LayoutError):
        IdLayout((("timestamp", 0, 32), ("millisecond", 32, 64)))


def test_suffix_pattern_bounds():
    with pytest.raises(ValueError):
        SuffixPattern(bits=4, width=2)


def test_suffix_fields_default_layout():
    assert DEFAULT_LAYOUT.suffix_fields() == ("sequence", "entity_type", "machine")
