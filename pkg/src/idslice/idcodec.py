"""Bit-exact packing and unpacking of 64-bit IDs under a configurable field layout.

IDs are treated as 64-bit unsigned integers split into named bit spans.
Bit 0 is the most significant bit, so the timestamp occupies the "first"
bits of the integer. The span after the millisecond field (the suffix)
is what enumeration and coverage estimation treat as the ID's "type".
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

ID_BITS = 64

# Millisecond values at or above this are anomalous but still decodable.
MS_ANOMALY_THRESHOLD = 1000


class LayoutError(ValueError):
    """Layout fields do not tile [0, 64) or miss a designated field."""


class FieldOverflow(ValueError):
    """A field value does not fit in its bit span."""


@dataclass(frozen=True)
class SuffixPattern:
    """The non-time bits of an ID, treated as a categorical type."""

    bits: int
    width: int

    def __post_init__(self):
        if not 0 < self.width <= ID_BITS:
            raise ValueError(f"suffix width {self.width} out of range")
        if not 0 <= self.bits < (1 << self.width):
            raise ValueError(f"suffix bits {self.bits} exceed width {self.width}")


@dataclass(frozen=True)
class IdLayout:
    """Ordered bitfield map of a 64-bit ID.

    ``fields`` is a tuple of (name, start_bit, end_bit_exclusive) spans that
    must be disjoint, contiguous, and tile [0, 64) exactly. A ``timestamp``
    and a ``millisecond`` field are required; the suffix is every bit after
    the millisecond field.
    """

    fields: tuple[tuple[str, int, int], ...]
    _spans: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        spans: dict[str, tuple[int, int]] = {}
        cursor = 0
        for name, start, end in self.fields:
            if name in spans:
                raise LayoutError(f"duplicate field {name!r}")
            if start != cursor:
                raise LayoutError(f"field {name!r} starts at {start}, expected {cursor}")
            if end <= start:
                raise LayoutError(f"field {name!r} has empty span [{start},{end})")
            spans[name] = (start, end)
            cursor = end
        if cursor != ID_BITS:
            raise LayoutError(f"fields tile [0,{cursor}) instead of [0,{ID_BITS})")
        for required in ("timestamp", "millisecond"):
            if required not in spans:
                raise LayoutError(f"layout missing designated field {required!r}")
        ms_end = spans["millisecond"][1]
        if ms_end >= ID_BITS:
            raise LayoutError("millisecond field leaves no suffix bits")
        object.__setattr__(self, "_spans", spans)

    @property
    def field_names(self) -> tuple[str, ...]:
        return tuple(name for name, _, _ in self.fields)

    def span(self, name: str) -> tuple[int, int]:
        try:
            return self._spans[name]
        except KeyError:
            raise LayoutError(f"unknown field {name!r}") from None

    def width(self, name: str) -> int:
        start, end = self.span(name)
        return end - start

    def shift(self, name: str) -> int:
        """Right-shift that moves the field's span to the low bits."""
        return ID_BITS - self.span(name)[1]

    def mask(self, name: str) -> int:
        return (1 << self.width(name)) - 1

    def extract(self, raw: int, name: str) -> int:
        return (raw >> self.shift(name)) & self.mask(name)

    @property
    def suffix_start(self) -> int:
        return self._spans["millisecond"][1]

    @property
    def suffix_width(self) -> int:
        return ID_BITS - self.suffix_start

    @property
    def suffix_mask(self) -> int:
        return (1 << self.suffix_width) - 1

    def suffix_bits(self, raw: int) -> int:
        return raw & self.suffix_mask

    def suffix_of(self, raw: int) -> SuffixPattern:
        return SuffixPattern(bits=raw & self.suffix_mask, width=self.suffix_width)

    def suffix_fields(self) -> tuple[str, ...]:
        """Names of the fields that lie entirely inside the suffix span."""
        return tuple(
            name for name, (start, end) in self._spans.items() if start >= self.suffix_start
        )

    def to_dict(self) -> dict:
        return {"fields": [{"name": n, "start": s, "end": e} for n, s, e in self.fields]}

    @classmethod
    def from_dict(cls, data: Mapping) -> "IdLayout":
        fields = tuple(
            (str(f["name"]), int(f["start"]), int(f["end"])) for f in data["fields"]
        )
        return cls(fields)


DEFAULT_LAYOUT = IdLayout(
    (
        ("timestamp", 0, 32),
        ("millisecond", 32, 42),
        ("sequence", 42, 52),
        ("entity_type", 52, 56),
        ("machine", 56, 64),
    )
)


@dataclass(frozen=True)
class DecodedId:
    """One ID split into its layout fields.

    ``anomalous_ms`` marks millisecond values in [1000, 1024), which occur
    in the wild at tiny rates and are reported rather than rejected.
    """

    raw: int
    epoch_seconds: int
    millisecond: int
    field_values: dict[str, int]
    suffix_pattern: SuffixPattern
    anomalous_ms: bool

    def create_time(self) -> float:
        return self.epoch_seconds + self.millisecond / 1000.0


def decode(raw: int, layout: IdLayout = DEFAULT_LAYOUT) -> DecodedId:
    """Split a 64-bit ID into its fields. Total over all 64-bit inputs."""
    if not 0 <= raw < (1 << ID_BITS):
        raise ValueError(f"id {raw} is not a 64-bit unsigned integer")
    values = {name: layout.extract(raw, name) for name in layout.field_names}
    ms = values["millisecond"]
    return DecodedId(
        raw=raw,
        epoch_seconds=values["timestamp"],
        millisecond=ms,
        field_values=values,
        suffix_pattern=layout.suffix_of(raw),
        anomalous_ms=ms >= MS_ANOMALY_THRESHOLD,
    )


def encode(values: Mapping[str, int], layout: IdLayout = DEFAULT_LAYOUT) -> int:
    """Pack field values into a 64-bit ID. Fields not supplied default to 0.

    Raises FieldOverflow when a value exceeds its span, and LayoutError for
    names not present in the layout.
    """
    for name in values:
        layout.span(name)
    raw = 0
    for name in layout.field_names:
        value = int(values.get(name, 0))
        if not 0 <= value <= layout.mask(name):
            raise FieldOverflow(
                f"{name}={value} does not fit in {layout.width(name)} bits"
            )
        raw |= value << layout.shift(name)
    return raw


def create_time_from_id(raw: int, layout: IdLayout = DEFAULT_LAYOUT) -> float:
    """Creation time embedded in the ID, at millisecond resolution.

    This is the system creation time, so it is available even for posts
    that were later deleted or hidden; all volume bucketing uses it.
    """
    seconds = layout.extract(raw, "timestamp")
    ms = layout.extract(raw, "millisecond")
    return seconds + ms / 1000.0
