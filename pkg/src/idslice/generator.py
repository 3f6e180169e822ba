"""Exhaustive candidate-ID enumeration for a time window, with checkpoint
arithmetic, plus the hit-rate/completeness trade-off of restricting to the
most productive suffix patterns."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .idcodec import DEFAULT_LAYOUT, IdLayout
from .inference import PatternCatalog


class EmptyCatalog(ValueError):
    """Enumeration needs at least one suffix pattern."""


class NoHitStats(ValueError):
    """Pattern selection needs per-pattern request/hit statistics."""


@dataclass(frozen=True)
class TimeRange:
    """Half-open range of epoch seconds; candidates are emitted for every
    millisecond step (``millisecond_stride``) within it."""

    start_epoch_seconds: int
    end_epoch_seconds: int
    millisecond_stride: int = 1

    def __post_init__(self):
        if self.start_epoch_seconds >= self.end_epoch_seconds:
            raise ValueError("time range must satisfy start < end")
        if self.millisecond_stride < 1:
            raise ValueError("millisecond_stride must be >= 1")

    @property
    def n_seconds(self) -> int:
        return self.end_epoch_seconds - self.start_epoch_seconds

    @property
    def ms_steps_per_second(self) -> int:
        return math.ceil(1000 / self.millisecond_stride)

    def contains(self, create_time: float) -> bool:
        return self.start_epoch_seconds <= create_time < self.end_epoch_seconds


@dataclass(frozen=True)
class Checkpoint:
    """Position of the next candidate to emit."""

    second: int
    millisecond: int
    pattern_index: int

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps({
            "second": self.second,
            "millisecond": self.millisecond,
            "pattern_index": self.pattern_index,
        }))

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        data = json.loads(Path(path).read_text())
        return cls(int(data["second"]), int(data["millisecond"]),
                   int(data["pattern_index"]))


def candidate_count(time_range: TimeRange, catalog: PatternCatalog) -> int:
    """Exact number of candidates: seconds x ceil(1000/stride) x patterns."""
    return time_range.n_seconds * time_range.ms_steps_per_second * len(catalog)


def checkpoint_from_index(
    time_range: TimeRange, catalog: PatternCatalog, index: int
) -> Checkpoint:
    """Map a completed-candidate count to the (second, ms, pattern) of the
    next candidate. Lets a consumer resume from a bare result count."""
    n_patterns = len(catalog)
    per_second = time_range.ms_steps_per_second * n_patterns
    second = time_range.start_epoch_seconds + index // per_second
    rem = index % per_second
    ms_step, pattern_index = divmod(rem, n_patterns)
    return Checkpoint(second, ms_step * time_range.millisecond_stride, pattern_index)


def index_from_checkpoint(
    time_range: TimeRange, catalog: PatternCatalog, checkpoint: Checkpoint
) -> int:
    n_patterns = len(catalog)
    per_second = time_range.ms_steps_per_second * n_patterns
    seconds_done = checkpoint.second - time_range.start_epoch_seconds
    ms_step = checkpoint.millisecond // time_range.millisecond_stride
    return seconds_done * per_second + ms_step * n_patterns + checkpoint.pattern_index


def enumerate_candidates(
    time_range: TimeRange,
    catalog: PatternCatalog,
    layout: IdLayout = DEFAULT_LAYOUT,
    skip: int = 0,
) -> Iterator[int]:
    """Stream every candidate ID for the range in (time, pattern-ascending)
    order with bounded memory. ``skip`` drops the first N candidates, so a
    consumer that knows how many results it already has can resume and see
    the identical remaining sequence.
    """
    if len(catalog) == 0:
        raise EmptyCatalog("cannot enumerate from an empty catalog")
    patterns = catalog.patterns()
    ts_shift = layout.shift("timestamp")
    ms_shift = layout.shift("millisecond")
    ts_cap = 1 << layout.width("timestamp")
    if time_range.end_epoch_seconds > ts_cap:
        raise ValueError("range end exceeds the timestamp field capacity")
    stride = time_range.millisecond_stride

    start = checkpoint_from_index(time_range, catalog, skip) if skip else None
    first_second = start.second if start else time_range.start_epoch_seconds
    for second in range(first_second, time_range.end_epoch_seconds):
        second_base = second << ts_shift
        first_ms = start.millisecond if start and second == start.second else 0
        for ms in range(first_ms, 1000, stride):
            base = second_base | (ms << ms_shift)
            if start and second == start.second and ms == start.millisecond:
                tail = patterns[start.pattern_index:]
            else:
                tail = patterns
            for bits in tail:
                yield base | bits


def enumerate_candidate_blocks(
    time_range: TimeRange,
    catalog: PatternCatalog,
    layout: IdLayout = DEFAULT_LAYOUT,
    skip: int = 0,
) -> Iterator[np.ndarray]:
    """Like enumerate_candidates but yields one uint64 array per second
    (the fast path for bulk fetching). Order matches the scalar stream."""
    if len(catalog) == 0:
        raise EmptyCatalog("cannot enumerate from an empty catalog")
    patterns = np.array(catalog.patterns(), dtype=np.uint64)
    ts_shift = np.uint64(layout.shift("timestamp"))
    ms_shift = np.uint64(layout.shift("millisecond"))
    ms_values = np.arange(0, 1000, time_range.millisecond_stride, dtype=np.uint64)

    total = candidate_count(time_range, catalog)
    if skip >= total:
        return
    start = checkpoint_from_index(time_range, catalog, skip)
    for second in range(start.second, time_range.end_epoch_seconds):
        block = (
            (np.uint64(second) << ts_shift)
            | (ms_values[:, None] << ms_shift)
            | patterns[None, :]
        ).ravel()
        if second == start.second:
            offset = skip - index_from_checkpoint(
                time_range, catalog, Checkpoint(second, 0, 0)
            )
            if offset:
                block = block[offset:]
        yield block


@dataclass(frozen=True)
class CurvePoint:
    patterns_used: int
    request_success_rate: float
    capture_fraction: float


@dataclass
class HitRateCurve:
    """Cumulative success rate vs capture over pattern-list prefixes,
    patterns ordered by descending per-pattern hit rate."""

    points: list[CurvePoint]

    def to_csv(self, path: str | Path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["patterns_used", "request_success_rate", "capture_fraction"])
            for p in self.points:
                writer.writerow([p.patterns_used, f"{p.request_success_rate:.6f}",
                                 f"{p.capture_fraction:.6f}"])


@dataclass
class PatternSelection:
    patterns: list[int]
    expected_success_rate: float
    expected_capture: float


def _ranked_patterns(catalog: PatternCatalog) -> list[int]:
    if not catalog.has_hit_stats:
        raise NoHitStats("catalog carries no per-pattern request statistics")
    missing = [bits for bits in catalog.counts if catalog.requests.get(bits, 0) < 1]
    if missing:
        raise NoHitStats(
            f"{len(missing)} catalog patterns have no recorded requests"
        )
    return sorted(catalog.counts, key=lambda bits: (-catalog.hit_rate(bits), bits))


def select_patterns(catalog: PatternCatalog, target_capture: float) -> PatternSelection:
    """Greedily take patterns in descending hit-rate order until the chosen
    subset accounts for ``target_capture`` of all observed hits."""
    if not 0 < target_capture <= 1:
        raise ValueError("target_capture must be in (0, 1]")
    ranked = _ranked_patterns(catalog)
    total_hits = sum(catalog.hits.get(b, 0) for b in ranked)
    if total_hits == 0:
        raise NoHitStats("no hits recorded; capture fraction undefined")
    chosen: list[int] = []
    cum_hits = 0
    cum_requests = 0
    for bits in ranked:
        chosen.append(bits)
        cum_hits += catalog.hits.get(bits, 0)
        cum_requests += catalog.requests[bits]
        if cum_hits / total_hits >= target_capture:
            break
    return PatternSelection(
        patterns=chosen,
        expected_success_rate=cum_hits / cum_requests,
        expected_capture=cum_hits / total_hits,
    )


def hit_rate_curve(catalog: PatternCatalog) -> HitRateCurve:
    """One point per prefix of the hit-rate-ranked pattern list."""
    ranked = _ranked_patterns(catalog)
    total_hits = sum(catalog.hits.get(b, 0) for b in ranked)
    if total_hits == 0:
        raise NoHitStats("no hits recorded; capture fraction undefined")
    points = []
    cum_hits = 0
    cum_requests = 0
    for k, bits in enumerate(ranked, start=1):
        cum_hits += catalog.hits.get(bits, 0)
        cum_requests += catalog.requests[bits]
        points.append(CurvePoint(
            patterns_used=k,
            request_success_rate=cum_hits / cum_requests,
            capture_fraction=cum_hits / total_hits,
        ))
    return HitRateCurve(points)
