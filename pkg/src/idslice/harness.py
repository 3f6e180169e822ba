"""Drive candidate IDs through a pluggable fetcher with rate limiting,
retries, checkpointed JSONL persistence, and error-taxonomy classification.

A fetcher is any object with ``fetch(id) -> raw`` where raw is a
MetadataRecord (post exists and is visible), a raw status string, or a
list of raw status strings. Optional methods the harness will use when
present: ``fetch_many(ids)`` (bulk path), ``now()`` (result timestamps,
e.g. a simulator's virtual clock), and ``seek(n)`` (re-align a virtual
clock when resuming after n completed results). Transient failures should
raise TransportError; those are retried, taxonomy statuses never are.
"""

from __future__ import annotations

import csv
import json
import math
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence
from urllib import error as urlerror
from urllib import request as urlrequest

import numpy as np

from .idcodec import DEFAULT_LAYOUT, IdLayout, create_time_from_id

# Raw platform strings. The canonical taxonomy uses the same names, plus
# "item_not_exist" for the (excluded-from-error-tables) miss response and
# "other" for anything unrecognized.
RAW_NOT_EXIST = "item doesn't exist"

STATUS_OK = "ok"
STATUS_NOT_EXIST = "item_not_exist"
STATUS_OTHER = "other"

# Canonical collapse priority when a response carries several raw statuses.
ERROR_PRIORITY = (
    "status_deleted",
    "status_self_see",
    "status_audit_not_pass",
    "status_reviewing",
    "content_classification",
    "cross_border_violation",
    "copyright_geo_filter",
)

CANONICAL_STATUSES = (STATUS_OK, STATUS_NOT_EXIST) + ERROR_PRIORITY + (STATUS_OTHER,)

_RAW_TO_CANONICAL = {status: status for status in ERROR_PRIORITY}
_RAW_TO_CANONICAL[RAW_NOT_EXIST] = STATUS_NOT_EXIST

# Statuses that prove the post exists or once existed (the "hit" set).
EVER_EXISTED_STATUSES = frozenset((STATUS_OK,) + ERROR_PRIORITY)


class TransportError(Exception):
    """Transient transport failure; retried up to the policy's limit."""


class SinkFailure(Exception):
    """The result log could not be written; the run aborts resumably."""


class NoGroundTruth(ValueError):
    """Recall needs a ground-truth post set (simulator runs only)."""


@dataclass
class MetadataRecord:
    """Platform metadata for a visible post.

    ``create_time_metadata`` is the platform's public creation time, which
    for scheduled posts is later than the ID-embedded system time.
    """

    id: int
    create_time_metadata: int
    location_created: str | None = None
    view_count: int = 0
    like_count: int = 0
    share_count: int = 0
    comment_count: int = 0
    duration_seconds: float = 0.0
    aigc_flag: bool = False
    author_id: int = 0

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "create_time_metadata": self.create_time_metadata,
            "location_created": self.location_created,
            "view_count": self.view_count,
            "like_count": self.like_count,
            "share_count": self.share_count,
            "comment_count": self.comment_count,
            "duration_seconds": self.duration_seconds,
            "aigc_flag": self.aigc_flag,
            "author_id": self.author_id,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "MetadataRecord":
        return cls(
            id=int(data["id"]),
            create_time_metadata=int(data["create_time_metadata"]),
            location_created=data.get("location_created"),
            view_count=int(data.get("view_count", 0)),
            like_count=int(data.get("like_count", 0)),
            share_count=int(data.get("share_count", 0)),
            comment_count=int(data.get("comment_count", 0)),
            duration_seconds=float(data.get("duration_seconds", 0.0)),
            aigc_flag=bool(data.get("aigc_flag", False)),
            author_id=int(data.get("author_id", 0)),
        )


@dataclass
class FetchResult:
    """Outcome of probing one candidate ID."""

    id: int
    status: str
    fetched_at: float
    detail: str | None = None
    metadata: MetadataRecord | None = None

    @property
    def ever_existed(self) -> bool:
        return self.status in EVER_EXISTED_STATUSES


@dataclass
class FetchPolicy:
    max_in_flight: int = 8
    requests_per_second_cap: float = math.inf  # uncapped for in-process fetchers
    retry_limit: int = 3
    retry_backoff: float = 1.0  # base seconds; exponential, jittered
    seed: int = 0

    def __post_init__(self):
        if self.max_in_flight < 1 or self.requests_per_second_cap <= 0:
            raise ValueError("max_in_flight and requests_per_second_cap must be positive")
        if self.retry_limit < 0 or self.retry_backoff <= 0:
            raise ValueError("retry_limit must be >= 0 and retry_backoff positive")


def classify_error(raw_status: str) -> str:
    """Map one raw status string to its canonical taxonomy status.

    Exact-match only; unrecognized strings classify as ``other`` (callers
    keep the raw text as the result's detail).
    """
    return _RAW_TO_CANONICAL.get(raw_status, STATUS_OTHER)


def classify_statuses(raw_statuses: Sequence[str]) -> tuple[str, str | None]:
    """Collapse one or more raw statuses to (canonical, detail).

    Multiple raw statuses collapse to the first match in the fixed
    priority order; if none are recognized the result is ``other`` with
    the first raw string as detail.
    """
    recognized = {classify_error(raw) for raw in raw_statuses}
    if STATUS_NOT_EXIST in recognized and len(recognized) == 1:
        return STATUS_NOT_EXIST, None
    for status in ERROR_PRIORITY:
        if status in recognized:
            return status, None
    if STATUS_NOT_EXIST in recognized:
        return STATUS_NOT_EXIST, None
    first = raw_statuses[0] if raw_statuses else ""
    return STATUS_OTHER, first


class RateLimiter:
    """Token bucket: sustained rate `rate`, burst capacity `burst`.

    Large acquisitions are granted in bursts of at most `burst` tokens, so
    the measured rate never exceeds the cap by more than one burst. An
    infinite rate disables limiting entirely.
    """

    def __init__(self, rate: float, burst: int):
        self.rate = float(rate)
        self.burst = max(1, int(burst))
        self._tokens = float(self.burst)
        self._last = time.monotonic()

    def acquire(self, n: int = 1) -> None:
        if self.rate == math.inf:
            return
        remaining = n
        while remaining > 0:
            take = min(remaining, self.burst)
            while True:
                now = time.monotonic()
                self._tokens = min(
                    self.burst, self._tokens + (now - self._last) * self.rate
                )
                self._last = now
                if self._tokens >= take:
                    self._tokens -= take
                    break
                time.sleep(max((take - self._tokens) / self.rate, 1e-5))
            remaining -= take


class JsonlSink:
    """Append-only JSON Lines result log with deterministic checkpoint
    records every ``checkpoint_every`` results.

    On open, any partial trailing line (from a crash mid-write) is
    truncated away and the completed-result count is recovered, so a rerun
    continues exactly where the log ends. Checkpoint records land at fixed
    result counts regardless of where previous runs were interrupted,
    which keeps resumed logs byte-identical to uninterrupted ones.
    """

    def __init__(self, path: str | Path, checkpoint_every: int = 10_000):
        self.path = Path(path)
        self.checkpoint_every = int(checkpoint_every)
        self.n_results = 0
        self._last_checkpoint = 0
        self._recover()
        try:
            self._fh = open(self.path, "a", encoding="utf-8")
        except OSError as exc:
            raise SinkFailure(f"cannot open sink {self.path}: {exc}") from exc
        if self.n_results and self.n_results % self.checkpoint_every == 0 \
                and self._last_checkpoint != self.n_results:
            self._write_checkpoint()

    def _recover(self) -> None:
        if not self.path.exists():
            return
        keep = 0
        n_results = 0
        last_ckpt = 0
        with open(self.path, "rb") as fh:
            for line in fh:
                if not line.endswith(b"\n"):
                    break
                try:
                    record = json.loads(line)
                except ValueError:
                    break
                if record.get("type") == "checkpoint":
                    last_ckpt = int(record["done"])
                else:
                    n_results += 1
                keep += len(line)
        size = self.path.stat().st_size
        if keep < size:
            with open(self.path, "r+b") as fh:
                fh.truncate(keep)
        self.n_results = n_results
        self._last_checkpoint = last_ckpt

    def _write_checkpoint(self) -> None:
        self._fh.write(json.dumps({"type": "checkpoint", "done": self.n_results}) + "\n")
        self._last_checkpoint = self.n_results

    def append_lines(self, lines: list[str]) -> None:
        """Append pre-serialized result lines (no trailing newline each)."""
        try:
            for line in lines:
                self._fh.write(line + "\n")
                self.n_results += 1
                if self.n_results % self.checkpoint_every == 0:
                    self._write_checkpoint()
            self._fh.flush()
        except OSError as exc:
            raise SinkFailure(f"write to {self.path} failed: {exc}") from exc

    def append(self, result: FetchResult) -> None:
        self.append_lines([serialize_result(result)])

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "JsonlSink":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def serialize_result(result: FetchResult) -> str:
    record: dict = {"id": result.id, "status": result.status,
                    "fetched_at": result.fetched_at}
    if result.detail is not None:
        record["detail"] = result.detail
    if result.metadata is not None:
        record["metadata"] = result.metadata.to_dict()
    return json.dumps(record, separators=(",", ":"))


def iter_results(path: str | Path) -> Iterator[FetchResult]:
    """Stream FetchResults back out of a sink, skipping checkpoint records
    and any partial trailing line."""
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.endswith("\n"):
                break
            try:
                record = json.loads(line)
            except ValueError:
                break
            if record.get("type") == "checkpoint":
                continue
            metadata = record.get("metadata")
            yield FetchResult(
                id=int(record["id"]),
                status=record["status"],
                fetched_at=float(record["fetched_at"]),
                detail=record.get("detail"),
                metadata=MetadataRecord.from_dict(metadata) if metadata else None,
            )


@dataclass
class RunSummary:
    n_candidates: int
    status_counts: dict[str, int]
    hits: int
    hit_rate: float
    elapsed_seconds: float
    throughput: float
    resumed_from: int = 0


def _raw_to_status(raw) -> tuple[str, str | None, MetadataRecord | None]:
    if isinstance(raw, MetadataRecord):
        return STATUS_OK, None, raw
    if isinstance(raw, str):
        status = classify_error(raw)
        return status, raw if status == STATUS_OTHER else None, None
    if isinstance(raw, (list, tuple)):
        status, detail = classify_statuses(raw)
        return status, detail, None
    raise TypeError(f"fetcher returned unsupported response type {type(raw)!r}")


def _fetch_with_retries(fetcher, candidate: int, policy: FetchPolicy, rng) -> object:
    for attempt in range(policy.retry_limit + 1):
        try:
            return fetcher.fetch(candidate)
        except TransportError:
            if attempt == policy.retry_limit:
                return "transport"  # unrecognized -> classified as other
            delay = policy.retry_backoff * (2 ** attempt) * (0.5 + rng.random())
            time.sleep(delay)
    raise AssertionError("unreachable")


def _chunks(stream: Iterable[int], size: int) -> Iterator[list[int]]:
    chunk: list[int] = []
    for item in stream:
        chunk.append(item)
        if len(chunk) >= size:
            yield chunk
            chunk = []
    if chunk:
        yield chunk


def run_fetch(
    candidates: Iterable[int | np.ndarray],
    fetcher,
    policy: FetchPolicy,
    sink: JsonlSink,
    catalog=None,
    layout: IdLayout = DEFAULT_LAYOUT,
    chunk_size: int = 8192,
) -> RunSummary:
    """Probe every candidate exactly once, appending one FetchResult per
    candidate to the sink.

    ``candidates`` may be an iterable of ints or of uint64 blocks (the
    generator's fast path). If the sink already holds results from an
    interrupted run, that many candidates are skipped, so rerunning with
    the same deterministic candidate stream completes the log without
    duplicates. When ``catalog`` is given, per-pattern request/hit
    statistics are folded back into it.
    """
    rng = np.random.default_rng(policy.seed)
    limiter = RateLimiter(policy.requests_per_second_cap, policy.max_in_flight)
    resumed_from = sink.n_results
    if resumed_from and hasattr(fetcher, "seek"):
        fetcher.seek(resumed_from)

    flat = _flatten(candidates)
    if resumed_from:
        _drop(flat, resumed_from)

    suffix_mask = layout.suffix_mask
    status_counts: Counter[str] = Counter()
    pattern_requests: Counter[int] = Counter()
    pattern_hits: Counter[int] = Counter()
    has_many = hasattr(fetcher, "fetch_many")
    has_now = hasattr(fetcher, "now")
    executor = None
    if not has_many and policy.max_in_flight > 1:
        executor = ThreadPoolExecutor(max_workers=policy.max_in_flight)

    n_done = 0
    started = time.monotonic()
    try:
        for chunk in _chunks(flat, chunk_size):
            limiter.acquire(len(chunk))
            if has_many:
                raws = fetcher.fetch_many(chunk)
            elif executor is not None:
                raws = list(executor.map(
                    lambda c: _fetch_with_retries(fetcher, c, policy, rng), chunk
                ))
            else:
                raws = [_fetch_with_retries(fetcher, c, policy, rng) for c in chunk]

            lines: list[str] = []
            for candidate, raw in zip(chunk, raws):
                status, detail, metadata = _raw_to_status(raw)
                fetched_at = fetcher.now() if has_now else time.time()
                hit = status in EVER_EXISTED_STATUSES
                status_counts[status] += 1
                if catalog is not None:
                    pattern = candidate & suffix_mask
                    pattern_requests[pattern] += 1
                    if hit:
                        pattern_hits[pattern] += 1
                if detail is None and metadata is None:
                    lines.append(
                        f'{{"id":{candidate},"status":"{status}","fetched_at":{fetched_at!r}}}'
                    )
                else:
                    lines.append(serialize_result(FetchResult(
                        id=candidate, status=status, fetched_at=fetched_at,
                        detail=detail, metadata=metadata,
                    )))
            sink.append_lines(lines)
            n_done += len(chunk)
    finally:
        if executor is not None:
            executor.shutdown(wait=False)
        if catalog is not None:
            for pattern, count in pattern_requests.items():
                catalog.requests[pattern] = catalog.requests.get(pattern, 0) + count
            for pattern, count in pattern_hits.items():
                catalog.hits[pattern] = catalog.hits.get(pattern, 0) + count

    elapsed = time.monotonic() - started
    hits = sum(count for status, count in status_counts.items()
               if status in EVER_EXISTED_STATUSES)
    return RunSummary(
        n_candidates=n_done,
        status_counts=dict(status_counts),
        hits=hits,
        hit_rate=hits / n_done if n_done else 0.0,
        elapsed_seconds=elapsed,
        throughput=n_done / elapsed if elapsed > 0 else float("inf"),
        resumed_from=resumed_from,
    )


def _flatten(candidates: Iterable) -> Iterator[int]:
    for item in candidates:
        if isinstance(item, np.ndarray):
            yield from (int(v) for v in item)
        else:
            yield int(item)


def _drop(stream: Iterator[int], n: int) -> None:
    for _ in range(n):
        next(stream, None)


@dataclass
class ErrorSummary:
    """Per-status counts with percentages out of all posts that at some
    point existed (ok plus every error status except item_not_exist)."""

    rows: list[tuple[str, int, float]]  # (status, count, pct) sorted by count desc
    ever_existing: int

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["status", "count", "pct"])
            for status, count, pct in self.rows:
                writer.writerow([status, count, f"{pct:.2f}"])

    def pct(self, status: str) -> float:
        for row_status, _, pct in self.rows:
            if row_status == status:
                return pct
        return 0.0


def summarize_errors(results: Iterable[FetchResult] | str | Path) -> ErrorSummary:
    """Tabulate error statuses as counts and percentages of ever-existing
    posts (the denominator excludes only item_not_exist misses)."""
    if isinstance(results, (str, Path)):
        results = iter_results(results)
    counts: Counter[str] = Counter()
    for result in results:
        counts[result.status] += 1
    ever = sum(count for status, count in counts.items() if status != STATUS_NOT_EXIST)
    rows = [
        (status, count, 100.0 * count / ever if ever else 0.0)
        for status, count in counts.items()
        if status not in (STATUS_OK, STATUS_NOT_EXIST)
    ]
    rows.sort(key=lambda row: (-row[1], row[0]))
    return ErrorSummary(rows=rows, ever_existing=ever)


def compute_recall(
    results: Iterable[FetchResult] | str | Path,
    ground_truth_ids: Iterable[int],
    time_range=None,
    layout: IdLayout = DEFAULT_LAYOUT,
) -> float:
    """Share of ground-truth posts in the enumerated range that the run
    found (as ok or as a taxonomized error status)."""
    truth = {int(i) for i in ground_truth_ids}
    if not truth:
        raise NoGroundTruth("ground-truth post set is empty")
    if time_range is not None:
        truth = {i for i in truth if time_range.contains(create_time_from_id(i, layout))}
        if not truth:
            raise NoGroundTruth("no ground-truth posts within the enumerated range")
    if isinstance(results, (str, Path)):
        results = iter_results(results)
    found = {r.id for r in results if r.ever_existed}
    return len(found & truth) / len(truth)


class HttpFetcher:
    """Generic URL-template probe: substitutes ``{id}`` into the template,
    follows redirects, and extracts a raw status by scanning the response
    body for configured marker strings.

    No platform-specific defaults are bundled; markers and the template
    come from configuration.
    """

    def __init__(
        self,
        url_template: str,
        status_markers: Sequence[str] = (RAW_NOT_EXIST,) + ERROR_PRIORITY,
        ok_marker: str | None = None,
        timeout: float = 10.0,
        opener=None,
    ):
        if "{id}" not in url_template:
            raise ValueError("url_template must contain an {id} placeholder")
        self.url_template = url_template
        self.status_markers = tuple(status_markers)
        self.ok_marker = ok_marker
        self.timeout = timeout
        self._opener = opener or urlrequest.build_opener()  # follows redirects

    def fetch(self, candidate: int):
        url = self.url_template.format(id=candidate)
        try:
            with self._opener.open(url, timeout=self.timeout) as response:
                body = response.read().decode("utf-8", errors="replace")
        except urlerror.HTTPError as exc:
            if exc.code >= 500:
                raise TransportError(f"HTTP {exc.code}") from exc
            body = exc.read().decode("utf-8", errors="replace") if exc.fp else ""
        except (urlerror.URLError, TimeoutError, OSError) as exc:
            raise TransportError(str(exc)) from exc
        found = [marker for marker in self.status_markers if marker in body]
        if found:
            return found
        if self.ok_marker is not None and self.ok_marker in body:
            return MetadataRecord(id=candidate, create_time_metadata=0)
        return RAW_NOT_EXIST
