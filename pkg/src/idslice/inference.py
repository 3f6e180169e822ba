"""Learn the structure of an ID corpus: suffix pattern catalog, per-bit
predictability, field histograms, Good-Turing coverage, and regional
machine-ID divergence."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .idcodec import DEFAULT_LAYOUT, ID_BITS, MS_ANOMALY_THRESHOLD, IdLayout, LayoutError


class UnknownField(ValueError):
    """Field name absent from the layout (or outside the suffix span)."""


class EmptyCorpus(ValueError):
    """A corpus must contain at least one record."""


LOW_SAMPLE_THRESHOLD = 1000


class IdCorpus:
    """Observed IDs with optional free-text labels (e.g. country or
    collection method) and entity kinds. IDs need not be unique."""

    def __init__(
        self,
        ids: Iterable[int],
        labels: Sequence[str | None] | None = None,
        entity_kinds: Sequence[str | None] | None = None,
    ):
        self.ids = np.asarray(list(ids) if not isinstance(ids, np.ndarray) else ids,
                              dtype=np.uint64)
        if self.ids.size == 0:
            raise EmptyCorpus("corpus must contain at least one ID")
        self.labels = list(labels) if labels is not None else [None] * self.ids.size
        self.entity_kinds = (
            list(entity_kinds) if entity_kinds is not None else [None] * self.ids.size
        )
        if len(self.labels) != self.ids.size or len(self.entity_kinds) != self.ids.size:
            raise ValueError("labels/entity_kinds length must match ids")

    def __len__(self) -> int:
        return int(self.ids.size)

    @classmethod
    def from_csv(cls, path: str | Path) -> "IdCorpus":
        """Load from a CSV with header ``id,label,entity_kind`` (label and
        entity_kind columns optional)."""
        ids: list[int] = []
        labels: list[str | None] = []
        kinds: list[str | None] = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or "id" not in reader.fieldnames:
                raise ValueError(f"{path}: corpus CSV requires a header with an 'id' column")
            for row in reader:
                ids.append(int(row["id"]))
                labels.append(row.get("label") or None)
                kinds.append(row.get("entity_kind") or None)
        return cls(ids, labels, kinds)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "label", "entity_kind"])
            for raw, label, kind in zip(self.ids, self.labels, self.entity_kinds):
                writer.writerow([int(raw), label or "", kind or ""])


class PatternCatalog:
    """Suffix patterns with occurrence counts, plus optional per-pattern
    fetch statistics (requests made, hits seen) folded back in by the
    harness after a run."""

    def __init__(self, width: int, counts: Mapping[int, int] | None = None):
        self.width = int(width)
        self.counts: dict[int, int] = dict(counts) if counts else {}
        self.requests: dict[int, int] = {}
        self.hits: dict[int, int] = {}
        for bits, count in self.counts.items():
            self._check_pattern(bits)
            if count < 1:
                raise ValueError(f"pattern {bits} has non-positive count {count}")

    def _check_pattern(self, bits: int) -> None:
        if not 0 <= bits < (1 << self.width):
            raise ValueError(f"pattern {bits} exceeds suffix width {self.width}")

    @property
    def total_observations(self) -> int:
        return sum(self.counts.values())

    def __len__(self) -> int:
        return len(self.counts)

    def __contains__(self, bits: int) -> bool:
        return bits in self.counts

    def patterns(self) -> list[int]:
        """Pattern values in canonical (ascending) order."""
        return sorted(self.counts)

    def add(self, bits: int, count: int = 1) -> None:
        self._check_pattern(bits)
        self.counts[bits] = self.counts.get(bits, 0) + count

    def record_request(self, bits: int, hit: bool) -> None:
        """Fold one probe outcome into the per-pattern fetch statistics."""
        self.requests[bits] = self.requests.get(bits, 0) + 1
        if hit:
            self.hits[bits] = self.hits.get(bits, 0) + 1

    @property
    def has_hit_stats(self) -> bool:
        return bool(self.requests)

    def hit_rate(self, bits: int) -> float:
        requests = self.requests.get(bits, 0)
        if requests == 0:
            return 0.0
        return self.hits.get(bits, 0) / requests

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["pattern_bits", "width", "count", "requests", "hits"])
            for bits in self.patterns():
                req = self.requests.get(bits, "")
                hit = self.hits.get(bits, 0) if bits in self.requests else ""
                writer.writerow([bits, self.width, self.counts[bits], req, hit])

    @classmethod
    def from_csv(cls, path: str | Path) -> "PatternCatalog":
        counts: dict[int, int] = {}
        requests: dict[int, int] = {}
        hits: dict[int, int] = {}
        width = None
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                bits = int(row["pattern_bits"])
                width = int(row["width"])
                counts[bits] = int(row["count"])
                if row.get("requests"):
                    requests[bits] = int(row["requests"])
                    hits[bits] = int(row.get("hits") or 0)
        if width is None:
            raise ValueError(f"{path}: empty catalog file")
        catalog = cls(width, counts)
        catalog.requests = requests
        catalog.hits = hits
        return catalog


@dataclass(frozen=True)
class CoverageEstimate:
    """Good-Turing coverage: 1 minus the missing mass N1/N."""

    coverage: float
    p_unseen: float
    n_singletons: int
    n_total: int
    upper_bound: bool = False


@dataclass
class FieldHistogram:
    field_name: str
    counts: dict[int, int]
    anomaly_fraction: float

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["value", "count"])
            for value in sorted(self.counts):
                writer.writerow([value, self.counts[value]])


@dataclass
class TrainingParams:
    """Defaults for the per-bit logistic regressions. The exact protocol
    (no regularization, 0.5 threshold, seeded holdout evaluation) is a
    documented choice, not a reconstruction."""

    learning_rate: float = 0.1
    n_iterations: int = 500
    seed: int = 0
    holdout_fraction: float = 0.3


@dataclass
class BitPredictability:
    """Per-bit predictability scores for the non-timestamp bits.

    ``scores[bit]`` is balanced accuracy rescaled against the constant
    (majority-class) predictor's 0.5 baseline, clamped to [0, 1]; None for
    degenerate (constant) bits. ``coefficient_magnitudes[bit]`` maps each
    predictor bit to the absolute fitted weight."""

    scores: dict[int, float | None]
    coefficient_magnitudes: dict[int, dict[int, float]]
    degenerate_bits: set[int]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bit", "score", "degenerate"])
            for bit in sorted(self.scores):
                score = self.scores[bit]
                writer.writerow([bit, "" if score is None else f"{score:.6f}",
                                 int(bit in self.degenerate_bits)])


def build_catalog(corpus: IdCorpus, layout: IdLayout = DEFAULT_LAYOUT) -> PatternCatalog:
    """Count every distinct suffix pattern in the corpus."""
    suffixes = corpus.ids & np.uint64(layout.suffix_mask)
    values, counts = np.unique(suffixes, return_counts=True)
    return PatternCatalog(
        layout.suffix_width,
        {int(v): int(c) for v, c in zip(values, counts)},
    )


def good_turing_coverage(catalog: PatternCatalog) -> CoverageEstimate:
    """Missing-mass Good-Turing estimate from a pattern catalog.

    p_unseen = N1/N where N1 is the number of patterns observed exactly
    once and N the total observations; coverage = 1 - p_unseen. When there
    are no singletons the estimate degenerates to coverage 1.0 and is
    flagged as an upper bound.
    """
    n_total = catalog.total_observations
    if n_total < 1:
        raise ValueError("catalog has no observations")
    n_singletons = sum(1 for c in catalog.counts.values() if c == 1)
    p_unseen = n_singletons / n_total
    return CoverageEstimate(
        coverage=1.0 - p_unseen,
        p_unseen=p_unseen,
        n_singletons=n_singletons,
        n_total=n_total,
        upper_bound=n_singletons == 0,
    )


def per_label_coverage(
    corpus: IdCorpus, layout: IdLayout = DEFAULT_LAYOUT
) -> dict[str, CoverageEstimate]:
    """Coverage per corpus label plus the pooled estimate under ``"all"``.

    Whether per-region coverage should pool suffix types globally is
    ambiguous; both views are reported.
    """
    out: dict[str, CoverageEstimate] = {}
    labels = np.array([label or "" for label in corpus.labels])
    for label in sorted(set(labels)):
        if not label:
            continue
        sub = IdCorpus(corpus.ids[labels == label])
        out[label] = good_turing_coverage(build_catalog(sub, layout))
    out["all"] = good_turing_coverage(build_catalog(corpus, layout))
    return out


def fetch_overlap(
    corpus: IdCorpus, catalog: PatternCatalog, layout: IdLayout = DEFAULT_LAYOUT
) -> float:
    """Fraction of corpus IDs whose suffix pattern is already catalogued."""
    suffixes = corpus.ids & np.uint64(layout.suffix_mask)
    if not catalog.counts:
        return 0.0
    known = np.array(sorted(catalog.counts), dtype=np.uint64)
    covered = np.isin(suffixes, known)
    return float(covered.mean())


def field_histogram(
    corpus: IdCorpus, layout: IdLayout, field_name: str
) -> FieldHistogram:
    """Exact value counts for one layout field across the corpus."""
    try:
        shift = layout.shift(field_name)
        mask = layout.mask(field_name)
    except LayoutError as exc:
        raise UnknownField(str(exc)) from None
    values = (corpus.ids >> np.uint64(shift)) & np.uint64(mask)
    uniq, counts = np.unique(values, return_counts=True)
    anomaly = 0.0
    if field_name == "millisecond":
        anomaly = float((values >= MS_ANOMALY_THRESHOLD).mean())
    return FieldHistogram(
        field_name=field_name,
        counts={int(v): int(c) for v, c in zip(uniq, counts)},
        anomaly_fraction=anomaly,
    )


def _bit_matrix(ids: np.ndarray, bits: Sequence[int]) -> np.ndarray:
    """Extract the given bit positions (MSB-first indexing) as a 0/1 matrix."""
    shifts = np.array([ID_BITS - 1 - b for b in bits], dtype=np.uint64)
    return ((ids[:, None] >> shifts[None, :]) & np.uint64(1)).astype(np.float64)


def bit_predictability(
    corpus: IdCorpus,
    layout: IdLayout = DEFAULT_LAYOUT,
    params: TrainingParams | None = None,
) -> BitPredictability:
    """Fit one logistic regressor per non-timestamp bit, predicting that bit
    from all the other non-timestamp bits, and score how predictable it is.

    Inputs are +/-1 coded; training is full-batch gradient descent on
    binary cross-entropy with seeded initialization. High scores flag bits
    that carry structure (machine/sequence values); millisecond bits come
    out near zero.
    """
    params = params or TrainingParams()
    if len(corpus) < LOW_SAMPLE_THRESHOLD:
        warnings.warn(
            f"bit_predictability fitted on only {len(corpus)} IDs "
            f"(< {LOW_SAMPLE_THRESHOLD}); scores may be unstable",
            stacklevel=2,
        )
    ts_start, ts_end = layout.span("timestamp")
    bits = [b for b in range(ID_BITS) if not ts_start <= b < ts_end]
    Y = _bit_matrix(corpus.ids, bits)  # n x B in {0,1}
    X = 2.0 * Y - 1.0  # +/-1 coded inputs
    n, B = Y.shape

    degenerate = {bits[j] for j in range(B) if Y[:, j].min() == Y[:, j].max()}

    rng = np.random.default_rng(params.seed)
    order = rng.permutation(n)
    n_test = max(1, int(round(n * params.holdout_fraction))) if n > 1 else 0
    train, test = order[n_test:], order[:n_test]
    if train.size == 0:
        train = order
    X_tr, Y_tr = X[train], Y[train]

    W = rng.normal(0.0, 0.01, size=(B, B))
    np.fill_diagonal(W, 0.0)  # a bit never predicts itself
    b_vec = np.zeros(B)

    for _ in range(params.n_iterations):
        Z = X_tr @ W + b_vec
        P = 1.0 / (1.0 + np.exp(-Z))
        err = P - Y_tr
        G = X_tr.T @ err / train.size
        np.fill_diagonal(G, 0.0)
        W -= params.learning_rate * G
        b_vec -= params.learning_rate * err.mean(axis=0)

    pred = (X @ W + b_vec) >= 0.0
    scores: dict[int, float | None] = {}
    coeffs: dict[int, dict[int, float]] = {}
    for j, bit in enumerate(bits):
        coeffs[bit] = {
            bits[i]: float(abs(W[i, j])) for i in range(B) if i != j
        }
        if bit in degenerate:
            scores[bit] = None
            continue
        # Score on the holdout; fall back to the full corpus if the split
        # left the holdout single-class.
        eval_rows = test if test.size and 0 < Y[test, j].sum() < test.size else order
        pos = Y[eval_rows, j] == 1
        tpr = float(pred[eval_rows][pos, j].mean())
        tnr = float((~pred[eval_rows][~pos, j]).mean())
        balanced = (tpr + tnr) / 2.0
        # A constant predictor scores balanced accuracy 0.5; rescale so
        # chance maps to 0 and perfection to 1.
        scores[bit] = float(np.clip((balanced - 0.5) / 0.5, 0.0, 1.0))
    return BitPredictability(scores=scores, coefficient_magnitudes=coeffs,
                             degenerate_bits=degenerate)


def _marginal_distribution(
    catalog: PatternCatalog, layout: IdLayout, field_name: str
) -> dict[int, float]:
    if field_name not in layout.field_names:
        raise UnknownField(f"unknown field {field_name!r}")
    start, end = layout.span(field_name)
    if start < layout.suffix_start:
        raise UnknownField(
            f"field {field_name!r} is not inside the suffix span; catalog "
            "patterns only carry suffix bits"
        )
    local_shift = ID_BITS - end  # suffix patterns keep absolute low-bit positions
    mask = layout.mask(field_name)
    totals: dict[int, float] = {}
    for bits, count in catalog.counts.items():
        value = (bits >> local_shift) & mask
        totals[value] = totals.get(value, 0.0) + count
    n = sum(totals.values())
    return {value: weight / n for value, weight in totals.items()}


def region_divergence(
    catalog_a: PatternCatalog,
    catalog_b: PatternCatalog,
    layout: IdLayout = DEFAULT_LAYOUT,
    field_name: str = "machine",
) -> float:
    """Total-variation distance between two catalogs' marginal distributions
    over one suffix field. Large values flag region-specific machine IDs."""
    if not catalog_a.counts or not catalog_b.counts:
        raise ValueError("both catalogs must be non-empty")
    pa = _marginal_distribution(catalog_a, layout, field_name)
    pb = _marginal_distribution(catalog_b, layout, field_name)
    support = set(pa) | set(pb)
    return 0.5 * sum(abs(pa.get(v, 0.0) - pb.get(v, 0.0)) for v in support)
