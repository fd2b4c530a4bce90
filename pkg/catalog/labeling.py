"""Hourly timelines, 24-hour maximum-flux labels and tri-monthly partitions."""
import bisect
import logging
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Callable, Dict, Iterable, List, Mapping, Optional

from flarecast.exceptions import DataError

from .goes import M_THRESHOLD
from .models import FlareEvent, LabeledSample

logger = logging.getLogger(__name__)

FL = LabeledSample.FL
NF = LabeledSample.NF
LABELS = (FL, NF)
PREDICTION_WINDOW = timedelta(hours=24)
CADENCE = timedelta(hours=1)
PARTITIONS = (1, 2, 3, 4)


@dataclass(frozen=True)
class WindowLabel:
    label: str
    event: Optional[FlareEvent] = None
    tie: bool = False


class EventIndex:
    """Events sorted by peak time, with window lookup by bisection."""

    def __init__(self, events: Iterable[FlareEvent]):
        self.events = sorted(events, key=lambda e: (e.peak_time, e.start_time))
        self._peaks = [e.peak_time for e in self.events]

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def between(self, start: datetime, end: datetime) -> List[FlareEvent]:
        """Events whose peak lies in [start, end)."""
        lo = bisect.bisect_left(self._peaks, start)
        hi = bisect.bisect_left(self._peaks, end, lo=lo)
        return self.events[lo:hi]


def _as_index(catalog) -> EventIndex:
    return catalog if isinstance(catalog, EventIndex) else EventIndex(catalog)


def label_timestamp(catalog, t: datetime, window: timedelta = PREDICTION_WINDOW,
                    threshold: float = M_THRESHOLD) -> WindowLabel:
    """Label the observation at ``t`` from the strongest flare peaking in [t, t + window).

    Equal peak fluxes resolve to the earliest peak and set ``tie``.
    """
    candidates = _as_index(catalog).between(t, t + window)
    if not candidates:
        return WindowLabel(NF)
    strongest = max(e.peak_flux for e in candidates)
    winners = [e for e in candidates if e.peak_flux == strongest]
    event = winners[0]
    label = FL if event.peak_flux >= threshold else NF
    return WindowLabel(label, event, tie=len(winners) > 1)


def _require_aware(t: datetime, name: str) -> datetime:
    if t.tzinfo is None:
        raise DataError(f"{name} must be timezone-aware (UTC), got {t.isoformat()}")
    return t.astimezone(timezone.utc)


def generate_timeline(start: datetime, end: datetime, cadence: timedelta = CADENCE) -> List[datetime]:
    """Whole-hour grid from the first hour at or after ``start`` through ``end``."""
    start = _require_aware(start, 'start')
    end = _require_aware(end, 'end')
    if start > end:
        raise DataError(f"timeline start {start.isoformat()} is after end {end.isoformat()}")
    first = start.replace(minute=0, second=0, microsecond=0)
    if first < start:
        first += timedelta(hours=1)
    steps = int((end - first) // cadence) + 1 if first <= end else 0
    return [first + i * cadence for i in range(steps)]


def assign_partition(t: datetime) -> int:
    """Jan-Mar -> 1, Apr-Jun -> 2, Jul-Sep -> 3, Oct-Dec -> 4."""
    return (t.month - 1) // 3 + 1


def class_weights(counts: Mapping[str, int]) -> Dict[str, float]:
    """weight_c = N / (k * count_c)."""
    if not counts:
        raise DataError("class weights need at least one class")
    for label, count in counts.items():
        if count <= 0:
            raise DataError(f"class {label} has no samples")
    total = sum(counts.values())
    return {label: total / (len(counts) * count) for label, count in counts.items()}


def build_samples(catalog, timestamps: Iterable[datetime],
                  image_ref: Callable[[datetime], str] = lambda t: '') -> List[LabeledSample]:
    """Unsaved LabeledSamples for ``timestamps``."""
    index = _as_index(catalog)
    samples = []
    for t in timestamps:
        result = label_timestamp(index, t)
        samples.append(LabeledSample(
            timestamp=t,
            image_ref=image_ref(t),
            label=result.label,
            responsible_event=result.event,
            partition=assign_partition(t),
            tie=result.tie,
        ))
    ties = sum(s.tie for s in samples)
    if ties:
        logger.warning("%d of %d windows had equal-flux responsible events", ties, len(samples))
    return samples


@dataclass
class DatasetSummary:
    counts: Dict[int, Counter] = field(default_factory=lambda: {p: Counter() for p in PARTITIONS})

    @property
    def totals(self) -> Counter:
        total = Counter()
        for per_partition in self.counts.values():
            total.update(per_partition)
        return total

    @property
    def imbalance(self) -> float:
        """NF samples per FL sample."""
        totals = self.totals
        return totals[NF] / totals[FL] if totals[FL] else float('inf')

    def as_rows(self):
        rows = [(f"Partition-{p}", self.counts[p][FL], self.counts[p][NF]) for p in PARTITIONS]
        totals = self.totals
        rows.append(('Total', totals[FL], totals[NF]))
        return rows


def summarize(samples: Iterable[LabeledSample]) -> DatasetSummary:
    summary = DatasetSummary()
    for sample in samples:
        summary.counts[sample.partition][sample.label] += 1
    return summary
