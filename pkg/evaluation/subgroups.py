"""Recall of FL records split by flare class and longitude band."""
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Tuple

from flarecast.exceptions import DataError

from .scores import FL, format_recall, recall

logger = logging.getLogger(__name__)

CENTRAL, NEAR_LIMB, OVERALL = 'central', 'near-limb', 'overall'
BANDS = (CENTRAL, NEAR_LIMB)
SUBCLASSES = ('X', 'M')
COMBINED = 'X&M'
CLASS_ROWS = SUBCLASSES + (COMBINED,)
CENTRAL_LIMIT = 70.0


def longitude_band(longitude: float) -> str:
    """|lon| <= 70 is central, beyond is near-limb."""
    return CENTRAL if abs(longitude) <= CENTRAL_LIMIT else NEAR_LIMB


@dataclass
class SubgroupTable:
    """tp/fn counts keyed by (class row, band); unlocated FL records counted per class."""

    counts: Dict[Tuple[str, str], Counter] = field(default_factory=dict)
    unlocated: Dict[str, Counter] = field(default_factory=dict)

    def __post_init__(self):
        for row in CLASS_ROWS:
            for band in BANDS:
                self.counts.setdefault((row, band), Counter())
            self.unlocated.setdefault(row, Counter())

    def add(self, letter: str, band: Optional[str], hit: bool):
        outcome = 'tp' if hit else 'fn'
        for row in (letter, COMBINED):
            if band is None:
                self.unlocated[row][outcome] += 1
            else:
                self.counts[(row, band)][outcome] += 1

    def tp(self, row, band):
        return self._count(row, band, 'tp')

    def fn(self, row, band):
        return self._count(row, band, 'fn')

    def _count(self, row, band, outcome):
        if band == OVERALL:
            return sum(self.counts[(row, b)][outcome] for b in BANDS) + self.unlocated[row][outcome]
        return self.counts[(row, band)][outcome]

    def recall(self, row, band) -> Optional[float]:
        return recall(self.tp(row, band), self.fn(row, band))

    def __add__(self, other: 'SubgroupTable') -> 'SubgroupTable':
        merged = SubgroupTable()
        for key in merged.counts:
            merged.counts[key] = self.counts[key] + other.counts[key]
        for row in CLASS_ROWS:
            merged.unlocated[row] = self.unlocated[row] + other.unlocated[row]
        return merged

    def as_dict(self):
        out = {}
        for row in CLASS_ROWS:
            out[row] = {
                band: {'tp': self.tp(row, band), 'fn': self.fn(row, band), 'recall': self.recall(row, band)}
                for band in BANDS + (OVERALL,)
            }
            out[row]['unlocated'] = dict(self.unlocated[row])
        return out

    @classmethod
    def from_dict(cls, data) -> 'SubgroupTable':
        table = cls()
        for row in CLASS_ROWS:
            for band in BANDS:
                counts = data[row][band]
                table.counts[(row, band)].update({'tp': counts['tp'], 'fn': counts['fn']})
            table.unlocated[row].update(data[row].get('unlocated', {}))
        return table

    def render(self) -> str:
        """Plain-text table: counts and 2-decimal recalls per band."""
        header = (f"{'Flare class':<12}| {'|lon|<=70':^22} | {'|lon|>70':^22} | {'overall':^7}\n"
                  f"{'':<12}| {'TP':>6} {'FN':>6} {'Recall':>8} | {'TP':>6} {'FN':>6} {'Recall':>8} | {'Recall':>7}")
        lines = [header, '-' * len(header.splitlines()[1])]
        for row in CLASS_ROWS:
            name = 'Total (X&M)' if row == COMBINED else f"{row}-class"
            cells = []
            for band in BANDS:
                cells.append(f"{self.tp(row, band):>6} {self.fn(row, band):>6} "
                             f"{format_recall(self.recall(row, band)):>8}")
            lines.append(f"{name:<12}| {cells[0]} | {cells[1]} | {format_recall(self.recall(row, OVERALL)):>7}")
        unlocated = sum(self.unlocated[COMBINED].values())
        if unlocated:
            lines.append(f"unlocated FL records (overall only): {unlocated}")
        return '\n'.join(lines)


def subgroup_recall_table(records: Iterable) -> SubgroupTable:
    """Tally FL records (NF records are ignored) across folds."""
    table = SubgroupTable()
    for record in records:
        if record.true_label != FL:
            continue
        letter = record.event_class
        if letter not in SUBCLASSES:
            raise DataError(f"FL record at {record.timestamp} has flare class {letter!r}, expected X or M")
        band = longitude_band(record.hgs_longitude) if record.is_located else None
        table.add(letter, band, hit=record.predicted_label == FL)
    missing = sum(table.unlocated[COMBINED].values())
    if missing:
        logger.warning("%d FL records without a location went to the unlocated bucket", missing)
    return table
