"""Recall on a 5x5 degree Heliographic Stonyhurst grid."""
import logging
import math
from pathlib import Path
from typing import Iterable, Optional, Tuple

import numpy as np
import tablib

from flarecast.exceptions import DataError

from .scores import FL, NO_DATA, recall
from .subgroups import CLASS_ROWS, COMBINED, SUBCLASSES

logger = logging.getLogger(__name__)

CELL_DEGREES = 5.0
GRID_CELLS = 36
GRID_HEADERS = ('lat_bin', 'lon_bin', 'subclass', 'tp', 'fn', 'recall')


def cell_index(latitude: float, longitude: float) -> Tuple[int, int]:
    """(row, column) of the cell; +90 falls into the last cell on either axis."""
    for name, value in (('latitude', latitude), ('longitude', longitude)):
        if not -90.0 <= value <= 90.0:
            raise DataError(f"{name} {value} outside [-90, 90]")
    row = min(math.floor(latitude / CELL_DEGREES) + GRID_CELLS // 2, GRID_CELLS - 1)
    column = min(math.floor(longitude / CELL_DEGREES) + GRID_CELLS // 2, GRID_CELLS - 1)
    return row, column


def cell_bounds(row: int, column: int):
    """Lower edges in degrees: ((lat0, lat1), (lon0, lon1))."""
    lat0 = -90.0 + CELL_DEGREES * row
    lon0 = -90.0 + CELL_DEGREES * column
    return (lat0, lat0 + CELL_DEGREES), (lon0, lon0 + CELL_DEGREES)


class SpatialGrid:
    """Per-cell tp/fn counts for X, M and combined."""

    def __init__(self):
        self.tp = {row: np.zeros((GRID_CELLS, GRID_CELLS), dtype=np.int64) for row in CLASS_ROWS}
        self.fn = {row: np.zeros((GRID_CELLS, GRID_CELLS), dtype=np.int64) for row in CLASS_ROWS}

    def add(self, letter: str, latitude: float, longitude: float, hit: bool):
        i, j = cell_index(latitude, longitude)
        counts = self.tp if hit else self.fn
        counts[letter][i, j] += 1
        counts[COMBINED][i, j] += 1

    def recall(self, subclass: str, row: int, column: int) -> Optional[float]:
        return recall(int(self.tp[subclass][row, column]), int(self.fn[subclass][row, column]))

    def recall_map(self, subclass: str) -> np.ndarray:
        """Recall per cell, NaN where the cell has no FL records."""
        tp, fn = self.tp[subclass], self.fn[subclass]
        total = tp + fn
        out = np.full(total.shape, np.nan)
        np.divide(tp, total, out=out, where=total > 0)
        return out

    def totals(self, subclass: str) -> int:
        return int(self.tp[subclass].sum() + self.fn[subclass].sum())

    def zero_hit_cells(self, subclass: str):
        """Cells with FL records but no correct prediction."""
        return list(zip(*np.nonzero((self.tp[subclass] == 0) & (self.fn[subclass] > 0))))

    def to_dataset(self) -> tablib.Dataset:
        dataset = tablib.Dataset(headers=GRID_HEADERS)
        for subclass in CLASS_ROWS:
            for i in range(GRID_CELLS):
                for j in range(GRID_CELLS):
                    (lat0, _), (lon0, _) = cell_bounds(i, j)
                    value = self.recall(subclass, i, j)
                    dataset.append((int(lat0), int(lon0), subclass, int(self.tp[subclass][i, j]),
                                    int(self.fn[subclass][i, j]), NO_DATA if value is None else repr(value)))
        return dataset

    def export(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_dataset().export('csv'), encoding='utf-8')
        logger.info("wrote spatial recall grid to %s", path)
        return path


def spatial_recall_grid(records: Iterable) -> SpatialGrid:
    """Grid over located FL records; unlocated ones are skipped."""
    grid = SpatialGrid()
    for record in records:
        if record.true_label != FL or not record.is_located:
            continue
        if record.event_class not in SUBCLASSES:
            raise DataError(f"FL record at {record.timestamp} has flare class {record.event_class!r}")
        try:
            grid.add(record.event_class, record.hgs_latitude, record.hgs_longitude,
                     hit=record.predicted_label == FL)
        except DataError as exc:
            raise DataError(f"record at {record.timestamp}: {exc}") from None
    return grid
