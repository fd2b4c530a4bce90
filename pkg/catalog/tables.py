"""Delimited-text catalog and manifest files.

Both are CSV with a header row and ISO-8601 UTC timestamps. Writing goes
through the import-export resources used by the admin; reading validates
every row and reports the offending file line.
"""
import logging
from datetime import timezone
from pathlib import Path
from typing import Iterable, List

import tablib
from django.utils.dateparse import parse_datetime

from flarecast.exceptions import CatalogError

from .goes import flare_letter, parse_flare_class
from .labeling import assign_partition
from .models import FlareEvent, LabeledSample
from .resources import (CATALOG_HEADERS, MANIFEST_HEADERS, FlareEventResource,
                        LabeledSampleResource)

logger = logging.getLogger(__name__)


def _load(path, required) -> tablib.Dataset:
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as exc:
        raise CatalogError(f"cannot read {path}: {exc}") from exc
    if not text.strip():
        raise CatalogError(f"{path} is empty", line=1)
    dataset = tablib.Dataset().load(text, format='csv')
    headers = [h.strip() for h in dataset.headers or []]
    missing = [h for h in required if h not in headers]
    if missing:
        raise CatalogError(f"{path}: missing columns {', '.join(missing)}", line=1)
    dataset.headers = headers
    return dataset


def _rows(dataset):
    # Header is line 1.
    for offset, row in enumerate(dataset.dict, start=2):
        yield offset, {key: (value or '').strip() for key, value in row.items()}


def _time(value, column, line):
    parsed = parse_datetime(value) if value else None
    if parsed is None:
        raise CatalogError(f"{column}: not an ISO-8601 timestamp: {value!r}", line=line)
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=timezone.utc)
    return parsed.astimezone(timezone.utc)


def _float(value, column, line, optional=False):
    if not value and optional:
        return None
    try:
        return float(value)
    except ValueError:
        raise CatalogError(f"{column}: not a number: {value!r}", line=line) from None


def _degrees(value, column, line):
    degrees = _float(value, column, line, optional=True)
    if degrees is not None and not -90.0 <= degrees <= 90.0:
        raise CatalogError(f"{column}: {degrees} outside [-90, 90]", line=line)
    return degrees


def _region(value, column, line):
    if not value:
        return None
    try:
        return int(value)
    except ValueError:
        raise CatalogError(f"{column}: not an active region number: {value!r}", line=line) from None


def _event(row, line, prefix=''):
    start = _time(row[f'{prefix}start_time'], 'start_time', line) if f'{prefix}start_time' in row else None
    peak = _time(row[f'{prefix}peak_time'], 'peak_time', line)
    flux = _float(row[f'{prefix}peak_flux'], 'peak_flux', line)
    if flux <= 0:
        raise CatalogError(f"peak_flux must be positive, got {flux}", line=line)
    label = row[f'{prefix}class']
    try:
        parse_flare_class(label)
    except CatalogError as exc:
        raise CatalogError(str(exc), line=line) from None
    if label[0].upper() != flare_letter(flux):
        raise CatalogError(f"class {label} disagrees with peak flux {flux:g}", line=line)
    if start is not None and start > peak:
        raise CatalogError("start_time is after peak_time", line=line)
    return FlareEvent(
        start_time=start or peak,
        peak_time=peak,
        peak_flux=flux,
        class_label=label,
        hgs_latitude=_degrees(row[f'{prefix}hgs_lat'], 'hgs_lat', line),
        hgs_longitude=_degrees(row[f'{prefix}hgs_lon'], 'hgs_lon', line),
        noaa_ar=_region(row[f'{prefix}noaa_ar'], 'noaa_ar', line),
    )


def read_catalog(path) -> List[FlareEvent]:
    """Unsaved FlareEvents from a catalog CSV."""
    dataset = _load(path, CATALOG_HEADERS)
    events = [_event(row, line) for line, row in _rows(dataset)]
    logger.info("read %d flare events from %s", len(events), path)
    return events


def write_catalog(events: Iterable[FlareEvent], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dataset = FlareEventResource().export(list(events))
    path.write_text(dataset.export('csv'), encoding='utf-8')
    return path


def read_manifest(path) -> List[LabeledSample]:
    dataset = _load(path, MANIFEST_HEADERS)
    samples = []
    for line, row in _rows(dataset):
        label = row['label']
        if label not in (LabeledSample.FL, LabeledSample.NF):
            raise CatalogError(f"label must be FL or NF, got {label!r}", line=line)
        try:
            partition = int(row['partition'])
        except ValueError:
            partition = 0
        if partition not in (1, 2, 3, 4):
            raise CatalogError(f"partition must be 1..4, got {row['partition']!r}", line=line)
        timestamp = _time(row['timestamp'], 'timestamp', line)
        if assign_partition(timestamp) != partition:
            raise CatalogError(f"partition {partition} does not match timestamp {row['timestamp']}", line=line)
        event = _event(row, line, prefix='event_') if row['event_peak_time'] else None
        if (label == LabeledSample.FL) != (event is not None and event.is_flare):
            raise CatalogError(f"label {label} inconsistent with responsible event", line=line)
        samples.append(LabeledSample(
            timestamp=timestamp,
            image_ref=row['image_ref'],
            label=label,
            partition=partition,
            responsible_event=event,
            tie=row['tie'] in ('1', 'True', 'true'),
        ))
    logger.info("read %d samples from %s", len(samples), path)
    return samples


def write_manifest(samples: Iterable[LabeledSample], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dataset = LabeledSampleResource().export(list(samples))
    path.write_text(dataset.export('csv'), encoding='utf-8')
    logger.info("wrote manifest %s (%d rows)", path, len(dataset))
    return path
