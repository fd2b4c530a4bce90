"""Prediction records: building them from model output and the CSV they travel in."""
import logging
from pathlib import Path
from typing import Iterable, List

import tablib
from django.utils.dateparse import parse_datetime
from import_export import fields, resources
from import_export.widgets import DateTimeWidget

from flarecast.exceptions import CatalogError

from .models import PredictionRecord
from .scores import DEFAULT_THRESHOLD, FL, NF, predicted_label

logger = logging.getLogger(__name__)

ISO_UTC = '%Y-%m-%dT%H:%M:%SZ'
RECORD_HEADERS = ('timestamp', 'true', 'pred', 'prob', 'class', 'lat', 'lon', 'fold')
RECORD_FIELDS = ('timestamp', 'true_label', 'predicted_label', 'fl_probability', 'event_class',
                 'hgs_latitude', 'hgs_longitude', 'fold')


class PredictionRecordResource(resources.ModelResource):
    timestamp = fields.Field(attribute='timestamp', column_name='timestamp', widget=DateTimeWidget(ISO_UTC))
    true_label = fields.Field(attribute='true_label', column_name='true')
    predicted_label = fields.Field(attribute='predicted_label', column_name='pred')
    fl_probability = fields.Field(attribute='fl_probability', column_name='prob')
    event_class = fields.Field(attribute='event_class', column_name='class')
    hgs_latitude = fields.Field(attribute='hgs_latitude', column_name='lat')
    hgs_longitude = fields.Field(attribute='hgs_longitude', column_name='lon')
    fold = fields.Field(attribute='fold', column_name='fold')

    class Meta:
        model = PredictionRecord
        fields = RECORD_FIELDS
        export_order = RECORD_FIELDS

    def dehydrate_timestamp(self, record):
        return record.timestamp.strftime(ISO_UTC)

    def dehydrate_fl_probability(self, record):
        return repr(float(record.fl_probability))

    def dehydrate_hgs_latitude(self, record):
        return '' if record.hgs_latitude is None else record.hgs_latitude

    def dehydrate_hgs_longitude(self, record):
        return '' if record.hgs_longitude is None else record.hgs_longitude


def make_record(sample, fl_probability: float, threshold: float = DEFAULT_THRESHOLD,
                fold: int = 0, run: str = '') -> PredictionRecord:
    """Unsaved record for a LabeledSample and its predicted flaring probability."""
    event = sample.responsible_event if sample.label == FL else None
    return PredictionRecord(
        run=run,
        fold=fold,
        timestamp=sample.timestamp,
        true_label=sample.label,
        predicted_label=predicted_label(fl_probability, threshold),
        fl_probability=float(fl_probability),
        event_class=event.letter if event is not None else '',
        hgs_latitude=event.hgs_latitude if event is not None else None,
        hgs_longitude=event.hgs_longitude if event is not None else None,
    )


def write_records(records: Iterable[PredictionRecord], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dataset = PredictionRecordResource().export(list(records))
    path.write_text(dataset.export('csv'), encoding='utf-8')
    logger.info("wrote %d prediction records to %s", len(dataset), path)
    return path


def read_records(path) -> List[PredictionRecord]:
    text = Path(path).read_text(encoding='utf-8')
    dataset = tablib.Dataset().load(text, format='csv')
    missing = [h for h in RECORD_HEADERS if h not in (dataset.headers or [])]
    if missing:
        raise CatalogError(f"{path}: missing columns {', '.join(missing)}", line=1)
    records = []
    for line, row in enumerate(dataset.dict, start=2):
        try:
            timestamp = parse_datetime(row['timestamp'])
            probability = float(row['prob'])
            fold = int(row['fold'] or 0)
            lat = float(row['lat']) if row['lat'] else None
            lon = float(row['lon']) if row['lon'] else None
        except (TypeError, ValueError) as exc:
            raise CatalogError(f"{path}: {exc}", line=line) from None
        if timestamp is None:
            raise CatalogError(f"{path}: bad timestamp {row['timestamp']!r}", line=line)
        if row['true'] not in (FL, NF) or row['pred'] not in (FL, NF):
            raise CatalogError(f"{path}: labels must be FL or NF", line=line)
        if not 0.0 <= probability <= 1.0:
            raise CatalogError(f"{path}: probability {probability} outside [0, 1]", line=line)
        records.append(PredictionRecord(
            timestamp=timestamp, true_label=row['true'], predicted_label=row['pred'],
            fl_probability=probability, event_class=row['class'] or '',
            hgs_latitude=lat, hgs_longitude=lon, fold=fold,
        ))
    return records
