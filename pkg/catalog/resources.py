from import_export import fields, resources
from import_export.widgets import DateTimeWidget

from .models import FlareEvent, LabeledSample

ISO_UTC = '%Y-%m-%dT%H:%M:%SZ'
CATALOG_HEADERS = ('start_time', 'peak_time', 'peak_flux', 'class', 'hgs_lat', 'hgs_lon', 'noaa_ar')
MANIFEST_HEADERS = (
    'timestamp', 'image_ref', 'label', 'partition', 'tie',
    'event_class', 'event_peak_time', 'event_peak_flux', 'event_hgs_lat', 'event_hgs_lon', 'event_noaa_ar',
)


def _iso(value):
    return value.strftime(ISO_UTC) if value else ''


def _blank(value):
    return '' if value is None else value


class FlareEventResource(resources.ModelResource):
    start_time = fields.Field(attribute='start_time', column_name='start_time', widget=DateTimeWidget(ISO_UTC))
    peak_time = fields.Field(attribute='peak_time', column_name='peak_time', widget=DateTimeWidget(ISO_UTC))
    peak_flux = fields.Field(attribute='peak_flux', column_name='peak_flux')
    class_label = fields.Field(attribute='class_label', column_name='class')
    hgs_latitude = fields.Field(attribute='hgs_latitude', column_name='hgs_lat')
    hgs_longitude = fields.Field(attribute='hgs_longitude', column_name='hgs_lon')
    noaa_ar = fields.Field(attribute='noaa_ar', column_name='noaa_ar')

    class Meta:
        model = FlareEvent
        import_id_fields = ['peak_time', 'class_label']
        fields = ('start_time', 'peak_time', 'peak_flux', 'class_label', 'hgs_latitude', 'hgs_longitude', 'noaa_ar')
        export_order = ('start_time', 'peak_time', 'peak_flux', 'class_label', 'hgs_latitude', 'hgs_longitude',
                        'noaa_ar')

    def dehydrate_start_time(self, event):
        return _iso(event.start_time)

    def dehydrate_peak_time(self, event):
        return _iso(event.peak_time)

    def dehydrate_peak_flux(self, event):
        return repr(float(event.peak_flux))

    def dehydrate_hgs_latitude(self, event):
        return _blank(event.hgs_latitude)

    def dehydrate_hgs_longitude(self, event):
        return _blank(event.hgs_longitude)

    def dehydrate_noaa_ar(self, event):
        return _blank(event.noaa_ar)


class LabeledSampleResource(resources.ModelResource):
    """Dataset manifest row: the sample plus the fields of its responsible event."""

    timestamp = fields.Field(attribute='timestamp', column_name='timestamp', widget=DateTimeWidget(ISO_UTC))
    image_ref = fields.Field(attribute='image_ref', column_name='image_ref')
    label = fields.Field(attribute='label', column_name='label')
    partition = fields.Field(attribute='partition', column_name='partition')
    tie = fields.Field(attribute='tie', column_name='tie')
    event_class = fields.Field(column_name='event_class')
    event_peak_time = fields.Field(column_name='event_peak_time')
    event_peak_flux = fields.Field(column_name='event_peak_flux')
    event_hgs_lat = fields.Field(column_name='event_hgs_lat')
    event_hgs_lon = fields.Field(column_name='event_hgs_lon')
    event_noaa_ar = fields.Field(column_name='event_noaa_ar')

    class Meta:
        model = LabeledSample
        import_id_fields = ['timestamp']
        fields = MANIFEST_HEADERS
        export_order = MANIFEST_HEADERS

    def dehydrate_timestamp(self, sample):
        return _iso(sample.timestamp)

    def dehydrate_tie(self, sample):
        return int(bool(sample.tie))

    def _event(self, sample, attr, convert=_blank):
        event = sample.responsible_event
        return '' if event is None else convert(getattr(event, attr))

    def dehydrate_event_class(self, sample):
        return self._event(sample, 'class_label')

    def dehydrate_event_peak_time(self, sample):
        return self._event(sample, 'peak_time', _iso)

    def dehydrate_event_peak_flux(self, sample):
        return self._event(sample, 'peak_flux', lambda v: repr(float(v)))

    def dehydrate_event_hgs_lat(self, sample):
        return self._event(sample, 'hgs_latitude')

    def dehydrate_event_hgs_lon(self, sample):
        return self._event(sample, 'hgs_longitude')

    def dehydrate_event_noaa_ar(self, sample):
        return self._event(sample, 'noaa_ar')
