from pathlib import Path

from django.db import transaction

from catalog.labeling import build_samples, summarize
from catalog.models import FlareEvent, LabeledSample
from catalog.tables import read_catalog, write_manifest
from pipeline.helioviewer import read_fetch_manifest

from ..base import FlarecastCommand

EVENT_FIELDS = ('start_time', 'peak_flux', 'hgs_latitude', 'hgs_longitude', 'noaa_ar')


class Command(FlarecastCommand):
    help = 'Label every available image FL/NF from the 24-hour flare window and assign its partition.'

    def add_arguments(self, parser):
        parser.add_argument('--catalog', required=True, help='GOES flare catalog CSV')
        parser.add_argument('--images', required=True, help='fetch manifest (images.csv)')
        parser.add_argument('--out', required=True, help='dataset manifest to write')
        parser.add_argument('--store', action='store_true', help='also save events and samples to the database')

    def run(self, *args, **options):
        catalog = read_catalog(options['catalog'])
        fetched = read_fetch_manifest(options['images'])
        available = [r for r in fetched if r.available]
        refs = {r.requested: r.image_ref for r in available}
        samples = build_samples(catalog, [r.requested for r in available], image_ref=lambda t: refs[t])
        write_manifest(samples, options['out'])
        if options['store']:
            self._store(catalog, samples)

        gaps = len(fetched) - len(available)
        self.stdout.write(f"{len(samples)} samples labeled ({gaps} timestamps without an image skipped)")
        self.summary(summarize(samples))
        self.stdout.write(self.style.SUCCESS(f"dataset manifest: {Path(options['out'])}"))

    @transaction.atomic
    def _store(self, catalog, samples):
        for event in catalog:
            stored, _ = FlareEvent.objects.update_or_create(
                peak_time=event.peak_time,
                class_label=event.class_label,
                defaults={field: getattr(event, field) for field in EVENT_FIELDS},
            )
            event.pk = stored.pk
        LabeledSample.objects.filter(timestamp__in=[s.timestamp for s in samples]).delete()
        LabeledSample.objects.bulk_create(samples)
        self.stdout.write(f"stored {FlareEvent.objects.count()} events, {len(samples)} samples")
