from datetime import timedelta
from pathlib import Path

from catalog.labeling import generate_timeline
from flarecast.exceptions import ConfigError, FetchError
from pipeline.helioviewer import MISSING, FetchResult, FetchSpec, HelioviewerClient, write_fetch_manifest
from pipeline.tasks import fetch_magnetogram

from ..base import FlarecastCommand, parse_utc


class Command(FlarecastCommand):
    help = 'Fetch full-disk HMI magnetograms for an hourly timeline into the image cache.'

    def add_arguments(self, parser):
        parser.add_argument('--start', type=parse_utc, required=True)
        parser.add_argument('--end', type=parse_utc, required=True)
        parser.add_argument('--cadence', type=int, default=1, help='hours between requests')
        parser.add_argument('--cache-dir', default=None)
        parser.add_argument('--manifest', default=None, help='defaults to <cache-dir>/images.csv')
        parser.add_argument('--size', type=int, default=None)
        parser.add_argument('--queue', action='store_true',
                            help='dispatch one Celery task per timestamp instead of fetching in-process')

    def run(self, *args, **options):
        if options['cadence'] < 1:
            raise ConfigError('cadence must be at least one hour')
        spec = FetchSpec.from_settings(cache_dir=options['cache_dir'], size=options['size'])
        timestamps = generate_timeline(options['start'], options['end'], timedelta(hours=options['cadence']))
        if options['queue']:
            results = self._queued(timestamps, spec)
        else:
            results = HelioviewerClient(spec).fetch_all(timestamps)
        manifest = Path(options['manifest'] or spec.cache_dir / 'images.csv')
        write_fetch_manifest(results, manifest)

        missing = sum(r.status == MISSING for r in results)
        self.stdout.write(f"requested {len(results)}, available {len(results) - missing}, missing {missing}")
        self.stdout.write(f"manifest: {manifest}")
        if results and missing == len(results):
            raise FetchError(f"no image could be fetched for {len(results)} timestamps")
        if missing:
            self.stdout.write(self.style.WARNING(f"{missing} timestamps are marked missing"))
        else:
            self.stdout.write(self.style.SUCCESS('all images available'))

    def _queued(self, timestamps, spec):
        pending = [fetch_magnetogram.delay(t.isoformat(), str(spec.cache_dir)) for t in timestamps]
        return [FetchResult.from_dict(task.get()) for task in pending]
