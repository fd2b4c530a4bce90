from pathlib import Path

from catalog.tables import write_catalog
from pipeline.datasets import image_name, synthesize
from pipeline.helioviewer import CACHED, FetchResult, write_fetch_manifest

from ..base import FlarecastCommand


class Command(FlarecastCommand):
    help = 'Write a planted-feature dataset: noise images, a flare catalog and a fetch manifest.'

    def add_arguments(self, parser):
        parser.add_argument('--out', required=True, help='directory for images, catalog.csv and images.csv')
        parser.add_argument('--count', type=int, default=640)
        parser.add_argument('--size', type=int, default=64)
        parser.add_argument('--fl-fraction', type=float, default=0.5)
        parser.add_argument('--seed', type=int, default=0)

    def run(self, *args, **options):
        out = Path(options['out'])
        planted = synthesize(out, count=options['count'], size=options['size'],
                             fl_fraction=options['fl_fraction'], seed=options['seed'])
        write_catalog(planted.catalog, out / 'catalog.csv')
        rows = [FetchResult(t, CACHED, image_ref=image_name(t)) for t in planted.timestamps]
        write_fetch_manifest(rows, out / 'images.csv')
        self.stdout.write(self.style.SUCCESS(
            f"{options['count']} images, {len(planted.catalog)} flare events written to {out}"
        ))
