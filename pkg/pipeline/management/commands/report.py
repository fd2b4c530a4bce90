from evaluation.records import read_records
from evaluation.reports import load_report
from evaluation.spatial import spatial_recall_grid
from evaluation.subgroups import subgroup_recall_table
from flarecast.exceptions import ConfigError

from ..base import FlarecastCommand


class Command(FlarecastCommand):
    help = 'Print a stored skill report or cross-validation summary; optionally re-export the spatial grid.'

    def add_arguments(self, parser):
        parser.add_argument('--report', help='report or summary JSON')
        parser.add_argument('--records', help='prediction records CSV')
        parser.add_argument('--grid', help='where to write the spatial recall grid (needs --records)')

    def run(self, *args, **options):
        if not options['report'] and not options['records']:
            raise ConfigError('give --report, --records or both')
        if options['report']:
            self.stdout.write(load_report(options['report']).render())
        if options['records']:
            records = read_records(options['records'])
            if not options['report']:
                self.stdout.write(subgroup_recall_table(records).render())
            if options['grid']:
                path = spatial_recall_grid(records).export(options['grid'])
                self.stdout.write(self.style.SUCCESS(f"spatial grid written to {path}"))
