from pathlib import Path

from catalog.labeling import summarize
from catalog.tables import read_manifest, write_manifest
from flarecast.exceptions import DataError

from ..base import FlarecastCommand


class Command(FlarecastCommand):
    help = 'Split a dataset manifest into training and validation manifests by tri-monthly partition.'

    def add_arguments(self, parser):
        parser.add_argument('--dataset', required=True)
        parser.add_argument('--validation', type=int, choices=(1, 2, 3, 4), required=True,
                            help='partition held out for validation')
        parser.add_argument('--out-dir', required=True)

    def run(self, *args, **options):
        samples = read_manifest(options['dataset'])
        held_out = options['validation']
        training = [s for s in samples if s.partition != held_out]
        validation = [s for s in samples if s.partition == held_out]
        if not validation:
            raise DataError(f"partition {held_out} has no samples")
        out_dir = Path(options['out_dir'])
        write_manifest(training, out_dir / 'train.csv')
        write_manifest(validation, out_dir / 'validation.csv')

        self.summary(summarize(samples))
        self.stdout.write(self.style.SUCCESS(
            f"fold {held_out}: {len(training)} training, {len(validation)} validation samples in {out_dir}"
        ))
