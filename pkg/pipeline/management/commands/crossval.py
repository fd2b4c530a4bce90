from pathlib import Path

from network.architecture import build_spec
from pipeline.crossval import run_crossval
from pipeline.datasets import load_dataset
from pipeline.serializers import load_config

from ..base import FlarecastCommand


class Command(FlarecastCommand):
    help = 'Four-fold cross-validation over the tri-monthly partitions.'

    def add_arguments(self, parser):
        parser.add_argument('--config', help='RunConfig JSON file')
        parser.add_argument('--epochs', type=int, default=None)
        parser.add_argument('--output-dir', default=None)
        parser.add_argument('--run', default='', help='run name stored with the prediction records')

    def run(self, *args, **options):
        config = load_config(options['config'], epochs=options['epochs'], output_dir=options['output_dir'])
        spec = build_spec(config.architecture, config.input_size)
        images = load_dataset(config.dataset, config.image_dir, spec.input_shape[-1])
        out = Path(config.output_dir)
        config.save(out / 'config.json')
        folds, summary = run_crossval(config, images, out_dir=out, run=options['run'])

        self.stdout.write(summary.render())
        if summary.failed:
            self.stdout.write(self.style.WARNING(f"folds {sorted(summary.failed)} failed"))
        self.stdout.write(self.style.SUCCESS(f"{len(folds)} fold reports and summary in {out}"))
