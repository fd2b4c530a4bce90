import math
from pathlib import Path

from flarecast.exceptions import PropertyViolation
from network.architecture import build_spec, count_parameters
from network.model import Model
from network.weights import save_weights
from pipeline.crossval import split_fold
from pipeline.datasets import load_dataset
from pipeline.serializers import load_config
from pipeline.trainer import train

from ..base import FlarecastCommand


class Command(FlarecastCommand):
    help = 'Train on three partitions and validate on the fourth; --audit only checks the architecture.'

    def add_arguments(self, parser):
        parser.add_argument('--config', help='RunConfig JSON file')
        parser.add_argument('--architecture', default=None)
        parser.add_argument('--epochs', type=int, default=None)
        parser.add_argument('--seed', type=int, default=None)
        parser.add_argument('--validation', type=int, default=None, dest='validation_partition')
        parser.add_argument('--output-dir', default=None)
        parser.add_argument('--audit', action='store_true',
                            help='dry run: compare analytic and built parameter counts, then stop')
        parser.add_argument('--materialize', action='store_true',
                            help='with --audit, allocate the parameters instead of counting shapes')

    def run(self, *args, **options):
        config = load_config(options['config'], architecture=options['architecture'], epochs=options['epochs'],
                             seed=options['seed'], validation_partition=options['validation_partition'],
                             output_dir=options['output_dir'])
        spec = build_spec(config.architecture, config.input_size)
        if options['audit']:
            return self.audit(spec, options['materialize'])

        images = load_dataset(config.dataset, config.image_dir, spec.input_shape[-1])
        training, validation = split_fold(images, config.validation_partition)
        model, history = train(config, training.images, training.targets, validation.images, validation.targets)

        out = Path(config.output_dir)
        save_weights(model, out / 'weights.bin')
        history.save(out / 'history.json')
        config.save(out / 'config.json')
        rows = [(e.epoch, f"{e.learning_rate:.6g}", f"{e.loss:.4f}", _fmt(e.train_tss), _fmt(e.val_tss),
                 _fmt(e.val_hss)) for e in history.epochs]
        self.table(('epoch', 'lr', 'loss', 'train TSS', 'val TSS', 'val HSS'), rows)
        if images.missing:
            self.stdout.write(self.style.WARNING(f"{len(images.missing)} samples had no image"))
        self.stdout.write(self.style.SUCCESS(f"weights written to {out / 'weights.bin'}"))

    def audit(self, spec, materialize: bool):
        shapes = spec.parameter_shapes()
        rows = [(name, 'x'.join(map(str, shape)), math.prod(shape)) for name, shape in shapes.items()]
        self.table(('parameter', 'shape', 'count'), rows)
        analytic = count_parameters(spec)
        built = Model.initialize(spec).parameter_count() if materialize else sum(r[2] for r in rows)
        self.stdout.write(f"{spec.name}: analytic {analytic:,}, built {built:,}")
        if analytic != built:
            raise PropertyViolation(f"parameter count mismatch for {spec.name}: {analytic} != {built}")
        self.stdout.write(self.style.SUCCESS('parameter audit passed'))


def _fmt(value):
    return '-' if value is None else f"{value:.3f}"
