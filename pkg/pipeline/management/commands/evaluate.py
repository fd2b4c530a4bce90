from pathlib import Path

from evaluation.models import PredictionRecord
from network.architecture import build_spec
from network.weights import load_weights
from pipeline.crossval import evaluate_model, write_evaluation
from pipeline.datasets import load_dataset
from pipeline.serializers import load_config

from ..base import FlarecastCommand


class Command(FlarecastCommand):
    help = 'Predict the validation partition with saved weights; write records, skill report and spatial grid.'

    def add_arguments(self, parser):
        parser.add_argument('--config', help='RunConfig JSON file')
        parser.add_argument('--weights', required=True)
        parser.add_argument('--partition', type=int, choices=(1, 2, 3, 4), default=None,
                            help='defaults to the config validation partition')
        parser.add_argument('--threshold', type=float, default=None)
        parser.add_argument('--output-dir', default=None)
        parser.add_argument('--run', default='')
        parser.add_argument('--store', action='store_true', help='also save the prediction records')

    def run(self, *args, **options):
        config = load_config(options['config'], threshold=options['threshold'], output_dir=options['output_dir'],
                             validation_partition=options['partition'])
        spec = build_spec(config.architecture, config.input_size)
        model = load_weights(spec, options['weights'])
        images = load_dataset(config.dataset, config.image_dir, spec.input_shape[-1])
        validation = images.select([config.validation_partition])
        records, report = evaluate_model(model, validation, config.threshold, fold=config.validation_partition,
                                         run=options['run'], config=config.to_dict())
        out = Path(config.output_dir)
        path = write_evaluation(records, report, out, stem=f"evaluate_p{config.validation_partition}")
        if options['store']:
            PredictionRecord.objects.bulk_create(records)

        self.stdout.write(report.render())
        for sample in validation.missing:
            self.stdout.write(self.style.WARNING(f"missing image: {sample.timestamp:%Y-%m-%dT%H:%M:%SZ}"))
        self.stdout.write(self.style.SUCCESS(f"report written to {path}"))
