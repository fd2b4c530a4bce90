import json
from pathlib import Path

from attribution.methods import IG_STEPS, BaselineSet, Method, background_indices
from attribution.services import DEFAULT_METHODS, OCCLUSION_PATCH, OCCLUSION_STRIDE, explain_file, parse_methods
from attribution.tasks import explain_image
from catalog.labeling import NF
from flarecast.exceptions import ConfigError
from network.architecture import build_spec
from pipeline.datasets import image_name, load_dataset

from ..base import FlarecastCommand


class Command(FlarecastCommand):
    help = 'Attribution maps, overlays and a property log for one magnetogram.'

    def add_arguments(self, parser):
        parser.add_argument('--weights', required=True)
        parser.add_argument('--architecture', default='tiny')
        parser.add_argument('--input-size', type=int, default=None)
        parser.add_argument('--image', required=True)
        parser.add_argument('--method', action='append', choices=[m.value for m in Method], dest='methods',
                            help='repeatable; defaults to ggcam, ig and deepshap')
        parser.add_argument('--target', choices=('FL', 'NF'), default='FL')
        parser.add_argument('--out', required=True)
        parser.add_argument('--backgrounds', help='dataset manifest whose NF images serve as Deep SHAP backgrounds')
        parser.add_argument('--image-dir', help='image directory of --backgrounds')
        parser.add_argument('--background-count', type=int, default=10)
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--ig-steps', type=int, default=IG_STEPS)
        parser.add_argument('--occlusion-patch', type=int, default=OCCLUSION_PATCH, help='occlusion square side')
        parser.add_argument('--occlusion-stride', type=int, default=OCCLUSION_STRIDE)
        parser.add_argument('--threshold', type=float, default=0.5)
        parser.add_argument('--region', type=int, nargs=4, metavar=('R0', 'R1', 'C0', 'C1'),
                            help='box for the attribution-mass-in-region log entry')
        parser.add_argument('--queue', action='store_true', help='run as a Celery task')

    def run(self, *args, **options):
        methods = parse_methods(options['methods']) if options['methods'] else DEFAULT_METHODS
        spec = build_spec(options['architecture'], options['input_size'])
        backgrounds, background_paths = None, []
        if Method.DEEP_SHAP in methods:
            if not options['backgrounds']:
                raise ConfigError('deepshap needs --backgrounds')
            image_dir = Path(options['image_dir'] or Path(options['backgrounds']).parent)
            nf = load_dataset(options['backgrounds'], image_dir, spec.input_shape[-1]).with_label(NF)
            picks = background_indices(len(nf), options['background_count'], options['seed'])
            backgrounds = BaselineSet.provided([nf.images[i] for i in picks], include_zero=True)
            background_paths = [str(image_dir / (nf.samples[i].image_ref or image_name(nf.samples[i].timestamp)))
                                for i in picks]

        if options['queue']:
            log_path = explain_image.delay(
                options['weights'], options['architecture'], options['image'], options['out'],
                [m.value for m in methods], options['target'], options['input_size'], background_paths,
                options['ig_steps'], options['threshold'], options['occlusion_patch'], options['occlusion_stride'],
            ).get()
            self.stdout.write(self.style.SUCCESS(f"property log: {log_path}"))
            return

        log_path, log = explain_file(
            options['weights'], options['architecture'], options['image'], options['out'], methods,
            target_class=options['target'], input_size=options['input_size'], backgrounds=backgrounds,
            ig_steps=options['ig_steps'], threshold=options['threshold'],
            region=tuple(options['region']) if options['region'] else None,
            occlusion_patch=options['occlusion_patch'], occlusion_stride=options['occlusion_stride'],
        )
        self.stdout.write(f"P(FL) = {log['fl_probability']:.4f} -> {log['predicted_label']}")
        for method, entry in log['maps'].items():
            checks = {k: entry[k] for k in ('completeness', 'summation_to_delta', 'mass_in_region') if k in entry}
            self.stdout.write(f"{method}: residual {entry['completeness_residual']} {json.dumps(checks)}")
        self.stdout.write(self.style.SUCCESS(f"property log: {log_path}"))

