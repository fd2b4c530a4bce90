import json
import os
import tempfile
import unittest
from datetime import datetime, timedelta, timezone
from io import BytesIO, StringIO
from pathlib import Path
from unittest import mock

import numpy as np
import requests
from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase, override_settings
from PIL import Image

from attribution.methods import (guided_grad_cam, integrated_gradients, mass_in_region, occlusion_map,
                                 rank_correlation, region_share)
from catalog.labeling import FL, NF
from catalog.models import FlareEvent, LabeledSample
from catalog.tables import read_manifest
from evaluation.models import PredictionRecord
from evaluation.reports import load_report
from flarecast.exceptions import ConfigError, DataError, PropertyViolation
from network.architecture import build_tiny
from network.model import Model
from network.weights import save_weights

from .crossval import run_crossval, split_fold
from .datasets import (bipolar_blob, image_name, load_dataset, load_image, load_regions, normalize,
                       save_image, synthesize)
from .helioviewer import CACHED, MISSING, OK, FetchSpec, HelioviewerClient, read_fetch_manifest
from .management.base import exit_code
from .serializers import RunConfig, load_config
from .tasks import fetch_magnetogram
from .trainer import build_model, expand_with_augmentations, fl_probabilities, loss_weights, train

SLOW = os.environ.get('FLARECAST_SLOW_TESTS') == '1'


def utc(*args):
    return datetime(*args, tzinfo=timezone.utc)


def no_spacing():
    return override_settings(FLARECAST={**settings.FLARECAST, 'REQUEST_SPACING': 0})


def png_bytes(size=8, mode='RGB'):
    buffer = BytesIO()
    Image.new(mode, (size, size), color=(200, 100, 50)).save(buffer, format='PNG')
    return buffer.getvalue()


def response(json_body=None, content=b'', status=200):
    resp = mock.Mock()
    resp.status_code = status
    resp.content = content
    resp.json.return_value = json_body
    resp.raise_for_status.side_effect = requests.HTTPError(f"{status}") if status >= 400 else None
    return resp


def call(name, *args):
    out = StringIO()
    call_command(name, *args, stdout=out)
    return out.getvalue()


def separable_images(count=32, size=16, seed=0):
    """Half bright (FL), half dark (NF), plus noise."""
    rng = np.random.default_rng(seed)
    targets = np.array([FL_TARGET if i % 2 == 0 else NF_TARGET for i in range(count)])
    images = np.where(targets[:, None, None] == FL_TARGET, 0.6, -0.6) + rng.normal(0, 0.1, (count, size, size))
    return images, targets


FL_TARGET, NF_TARGET = 0, 1


class RunConfigTests(SimpleTestCase):
    def test_learning_rate_halves_every_five_epochs(self):
        config = RunConfig(learning_rate=0.001)
        self.assertEqual(config.learning_rate_at(0), 0.001)
        self.assertEqual(config.learning_rate_at(4), 0.001)
        self.assertEqual(config.learning_rate_at(5), 0.0005)
        self.assertAlmostEqual(config.learning_rate_at(12), 0.00025, places=15)

    def test_fold_partitions(self):
        config = RunConfig().for_fold(3)
        self.assertEqual(config.validation_partition, 3)
        self.assertEqual(config.training_partitions, (1, 2, 4))

    def test_dict_round_trip(self):
        config = RunConfig(epochs=3, input_size=32, freeze=['conv1_1'], dataset='d.csv')
        self.assertEqual(RunConfig.from_dict(config.to_dict()), config)

    def test_defaults(self):
        config = RunConfig.from_dict({})
        self.assertEqual(config.epochs, 50)
        self.assertEqual(config.batch_size, 64)
        self.assertEqual(config.augmentations, ['vflip', 'hflip', 'rotate'])
        self.assertEqual(config.threshold, 0.5)

    def test_rejects_bad_values(self):
        for data in ({'learning_rate': 0}, {'validation_partition': 5}, {'architecture': 'resnet'},
                     {'epochs': 0}, {'colour': 'red'}, {'augmentations': []}):
            with self.subTest(data=data):
                with self.assertRaises(ConfigError):
                    RunConfig.from_dict(data)

    def test_load_config_applies_overrides_and_path_defaults(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'run.json'
            path.write_text(json.dumps({'epochs': 7, 'seed': 4}))
            config = load_config(path, epochs=2, seed=None)
        self.assertEqual(config.epochs, 2)
        self.assertEqual(config.seed, 4)
        self.assertEqual(config.image_dir, str(settings.FLARECAST['CACHE_DIR']))
        self.assertTrue(config.output_dir)

    def test_load_config_bad_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'run.json'
            path.write_text('[1, 2]')
            with self.assertRaises(ConfigError):
                load_config(path)
            with self.assertRaises(ConfigError):
                load_config(Path(tmp) / 'absent.json')


class ImageTests(SimpleTestCase):
    def test_normalization(self):
        np.testing.assert_allclose(normalize(np.array([0, 255])), [-1.0, 1.0])

    def test_image_name(self):
        self.assertEqual(image_name(utc(2012, 3, 7, 14)), '20120307T140000Z.png')

    def test_save_load_and_resize(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = save_image(np.zeros((8, 8)), Path(tmp) / 'a.png')
            self.assertEqual(load_image(path).shape, (8, 8))
            self.assertEqual(load_image(path, size=4).shape, (4, 4))
            (Path(tmp) / 'bad.png').write_bytes(b'not a png')
            with self.assertRaises(DataError):
                load_image(Path(tmp) / 'bad.png')

    def test_bipolar_blob_is_balanced(self):
        blob = bipolar_blob(32, 16, 16, radius=3)
        self.assertAlmostEqual(blob.sum(), 0.0, places=5)
        self.assertGreater(blob.max(), 0.5)


class SynthesizeTests(SimpleTestCase):
    def test_planted_regions_match_catalog(self):
        with tempfile.TemporaryDirectory() as tmp:
            planted = synthesize(tmp, count=20, size=16, seed=1)
            regions = load_regions(tmp)
            self.assertEqual(len(list(Path(tmp).glob('*.png'))), 20)
        self.assertEqual(len(regions), len(planted.catalog))
        self.assertEqual(regions, planted.regions)
        for event in planted.catalog:
            self.assertGreaterEqual(event.peak_flux, 1e-5)
            self.assertIn(image_name(event.peak_time - timedelta(hours=1)), regions)

    def test_seeded(self):
        with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
            first = synthesize(a, count=10, size=16, seed=3)
            second = synthesize(b, count=10, size=16, seed=3)
            self.assertEqual(first.regions, second.regions)
            np.testing.assert_array_equal(load_image(Path(a) / image_name(first.timestamps[4])),
                                          load_image(Path(b) / image_name(second.timestamps[4])))


class HelioviewerClientTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.spec = FetchSpec(cache_dir=Path(self.tmp.name), base_url='https://example.test/v2/', source_id=19,
                              size=4, spacing=0.0, max_in_flight=2)
        self.session = mock.Mock()

    def tearDown(self):
        self.tmp.cleanup()

    def test_fetch_stores_gray_image(self):
        self.session.get.side_effect = [
            response({'date': '2015-01-01 00:03:00', 'scale': 0.6, 'width': 4096}),
            response(content=png_bytes(8)),
        ]
        result = HelioviewerClient(self.spec, self.session).fetch(utc(2015, 1, 1))
        self.assertEqual(result.status, OK)
        self.assertEqual(result.observed, utc(2015, 1, 1, 0, 3))
        self.assertAlmostEqual(result.image_scale, 0.6 * 4096 / 4)
        with Image.open(Path(self.tmp.name) / result.image_ref) as image:
            self.assertEqual(image.mode, 'L')
            self.assertEqual(image.size, (4, 4))
        first_url = self.session.get.call_args_list[0][0][0]
        self.assertEqual(first_url, 'https://example.test/v2/getClosestImage/')

    def test_cache_hit_skips_network(self):
        t = utc(2015, 1, 1, 5)
        save_image(np.zeros((4, 4)), Path(self.tmp.name) / image_name(t))
        result = HelioviewerClient(self.spec, self.session).fetch(t)
        self.assertEqual(result.status, CACHED)
        self.session.get.assert_not_called()

    def test_failures_become_missing(self):
        self.session.get.side_effect = requests.ConnectionError('down')
        results = HelioviewerClient(self.spec, self.session).fetch_all([utc(2015, 1, 1), utc(2015, 1, 2)])
        self.assertEqual([r.status for r in results], [MISSING, MISSING])
        self.assertEqual([r.requested for r in results], [utc(2015, 1, 1), utc(2015, 1, 2)])

    def test_cache_hit_keeps_observed_time_and_scale(self):
        t = utc(2015, 1, 1)
        self.session.get.side_effect = [
            response({'date': '2015-01-01 00:03:00', 'scale': 0.6, 'width': 4096}),
            response(content=png_bytes(8)),
        ]
        client = HelioviewerClient(self.spec, self.session)
        fetched = client.fetch(t)
        cached = client.fetch(t)
        self.assertEqual(cached.status, CACHED)
        self.assertEqual(cached.observed, fetched.observed)
        self.assertEqual(cached.image_scale, fetched.image_scale)
        self.assertEqual(self.session.get.call_count, 2)

    def test_malformed_payload_marks_row_missing(self):
        payloads = ({'date': '2015-01-01 00:00:00', 'scale': None}, {'date': 20150101},
                    {'date': '2015-01-01 00:00:00', 'scale': 'wide'}, [1, 2])
        self.session.get.side_effect = [response(payload) for payload in payloads]
        timestamps = [utc(2015, 1, day) for day in range(1, 5)]
        spec = FetchSpec(cache_dir=self.spec.cache_dir, base_url=self.spec.base_url, source_id=19, size=4,
                         spacing=0.0, max_in_flight=1)
        results = HelioviewerClient(spec, self.session).fetch_all(timestamps)
        self.assertEqual([r.status for r in results], [MISSING] * 4)
        self.assertTrue(all(r.error for r in results))

    def test_error_payload_and_non_image(self):
        self.session.get.side_effect = [response({'error': 'no data'})]
        self.assertEqual(HelioviewerClient(self.spec, self.session).fetch(utc(2015, 1, 1)).status, MISSING)
        self.session.get.side_effect = [response({'date': '2015-01-01 00:00:00'}), response(content=b'<html>')]
        result = HelioviewerClient(self.spec, self.session).fetch(utc(2015, 1, 1))
        self.assertEqual(result.status, MISSING)
        self.assertIn('not an image', result.error)

    def test_task_reports_cached_image(self):
        t = utc(2015, 1, 1, 5)
        save_image(np.zeros((4, 4)), Path(self.tmp.name) / image_name(t))
        row = fetch_magnetogram.delay(t.isoformat(), self.tmp.name).get()
        self.assertEqual(row['status'], CACHED)
        self.assertEqual(row['image_ref'], image_name(t))


class TrainerTests(SimpleTestCase):
    def config(self, **kwargs):
        values = dict(epochs=3, batch_size=8, learning_rate=0.05, input_size=16, augmentation=False)
        values.update(kwargs)
        return RunConfig(**values)

    def test_augmentation_only_copies_fl(self):
        images, targets = separable_images(8)
        expanded, expanded_targets = expand_with_augmentations(images, targets, ('vflip', 'hflip'))
        self.assertEqual(len(expanded), 8 + 4 * 2)
        self.assertTrue((expanded_targets[8:] == FL_TARGET).all())
        np.testing.assert_array_equal(expanded[8], images[0][::-1])

    def test_empty_class_aborts(self):
        with self.assertRaises(DataError):
            loss_weights(np.zeros(5, dtype=int))
        with self.assertRaises(DataError):
            loss_weights(np.zeros(5, dtype=int), weighted=False)
        np.testing.assert_allclose(loss_weights(np.array([0, 1, 1, 1])), [2.0, 2.0 / 3.0])

    def test_same_seed_same_weights(self):
        images, targets = separable_images()
        first, _ = train(self.config(epochs=2), images, targets)
        second, _ = train(self.config(epochs=2), images, targets)
        for name, tensor in first.params.items():
            np.testing.assert_array_equal(tensor.data, second.params[name].data)
            self.assertFalse(tensor.requires_grad)

    def test_loss_goes_down(self):
        images, targets = separable_images()
        _, history = train(self.config(epochs=8), images, targets, images, targets)
        self.assertLess(history.losses[-1], history.losses[0])
        self.assertEqual([e.learning_rate for e in history.epochs[4:6]], [0.05, 0.025])
        self.assertIsNotNone(history.epochs[-1].val_tss)

    def test_frozen_layers_keep_their_weights(self):
        images, targets = separable_images(8)
        config = self.config(epochs=1, freeze=['conv1_1'])
        model, _ = train(config, images, targets)
        initial = build_model(config)
        np.testing.assert_array_equal(model.params['conv1_1.weight'].data, initial.params['conv1_1.weight'].data)
        self.assertFalse(np.array_equal(model.params['fc.weight'].data, initial.params['fc.weight'].data))


class CrossValidationTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = tempfile.TemporaryDirectory()
        cls.dir = Path(cls.tmp.name)
        # 60 observations 48 h apart cover January to April: partitions 1 and 2 only.
        call('synthesize', '--out', str(cls.dir / 'images'), '--count', '60', '--size', '16')
        call('label', '--catalog', str(cls.dir / 'images' / 'catalog.csv'),
             '--images', str(cls.dir / 'images' / 'images.csv'), '--out', str(cls.dir / 'dataset.csv'))
        cls.images = load_dataset(cls.dir / 'dataset.csv', cls.dir / 'images', 16)

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()
        super().tearDownClass()

    def test_folds_never_share_timestamps(self):
        for partition in (1, 2):
            training, validation = split_fold(self.images, partition)
            self.assertEqual({s.partition for s in validation.samples}, {partition})
            self.assertNotIn(partition, {s.partition for s in training.samples})
            self.assertEqual(len(training) + len(validation), len(self.images))

    def test_validation_sets_cover_dataset_once(self):
        seen = []
        for partition in (1, 2, 3, 4):
            seen += [s.timestamp for s in self.images.select([partition]).samples]
        self.assertEqual(sorted(seen), sorted(s.timestamp for s in self.images.samples))
        self.assertEqual(len(set(seen)), len(seen))

    def test_empty_partition_is_a_data_error(self):
        with self.assertRaises(DataError):
            split_fold(self.images, 3)

    def test_failed_folds_are_reported(self):
        config = RunConfig(epochs=1, batch_size=32, input_size=16)
        out = self.dir / 'crossval'
        folds, summary = run_crossval(config, self.images, out_dir=out, run='desk')
        self.assertEqual([f.partition for f in folds], [1, 2])
        self.assertEqual(sorted(summary.failed), [3, 4])
        validated = [r.timestamp for f in folds for r in f.records]
        self.assertEqual(sorted(validated), sorted(s.timestamp for s in self.images.samples))
        for partition in (1, 2):
            fold_dir = out / f"fold{partition}"
            for name in ('weights.bin', 'history.json', 'validation_records.csv', 'validation_grid.csv',
                         'validation_report.json'):
                self.assertTrue((fold_dir / name).exists(), name)
        self.assertEqual(sorted(load_report(out / 'crossval_summary.json').failed), [3, 4])


class CommandTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = tempfile.TemporaryDirectory()
        cls.dir = Path(cls.tmp.name)
        cls.images = cls.dir / 'images'
        cls.dataset = cls.dir / 'dataset.csv'
        call('synthesize', '--out', str(cls.images), '--count', '60', '--size', '16', '--seed', '2')
        cls.label_output = call('label', '--catalog', str(cls.images / 'catalog.csv'),
                                '--images', str(cls.images / 'images.csv'), '--out', str(cls.dataset))
        cls.config = cls.dir / 'run.json'
        cls.config.write_text(json.dumps({
            'epochs': 1, 'batch_size': 32, 'input_size': 16, 'dataset': str(cls.dataset),
            'image_dir': str(cls.images), 'output_dir': str(cls.dir / 'run'),
        }))
        cls.train_output = call('train', '--config', str(cls.config))
        cls.weights = cls.dir / 'run' / 'weights.bin'

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()
        super().tearDownClass()

    def fails_with(self, code, name, *args):
        with self.assertRaises(CommandError) as ctx:
            call(name, *args)
        self.assertEqual(ctx.exception.returncode, code)

    def test_label_prints_partition_table(self):
        self.assertIn('Partition-1', self.label_output)
        self.assertIn('Total', self.label_output)
        samples = read_manifest(self.dataset)
        self.assertEqual(len(samples), 60)
        planted = set(load_regions(self.images))
        for sample in samples:
            self.assertEqual(sample.label == FL, sample.image_ref in planted)

    def test_label_skips_missing_images(self):
        manifest = self.dir / 'gappy.csv'
        rows = (self.images / 'images.csv').read_text().splitlines()
        header, first, rest = rows[0], rows[1].split(','), rows[2:]
        first[3] = MISSING
        manifest.write_text('\n'.join([header, ','.join(first), *rest]) + '\n')
        self.assertEqual(sum(not r.available for r in read_fetch_manifest(manifest)), 1)
        output = call('label', '--catalog', str(self.images / 'catalog.csv'), '--images', str(manifest),
                      '--out', str(self.dir / 'gappy_dataset.csv'))
        self.assertIn('59 samples labeled (1 timestamps without an image skipped)', output)

    def test_split(self):
        call('split', '--dataset', str(self.dataset), '--validation', '2', '--out-dir', str(self.dir / 'split'))
        training = read_manifest(self.dir / 'split' / 'train.csv')
        validation = read_manifest(self.dir / 'split' / 'validation.csv')
        self.assertEqual(len(training) + len(validation), 60)
        self.assertEqual({s.partition for s in validation}, {2})
        self.fails_with(2, 'split', '--dataset', str(self.dataset), '--validation', '3',
                        '--out-dir', str(self.dir / 'split3'))

    def test_train_writes_artifacts(self):
        self.assertIn('val TSS', self.train_output)
        self.assertTrue(self.weights.exists())
        history = json.loads((self.dir / 'run' / 'history.json').read_text())
        self.assertEqual(len(history['epochs']), 1)
        self.assertEqual(RunConfig.from_dict(json.loads((self.dir / 'run' / 'config.json').read_text())).epochs, 1)

    def test_parameter_audit(self):
        self.assertIn('parameter audit passed', call('train', '--architecture', 'tiny', '--audit'))
        self.assertIn('parameter audit passed', call('train', '--architecture', 'tiny', '--audit', '--materialize'))

    def test_evaluate_and_report(self):
        out = self.dir / 'evaluate'
        output = call('evaluate', '--config', str(self.config), '--weights', str(self.weights),
                      '--output-dir', str(out))
        self.assertIn('report written to', output)
        report = out / 'evaluate_p1_report.json'
        self.assertTrue((out / 'evaluate_p1_records.csv').exists())
        self.assertIn('TSS', call('report', '--report', str(report)))
        grid = out / 'grid_again.csv'
        call('report', '--records', str(out / 'evaluate_p1_records.csv'), '--grid', str(grid))
        self.assertTrue(grid.exists())

    def evaluate(self, name, *args):
        out = self.dir / name
        call('evaluate', '--config', str(self.config), '--weights', str(self.weights), '--output-dir', str(out),
             *args)
        return json.loads((out / 'evaluate_p1_report.json').read_text())

    def validation_targets(self):
        return load_dataset(self.dataset, self.images, 16).select([1]).targets

    def test_evaluate_output_is_byte_identical_across_runs(self):
        names = ('evaluate_p1_report.json', 'evaluate_p1_records.csv', 'evaluate_p1_grid.csv')
        self.evaluate('again')
        first = {name: (self.dir / 'again' / name).read_bytes() for name in names}
        self.evaluate('again')
        for name in names:
            self.assertEqual((self.dir / 'again' / name).read_bytes(), first[name], name)

    def test_evaluate_perfect_predictions(self):
        perfect = (self.validation_targets() == FL_TARGET).astype(float)
        with mock.patch('pipeline.crossval.fl_probabilities', return_value=perfect):
            report = self.evaluate('perfect')
        self.assertEqual(report['confusion']['fp'], 0)
        self.assertEqual(report['confusion']['fn'], 0)
        self.assertEqual(report['tss'], 1.0)
        self.assertEqual(report['hss'], 1.0)

    def test_evaluate_always_nf(self):
        never = np.zeros(len(self.validation_targets()))
        with mock.patch('pipeline.crossval.fl_probabilities', return_value=never):
            report = self.evaluate('never')
        self.assertEqual(report['confusion']['tp'], 0)
        self.assertGreater(report['confusion']['fn'], 0)
        self.assertEqual(report['subgroups']['X&M']['overall']['recall'], 0.0)

    def test_higher_threshold_never_raises_fl_recall(self):
        def fl_recall(report):
            cm = report['confusion']
            return cm['tp'] / (cm['tp'] + cm['fn'])

        low = self.evaluate('threshold_low', '--threshold', '0.5')
        high = self.evaluate('threshold_high', '--threshold', '0.9')
        self.assertEqual(high['threshold'], 0.9)
        self.assertLessEqual(fl_recall(high), fl_recall(low))

    def test_explain_writes_property_log(self):
        image = self.images / read_manifest(self.dataset)[0].image_ref
        out = self.dir / 'explain'
        output = call('explain', '--weights', str(self.weights), '--input-size', '16', '--image', str(image),
                      '--method', 'ig', '--method', 'deepshap', '--backgrounds', str(self.dataset),
                      '--image-dir', str(self.images), '--background-count', '3',
                      '--ig-steps', '32', '--out', str(out))
        self.assertIn('P(FL)', output)
        log = json.loads((out / f"{image.stem}_FL_properties.json").read_text())
        self.assertEqual(log['maps']['deepshap']['backgrounds'], 4)
        self.assertEqual(log['maps']['deepshap']['summation_to_delta'], 'pass')
        self.assertTrue((out / f"{image.stem}_ig_FL.png").exists())

    def test_explain_occlusion_window_options(self):
        image = self.images / read_manifest(self.dataset)[2].image_ref
        out = self.dir / 'occlusion'
        call('explain', '--weights', str(self.weights), '--input-size', '16', '--image', str(image),
             '--method', 'occlusion', '--occlusion-patch', '8', '--occlusion-stride', '4', '--out', str(out))
        entry = json.loads((out / f"{image.stem}_FL_properties.json").read_text())['maps']['occlusion']
        self.assertEqual((entry['patch'], entry['stride']), (8, 4))
        self.assertIn('f_input', entry)
        self.assertIn('f_baseline', entry)
        self.fails_with(1, 'explain', '--weights', str(self.weights), '--input-size', '16', '--image', str(image),
                        '--method', 'occlusion', '--out', str(out))

    def test_explain_through_queue(self):
        image = self.images / read_manifest(self.dataset)[1].image_ref
        output = call('explain', '--weights', str(self.weights), '--input-size', '16', '--image', str(image),
                      '--method', 'ggcam', '--target', 'NF', '--out', str(self.dir / 'queued'), '--queue')
        self.assertIn('property log', output)
        self.assertTrue((self.dir / 'queued' / f"{image.stem}_NF_properties.json").exists())

    def test_usage_errors_exit_with_one(self):
        self.fails_with(1, 'report')
        self.fails_with(1, 'explain', '--weights', str(self.weights), '--input-size', '16',
                        '--image', str(self.images / 'x.png'), '--method', 'deepshap', '--out', str(self.dir))
        self.fails_with(1, 'train', '--architecture', 'resnet', '--audit')

    @no_spacing()
    def test_all_missing_fetch_exits_with_two(self):
        session = mock.Mock()
        session.get.side_effect = requests.ConnectionError('offline')
        with mock.patch('pipeline.helioviewer.build_session', return_value=session):
            self.fails_with(2, 'fetch', '--start', '2015-01-01T00:00:00Z', '--end', '2015-01-02T00:00:00Z',
                            '--cadence', '24', '--cache-dir', str(self.dir / 'cache'))
        rows = read_fetch_manifest(self.dir / 'cache' / 'images.csv')
        self.assertEqual([r.status for r in rows], [MISSING, MISSING])

    def test_exit_codes(self):
        self.assertEqual(exit_code(ConfigError('x')), 1)
        self.assertEqual(exit_code(DataError('x')), 2)
        self.assertEqual(exit_code(PropertyViolation('x')), 3)


class StoreTests(TestCase):
    def test_label_and_evaluate_store_rows(self):
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)
            call('synthesize', '--out', str(tmp), '--count', '12', '--size', '16')
            call('label', '--catalog', str(tmp / 'catalog.csv'), '--images', str(tmp / 'images.csv'),
                 '--out', str(tmp / 'dataset.csv'), '--store')
            self.assertEqual(LabeledSample.objects.count(), 12)
            self.assertEqual(LabeledSample.objects.filter(label=FL).count(), FlareEvent.objects.count())
            self.assertTrue(all(s.responsible_event_id for s in LabeledSample.objects.filter(label=FL)))
            self.assertFalse(LabeledSample.objects.filter(label=NF, responsible_event__isnull=False).exists())

            events = FlareEvent.objects.count()
            call('label', '--catalog', str(tmp / 'catalog.csv'), '--images', str(tmp / 'images.csv'),
                 '--out', str(tmp / 'dataset.csv'), '--store')
            self.assertEqual(FlareEvent.objects.count(), events)
            self.assertEqual(LabeledSample.objects.count(), 12)
            self.assertTrue(all(s.responsible_event_id for s in LabeledSample.objects.filter(label=FL)))

            config = tmp / 'run.json'
            config.write_text(json.dumps({'input_size': 16, 'dataset': str(tmp / 'dataset.csv'),
                                          'image_dir': str(tmp), 'output_dir': str(tmp / 'out')}))
            weights = save_weights(Model.initialize(build_tiny(16)), tmp / 'weights.bin')
            call('evaluate', '--config', str(config), '--weights', str(weights), '--store')
            self.assertEqual(PredictionRecord.objects.count(), 12)


@unittest.skipUnless(SLOW, 'set FLARECAST_SLOW_TESTS=1 for the planted-feature run')
class PlantedFeatureTests(SimpleTestCase):
    def test_attribution_concentrates_on_planted_region(self):
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)
            call('synthesize', '--out', str(tmp), '--count', '640', '--size', '64')
            call('label', '--catalog', str(tmp / 'catalog.csv'), '--images', str(tmp / 'images.csv'),
                 '--out', str(tmp / 'dataset.csv'))
            images = load_dataset(tmp / 'dataset.csv', tmp)
            regions = load_regions(tmp)
        held_out = np.arange(len(images)) % 5 == 0
        self.assertEqual((int((~held_out).sum()), int(held_out.sum())), (512, 128))
        targets = images.targets
        config = RunConfig(epochs=10, batch_size=32, learning_rate=0.01, input_size=64)
        model, history = train(config, images.images[~held_out], targets[~held_out],
                               images.images[held_out], targets[held_out])
        self.assertGreaterEqual(history.epochs[-1].val_tss, 0.8)

        samples = [s for s, keep in zip(images.samples, held_out) if keep]
        planes = images.images[held_out]
        probabilities = fl_probabilities(model, planes)
        hits = [(s, plane) for s, plane, p in zip(samples, planes, probabilities)
                if s.label == FL and p >= config.threshold]
        self.assertTrue(hits)
        concentrated = 0
        for sample, plane in hits:
            region = regions[sample.image_ref]
            amap = guided_grad_cam(model, plane, 'FL')
            if mass_in_region(amap.values, region) >= 2 * region_share(region, plane.shape):
                concentrated += 1
        self.assertGreaterEqual(concentrated / len(hits), 0.8)

        for sample, plane in hits[:10]:
            occluded = occlusion_map(model, plane, 'FL', patch=8, stride=4)
            integrated = integrated_gradients(model, plane, 'FL', steps=64)
            self.assertGreater(rank_correlation(occluded.values.data, integrated.values.data), 0.0)
