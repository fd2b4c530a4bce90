import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from PIL import Image

from autodiff import ops
from autodiff.tensor import Tensor
from flarecast.exceptions import ConfigError, PropertyViolation, ShapeError
from network.architecture import ArchitectureSpec, Flatten, Linear, build_tiny
from network.model import Model
from network.weights import save_weights
from pipeline.datasets import image_name, load_image, save_image, synthesize
from pipeline.serializers import RunConfig
from pipeline.trainer import train

from .methods import (AttributionMap, BaselineSet, Method, background_indices, cam_from_activations,
                      check_completeness, check_summation_to_delta, deep_shap, default_backgrounds, grad_cam,
                      guided_backprop, guided_grad_cam, integrated_gradients, mass_in_region, occlusion_map,
                      rank_correlation, region_share, summation_errors, target_index, top_k)
from .overlay import render_overlay, save_overlay
from .services import explain, explain_file, parse_methods
from .tasks import explain_image


def affine_model():
    """logit_FL = 2*x1 - x2 + 1 and logit_NF = 0 on a 1x2 image."""
    spec = ArchitectureSpec('affine', (Flatten(), Linear('fc', 2)), (1, 1, 2))
    return Model(spec, {
        'fc.weight': Tensor(np.array([[2.0, -1.0], [0.0, 0.0]])),
        'fc.bias': Tensor(np.array([1.0, 0.0])),
    })


def _pixels(batch: Tensor):
    flat = ops.reshape(batch, (batch.shape[0], 2))
    return ops.take(flat, (slice(None), slice(0, 1))), ops.take(flat, (slice(None), slice(1, 2)))


def _as_logits(column: Tensor) -> Tensor:
    return ops.linear(column, Tensor(np.array([[1.0], [0.0]])), Tensor(np.zeros(2)))


def product(batch: Tensor) -> Tensor:
    x1, x2 = _pixels(batch)
    return _as_logits(ops.mul(x1, x2))


def cubic(batch: Tensor) -> Tensor:
    """x1^2 * x2."""
    x1, x2 = _pixels(batch)
    return _as_logits(ops.mul(ops.mul(x1, x1), x2))


def one_relu(batch: Tensor) -> Tensor:
    """v . ReLU(W x) with W = [[1, -1], [1, 1]] and v = (1, -1)."""
    flat = ops.reshape(batch, (batch.shape[0], 2))
    hidden = ops.relu(ops.linear(flat, Tensor(np.array([[1.0, -1.0], [1.0, 1.0]])), Tensor(np.zeros(2))))
    return ops.linear(hidden, Tensor(np.array([[1.0, -1.0], [0.0, 0.0]])), Tensor(np.zeros(2)))


def constant(batch: Tensor) -> Tensor:
    flat = ops.flatten(batch)
    return ops.linear(flat, Tensor(np.zeros((2, flat.shape[1]))), Tensor(np.array([3.0, 1.0])))


def tiny_model(seed=0):
    return Model.initialize(build_tiny(16), seed=seed)


def random_image(seed=1, size=16):
    return np.random.default_rng(seed).uniform(-1.0, 1.0, size=(size, size))


class GradCamTests(SimpleTestCase):
    def test_hand_built_activations(self):
        activations = np.array([[[1.0, 0.0], [0.0, 1.0]], [[0.0, 2.0], [0.0, 0.0]]])
        gradients = np.stack([np.ones((2, 2)), -np.ones((2, 2))])
        np.testing.assert_array_equal(cam_from_activations(activations, gradients), [[1.0, 0.0], [0.0, 1.0]])

    def test_tiny_network_shapes(self):
        coarse, upsampled = grad_cam(tiny_model(), random_image(), 'FL')
        self.assertEqual(coarse.shape, (4, 4))
        self.assertEqual(upsampled.shape, (16, 16))
        self.assertTrue((coarse >= 0).all())

    def test_needs_a_tapped_network(self):
        with self.assertRaises(ConfigError):
            grad_cam(affine_model(), np.ones((1, 2)), 'FL')
        with self.assertRaises(ConfigError):
            grad_cam(product, np.ones((1, 2)), 'FL')

    def test_guided_grad_cam_vanishes_outside_cam(self):
        model, image = tiny_model(), random_image()
        _, upsampled = grad_cam(model, image, 'FL')
        amap = guided_grad_cam(model, image, 'FL')
        self.assertEqual(amap.method, Method.GUIDED_GRAD_CAM)
        self.assertTrue((amap.numpy()[upsampled == 0] == 0).all())


class GuidedBackpropTests(SimpleTestCase):
    def test_linear_network_gives_plain_gradient(self):
        np.testing.assert_allclose(guided_backprop(affine_model(), np.ones((1, 2)), 'FL'), [[2.0, -1.0]])

    def test_negative_signal_is_stopped_at_relu(self):
        # Plain gradient here is (0, -2).
        np.testing.assert_allclose(guided_backprop(one_relu, np.array([[2.0, 1.0]]), 'FL'), [[1.0, -1.0]])


class IntegratedGradientsTests(SimpleTestCase):
    def test_affine_function_from_zero(self):
        amap = integrated_gradients(affine_model(), np.ones((1, 2)), 'FL')
        np.testing.assert_allclose(amap.numpy(), [[2.0, -1.0]], atol=1e-12)
        self.assertAlmostEqual(amap.completeness_residual, 0.0, places=10)
        self.assertEqual(amap.metadata['baseline'], 'zero')

    def test_product_function(self):
        amap = integrated_gradients(product, np.array([[2.0, 3.0]]), 'FL')
        np.testing.assert_allclose(amap.numpy(), [[3.0, 3.0]], atol=1e-9)
        self.assertAlmostEqual(amap.numpy().sum(), 6.0, places=9)

    def test_residual_shrinks_with_more_steps(self):
        image = np.array([[2.0, 3.0]])
        coarse = integrated_gradients(cubic, image, 'FL', steps=64)
        fine = integrated_gradients(cubic, image, 'FL', steps=512)
        # Midpoint rule on x1^2 x2 misses by f / (4 m^2).
        self.assertAlmostEqual(coarse.completeness_residual, -12.0 / (4 * 64 ** 2), places=9)
        self.assertLess(abs(fine.completeness_residual), abs(coarse.completeness_residual))
        check_completeness(integrated_gradients(cubic, image, 'FL'))

    def test_completeness_on_untrained_tiny_network(self):
        model = tiny_model()
        for seed in range(3):
            amap = integrated_gradients(model, random_image(seed), 'FL')
            check_completeness(amap)

    def test_target_class_changes_the_map(self):
        model, image = tiny_model(), random_image()
        fl = integrated_gradients(model, image, 'FL', steps=32)
        nf = integrated_gradients(model, image, 'NF', steps=32)
        self.assertEqual(nf.target_class, 'NF')
        self.assertFalse(np.array_equal(fl.numpy(), nf.numpy()))

    def test_rejects_bad_arguments(self):
        with self.assertRaises(ConfigError):
            integrated_gradients(product, np.ones((1, 2)), 'FL', steps=0)
        with self.assertRaises(ShapeError):
            integrated_gradients(product, np.ones((1, 2)), 'FL', baseline=np.ones((2, 2)))
        with self.assertRaises(ConfigError):
            integrated_gradients(product, np.ones((1, 2)), 'M')

    def test_violation_raises(self):
        amap = integrated_gradients(cubic, np.array([[2.0, 3.0]]), 'FL', steps=1)
        with self.assertRaises(PropertyViolation):
            check_completeness(amap)


class TrainedNetworkCompletenessTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        with tempfile.TemporaryDirectory() as tmp:
            planted = synthesize(tmp, count=48, size=16, seed=5)
            images = np.stack([load_image(Path(tmp) / image_name(t)) for t in planted.timestamps])
        targets = np.array([0 if image_name(t) in planted.regions else 1 for t in planted.timestamps])
        config = RunConfig(epochs=4, batch_size=16, learning_rate=0.05, input_size=16, augmentation=False)
        cls.model, _ = train(config, images, targets)
        cls.inputs = [random_image(seed) for seed in range(100, 150)]

    def test_trained_biases_are_not_zero(self):
        self.assertTrue(np.abs(self.model.params['fc.bias'].data).max() > 0)

    def test_completeness_on_fifty_inputs(self):
        for image in self.inputs:
            check_completeness(integrated_gradients(self.model, image, 'FL'))

    def test_residual_shrinks_with_more_steps(self):
        coarse = [abs(integrated_gradients(self.model, image, 'FL', steps=64).completeness_residual)
                  for image in self.inputs]
        fine = [abs(integrated_gradients(self.model, image, 'FL', steps=512).completeness_residual)
                for image in self.inputs]
        self.assertLessEqual(np.mean(fine), 2 * np.mean(coarse) + 1e-12)


class DeepShapTests(SimpleTestCase):
    def test_linear_network_matches_gradient_times_input(self):
        image = np.array([[1.0, 1.0]])
        amap = deep_shap(affine_model(), image, 'FL', BaselineSet.zero(image.shape))
        np.testing.assert_allclose(amap.numpy(), [[2.0, -1.0]], atol=1e-8)

    def test_summation_to_delta_on_tiny_network(self):
        image = random_image()
        backgrounds = BaselineSet.provided([random_image(s) for s in (10, 11, 12)], include_zero=True)
        amap = deep_shap(tiny_model(), image, 'FL', backgrounds)
        self.assertEqual(amap.metadata['backgrounds'], 4)
        errors = check_summation_to_delta(amap)
        self.assertTrue((errors <= 1e-6).all())

    def test_violation_raises(self):
        amap = AttributionMap(Tensor(np.ones((2, 2))), Method.DEEP_SHAP, 'FL',
                              metadata={'deltas': [1.0], 'residuals': [0.5]})
        np.testing.assert_allclose(summation_errors(amap), [0.5])
        with self.assertRaises(PropertyViolation):
            check_summation_to_delta(amap)

    def test_needs_backgrounds(self):
        with self.assertRaises(ConfigError):
            deep_shap(affine_model(), np.ones((1, 2)), 'FL', None)


class BaselineSetTests(SimpleTestCase):
    def test_empty_and_mismatched(self):
        with self.assertRaises(ConfigError):
            BaselineSet(())
        with self.assertRaises(ShapeError):
            BaselineSet.provided([np.zeros((2, 2)), np.zeros((3, 3))])

    def test_default_backgrounds_add_zero_image(self):
        nf = [np.full((2, 2), float(i)) for i in range(20)]
        backgrounds = default_backgrounds(nf, count=10, seed=0)
        self.assertEqual(len(backgrounds), 11)
        self.assertTrue(any(not image.any() for image in backgrounds))

    def test_indices_are_seeded(self):
        self.assertEqual(background_indices(50, 10, seed=3), background_indices(50, 10, seed=3))
        self.assertEqual(len(background_indices(5, 10)), 5)


class OcclusionTests(SimpleTestCase):
    def test_constant_network_gives_zero_map(self):
        amap = occlusion_map(constant, np.ones((4, 4)), 'FL', patch=2, stride=1)
        np.testing.assert_array_equal(amap.numpy(), np.zeros((4, 4)))

    def test_whole_image_patch(self):
        model, image = tiny_model(), random_image()
        amap = occlusion_map(model, image, 'FL', patch=16, stride=1)
        expected = amap.metadata['f_input'] - float(model.forward_gray(Tensor(np.zeros((1, 1, 16, 16)))).data[0, 0])
        np.testing.assert_allclose(amap.numpy(), np.full((16, 16), expected))

    def test_rejects_bad_patch(self):
        with self.assertRaises(ConfigError):
            occlusion_map(constant, np.ones((4, 4)), 'FL', patch=5, stride=1)
        with self.assertRaises(ConfigError):
            occlusion_map(constant, np.ones((4, 4)), 'FL', patch=2, stride=0)


class MapToolsTests(SimpleTestCase):
    def test_uniform_map_mass_equals_area_share(self):
        region = (0, 2, 0, 4)
        self.assertAlmostEqual(mass_in_region(np.ones((4, 4)), region), 0.5)
        self.assertAlmostEqual(region_share(region, (4, 4)), 0.5)

    def test_top_k_by_magnitude(self):
        values = np.array([[0.1, -3.0], [2.0, 0.0]])
        self.assertEqual(top_k(values, 2), [(0, 1, -3.0), (1, 0, 2.0)])

    def test_rank_correlation(self):
        a = np.arange(9.0).reshape(3, 3)
        self.assertAlmostEqual(rank_correlation(a, 2 * a), 1.0)
        self.assertAlmostEqual(rank_correlation(a, -a), -1.0)
        self.assertEqual(rank_correlation(a, np.zeros((3, 3))), 0.0)

    def test_target_index(self):
        self.assertEqual(target_index('FL'), 0)
        self.assertEqual(target_index('NF'), 1)

    def test_map_must_be_two_dimensional(self):
        with self.assertRaises(ShapeError):
            AttributionMap(Tensor(np.ones((1, 2, 2))), Method.OCCLUSION, 'FL')

    def test_save_and_load(self):
        amap = integrated_gradients(product, np.array([[2.0, 3.0]]), 'FL', steps=8)
        with tempfile.TemporaryDirectory() as tmp:
            path = amap.save(Path(tmp) / 'ig.raster')
            loaded = AttributionMap.load(path)
        np.testing.assert_array_equal(loaded.numpy(), amap.numpy())
        self.assertEqual(loaded.method, Method.INTEGRATED_GRADIENTS)
        self.assertEqual(loaded.metadata['steps'], 8)


class OverlayTests(SimpleTestCase):
    values = np.array([[1.0, -1.0], [0.0, 0.5]])

    def test_diverging_colours(self):
        rgb = render_overlay(self.values)
        self.assertEqual(rgb.dtype, np.uint8)
        np.testing.assert_array_equal(rgb[0, 0], [255, 0, 0])
        np.testing.assert_array_equal(rgb[0, 1], [0, 0, 255])
        np.testing.assert_array_equal(rgb[1, 0], [255, 255, 255])
        np.testing.assert_array_equal(rgb[1, 1], [255, 128, 128])

    def test_blend_over_gray(self):
        rgb = render_overlay(self.values, background=np.zeros((2, 2)))
        np.testing.assert_array_equal(rgb[1, 0], [128, 128, 128])
        np.testing.assert_array_equal(rgb[0, 0], [255, 0, 0])
        np.testing.assert_array_equal(rgb[1, 1], [192, 128, 128])

    def test_zero_map_is_white(self):
        np.testing.assert_array_equal(render_overlay(np.zeros((3, 3))), np.full((3, 3, 3), 255))

    def test_png(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = save_overlay(self.values, Path(tmp) / 'map.png')
            with Image.open(path) as image:
                self.assertEqual(image.mode, 'RGB')
                np.testing.assert_array_equal(np.asarray(image), render_overlay(self.values))


class ExplainServiceTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        self.model = tiny_model()
        self.weights = save_weights(self.model, self.dir / 'weights.bin')
        self.image = save_image(random_image(), self.dir / 'sample.png')

    def tearDown(self):
        self.tmp.cleanup()

    def test_parse_methods(self):
        self.assertEqual(parse_methods(['ig', 'ggcam']), (Method.INTEGRATED_GRADIENTS, Method.GUIDED_GRAD_CAM))
        with self.assertRaises(ConfigError):
            parse_methods(['lime'])

    def test_deep_shap_needs_backgrounds(self):
        with self.assertRaises(ConfigError):
            explain(self.model, random_image(), methods=(Method.DEEP_SHAP,))

    def test_writes_maps_and_property_log(self):
        backgrounds = BaselineSet.provided([random_image(5)], include_zero=True)
        log_path, log = explain_file(self.weights, 'tiny', self.image, self.dir / 'out', input_size=16,
                                     backgrounds=backgrounds, ig_steps=32, region=(0, 8, 0, 8))
        self.assertEqual(log_path.name, 'sample_FL_properties.json')
        self.assertEqual(json.loads(log_path.read_text()), log)
        self.assertIn(log['predicted_label'], ('FL', 'NF'))
        self.assertEqual(set(log['maps']), {'ggcam', 'ig', 'deepshap'})
        self.assertEqual(log['maps']['deepshap']['summation_to_delta'], 'pass')
        self.assertEqual(log['maps']['ig']['completeness'], 'pass')
        self.assertEqual(log['maps']['ig']['region_share'], 0.25)
        for method in ('ggcam', 'ig', 'deepshap'):
            self.assertTrue((self.dir / 'out' / f"sample_{method}_FL.raster").exists())
            self.assertTrue((self.dir / 'out' / f"sample_{method}_FL.png").exists())

    def test_saliency_entries_log_logits_and_occlusion_window(self):
        _, log = explain_file(self.weights, 'tiny', self.image, self.dir / 'occ', input_size=16,
                              methods=(Method.GUIDED_GRAD_CAM, Method.OCCLUSION),
                              occlusion_patch=4, occlusion_stride=2)
        occlusion, ggcam = log['maps']['occlusion'], log['maps']['ggcam']
        self.assertEqual((occlusion['patch'], occlusion['stride']), (4, 2))
        for entry in (occlusion, ggcam):
            self.assertEqual(entry['baseline'], 'zero')
            # Untrained biases are zero, so the blank image scores zero.
            self.assertEqual(entry['f_baseline'], 0.0)
        self.assertAlmostEqual(occlusion['f_input'], ggcam['f_input'], places=10)

    def test_task_runs_eagerly(self):
        background = save_image(random_image(6), self.dir / 'nf.png')
        log_path = explain_image.delay(str(self.weights), 'tiny', str(self.image), str(self.dir / 'task'),
                                       ['ig', 'deepshap'], 'NF', 16, [str(background)], 16).get()
        log = json.loads(Path(log_path).read_text())
        self.assertEqual(log['maps']['deepshap']['backgrounds'], 2)
        self.assertEqual(log['maps']['ig']['target_class'], 'NF')
