import math
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from autodiff import ops
from autodiff.tensor import Tensor
from flarecast.exceptions import ConfigError, ShapeError, WeightsFormatError

from .architecture import (ArchitectureSpec, Flatten, Linear, build_spec, build_tiny,
                           build_vgg16_fulldisk, count_parameters)
from .model import Model, channel_duplicate, init_params
from .weights import load_weights, save_weights

VGG16_TWO_CLASS_PARAMETERS = 134_268_738


class ArchitectureTests(SimpleTestCase):
    def test_vgg16_parameter_total(self):
        spec = build_vgg16_fulldisk()
        self.assertEqual(count_parameters(spec), VGG16_TWO_CLASS_PARAMETERS)
        from_shapes = sum(math.prod(shape) for shape in spec.parameter_shapes().values())
        self.assertEqual(from_shapes, VGG16_TWO_CLASS_PARAMETERS)

    def test_vgg16_layer_shapes_at_512(self):
        spec = build_vgg16_fulldisk(512)
        self.assertEqual(spec.output_shape('pool5'), (512, 16, 16))
        self.assertEqual(spec.output_shape('avgpool'), (512, 7, 7))
        self.assertEqual(spec.output_shape('flatten'), (25088,))
        self.assertEqual(spec.output_shape('fc8'), (2,))
        self.assertEqual(spec.tap, 'pool5')

    def test_adaptive_pool_makes_classifier_size_independent(self):
        small = build_vgg16_fulldisk(64)
        self.assertEqual(small.parameter_shapes()['fc6.weight'], (4096, 25088))

    def test_tiny_parameter_total(self):
        spec = build_tiny(16)
        # conv 8x3x3x3+8, conv 16x8x3x3+16, fc 2x256+2
        self.assertEqual(count_parameters(spec), 224 + 1168 + 514)
        self.assertEqual(Model.initialize(spec).parameter_count(), count_parameters(spec))

    def test_final_layer_must_have_two_outputs(self):
        with self.assertRaises(ConfigError):
            ArchitectureSpec('bad', (Flatten(), Linear('fc', 3)), (1, 2, 2))

    def test_unknown_tap_rejected(self):
        with self.assertRaises(ConfigError):
            ArchitectureSpec('bad', (Flatten(), Linear('fc', 2)), (1, 2, 2), tap='conv9')

    def test_too_small_input_rejected(self):
        with self.assertRaises(ShapeError):
            build_tiny(2)

    def test_build_spec_unknown_name(self):
        with self.assertRaises(ConfigError):
            build_spec('resnet')
        self.assertEqual(build_spec('tiny', 32).input_shape, (3, 32, 32))


class InitTests(SimpleTestCase):
    def setUp(self):
        self.spec = build_tiny(16)

    def test_uniform_bounds_and_zero_bias(self):
        params = init_params(self.spec, seed=3)
        for name, tensor in params.items():
            if name.endswith('.bias'):
                self.assertFalse(tensor.data.any())
            else:
                bound = math.sqrt(1.0 / math.prod(tensor.shape[1:]))
                self.assertLessEqual(np.abs(tensor.data).max(), bound)

    def test_same_seed_same_parameters(self):
        a = init_params(self.spec, seed=7)
        b = init_params(self.spec, seed=7)
        c = init_params(self.spec, seed=8)
        for name in a:
            np.testing.assert_array_equal(a[name].data, b[name].data)
        self.assertFalse(np.array_equal(a['conv1_1.weight'].data, c['conv1_1.weight'].data))

    def test_unknown_scheme(self):
        with self.assertRaises(ConfigError):
            init_params(self.spec, scheme='xavier')

    def test_he_normal_scheme(self):
        params = init_params(self.spec, scheme='he_normal', seed=1)
        self.assertEqual(params['fc.weight'].shape, (2, 256))


class ForwardTests(SimpleTestCase):
    def setUp(self):
        self.spec = build_tiny(16)
        self.model = Model.initialize(self.spec, seed=0)
        self.gray = Tensor(np.random.default_rng(0).uniform(-1, 1, size=(2, 1, 16, 16)))

    def test_zero_seed_logits_finite(self):
        logits = self.model.forward_gray(self.gray)
        self.assertEqual(logits.shape, (2, 2))
        self.assertTrue(np.all(np.isfinite(logits.data)))

    def test_gray_forward_matches_duplicated_forward(self):
        tiled = Tensor(np.repeat(self.gray.data, 3, axis=1))
        np.testing.assert_array_equal(self.model.forward_gray(self.gray).data, self.model.forward(tiled).data)

    def test_channel_duplicate_copies(self):
        out = channel_duplicate(self.gray)
        self.assertEqual(out.shape, (2, 3, 16, 16))
        np.testing.assert_array_equal(out.data[:, 2], self.gray.data[:, 0])

    def test_cache_holds_tap(self):
        self.assertIsNone(self.model.tap)
        self.model.forward_gray(self.gray, cache=True)
        self.assertEqual(self.model.tap.shape, (2, 16, 4, 4))
        self.assertIn('fc', self.model.cache)

    def test_probabilities_sum_to_one(self):
        probs = self.model.probabilities(self.gray)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0)

    def test_wrong_channel_count(self):
        with self.assertRaises(ShapeError):
            self.model.forward(self.gray)

    def test_trainable_respects_frozen_layers(self):
        trainable = self.model.trainable(frozen=['conv1_1'])
        self.assertFalse(trainable.params['conv1_1.weight'].requires_grad)
        self.assertTrue(trainable.params['fc.weight'].requires_grad)
        with self.assertRaises(ConfigError):
            self.model.trainable(frozen=['conv7_1'])

    def test_missing_parameter_rejected(self):
        params = dict(self.model.params)
        del params['fc.bias']
        with self.assertRaisesMessage(ShapeError, 'fc.bias'):
            Model(self.spec, params)


class WeightsFileTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.path = Path(self.tmp.name) / 'tiny.weights'
        self.model = Model.initialize(build_tiny(16), seed=5)

    def test_round_trip_is_exact(self):
        save_weights(self.model, self.path)
        loaded = load_weights(self.model.spec, self.path)
        for name, tensor in self.model.params.items():
            np.testing.assert_array_equal(loaded.params[name].data, tensor.data)

    def test_f32_storage(self):
        save_weights(self.model, self.path, dtype='f32')
        loaded = load_weights(self.model.spec, self.path)
        np.testing.assert_allclose(loaded.params['fc.weight'].data, self.model.params['fc.weight'].data,
                                   rtol=1e-6)

    def test_mismatched_spec_names_layer(self):
        save_weights(self.model, self.path)
        wider = build_tiny(16, widths=(8, 12))
        with self.assertRaisesMessage(ShapeError, 'conv2_1'):
            load_weights(wider, self.path)

    def test_truncated_file(self):
        save_weights(self.model, self.path)
        data = self.path.read_bytes()
        self.path.write_bytes(data[:-10])
        with self.assertRaisesMessage(WeightsFormatError, 'payload length'):
            load_weights(self.model.spec, self.path)

    def test_loaded_model_predicts_like_original(self):
        save_weights(self.model, self.path)
        loaded = load_weights(self.model.spec, self.path)
        gray = Tensor(np.full((1, 1, 16, 16), 0.25))
        np.testing.assert_array_equal(ops.softmax(loaded.forward_gray(gray)), self.model.probabilities(gray))
