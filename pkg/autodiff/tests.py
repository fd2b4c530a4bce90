import io
import math
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from flarecast.exceptions import DataError, NonFiniteError, ShapeError, TapeError, WeightsFormatError

from . import ops
from .backward import backward
from .gradcheck import analytic_gradients, check_gradients
from .modes import GUIDED, Rescale
from .raster import load_raster, read_raster, save_raster, write_raster
from .tensor import Tape, Tensor


def _grad_of(fn, *arrays, mode=None, reference_arrays=None):
    """Input gradient of fn(*inputs).sum() under ``mode``."""
    inputs = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        total = fn(*inputs).sum()
    kwargs = {}
    if reference_arrays is not None:
        with Tape() as ref_tape:
            fn(*[Tensor(a) for a in reference_arrays]).sum()
        kwargs['mode'] = Rescale(ref_tape)
    elif mode is not None:
        kwargs['mode'] = mode
    grads = backward(tape, total, **kwargs)
    return [grads.wrt(t) for t in inputs]


class TensorTests(SimpleTestCase):
    def test_non_finite_data_rejected(self):
        with self.assertRaises(NonFiniteError):
            Tensor([1.0, float('nan')])
        with self.assertRaises(NonFiniteError):
            Tensor([float('inf')])

    def test_data_is_read_only(self):
        t = Tensor(np.zeros(3))
        with self.assertRaises(ValueError):
            t.data[0] = 1.0

    def test_shape_matches_data_length(self):
        t = Tensor(np.arange(6.0).reshape(2, 3))
        self.assertEqual(t.shape, (2, 3))
        self.assertEqual(int(np.prod(t.shape)), t.data.size)

    def test_ops_outside_a_tape_are_not_recorded(self):
        x = Tensor([1.0, 2.0])
        y = ops.relu(x)
        with Tape() as tape:
            z = ops.relu(y)
        self.assertEqual(len(tape), 1)
        self.assertIn(z, tape)
        self.assertNotIn(y, tape)


class ForwardOpTests(SimpleTestCase):
    def test_conv2d_sum_of_ones(self):
        out = ops.conv2d(Tensor.ones((1, 1, 3, 3)), Tensor.ones((1, 1, 3, 3)), Tensor.zeros((1,)),
                         stride=1, padding=1)
        self.assertEqual(out.shape, (1, 1, 3, 3))
        self.assertEqual(out.data[0, 0, 1, 1], 9.0)
        self.assertEqual(out.data[0, 0, 0, 0], 4.0)

    def test_conv2d_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(2, 1, 5, 6)))
        kernel = np.zeros((1, 1, 3, 3))
        kernel[0, 0, 1, 1] = 1.0
        out = ops.conv2d(x, Tensor(kernel), Tensor.zeros((1,)), stride=1, padding=1)
        np.testing.assert_array_equal(out.data, x.data)

    def test_conv2d_output_size(self):
        out = ops.conv2d(Tensor.ones((1, 2, 9, 9)), Tensor.ones((4, 2, 3, 3)), Tensor.zeros((4,)),
                         stride=2, padding=1)
        self.assertEqual(out.shape, (1, 4, 5, 5))

    def test_conv2d_non_exact_output_size(self):
        with self.assertRaises(ShapeError):
            ops.conv2d(Tensor.ones((1, 1, 8, 8)), Tensor.ones((1, 1, 3, 3)), Tensor.zeros((1,)),
                       stride=2, padding=0)

    def test_conv2d_channel_mismatch(self):
        with self.assertRaises(ShapeError):
            ops.conv2d(Tensor.ones((1, 2, 4, 4)), Tensor.ones((1, 3, 3, 3)), Tensor.zeros((1,)))

    def test_relu(self):
        np.testing.assert_array_equal(ops.relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])

    def test_adaptive_avg_pool_of_constant(self):
        out = ops.adaptive_avg_pool2d(Tensor(np.full((1, 2, 14, 14), 3.5)), (7, 7))
        self.assertEqual(out.shape, (1, 2, 7, 7))
        np.testing.assert_allclose(out.data, 3.5)

    def test_adaptive_avg_pool_overlapping_cells(self):
        x = np.arange(10.0).reshape(1, 1, 1, 10)
        out = ops.adaptive_avg_pool2d(Tensor(np.repeat(x, 10, axis=2)), (1, 7))
        # column cells [floor(j*10/7), ceil((j+1)*10/7))
        expected = [np.mean(np.arange(math.floor(j * 10 / 7), math.ceil((j + 1) * 10 / 7)))
                    for j in range(7)]
        np.testing.assert_allclose(out.data[0, 0, 0], expected)

    def test_log_softmax_symmetry(self):
        out = ops.log_softmax(Tensor([[0.0, 0.0]]))
        np.testing.assert_allclose(out.data, [[-math.log(2), -math.log(2)]])

    def test_log_softmax_rows_normalize(self):
        rng = np.random.default_rng(1)
        out = ops.log_softmax(Tensor(rng.normal(size=(5, 2)) * 10))
        np.testing.assert_allclose(np.exp(out.data).sum(axis=1), 1.0, atol=1e-12)

    def test_maxpool_ties_route_to_first_maximum(self):
        x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
        with Tape() as tape:
            out = ops.maxpool2d(x).sum()
        grad = backward(tape, out).wrt(x)
        np.testing.assert_array_equal(grad[0, 0], [[1.0, 0.0], [0.0, 0.0]])

    def test_maxpool_floor_mode(self):
        out = ops.maxpool2d(Tensor(np.arange(25.0).reshape(1, 1, 5, 5)))
        np.testing.assert_array_equal(out.data[0, 0], [[6.0, 8.0], [16.0, 18.0]])


class NllLossTests(SimpleTestCase):
    def test_certain_true_class_costs_nothing(self):
        loss = ops.nll_loss(Tensor([[math.log(1.0), math.log(1e-12)]]), [0], Tensor([1.0, 1.0]))
        self.assertAlmostEqual(loss.item(), 0.0)

    def test_uniform_predictions(self):
        log_probs = Tensor(np.log([[0.5, 0.5], [0.5, 0.5]]))
        loss = ops.nll_loss(log_probs, [0, 1], Tensor([1.0, 1.0]))
        self.assertAlmostEqual(loss.item(), math.log(2), places=12)

    def test_weighted_mean_is_normalized_by_applied_weights(self):
        log_probs = Tensor(np.log([[0.5, 0.5], [0.5, 0.5]]))
        loss = ops.nll_loss(log_probs, [0, 1], Tensor([2.0, 1.0]))
        self.assertAlmostEqual(loss.item(), (2 * math.log(2) + math.log(2)) / 3, places=12)

    def test_weighting_changes_the_loss(self):
        log_probs = Tensor(np.log([[0.9, 0.1], [0.4, 0.6]]))
        plain = ops.nll_loss(log_probs, [0, 1], Tensor([1.0, 1.0])).item()
        weighted = ops.nll_loss(log_probs, [0, 1], Tensor([1.0, 3.0])).item()
        self.assertGreater(weighted, plain)

    def test_target_out_of_range(self):
        with self.assertRaises(DataError):
            ops.nll_loss(Tensor(np.zeros((1, 2))), [2], Tensor([1.0, 1.0]))


class BackwardTests(SimpleTestCase):
    def test_scale(self):
        x = Tensor([5.0], requires_grad=True)
        with Tape() as tape:
            y = (x * 3.0).sum()
        self.assertEqual(backward(tape, y).wrt(x)[0], 3.0)

    def test_detached_output_rejected(self):
        x = Tensor([1.0], requires_grad=True)
        with Tape() as tape:
            ops.relu(x)
        with self.assertRaises(TapeError):
            backward(tape, Tensor([1.0]))

    def test_non_scalar_output_needs_seed(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            y = x * 2.0
        with self.assertRaises(TapeError):
            backward(tape, y)
        grads = backward(tape, y, seed=np.array([1.0, 0.0]))
        np.testing.assert_array_equal(grads.wrt(x), [2.0, 0.0])

    def test_each_node_is_visited_once_with_shared_inputs(self):
        x = Tensor([2.0], requires_grad=True)
        with Tape() as tape:
            y = x * 3.0
            z = (y + y).sum()
        self.assertEqual(backward(tape, z).wrt(x)[0], 6.0)

    def test_guided_relu_rule(self):
        cases = [(3.0, -1.0, 0.0), (3.0, 2.0, 2.0), (-2.0, 1.0, 0.0)]
        for forward_input, upstream, expected in cases:
            x = Tensor([forward_input], requires_grad=True)
            with Tape() as tape:
                y = ops.relu(x)
            grads = backward(tape, y, mode=GUIDED, seed=np.array([upstream]))
            self.assertEqual(grads.wrt(x)[0], expected, (forward_input, upstream))

    def test_rescale_relu_multiplier(self):
        x = Tensor([3.0], requires_grad=True)
        with Tape() as tape:
            y = ops.relu(x).sum()
        with Tape() as ref_tape:
            ops.relu(Tensor([-1.0])).sum()
        multiplier = backward(tape, y, mode=Rescale(ref_tape)).wrt(x)[0]
        self.assertAlmostEqual(multiplier, 0.75)
        self.assertAlmostEqual(multiplier * (3.0 - (-1.0)), 3.0)

    def test_rescale_falls_back_to_gradient_for_tiny_delta(self):
        x = Tensor([2.0], requires_grad=True)
        with Tape() as tape:
            y = ops.relu(x).sum()
        with Tape() as ref_tape:
            ops.relu(Tensor([2.0 + 1e-9])).sum()
        self.assertEqual(backward(tape, y, mode=Rescale(ref_tape)).wrt(x)[0], 1.0)

    def test_rescale_rejects_mismatched_reference(self):
        x = Tensor([1.0], requires_grad=True)
        with Tape() as tape:
            y = ops.relu(x).sum()
        with Tape() as ref_tape:
            (Tensor([0.0]) * 2.0).sum()
        with self.assertRaises(TapeError):
            backward(tape, y, mode=Rescale(ref_tape))


def _small_cnn(params):
    w1, b1, w2, b2, fc_w, fc_b = params

    def net(x):
        h = ops.relu(ops.conv2d(ops.repeat_channels(x, 3), w1, b1, stride=1, padding=1))
        h = ops.maxpool2d(h)
        h = ops.relu(ops.conv2d(h, w2, b2, stride=1, padding=1))
        h = ops.adaptive_avg_pool2d(h, (2, 2))
        return ops.linear(ops.flatten(h), fc_w, fc_b)[:, 0]
    return net


def _random_cnn_params(rng):
    return (
        Tensor(rng.normal(scale=0.5, size=(4, 3, 3, 3))), Tensor(rng.normal(scale=0.1, size=4)),
        Tensor(rng.normal(scale=0.5, size=(5, 4, 3, 3))), Tensor(rng.normal(scale=0.1, size=5)),
        Tensor(rng.normal(scale=0.5, size=(2, 20))), Tensor(rng.normal(scale=0.1, size=2)),
    )


class GradientCheckTests(SimpleTestCase):
    """Standard-mode gradients against central differences (h=1e-5, float64)."""

    def test_conv2d_input_gradient(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.normal(size=(2, 3, 8, 8)))
        w = Tensor(rng.normal(size=(4, 3, 3, 3)))
        b = Tensor(rng.normal(size=4))
        errors = check_gradients(lambda x_: ops.conv2d(x_, w, b, stride=1, padding=1), [x])
        self.assertLess(errors[0], 1e-4)

    def test_op_suite_over_random_shapes(self):
        rng = np.random.default_rng(3)
        cases = []
        for stride, padding, size in [(1, 0, 5), (1, 1, 4), (2, 1, 5), (1, 2, 3), (3, 0, 9)]:
            kernel = 3
            cases.append((
                f"conv2d s{stride} p{padding} {size}",
                lambda x, w, b, s=stride, p=padding: ops.conv2d(x, w, b, stride=s, padding=p),
                [rng.normal(size=(2, 2, size, size)), rng.normal(size=(3, 2, kernel, kernel)),
                 rng.normal(size=3)],
            ))
        for shape in [(2, 3), (1, 2, 4, 4), (7,)]:
            cases.append((f"relu {shape}", ops.relu, [rng.normal(size=shape)]))
        for shape in [(1, 2, 4, 4), (2, 1, 6, 5), (1, 3, 3, 3)]:
            cases.append((f"maxpool {shape}", ops.maxpool2d, [rng.normal(size=shape)]))
        for shape, out in [((1, 2, 14, 14), (7, 7)), ((2, 1, 10, 9), (4, 4)), ((1, 1, 5, 5), (7, 7))]:
            cases.append((f"adaptive pool {shape}->{out}",
                          lambda x, o=out: ops.adaptive_avg_pool2d(x, o), [rng.normal(size=shape)]))
        for n, fan_in, fan_out in [(3, 5, 2), (1, 8, 4)]:
            cases.append((f"linear {n}x{fan_in}->{fan_out}", ops.linear,
                          [rng.normal(size=(n, fan_in)), rng.normal(size=(fan_out, fan_in)),
                           rng.normal(size=fan_out)]))
        for shape in [(4, 2), (2, 5)]:
            cases.append((f"log_softmax {shape}",
                          lambda x: ops.log_softmax(x) * Tensor(np.linspace(0.5, 2.0, x.size).reshape(x.shape)),
                          [rng.normal(size=shape)]))
        cases.append(("nll_loss", lambda lp: ops.nll_loss(lp, [0, 1, 1], Tensor([1.3, 0.7])),
                      [rng.normal(size=(3, 2))]))
        channel_weights = Tensor(rng.normal(size=(1, 3, 3, 3)))
        cases.append(("repeat_channels", lambda x: ops.repeat_channels(x, 3) * channel_weights,
                      [rng.normal(size=(1, 1, 3, 3))]))
        cases.append(("mul", ops.mul, [rng.normal(size=(3, 2)), rng.normal(size=(3, 2))]))
        cases.append(("take", lambda x: x[:, 1] * 2.0, [rng.normal(size=(3, 2))]))
        self.assertGreaterEqual(len(cases), 20)

        for name, fn, arrays in cases:
            with self.subTest(name):
                errors = check_gradients(fn, [Tensor(a) for a in arrays])
                self.assertLess(max(errors), 1e-4)

    def test_linearity_of_backward(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(1, 1, 6, 6))
        net_f = _small_cnn(_random_cnn_params(rng))
        net_g = _small_cnn(_random_cnn_params(rng))
        a, b = 1.7, -0.4
        combined = _grad_of(lambda t: net_f(t) * a + net_g(t) * b, x)[0]
        separate = a * _grad_of(net_f, x)[0] + b * _grad_of(net_g, x)[0]
        np.testing.assert_allclose(combined, separate, atol=1e-10)

    def test_small_cnn_input_gradient(self):
        rng = np.random.default_rng(5)
        net = _small_cnn(_random_cnn_params(rng))
        errors = check_gradients(net, [Tensor(rng.normal(size=(1, 1, 6, 6)))])
        self.assertLess(errors[0], 1e-4)


class GuidedModeTests(SimpleTestCase):
    def test_identical_to_standard_without_relu(self):
        rng = np.random.default_rng(6)
        w, b = Tensor(rng.normal(size=(2, 1, 3, 3))), Tensor(rng.normal(size=2))

        def net(x):
            return ops.adaptive_avg_pool2d(ops.conv2d(x, w, b, padding=1), (2, 2))

        x = rng.normal(size=(1, 1, 4, 4))
        np.testing.assert_array_equal(_grad_of(net, x, mode=GUIDED)[0], _grad_of(net, x)[0])

    def test_bounded_by_standard_gradient_at_relu(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(1, 1, 6, 6))
        weights = Tensor(rng.normal(size=(1, 1, 6, 6)))

        def net(t):
            return ops.relu(t) * weights

        guided = _grad_of(net, x, mode=GUIDED)[0]
        standard = _grad_of(net, x)[0]
        self.assertTrue(np.all(guided >= np.minimum(0.0, standard)))
        self.assertTrue(np.all(guided <= np.maximum(0.0, standard)))


class RescaleModeTests(SimpleTestCase):
    def test_summation_to_delta_on_small_cnn(self):
        rng = np.random.default_rng(8)
        for trial in range(5):
            net = _small_cnn(_random_cnn_params(rng))
            x = rng.normal(size=(1, 1, 6, 6))
            reference = rng.normal(size=(1, 1, 6, 6)) * 0.5
            multipliers = _grad_of(net, x, reference_arrays=[reference])[0]
            contribution = float(((x - reference) * multipliers).sum())
            delta = float(net(Tensor(x)).data.sum() - net(Tensor(reference)).data.sum())
            with self.subTest(trial=trial):
                self.assertLessEqual(abs(contribution - delta), 1e-6 * max(abs(delta), 1e-12) + 1e-12)

    def test_equals_gradient_on_affine_network(self):
        rng = np.random.default_rng(9)
        w, b = Tensor(rng.normal(size=(1, 4))), Tensor(rng.normal(size=1))

        def net(x):
            return ops.linear(x, w, b)

        x = rng.normal(size=(1, 4))
        rescaled = _grad_of(net, x, reference_arrays=[np.zeros((1, 4))])[0]
        np.testing.assert_allclose(rescaled, _grad_of(net, x)[0], atol=1e-12)


class RasterTests(SimpleTestCase):
    def test_round_trip_is_bitwise(self):
        rng = np.random.default_rng(10)
        array = rng.normal(size=(3, 4, 5))
        with tempfile.TemporaryDirectory() as tmp:
            path = save_raster(Path(tmp) / 'map.raster', array)
            loaded = load_raster(path)
        self.assertEqual(loaded.tobytes(), array.tobytes())

    def test_header_is_compact_json_line(self):
        stream = io.BytesIO()
        write_raster(stream, np.zeros((2, 3)), dtype='f32')
        self.assertTrue(stream.getvalue().startswith(b'{"dtype":"f32","shape":[2,3]}\n'))
        self.assertEqual(len(stream.getvalue()), len(b'{"dtype":"f32","shape":[2,3]}\n') + 6 * 4)

    def test_truncated_payload(self):
        stream = io.BytesIO()
        write_raster(stream, np.ones((4, 4)))
        truncated = io.BytesIO(stream.getvalue()[:-3])
        with self.assertRaisesRegex(WeightsFormatError, 'payload length'):
            read_raster(truncated)

    def test_malformed_header(self):
        with self.assertRaises(WeightsFormatError):
            read_raster(io.BytesIO(b'{"dtype":"f16","shape":[1]}\n\x00\x00'))
        with self.assertRaises(WeightsFormatError):
            read_raster(io.BytesIO(b'not json\n'))


class AnalyticGradientTests(SimpleTestCase):
    def test_product_rule(self):
        grads = analytic_gradients(ops.mul, [Tensor([2.0]), Tensor([3.0])])
        self.assertEqual(grads[0][0], 3.0)
        self.assertEqual(grads[1][0], 2.0)
