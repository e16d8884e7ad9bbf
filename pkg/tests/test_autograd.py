import numpy as np
import pytest

from histotnet.errors import ValidationError
from histotnet.nn import autograd as ag
from histotnet.nn.autograd import Tensor
from histotnet.nn.boundary import boundary_weights
from histotnet.nn.gradcheck import check_gradients, relative_error
from histotnet.nn.losses import binary_logloss, softmax_ce, weighted_boundary_logloss


def _tensor(shape, seed, scale=1.0):
    return Tensor(np.random.default_rng(seed).normal(scale=scale, size=shape), requires_grad=True)


def _projected(op, *tensors, seed=99):
    """Scalar loss Σ op(...)·R for a fixed random R."""
    shape = op(*tensors).shape
    projection = np.random.default_rng(seed).normal(size=shape)
    return lambda: ag.weighted_sum(op(*tensors), projection)


def _assert_gradients(loss_fn, tensors, tolerance=1e-4):
    report = check_gradients(loss_fn, tensors, tolerance=tolerance, max_entries=40)
    assert report.passed, report.errors
    assert report.checked_entries > 0


def test_relative_error_handles_zero_vectors():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert relative_error(np.ones(3), -np.ones(3)) == pytest.approx(1.0)


def test_conv2d_gradients():
    x, w, b = _tensor((2, 3, 6, 5), 0), _tensor((4, 3, 3, 3), 1), _tensor((4,), 2)
    _assert_gradients(_projected(ag.conv2d, x, w, b), [x, w, b])


def test_conv2d_keeps_spatial_size():
    out = ag.conv2d(_tensor((1, 2, 5, 7), 0), _tensor((3, 2, 3, 3), 1))
    assert out.shape == (1, 3, 5, 7)
    with pytest.raises(ValidationError):
        ag.conv2d(_tensor((1, 2, 5, 7), 0), _tensor((3, 2, 2, 2), 1))


def test_dense_gradients():
    x, w, b = _tensor((3, 5), 3), _tensor((5, 2), 4), _tensor((2,), 5)
    _assert_gradients(_projected(ag.dense, x, w, b), [x, w, b])


def test_pool_and_upsample_gradients():
    x = _tensor((2, 2, 4, 6), 6)
    _assert_gradients(_projected(ag.max_pool2, x), [x])
    _assert_gradients(_projected(ag.avg_pool2, x), [x])
    _assert_gradients(_projected(ag.upsample2, x), [x])


def test_relu_and_concat_gradients():
    a, b = _tensor((1, 2, 3, 3), 7), _tensor((1, 3, 3, 3), 8)
    _assert_gradients(_projected(lambda p, q: ag.relu(ag.concat([p, q], axis=1)), a, b), [a, b])


def test_gradcheck_fails_when_every_entry_sits_on_a_kink():
    # relu at exactly 0 has disagreeing one-sided slopes at every step size
    kinked = Tensor(np.zeros((2, 3)), requires_grad=True)
    report = check_gradients(lambda: ag.weighted_sum(ag.relu(kinked), np.ones((2, 3))),
                             [kinked], names=["kinked"])
    assert report.checked_entries == 0
    assert report.skipped_entries == 6
    assert not report.passed
    assert report.failures() == ["kinked"]

    smooth = _tensor((2, 3), 4)
    report = check_gradients(
        lambda: ag.weighted_sum(ag.concat([ag.sigmoid(smooth), ag.relu(kinked)]), np.ones((2, 6))),
        [smooth, kinked], names=["smooth", "kinked"],
    )
    assert report.checked_entries == 6
    assert not report.passed
    assert report.failures() == ["kinked"]


def test_softmax_and_sigmoid_gradients():
    x = _tensor((3, 4), 9)
    _assert_gradients(_projected(lambda t: ag.softmax(t, axis=1), x), [x])
    _assert_gradients(_projected(ag.sigmoid, x), [x])


@pytest.mark.parametrize("height,width,levels", [(7, 5, 3), (8, 8, 2), (3, 4, 1)])
def test_spp_gradients_and_length(height, width, levels):
    x = _tensor((2, 3, height, width), 10)
    out = ag.spp(x, levels)
    assert out.shape == (2, ag.spp_length(3, levels))
    _assert_gradients(_projected(lambda t: ag.spp(t, levels), x), [x])


def test_spp_length_law():
    for levels in range(1, 6):
        assert ag.spp_length(5, levels) == 5 * levels * (levels + 1) * (2 * levels + 1) // 6


def test_spp_first_level_is_global_average():
    x = _tensor((2, 3, 5, 4), 11)
    assert np.allclose(ag.spp(x, 1).data, x.data.mean(axis=(2, 3)))


def test_spp_rejects_planes_smaller_than_the_pyramid():
    with pytest.raises(ValidationError):
        ag.spp(_tensor((1, 1, 2, 5), 0), 3)


def test_pooling_drops_odd_trailing_row():
    assert ag.max_pool2(_tensor((1, 1, 3, 4), 0)).shape == (1, 1, 1, 2)
    assert ag.avg_pool2(_tensor((1, 1, 5, 5), 0)).shape == (1, 1, 2, 2)
    with pytest.raises(ValidationError):
        ag.max_pool2(_tensor((1, 1, 1, 4), 0))


def test_softmax_ce_value_and_gradients():
    zeros = Tensor(np.zeros((2, 4)), requires_grad=True)
    assert softmax_ce(zeros, np.array([0, 3])).item() == pytest.approx(np.log(4.0))
    logits = _tensor((2, 4, 3, 3), 12)
    labels = np.random.default_rng(0).integers(0, 4, size=(2, 3, 3))
    _assert_gradients(lambda: softmax_ce(logits, labels), [logits])
    with pytest.raises(ValidationError):
        softmax_ce(logits, labels + 4)


def test_binary_logloss_value_and_gradients():
    half = Tensor(np.full((1, 1, 2, 2), 0.5), requires_grad=True)
    assert binary_logloss(half, np.ones((1, 1, 2, 2))).item() == pytest.approx(np.log(2.0))
    z = _tensor((2, 1, 4, 4), 13)
    target = (np.random.default_rng(1).random((2, 1, 4, 4)) > 0.5).astype(float)
    _assert_gradients(lambda: binary_logloss(ag.sigmoid(z), target), [z])


def test_weighted_boundary_logloss_gradients():
    mask = np.zeros((1, 1, 8, 8))
    mask[..., 2:6, 3:7] = 1
    weights = boundary_weights(mask[0, 0], ramp=2.0)[None, None]
    z = _tensor((1, 1, 8, 8), 14)
    _assert_gradients(lambda: weighted_boundary_logloss(ag.sigmoid(z), mask, weights), [z])


def test_unit_weights_reduce_to_plain_logloss():
    prob = Tensor(np.random.default_rng(2).uniform(0.1, 0.9, size=(1, 1, 4, 4)))
    mask = (np.random.default_rng(3).random((1, 1, 4, 4)) > 0.5).astype(float)
    weighted = weighted_boundary_logloss(prob, mask, np.ones_like(mask)).item()
    assert weighted == pytest.approx(binary_logloss(prob, mask).item())


def test_backward_accumulates_through_shared_inputs():
    x = Tensor(np.array([[[[1.0, 2.0]]]]), requires_grad=True)
    total = ag.weighted_sum(ag.concat([x, x], axis=1), np.ones((1, 2, 1, 2)))
    total.backward()
    assert np.allclose(x.grad, 2.0)
