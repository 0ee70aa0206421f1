import numpy as np
import pytest

from gtnvf import autodiff as ad
from gtnvf.autodiff import Tensor

from oracles import grad_rel_error, numeric_grad

RNG = np.random.default_rng(0)


def _check(build, *shapes, positive=False):
    """Compare backprop with finite differences for a scalar-valued ``build``."""
    arrays = [RNG.normal(size=s) for s in shapes]
    if positive:
        arrays = [np.abs(a) + 0.5 for a in arrays]
    tensors = [Tensor(a, True) for a in arrays]
    out = build(*tensors)
    out.backward()
    for t, a in zip(tensors, arrays):
        def f():
            with ad.no_grad():
                return float(build(*[Tensor(x) for x in arrays]).data)

        assert grad_rel_error(t.grad, numeric_grad(f, a)) < 1e-6


def test_elementwise_ops():
    _check(lambda a, b: ad.sum(ad.mul(ad.add(a, b), ad.sub(a, b))), (3, 4), (3, 4))
    _check(lambda a, b: ad.sum(ad.mul(a, b)), (3, 4), (4,))  # broadcasting
    _check(lambda a: ad.sum(ad.softplus(a)), (5,))
    _check(lambda a: ad.sum(ad.sqrt(a)), (5,), positive=True)
    _check(lambda a: ad.mean(ad.square(ad.scale(a, 3.0))), (2, 3))


def test_matrix_ops():
    _check(lambda a, b: ad.sum(ad.matmul(a, b)), (3, 4), (4, 2))
    _check(lambda a: ad.sum(ad.square(ad.transpose(ad.reshape(a, (2, 6))))), (3, 4))
    _check(lambda a, b: ad.sum(ad.square(ad.concat([a, b], axis=1))), (3, 2), (3, 1))
    idx = np.array([2, 0, 2, 1])
    _check(lambda a: ad.sum(ad.square(ad.take_rows(a, idx))), (3, 2))
    _check(lambda a: ad.sum(ad.square(ad.slice_rows(a, 2))), (4, 2))
    _check(lambda a: ad.sum(ad.square(ad.sum(a, axis=1))), (4, 3))


def test_segment_ops():
    ptr = np.array([0, 2, 2, 5])
    w = RNG.normal(size=(5, 3))
    _check(lambda a: ad.sum(ad.square(ad.segment_sum(a, ptr))), (5, 3))
    _check(lambda a: ad.sum(ad.mul(ad.segment_softmax(a, ptr), Tensor(w))), (5, 3))


def test_rmspe_loss_gradient():
    target = np.abs(RNG.normal(size=6)) + 0.1
    _check(lambda p: ad.rmspe(p, target, 1e-8), (6,), positive=True)


def test_relu_gradient_away_from_kink():
    a = np.array([-1.0, 0.5, 2.0])
    t = Tensor(a, True)
    ad.sum(ad.relu(t)).backward()
    np.testing.assert_array_equal(t.grad, [0.0, 1.0, 1.0])


def test_segment_softmax_empty_segments_and_values():
    ptr = np.array([0, 0, 3])
    x = Tensor(np.array([[1.0], [2.0], [3.0]]))
    y = ad.segment_softmax(x, ptr).data.ravel()
    np.testing.assert_allclose(y, np.exp([1, 2, 3]) / np.exp([1, 2, 3]).sum())
    np.testing.assert_array_equal(ad.segment_sum(x, ptr).data.ravel(), [0.0, 6.0])


def test_no_grad_skips_tape():
    a = Tensor(np.ones(3), True)
    with ad.no_grad():
        out = ad.sum(ad.square(a))
    out.backward()
    assert a.grad is None


def test_gradients_accumulate_over_reuse():
    a = Tensor(np.array([1.0, 2.0]), True)
    ad.sum(ad.add(a, a)).backward()
    np.testing.assert_array_equal(a.grad, [2.0, 2.0])


@pytest.mark.parametrize("shape", [(4,), (2, 3)])
def test_backward_default_seed(shape):
    a = Tensor(np.ones(shape), True)
    ad.scale(a, 2.0).backward()
    np.testing.assert_array_equal(a.grad, np.full(shape, 2.0))
