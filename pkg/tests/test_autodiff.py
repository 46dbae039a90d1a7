import numpy as np
import pytest

from transit_nlos import autodiff as ad
from transit_nlos.autodiff import Tensor
from conftest import numeric_gradient


def check_grad(build_loss, *shapes, seed=0, rtol=1e-6):
    """Compare reverse-mode gradients against central finite differences."""
    rng = np.random.default_rng(seed)
    values = [rng.standard_normal(s) for s in shapes]
    tensors = [Tensor(v.copy(), requires_grad=True) for v in values]
    loss = build_loss(*tensors)
    loss.backward()
    for k, (val, ten) in enumerate(zip(values, tensors)):
        def f(flat, k=k):
            args = [Tensor(v.copy()) for v in values]
            args[k] = Tensor(flat.reshape(values[k].shape))
            return float(build_loss(*args).data)

        numeric = numeric_gradient(f, val.ravel().copy()).reshape(val.shape)
        np.testing.assert_allclose(ten.grad, numeric, rtol=rtol, atol=1e-8)


class TestBasicOps:
    def test_add_mul_broadcast(self):
        check_grad(lambda a, b: ad.tensor_sum(ad.mul(ad.add(a, b), a)), (3, 4), (4,))

    def test_sub_div(self):
        check_grad(
            lambda a, b: ad.tensor_sum(ad.div(a, ad.add(ad.mul(b, b), 1.0))), (5,), (5,)
        )

    def test_matmul_2d(self):
        check_grad(lambda a, b: ad.tensor_sum(ad.matmul(a, b)), (3, 4), (4, 2))

    def test_matmul_batched(self):
        check_grad(lambda a, b: ad.tensor_sum(ad.matmul(a, b)), (2, 3, 4), (2, 4, 3))

    def test_power_exp(self):
        check_grad(lambda a: ad.tensor_sum(ad.exp(ad.power(a, 2.0))), (4,))

    def test_erf_sigmoid(self):
        check_grad(lambda a: ad.tensor_sum(ad.add(ad.erf(a), ad.sigmoid(a))), (6,))

    def test_sum_axis_keepdims(self):
        check_grad(lambda a: ad.tensor_sum(ad.mul(ad.tensor_sum(a, 1, True), a)), (3, 4))

    def test_mean(self):
        check_grad(lambda a: ad.tensor_mean(ad.mul(a, a)), (3, 5))

    def test_reshape_transpose(self):
        check_grad(
            lambda a: ad.tensor_sum(ad.mul(a.reshape(6, 2).transpose(1, 0), 3.0)), (3, 4)
        )

    def test_concat(self):
        check_grad(
            lambda a, b: ad.tensor_sum(ad.power(ad.concat([a, b], axis=1), 2.0)),
            (3, 2),
            (3, 4),
        )

    def test_slicing(self):
        check_grad(lambda a: ad.tensor_sum(ad.mul(a[:, 1:3], a[:, 0:2])), (4, 5))

    def test_gather_rows_with_duplicates(self):
        idx = np.array([0, 2, 2, 1])
        check_grad(lambda a: ad.tensor_sum(ad.power(ad.gather_rows(a, idx), 2.0)), (3, 4))

    def test_closed_form_quadratic(self):
        x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        loss = ad.tensor_sum(ad.mul(x, x))
        loss.backward()
        np.testing.assert_allclose(x.grad, 2.0 * x.data, rtol=1e-14)

    def test_unused_parameter_gets_no_grad(self):
        x = Tensor(np.ones(3), requires_grad=True)
        y = Tensor(np.ones(3), requires_grad=True)
        ad.tensor_sum(ad.mul(x, 2.0)).backward()
        assert y.grad is None

    def test_grad_accumulates_over_reuse(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        loss = ad.tensor_sum(ad.add(ad.mul(x, x), ad.mul(x, 3.0)))  # x^2 + 3x
        loss.backward()
        np.testing.assert_allclose(x.grad, [2 * 2.0 + 3.0])

    def test_backward_requires_scalar(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(ValueError):
            ad.mul(x, 2.0).backward()


class TestComposites:
    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.standard_normal((7, 9)) * 10.0)
        s = ad.softmax(x, axis=-1)
        np.testing.assert_allclose(s.data.sum(axis=-1), np.ones(7), atol=1e-12)
        assert s.data.min() >= 0.0

    def test_softmax_gradient(self):
        w = np.random.default_rng(2).standard_normal((4, 4))
        check_grad(lambda a: ad.tensor_sum(ad.mul(ad.softmax(a, -1), w)), (4, 4))

    def test_softmax_shift_invariance(self):
        x = np.random.default_rng(3).standard_normal((3, 5))
        s1 = ad.softmax(Tensor(x)).data
        s2 = ad.softmax(Tensor(x + 1000.0)).data
        np.testing.assert_allclose(s1, s2, atol=1e-12)

    def test_layer_norm_statistics(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.standard_normal((6, 16)) * 3.0 + 2.0)
        g = Tensor(np.ones(16))
        b = Tensor(np.zeros(16))
        out = ad.layer_norm(x, g, b).data
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-4)

    def test_layer_norm_gradient(self):
        check_grad(
            lambda x, g, b: ad.tensor_sum(ad.power(ad.layer_norm(x, g, b), 3.0)),
            (3, 8),
            (8,),
            (8,),
        )

    def test_gelu_values_and_gradient(self):
        x = np.array([-2.0, -0.5, 0.0, 0.5, 2.0])
        out = ad.gelu(Tensor(x)).data
        from scipy.stats import norm

        np.testing.assert_allclose(out, x * norm.cdf(x), rtol=1e-12)
        check_grad(lambda a: ad.tensor_sum(ad.gelu(a)), (7,))


class TestNoGrad:
    def test_no_graph_recorded(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with ad.no_grad():
            y = ad.mul(x, 2.0)
        assert not y.requires_grad and y._parents == ()

    def test_nested_restores(self):
        with ad.no_grad():
            with ad.no_grad():
                pass
            x = Tensor(np.ones(1), requires_grad=True)
            assert not ad.mul(x, 1.0).requires_grad
        assert ad.mul(Tensor(np.ones(1), requires_grad=True), 1.0).requires_grad
