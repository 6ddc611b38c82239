import numpy as np
import pytest

from rectiflow import autodiff as ad
from rectiflow.autodiff import Tensor
from rectiflow.errors import ShapeMismatchError, StateError


def dir_fd(loss64, arrays, which, h=1e-3, seed=0):
    """Directional central finite difference of a float64 loss."""
    rng = np.random.default_rng(seed)
    d = rng.standard_normal(arrays[which].shape)
    d /= max(np.linalg.norm(d), 1e-12)
    plus = [a.copy() for a in arrays]
    minus = [a.copy() for a in arrays]
    plus[which] = plus[which] + h * d
    minus[which] = minus[which] - h * d
    return (loss64(*plus) - loss64(*minus)) / (2 * h), d


def check_grads(build_loss, loss64, arrays, rtol=1e-2, seed=0):
    tensors = [Tensor(a.astype(np.float32), requires_grad=True) for a in arrays]
    loss = build_loss(*tensors)
    loss.backward()
    for i, t in enumerate(tensors):
        numeric, d = dir_fd(loss64, [a.astype(np.float64) for a in arrays], i,
                            seed=seed + i)
        analytic = float((t.grad.astype(np.float64) * d).sum())
        assert analytic == pytest.approx(numeric, rel=rtol, abs=1e-4), \
            f"input {i}: analytic {analytic} vs numeric {numeric}"


class TestBasicOps:
    def test_quadratic_minimum_has_zero_gradient(self):
        c = np.array([1.5, -2.0, 0.25], dtype=np.float32)
        x = Tensor(c.copy(), requires_grad=True)
        loss = ad.tmean(ad.square(ad.sub(Tensor(c), x)))
        loss.backward()
        np.testing.assert_array_equal(x.grad, np.zeros(3, dtype=np.float32))

    def test_add_mul_broadcast(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4,))
        check_grads(lambda ta, tb: ad.tmean(ad.square(ad.add(ta, tb))),
                    lambda a64, b64: float(np.mean((a64 + b64) ** 2)), [a, b])
        check_grads(lambda ta, tb: ad.tmean(ad.square(ad.mul(ta, tb))),
                    lambda a64, b64: float(np.mean((a64 * b64) ** 2)), [a, b])

    def test_scalar_broadcast_gradient(self):
        rng = np.random.default_rng(1)
        g = rng.normal(size=(1,))
        x = rng.normal(size=(2, 5))
        check_grads(
            lambda tg, tx: ad.tmean(ad.square(ad.mul(ad.reshape(tg, (1, 1)), tx))),
            lambda g64, x64: float(np.mean((g64.reshape(1, 1) * x64) ** 2)),
            [g, x])

    def test_matmul(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(4, 3))
        b = rng.normal(size=(3, 5))
        check_grads(lambda ta, tb: ad.tmean(ad.square(ad.matmul(ta, tb))),
                    lambda a64, b64: float(np.mean((a64 @ b64) ** 2)), [a, b])

    def test_matmul_shape_contract(self):
        with pytest.raises(ShapeMismatchError):
            ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_silu(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(6,)) * 2

        def loss64(x64):
            s = x64 / (1 + np.exp(-x64))
            return float(np.mean(s ** 2))

        check_grads(lambda t: ad.tmean(ad.square(ad.silu(t))), loss64, [x])

    def test_clamp_masks_gradient(self):
        x = Tensor(np.array([-2.0, 0.5, 2.0], dtype=np.float32), requires_grad=True)
        loss = ad.tsum(ad.clamp(x, 0.0, 1.0))
        loss.backward()
        np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])

    def test_concat_and_split_gradients(self):
        rng = np.random.default_rng(4)
        a = rng.normal(size=(2, 2, 3, 3))
        b = rng.normal(size=(2, 1, 3, 3))

        def loss64(a64, b64):
            return float(np.mean(np.concatenate([a64, b64], axis=1) ** 2))

        check_grads(lambda ta, tb: ad.tmean(ad.square(ad.concat([ta, tb], 1))),
                    loss64, [a, b])

    def test_upsample_nearest(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(1, 2, 3, 3))

        def loss64(x64):
            return float(np.mean(x64.repeat(2, axis=2).repeat(2, axis=3) ** 2))

        check_grads(lambda t: ad.tmean(ad.square(ad.upsample_nearest2x(t))),
                    loss64, [x])

    def test_mean_and_sum_gradients(self):
        x = Tensor(np.arange(6, dtype=np.float32).reshape(2, 3), requires_grad=True)
        ad.tmean(x).backward()
        np.testing.assert_allclose(x.grad, np.full((2, 3), 1 / 6), rtol=1e-6)
        y = Tensor(np.ones((2, 2), dtype=np.float32), requires_grad=True)
        ad.tsum(y).backward()
        np.testing.assert_array_equal(y.grad, np.ones((2, 2)))


class TestConv2d:
    @staticmethod
    def conv64(x, w, b, stride=1, p=1):
        bsz, cin, h, wd = x.shape
        cout, _, kh, kw = w.shape
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        ho = (h + 2 * p - kh) // stride + 1
        wo = (wd + 2 * p - kw) // stride + 1
        out = np.zeros((bsz, cout, ho, wo))
        for bi in range(bsz):
            for co in range(cout):
                for i in range(ho):
                    for j in range(wo):
                        patch = xp[bi, :, i * stride:i * stride + kh,
                                   j * stride:j * stride + kw]
                        out[bi, co, i, j] = (patch * w[co]).sum() + b[co]
        return out

    def test_forward_matches_nested_loops(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(2, 3, 6, 6)).astype(np.float32)
        w = rng.normal(size=(4, 3, 3, 3)).astype(np.float32)
        b = rng.normal(size=4).astype(np.float32)
        for stride in (1, 2):
            got = ad.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, 1).data
            want = self.conv64(x.astype(np.float64), w.astype(np.float64),
                               b.astype(np.float64), stride)
            np.testing.assert_allclose(got, want, atol=1e-5)

    @pytest.mark.parametrize("stride", [1, 2])
    def test_gradients(self, stride):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(2, 3, 6, 6))
        w = rng.normal(size=(4, 3, 3, 3)) * 0.5
        b = rng.normal(size=4)

        def loss64(x64, w64, b64):
            return float(np.mean(self.conv64(x64, w64, b64, stride) ** 2))

        check_grads(
            lambda tx, tw, tb: ad.tmean(ad.square(ad.conv2d(tx, tw, tb, stride, 1))),
            loss64, [x, w, b])

    def test_pointwise_gradients(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(3, 4, 5, 5))
        w = rng.normal(size=(2, 4, 1, 1))
        b = rng.normal(size=2)

        def loss64(x64, w64, b64):
            out = np.einsum("bchw,oc->bohw", x64, w64[:, :, 0, 0]) \
                + b64[None, :, None, None]
            return float(np.mean(out ** 2))

        check_grads(
            lambda tx, tw, tb: ad.tmean(ad.square(ad.conv2d(tx, tw, tb, 1, 0))),
            loss64, [x, w, b])

    def test_channel_contract(self):
        with pytest.raises(ShapeMismatchError):
            ad.conv2d(Tensor(np.zeros((1, 3, 4, 4))),
                      Tensor(np.zeros((2, 4, 3, 3))), None, 1, 1)


class TestGroupNorm:
    @staticmethod
    def gn64(x, gamma, beta, groups, eps=1e-5):
        b, c, h, w = x.shape
        xg = x.reshape(b, groups, -1)
        mu = xg.mean(axis=2, keepdims=True)
        var = xg.var(axis=2, keepdims=True)
        xhat = ((xg - mu) / np.sqrt(var + eps)).reshape(b, c, h, w)
        return xhat * gamma.reshape(1, c, 1, 1) + beta.reshape(1, c, 1, 1)

    def test_forward_statistics(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(2, 4, 5, 5)).astype(np.float32) * 3 + 1
        out = ad.group_norm(Tensor(x), Tensor(np.ones(4)), Tensor(np.zeros(4)), 2).data
        grouped = out.reshape(2, 2, -1)
        np.testing.assert_allclose(grouped.mean(axis=2), 0.0, atol=1e-5)
        np.testing.assert_allclose(grouped.std(axis=2), 1.0, atol=1e-3)

    def test_gradients(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(2, 4, 4, 4))
        gamma = rng.normal(size=4) + 1
        beta = rng.normal(size=4)

        def loss64(x64, g64, b64):
            return float(np.mean(self.gn64(x64, g64, b64, 2) ** 2))

        check_grads(
            lambda tx, tg, tb: ad.tmean(ad.square(ad.group_norm(tx, tg, tb, 2))),
            loss64, [x, gamma, beta])


class TestEngineContracts:
    def test_backward_requires_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        y = ad.mul(x, 2.0)
        with pytest.raises(StateError):
            y.backward()

    def test_backward_without_recorded_computation(self):
        with pytest.raises(StateError):
            Tensor(np.ones(1)).backward()

    def test_no_grad_suppresses_tape(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with ad.no_grad():
            y = ad.tmean(ad.square(x))
        assert y._parents == () and not y.requires_grad

    def test_shared_node_accumulates(self):
        # loss = mean((x + x)^2) -> grad = 8x/n
        x = Tensor(np.array([1.0, -2.0], dtype=np.float32), requires_grad=True)
        ad.tmean(ad.square(ad.add(x, x))).backward()
        np.testing.assert_allclose(x.grad, 8 * x.data / 2, rtol=1e-6)

    def test_float32_everywhere(self):
        x = Tensor(np.ones((2, 2), dtype=np.float64))
        assert x.data.dtype == np.float32
        y = ad.silu(x)
        assert y.data.dtype == np.float32

    def test_determinism(self):
        def run():
            rng = np.random.default_rng(42)
            x = Tensor(rng.normal(size=(2, 4, 8, 8)).astype(np.float32),
                       requires_grad=True)
            w = Tensor(rng.normal(size=(4, 4, 3, 3)).astype(np.float32),
                       requires_grad=True)
            loss = ad.tmean(ad.square(ad.conv2d(x, w, None, 1, 1)))
            loss.backward()
            return loss.data.copy(), x.grad.copy(), w.grad.copy()

        a = run()
        b = run()
        for u, v in zip(a, b):
            np.testing.assert_array_equal(u, v)
