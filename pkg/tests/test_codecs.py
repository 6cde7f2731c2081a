import numpy as np
import pytest

from dsrpgo import tensor as T
from dsrpgo.codecs import (BCE_EPS, SequenceCodec, SpatialCodec, bce_sum,
                           loss_se, loss_sp)
from dsrpgo.gradcheck import check_gradients
from dsrpgo.tensor import Tensor


class TestBce:
    def test_hand_case(self):
        # x = [1, 0], recon = [0.9, 0.2] -> -log 0.9 - log 0.8
        loss = bce_sum(np.array([1.0, 0.0]), np.array([0.9, 0.2]))
        np.testing.assert_allclose(loss.data, -np.log(0.9) - np.log(0.8),
                                   rtol=1e-14)

    def test_midpoint(self):
        loss = bce_sum(np.array([1.0]), np.array([0.5]))
        np.testing.assert_allclose(loss.data, np.log(2.0), rtol=1e-14)

    def test_clamp_keeps_saturated_recon_finite(self):
        loss = bce_sum(np.array([1.0, 0.0]), np.array([0.0, 1.0]))
        assert np.isfinite(loss.data)
        np.testing.assert_allclose(loss.data, -2 * np.log(BCE_EPS), rtol=1e-6)

    def test_perfect_reconstruction_is_near_zero(self):
        x = np.array([1.0, 0.0, 1.0])
        assert bce_sum(x, x).data < 1e-5

    def test_nonnegative(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            x = (rng.random(8) < 0.5).astype(float)
            r = rng.uniform(0.01, 0.99, 8)
            assert bce_sum(x, r).data >= 0.0


class TestSpatialCodec:
    def _codec(self, seed=1):
        return SpatialCodec([10, 6], np.random.default_rng(seed),
                            token_width=8, n_tokens=2, latent=5)

    def test_latent_shapes(self):
        rng = np.random.default_rng(2)
        codec = self._codec()
        latents = codec.encode([rng.random((3, 10)), rng.random((3, 6))])
        assert [z.shape for z in latents] == [(3, 5), (3, 5)]

    def test_decode_round_trip_shapes_and_range(self):
        rng = np.random.default_rng(3)
        codec = self._codec()
        recons = codec.decode(codec.encode([rng.random((4, 10)),
                                            rng.random((4, 6))]))
        assert [r.shape for r in recons] == [(4, 10), (4, 6)]
        for r in recons:
            assert (r.data > 0).all() and (r.data < 1).all()

    def test_merged_latent_is_mean(self):
        codec = self._codec()
        z1 = Tensor(np.array([[2.0, 4.0]]))
        z2 = Tensor(np.array([[0.0, 2.0]]))
        np.testing.assert_allclose(codec.merged_latent([z1, z2]).data,
                                   [[1.0, 3.0]])

    def test_loss_is_mean_over_proteins(self):
        rng = np.random.default_rng(4)
        codec = self._codec()
        srcs = [(rng.random((4, 10)) < 0.5).astype(float),
                (rng.random((4, 6)) < 0.5).astype(float)]
        recons = codec.decode(codec.encode(srcs))
        total = sum(bce_sum(Tensor(s), r).data for s, r in zip(srcs, recons))
        np.testing.assert_allclose(codec.loss(srcs, recons).data, total / 4,
                                   rtol=1e-12)

    def test_source_count_checked(self):
        codec = self._codec()
        with pytest.raises(ValueError, match="sources"):
            codec.encode([np.zeros((2, 10))])

    def test_source_width_checked(self):
        codec = self._codec()
        with pytest.raises(ValueError, match="width"):
            codec.encode([np.zeros((2, 10)), np.zeros((2, 7))])

    def test_loss_alias(self):
        assert loss_sp is SpatialCodec.loss

    def test_gradients(self):
        rng = np.random.default_rng(5)
        codec = SpatialCodec([5, 4], rng, token_width=4, n_tokens=2, latent=3)
        s1 = Tensor((rng.random((2, 5)) < 0.5).astype(float))
        s2 = Tensor((rng.random((2, 4)) < 0.5).astype(float))
        # targets frozen as constants so differencing only moves parameters
        t1 = Tensor(s1.data.copy())
        t2 = Tensor(s2.data.copy())
        tensors = list(codec.named_parameters().values())

        def loss_fn():
            return codec.loss([t1, t2], codec.decode(codec.encode([s1, s2])))

        err, ok = check_gradients(loss_fn, tensors, tol=1e-4)
        assert ok, err


class TestSequenceCodec:
    def _codec(self, seed=6):
        return SequenceCodec(12, np.random.default_rng(seed), token_width=8,
                             n_tokens=2, latent=5, n_blocks=2, n_heads=2)

    def test_round_trip_shapes_and_range(self):
        rng = np.random.default_rng(7)
        codec = self._codec()
        x = rng.random((3, 12))
        z = codec.encode(x)
        assert z.shape == (3, 5)
        r = codec.decode(z)
        assert r.shape == (3, 12)
        assert (r.data > 0).all() and (r.data < 1).all()

    def test_width_checked(self):
        with pytest.raises(ValueError, match="width"):
            self._codec().encode(np.zeros((2, 11)))

    def test_loss_is_mean_over_proteins(self):
        rng = np.random.default_rng(8)
        codec = self._codec()
        x = rng.random((4, 12))
        r = codec.decode(codec.encode(x))
        np.testing.assert_allclose(codec.loss(x, r).data,
                                   bce_sum(Tensor(x), r).data / 4, rtol=1e-12)

    def test_loss_alias(self):
        assert loss_se is SequenceCodec.loss

    def test_gradients(self):
        rng = np.random.default_rng(9)
        codec = SequenceCodec(6, rng, token_width=4, n_tokens=2, latent=3,
                              n_blocks=1, n_heads=2)
        x = Tensor(rng.random((2, 6)))
        target = Tensor(x.data.copy())
        tensors = list(codec.named_parameters().values())
        err, ok = check_gradients(
            lambda: codec.loss(target, codec.decode(codec.encode(x))),
            tensors, tol=1e-4)
        assert ok, err
