import numpy as np
import pytest

from deepcontrast.fusion import (
    FUSION_MODES, attention_forward, downsample_by_area, fuse_average,
    fuse_conv1x1, fuse_saliency, upsample_fused,
)
from deepcontrast.network import NetworkSpec, build_msfcn
from deepcontrast.tensor import Tensor, no_grad
from deepcontrast.weights import WeightStore


def small_spec():
    return NetworkSpec(stage_channels=(4, 8, 8, 8, 8), side_channels=4,
                       head_channels=8, attn_channels=4).validate()


class TestAttention:
    def test_weights_sum_to_one(self, rng):
        spec = small_spec()
        store = build_msfcn(spec, seed=0)
        fm = Tensor(rng.normal(size=(1, spec.feature_channels, 4, 4)))
        with no_grad():
            w = attention_forward(fm, store, spec)
        assert w.data.shape == (1, 2, 4, 4)
        np.testing.assert_allclose(w.data.sum(axis=1), 1.0, atol=1e-12)
        assert (w.data >= 0).all()

    def test_content_dependent(self, rng):
        spec = small_spec()
        store = build_msfcn(spec, seed=2)
        a = Tensor(rng.normal(size=(1, spec.feature_channels, 4, 4)))
        b = Tensor(rng.normal(size=(1, spec.feature_channels, 4, 4)))
        with no_grad():
            wa = attention_forward(a, store, spec)
            wb = attention_forward(b, store, spec)
        assert not np.allclose(wa.data, wb.data)


class TestFusion:
    def test_degenerate_weights_select_one_stream(self, rng):
        s1 = Tensor(rng.uniform(size=(1, 1, 3, 3)))
        s2 = Tensor(rng.uniform(size=(1, 1, 3, 3)))
        w = np.zeros((1, 2, 3, 3))
        w[:, 0] = 1.0
        fused = fuse_saliency(s1, s2, Tensor(w))
        np.testing.assert_array_equal(fused.data, s1.data)
        w2 = np.zeros((1, 2, 3, 3))
        w2[:, 1] = 1.0
        np.testing.assert_array_equal(fuse_saliency(s1, s2, Tensor(w2)).data,
                                      s2.data)

    def test_convex_combination(self, rng):
        s1 = Tensor(rng.uniform(size=(1, 1, 3, 3)))
        s2 = Tensor(rng.uniform(size=(1, 1, 3, 3)))
        alpha = rng.uniform(size=(1, 1, 3, 3))
        w = np.concatenate([alpha, 1 - alpha], axis=1)
        fused = fuse_saliency(s1, s2, Tensor(w)).data
        expected = alpha * s1.data + (1 - alpha) * s2.data
        np.testing.assert_allclose(fused, expected, atol=1e-15)
        lo = np.minimum(s1.data, s2.data)
        hi = np.maximum(s1.data, s2.data)
        assert ((fused >= lo - 1e-12) & (fused <= hi + 1e-12)).all()

    def test_dim_mismatch_errors(self):
        s1 = Tensor(np.zeros((1, 1, 3, 3)))
        s2 = Tensor(np.zeros((1, 1, 4, 4)))
        with pytest.raises(ValueError, match="stream map dims"):
            fuse_saliency(s1, s2, Tensor(np.zeros((1, 2, 3, 3))))
        with pytest.raises(ValueError, match="attention dims"):
            fuse_saliency(s1, Tensor(np.zeros((1, 1, 3, 3))),
                          Tensor(np.zeros((1, 2, 4, 4))))

    def test_average_mode(self, rng):
        s1 = Tensor(rng.uniform(size=(1, 1, 3, 3)))
        s2 = Tensor(rng.uniform(size=(1, 1, 3, 3)))
        np.testing.assert_allclose(fuse_average(s1, s2).data,
                                   (s1.data + s2.data) / 2, atol=1e-15)

    def test_conv1x1_mode(self, rng):
        store = WeightStore()
        store.add("fusion1x1.w", Tensor(np.array([[[[3.0]]], [[[3.0]]]])
                                        .reshape(1, 2, 1, 1)))
        store.add("fusion1x1.b", Tensor(np.array([-3.0])))
        s1 = Tensor(rng.uniform(size=(1, 1, 3, 3)))
        s2 = Tensor(rng.uniform(size=(1, 1, 3, 3)))
        out = fuse_conv1x1(s1, s2, store, None).data
        logits = 3.0 * (s1.data + s2.data) - 3.0
        np.testing.assert_allclose(out, 1 / (1 + np.exp(-logits)), atol=1e-12)

    def test_modes_constant(self):
        assert FUSION_MODES == ("attention", "average", "conv1x1")


class TestResampling:
    def test_upsample_shape(self, rng):
        s = Tensor(rng.uniform(size=(1, 1, 4, 4)))
        assert upsample_fused(s, 32, 32).data.shape == (1, 1, 32, 32)

    def test_downsample_area_average(self):
        m = np.arange(64, dtype=float).reshape(8, 8)
        got = downsample_by_area(m)
        np.testing.assert_allclose(got, [[m.mean()]])

    def test_downsample_blocks(self, rng):
        m = rng.uniform(size=(16, 16))
        got = downsample_by_area(m)
        for i in range(2):
            for j in range(2):
                assert got[i, j] == pytest.approx(
                    m[8 * i:8 * i + 8, 8 * j:8 * j + 8].mean())

    def test_downsample_rejects_unaligned(self):
        with pytest.raises(ValueError, match="divisible"):
            downsample_by_area(np.zeros((12, 12)))

    def test_round_trip_constant(self):
        m = np.full((16, 16), 0.3)
        up = upsample_fused(Tensor(downsample_by_area(m)[None, None]), 16, 16)
        np.testing.assert_allclose(up.data[0, 0], m, atol=1e-12)
