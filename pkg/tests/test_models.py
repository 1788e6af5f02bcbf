import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rosette_gan.config import TrainConfig
from rosette_gan.errors import RangeError, ShapeError
from rosette_gan.models import (condition_matrix, discriminator_forward, discriminator_widths, generate,
                                generator_forward, generator_widths, init_params, make_condition, one_hot,
                                spatial_replicate)
from rosette_gan.tensor import Tensor, Uniform, no_record, tensor_create


def forward_pair(cfg, batch, seed=0, mode="infer"):
    rng = np.random.default_rng(seed)
    g, d = init_params(cfg, rng)
    z = tensor_create((batch, cfg.z_dim), Uniform(-1, 1), rng)
    y = one_hot(rng.integers(cfg.num_classes, size=batch), cfg.num_classes)
    with no_record():
        x = generator_forward(z, y, g, mode, update_stats=False)
        p = discriminator_forward(x, y, d, mode, update_stats=False)
    return g, d, z, y, x, p


class TestConditionVector:
    def test_one_hot_position(self):
        c = make_condition(7, 1, 10)
        assert c.values.sum() == 1 and c.values[6] == 1
        assert c.leaf_count == 7

    @pytest.mark.parametrize("count", [0, 11])
    def test_out_of_range_names_interval(self, count):
        with pytest.raises(RangeError, match=r"\[1, 11\)"):
            make_condition(count, 1, 10)

    def test_replicate(self):
        t = spatial_replicate(np.array([0.0, 1.0]), 2, 2)
        assert t.shape == (2, 2, 2)
        assert np.all(t.data[0] == 0) and np.all(t.data[1] == 1)
        assert t.data.sum() == 4

    def test_replicate_channel_mean_recovers(self):
        y = make_condition(3, 1, 5)
        np.testing.assert_array_equal(spatial_replicate(y, 3, 5).data.mean(axis=(1, 2)), y.values)

    def test_condition_matrix_from_vectors(self):
        mat = condition_matrix([make_condition(2, 1, 3), make_condition(3, 1, 3)])
        np.testing.assert_array_equal(mat, [[0, 1, 0], [0, 0, 1]])


class TestArchitecture:
    def test_default_widths(self):
        cfg = TrainConfig()
        assert cfg.n_layers == 5
        assert discriminator_widths(cfg) == [64, 128, 256, 512, 512]
        assert generator_widths(cfg) == [512, 512, 256, 128, 64]

    @pytest.mark.parametrize("res,layers", [(16, 2), (32, 3), (64, 4), (128, 5)])
    def test_round_trip_shapes(self, res, layers):
        cfg = TrainConfig(resolution=res, z_dim=8, fc1_width=16, base_width=2, num_classes=3)
        assert cfg.n_layers == layers
        _, _, _, _, x, p = forward_pair(cfg, 2)
        assert x.shape == (2, 3, res, res)
        assert p.shape == (2, 1)

    def test_generator_output_range(self, small_cfg):
        _, _, _, _, x, _ = forward_pair(small_cfg, 4)
        assert x.data.min() >= -1 and x.data.max() <= 1

    def test_discriminator_range(self, small_cfg):
        _, _, _, _, _, p = forward_pair(small_cfg, 4)
        assert np.all((p.data > 0) & (p.data < 1))

    def test_infer_deterministic(self, small_cfg):
        g, _, z, y, x, _ = forward_pair(small_cfg, 3)
        with no_record():
            again = generator_forward(z, y, g, "infer")
        np.testing.assert_array_equal(x.data, again.data)

    def test_batch_permutation_equivariance(self, small_cfg):
        _, d, _, y, x, p = forward_pair(small_cfg, 5)
        perm = np.array([3, 0, 4, 1, 2])
        with no_record():
            q = discriminator_forward(Tensor(x.data[perm]), y[perm], d, "infer")
        np.testing.assert_array_equal(q.data, p.data[perm])

    def test_batch_mismatch(self, small_cfg):
        g, d = init_params(small_cfg, np.random.default_rng(0))
        with pytest.raises(ShapeError):
            generator_forward(Tensor(np.zeros((2, small_cfg.z_dim))), one_hot([0, 1, 2], 4), g)
        with pytest.raises(ShapeError):
            discriminator_forward(Tensor(np.zeros((3, 3, 16, 16))), one_hot([0, 1], 4), d)

    def test_wrong_condition_width(self, small_cfg):
        g, _ = init_params(small_cfg, np.random.default_rng(0))
        with pytest.raises(ShapeError):
            generator_forward(Tensor(np.zeros((2, small_cfg.z_dim))), one_hot([0, 1], 5), g)

    def test_condition_reaches_discriminator(self, small_cfg, rng):
        _, d = init_params(small_cfg, rng)
        for k, t in d.tensors.items():
            t.data = rng.standard_normal(t.shape).astype(np.float32) * 0.3
        x = Tensor(rng.uniform(-1, 1, (2, 3, 16, 16)))
        y = one_hot([0, 1], 4)
        with no_record():
            a = discriminator_forward(x, y, d, "infer").data
            b = discriminator_forward(x, np.zeros_like(y), d, "infer").data
        assert np.max(np.abs(a - b)) > 1e-6


class TestInit:
    def test_same_seed_identical(self, small_cfg):
        g1, d1 = init_params(small_cfg, np.random.default_rng(7))
        g2, d2 = init_params(small_cfg, np.random.default_rng(7))
        for a, b in ((g1, g2), (d1, d2)):
            for k in a.tensors:
                np.testing.assert_array_equal(a[k].data, b[k].data)

    def test_biases_zero_bn_identity(self, small_cfg):
        g, d = init_params(small_cfg, np.random.default_rng(0))
        for p in (g, d):
            for k, t in p.tensors.items():
                if k.endswith(".b") or k.endswith(".beta"):
                    assert np.all(t.data == 0), k
                if k.endswith(".gamma"):
                    assert np.all(t.data == 1), k

    def test_weight_std(self):
        g, d = init_params(TrainConfig(resolution=32, base_width=16, fc1_width=256), np.random.default_rng(0))
        checked = 0
        for p in (g, d):
            for k, t in p.tensors.items():
                if k.endswith(".w") and t.size >= 10_000:
                    assert abs(t.data.std() - 0.02) < 0.002, k
                    checked += 1
        assert checked >= 3

    def test_output_layers_unnormalized(self, small_cfg):
        g, d = init_params(small_cfg, np.random.default_rng(0))
        n = small_cfg.n_layers
        assert not g.has_bn(f"bn_deconv{n}")
        assert not d.has_bn("bn_conv1")
        assert d.has_bn("bn_conv2")


class TestDefaultConfig:
    @pytest.mark.slow
    def test_full_resolution_forward(self):
        cfg = TrainConfig()
        _, _, _, _, x, p = forward_pair(cfg, 2)
        assert x.shape == (2, 3, 128, 128)
        assert p.shape == (2, 1)


class TestGenerate:
    def test_shape_and_counts(self, small_cfg):
        g, _ = init_params(small_cfg, np.random.default_rng(0))
        imgs = generate(g, [3, 4, 5, 6], np.random.default_rng(1))
        assert imgs.shape == (4, 3, 16, 16)

    def test_rejects_out_of_range(self, small_cfg):
        g, _ = init_params(small_cfg, np.random.default_rng(0))
        with pytest.raises(RangeError):
            generate(g, [7], np.random.default_rng(1))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0.05, 3.0))
def test_ranges_hold_for_random_params(seed, scale):
    cfg = TrainConfig(resolution=16, z_dim=4, fc1_width=8, base_width=2, num_classes=3)
    rng = np.random.default_rng(seed)
    g, d = init_params(cfg, rng)
    for p in (g, d):
        for t in p.tensors.values():
            t.data = (rng.standard_normal(t.shape) * scale).astype(np.float32)
    z = tensor_create((3, 4), Uniform(-1, 1), rng)
    y = one_hot([0, 1, 2], 3)
    with no_record():
        x = generator_forward(z, y, g, "train", update_stats=False)
        p = discriminator_forward(x, y, d, "train", update_stats=False)
    assert np.all(np.abs(x.data) <= 1)
    assert np.all((p.data > 0) & (p.data < 1))
