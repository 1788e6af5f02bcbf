"""Conditional generator and discriminator.

The generator maps uniform noise plus a one-hot leaf-count condition through
two fully connected layers and a chain of stride-2 transposed convolutions to
an RGB image in [-1, 1].  The discriminator mirrors it with stride-2
convolutions and ends in a single sigmoid unit.  The condition is fed to every
stage: appended to dense activations and stacked as constant feature planes
onto every (de)convolution input.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import TrainConfig
from .errors import RangeError, ShapeError, ValidationError
from .layers import (
    BatchNormParams,
    Conv2dParams,
    batch_norm,
    conv2d,
    deconv2d,
    fully_connected,
    leaky_relu,
    relu,
    sigmoid,
    tanh,
)
from .tensor import DTYPE, Normal, Tensor, Uniform, concat, flatten, no_record, reshape, tensor_create


@dataclass(frozen=True)
class ConditionVector:
    values: np.ndarray
    class_index: int
    min_count: int = 1

    @property
    def leaf_count(self) -> int:
        return self.class_index + self.min_count

    @property
    def num_classes(self) -> int:
        return len(self.values)


def make_condition(leaf_count: int, min_count: int, num_classes: int) -> ConditionVector:
    if not min_count <= leaf_count < min_count + num_classes:
        raise RangeError(
            f"leaf count {leaf_count} outside the valid interval "
            f"[{min_count}, {min_count + num_classes})"
        )
    values = np.zeros(num_classes, dtype=DTYPE)
    values[leaf_count - min_count] = 1
    return ConditionVector(values, leaf_count - min_count, min_count)


def spatial_replicate(y: ConditionVector, height: int, width: int) -> Tensor:
    """``[C, H, W]`` tensor whose channel ``c`` is the constant plane ``y[c]``."""
    vals = np.asarray(y.values if isinstance(y, ConditionVector) else y, dtype=DTYPE)
    return Tensor(np.broadcast_to(vals[:, None, None], (len(vals), height, width)).copy())


def condition_matrix(y, num_classes: int | None = None) -> np.ndarray:
    """Stack a batch of conditions into a ``[B, C]`` one-hot matrix."""
    if isinstance(y, Tensor):
        y = y.data
    if isinstance(y, np.ndarray):
        mat = np.asarray(y, dtype=DTYPE)
        if mat.ndim != 2:
            raise ShapeError(f"condition batch must be [B, C], got {list(mat.shape)}")
    else:
        mat = np.stack([np.asarray(c.values, dtype=DTYPE) for c in y])
    if num_classes is not None and mat.shape[1] != num_classes:
        raise ShapeError(f"condition has {mat.shape[1]} classes, model expects {num_classes}")
    return mat


def _planes(ymat: np.ndarray, height: int, width: int) -> Tensor:
    B, C = ymat.shape
    return Tensor(np.broadcast_to(ymat[:, :, None, None], (B, C, height, width)).copy())


@dataclass
class ModelParams:
    """Named learnable tensors plus non-learnable buffers of one network."""

    cfg: TrainConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)
    buffers: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def conv(self, layer: str) -> Conv2dParams:
        return Conv2dParams(self.tensors[f"{layer}.w"], self.tensors[f"{layer}.b"])

    def bn(self, layer: str) -> BatchNormParams:
        return BatchNormParams(
            self.tensors[f"{layer}.gamma"],
            self.tensors[f"{layer}.beta"],
            self.buffers[f"{layer}.running_mean"],
            self.buffers[f"{layer}.running_var"],
            momentum=self.cfg.bn_momentum,
            epsilon=self.cfg.bn_eps,
        )

    def has_bn(self, layer: str) -> bool:
        return f"{layer}.gamma" in self.tensors

    def replace(self, name: str, t: Tensor) -> "ModelParams":
        """Shallow copy with one learnable tensor swapped out."""
        tensors = dict(self.tensors)
        tensors[name] = t
        return type(self)(self.cfg, tensors, self.buffers)

    def copy(self) -> "ModelParams":
        return type(self)(
            self.cfg,
            {k: Tensor(v.data.copy(), name=k) for k, v in self.tensors.items()},
            {k: Tensor(v.data.copy(), name=k) for k, v in self.buffers.items()},
        )

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"param/{k}": v.data for k, v in self.tensors.items()}
        out.update({f"buffer/{k}": v.data for k, v in self.buffers.items()})
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k, t in self.tensors.items():
            t.data = np.array(arrays[f"param/{k}"], dtype=DTYPE)
        for k, t in self.buffers.items():
            t.data = np.array(arrays[f"buffer/{k}"], dtype=DTYPE)


class GeneratorParams(ModelParams):
    pass


class DiscriminatorParams(ModelParams):
    pass


def discriminator_widths(cfg: TrainConfig) -> list[int]:
    """Output channels of D's convolutions: w, 2w, 4w, 8w, 8w, ..."""
    return [cfg.base_width * 2 ** min(i, 3) for i in range(cfg.n_layers)]


def generator_widths(cfg: TrainConfig) -> list[int]:
    """Feature channels entering each of G's transposed convolutions (D's widths reversed)."""
    return discriminator_widths(cfg)[::-1]


def _add_dense(store, name, n_in, n_out, cfg, rng):
    store.tensors[f"{name}.w"] = tensor_create((n_in, n_out), Normal(0.0, cfg.init_std), rng, name=f"{name}.w")
    store.tensors[f"{name}.b"] = tensor_create((n_out,), 0.0, name=f"{name}.b")


def _add_conv(store, name, shape, cfg, rng, bias_ch):
    store.tensors[f"{name}.w"] = tensor_create(shape, Normal(0.0, cfg.init_std), rng, name=f"{name}.w")
    store.tensors[f"{name}.b"] = tensor_create((bias_ch,), 0.0, name=f"{name}.b")


def _add_bn(store, name, ch):
    store.tensors[f"{name}.gamma"] = tensor_create((ch,), 1.0, name=f"{name}.gamma")
    store.tensors[f"{name}.beta"] = tensor_create((ch,), 0.0, name=f"{name}.beta")
    store.buffers[f"{name}.running_mean"] = tensor_create((ch,), 0.0, name=f"{name}.running_mean")
    store.buffers[f"{name}.running_var"] = tensor_create((ch,), 1.0, name=f"{name}.running_var")


def init_generator(cfg: TrainConfig, rng: np.random.Generator) -> GeneratorParams:
    C, k, n = cfg.num_classes, cfg.kernel_size, cfg.n_layers
    widths = generator_widths(cfg)
    g = GeneratorParams(cfg)
    _add_dense(g, "fc1", cfg.z_dim + C, cfg.fc1_width, cfg, rng)
    _add_bn(g, "bn_fc1", cfg.fc1_width)
    fc2_out = 4 * 4 * widths[0]
    _add_dense(g, "fc2", cfg.fc1_width + C, fc2_out, cfg, rng)
    _add_bn(g, "bn_fc2", fc2_out)
    for i in range(1, n + 1):
        c_in = widths[i - 1] + C
        c_out = widths[i] if i < n else 3
        _add_conv(g, f"deconv{i}", (c_in, c_out, k, k), cfg, rng, c_out)
        if i < n or cfg.bn_generator_output:
            _add_bn(g, f"bn_deconv{i}", c_out)
    return g


def init_discriminator(cfg: TrainConfig, rng: np.random.Generator) -> DiscriminatorParams:
    C, k, n = cfg.num_classes, cfg.kernel_size, cfg.n_layers
    widths = discriminator_widths(cfg)
    d = DiscriminatorParams(cfg)
    c_in = 3
    for i in range(1, n + 1):
        c_out = widths[i - 1]
        _add_conv(d, f"conv{i}", (c_out, c_in + C, k, k), cfg, rng, c_out)
        if i > 1 or cfg.bn_discriminator_input:
            _add_bn(d, f"bn_conv{i}", c_out)
        c_in = c_out
    _add_dense(d, "fc", 4 * 4 * widths[-1] + C, 1, cfg, rng)
    return d


def init_params(cfg: TrainConfig, rng: np.random.Generator) -> tuple[GeneratorParams, DiscriminatorParams]:
    """Weights ~ normal(0, init_std), biases 0, batch-norm gamma 1 / beta 0."""
    return init_generator(cfg, rng), init_discriminator(cfg, rng)


def _batch_inputs(x: Tensor, y, cfg: TrainConfig):
    ymat = condition_matrix(y, cfg.num_classes)
    if ymat.shape[0] != x.shape[0]:
        raise ShapeError(f"batch mismatch: {x.shape[0]} inputs but {ymat.shape[0]} conditions")
    return ymat


def generator_forward(z: Tensor, y, p: GeneratorParams, mode: str = "train",
                      update_stats: bool = True) -> Tensor:
    """``[B, z_dim]`` noise and ``B`` conditions -> ``[B, 3, res, res]`` images in [-1, 1]."""
    cfg = p.cfg
    if z.ndim != 2 or z.shape[1] != cfg.z_dim:
        raise ShapeError(f"noise must be [B, {cfg.z_dim}], got {list(z.shape)}")
    ymat = _batch_inputs(z, y, cfg)
    yt = Tensor(ymat)
    B, n = z.shape[0], cfg.n_layers

    h = concat([z, yt], axis=1)
    h = relu(batch_norm(fully_connected(h, p["fc1.w"], p["fc1.b"]), p.bn("bn_fc1"), mode, update_stats))
    h = concat([h, yt], axis=1)
    h = relu(batch_norm(fully_connected(h, p["fc2.w"], p["fc2.b"]), p.bn("bn_fc2"), mode, update_stats))
    h = reshape(h, (B, -1, 4, 4))
    for i in range(1, n + 1):
        h = concat([h, _planes(ymat, h.shape[2], h.shape[3])], axis=1)
        h = deconv2d(h, p.conv(f"deconv{i}"))
        if p.has_bn(f"bn_deconv{i}"):
            h = batch_norm(h, p.bn(f"bn_deconv{i}"), mode, update_stats)
        h = relu(h) if i < n else tanh(h)
    return h


def discriminator_forward(x: Tensor, y, p: DiscriminatorParams, mode: str = "train",
                          update_stats: bool = True) -> Tensor:
    """``[B, 3, res, res]`` images and ``B`` conditions -> ``[B, 1]`` probabilities of "real"."""
    cfg = p.cfg
    res = cfg.resolution
    if x.ndim != 4 or x.shape[1:] != (3, res, res):
        raise ShapeError(f"images must be [B, 3, {res}, {res}], got {list(x.shape)}")
    ymat = _batch_inputs(x, y, cfg)
    h = x
    for i in range(1, cfg.n_layers + 1):
        h = concat([h, _planes(ymat, h.shape[2], h.shape[3])], axis=1)
        h = conv2d(h, p.conv(f"conv{i}"))
        if p.has_bn(f"bn_conv{i}"):
            h = batch_norm(h, p.bn(f"bn_conv{i}"), mode, update_stats)
        h = leaky_relu(h, cfg.leaky_slope)
    h = concat([flatten(h), Tensor(ymat)], axis=1)
    return sigmoid(fully_connected(h, p["fc.w"], p["fc.b"]))


def sample_conditions(n: int, cfg: TrainConfig, rng: np.random.Generator) -> np.ndarray:
    """Class indices for ``n`` sampled conditions."""
    if cfg.condition_sampling == "empirical":
        w = np.asarray(cfg.class_weights, dtype=np.float64)
        return rng.choice(cfg.num_classes, size=n, p=w / w.sum())
    return rng.integers(0, cfg.num_classes, size=n)


def one_hot(indices: Sequence[int], num_classes: int) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= num_classes):
        raise RangeError(f"class indices must lie in [0, {num_classes})")
    out = np.zeros((len(indices), num_classes), dtype=DTYPE)
    out[np.arange(len(indices)), indices] = 1
    return out


def counts_to_onehot(counts: Sequence[int], cfg: TrainConfig) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.int64)
    bad = counts[(counts < cfg.min_count) | (counts > cfg.max_count)]
    if bad.size:
        raise RangeError(
            f"leaf count {int(bad[0])} outside the valid interval "
            f"[{cfg.min_count}, {cfg.min_count + cfg.num_classes})"
        )
    return one_hot(counts - cfg.min_count, cfg.num_classes)


def generate(p: GeneratorParams, counts: Sequence[int], rng: np.random.Generator,
             mode: str = "infer") -> np.ndarray:
    """Images for the requested leaf counts with fresh U[-1, 1) noise."""
    if mode == "train" and len(counts) < 2:
        raise ValidationError("train-mode generation needs at least 2 samples")
    ymat = counts_to_onehot(counts, p.cfg)
    z = tensor_create((len(counts), p.cfg.z_dim), Uniform(-1.0, 1.0), rng)
    with no_record():
        return generator_forward(z, ymat, p, mode, update_stats=False).data
