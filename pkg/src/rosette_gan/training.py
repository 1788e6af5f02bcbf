"""Adversarial objective, optimizers and the alternating training loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig
from .errors import DatasetValidationError, DegenerateBatchError, NumericError, ValidationError
from .models import (
    DiscriminatorParams,
    GeneratorParams,
    ModelParams,
    counts_to_onehot,
    discriminator_forward,
    generator_forward,
    init_params,
    one_hot,
    sample_conditions,
)
from .pngio import tile_grid, write_rgb
from .tensor import GradientTape, Tensor, Uniform, backward, clip, log, mean_all, no_record, tensor_create

logger = logging.getLogger(__name__)

PROB_EPS = 1e-7


@dataclass
class GanLosses:
    d_loss: Tensor | float
    g_loss: Tensor | float


def _check_probs(t: Tensor, label: str) -> None:
    bad = np.flatnonzero(np.isnan(t.data.reshape(t.shape[0], -1)).any(axis=1))
    if bad.size:
        raise NumericError(f"NaN in {label} discriminator output at batch index {int(bad[0])}")


def generator_loss(d_fake: Tensor, kind: str = "non_saturating") -> Tensor:
    """``-mean(log D(G(z)))`` (non-saturating) or ``mean(log(1 - D(G(z))))`` (minimax)."""
    _check_probs(d_fake, "fake")
    f = clip(d_fake, PROB_EPS, 1 - PROB_EPS)
    if kind == "non_saturating":
        return -mean_all(log(f))
    if kind == "minimax":
        return mean_all(log(1.0 - f))
    raise ValidationError(f"unknown generator loss {kind!r}")


def gan_losses(d_real: Tensor, d_fake: Tensor, g_loss: str = "non_saturating") -> GanLosses:
    """Binary cross-entropy losses of both players.

    ``d_loss = -mean(log D(x|y)) - mean(log(1 - D(G(z|y)|y)))``, the negated
    value function; probabilities are clamped to ``[1e-7, 1 - 1e-7]``.
    """
    _check_probs(d_real, "real")
    _check_probs(d_fake, "fake")
    r = clip(d_real, PROB_EPS, 1 - PROB_EPS)
    f = clip(d_fake, PROB_EPS, 1 - PROB_EPS)
    d_loss = -mean_all(log(r)) - mean_all(log(1.0 - f))
    return GanLosses(d_loss, generator_loss(d_fake, g_loss))


class Adam:
    """Adaptive-moment gradient descent; moment buffers are stored as float32."""

    kind = "adam"

    def __init__(self, params: ModelParams, lr: float, beta1: float = 0.5, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(t.data) for k, t in params.tensors.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.tensors.items()}
        self.step = 0

    def apply(self, params: ModelParams, grads: dict[str, Tensor]) -> None:
        self.step += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1 - b1 ** self.step, 1 - b2 ** self.step
        for name, t in params.tensors.items():
            g = grads[name].data.astype(np.float64)
            m = b1 * self.m[name].astype(np.float64) + (1 - b1) * g
            v = b2 * self.v[name].astype(np.float64) + (1 - b2) * g * g
            self.m[name] = m.astype(np.float32)
            self.v[name] = v.astype(np.float32)
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            t.data = (t.data.astype(np.float64) - update).astype(t.data.dtype)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"m/{k}": v for k, v in self.m.items()}
        out.update({f"v/{k}": v for k, v in self.v.items()})
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray], step: int) -> None:
        for k in self.m:
            self.m[k] = np.array(arrays[f"m/{k}"], dtype=np.float32)
            self.v[k] = np.array(arrays[f"v/{k}"], dtype=np.float32)
        self.step = step


class SGD:
    kind = "sgd"

    def __init__(self, params: ModelParams, lr: float):
        self.lr = lr
        self.step = 0

    def apply(self, params: ModelParams, grads: dict[str, Tensor]) -> None:
        self.step += 1
        for name, t in params.tensors.items():
            t.data = (t.data.astype(np.float64) - self.lr * grads[name].data).astype(t.data.dtype)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {}

    def load_arrays(self, arrays, step: int) -> None:
        self.step = step


def make_optimizer(params: ModelParams, cfg: TrainConfig, lr: float):
    if cfg.optimizer == "sgd":
        return SGD(params, lr)
    return Adam(params, lr, cfg.beta1, cfg.beta2, cfg.adam_eps)


def sample_noise_and_condition(n: int, cfg: TrainConfig, rng: np.random.Generator):
    """``z ~ U[-1, 1)`` of shape ``[n, z_dim]`` and a ``[n, C]`` one-hot condition batch."""
    if n < 1:
        raise ValidationError(f"need at least one sample, got {n}")
    z = tensor_create((n, cfg.z_dim), Uniform(-1.0, 1.0), rng)
    return z, one_hot(sample_conditions(n, cfg, rng), cfg.num_classes)


@dataclass
class TrainingState:
    cfg: TrainConfig
    gen: GeneratorParams
    disc: DiscriminatorParams
    opt_g: Adam | SGD
    opt_d: Adam | SGD
    rng: np.random.Generator
    epoch: int = 0
    step: int = 0

    @classmethod
    def initialize(cls, cfg: TrainConfig) -> "TrainingState":
        rng = np.random.default_rng(cfg.seed)
        gen, disc = init_params(cfg, rng)
        return cls(cfg, gen, disc, make_optimizer(gen, cfg, cfg.lr_g), make_optimizer(disc, cfg, cfg.lr_d), rng)

    def to_checkpoint(self) -> Checkpoint:
        tensors = {}
        for prefix, arrays in (
            ("gen", self.gen.state_arrays()),
            ("disc", self.disc.state_arrays()),
            ("opt_g", self.opt_g.state_arrays()),
            ("opt_d", self.opt_d.state_arrays()),
        ):
            tensors.update({f"{prefix}/{k}": np.array(v) for k, v in arrays.items()})
        return Checkpoint(
            config=self.cfg,
            tensors=tensors,
            rng_state=self.rng.bit_generator.state,
            epoch=self.epoch,
            step=self.step,
            extra={"opt_g_step": str(self.opt_g.step), "opt_d_step": str(self.opt_d.step)},
        )

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, cfg: TrainConfig | None = None) -> "TrainingState":
        cfg = ckpt.config if cfg is None else cfg
        _check_compatible(ckpt.config, cfg)
        state = cls.initialize(cfg)

        def sub(prefix):
            n = len(prefix) + 1
            return {k[n:]: v for k, v in ckpt.tensors.items() if k.startswith(prefix + "/")}

        state.gen.load_arrays(sub("gen"))
        state.disc.load_arrays(sub("disc"))
        state.opt_g.load_arrays(sub("opt_g"), int(ckpt.extra.get("opt_g_step", 0)))
        state.opt_d.load_arrays(sub("opt_d"), int(ckpt.extra.get("opt_d_step", 0)))
        if ckpt.rng_state is not None:
            state.rng.bit_generator.state = ckpt.rng_state
        state.epoch, state.step = ckpt.epoch, ckpt.step
        return state


# fields that may differ between a checkpoint and the config resuming it
_RESUMABLE = {"epochs", "checkpoint_every"}


def _check_compatible(saved: TrainConfig, cfg: TrainConfig) -> None:
    a, b = saved.to_kv(), cfg.to_kv()
    diff = sorted(k for k in a if k not in _RESUMABLE and a[k] != b.get(k))
    if diff:
        raise ValidationError(f"config differs from checkpoint in: {', '.join(diff)}")


def train_step(state: TrainingState, x: np.ndarray, y: np.ndarray) -> GanLosses:
    """One alternating update: ``d_steps`` discriminator updates, then one generator update.

    ``x`` is a ``[B, 3, H, W]`` real batch and ``y`` its ``[B, C]`` ground-truth
    one-hot conditions.  Fake batches use freshly sampled conditions.
    """
    B = x.shape[0]
    if B < 2:
        raise DegenerateBatchError(f"training batches need at least 2 samples, got {B}")
    cfg, rng = state.cfg, state.rng
    real = Tensor(x)

    for _ in range(cfg.d_steps):
        z, ys = sample_noise_and_condition(B, cfg, rng)
        with no_record():
            fake = generator_forward(z, ys, state.gen, "train", update_stats=False).detach()
        with GradientTape() as tape:
            tape.watch(state.disc.tensors)
            d_real = discriminator_forward(real, y, state.disc, "train")
            d_fake = discriminator_forward(fake, ys, state.disc, "train")
            losses = gan_losses(d_real, d_fake, cfg.g_loss)
        grads = backward(losses.d_loss, tape)
        state.opt_d.apply(state.disc, grads)

    z, ys = sample_noise_and_condition(B, cfg, rng)
    with GradientTape() as tape:
        tape.watch(state.gen.tensors)
        fake = generator_forward(z, ys, state.gen, "train")
        d_fake = discriminator_forward(fake, ys, state.disc, "train", update_stats=False)
        g_loss = generator_loss(d_fake, cfg.g_loss)
    grads = backward(g_loss, tape)
    state.opt_g.apply(state.gen, grads)
    state.step += 1

    d_val, g_val = float(losses.d_loss), float(g_loss)
    if not (np.isfinite(d_val) and np.isfinite(g_val)):
        raise NumericError(f"non-finite loss at step {state.step}: d={d_val}, g={g_val}")
    return GanLosses(d_val, g_val)


@dataclass
class TrainingHistory:
    epochs: list[dict] = field(default_factory=list)
    grid_paths: list[Path] = field(default_factory=list)
    checkpoint_paths: list[Path] = field(default_factory=list)
    grids: list[np.ndarray] = field(default_factory=list)
    state: TrainingState | None = None

    def __len__(self):
        return len(self.epochs)


def dataset_arrays(dataset):
    """``(pixels_getter, counts)`` for a sequence of samples or ``(images, counts)`` arrays."""
    if isinstance(dataset, tuple) and len(dataset) == 2:
        images, counts = dataset
        images = np.asarray(images, dtype=np.float32)
        return (lambda idx: images[idx]), np.asarray(counts, dtype=np.int64)
    counts = np.asarray([s.leaf_count for s in dataset], dtype=np.int64)
    return (lambda idx: np.stack([dataset[int(i)].pixels for i in idx])), counts


def validate_labels(counts: Sequence[int], cfg: TrainConfig) -> None:
    counts = np.asarray(counts)
    bad = np.flatnonzero((counts < cfg.min_count) | (counts > cfg.max_count))
    if bad.size:
        raise DatasetValidationError(
            f"sample {int(i)}: leaf count {int(counts[i])} outside "
            f"[{cfg.min_count}, {cfg.min_count + cfg.num_classes})"
            for i in bad
        )


def fixed_grid_inputs(cfg: TrainConfig):
    """Noise and conditions held fixed across epochs: one row per class."""
    rng = np.random.default_rng([cfg.seed, 0x5EED])
    n = cfg.num_classes * cfg.grid_cols
    z = tensor_create((n, cfg.z_dim), Uniform(-1.0, 1.0), rng)
    y = one_hot(np.repeat(np.arange(cfg.num_classes), cfg.grid_cols), cfg.num_classes)
    return z, y


def render_grid(state: TrainingState, z: Tensor, y: np.ndarray) -> np.ndarray:
    with no_record():
        imgs = generator_forward(z, y, state.gen, "infer").data
    return tile_grid(imgs, state.cfg.grid_cols)


def train(dataset, cfg: TrainConfig, out_dir=None, resume=None, keep_grids: bool = True) -> TrainingHistory:
    """Run ``cfg.epochs`` epochs of shuffled minibatches.

    After every epoch a fixed-noise sample grid is rendered (and written to
    ``out_dir`` as PNG); checkpoints are written to ``out_dir`` at the start
    of a fresh run, every ``cfg.checkpoint_every`` epochs and after the last
    epoch.  ``resume`` is a :class:`Checkpoint` or a path to one.
    """
    pixels, counts = dataset_arrays(dataset)
    n = len(counts)
    if n == 0 and cfg.epochs > 0:
        raise ValidationError("cannot train on an empty dataset")
    validate_labels(counts, cfg)
    if n:
        shape = pixels(np.array([0])).shape[1:]
        if shape != (3, cfg.resolution, cfg.resolution):
            raise ValidationError(
                f"dataset images are {list(shape)}, config expects [3, {cfg.resolution}, {cfg.resolution}]"
            )
    if 0 < n < 2:
        raise DegenerateBatchError("training needs at least 2 samples")

    if resume is not None:
        ckpt = resume if isinstance(resume, Checkpoint) else load_checkpoint(resume)
        state = TrainingState.from_checkpoint(ckpt, cfg)
    else:
        state = TrainingState.initialize(cfg)

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    hist = TrainingHistory(state=state)
    if out is not None and resume is None:
        hist.checkpoint_paths.append(save_checkpoint(state.to_checkpoint(), out / "ckpt_epoch000.bin"))

    grid_z, grid_y = fixed_grid_inputs(cfg)
    bs = min(cfg.batch_size, n) if n else 0
    steps = n // bs if bs else 0
    onehot = counts_to_onehot(counts, cfg) if n else None

    for epoch in range(state.epoch, cfg.epochs):
        perm = state.rng.permutation(n)
        d_sum = g_sum = 0.0
        for s in range(steps):
            idx = perm[s * bs:(s + 1) * bs]
            losses = train_step(state, pixels(idx), onehot[idx])
            d_sum += losses.d_loss
            g_sum += losses.g_loss
        state.epoch = epoch + 1
        record = {"epoch": epoch, "d_loss": d_sum / steps, "g_loss": g_sum / steps, "steps": state.step}
        hist.epochs.append(record)
        logger.info("epoch %d: d_loss=%.4f g_loss=%.4f", epoch, record["d_loss"], record["g_loss"])

        grid = render_grid(state, grid_z, grid_y)
        if keep_grids:
            hist.grids.append(grid)
        if out is not None:
            hist.grid_paths.append(write_rgb(out / f"samples_epoch{epoch:03d}.png", grid))
            if state.epoch % cfg.checkpoint_every == 0 or state.epoch == cfg.epochs:
                hist.checkpoint_paths.append(
                    save_checkpoint(state.to_checkpoint(), out / f"ckpt_epoch{state.epoch:03d}.bin")
                )
    return hist
