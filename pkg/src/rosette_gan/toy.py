"""Fully-connected GAN on a low-dimensional Gaussian target.

Uses the same tensor, layer, loss and optimizer code as the image model, at a
size where convergence can be checked in seconds.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .layers import fully_connected, leaky_relu, sigmoid
from .models import ModelParams, _add_dense
from .tensor import GradientTape, Tensor, Uniform, backward, no_record, tensor_create
from .training import Adam, gan_losses


@dataclass
class ToyConfig:
    dim: int = 1
    z_dim: int = 4
    hidden: int = 32
    target_mean: tuple = (2.0,)
    target_std: tuple = (0.75,)
    steps: int = 5000
    batch_size: int = 64
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    init_std: float = 0.1
    leaky_slope: float = 0.2
    g_loss: str = "non_saturating"
    seed: int = 0

    def __post_init__(self):
        self.target_mean = tuple(float(v) for v in np.broadcast_to(self.target_mean, (self.dim,)))
        self.target_std = tuple(float(v) for v in np.broadcast_to(self.target_std, (self.dim,)))
        if min(self.target_std) <= 0:
            raise ValidationError("target_std must be positive")
        if self.batch_size < 2 or self.steps < 0:
            raise ValidationError("batch_size must be >= 2 and steps >= 0")


def seeded_target(seed: int, dim: int = 1) -> tuple[tuple, tuple]:
    """Target mean in [-2, 2] and std in [0.5, 1.5] per dimension, drawn from ``seed``."""
    rng = np.random.default_rng([seed, 0x70A])
    return tuple(rng.uniform(-2, 2, dim)), tuple(rng.uniform(0.5, 1.5, dim))


@dataclass
class ToyResult:
    gen: ModelParams
    disc: ModelParams
    d_losses: list[float] = field(default_factory=list)
    g_losses: list[float] = field(default_factory=list)


def _mlp(p: ModelParams, x: Tensor, prefix: str, n: int, slope: float) -> Tensor:
    h = x
    for i in range(1, n + 1):
        h = fully_connected(h, p[f"{prefix}{i}.w"], p[f"{prefix}{i}.b"])
        if i < n:
            h = leaky_relu(h, slope)
    return h


def toy_generator(z: Tensor, p: ModelParams) -> Tensor:
    return _mlp(p, z, "g", 3, p.cfg.leaky_slope)


def toy_discriminator(x: Tensor, p: ModelParams) -> Tensor:
    return sigmoid(_mlp(p, x, "d", 3, p.cfg.leaky_slope))


def init_toy(cfg: ToyConfig, rng: np.random.Generator) -> tuple[ModelParams, ModelParams]:
    gen, disc = ModelParams(cfg), ModelParams(cfg)
    h = cfg.hidden
    for i, (a, b) in enumerate([(cfg.z_dim, h), (h, h), (h, cfg.dim)], 1):
        _add_dense(gen, f"g{i}", a, b, cfg, rng)
    for i, (a, b) in enumerate([(cfg.dim, h), (h, h), (h, 1)], 1):
        _add_dense(disc, f"d{i}", a, b, cfg, rng)
    return gen, disc


def _noise(n: int, cfg: ToyConfig, rng) -> Tensor:
    return tensor_create((n, cfg.z_dim), Uniform(-1.0, 1.0), rng)


def _real(n: int, cfg: ToyConfig, rng) -> Tensor:
    x = np.asarray(cfg.target_mean) + np.asarray(cfg.target_std) * rng.standard_normal((n, cfg.dim))
    return Tensor(x)


def train_toy(cfg: ToyConfig | None = None) -> ToyResult:
    """Alternating D/G updates with the image model's losses and optimizer."""
    cfg = cfg or ToyConfig()
    rng = np.random.default_rng(cfg.seed)
    gen, disc = init_toy(cfg, rng)
    opt_g = Adam(gen, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    opt_d = Adam(disc, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    out = ToyResult(gen, disc)
    n = cfg.batch_size
    for _ in range(cfg.steps):
        with no_record():
            fake = toy_generator(_noise(n, cfg, rng), gen).detach()
        real = _real(n, cfg, rng)
        with GradientTape() as tape:
            tape.watch(disc.tensors)
            losses = gan_losses(toy_discriminator(real, disc), toy_discriminator(fake, disc), cfg.g_loss)
        opt_d.apply(disc, backward(losses.d_loss, tape))

        with GradientTape() as tape:
            tape.watch(gen.tensors)
            d_fake = toy_discriminator(toy_generator(_noise(n, cfg, rng), gen), disc)
            losses_g = gan_losses(d_fake, d_fake, cfg.g_loss)
        opt_g.apply(gen, backward(losses_g.g_loss, tape, wrt=list(gen.tensors)))
        out.d_losses.append(float(losses.d_loss))
        out.g_losses.append(float(losses_g.g_loss))
    return out


def sample_toy(gen: ModelParams, n: int, rng: np.random.Generator) -> np.ndarray:
    with no_record():
        return toy_generator(_noise(n, gen.cfg, rng), gen).data.astype(np.float64)


@dataclass
class ToyCheck:
    mean: np.ndarray
    std: np.ndarray
    passed: bool


def check_toy(result: ToyResult, n: int = 10000, mean_tol: float = 0.3,
              std_band: tuple = (0.5, 1.5), rng: np.random.Generator | None = None) -> ToyCheck:
    """Compare generated sample moments with the target's."""
    cfg = result.gen.cfg
    rng = rng if rng is not None else np.random.default_rng([cfg.seed, 1])
    s = sample_toy(result.gen, n, rng)
    mean, std = s.mean(axis=0), s.std(axis=0)
    tm, ts = np.asarray(cfg.target_mean), np.asarray(cfg.target_std)
    ok = bool(np.all(np.abs(mean - tm) <= mean_tol)
              and np.all(std >= std_band[0] * ts) and np.all(std <= std_band[1] * ts))
    return ToyCheck(mean, std, ok)
