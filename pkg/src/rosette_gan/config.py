"""Hyperparameter record shared by models, training and the checkpoint format."""
from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field

from .errors import ValidationError

G_LOSSES = ("non_saturating", "minimax")
OPTIMIZERS = ("adam", "sgd")
CONDITION_SAMPLING = ("uniform", "empirical")


@dataclass
class TrainConfig:
    resolution: int = 128
    z_dim: int = 100
    fc1_width: int = 1024
    base_width: int = 64
    num_classes: int = 10
    min_count: int = 1
    kernel_size: int = 5
    leaky_slope: float = 0.2
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5
    # normalization of G's output layer and D's input layer (off, as in DCGAN)
    bn_generator_output: bool = False
    bn_discriminator_input: bool = False
    init_std: float = 0.02
    optimizer: str = "adam"
    lr_d: float = 2e-4
    lr_g: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int | None = None
    epochs: int = 25
    d_steps: int = 1
    g_loss: str = "non_saturating"
    condition_sampling: str = "uniform"
    # empirical class frequencies, used when condition_sampling == "empirical"
    class_weights: tuple = field(default_factory=tuple)
    checkpoint_every: int = 1
    grid_cols: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.batch_size is None:
            self.batch_size = 32 if self.resolution >= 128 else 64
        self.class_weights = tuple(float(w) for w in self.class_weights)
        self.validate()

    @property
    def n_layers(self) -> int:
        """Number of stride-2 (de)convolutions between 4x4 and full resolution."""
        return math.ceil(math.log2(self.resolution)) - 2

    @property
    def max_count(self) -> int:
        return self.min_count + self.num_classes - 1

    def validate(self) -> None:
        r = self.resolution
        if r < 8 or r & (r - 1):
            raise ValidationError(f"resolution must be a power of two >= 8, got {r}")
        for name in ("z_dim", "fc1_width", "base_width", "num_classes", "batch_size", "d_steps",
                     "checkpoint_every", "grid_cols"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.batch_size < 2:
            raise ValidationError("batch_size must be >= 2 (batch normalization)")
        if self.epochs < 0:
            raise ValidationError(f"epochs must be >= 0, got {self.epochs}")
        if self.min_count < 1:
            raise ValidationError(f"min_count must be >= 1, got {self.min_count}")
        if not 0 < self.leaky_slope < 1:
            raise ValidationError(f"leaky_slope must lie in (0, 1), got {self.leaky_slope}")
        if self.g_loss not in G_LOSSES:
            raise ValidationError(f"g_loss must be one of {G_LOSSES}, got {self.g_loss!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ValidationError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.condition_sampling not in CONDITION_SAMPLING:
            raise ValidationError(
                f"condition_sampling must be one of {CONDITION_SAMPLING}, got {self.condition_sampling!r}"
            )
        if self.condition_sampling == "empirical" and len(self.class_weights) != self.num_classes:
            raise ValidationError("empirical condition sampling needs one class weight per class")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_kv(self) -> dict[str, str]:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                out[f.name] = ",".join(repr(x) for x in v)
            else:
                out[f.name] = repr(v) if isinstance(v, float) else str(v)
        return out

    @classmethod
    def from_kv(cls, kv: dict[str, str]) -> "TrainConfig":
        defaults = cls()
        values = {}
        for f in dataclasses.fields(cls):
            if f.name not in kv:
                continue
            raw = kv[f.name]
            ref = getattr(defaults, f.name)
            if isinstance(ref, bool):
                values[f.name] = raw == "True"
            elif isinstance(ref, int):
                values[f.name] = int(raw)
            elif isinstance(ref, float):
                values[f.name] = float(raw)
            elif isinstance(ref, tuple):
                values[f.name] = tuple(float(x) for x in raw.split(",") if x)
            else:
                values[f.name] = raw
        return cls(**values)


def worker_count(default: int = 4) -> int:
    """Worker parallelism, capped by the ``ROSETTE_GAN_THREADS`` environment variable."""
    raw = os.environ.get("ROSETTE_GAN_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ValidationError(f"ROSETTE_GAN_THREADS must be an integer, got {raw!r}") from None
    return max(1, min(default, os.cpu_count() or 1))
