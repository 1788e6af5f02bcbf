"""Leaf-count metrics, k-fold cross-validation and the synthetic-augmentation experiment."""
from __future__ import annotations

import csv
import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import worker_count
from .errors import ValidationError
from .layers import batch_norm, conv2d, fully_connected, leaky_relu
from .models import ModelParams, _add_bn, _add_conv, _add_dense
from .tensor import GradientTape, Tensor, backward, flatten, mean_all, no_record, square
from .training import Adam

logger = logging.getLogger(__name__)


@dataclass
class CountMetrics:
    dic_mean: float
    dic_std: float
    abs_dic_mean: float
    abs_dic_std: float
    mse: float
    r2: float | None  # None when the truth is constant
    mse_rounded: float
    n: int

    @property
    def r2_defined(self) -> bool:
        return self.r2 is not None


def round_half_away(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def count_metrics(pred: Sequence[float], truth: Sequence[int]) -> CountMetrics:
    """DiC and |DiC| on rounded predictions; MSE and R^2 on raw predictions.

    Standard deviations are population (ddof=0) values.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise ValidationError(f"pred and truth must be equal-length vectors, got {pred.shape} and {truth.shape}")
    if pred.size == 0:
        raise ValidationError("metrics need at least one prediction")
    dic = round_half_away(pred) - truth
    resid = pred - truth
    ss_res = float(np.sum(resid ** 2))
    ss_tot = float(np.sum((truth - truth.mean()) ** 2))
    return CountMetrics(
        dic_mean=float(dic.mean()),
        dic_std=float(dic.std()),
        abs_dic_mean=float(np.abs(dic).mean()),
        abs_dic_std=float(np.abs(dic).std()),
        mse=ss_res / pred.size,
        r2=None if ss_tot == 0 else 1.0 - ss_res / ss_tot,
        mse_rounded=float(np.mean(dic ** 2)),
        n=int(pred.size),
    )


def kfold_split(n: int, k: int, rng: np.random.Generator) -> list[tuple[np.ndarray, np.ndarray]]:
    """``k`` (train, test) index pairs; test folds are disjoint and cover ``range(n)``."""
    if k < 2:
        raise ValidationError(f"k must be >= 2, got {k}")
    if n < k:
        raise ValidationError(f"need at least k={k} items, got {n}")
    folds = np.array_split(rng.permutation(n), k)
    out = []
    for i, test in enumerate(folds):
        train = np.concatenate([f for j, f in enumerate(folds) if j != i])
        out.append((np.sort(train), np.sort(test)))
    return out


# ---------------------------------------------------------------------------
# baseline count regressor

@dataclass
class RegressorConfig:
    base_width: int = 8
    epochs: int = 30
    batch_size: int = 32
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    init_std: float = 0.02
    leaky_slope: float = 0.2
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5
    seed: int = 0
    min_samples: int = 10


@dataclass
class RegressorModel:
    params: ModelParams
    cfg: RegressorConfig
    resolution: int
    losses: list[float] = field(default_factory=list)


def _init_regressor(cfg: RegressorConfig, resolution: int, mean_count: float, rng) -> ModelParams:
    if resolution % 8:
        raise ValidationError(f"regressor input size must be a multiple of 8, got {resolution}")
    p = ModelParams(cfg)
    w = cfg.base_width
    chans = [3, w, 2 * w, 4 * w]
    for i in range(1, 4):
        _add_conv(p, f"conv{i}", (chans[i], chans[i - 1], 5, 5), cfg, rng, chans[i])
        if i > 1:
            _add_bn(p, f"bn_conv{i}", chans[i])
    _add_dense(p, "head", chans[3] * (resolution // 8) ** 2, 1, cfg, rng)
    p.tensors["head.b"].data[:] = mean_count
    return p


def _regressor_forward(x: Tensor, p: ModelParams, mode: str, momentum: float | None = None) -> Tensor:
    h = x
    for i in range(1, 4):
        h = conv2d(h, p.conv(f"conv{i}"))
        if p.has_bn(f"bn_conv{i}"):
            bn = p.bn(f"bn_conv{i}")
            if momentum is not None:
                bn = dataclasses.replace(bn, momentum=momentum)
            h = batch_norm(h, bn, mode)
        h = leaky_relu(h, p.cfg.leaky_slope)
    return fully_connected(flatten(h), p["head.w"], p["head.b"])


def _stack(samples) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([s.pixels for s in samples]).astype(np.float32)
    y = np.array([s.leaf_count for s in samples], dtype=np.float32)
    return x, y


def _recalibrate_bn(p: ModelParams, x: np.ndarray, batch_size: int) -> None:
    """Replace running statistics with a cumulative average over ``x`` at the final weights.

    The exponential averages gathered during training lag the weights, which
    moves quickly at the regressor's learning rate.
    """
    starts = range(0, len(x) - batch_size + 1, batch_size)
    with no_record():
        for j, s in enumerate(starts):
            _regressor_forward(Tensor(x[s:s + batch_size]), p, "train", momentum=j / (j + 1))


def baseline_regressor_train(samples, cfg: RegressorConfig | None = None,
                             rng: np.random.Generator | None = None) -> RegressorModel:
    """Small CNN (3 conv blocks + linear head) fit to leaf counts with squared error."""
    cfg = cfg or RegressorConfig()
    if len(samples) < cfg.min_samples:
        raise ValidationError(f"baseline regressor needs >= {cfg.min_samples} samples, got {len(samples)}")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    x, y = _stack(samples)
    res = x.shape[-1]
    p = _init_regressor(cfg, res, float(y.mean()), rng)
    opt = Adam(p, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    model = RegressorModel(p, cfg, res)
    n = len(y)
    bs = max(2, min(cfg.batch_size, n))
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        total = 0.0
        steps = n // bs
        for s in range(steps):
            idx = perm[s * bs:(s + 1) * bs]
            with GradientTape() as tape:
                tape.watch(p.tensors)
                pred = _regressor_forward(Tensor(x[idx]), p, "train")
                loss = mean_all(square(pred - Tensor(y[idx, None])))
            opt.apply(p, backward(loss, tape))
            total += float(loss)
        model.losses.append(total / steps)
    _recalibrate_bn(p, x[rng.permutation(n)], bs)
    return model


def baseline_regressor_predict(model: RegressorModel, samples, batch_size: int = 256) -> np.ndarray:
    x, _ = _stack(samples)
    if x.shape[-1] != model.resolution:
        raise ValidationError(f"model expects {model.resolution}px inputs, got {x.shape[-1]}px")
    out = []
    with no_record():
        for i in range(0, len(x), batch_size):
            out.append(_regressor_forward(Tensor(x[i:i + batch_size]), model.params, "infer").data[:, 0])
    return np.concatenate(out).astype(np.float64)


# ---------------------------------------------------------------------------
# augmentation experiment

@dataclass
class FoldResult:
    condition: str
    fold: int
    train_indices: np.ndarray
    test_indices: np.ndarray
    n_train: int
    train: CountMetrics
    test: CountMetrics


def _mean_metrics(items: Sequence[CountMetrics]) -> CountMetrics:
    def avg(name):
        return float(np.mean([getattr(m, name) for m in items]))

    r2s = [m.r2 for m in items]
    return CountMetrics(
        dic_mean=avg("dic_mean"),
        dic_std=avg("dic_std"),
        abs_dic_mean=avg("abs_dic_mean"),
        abs_dic_std=avg("abs_dic_std"),
        mse=avg("mse"),
        r2=None if any(r is None for r in r2s) else float(np.mean(r2s)),
        mse_rounded=avg("mse_rounded"),
        n=int(sum(m.n for m in items)),
    )


@dataclass
class ExperimentReport:
    folds: list[FoldResult]
    conditions: list[str]
    labels: dict[str, str]
    k: int
    n_real: int
    n_synthetic: int

    def aggregate(self, condition: str, split: str) -> CountMetrics:
        return _mean_metrics([getattr(f, split) for f in self.folds if f.condition == condition])

    def fold_results(self, condition: str) -> list[FoldResult]:
        return [f for f in self.folds if f.condition == condition]

    def to_text(self) -> str:
        width = 44
        lines = [f"{'':>8}  {'Training Error':<17}{'Testing Error':<17}", "-" * width]
        for cond in self.conditions:
            lines.append(self.labels[cond].center(width))
            tr, te = self.aggregate(cond, "train"), self.aggregate(cond, "test")

            def r2(m):
                return "undef" if m.r2 is None else f"{m.r2:.3f}"

            lines += [
                f"{'DiC':>8}  {f'{tr.dic_mean:.3f} ({tr.dic_std:.3f})':<17}{f'{te.dic_mean:.3f} ({te.dic_std:.3f})':<17}",
                f"{'|DiC|':>8}  {f'{tr.abs_dic_mean:.3f} ({tr.abs_dic_std:.3f})':<17}"
                f"{f'{te.abs_dic_mean:.3f} ({te.abs_dic_std:.3f})':<17}",
                f"{'MSE':>8}  {f'{tr.mse:.3f}':<17}{f'{te.mse:.3f}':<17}",
                f"{'R2':>8}  {r2(tr):<17}{r2(te):<17}",
                "-" * width,
            ]
        lines.append(f"{self.k}-fold cross-validation; DiC and |DiC| as mean (std).")
        return "\n".join(lines)

    def rows(self):
        metrics = [k for k in asdict(self.folds[0].train) if k != "n"] if self.folds else []
        for f in self.folds:
            for split in ("train", "test"):
                m = getattr(f, split)
                for name in metrics:
                    yield f.condition, str(f.fold), split, name, getattr(m, name)
        for cond in self.conditions:
            for split in ("train", "test"):
                m = self.aggregate(cond, split)
                for name in metrics:
                    yield cond, "mean", split, name, getattr(m, name)

    def write_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["condition", "fold", "split", "metric", "value"])
            for cond, fold, split, name, value in self.rows():
                w.writerow([cond, fold, split, name, "undefined" if value is None else repr(float(value))])
        return path


def augmentation_experiment(real, synthetic, k: int = 4, cfg: RegressorConfig | None = None,
                            real_name: str = "A4", synthetic_name: str = "Ax") -> ExperimentReport:
    """Cross-validated comparison of training on real data alone vs real plus synthetic.

    Folds are drawn over ``real`` only; synthetic samples join every training
    split and never a test split, so both conditions are scored on identical
    real test indices.
    """
    cfg = cfg or RegressorConfig()
    folds = kfold_split(len(real), k, np.random.default_rng(cfg.seed))
    conditions = ["real"]
    if len(synthetic):
        conditions.append("real+synthetic")
    else:
        logger.warning("no synthetic samples; reporting the real-only condition")
    labels = {"real": f"Trained on {real_name} only", "real+synthetic": f"Trained on {real_name} and {synthetic_name}"}

    def run(job):
        fi, cond = job
        train_idx, test_idx = folds[fi]
        train_set = [real[i] for i in train_idx]
        if cond == "real+synthetic":
            train_set += list(synthetic)
        test_set = [real[i] for i in test_idx]
        model = baseline_regressor_train(train_set, cfg, np.random.default_rng([cfg.seed, fi]))
        truth_tr = [s.leaf_count for s in train_set]
        truth_te = [s.leaf_count for s in test_set]
        return FoldResult(
            cond, fi, train_idx, test_idx, len(train_set),
            count_metrics(baseline_regressor_predict(model, train_set), truth_tr),
            count_metrics(baseline_regressor_predict(model, test_set), truth_te),
        )

    jobs = [(fi, cond) for cond in conditions for fi in range(k)]
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        results = list(pool.map(run, jobs))
    return ExperimentReport(results, conditions, labels, k, len(real), len(synthetic))
