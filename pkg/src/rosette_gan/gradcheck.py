"""Finite-difference verification of every layer primitive and both full networks.

Checks run in float64 so central differences resolve relative errors far
below the 1e-3 acceptance threshold.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .config import TrainConfig
from .layers import (BatchNormParams, Conv2dParams, batch_norm, conv2d, deconv2d, fully_connected,
                     leaky_relu, relu, sigmoid, tanh)
from .models import ModelParams, discriminator_forward, generator_forward, init_params, one_hot
from .tensor import (Tensor, add, clip, concat, exp, finite_diff_check, log, matmul, mean_all, mul, reshape,
                     square, sub, sum_all)
from .training import gan_losses

TOLERANCE = 1e-3
STEP = 1e-6


@dataclass
class GradcheckResult:
    name: str
    max_rel_error: float
    n_coords: int
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def _f64(rng, *shape, lo=-1.0, hi=1.0, away_from_zero=False):
    a = rng.uniform(lo, hi, shape)
    if away_from_zero:
        # keep kinked activations' inputs clear of the kink by far more than the step
        a = np.where(np.abs(a) < 0.05, np.sign(a + 1e-12) * 0.05, a)
    return Tensor(a, dtype=np.float64)


def _projection(out: Tensor, rng) -> Tensor:
    """Random linear functional of ``out``; avoids the cancellations of a plain sum."""
    r = Tensor(rng.standard_normal(out.shape), dtype=np.float64)
    return sum_all(mul(out, r))


def _coords(size: int, limit: int | None, rng) -> list[int] | None:
    if limit is None or size <= limit:
        return None
    return sorted(rng.choice(size, limit, replace=False).tolist())


def check_inputs(name: str, f: Callable[..., Tensor], inputs: dict[str, Tensor], rng,
                 max_coords: int | None = None) -> list[GradcheckResult]:
    """Check ``f(**inputs)`` against each input in turn, holding the others fixed."""
    r_seed = int(rng.integers(2 ** 32))
    results = []
    for arg, x in inputs.items():
        def g(t, arg=arg):
            out = f(**{**inputs, arg: t})
            return _projection(out, np.random.default_rng(r_seed))

        coords = _coords(x.size, max_coords, rng)
        err = finite_diff_check(g, x, eps=STEP, coords=coords)
        results.append(GradcheckResult(f"{name}[{arg}]", err, x.size if coords is None else len(coords)))
    return results


def layer_checks(rng: np.random.Generator) -> list[GradcheckResult]:
    out: list[GradcheckResult] = []
    t = lambda *s, **kw: _f64(rng, *s, **kw)  # noqa: E731

    out += check_inputs("fully_connected", lambda x, w, b: fully_connected(x, w, b),
                        {"x": t(3, 5), "w": t(5, 4), "b": t(4)}, rng)
    out += check_inputs("conv2d", lambda x, w, b: conv2d(x, Conv2dParams(w, b)),
                        {"x": t(2, 3, 8, 8), "w": t(4, 3, 5, 5), "b": t(4)}, rng)
    out += check_inputs("deconv2d", lambda x, w, b: deconv2d(x, Conv2dParams(w, b)),
                        {"x": t(2, 4, 4, 4), "w": t(4, 3, 5, 5), "b": t(3)}, rng)

    def bn(mode, shape):
        C = shape[1]
        rm, rv = t(C), _f64(rng, C, lo=0.5, hi=2.0)

        def f(x, gamma, beta):
            p = BatchNormParams(gamma, beta, Tensor(rm.data.copy()), Tensor(rv.data.copy()))
            return batch_norm(x, p, mode, update_stats=False)
        return f, {"x": t(*shape), "gamma": _f64(rng, C, lo=0.5, hi=1.5), "beta": t(C)}

    for mode in ("train", "infer"):
        for shape in ((4, 3, 4, 4), (6, 5)):
            f, inputs = bn(mode, shape)
            out += check_inputs(f"batch_norm_{mode}_{len(shape)}d", f, inputs, rng)

    for name, fn in (("relu", relu), ("leaky_relu", lambda x: leaky_relu(x, 0.2)), ("tanh", tanh),
                     ("sigmoid", sigmoid)):
        out += check_inputs(name, lambda x, fn=fn: fn(x), {"x": t(4, 6, lo=-3, hi=3, away_from_zero=True)}, rng)

    out += check_inputs("add_broadcast", lambda a, b: add(a, b), {"a": t(3, 4), "b": t(4)}, rng)
    out += check_inputs("sub", lambda a, b: sub(a, b), {"a": t(3, 4), "b": t(3, 4)}, rng)
    out += check_inputs("mul_broadcast", lambda a, b: mul(a, b), {"a": t(3, 4), "b": t(1, 4)}, rng)
    out += check_inputs("matmul", lambda a, b: matmul(a, b), {"a": t(3, 4), "b": t(4, 2)}, rng)
    out += check_inputs("concat", lambda a, b: concat([a, b], axis=1), {"a": t(2, 3, 2), "b": t(2, 1, 2)}, rng)
    out += check_inputs("reshape", lambda a: reshape(a, (4, 3)), {"a": t(2, 6)}, rng)
    out += check_inputs("log", lambda a: log(a), {"a": _f64(rng, 3, 4, lo=0.2, hi=2.0)}, rng)
    out += check_inputs("exp", lambda a: exp(a), {"a": t(3, 4)}, rng)
    out += check_inputs("square", lambda a: square(a), {"a": t(3, 4)}, rng)
    out += check_inputs("clip", lambda a: clip(a, -0.5, 0.5), {"a": t(3, 4, lo=-2, hi=2, away_from_zero=True)}, rng)
    out += check_inputs("mean_all", lambda a: mean_all(a), {"a": t(3, 4)}, rng)

    def d_loss(real, fake):
        return gan_losses(sigmoid(real), sigmoid(fake)).d_loss

    def g_loss(fake):
        return gan_losses(sigmoid(fake), sigmoid(fake)).g_loss

    out += check_inputs("d_loss", d_loss, {"real": t(4, 1, lo=-3, hi=3), "fake": t(4, 1, lo=-3, hi=3)}, rng)
    out += check_inputs("g_loss", g_loss, {"fake": t(4, 1, lo=-3, hi=3)}, rng)
    return out


def gradcheck_config() -> TrainConfig:
    """16x16 network with narrow layers; batch 2."""
    return TrainConfig(resolution=16, z_dim=6, fc1_width=12, base_width=3, num_classes=3, batch_size=2)


def _to_f64(p: ModelParams, rng, jitter: float) -> ModelParams:
    """float64 copy with BN affine terms moved off their trivial init."""
    q = p.copy()
    for k, v in q.tensors.items():
        data = v.data.astype(np.float64)
        if k.endswith((".gamma", ".beta", ".b")):
            data = data + jitter * rng.standard_normal(data.shape)
        q.tensors[k] = Tensor(data, name=k, dtype=np.float64)
    return q


def network_checks(rng: np.random.Generator, cfg: TrainConfig | None = None,
                   max_coords: int = 24) -> list[GradcheckResult]:
    cfg = cfg or gradcheck_config()
    gen, disc = init_params(cfg, rng)
    # larger weights than the 0.02 init keep activations away from a near-linear regime
    for p in (gen, disc):
        for k, v in p.tensors.items():
            if k.endswith(".w"):
                v.data = (v.data * 10).astype(v.data.dtype)
    gen, disc = _to_f64(gen, rng, 0.1), _to_f64(disc, rng, 0.1)
    B = cfg.batch_size
    y = one_hot(rng.integers(cfg.num_classes, size=B), cfg.num_classes)
    z = _f64(rng, B, cfg.z_dim)
    x = _f64(rng, B, 3, cfg.resolution, cfg.resolution)
    r_seed = int(rng.integers(2 ** 32))

    out = []
    for net, params, fwd, inp, inp_name in (
        ("generator", gen, generator_forward, z, "z"),
        ("discriminator", disc, discriminator_forward, x, "x"),
    ):
        def run(p, t):
            return _projection(fwd(t, y, p, "train", update_stats=False), np.random.default_rng(r_seed))

        targets = {inp_name: inp, **params.tensors}
        for name, tensor in targets.items():
            if name == inp_name:
                f = lambda t: run(params, t)  # noqa: E731
            else:
                f = lambda t, name=name: run(params.replace(name, t), inp)  # noqa: E731
            coords = _coords(tensor.size, max_coords, rng)
            err = finite_diff_check(f, tensor, eps=STEP, coords=coords)
            out.append(GradcheckResult(f"{net}[{name}]", err, tensor.size if coords is None else len(coords)))
    return out


def run_gradcheck(seed: int = 0, max_coords: int = 24) -> list[GradcheckResult]:
    rng = np.random.default_rng(seed)
    return layer_checks(rng) + network_checks(rng, max_coords=max_coords)


def format_results(results: list[GradcheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{r.name:<{width}}  {r.max_rel_error:.3e}  {'ok' if r.passed else 'FAIL'}  ({r.n_coords} coords)"
             for r in results]
    worst = max(r.max_rel_error for r in results)
    lines.append(f"{'max':<{width}}  {worst:.3e}  {'ok' if all(r.passed for r in results) else 'FAIL'}")
    return "\n".join(lines)
