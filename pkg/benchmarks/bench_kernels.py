"""Compare the compiled and numpy im2col/col2im backends, plus a full conv2d/deconv2d pass.

    python benchmarks/bench_kernels.py [--repeat N]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from rosette_gan import kernels
from rosette_gan.layers import Conv2dParams, conv2d, deconv2d
from rosette_gan.tensor import Tensor, no_record

SHAPES = [(32, 3, 128, 128), (64, 20, 16, 16), (32, 64, 32, 32)]
K, STRIDE, PAD = 5, 2, 2


def bench(shape, backend: str, repeat: int) -> dict[str, float]:
    kernels.set_backend(backend)
    rng = np.random.default_rng(0)
    B, C, H, W = shape
    Ho = Wo = (H + 2 * PAD - K) // STRIDE + 1
    x = rng.standard_normal(shape).astype(np.float32)
    cols = kernels.im2col(x, K, STRIDE, PAD, Ho, Wo)
    w = Tensor(rng.standard_normal((8, C, K, K)) * 0.02)
    wd = Tensor(rng.standard_normal((C, 8, K, K)) * 0.02)
    xd = Tensor(rng.standard_normal((B, C, H // 2, W // 2)))
    b = Tensor(np.zeros(8))
    timings = {
        "im2col": lambda: kernels.im2col(x, K, STRIDE, PAD, Ho, Wo),
        "col2im": lambda: kernels.col2im(cols, B, C, H, W, K, STRIDE, PAD, Ho, Wo),
    }
    with no_record():
        timings["conv2d"] = lambda: conv2d(Tensor(x), Conv2dParams(w, b))
        timings["deconv2d"] = lambda: deconv2d(xd, Conv2dParams(wd, b))
        return {k: min(timeit.repeat(f, number=1, repeat=repeat)) * 1e3 for k, f in timings.items()}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = kernels.available_backends()
    default = kernels.BACKEND
    print(f"backends: {', '.join(backends)} (default {default}); best of {args.repeat}, ms")
    print(f"{'shape':<20}{'op':<10}" + "".join(f"{b:>10}" for b in backends) + ("   speedup" if len(backends) > 1 else ""))
    try:
        for shape in SHAPES:
            res = {b: bench(shape, b, args.repeat) for b in backends}
            for op in res[backends[0]]:
                row = f"{'x'.join(map(str, shape)):<20}{op:<10}" + "".join(f"{res[b][op]:>10.2f}" for b in backends)
                if len(backends) > 1:
                    row += f"{res['numpy'][op] / res[backends[0]][op]:>9.2f}x"
                print(row)
    finally:
        kernels.set_backend(default)


if __name__ == "__main__":
    main()
