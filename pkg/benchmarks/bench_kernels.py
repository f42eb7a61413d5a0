"""Compiled vs numpy kernels: im2col, col2im, fused Adam, and one GAN step.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from cganse import _kernels_py, kernels

try:
    from cganse import _kernels as compiled
except ImportError:
    compiled = None


def conv_case(n=1, c=64, h=32, k=4, stride=2, pad=1):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((n, c, h, h)).astype(np.float32)
    ho = (h + 2 * pad - k) // stride + 1
    return x, (k, stride, pad, ho, ho)


def bench(label, fns, repeat):
    row = [label]
    times = {}
    for name, fn in fns.items():
        fn()
        times[name] = min(timeit.repeat(fn, number=1, repeat=repeat))
        row.append(f"{name} {times[name] * 1e3:8.3f} ms")
    if len(times) == 2:
        row.append(f"speedup {times['python'] / times['compiled']:5.1f}x")
    print("  ".join(row))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    impls = {"python": _kernels_py}
    if compiled is not None:
        impls["compiled"] = compiled
    print(f"default backend: {kernels.BACKEND}")

    for c, h in ((1, 64), (64, 32), (128, 8)):
        x, geo = conv_case(c=c, h=h)
        cols = _kernels_py.im2col(x, *geo)
        for name, m in impls.items():
            assert np.allclose(m.im2col(x, *geo), cols)
        bench(f"im2col  C={c:3d} H={h:2d}", {n: (lambda m=m: m.im2col(x, *geo)) for n, m in impls.items()},
              args.repeat)
        bench(f"col2im  C={c:3d} H={h:2d}",
              {n: (lambda m=m: m.col2im(cols, x.shape, *geo)) for n, m in impls.items()}, args.repeat)

    rng = np.random.default_rng(1)
    size = 128 * 128 * 16
    g = rng.standard_normal(size).astype(np.float32)

    def adam(m):
        p, mm, v = np.zeros(size, np.float32), np.zeros(size, np.float32), np.zeros(size, np.float32)
        return lambda: m.adam_update(p, g, mm, v, 0.5, 0.999, 2e-4, 0.0447, 1e-8)
    bench(f"adam    n={size}", {n: adam(m) for n, m in impls.items()}, args.repeat)

    from cganse import pix2pix
    cfg = pix2pix.TrainConfig(side=64, cap=128)
    y = rng.uniform(-1, 1, (1, 1, 64, 64)).astype(np.float32)
    x = rng.uniform(-1, 1, (1, 1, 64, 64)).astype(np.float32)
    fns = {}
    for name, m in impls.items():
        def step(m=m, tr=pix2pix.GanTrainer(cfg)):
            kernels._impl = m
            tr.iterate(y, x)
        fns[name] = step
    bench("GAN iteration side 64", fns, max(3, args.repeat // 4))
    kernels._impl = compiled if kernels.BACKEND == "compiled" else _kernels_py


if __name__ == "__main__":
    main()
