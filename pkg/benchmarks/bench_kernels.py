"""Compiled vs numpy kernels on lsCNN-sized tensors.

    python3 benchmarks/bench_kernels.py [--batch 16] [--repeat 5]

Reports the best-of-``repeat`` time per call for each kernel, plus one
full lsCNN training step with each backend.
"""
import argparse
import contextlib
import timeit

import numpy as np

from lscnn import _kernels_py, arch, kernels
from lscnn import layers as L
from lscnn.tensor import make_rng


def best(fn, repeat):
    fn()  # warm-up
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def python_bn_relu(x, g, b, rm, rv):
    y, cache, *_ = L.batchnorm_forward(x, g, b, rm, rv, "train")
    out, rc = L.relu_forward(y)
    return out, cache, rc


def kernel_cases(batch):
    rng = make_rng(0, "bench")
    x = rng.standard_normal((batch, 3, 96, 96)).astype(np.float32)
    act = rng.standard_normal((batch, 27, 94, 94)).astype(np.float32)
    col = _kernels_py.im2col(x, 3, 1)
    pooled, argmax = _kernels_py.maxpool_forward(act, 3, 2)
    dpool = rng.standard_normal(pooled.shape).astype(np.float32)
    c = act.shape[1]
    g, b = np.ones(c, np.float32), np.zeros(c, np.float32)
    rm, rv = np.zeros(c, np.float32), np.ones(c, np.float32)
    return {
        "im2col 3x96x96 k3": lambda k: k.im2col(x, 3, 1),
        "col2im 3x96x96 k3": lambda k: k.col2im(col, x.shape, 3, 1),
        "maxpool fwd 27x94x94": lambda k: k.maxpool_forward(act, 3, 2),
        "maxpool bwd 27x94x94": lambda k: k.maxpool_backward(dpool, argmax, act.shape),
        "bn+relu fwd 27x94x94": lambda k: (k.bn_relu_forward(act, g, b, rm, rv, True, L.BN_EPS)
                                           if k is not _kernels_py else python_bn_relu(act, g, b, rm, rv)),
    }


KERNEL_NAMES = ("im2col", "col2im", "maxpool_forward", "maxpool_backward",
                "bn_relu_forward", "bn_relu_backward")


@contextlib.contextmanager
def numpy_backend():
    saved = {n: getattr(kernels, n) for n in KERNEL_NAMES}
    for n in KERNEL_NAMES[:4]:
        setattr(kernels, n, getattr(_kernels_py, n))
    kernels.bn_relu_forward = kernels.bn_relu_backward = None
    try:
        yield
    finally:
        for n, v in saved.items():
            setattr(kernels, n, v)


def train_step(batch):
    spec = arch.build_lscnn()
    params = arch.init_params(spec, arch.INIT_STD, make_rng(0))
    x = make_rng(1).standard_normal((batch, 3, 96, 96)).astype(np.float32)
    y = np.arange(batch) % 2
    return lambda: arch.loss_and_grads(spec, params, x, y, make_rng(2))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=16)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if kernels.BACKEND != "cython":
        raise SystemExit("compiled extension not available (build with pip install -e .)")
    from lscnn import _kernels as compiled

    print(f"batch {args.batch}, best of {args.repeat}")
    print(f"{'kernel':28s} {'numpy ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for name, fn in kernel_cases(args.batch).items():
        tp = best(lambda: fn(_kernels_py), args.repeat)
        tc = best(lambda: fn(compiled), args.repeat)
        print(f"{name:28s} {tp * 1e3:10.2f} {tc * 1e3:10.2f} {tp / tc:7.1f}x")

    step = train_step(args.batch)
    reps = max(2, args.repeat // 2)
    times = {"cython": best(step, reps)}
    with numpy_backend():
        times["python"] = best(step, reps)
    print(f"{'lsCNN train step':28s} {times['python'] * 1e3:10.1f} {times['cython'] * 1e3:10.1f} "
          f"{times['python'] / times['cython']:7.1f}x")


if __name__ == "__main__":
    main()
