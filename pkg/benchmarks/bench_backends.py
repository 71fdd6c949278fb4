"""Compare the compiled conv kernels against the numpy fallback.

Shapes mirror the training hot path: batches of 200-sample units pushed
through the three filterbank layers and the embedder's frame convs.

    python3 benchmarks/bench_backends.py [--repeats 5]
"""

import argparse
import time

import numpy as np

from deepvox.nd import backend

# (label, batch, c_in, length, c_out, kernel, dilation)
CASES = [
    ("fb layer 0 (2500x1x160 k32)", 2500, 1, 160, 24, 32, 1),
    ("fb layer 1 (2500x24x129 k16 d2)", 2500, 24, 129, 32, 16, 2),
    ("fb layer 2 (2500x32x99 k8 d4)", 2500, 32, 99, 40, 8, 4),
    ("emb layer 0 (32x40x200 k5)", 32, 40, 200, 64, 5, 1),
    ("emb layer 1 (32x64x196 k3 d2)", 32, 64, 196, 96, 3, 2),
]


def bench_one(impl, batch, c_in, length, c_out, kernel, dilation, repeats):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((batch, c_in, length)).astype(np.float32)
    w = rng.standard_normal((c_out, c_in, kernel)).astype(np.float32)
    b = rng.standard_normal(c_out).astype(np.float32)
    y = backend.conv1d_forward(x, w, b, 1, dilation, impl=impl)  # warm up
    g = np.ones_like(y)

    fwd = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        backend.conv1d_forward(x, w, b, 1, dilation, impl=impl)
        fwd.append(time.perf_counter() - t0)
    bwd = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        backend.conv1d_backward(x, w, g, 1, dilation, True, True, True, impl=impl)
        bwd.append(time.perf_counter() - t0)
    return min(fwd), min(bwd)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    impls = backend.available()
    print(f"active backend: {backend.ACTIVE}   available: {', '.join(impls)}")
    if len(impls) == 1:
        print("compiled extension not built; benchmarking the fallback only")
    header = f"{'case':36s} " + "  ".join(f"{i + ' fwd':>12s} {i + ' bwd':>12s}"
                                          for i in impls)
    if len(impls) == 2:
        header += f"  {'speedup fwd':>11s} {'speedup bwd':>11s}"
    print(header)
    for case in CASES:
        label, rest = case[0], case[1:]
        times = {i: bench_one(i, *rest, args.repeats) for i in impls}
        row = f"{label:36s} "
        row += "  ".join(f"{times[i][0] * 1e3:10.2f}ms {times[i][1] * 1e3:10.2f}ms"
                         for i in impls)
        if len(impls) == 2:
            f_ratio = times["numpy"][0] / times["compiled"][0]
            b_ratio = times["numpy"][1] / times["compiled"][1]
            row += f"  {f_ratio:10.2f}x {b_ratio:10.2f}x"
        print(row)


if __name__ == "__main__":
    main()
