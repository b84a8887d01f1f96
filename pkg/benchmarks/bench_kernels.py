"""Compare the numba and numpy correlation kernels on training-sized shapes.

Run from the repository root:

    python3 benchmarks/bench_kernels.py

Each kernel is timed on the layer shapes the default model actually uses
(64x64 input, channel widths 16/32/64/128, 4x4 windows, stride 2), plus a
full training step for the end-to-end picture. The numba backend needs one
warmup call per shape to amortize JIT compilation; warmup is excluded from
the timings.
"""

import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from sonoshadow import _kernels as kernels
from sonoshadow.autodiff import Tensor, hadamard
from sonoshadow.losses import LossWeights, loss_total
from sonoshadow.network import ArchConfig, forward, init_params
from sonoshadow.rng import substream

BATCH = 8
# (label, x-shape, w-shape): one row per distinct conv in the default stack
LAYERS = [
    ("enc.0   1->16  64x64", (BATCH, 1, 64, 64), (16, 1, 4, 4)),
    ("enc.1  16->32  32x32", (BATCH, 16, 32, 32), (32, 16, 4, 4)),
    ("enc.2  32->64  16x16", (BATCH, 32, 16, 16), (64, 32, 4, 4)),
    ("enc.3 64->128    8x8", (BATCH, 64, 8, 8), (128, 64, 4, 4)),
]
STRIDE, PAD = 2, 1


def timeit(fn, repeats=20):
    fn()  # warmup (JIT compile + cache effects)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(backend):
    kernels.use_backend(backend)
    rng = np.random.default_rng(0)
    rows = {}
    for label, xs, ws in LAYERS:
        x = rng.standard_normal(xs).astype(np.float32)
        w = rng.standard_normal(ws).astype(np.float32)
        y = kernels.corr2d_forward(x, w, STRIDE, PAD)
        rows[label] = (
            timeit(lambda: kernels.corr2d_forward(x, w, STRIDE, PAD)),
            timeit(lambda: kernels.corr2d_input_grad(y, w, STRIDE, PAD, xs[2], xs[3])),
            timeit(lambda: kernels.corr2d_weight_grad(x, y, ws[2], ws[3], STRIDE, PAD)),
        )
    return rows


def bench_step(backend):
    kernels.use_backend(backend)
    params = init_params(ArchConfig(), substream(0, "bench"))
    rng = np.random.default_rng(1)
    x = Tensor(rng.random((BATCH, 1, 64, 64), dtype=np.float32))
    mask = Tensor(np.clip(rng.random((BATCH, 1, 64, 64), dtype=np.float32) + 0.5, None, 1.0))

    def step():
        params.zero_grad()
        noisy = hadamard(x, mask)
        out = forward(params, noisy)
        loss, _ = loss_total(out.recon, out.shadow, out.content, noisy, mask, LossWeights())
        loss.backward()

    return timeit(step, repeats=10)


def main():
    backends = ["numpy"] + (["numba"] if kernels.HAS_NUMBA else [])
    if len(backends) == 1:
        print("numba not importable; benchmarking the numpy backend only")

    results = {b: bench_kernels(b) for b in backends}
    steps = {b: bench_step(b) for b in backends}

    header = f"{'layer':24s}" + "".join(
        f"  {b + ' ' + op:>14s}" for b in backends for op in ("fwd", "dx", "dw")
    )
    print(header)
    for label, *_ in LAYERS:
        cells = []
        for b in backends:
            cells.extend(f"{t * 1e3:11.3f} ms" for t in results[b][label])
        print(f"{label:24s}" + "".join(f"  {c:>14s}" for c in cells))

    print()
    for b in backends:
        print(f"full training step ({b:5s}): {steps[b] * 1e3:8.2f} ms")
    if len(backends) == 2:
        ratio = steps["numpy"] / steps["numba"]
        print(f"numba speedup on a training step: {ratio:.1f}x")


if __name__ == "__main__":
    main()
