"""Timing comparison of the compiled kernel extension vs the numpy fallback.

Run from the repo root:

    python benchmarks/bench_kernels.py [--repeats 30]

Both backends are imported directly so a single process measures the two
side by side regardless of LESIONBENCH_BACKEND.
"""

import argparse
import time

import numpy as np

from lesionbench.kernels import fallback


def _load_compiled():
    try:
        from lesionbench.kernels import _convcore
        return _convcore
    except ImportError:
        return None


CASES = [
    # name, (channels, height, width), out_channels, kernel, stride
    ("conv 3x40x40 k4 o11", (3, 42, 42), 11, 4, 1),
    ("conv 11x20x20 k4 o11", (11, 22, 22), 11, 4, 1),
    ("conv 3x224x224 k4 o11", (3, 226, 226), 11, 4, 1),
]

POOL_CASES = [
    ("pool 11x39x39 w3", (11, 39, 39), 3),
    ("pool 11x221x221 w3", (11, 221, 221), 3),
]


def _time(fn, repeats):
    fn()  # warm up once; first call pays any lazy setup
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_conv(mod, shape, out_channels, k, stride, repeats):
    rng = np.random.default_rng(0)
    xp = rng.normal(size=shape)
    w = rng.normal(size=(out_channels, shape[0], k, k))
    b = rng.normal(size=out_channels)
    fwd = _time(lambda: mod.conv2d_forward(xp, w, b, stride), repeats)
    go = mod.conv2d_forward(xp, w, b, stride)
    bwd_x = _time(lambda: mod.conv2d_backward_input(go, w, stride, shape[1], shape[2]),
                  repeats)
    bwd_w = _time(lambda: mod.conv2d_backward_kernel(go, xp, k, stride), repeats)
    return fwd, bwd_x, bwd_w


def bench_pool(mod, shape, window, repeats):
    rng = np.random.default_rng(0)
    x = rng.normal(size=shape)
    fwd = _time(lambda: mod.maxpool_forward(x, window), repeats)
    out, idx = mod.maxpool_forward(x, window)
    bwd = _time(lambda: mod.maxpool_backward(out, idx, shape[1], shape[2]), repeats)
    return fwd, bwd


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=30)
    args = parser.parse_args()

    compiled = _load_compiled()
    if compiled is None:
        print("compiled extension not built; showing fallback only")
    backends = [("fallback", fallback)] + ([("compiled", compiled)] if compiled else [])

    header = f"{'case':<28}{'op':<10}" + "".join(f"{n:>12}" for n, _ in backends)
    if compiled:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))

    for name, shape, oc, k, stride in CASES:
        rows = {n: bench_conv(m, shape, oc, k, stride, args.repeats)
                for n, m in backends}
        for i, op in enumerate(("forward", "bwd_input", "bwd_kernel")):
            line = f"{name if i == 0 else '':<28}{op:<10}"
            for n, _ in backends:
                line += f"{rows[n][i] * 1e6:>10.1f}us"
            if compiled:
                line += f"{rows['fallback'][i] / rows['compiled'][i]:>9.2f}x"
            print(line)

    for name, shape, window in POOL_CASES:
        rows = {n: bench_pool(m, shape, window, args.repeats) for n, m in backends}
        for i, op in enumerate(("forward", "backward")):
            line = f"{name if i == 0 else '':<28}{op:<10}"
            for n, _ in backends:
                line += f"{rows[n][i] * 1e6:>10.1f}us"
            if compiled:
                line += f"{rows['fallback'][i] / rows['compiled'][i]:>9.2f}x"
            print(line)


if __name__ == "__main__":
    main()
