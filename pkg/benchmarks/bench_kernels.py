"""Time the numba and numpy kernel backends on realistic shapes.

    python3 benchmarks/bench_kernels.py [--repeat N]

Both backends are imported directly, so ``SLID_BENCH_NUMBA`` does not
matter here. Results are checked for agreement before timing.
"""

import argparse
import time

import numpy as np

from slidbench import kernels


def best_of(fn, repeat):
    fn()  # warm-up, includes JIT compilation
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def cases(rng):
    # one 7 s utterance worth of frames
    frames = rng.standard_normal((698, 512)).astype(np.complex128)
    rev, tw = kernels.bit_reverse_indices(512), kernels.twiddles(512)
    yield "fft 698x512", lambda f: f(frames, rev, tw), kernels._fft_rows_numpy, kernels._fft_rows_numba

    # second conv layer of the baseline on a batch of 32 padded to 120 frames
    C, B, T, W, O = 64, 32, 120, 32, 128
    xt = rng.standard_normal((C, B, T + W - 1)).astype(np.float32)
    wt = rng.standard_normal((W, O, C)).astype(np.float32)
    yield "conv fwd 64->128 w32", lambda f: f(xt, wt), kernels._conv_fwd_numpy, kernels._conv_fwd_numba
    g = rng.standard_normal((O, B * T)).astype(np.float32)
    wtT = np.ascontiguousarray(wt.transpose(0, 2, 1))
    yield "conv bwd 64->128 w32", lambda f: f(xt, wtT, g, True), kernels._conv_bwd_numpy, kernels._conv_bwd_numba

    # one Monte Carlo chunk of the per-language F1 permutation test
    d = 400
    swaps = rng.integers(0, 2, size=(16384, d), dtype=np.uint8)
    d_tp = rng.integers(-1, 2, size=d).astype(np.float64)
    d_pc = rng.integers(-1, 2, size=d).astype(np.float64)
    args = (d_tp, d_pc, 200.0, 450.0, 180.0, 430.0, 500.0, 8000.0, 1, 0.01)
    yield "perm_count 16384x400", lambda f: f(swaps, *args), kernels._perm_count_numpy, kernels._perm_count_numba


def agree(a, b):
    if isinstance(a, tuple):
        return all(agree(x, y) for x, y in zip(a, b))
    if np.isscalar(a) or np.ndim(a) == 0:
        return a == b
    scale = max(float(np.max(np.abs(a))), 1e-30)
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b)))) / scale < 1e-5


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if not kernels.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<24}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, call, np_fn, nb_fn in cases(rng):
        if not agree(call(np_fn), call(nb_fn)):
            raise SystemExit(f"{name}: backends disagree")
        t_np = best_of(lambda: call(np_fn), args.repeat)
        t_nb = best_of(lambda: call(nb_fn), args.repeat)
        print(f"{name:<24}{t_np * 1e3:>10.2f}{t_nb * 1e3:>10.2f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
