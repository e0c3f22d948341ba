"""Head-to-head benchmark of the compiled vs pure-numpy kernel backends.

Runs each hot kernel (row softmax, layer-norm forward/backward, Adam step)
on a range of shapes and reports median wall time per call plus speedup.
Correctness is cross-checked before timing.

Usage:  python3 benchmarks/bench_kernels.py [--repeats N] [--dtype float32|float64]
"""

import argparse
import statistics
import timeit

import numpy as np

from domainmoe import _npkernels

try:
    from domainmoe import _ckernels
except ImportError:
    _ckernels = None

SHAPES = [(64, 64), (256, 256), (1024, 512), (4096, 512)]
ADAM_SIZES = [4_096, 262_144, 2_097_152]


def time_call(fn, repeats):
    timer = timeit.Timer(fn)
    n, _ = timer.autorange()
    runs = [t / n for t in timer.repeat(repeat=repeats, number=n)]
    return statistics.median(runs)


def make_cases(dtype, rng):
    cases = []
    for rows, cols in SHAPES:
        x = rng.standard_normal((rows, cols)).astype(dtype)
        gain = rng.standard_normal(cols).astype(dtype)
        bias = rng.standard_normal(cols).astype(dtype)
        dy = rng.standard_normal((rows, cols)).astype(dtype)
        cases.append((f"softmax2d {rows}x{cols}",
                      lambda k, x=x: k.softmax2d(x)))
        cases.append((f"layer_norm_fwd {rows}x{cols}",
                      lambda k, x=x, g=gain, b=bias: k.layer_norm_fwd(x, g, b, 1e-5)))

        def ln_bwd(k, x=x, g=gain, b=bias, dy=dy):
            _, mean, rstd = _npkernels.layer_norm_fwd(x, g, b, 1e-5)
            return lambda: k.layer_norm_bwd(dy, x, g, mean, rstd)

        cases.append((f"layer_norm_bwd {rows}x{cols}", ln_bwd, True))
    for size in ADAM_SIZES:
        def adam(k, size=size, dtype=dtype, rng=rng):
            p = rng.standard_normal(size).astype(dtype)
            g = rng.standard_normal(size).astype(dtype)
            m = np.zeros(size, dtype=dtype)
            v = np.zeros(size, dtype=dtype)
            return lambda: k.adam_update(p, g, m, v, 100, 1e-3, 0.9, 0.98, 1e-9)

        cases.append((f"adam_update n={size}", adam, True))
    return cases


def check_agreement(dtype, rng):
    x = rng.standard_normal((37, 19)).astype(dtype)
    gain = rng.standard_normal(19).astype(dtype)
    bias = rng.standard_normal(19).astype(dtype)
    dy = rng.standard_normal((37, 19)).astype(dtype)
    tol = 1e-5 if dtype == np.float32 else 1e-12

    np.testing.assert_allclose(_ckernels.softmax2d(x), _npkernels.softmax2d(x),
                               rtol=tol, atol=tol)
    yc, mc, rc = _ckernels.layer_norm_fwd(x, gain, bias, 1e-5)
    yn, mn, rn = _npkernels.layer_norm_fwd(x, gain, bias, 1e-5)
    np.testing.assert_allclose(yc, yn, rtol=tol, atol=tol)
    for a, b in zip(_ckernels.layer_norm_bwd(dy, x, gain, mc, rc),
                    _npkernels.layer_norm_bwd(dy, x, gain, mn, rn)):
        np.testing.assert_allclose(a, b, rtol=tol, atol=tol)

    state = [rng.standard_normal(64).astype(dtype) for _ in range(2)]
    state += [np.zeros(64, dtype=dtype), np.zeros(64, dtype=dtype)]
    other = [a.copy() for a in state]
    _ckernels.adam_update(*state, 3, 1e-3, 0.9, 0.98, 1e-9)
    _npkernels.adam_update(*other, 3, 1e-3, 0.9, 0.98, 1e-9)
    for a, b in zip(state, other):
        np.testing.assert_allclose(a, b, rtol=tol, atol=tol)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--dtype", choices=["float32", "float64"], default="float64")
    args = ap.parse_args()
    if _ckernels is None:
        raise SystemExit("compiled extension not built; nothing to compare "
                         "(pip install -e . rebuilds it)")

    dtype = np.dtype(args.dtype).type
    rng = np.random.default_rng(0)
    check_agreement(dtype, rng)
    print(f"backends agree on {args.dtype}; timing "
          f"(median of {args.repeats} runs)\n")
    print(f"{'kernel':<28}{'numpy':>12}{'cython':>12}{'speedup':>9}")
    for name, factory, *needs_setup in make_cases(dtype, rng):
        if needs_setup:
            t_np = time_call(factory(_npkernels), args.repeats)
            t_cy = time_call(factory(_ckernels), args.repeats)
        else:
            t_np = time_call(lambda: factory(_npkernels), args.repeats)
            t_cy = time_call(lambda: factory(_ckernels), args.repeats)
        print(f"{name:<28}{t_np * 1e6:>10.1f}us{t_cy * 1e6:>10.1f}us"
              f"{t_np / t_cy:>8.2f}x")


if __name__ == "__main__":
    main()
