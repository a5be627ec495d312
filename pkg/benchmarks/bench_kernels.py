"""Time the compiled kernels against the numpy fallback.

Run from the repository root::

    python benchmarks/bench_kernels.py [--repeat N]

Shapes match one training batch of the default classifier (batch 32,
32x32 input, width 16). Every kernel's outputs are also checked to be
bit-identical between the two backends.
"""

import argparse
import timeit

import numpy as np

from rawdistill import _kernels


def cases(rng):
    x1 = rng.standard_normal((32, 3, 32, 32)).astype(np.float32)
    x2 = rng.standard_normal((32, 16, 16, 16)).astype(np.float32)
    rows2 = rng.standard_normal((32 * 16 * 16, 16 * 9)).astype(np.float32)
    pool_in = rng.standard_normal((32, 16, 32, 32)).astype(np.float32)
    mosaic = rng.random((32, 32)).astype(np.float32)
    return {
        "im2col stage1": lambda b: b.im2col(x1, 3, 3, 1, 1),
        "im2col stage2": lambda b: b.im2col(x2, 3, 3, 1, 1),
        "col2im stage2": lambda b: b.col2im(rows2, 32, 16, 16, 16, 3, 3, 1, 1),
        "maxpool2 fwd": lambda b: b.maxpool2_forward(pool_in),
        "maxpool2 bwd": lambda b: b.maxpool2_backward(*_pool_grad(b, pool_in)),
        "bilinear_fill x32": lambda b: [b.bilinear_fill(mosaic) for _ in range(32)],
    }


def _pool_grad(b, x):
    out, idx = b.maxpool2_forward(x)
    return np.ones_like(out), idx


def _bytes(result):
    if isinstance(result, (tuple, list)):
        return b"".join(_bytes(r) for r in result)
    return result.tobytes()


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    py, cy = _kernels.python_backend, _kernels.compiled_backend
    if cy is None:
        print("compiled extension not built; run `pip install --no-build-isolation -e .` first")
        return 1
    print(f"{'kernel':<20}{'python ms':>12}{'cython ms':>12}{'speedup':>10}  identical")
    for name, fn in cases(np.random.default_rng(0)).items():
        same = _bytes(fn(py)) == _bytes(fn(cy))
        t_py = min(timeit.repeat(lambda: fn(py), number=1, repeat=args.repeat)) * 1e3
        t_cy = min(timeit.repeat(lambda: fn(cy), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<20}{t_py:>12.2f}{t_cy:>12.2f}{t_py / t_cy:>9.1f}x  {same}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
