"""Compare the compiled and numpy kernel backends.

Times each kernel in-process on both backends and checks that they agree,
then times one full loss-and-gradient evaluation in a subprocess per backend
(the backend is chosen at import via ``SEMIDEPTH_KERNELS``).

    python benchmarks/bench_kernels.py [--size 256] [--repeat 5]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from semidepth.kernels import backends

_EVAL_SNIPPET = """
import timeit, numpy as np
from semidepth import kernels
from semidepth.losses import LossConfig, evaluate, motion_target
from semidepth.synth import plane_scene
from semidepth.losses import LossInputs
s = plane_scene(seed=0, height={h}, width={w}, tilt=(0.3, 0.2))
inp = LossInputs(s.image_k, s.image_k1, s.K, s.ego, s.depth_range, s.depth_k, s.error_map())
u = np.random.default_rng(0).normal(0.0, 0.3, (s.shape))
m = motion_target(s.ego, s.depth_range)
cfg = LossConfig(frozenset({{"ir", "ds", "tm"}}))
t = min(timeit.repeat(lambda: evaluate(inp, u, m, cfg), number=1, repeat={repeat}))
print(kernels.BACKEND, t)
"""


def _cases(size: int, rng):
    img = rng.random((size, size, 3))
    n = size * size
    u = rng.uniform(-2, size + 1, n)
    v = rng.uniform(-2, size + 1, n)
    rows = rng.integers(0, size, n)
    cols = rng.integers(0, size, n)
    depth = rng.uniform(1, 80, n)
    return {
        "bilinear_sample": lambda k: k.bilinear_sample(img, u, v),
        "zbuffer": lambda k: k.zbuffer(rows, cols, depth, size, size),
        "box_sum r=1": lambda k: k.box_sum(img, 1),
        "box_sum r=3": lambda k: k.box_sum(img, 3),
    }


def _agree(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_agree(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-12, atol=1e-12)


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--size", type=int, default=256, help="image side in pixels")
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)

    impls = backends()
    if "cython" not in impls:
        print("compiled kernels not available; only the numpy fallback is installed")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<18}" + "".join(f"{name:>12}" for name in impls) + f"{'speedup':>10}  agree")
    for label, fn in _cases(args.size, rng).items():
        times = {name: min(timeit.repeat(lambda: fn(k), number=1, repeat=args.repeat)) for name, k in impls.items()}
        agree = _agree(fn(impls["python"]), fn(impls["cython"])) if "cython" in impls else True
        speed = times["python"] / times["cython"] if "cython" in times else 1.0
        print(f"{label:<18}" + "".join(f"{t * 1e3:10.2f}ms" for t in times.values()) + f"{speed:9.1f}x  {agree}")

    print(f"\nfull evaluate (ir+ds+tm with gradients) on {args.size}x{args.size}:")
    for name in impls:
        env = dict(os.environ, SEMIDEPTH_KERNELS=name)
        code = _EVAL_SNIPPET.format(h=args.size, w=args.size, repeat=args.repeat)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        backend, t = out.stdout.split()
        print(f"  {backend:<8} {float(t) * 1e3:8.2f} ms")
    return 0


if __name__ == "__main__":
    sys.exit(main())
