"""Time the numba kernels against the pure-numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Kernel rows call both implementations in this process.  The ``model step``
row runs one forward/backward of the desk network in two subprocesses, one
with ``RECIPEKIT_NUMBA=0`` and one without, so the env switch is what differs.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from recipekit import _accel

STEP_SNIPPET = """
import time, numpy as np
from recipekit.model import TinyBackbone
m = TinyBackbone.init(0)
x = np.random.default_rng(0).normal(size=(128, 32, 32, 3)).astype(np.float32)
def step():
    emb, logits = m.forward(x, train=True)
    m.backward(None, np.ones_like(logits))
step()
t = time.perf_counter()
for _ in range({repeat}):
    step()
print((time.perf_counter() - t) / {repeat})
"""


def _best(fn, repeat):
    fn()  # compile / warm caches
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_rows(repeat):
    rng = np.random.default_rng(0)
    xp = rng.normal(size=(128, 34, 34, 16)).astype(np.float32)
    dcols = rng.normal(size=(128, 32, 32, 9, 16)).astype(np.float32)
    img = rng.uniform(0, 255, size=(64, 64, 3))
    ys, xs = np.mgrid[0:64, 0:64] * 0.97 + 0.3
    emb = rng.normal(size=(128, 64))
    cases = [
        ("im2col 128x32x32x16", _accel.im2col3x3_numpy, getattr(_accel, "_im2col3x3_nb", None),
         (xp,)),
        ("col2im 128x32x32x16", _accel.col2im3x3_numpy, getattr(_accel, "_col2im3x3_nb", None),
         (dcols,)),
        ("bilinear 64x64x3", lambda *a: _accel.bilinear_sample_numpy(*a, 0.0, True),
         getattr(_accel, "_bilinear_sample_nb", None) and
         (lambda *a: _accel._bilinear_sample_nb(*a, 0.0, True)), (img, xs, ys)),
        ("pairwise 128x64", _accel.pairwise_sqdist_numpy, getattr(_accel, "_pairwise_sqdist_nb", None),
         (emb,)),
    ]
    for name, np_fn, nb_fn, args in cases:
        t_np = _best(lambda: np_fn(*args), repeat)
        t_nb = _best(lambda: nb_fn(*args), repeat) if nb_fn else float("nan")
        yield name, t_np, t_nb


def model_row(repeat):
    out = {}
    for flag in ("0", "1"):
        env = dict(os.environ, RECIPEKIT_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", STEP_SNIPPET.format(repeat=repeat)],
                             env=env, capture_output=True, text=True, check=True)
        out[flag] = float(res.stdout.strip().splitlines()[-1])
    return "model step (B=128, 32px)", out["0"], out["1"]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    if not _accel.HAS_NUMBA:
        print("numba unavailable (or RECIPEKIT_NUMBA=0): numba column will be nan")
    print(f"{'kernel':28s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    rows = list(kernel_rows(args.repeat)) + [model_row(max(2, args.repeat // 5))]
    for name, t_np, t_nb in rows:
        print(f"{name:28s} {t_np * 1e3:10.3f} {t_nb * 1e3:10.3f} {t_np / t_nb:8.2f}x")


if __name__ == "__main__":
    main()
