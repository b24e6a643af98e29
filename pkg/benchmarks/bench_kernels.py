"""numba vs numpy kernel timings, plus an end-to-end meta-training run per backend.

    python3 benchmarks/bench_kernels.py [--repeat 200] [--iterations 300]

The end-to-end part re-launches the interpreter with HALLUC_META_NUMBA set,
since the backend is fixed at import time.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from halluc_meta import _accel

E2E = """
import time
import numpy as np
from halluc_meta import _accel, synthdata
from halluc_meta.episodes import EpisodeConfig, meta_train
from halluc_meta.hallucination import AugmentationPolicy
from halluc_meta.metalearners import LearnerConfig
data, split = synthdata.generate()
base = data.subset_classes(split.base_classes)
cfg = EpisodeConfig(iterations={it}, patience=0)
meta_train(base, LearnerConfig("{learner}", 32), AugmentationPolicy("learned-g"),
           EpisodeConfig(iterations=2, patience=0))  # warm the jit cache
t = time.perf_counter()
meta_train(base, LearnerConfig("{learner}", 32), AugmentationPolicy("learned-g"), cfg)
print(_accel.BACKEND, time.perf_counter() - t)
"""


def kernel_cases(rng):
    pre, c = rng.standard_normal((100, 128)), rng.standard_normal((100, 32))
    _, _, gates, tc = _accel.lstm_forward_numpy(pre, c)
    dh, dc = rng.standard_normal((100, 32)), rng.standard_normal((100, 32))
    a, b = rng.random((100, 32)), rng.random((25, 32))
    probs = rng.random((400, 16))
    truth = rng.integers(0, 16, 400)
    ids = np.arange(16)
    return {
        "lstm_forward (100x32)": ("lstm_forward", (pre, c)),
        "lstm_backward (100x32)": ("lstm_backward", (dh, dc, gates, tc, c)),
        "pairwise_sqdist (100x25x32)": ("pairwise_sqdist", (a, b)),
        "topk_hits (400x16, k=5)": ("topk_hits", (probs, truth, ids, 5)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--iterations", type=int, default=300)
    ap.add_argument("--learner", default="mn", choices=("pn", "mn", "pmn"))
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    print(f"{'kernel':<30}{'numpy us':>12}{'numba us':>12}{'speedup':>10}")
    for label, (name, inputs) in kernel_cases(rng).items():
        np_fn = getattr(_accel, f"{name}_numpy")
        t_np = min(timeit.repeat(lambda: np_fn(*inputs), number=args.repeat, repeat=3)) / args.repeat
        if _accel.HAVE_NUMBA:
            nb_fn = getattr(_accel, f"{name}_numba")
            nb_fn(*inputs)  # compile
            t_nb = min(timeit.repeat(lambda: nb_fn(*inputs), number=args.repeat, repeat=3)) / args.repeat
            print(f"{label:<30}{1e6 * t_np:>12.1f}{1e6 * t_nb:>12.1f}{t_np / t_nb:>9.2f}x")
        else:
            print(f"{label:<30}{1e6 * t_np:>12.1f}{'n/a':>12}")

    print(f"\nmeta-train, {args.learner} + learned-G, {args.iterations} iterations")
    code = E2E.format(it=args.iterations, learner=args.learner)
    for flag in ("0", "1"):
        env = dict(os.environ, HALLUC_META_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        backend, secs = out.stdout.split()
        print(f"  {backend:<8}{float(secs):8.2f} s")


if __name__ == "__main__":
    main()
