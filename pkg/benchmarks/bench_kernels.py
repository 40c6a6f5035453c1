"""Time the numba kernels against their numpy fallbacks, then whole training steps under each.

    python benchmarks/bench_kernels.py [--repeat 50] [--steps 100]
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from lengthgen import kernels
from lengthgen._jit import JIT_AVAILABLE


def best_of(fn, repeat):
    fn()  # compile / warm caches
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def kernel_cases(rng):
    scores = rng.standard_normal((64 * 8 * 40, 40)).astype(np.float32)
    probs = kernels.softmax_np(scores)
    grad = rng.standard_normal(scores.shape).astype(np.float32)
    x = rng.standard_normal((64 * 40, 32)).astype(np.float32)
    gain, bias = np.ones(32, np.float32), np.zeros(32, np.float32)
    _, xhat, rstd = kernels.layer_norm_np(x, gain, bias, 1e-5)
    logits = rng.standard_normal((64 * 20, 5)).astype(np.float32)
    targets = rng.integers(0, 5, 64 * 20)
    offsets = rng.integers(0, 2048 - np.arange(80))
    return {
        "softmax (64x8x40x40)": ("softmax", (scores,)),
        "softmax backward": ("softmax_backward", (probs, grad)),
        "layer_norm (2560x32)": ("layer_norm", (x, gain, bias, 1e-5)),
        "layer_norm backward": ("layer_norm_backward", (x, xhat, rstd, gain)),
        "cross_entropy (1280x5)": ("cross_entropy", (logits, targets)),
        "fisher_yates (n=80, L=2048)": ("partial_fisher_yates", (2048, offsets)),
    }


def step_rate(jit: bool, steps: int) -> float:
    code = (
        "from lengthgen.config import TrainConfig; from lengthgen import harness as H; "
        f"print(H.measure_steps_per_sec(TrainConfig(task='reverse_string', scheme='relative+rand'), {steps}, 20))"
    )
    env = dict(os.environ, LENGTHGEN_JIT="1" if jit else "0")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=50)
    ap.add_argument("--steps", type=int, default=100, help="timed training steps per mode (0 to skip)")
    args = ap.parse_args()
    if not JIT_AVAILABLE:
        print("numba is not installed; only the numpy path exists")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':<30}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for label, (name, inputs) in kernel_cases(rng).items():
        t_np = best_of(lambda: getattr(kernels, f"{name}_np")(*inputs), args.repeat)
        t_jit = best_of(lambda: getattr(kernels, f"{name}_jit")(*inputs), args.repeat)
        print(f"{label:<30}{t_np * 1e3:>10.3f}{t_jit * 1e3:>10.3f}{t_np / t_jit:>8.2f}x")
    if args.steps:
        np_rate, jit_rate = step_rate(False, args.steps), step_rate(True, args.steps)
        print(f"\ntraining steps/s (reverse_string, relative+rand, desk model): "
              f"numpy {np_rate:.1f}, numba {jit_rate:.1f} ({jit_rate / np_rate:.2f}x)")


if __name__ == "__main__":
    main()
