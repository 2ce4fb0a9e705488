"""Compiled vs pure-Python kernel timings.

Each backend runs in its own interpreter, since the backend is fixed at
import time. Usage::

    python3 benchmarks/bench_kernels.py [--repeats 20] [--epochs 2] [--json out.json]
"""

import argparse
import json
import os
import subprocess
import sys
import time

WORKER = r"""
import json, sys, time
import numpy as np
from reminet import kernels
from reminet.dataset import generate_synthetic
from reminet.training import TrainingConfig, train

repeats, epochs = int(sys.argv[1]), int(sys.argv[2])
rng = np.random.default_rng(0)
out = {"backend": kernels.BACKEND, "timings": {}}

def best_of(fn):
    times = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)

for n, h in ((10, 24), (35, 36), (70, 36)):
    edge = rng.normal(size=(n * n, h))
    node = rng.normal(size=(n, h))
    grad = rng.normal(size=(n, h))
    _, a, b = kernels.pair_message_forward(edge, node)
    x = rng.normal(size=(n, h))
    g = rng.normal(size=(n, n))
    out["timings"][f"pair_message fwd n={n} h={h}"] = best_of(lambda: kernels.pair_message_forward(edge, node))
    out["timings"][f"pair_message bwd n={n} h={h}"] = best_of(lambda: kernels.pair_message_backward(grad, a, b))
    out["timings"][f"pairwise_l1 fwd n={n} h={h}"] = best_of(lambda: kernels.pairwise_l1_forward(x))
    out["timings"][f"pairwise_l1 bwd n={n} h={h}"] = best_of(lambda: kernels.pairwise_l1_backward(g, x))

ds = generate_synthetic(40, 10, 4, 2, seed=42)
t = time.perf_counter()
train(ds, TrainingConfig(epochs=epochs, seed=42))
out["timings"][f"training epoch (40 subjects, r=10)"] = (time.perf_counter() - t) / epochs
print(json.dumps(out))
"""


def run_backend(pure, repeats, epochs):
    env = dict(os.environ)
    env.pop("REMI_PURE_PYTHON", None)
    if pure:
        env["REMI_PURE_PYTHON"] = "1"
    proc = subprocess.run([sys.executable, "-c", WORKER, str(repeats), str(epochs)],
                          env=env, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=20)
    parser.add_argument("--epochs", type=int, default=2)
    parser.add_argument("--json", dest="json_out")
    args = parser.parse_args(argv)

    start = time.perf_counter()
    compiled = run_backend(False, args.repeats, args.epochs)
    python = run_backend(True, args.repeats, args.epochs)
    if compiled["backend"] != "compiled":
        print("warning: compiled extension not built; both columns use the numpy fallback", file=sys.stderr)

    width = max(len(k) for k in compiled["timings"])
    print(f"{'case':<{width}}  {'compiled ms':>12}  {'python ms':>12}  {'speedup':>8}")
    rows = []
    for case, tc in compiled["timings"].items():
        tp = python["timings"][case]
        rows.append({"case": case, "compiled_s": tc, "python_s": tp, "speedup": tp / tc})
        print(f"{case:<{width}}  {tc * 1e3:>12.4f}  {tp * 1e3:>12.4f}  {tp / tc:>7.2f}x")
    print(f"total wall time {time.perf_counter() - start:.1f}s")
    if args.json_out:
        with open(args.json_out, "w") as fh:
            json.dump({"compiled_backend": compiled["backend"], "rows": rows}, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
