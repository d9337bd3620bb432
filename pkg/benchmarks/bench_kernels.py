"""Benchmark the numba kernels against the pure-numpy fallback.

Kernel-level timings run both implementation sets in one process (they
are both importable from ``evfact.kernels``). The optional ``--train-step``
mode times one full optimizer step of a small chain model in two child
processes, one per backend, since the backend is chosen at import time
via EVFACT_NUMBA.

Usage:
    python benchmarks/bench_kernels.py [--sizes 50,300,600] [--reps 2000]
    python benchmarks/bench_kernels.py --train-step [--steps 200]
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from evfact import kernels


def time_call(fn, args, reps):
    fn(*args)  # warm up (and trigger JIT compilation)
    start = time.perf_counter()
    for _ in range(reps):
        fn(*args)
    return (time.perf_counter() - start) / reps


def bench_kernels(sizes, reps):
    rng = np.random.default_rng(0)
    rows = []
    for size in sizes:
        x = rng.normal(0, 2, size)
        g = rng.normal(0, 1, size)
        s = kernels.IMPLEMENTATIONS["numpy"]["sigmoid"](x)
        param = rng.normal(0, 1, size)
        m = np.zeros(size)
        v = np.zeros(size)
        cases = {
            "sigmoid": (("sigmoid",), (x,)),
            "sigmoid_grad": (("sigmoid_grad",), (g, s)),
            "tanh_grad": (("tanh_grad",), (g, np.tanh(x))),
            "relu": (("relu",), (x,)),
            "relu_grad": (("relu_grad",), (g, x)),
            "adam_update": (("adam_update",), (param, g, m, v, 1, 1e-3, 0.9,
                                               0.999, 1e-8)),
        }
        for name, ((key,), args) in cases.items():
            np_time = time_call(kernels.IMPLEMENTATIONS["numpy"][key], args, reps)
            row = {"kernel": name, "size": size, "numpy_us": np_time * 1e6}
            if "numba" in kernels.IMPLEMENTATIONS:
                nb_time = time_call(kernels.IMPLEMENTATIONS["numba"][key], args,
                                    reps)
                row["numba_us"] = nb_time * 1e6
                row["speedup"] = np_time / nb_time
            rows.append(row)
    return rows


def print_rows(rows):
    header = f"{'kernel':<14} {'size':>6} {'numpy (us)':>11}"
    if rows and "numba_us" in rows[0]:
        header += f" {'numba (us)':>11} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for row in rows:
        line = f"{row['kernel']:<14} {row['size']:>6} {row['numpy_us']:>11.2f}"
        if "numba_us" in row:
            line += f" {row['numba_us']:>11.2f} {row['speedup']:>7.2f}x"
        print(line)


def _train_steps(steps, hidden):
    """Worker: time `steps` optimizer steps of a small chain model."""
    from evfact.autodiff import AdamState, Tape, adam_step, backward
    from evfact.models import ModelConfig, init_model, sentence_loss
    from evfact.selftest import chain_sentence

    rng = np.random.default_rng(5)
    sentence = chain_sentence(6)
    rows_vals = rng.uniform(-1, 1, (6, hidden))
    config = ModelConfig("linear", 1, hidden, datasets=("bench",))
    bundle = init_model(config, 5)
    adam = AdamState()

    def step():
        tape = Tape()
        rows = [tape.leaf(v) for v in rows_vals]
        loss = sentence_loss(bundle, tape, rows, sentence, [(3, 1.0)], "bench")
        backward(tape, loss)
        adam_step(tape.trainable_leaves(), adam)

    step()  # warm up
    start = time.perf_counter()
    for _ in range(steps):
        step()
    return (time.perf_counter() - start) / steps


def bench_train_step(steps, hidden):
    results = {}
    for backend, flag in (("numpy", "0"), ("numba", "1")):
        env = dict(os.environ, EVFACT_NUMBA=flag)
        code = (
            "import json, sys; "
            "sys.path.insert(0, 'benchmarks'); "
            "from bench_kernels import _train_steps; "
            f"print(json.dumps(_train_steps({steps}, {hidden})))"
        )
        proc = subprocess.run([sys.executable, "-c", code], env=env,
                              capture_output=True, text=True, check=True)
        results[backend] = float(json.loads(proc.stdout.strip().splitlines()[-1]))
    print(f"train step (hidden={hidden}, 6 tokens, chain model, 1 layer)")
    for backend, seconds in results.items():
        print(f"  {backend:<6} {seconds * 1e3:8.3f} ms/step")
    print(f"  speedup {results['numpy'] / results['numba']:.2f}x")


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--sizes", default="50,300,600")
    parser.add_argument("--reps", type=int, default=2000)
    parser.add_argument("--train-step", action="store_true")
    parser.add_argument("--steps", type=int, default=200)
    parser.add_argument("--hidden", type=int, default=50)
    args = parser.parse_args()

    if args.train_step:
        bench_train_step(args.steps, args.hidden)
        return
    if not kernels.NUMBA_ENABLED:
        print("note: numba backend unavailable or disabled; timing numpy only")
    sizes = [int(s) for s in args.sizes.split(",")]
    print_rows(bench_kernels(sizes, args.reps))


if __name__ == "__main__":
    main()
