"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
from __future__ import annotations

import argparse
import random
import timeit

import numpy as np

from edgesim.kernels import available_backends


def topic_workload(n=20_000, seed=1):
    rng = random.Random(seed)
    levels = ["home", "bob", "vitals", "spo2", "temp", "+", "#"]
    pairs = []
    for _ in range(n):
        depth = rng.randint(1, 6)
        pattern = [rng.choice(levels[:6]) for _ in range(depth)]
        if rng.random() < 0.3:
            pattern[-1] = "#"
        topic = [rng.choice(levels[:5]) for _ in range(rng.randint(1, 7))]
        pairs.append(("/".join(pattern), "/".join(topic)))
    return pairs


def cases(seed=1):
    rng = np.random.default_rng(seed)
    pairs = topic_workload(seed=seed)
    xs, ys = rng.uniform(0, 200, 400), rng.uniform(0, 200, 400)
    X = rng.standard_normal((1000, 2))
    y = (X.sum(axis=1) > 0).astype(np.float64)
    w = np.zeros(3)
    order = rng.permutation(1000).astype(np.int64)
    return {
        "match_topic x20000": lambda k: [k.match_topic(p, t) for p, t in pairs],
        "close_pairs n=400": lambda k: k.close_pairs(xs, ys, 6.0),
        "logistic_grad n=1000": lambda k: k.logistic_grad(w, X, y),
        "sgd_epoch n=1000 K=32": lambda k: k.sgd_epoch(w, np.zeros(3), X, y, order, 32, 0.1),
    }


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = available_backends()
    if "compiled" not in backends:
        print("compiled kernels not built; timing the python backend only")
    print(f"{'kernel':<24}" + "".join(f"{name:>14}" for name in sorted(backends)) + f"{'speedup':>10}")
    for label, fn in cases().items():
        best = {}
        for name, kern in sorted(backends.items()):
            best[name] = min(timeit.repeat(lambda: fn(kern), number=1, repeat=args.repeat))
        speed = f"{best['python'] / best['compiled']:.1f}x" if "compiled" in best else "-"
        print(f"{label:<24}" + "".join(f"{best[n] * 1e3:>12.2f}ms" for n in sorted(best)) + f"{speed:>10}")


if __name__ == "__main__":
    main()
