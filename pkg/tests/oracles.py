"""Independent reference implementations used by several test modules."""
from __future__ import annotations

import math
import random
import re

import numpy as np


def topic_match_oracle(pattern: str, topic: str) -> bool:
    """Level-by-level recursive walk over the two level lists."""
    P, T = pattern.split("/"), topic.split("/")

    def walk(i: int, j: int) -> bool:
        if i == len(P):
            return j == len(T)
        if P[i] == "#":
            return True
        if j == len(T):
            return False
        return (P[i] == "+" or P[i] == T[j]) and walk(i + 1, j + 1)

    return walk(0, 0)


def topic_match_regex(pattern: str, topic: str) -> bool:
    parts = pattern.split("/")
    rx = ""
    for k, lvl in enumerate(parts):
        sep = "/" if k else ""
        if lvl == "#":
            rx = f"{rx}(?:{sep}.*)?" if k else ".*"
        elif lvl == "+":
            rx += sep + "[^/]+"
        else:
            rx += sep + re.escape(lvl)
    return re.fullmatch(rx, topic) is not None


def random_topic_pair(rng: random.Random, alphabet=("a", "b", "c")) -> tuple[str, str]:
    n = rng.randint(1, 5)
    topic = [rng.choice(alphabet) for _ in range(n)]
    mode = rng.random()
    if mode < 0.5:
        # mutate the topic so positives are common
        pat = [("+" if rng.random() < 0.3 else lvl) for lvl in topic]
        if rng.random() < 0.3:
            pat = pat[:rng.randint(0, len(pat))] + ["#"]
        if rng.random() < 0.2:
            k = rng.randrange(len(pat))
            if pat[k] != "#":
                pat[k] = rng.choice(alphabet)
    else:
        m = rng.randint(1, 6)
        pat = [rng.choice(alphabet + ("+",)) for _ in range(m)]
        if rng.random() < 0.3:
            pat[-1] = "#"
    return "/".join(pat), "/".join(topic)


def close_pairs_oracle(points: list[tuple[str, float, float]], threshold: float) -> set[tuple[str, str]]:
    out = set()
    for i in range(len(points)):
        for j in range(len(points)):
            if i == j:
                continue
            a, ax, ay = points[i]
            b, bx, by = points[j]
            if math.sqrt((ax - bx) ** 2 + (ay - by) ** 2) < threshold:
                out.add(tuple(sorted((a, b))))
    return out


def sanitize_oracle(n_iz: int, n_lz: int, n_sz: int, t1: int, t2: int) -> list[str]:
    """Line-by-line transcription of the traversal pseudo-code for one device pass.

    The ambiguous 'sanitize that zone' step sanitizes every LZ/SZ zone whose
    count reached the threshold, LZ before SZ.
    """
    plan = []
    if n_iz >= t1:
        plan.append("IZ")
    alpha = max(n_lz, n_sz)
    if alpha >= t2:
        for zone, count in (("LZ", n_lz), ("SZ", n_sz)):
            if count >= t2:
                plan.append(zone)
    return plan


def sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def sample_loss(w: list[float], x: list[float], y: float) -> float:
    """Cross-entropy of one sample, written from the definition."""
    z = sum(wi * xi for wi, xi in zip(w[:-1], x)) + w[-1]
    p = sigmoid(z)
    return -(y * math.log(p) + (1 - y) * math.log(1 - p))


def central_difference(f, w: list[float], h: float = 1e-6) -> list[float]:
    g = []
    for k in range(len(w)):
        up, dn = list(w), list(w)
        up[k] += h
        dn[k] -= h
        g.append((f(up) - f(dn)) / (2 * h))
    return g


def centralized_sgd(X, y, rounds, epochs, k, alpha, rng):
    """Plain minibatch SGD over one dataset, written from the update rule."""
    w = np.zeros(X.shape[1] + 1)
    for _ in range(rounds * epochs):
        order = rng.permutation(len(y))
        for start in range(0, len(y), k):
            idx = order[start:start + k]
            z = X[idx] @ w[:-1] + w[-1]
            r = 1.0 / (1.0 + np.exp(-z)) - y[idx]
            grad = np.append(X[idx].T @ r, r.sum()) / len(idx)
            w = w - alpha * grad
    return w
