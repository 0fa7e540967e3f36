"""Round-robin driver for workers and a parameter server, plus synthetic data."""
from __future__ import annotations

from concurrent.futures import Executor
from dataclasses import dataclass

import numpy as np

from .model import LocalDataset, ModelState, TrainerConfig, accuracy, local_train, loss
from .server import ParameterServer


class Worker:
    """An edge gateway's training role. Its dataset never leaves this object."""

    def __init__(self, worker_id: str, data: LocalDataset, rng: np.random.Generator | None = None):
        self.worker_id = worker_id
        self._data = data
        self.rng = rng if rng is not None else np.random.default_rng(0)

    @property
    def n_samples(self) -> int:
        return len(self._data)

    def train(self, w: ModelState, cfg: TrainerConfig):
        return local_train(w, self._data, cfg, self.rng, self.worker_id)

    def evaluate(self, w: ModelState) -> tuple[float, float, int]:
        """(summed loss, correct predictions, sample count) of a model on local data."""
        n = len(self._data)
        return loss(w.weights, self._data) * n, accuracy(w.weights, self._data) * n, n


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    version: int
    loss: float
    accuracy: float
    accepted: int
    stale: int

    def to_dict(self) -> dict:
        return {"round": self.round, "version": self.version, "loss": self.loss,
                "accuracy": self.accuracy, "accepted": self.accepted, "stale": self.stale}


def worker_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def make_workers(datasets: list[LocalDataset], seed: int, prefix: str = "w") -> list[Worker]:
    return [Worker(f"{prefix}{i}", ds, worker_rng(seed, i)) for i, ds in enumerate(datasets)]


def evaluate_global(workers: list[Worker], w: ModelState) -> tuple[float, float]:
    tot_loss = tot_correct = 0.0
    tot_n = 0
    for wk in workers:
        lsum, correct, n = wk.evaluate(w)
        tot_loss += lsum
        tot_correct += correct
        tot_n += n
    return tot_loss / tot_n, tot_correct / tot_n


def run_round(workers: list[Worker], server: ParameterServer, cfg: TrainerConfig,
              schedule: str = "sequential", executor: Executor | None = None) -> tuple[int, int]:
    """One round over all workers; returns (accepted, stale) counts.

    ``sequential``: each worker downloads, trains and uploads in turn.
    ``broadcast``: all workers download the round-start model, train (in
    ``executor`` if given) and upload in worker order, so later uploads are
    stale by their position in the schedule.
    """
    before = server.stale_discarded
    if schedule == "sequential":
        for wk in workers:
            server.aggregate(wk.train(server.download(), cfg))
    elif schedule == "broadcast":
        snapshot = server.download()
        if executor is not None:
            updates = list(executor.map(lambda wk: wk.train(snapshot, cfg), workers))
        else:
            updates = [wk.train(snapshot, cfg) for wk in workers]
        for u in updates:
            server.aggregate(u)
    else:
        raise ValueError(f"unknown schedule {schedule!r}")
    stale = server.stale_discarded - before
    return len(workers) - stale, stale


def run_round_robin(workers: list[Worker], server: ParameterServer, cfg: TrainerConfig, rounds: int,
                    schedule: str = "sequential",
                    executor: Executor | None = None) -> tuple[ModelState, list[RoundMetrics]]:
    """Run a fixed round budget and return the final model and per-round trace.

    Shuffles come from each worker's own seeded generator, so the result is
    a function of the worker seeds and the schedule only.
    """
    if not workers:
        raise ValueError("at least one worker required")
    trace = []
    for r in range(1, rounds + 1):
        accepted, stale = run_round(workers, server, cfg, schedule, executor)
        w = server.download()
        l, acc = evaluate_global(workers, w)
        trace.append(RoundMetrics(r, w.version, l, acc, accepted, stale))
    return server.download(), trace


def two_gaussians(n: int, rng: np.random.Generator, mean: float = 1.0, sigma: float = 0.5,
                  d: int = 2) -> LocalDataset:
    """Balanced-in-expectation mixture: label 1 around +mean*1, label 0 around -mean*1."""
    labels = rng.integers(0, 2, size=n).astype(np.float64)
    centers = np.where(labels[:, None] == 1, mean, -mean) * np.ones((n, d))
    X = centers + sigma * rng.standard_normal((n, d))
    return LocalDataset(X, labels)


def synthetic_federation(n_workers: int, samples_per_worker: int, seed: int,
                         mean: float = 1.0, sigma: float = 0.5) -> list[LocalDataset]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xDA7A]))
    return [two_gaussians(samples_per_worker, rng, mean, sigma) for _ in range(n_workers)]
