"""Per-class representation distributions stored as centroids plus noise.

Each class keeps a small set of centroids from seeded Lloyd clustering
(furthest-point initialization), the per-centroid assignment counts, an
isotropic noise scale, and the class mean. Pseudo representations are
drawn by picking a centroid count-weighted and adding Gaussian noise;
they stand in for raw data when training the task-identity and
all-class heads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, StateError
from .validation import as_matrix

KMEANS_MAX_ITER = 100


@dataclass
class ClassStatistics:
    centroids: np.ndarray          # (k, dim)
    counts: np.ndarray             # (k,) ints summing to n_fit
    noise_sigma: float
    mean: np.ndarray               # (dim,) count-weighted centroid average
    class_id: int = -1
    task_id: int = -1

    @property
    def n_fit(self) -> int:
        return int(self.counts.sum())


def _lloyd(reps: np.ndarray, k: int, seed: int):
    """Seeded k-means. Returns (centroids, assignment, objective history)."""
    n = reps.shape[0]
    rng = np.random.default_rng(seed)
    # furthest-point init, ties broken toward the lowest index
    first = int(rng.integers(n))
    chosen = [first]
    dist = ((reps - reps[first]) ** 2).sum(axis=1)
    while len(chosen) < k:
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, ((reps - reps[nxt]) ** 2).sum(axis=1))
    centroids = reps[chosen].copy()

    assign = np.full(n, -1)
    history = []
    for _ in range(KMEANS_MAX_ITER):
        d2 = ((reps[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assign = np.argmin(d2, axis=1)  # argmin takes the lowest index
        history.append(float(d2[np.arange(n), new_assign].sum()))
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            members = reps[assign == j]
            if len(members):  # empty clusters keep their previous position
                centroids[j] = members.mean(axis=0)
    return centroids, assign, history


def fit_class_statistics(reps, k: int = 5, noise_sigma: float | None = None,
                         seed: int = 0, class_id: int = -1,
                         task_id: int = -1) -> ClassStatistics:
    """Cluster one class's representations into centroid statistics.

    ``noise_sigma=None`` selects the scale automatically as the root mean
    squared per-coordinate deviation from the assigned centroid.
    """
    reps = as_matrix(reps, "reps")
    n, dim = reps.shape
    if k < 1:
        raise ConfigError("k must be >= 1")
    if n < k:
        raise ConfigError(f"need at least k={k} points, got {n}")
    centroids, assign, _ = _lloyd(reps, k, seed)
    counts = np.bincount(assign, minlength=k).astype(np.int64)
    mean = (counts[:, None] * centroids).sum(axis=0) / n
    if noise_sigma is None:
        sq = ((reps - centroids[assign]) ** 2).sum()
        noise_sigma = float(np.sqrt(sq / (n * dim)))
    if noise_sigma < 0:
        raise ConfigError("noise_sigma must be >= 0")
    return ClassStatistics(centroids=centroids, counts=counts,
                           noise_sigma=float(noise_sigma), mean=mean,
                           class_id=class_id, task_id=task_id)


def sample_pseudo(stats: ClassStatistics, n: int, seed: int = 0) -> np.ndarray:
    """Draw n pseudo representations: count-weighted centroid + noise."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    rng = np.random.default_rng(seed)
    probs = stats.counts / stats.counts.sum()
    picks = rng.choice(len(stats.counts), size=n, p=probs)
    samples = stats.centroids[picks].copy()
    if stats.noise_sigma > 0:
        samples += rng.normal(0.0, stats.noise_sigma, samples.shape)
    return samples


def class_mean(stats: ClassStatistics) -> np.ndarray:
    return stats.mean


@dataclass
class StatStore:
    """Statistics per (task, class), split into unadapted and adapted sets.

    Unadapted statistics are recorded before a task trains; adapted ones
    only after it finishes (the engine enforces the ordering and tests
    assert it through the event log).
    """

    unadapted: dict[tuple[int, int], ClassStatistics] = field(default_factory=dict)
    adapted: dict[tuple[int, int], ClassStatistics] = field(default_factory=dict)

    def add_unadapted(self, task_id: int, cls: int, stats: ClassStatistics):
        self.unadapted[(task_id, cls)] = stats

    def add_adapted(self, task_id: int, cls: int, stats: ClassStatistics):
        if (task_id, cls) not in self.unadapted:
            raise StateError(
                f"adapted statistics for task {task_id} class {cls} recorded "
                "before unadapted ones")
        self.adapted[(task_id, cls)] = stats

    def old_class_means(self, before_task: int) -> list[np.ndarray]:
        """Adapted class means for every class of tasks < before_task."""
        keys = sorted(k for k in self.adapted if k[0] < before_task)
        return [self.adapted[k].mean for k in keys]

    def unadapted_items(self, up_to_task: int):
        return [(k, v) for k, v in sorted(self.unadapted.items())
                if k[0] <= up_to_task]

    def adapted_items(self, up_to_task: int):
        return [(k, v) for k, v in sorted(self.adapted.items())
                if k[0] <= up_to_task]
