"""K-means over topology codes (Lloyd's algorithm, deterministic seeding)."""

from __future__ import annotations

import random
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, StructuralError
from .topology import Code

DEFAULT_MAX_ITER = 300


@dataclass(frozen=True)
class ClusterModel:
    """Fitted clustering of a code population.

    ``assignment`` is parallel to ``population`` (enumeration order);
    ``objective_history`` records the Lloyd objective after each iteration's
    centroid update and is non-increasing.
    """

    k: int
    centroids: np.ndarray  # shape (k, num_cells)
    assignment: tuple[int, ...]
    population: tuple[Code, ...]
    objective_history: tuple[float, ...]

    def members(self, cluster: int) -> list[Code]:
        return [c for c, a in zip(self.population, self.assignment) if a == cluster]

    def cluster_sizes(self) -> list[int]:
        sizes = [0] * self.k
        for a in self.assignment:
            sizes[a] += 1
        return sizes

    def to_json_dict(self) -> dict:
        return {
            "k": self.k,
            "centroids": self.centroids.tolist(),
            "assignment": list(self.assignment),
        }


def _farthest_point_init(points: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Greedy farthest-point centroid seeding; first pick is seeded-uniform."""
    rng = random.Random(seed)
    chosen = [rng.randrange(len(points))]
    d2 = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    while len(chosen) < k:
        nxt = int(np.argmax(d2))  # ties resolve to the lowest index
        chosen.append(nxt)
        d2 = np.minimum(d2, np.sum((points - points[nxt]) ** 2, axis=1))
    return points[chosen].astype(float)


def kmeans_cluster(
    population: list[Code] | tuple[Code, ...],
    k: int,
    seed: int,
    max_iter: int = DEFAULT_MAX_ITER,
) -> ClusterModel:
    """Cluster codes by Lloyd's algorithm on their raw level vectors.

    Deterministic for fixed (population, k, seed).  Empty clusters are
    repaired by moving the point farthest from its assigned centroid into
    the empty cluster, so the fitted model never has an empty cluster.
    """
    if k <= 0:
        raise ConfigError(f"k must be positive, got {k}")
    if not population:
        raise ConfigError("population is empty")
    if k > len(population):
        raise ConfigError(f"k ({k}) exceeds population size ({len(population)})")

    points = np.asarray(population, dtype=float)
    centroids = _farthest_point_init(points, k, seed)
    labels = np.full(len(points), -1, dtype=int)
    history: list[float] = []

    for _ in range(max_iter):
        d2 = np.sum((points[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        new_labels = np.argmin(d2, axis=1)  # ties resolve to the lowest cluster id
        for empty in range(k):
            if np.any(new_labels == empty):
                continue
            per_point = d2[np.arange(len(points)), new_labels]
            donor = int(np.argmax(per_point))
            new_labels[donor] = empty
            d2[donor, :] = np.inf
            d2[donor, empty] = 0.0
        for c in range(k):
            centroids[c] = points[new_labels == c].mean(axis=0)
        assigned = np.sum((points - centroids[new_labels]) ** 2)
        history.append(float(assigned))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels

    return ClusterModel(
        k=k,
        centroids=centroids,
        assignment=tuple(int(a) for a in labels),
        population=tuple(tuple(c) for c in population),
        objective_history=tuple(history),
    )


def assign(model: ClusterModel, code: Code) -> int:
    """Nearest-centroid cluster id; ties break toward the lowest id."""
    if len(code) != model.centroids.shape[1]:
        raise StructuralError(
            f"code length {len(code)} does not match centroid length "
            f"{model.centroids.shape[1]}"
        )
    d2 = np.sum((model.centroids - np.asarray(code, dtype=float)) ** 2, axis=1)
    return int(np.argmin(d2))
