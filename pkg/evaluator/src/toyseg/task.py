"""Synthetic 3D segmentation volumes: bright ellipsoid blobs on a noisy background."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ToyTask:
    """A tiny fully-synthetic segmentation dataset.

    Case indices [0, num_train) are the training split and
    [num_train, num_train + num_val) the validation split, so the two are
    disjoint by construction.
    """

    extent: tuple[int, int, int] = (32, 32, 32)
    num_train: int = 8
    num_val: int = 2
    num_classes: int = 3  # background + 2 foreground structures
    seed: int = 0
    noise: float = 0.15

    def train_indices(self) -> range:
        return range(self.num_train)

    def val_indices(self) -> range:
        return range(self.num_train, self.num_train + self.num_val)


def make_case(task: ToyTask, index: int) -> tuple[np.ndarray, np.ndarray]:
    """One (volume, labels) pair; deterministic in (task.seed, index).

    Returns volume float32 of shape (1, *extent) and labels int64 of shape
    extent.  Each foreground class is an ellipsoid with its own intensity
    offset, so the task is easy enough to learn within a handful of steps.
    """
    rng = np.random.default_rng([task.seed, index])
    extent = np.asarray(task.extent)
    volume = rng.normal(0.0, task.noise, size=task.extent).astype(np.float32)
    labels = np.zeros(task.extent, dtype=np.int64)

    coords = np.stack(
        np.meshgrid(*[np.arange(e) for e in task.extent], indexing="ij"), axis=-1
    ).astype(np.float32)
    for cls in range(1, task.num_classes):
        center = rng.uniform(0.3, 0.7, size=3) * extent
        radii = rng.uniform(0.18, 0.30, size=3) * extent
        inside = np.sum(((coords - center) / radii) ** 2, axis=-1) <= 1.0
        labels[inside] = cls
        volume[inside] += 0.8 + 0.4 * cls
    return volume[None], labels


def case_batch(task: ToyTask, indices) -> tuple[np.ndarray, np.ndarray]:
    volumes, labels = zip(*(make_case(task, i) for i in indices))
    return np.stack(volumes), np.stack(labels)
