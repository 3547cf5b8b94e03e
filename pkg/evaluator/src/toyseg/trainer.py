"""Training and validation loops for the toy segmentation task."""

from __future__ import annotations

import hashlib
import random

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .task import ToyTask, case_batch


def derive_seed(*parts) -> int:
    key = "|".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "big")


def dice_from_masks(prediction: np.ndarray, truth: np.ndarray) -> float:
    """Plain Dice overlap between two boolean voxel masks; empty/empty is 1."""
    pred = np.asarray(prediction, dtype=bool)
    true = np.asarray(truth, dtype=bool)
    if pred.shape != true.shape:
        raise ValueError(f"grid mismatch: {pred.shape} vs {true.shape}")
    total = int(pred.sum()) + int(true.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((pred & true).sum()) / total


def soft_dice_loss(logits: torch.Tensor, labels: torch.Tensor, eps: float = 1e-5):
    """1 - mean soft Dice over foreground classes."""
    num_classes = logits.shape[1]
    probs = torch.softmax(logits, dim=1)
    onehot = F.one_hot(labels, num_classes).permute(0, 4, 1, 2, 3).float()
    dims = (0, 2, 3, 4)
    intersect = (probs * onehot).sum(dims)[1:]
    denom = probs.sum(dims)[1:] + onehot.sum(dims)[1:]
    return 1.0 - ((2.0 * intersect + eps) / (denom + eps)).mean()


def combined_loss(logits, labels, background_weight: float = 0.25):
    """Dice loss plus cross-entropy.

    The background class is down-weighted in the cross-entropy term: at toy
    iteration budgets an unweighted CE drives every voxel to background before
    the dice term can pull the (softmax-saturated) foreground back out.
    """
    weights = torch.ones(logits.shape[1])
    weights[0] = background_weight
    return soft_dice_loss(logits, labels) + F.cross_entropy(logits, labels, weight=weights)


def _flip(volumes: torch.Tensor, labels: torch.Tensor, rng: random.Random):
    for axis in (2, 3, 4):
        if rng.random() < 0.5:
            volumes = torch.flip(volumes, dims=(axis,))
            labels = torch.flip(labels, dims=(axis - 1,))
    return volumes, labels


def train(
    net: nn.Module,
    task: ToyTask,
    paths,
    seed: int,
    lr: float = 0.05,
    momentum: float = 0.9,
    weight_decay: float = 4e-5,
    batch: int = 2,
):
    """Run one SGD pass of len(paths) iterations, one sampled path each.

    Momentum SGD with a linear warm-up over the first tenth of the budget and
    step decays (x0.5) at 50% and 80%, shrunk from the published schedule to
    toy iteration counts.
    """
    iterations = len(paths)
    if iterations == 0:
        return
    rng = random.Random(seed)
    volumes, labels = case_batch(task, list(task.train_indices()))
    volumes_t = torch.from_numpy(volumes)
    labels_t = torch.from_numpy(labels)

    optimizer = torch.optim.SGD(
        net.parameters(), lr=lr, momentum=momentum, weight_decay=weight_decay
    )
    warmup = max(1, iterations // 10)
    net.train()
    for step, ops in enumerate(paths):
        scale = 0.125 + 0.875 * step / warmup if step < warmup else 1.0
        if step >= int(0.8 * iterations):
            scale *= 0.25
        elif step >= int(0.5 * iterations):
            scale *= 0.5
        for group in optimizer.param_groups:
            group["lr"] = lr * scale

        picks = [rng.randrange(task.num_train) for _ in range(batch)]
        x, y = _flip(volumes_t[picks], labels_t[picks], rng)
        optimizer.zero_grad()
        loss = combined_loss(net(x, ops), y)
        loss.backward()
        optimizer.step()


@torch.no_grad()
def validate(net: nn.Module, task: ToyTask, ops) -> tuple[float, dict]:
    """Mean foreground Dice over the validation cases."""
    net.eval()
    volumes, labels = case_batch(task, list(task.val_indices()))
    logits = net(torch.from_numpy(volumes), ops)
    pred = logits.argmax(dim=1).numpy()
    scores = []
    per_class = {}
    for cls in range(1, task.num_classes):
        cls_scores = [
            dice_from_masks(pred[i] == cls, labels[i] == cls)
            for i in range(len(labels))
        ]
        per_class[f"dice_class_{cls}"] = float(np.mean(cls_scores))
        scores.extend(cls_scores)
    return float(np.mean(scores)), per_class
