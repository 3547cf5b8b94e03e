"""Fine stage: per-cell operation space and one-shot random-search ranking."""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass

from .errors import ConfigError, EvaluationError, ValidationError
from .topology import Code

#: Canonical operation order: full 3D conv, factorized pseudo-3D, in-plane 2D.
OP_KINDS = ("3d", "p3d", "2d")

OpConfig = tuple[str, ...]


def validate_ops(ops, num_cells: int) -> OpConfig:
    ops = tuple(ops)
    if len(ops) != num_cells:
        raise ValidationError(f"ops length {len(ops)} does not match {num_cells} cells")
    for i, op in enumerate(ops):
        if op not in OP_KINDS:
            raise ValidationError(f"unknown operation {op!r} at cell {i}")
    return ops


@dataclass(frozen=True)
class FineSearchConfig:
    supernet_iterations: int = 200
    num_candidates: int = 2000
    seed: int = 0
    eval_stride: int = 48

    def __post_init__(self):
        if self.num_candidates < 1:
            raise ConfigError("num_candidates must be >= 1")
        if self.supernet_iterations < 0:
            raise ConfigError("supernet_iterations must be >= 0")


def op_space_size(num_cells: int) -> int:
    """Number of operation colorings: 3^num_cells."""
    if num_cells < 1:
        raise ConfigError(f"num_cells must be >= 1, got {num_cells}")
    return 3**num_cells


def sample_uniform_path(num_cells: int, rng: random.Random) -> OpConfig:
    """One single-path sample: each cell's op uniform over the three kinds."""
    return tuple(rng.choice(OP_KINDS) for _ in range(num_cells))


def _keyed_rng(seed: int, *parts) -> random.Random:
    key = ":".join(str(p) for p in (seed, *parts))
    digest = hashlib.sha256(key.encode()).digest()
    return random.Random(int.from_bytes(digest[:16], "big"))


def supernet_path_log(num_cells: int, config: FineSearchConfig) -> tuple[OpConfig, ...]:
    """The per-iteration path sequence; a pure function of the fine seed."""
    rng = _keyed_rng(config.seed, "supernet-paths")
    return tuple(
        sample_uniform_path(num_cells, rng) for _ in range(config.supernet_iterations)
    )


@dataclass(frozen=True)
class SupernetHandle:
    """Token for a trained super-network plus the exact paths it saw."""

    code: Code
    paths: tuple[OpConfig, ...]
    train_score: float
    train_metrics: dict


def run_supernet_training(code: Code, config: FineSearchConfig, evaluator) -> SupernetHandle:
    """Train the weight-sharing super-network with engine-sampled paths.

    The engine owns the path RNG so the log is re-derivable from the seed
    regardless of which evaluator executed the training.
    """
    code = tuple(code)
    paths = supernet_path_log(len(code), config)
    result = evaluator.train_supernet(code, paths)
    return SupernetHandle(
        code=code, paths=paths, train_score=result.score, train_metrics=dict(result.metrics)
    )


def sample_candidates(num_cells: int, k: int, seed: int) -> list[OpConfig]:
    """K distinct op configs, rejection-sampled in a deterministic order."""
    space = op_space_size(num_cells)
    if k > space:
        raise ConfigError(f"cannot draw {k} distinct configs from a space of {space}")
    rng = _keyed_rng(seed, "candidates")
    seen: set[OpConfig] = set()
    out: list[OpConfig] = []
    while len(out) < k:
        ops = sample_uniform_path(num_cells, rng)
        if ops not in seen:
            seen.add(ops)
            out.append(ops)
    return out


def random_search_rank(
    code: Code, handle: SupernetHandle, config: FineSearchConfig, evaluator
) -> list[tuple[OpConfig, float]]:
    """Score K sampled candidates against the shared weights; best first.

    Ties keep sampling order, so the ranking is deterministic for a fixed
    seed and evaluator.
    """
    code = tuple(code)
    if handle.code != code:
        raise ConfigError("supernet handle was trained for a different topology")
    candidates = sample_candidates(len(code), config.num_candidates, config.seed)
    scored: list[tuple[OpConfig, float]] = []
    for i, ops in enumerate(candidates):
        try:
            result = evaluator.evaluate_candidate(code, ops)
        except EvaluationError as exc:
            raise EvaluationError(
                f"candidate {i} {list(ops)} failed: {exc}",
                payload=getattr(exc, "payload", None),
                progress=i,
            ) from exc
        scored.append((ops, result.score))
    order = sorted(range(len(scored)), key=lambda i: (-scored[i][1], i))
    return [scored[i] for i in order]
