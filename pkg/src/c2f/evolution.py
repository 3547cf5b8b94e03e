"""Cluster-guided asynchronous evolution over the pruned topology space.

Whenever a worker is idle the scheduler samples one already-trained model
from every cluster, ranks the clusters by those samples, and (unless an
epsilon coin redirects it to a uniformly random cluster) hands out an
untrained topology from the winner.  Every dispatch and completion is an
append-only journal record; the state is a pure function of the journal,
which is what makes resume and replay exact.
"""

from __future__ import annotations

import enum
import hashlib
import random
from collections import deque
from dataclasses import dataclass, field

from .clustering import ClusterModel
from .errors import ConfigError, ProtocolError
from .topology import Code


@dataclass(frozen=True)
class EvolutionConfig:
    k: int = 8
    init_per_cluster: int = 2
    epsilon: float = 0.2
    budget: int = 50
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError(f"epsilon must be in [0, 1], got {self.epsilon}")
        if self.init_per_cluster < 1:
            raise ConfigError("init_per_cluster must be >= 1")
        if self.budget < self.k * self.init_per_cluster:
            raise ConfigError(
                f"budget {self.budget} below the {self.k}x{self.init_per_cluster} "
                "initialization plan"
            )


class Signal(enum.Enum):
    """Non-assignment outcomes of next_assignment."""

    WAIT = "wait"  # init results still in flight; nothing rankable yet
    EXHAUSTED = "exhausted"  # budget reached or no untrained topology left


@dataclass(frozen=True)
class Assignment:
    code: Code
    cluster: int


@dataclass(frozen=True)
class HistoryEntry:
    seq: int  # completion order, 0-based
    code: Code
    score: float
    cluster: int


@dataclass
class SearchState:
    """Journaled scheduler state: history H, per-cluster trained sets, pending work."""

    config: EvolutionConfig
    history: list[HistoryEntry] = field(default_factory=list)
    trained: list[list[int]] = field(default_factory=list)  # history indices per cluster
    queued: deque = field(default_factory=deque)  # (code, cluster) awaiting dispatch
    inflight: dict = field(default_factory=dict)  # code -> cluster
    seen: set = field(default_factory=set)
    dispatches: int = 0
    events: int = 0
    log: list[dict] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return len(self.history) >= self.config.budget

    def pending_count(self) -> int:
        return len(self.queued) + len(self.inflight)


def _keyed_rng(seed: int, *parts) -> random.Random:
    """PRNG derived from a stable hash of (seed, parts); replay-independent."""
    key = ":".join(str(p) for p in (seed, *parts))
    digest = hashlib.sha256(key.encode()).digest()
    return random.Random(int.from_bytes(digest[:16], "big"))


def init_search(model: ClusterModel, config: EvolutionConfig) -> SearchState:
    """Seed the search by queueing init_per_cluster distinct codes per cluster."""
    sizes = model.cluster_sizes()
    if model.k != config.k or any(s == 0 for s in sizes):
        raise ConfigError(
            f"model must have exactly {config.k} non-empty clusters, got sizes {sizes}"
        )
    state = SearchState(config=config, trained=[[] for _ in range(config.k)])
    for cluster in range(config.k):
        members = model.members(cluster)
        if len(members) < config.init_per_cluster:
            raise ConfigError(
                f"cluster {cluster} has {len(members)} members, fewer than "
                f"init_per_cluster={config.init_per_cluster}"
            )
        rng = _keyed_rng(config.seed, "init", cluster)
        for code in rng.sample(members, config.init_per_cluster):
            state.queued.append((code, cluster))
            state.seen.add(code)
    return state


def _emit_dispatch(state: SearchState, code: Code, cluster: int) -> Assignment:
    state.inflight[code] = cluster
    state.seen.add(code)
    state.dispatches += 1
    state.events += 1
    state.log.append(
        {
            "seq": state.events,
            "event": "dispatch",
            "code": list(code),
            "cluster": cluster,
            "rng_checkpoint": state.dispatches,
        }
    )
    return Assignment(code=code, cluster=cluster)


def next_assignment(
    state: SearchState, model: ClusterModel, config: EvolutionConfig
) -> Assignment | Signal:
    """Pick the next topology to train, or signal WAIT/EXHAUSTED."""
    if state.queued:
        # the initialization plan always fits the budget (config invariant)
        code, cluster = state.queued.popleft()
        return _emit_dispatch(state, code, cluster)
    if len(state.history) + len(state.inflight) >= config.budget:
        return Signal.EXHAUSTED
    if any(not m for m in state.trained):
        return Signal.WAIT

    rng = _keyed_rng(config.seed, "dispatch", state.dispatches)
    compare = [
        state.history[rng.choice(state.trained[i])].score for i in range(config.k)
    ]
    ranked = sorted(range(config.k), key=lambda i: (-compare[i], i))
    order = list(ranked)
    if rng.random() < config.epsilon:
        pick = rng.randrange(config.k)
        order = [pick] + [c for c in ranked if c != pick]
    for cluster in order:
        untrained = [c for c in model.members(cluster) if c not in state.seen]
        if untrained:
            return _emit_dispatch(state, rng.choice(untrained), cluster)
    return Signal.EXHAUSTED


def record_result(state: SearchState, code: Code, score: float) -> HistoryEntry:
    """Complete a dispatched evaluation and fold it into H and its cluster set."""
    code = tuple(code)
    if code in state.inflight:
        cluster = state.inflight.pop(code)
    elif any(e.code == code for e in state.history):
        raise ProtocolError(f"duplicate completion for code {list(code)}")
    else:
        raise ProtocolError(f"completion for never-dispatched code {list(code)}")
    entry = HistoryEntry(seq=len(state.history), code=code, score=score, cluster=cluster)
    state.history.append(entry)
    state.trained[cluster].append(entry.seq)
    state.events += 1
    state.log.append(
        {
            "seq": state.events,
            "event": "complete",
            "code": list(code),
            "cluster": cluster,
            "score": score,
            "rng_checkpoint": state.dispatches,
        }
    )
    return entry


def best_model(state: SearchState) -> tuple[Code, float]:
    """Highest-scoring history entry; ties go to the earliest completion."""
    if not state.history:
        raise ProtocolError("best_model called with empty history")
    best = max(state.history, key=lambda e: (e.score, -e.seq))
    return best.code, best.score


def cluster_proportions(state: SearchState) -> list[list[float]]:
    """Per-cluster share of evaluations after each completion; rows sum to 1."""
    k = state.config.k
    counts = [0] * k
    rows: list[list[float]] = []
    for i, entry in enumerate(state.history, start=1):
        counts[entry.cluster] += 1
        rows.append([c / i for c in counts])
    return rows


def replay(
    model: ClusterModel, config: EvolutionConfig, events: list[dict]
) -> SearchState:
    """Rebuild a SearchState by re-applying journal events to a fresh init.

    Events are applied, not re-decided, so a replayed state matches the live
    one even for multi-worker journals; rng checkpoints are cross-checked to
    catch journals produced under a different seed or config.
    """
    state = init_search(model, config)
    for ev in events:
        kind = ev.get("event")
        code = tuple(ev["code"])
        if kind == "dispatch":
            if state.queued and state.queued[0][0] == code:
                state.queued.popleft()
            elif any(q[0] == code for q in state.queued):
                raise ProtocolError(
                    f"journal dispatches queued code {list(code)} out of order"
                )
            _emit_dispatch(state, code, ev["cluster"])
        elif kind == "complete":
            record_result(state, code, ev["score"])
        else:
            raise ProtocolError(f"unknown journal event {ev!r}")
        tail = state.log[-1]
        for key in ("seq", "event", "code", "cluster", "rng_checkpoint"):
            if tail[key] != ev[key]:
                raise ProtocolError(
                    f"journal mismatch at seq {ev.get('seq')}: "
                    f"replayed {tail[key]!r} != recorded {ev[key]!r} for {key!r}"
                )
    return state
