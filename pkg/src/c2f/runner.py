"""Run configuration and the stage drivers behind the CLI.

All artifacts written here are deterministic for a fixed config and a single
worker: JSON is canonicalized, journal records carry no wall-clock data, and
every random draw is keyed off a recorded seed.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path

from . import evolution
from .clustering import ClusterModel, kmeans_cluster
from .errors import ConfigError
from .evaluation import (
    Budget,
    CachedEvaluator,
    ExternalEvaluator,
    SurrogateEvaluator,
    SurrogateSpec,
)
from .evolution import EvolutionConfig, SearchState, Signal
from .fine import FineSearchConfig, random_search_rank, run_supernet_training
from .topology import Code, SpaceSpec, enumerate_pruned

log = logging.getLogger(__name__)

CACHE_DIR_ENV = "C2F_CACHE_DIR"

JOURNAL = "journal.jsonl"
CONFIG_JSON = "config.json"
BEST_TOPOLOGY = "best_topology.json"
BEST_OPS = "best_ops.json"
RANKED = "ranked.jsonl"
PROPORTIONS = "cluster_proportions.csv"
ARCHITECTURE = "architecture.json"
COSTS = "costs.json"


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass
class EvaluatorConfig:
    kind: str = "surrogate"  # "surrogate" | "external"
    # surrogate fitness
    target_code: list | None = None  # default: seeded pick from the population
    target_ops: list | None = None
    alpha: float = 1.0
    beta: float = 0.05
    sigma: float = 0.01
    seed: int = 0
    # external process
    command: str | None = None
    timeout: float = 600.0
    # budget hints forwarded with every request
    iterations: int = 100
    stride: int = 48

    def __post_init__(self):
        if self.kind not in ("surrogate", "external"):
            raise ConfigError(f"unknown evaluator kind {self.kind!r}")


@dataclass
class RunConfig:
    space: SpaceSpec = field(default_factory=SpaceSpec)
    evolution: EvolutionConfig = field(default_factory=EvolutionConfig)
    fine: FineSearchConfig = field(default_factory=FineSearchConfig)
    evaluator: EvaluatorConfig = field(default_factory=EvaluatorConfig)
    cluster_seed: int = 0
    base_filters: int = 32
    num_classes: int = 3
    in_channels: int = 1
    input_extent: tuple = (96, 96, 96)
    multipliers: tuple = tuple(0.25 * i for i in range(1, 9))
    workers: int = 1
    cache_dir: str | None = None

    def to_json_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["space"] = self.space.to_json_dict()
        return out

    @classmethod
    def from_json_dict(cls, doc: dict) -> "RunConfig":
        cfg = cls()
        if "space" in doc:
            cfg.space = SpaceSpec.from_json_dict(doc["space"])
        if "evolution" in doc:
            cfg.evolution = EvolutionConfig(**doc["evolution"])
        if "fine" in doc:
            cfg.fine = FineSearchConfig(**doc["fine"])
        if "evaluator" in doc:
            cfg.evaluator = EvaluatorConfig(**doc["evaluator"])
        for name in (
            "cluster_seed",
            "base_filters",
            "num_classes",
            "in_channels",
            "workers",
            "cache_dir",
        ):
            if name in doc:
                setattr(cfg, name, doc[name])
        if "input_extent" in doc:
            cfg.input_extent = tuple(doc["input_extent"])
        if "multipliers" in doc:
            cfg.multipliers = tuple(doc["multipliers"])
        return cfg


def default_surrogate_target(population: list[Code], seed: int) -> Code:
    """Seeded pick of a planted optimum when the config names none."""
    digest = hashlib.sha256(f"{seed}:target".encode()).digest()
    return population[int.from_bytes(digest[:8], "big") % len(population)]


def build_evaluator(
    config: RunConfig, population: list[Code] | None = None, stride: int | None = None
):
    ev = config.evaluator
    budget = Budget(
        iterations=ev.iterations, stride=ev.stride if stride is None else stride
    )
    if ev.kind == "surrogate":
        target = ev.target_code
        if target is None:
            if not population:
                raise ConfigError("surrogate evaluator needs target_code or a population")
            target = default_surrogate_target(population, ev.seed)
        spec = SurrogateSpec(
            target_code=tuple(target),
            target_ops=tuple(ev.target_ops) if ev.target_ops else None,
            alpha=ev.alpha,
            beta=ev.beta,
            sigma=ev.sigma,
            seed=ev.seed,
        )
        evaluator = SurrogateEvaluator(spec, budget=budget)
    else:
        if not ev.command:
            raise ConfigError("external evaluator requires a command line")
        evaluator = ExternalEvaluator(ev.command, budget=budget, timeout=ev.timeout)

    cache_dir = config.cache_dir or os.environ.get(CACHE_DIR_ENV)
    if cache_dir:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        namespace = hashlib.sha256(_dumps(dataclasses.asdict(ev)).encode()).hexdigest()[:16]
        evaluator = CachedEvaluator(evaluator, Path(cache_dir) / f"{namespace}.jsonl")
    return evaluator


class Journal:
    """Append-only JSONL writer; one line per record, flushed immediately."""

    def __init__(self, path: Path, append: bool = False):
        self.path = Path(path)
        self._fh = open(self.path, "a" if append else "w", encoding="utf-8")

    def write(self, record: dict):
        self._fh.write(_dumps(record) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()


def read_journal(path: Path) -> tuple[dict, list[dict]]:
    """Load (header, events) from a journal file."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    if not records or records[0].get("event") != "header":
        raise ConfigError(f"{path} is not a search journal (missing header)")
    return records[0], records[1:]


def build_population_model(config: RunConfig) -> tuple[list[Code], ClusterModel]:
    population = enumerate_pruned(config.space)
    model = kmeans_cluster(population, config.evolution.k, config.cluster_seed)
    return population, model


def write_proportions_csv(path: Path, state: SearchState):
    rows = evolution.cluster_proportions(state)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["eval_index"] + [f"cluster_{i}" for i in range(state.config.k)])
        for i, row in enumerate(rows, start=1):
            writer.writerow([i] + [f"{p:.6f}" for p in row])


class CoarseRunner:
    """Drives Algorithm-1 scheduling against an evaluator, with journaling."""

    def __init__(self, config: RunConfig, out_dir: Path, resume: bool = False):
        self.config = config
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._completion = threading.Condition(self._lock)

        journal_path = self.out_dir / JOURNAL
        self.orphans: list[tuple[Code, int]] = []
        if resume:
            header, events = read_journal(journal_path)
            self.config = RunConfig.from_json_dict(header["config"])
            self.population, self.model = build_population_model(self.config)
            self.state = evolution.replay(self.model, self.config.evolution, events)
            self.orphans = [(c, cl) for c, cl in self.state.inflight.items()]
            self.journal = Journal(journal_path, append=True)
        else:
            self.population, self.model = build_population_model(self.config)
            self.state = evolution.init_search(self.model, self.config.evolution)
            self.journal = Journal(journal_path)
            self.journal.write(
                {
                    "seq": 0,
                    "event": "header",
                    "version": 1,
                    "config": self.config.to_json_dict(),
                }
            )
        (self.out_dir / CONFIG_JSON).write_text(
            json.dumps(self.config.to_json_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )

    def _flush_new_records(self, already: int):
        for record in self.state.log[already:]:
            self.journal.write(record)

    def run(self, stop_after_evals: int | None = None) -> tuple[Code, float]:
        """Evaluate until the budget is spent; optionally stop early (test harness)."""
        workers = max(1, self.config.workers)
        evaluators = [build_evaluator(self.config, self.population) for _ in range(workers)]
        stop_flag = threading.Event()
        errors: list[BaseException] = []

        def target(evaluator):
            try:
                self._worker_loop(evaluator, stop_flag, stop_after_evals)
            except BaseException as exc:  # noqa: BLE001 - surfaced after join
                errors.append(exc)
                stop_flag.set()
                with self._completion:
                    self._completion.notify_all()

        try:
            if workers == 1:
                target(evaluators[0])
            else:
                threads = [
                    threading.Thread(target=target, args=(ev,)) for ev in evaluators
                ]
                for t in threads:
                    t.start()
                for t in threads:
                    t.join()
        finally:
            for ev in evaluators:
                ev.close()
            self.journal.close()
        if errors:
            raise errors[0]

        best_code, best_score = evolution.best_model(self.state)
        self._write_outputs(best_code, best_score)
        return best_code, best_score

    def _worker_loop(self, evaluator, stop_flag, stop_after_evals):
        while not stop_flag.is_set():
            with self._lock:
                if stop_after_evals is not None and len(self.state.history) >= stop_after_evals:
                    stop_flag.set()
                    self._completion.notify_all()
                    return
                if self.orphans:
                    code, _cluster = self.orphans.pop(0)
                    assignment = evolution.Assignment(code=code, cluster=_cluster)
                else:
                    mark = len(self.state.log)
                    assignment = evolution.next_assignment(
                        self.state, self.model, self.config.evolution
                    )
                    if isinstance(assignment, Signal):
                        if assignment is Signal.EXHAUSTED:
                            stop_flag.set()
                            self._completion.notify_all()
                            return
                        self._completion.wait(timeout=1.0)
                        continue
                    self._flush_new_records(mark)
            result = evaluator.evaluate_topology(assignment.code)
            with self._lock:
                mark = len(self.state.log)
                evolution.record_result(self.state, assignment.code, result.score)
                self._flush_new_records(mark)
                self._completion.notify_all()

    def _write_outputs(self, best_code: Code, best_score: float):
        (self.out_dir / BEST_TOPOLOGY).write_text(
            json.dumps(
                {"code": list(best_code), "score": best_score, "evaluations": len(self.state.history)},
                indent=2,
                sort_keys=True,
            )
            + "\n",
            encoding="utf-8",
        )
        write_proportions_csv(self.out_dir / PROPORTIONS, self.state)


def coarse_search(
    config: RunConfig | None,
    out_dir,
    resume: bool = False,
    stop_after_evals: int | None = None,
) -> tuple[Code, float]:
    """Run (or resume) a coarse search; resume takes its config from the journal."""
    if config is None and not resume:
        raise ConfigError("a run config is required unless resuming")
    runner = CoarseRunner(config or RunConfig(), Path(out_dir), resume=resume)
    return runner.run(stop_after_evals=stop_after_evals)


def fine_search(code: Code, config: RunConfig, out_dir) -> tuple[tuple[str, ...], float]:
    """Supernet training then K-candidate random-search ranking for one topology."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    code = tuple(code)
    evaluator = build_evaluator(config, [code], stride=config.fine.eval_stride)
    journal = Journal(out_dir / JOURNAL)
    try:
        journal.write(
            {"seq": 0, "event": "header", "version": 1, "config": config.to_json_dict()}
        )
        handle = run_supernet_training(code, config.fine, evaluator)
        for i, path in enumerate(handle.paths):
            journal.write(
                {"seq": i + 1, "event": "supernet_path", "iteration": i, "ops": list(path)}
            )
        ranked = random_search_rank(code, handle, config.fine, evaluator)
    finally:
        journal.close()
        evaluator.close()

    with open(out_dir / RANKED, "w", encoding="utf-8") as fh:
        for rank, (ops, score) in enumerate(ranked, start=1):
            fh.write(_dumps({"rank": rank, "ops": list(ops), "score": score}) + "\n")
    best_ops, best_score = ranked[0]
    (out_dir / BEST_OPS).write_text(
        json.dumps(
            {"code": list(code), "ops": list(best_ops), "score": best_score},
            indent=2,
            sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )
    (out_dir / CONFIG_JSON).write_text(
        json.dumps(config.to_json_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return best_ops, best_score


def read_ranked(path) -> list[dict]:
    """Parse a ranked.jsonl file back into its records."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(json.loads(line))
    return out


def load_topology_file(path) -> Code:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"topology file not found: {path}")
    doc = json.loads(path.read_text(encoding="utf-8"))
    if isinstance(doc, dict):
        return tuple(doc["code"])
    return tuple(doc)


def load_ops_file(path) -> tuple[str, ...]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"ops file not found: {path}")
    doc = json.loads(path.read_text(encoding="utf-8"))
    if isinstance(doc, dict):
        return tuple(doc["ops"])
    return tuple(doc)
