"""Fitness evaluation: deterministic surrogate, external-process protocol, cache.

The wire protocol is line-delimited UTF-8 JSON over the child's stdin/stdout:
one object per line, no intra-object newlines, ``{"cmd": "hello", "version": 1}``
handshake in both directions, then request/response pairs matched by ``id``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import queue
import shlex
import subprocess
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ChildExited,
    ConfigError,
    EvaluationTimeout,
    ProtocolError,
    ScoreRangeError,
    StructuralError,
    ValidationError,
)
from .topology import Code, code_distance, code_span, infer_spec, validate_code

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1

EVALUATE_TOPOLOGY = "evaluate_topology"
TRAIN_SUPERNET = "train_supernet"
EVALUATE_CANDIDATE = "evaluate_candidate"
COMMANDS = (EVALUATE_TOPOLOGY, TRAIN_SUPERNET, EVALUATE_CANDIDATE)


@dataclass(frozen=True)
class Budget:
    """Per-request training/validation hints forwarded to evaluators."""

    iterations: int = 100
    stride: int = 48


@dataclass(frozen=True)
class EvaluationRequest:
    id: int
    command: str
    code: Code
    ops: tuple[str, ...] | None = None
    paths: tuple[tuple[str, ...], ...] | None = None
    budget: Budget = Budget()

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")

    def to_wire(self) -> dict:
        msg: dict = {
            "id": self.id,
            "cmd": self.command,
            "code": list(self.code),
            "budget": {"iterations": self.budget.iterations, "stride": self.budget.stride},
        }
        if self.ops is not None:
            msg["ops"] = list(self.ops)
        if self.paths is not None:
            msg["paths"] = [list(p) for p in self.paths]
        return msg


@dataclass(frozen=True)
class EvaluationResult:
    id: int
    score: float
    metrics: dict[str, float] = field(default_factory=dict)
    duration: float = 0.0

    def to_json_dict(self) -> dict:
        return {"id": self.id, "score": self.score, "metrics": dict(self.metrics)}


def _unit_hash(*parts) -> float:
    """Deterministic uniform [0, 1) value keyed by the stringified parts."""
    key = "|".join(str(p) for p in parts)
    digest = hashlib.sha256(key.encode()).digest()
    return int.from_bytes(digest[:8], "big") / 2.0**64


def all_3d(num_cells: int) -> tuple[str, ...]:
    """Default coarse-stage coloring: standard 3D convs in every cell."""
    return ("3d",) * num_cells


@dataclass(frozen=True)
class SurrogateSpec:
    """Synthetic fitness with a planted optimum at (target_code, target_ops).

    score = clamp01(1 - alpha * d(code, target)/d_max
                      - beta * hamming(ops, target_ops)/num_cells
                      + noise(seed, code, ops))
    with noise uniform in [-sigma, +sigma], fixed per (seed, code, ops).
    """

    target_code: Code
    target_ops: tuple[str, ...] | None = None
    alpha: float = 1.0
    beta: float = 0.05
    sigma: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if min(self.alpha, self.beta, self.sigma) < 0:
            raise ConfigError("alpha, beta, sigma must be non-negative")
        object.__setattr__(self, "target_code", tuple(self.target_code))
        if self.target_ops is None:
            object.__setattr__(self, "target_ops", all_3d(len(self.target_code)))
        else:
            object.__setattr__(self, "target_ops", tuple(self.target_ops))


def surrogate_evaluate(
    spec: SurrogateSpec, code: Code, ops: tuple[str, ...] | None = None
) -> EvaluationResult:
    """Deterministic stand-in fitness; higher the closer to the planted target."""
    space = infer_spec(tuple(code))
    verdict = validate_code(tuple(code), space)
    if not verdict:
        raise ValidationError(f"invalid code {list(code)}: rule {verdict.rule!r}")
    if ops is None:
        ops = all_3d(len(code))
    # normalize by the target space's span so scores stay comparable across specs
    d_max = code_span(infer_spec(spec.target_code)) or 1.0
    dist = code_distance(tuple(code), spec.target_code)
    ham = sum(1 for a, b in zip(ops, spec.target_ops) if a != b)
    noise = spec.sigma * (2.0 * _unit_hash(spec.seed, tuple(code), tuple(ops)) - 1.0)
    raw = 1.0 - spec.alpha * dist / d_max - spec.beta * ham / len(code) + noise
    score = min(1.0, max(0.0, raw))
    return EvaluationResult(
        id=-1, score=score, metrics={"code_distance": dist, "ops_hamming": float(ham)}
    )


class SurrogateEvaluator:
    """In-process evaluator built on the surrogate fitness."""

    kind = "surrogate"

    def __init__(self, spec: SurrogateSpec, budget: Budget = Budget()):
        self.spec = spec
        self.budget = budget
        self.calls = 0

    def evaluate_topology(self, code, ops=None) -> EvaluationResult:
        self.calls += 1
        return surrogate_evaluate(self.spec, code, ops)

    def train_supernet(self, code, paths) -> EvaluationResult:
        # no weights to train; the handle's fidelity lives in the path log
        self.calls += 1
        return EvaluationResult(id=-1, score=1.0, metrics={"iterations": float(len(paths))})

    def evaluate_candidate(self, code, ops) -> EvaluationResult:
        self.calls += 1
        return surrogate_evaluate(self.spec, code, ops)

    def close(self):
        pass


def _validate_result(raw: dict, expect_id: int, line: str) -> EvaluationResult:
    if not isinstance(raw, dict) or "id" not in raw or "score" not in raw:
        raise ProtocolError(f"malformed evaluator response: {line!r}", payload=line)
    if raw["id"] != expect_id:
        raise ProtocolError(
            f"response id {raw['id']} does not match request id {expect_id}",
            payload=line,
        )
    score = raw["score"]
    if not isinstance(score, (int, float)) or not 0.0 <= float(score) <= 1.0:
        raise ScoreRangeError(f"score {score!r} outside [0, 1]", payload=line)
    metrics = raw.get("metrics", {})
    if not isinstance(metrics, dict) or not all(
        isinstance(k, str) and isinstance(v, (int, float)) for k, v in metrics.items()
    ):
        raise ProtocolError(f"malformed metrics in response: {line!r}", payload=line)
    return EvaluationResult(
        id=expect_id, score=float(score), metrics={k: float(v) for k, v in metrics.items()}
    )


class ExternalSession:
    """Owns one evaluator child process and serializes requests to it."""

    def __init__(self, command: str | list[str], timeout: float = 600.0):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.command = argv
        self.timeout = timeout
        self.completed = 0
        self._lock = threading.Lock()
        self._lines: queue.Queue = queue.Queue()
        try:
            self._proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=None,
                text=True,
                bufsize=1,
            )
        except FileNotFoundError as exc:
            raise ConfigError(f"evaluator command not found: {argv[0]}") from exc
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        self._handshake()

    def _pump(self):
        assert self._proc.stdout is not None
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)  # EOF sentinel

    def _send(self, obj: dict):
        line = json.dumps(obj, sort_keys=True, separators=(",", ":"))
        try:
            assert self._proc.stdin is not None
            self._proc.stdin.write(line + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ChildExited(
                f"evaluator exited before request could be sent: {exc}",
                progress=self.completed,
            ) from exc

    def _recv_line(self) -> str:
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            raise EvaluationTimeout(
                f"no evaluator response within {self.timeout}s", progress=self.completed
            ) from None
        if line is None:
            raise ChildExited(
                f"evaluator exited (code {self._proc.poll()}) after "
                f"{self.completed} completed requests",
                progress=self.completed,
            )
        return line

    def _handshake(self):
        self._send({"cmd": "hello", "version": PROTOCOL_VERSION})
        line = self._recv_line()
        try:
            raw = json.loads(line)
        except json.JSONDecodeError:
            raise ProtocolError(f"malformed handshake: {line!r}", payload=line) from None
        if raw.get("cmd") != "hello" or raw.get("version") != PROTOCOL_VERSION:
            raise ProtocolError(f"handshake version mismatch: {line!r}", payload=line)

    def request(self, req: EvaluationRequest) -> EvaluationResult:
        with self._lock:
            start = time.monotonic()
            self._send(req.to_wire())
            line = self._recv_line()
            try:
                raw = json.loads(line)
            except json.JSONDecodeError:
                raise ProtocolError(
                    f"malformed evaluator response: {line!r}", payload=line
                ) from None
            result = _validate_result(raw, req.id, line)
            self.completed += 1
            return EvaluationResult(
                id=result.id,
                score=result.score,
                metrics=result.metrics,
                duration=time.monotonic() - start,
            )

    def close(self):
        if self._proc.poll() is None:
            try:
                if self._proc.stdin is not None:
                    self._proc.stdin.close()
                self._proc.wait(timeout=5)
            except (OSError, subprocess.TimeoutExpired):
                self._proc.kill()
                self._proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def external_evaluate(session: ExternalSession, request: EvaluationRequest) -> EvaluationResult:
    """Send one request over an established session and await its reply."""
    return session.request(request)


class ExternalEvaluator:
    """Evaluator facade over a single ExternalSession."""

    kind = "external"

    def __init__(self, command: str | list[str], budget: Budget = Budget(), timeout: float = 600.0):
        self.budget = budget
        self.session = ExternalSession(command, timeout=timeout)
        self._next_id = 0

    def _request(self, command, code, ops=None, paths=None) -> EvaluationResult:
        self._next_id += 1
        req = EvaluationRequest(
            id=self._next_id,
            command=command,
            code=tuple(code),
            ops=tuple(ops) if ops is not None else None,
            paths=tuple(tuple(p) for p in paths) if paths is not None else None,
            budget=self.budget,
        )
        return external_evaluate(self.session, req)

    def evaluate_topology(self, code, ops=None) -> EvaluationResult:
        return self._request(EVALUATE_TOPOLOGY, code, ops)

    def train_supernet(self, code, paths) -> EvaluationResult:
        return self._request(TRAIN_SUPERNET, code, paths=paths)

    def evaluate_candidate(self, code, ops) -> EvaluationResult:
        return self._request(EVALUATE_CANDIDATE, code, ops)

    def close(self):
        self.session.close()


def _cache_key(command: str, code, ops, budget: Budget) -> str:
    return json.dumps(
        {
            "cmd": command,
            "code": list(code),
            "ops": list(ops) if ops is not None else None,
            "budget": {"iterations": budget.iterations, "stride": budget.stride},
        },
        sort_keys=True,
        separators=(",", ":"),
    )


class CachedEvaluator:
    """Persistent result cache around another evaluator.

    Keys are (command, code, ops, budget hints).  train_supernet passes
    through uncached: it mutates evaluator-side state (the shared weights),
    so skipping it would leave later candidate scores meaningless.
    """

    def __init__(self, inner, path):
        self.inner = inner
        self.budget = inner.budget
        self.kind = inner.kind
        self.path = path
        self._entries: dict[str, EvaluationResult] = {}
        self._load()

    def _load(self):
        try:
            fh = open(self.path, encoding="utf-8")
        except FileNotFoundError:
            return
        with fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    res = rec["result"]
                    self._entries[rec["key"]] = EvaluationResult(
                        id=res["id"], score=float(res["score"]), metrics=res["metrics"]
                    )
                except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                    log.warning("ignoring corrupt cache line %s:%d", self.path, lineno)

    def _store(self, key: str, result: EvaluationResult):
        self._entries[key] = result
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(
                json.dumps(
                    {"key": key, "result": result.to_json_dict()},
                    sort_keys=True,
                    separators=(",", ":"),
                )
                + "\n"
            )

    def _cached_call(self, command, code, ops, call):
        key = _cache_key(command, code, ops, self.budget)
        hit = self._entries.get(key)
        if hit is not None:
            return hit
        result = call()
        self._store(key, result)
        return result

    def evaluate_topology(self, code, ops=None) -> EvaluationResult:
        return self._cached_call(
            EVALUATE_TOPOLOGY, code, ops, lambda: self.inner.evaluate_topology(code, ops)
        )

    def train_supernet(self, code, paths) -> EvaluationResult:
        return self.inner.train_supernet(code, paths)

    def evaluate_candidate(self, code, ops) -> EvaluationResult:
        return self._cached_call(
            EVALUATE_CANDIDATE, code, ops, lambda: self.inner.evaluate_candidate(code, ops)
        )

    def close(self):
        self.inner.close()


def cached(evaluator: CachedEvaluator, request: EvaluationRequest) -> EvaluationResult:
    """Serve a request through a CachedEvaluator."""
    if request.command == EVALUATE_TOPOLOGY:
        return evaluator.evaluate_topology(request.code, request.ops)
    if request.command == EVALUATE_CANDIDATE:
        return evaluator.evaluate_candidate(request.code, request.ops)
    return evaluator.train_supernet(request.code, request.paths or ())


def dice_score(prediction: np.ndarray, truth: np.ndarray) -> float:
    """Dice-Sorensen overlap 2|Y∩Z| / (|Y|+|Z|) between two voxel masks.

    Both masks must share a grid shape.  Two empty masks count as perfect
    agreement (1.0).
    """
    pred = np.asarray(prediction, dtype=bool)
    true = np.asarray(truth, dtype=bool)
    if pred.shape != true.shape:
        raise StructuralError(f"grid mismatch: {pred.shape} vs {true.shape}")
    total = int(pred.sum()) + int(true.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(pred, true).sum()) / total
