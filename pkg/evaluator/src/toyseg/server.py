"""Line-delimited JSON evaluator serving the engine's wire protocol.

Engine -> child requests carry a topology code, optional ops, optional
supernet paths, and budget hints; replies are ``{"id", "score", "metrics"}``.
A request that cannot be served gets ``{"id", "error"}`` back and the loop
keeps running.  Protocol traffic owns stdout; all logging goes to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys

import torch

from .net import OP_KINDS, SegNet
from .task import ToyTask
from .trainer import derive_seed, train, validate

PROTOCOL_VERSION = 1


class ToyEvaluatorServer:
    def __init__(self, task: ToyTask, seed: int = 0, base_filters: int = 8):
        self.task = task
        self.seed = seed
        self.base_filters = base_filters
        self.supernet: SegNet | None = None
        self.supernet_code: tuple[int, ...] | None = None

    def _check_code(self, code):
        code = tuple(int(x) for x in code)
        depth = 2 ** (1 + max(code))
        for axis in self.task.extent:
            if axis % depth:
                raise ValueError(
                    f"volume extent {self.task.extent} is not divisible by {depth}"
                )
        return code

    def _check_ops(self, ops, num_cells):
        ops = tuple(ops)
        if len(ops) != num_cells or any(op not in OP_KINDS for op in ops):
            raise ValueError(f"bad ops {ops} for {num_cells} cells")
        return ops

    def _build_net(self, code, seed_key) -> SegNet:
        torch.manual_seed(derive_seed(self.seed, "init", seed_key))
        return SegNet(
            code,
            base_filters=self.base_filters,
            num_classes=self.task.num_classes,
        )

    def evaluate_topology(self, code, ops, iterations) -> tuple[float, dict]:
        code = self._check_code(code)
        ops = self._check_ops(ops or ("3d",) * len(code), len(code))
        net = self._build_net(code, ("topology", code, ops))
        train(
            net,
            self.task,
            paths=[ops] * iterations,
            seed=derive_seed(self.seed, "train", code, ops),
        )
        score, metrics = validate(net, self.task, ops)
        metrics["train_iterations"] = float(iterations)
        return score, metrics

    def train_supernet(self, code, paths) -> tuple[float, dict]:
        code = self._check_code(code)
        paths = [self._check_ops(p, len(code)) for p in paths]
        net = self._build_net(code, ("supernet", code))
        train(net, self.task, paths=paths, seed=derive_seed(self.seed, "supernet", code))
        self.supernet = net
        self.supernet_code = code
        # report the shared-weight fitness of the default coloring
        score, metrics = validate(net, self.task, ("3d",) * len(code))
        metrics["train_iterations"] = float(len(paths))
        return score, metrics

    def evaluate_candidate(self, code, ops) -> tuple[float, dict]:
        code = self._check_code(code)
        ops = self._check_ops(ops, len(code))
        if self.supernet is None or self.supernet_code != code:
            raise ValueError("no trained super-network for this topology")
        return validate(self.supernet, self.task, ops)

    def handle(self, request: dict) -> dict:
        rid = request.get("id", -1)
        try:
            cmd = request["cmd"]
            code = request["code"]
            budget = request.get("budget", {})
            iterations = int(budget.get("iterations", 30))
            if cmd == "evaluate_topology":
                score, metrics = self.evaluate_topology(
                    code, request.get("ops"), iterations
                )
            elif cmd == "train_supernet":
                score, metrics = self.train_supernet(code, request.get("paths") or [])
            elif cmd == "evaluate_candidate":
                score, metrics = self.evaluate_candidate(code, request["ops"])
            else:
                raise ValueError(f"unknown command {cmd!r}")
        except Exception as exc:  # noqa: BLE001 - a bad request must not kill the loop
            return {"id": rid, "error": f"{type(exc).__name__}: {exc}"}
        return {"id": rid, "score": score, "metrics": metrics}


def serve(stdin, stdout, server: ToyEvaluatorServer):
    def say(obj):
        stdout.write(json.dumps(obj) + "\n")
        stdout.flush()

    line = stdin.readline()
    if not line:
        return
    try:
        hello = json.loads(line)
    except json.JSONDecodeError:
        say({"id": -1, "error": "malformed handshake"})
        return
    if hello.get("cmd") != "hello" or hello.get("version") != PROTOCOL_VERSION:
        say({"id": -1, "error": f"unsupported handshake {line.strip()!r}"})
        return
    say({"cmd": "hello", "version": PROTOCOL_VERSION})

    for line in stdin:
        if not line.strip():
            continue
        try:
            request = json.loads(line)
        except json.JSONDecodeError:
            say({"id": -1, "error": "malformed request"})
            continue
        say(server.handle(request))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="toy segmentation trainer (wire-protocol evaluator)")
    parser.add_argument("--task", choices=["toy"], default="toy")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--base-filters", type=int, default=8)
    parser.add_argument("--extent", type=int, default=32, help="cubic volume edge length")
    parser.add_argument("--train-cases", type=int, default=8)
    parser.add_argument("--val-cases", type=int, default=2)
    parser.add_argument("--classes", type=int, default=3)
    parser.add_argument("--noise", type=float, default=0.15)
    parser.add_argument("--threads", type=int, default=0, help="torch CPU threads (0 = leave default)")
    args = parser.parse_args(argv)

    if args.threads:
        torch.set_num_threads(args.threads)
    task = ToyTask(
        extent=(args.extent,) * 3,
        num_train=args.train_cases,
        num_val=args.val_cases,
        num_classes=args.classes,
        seed=args.seed,
        noise=args.noise,
    )
    server = ToyEvaluatorServer(task, seed=args.seed, base_filters=args.base_filters)
    print(f"toyseg evaluator ready: {task}", file=sys.stderr)
    serve(sys.stdin, sys.stdout, server)
    return 0


if __name__ == "__main__":
    sys.exit(main())
