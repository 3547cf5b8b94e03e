#!/usr/bin/env python3
"""End-to-end demo on the deterministic surrogate: coarse -> fine -> export.

Runs the full two-stage search against a planted optimum, then materializes
and costs the winning architecture. Everything lands in --out.
"""

import argparse
import json
from pathlib import Path

from c2f.arch import count_flops, count_params, ir_to_dot, ir_to_json_dict, materialize
from c2f.runner import EvaluatorConfig, RunConfig, coarse_search, fine_search
from c2f import evolution, fine


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--budget", type=int, default=50)
    parser.add_argument("--candidates", type=int, default=2000)
    parser.add_argument("--out", default="runs/demo")
    args = parser.parse_args()

    out = Path(args.out)
    config = RunConfig()
    config.evolution = evolution.EvolutionConfig(budget=args.budget, seed=args.seed)
    config.fine = fine.FineSearchConfig(
        num_candidates=args.candidates, supernet_iterations=50, seed=args.seed
    )
    config.evaluator = EvaluatorConfig(seed=args.seed)

    best_code, coarse_score = coarse_search(config, out / "coarse")
    print(f"coarse best: {list(best_code)}  score={coarse_score:.4f}")

    best_ops, fine_score = fine_search(best_code, config, out / "fine")
    print(f"fine best:   {list(best_ops)}  score={fine_score:.4f}")

    ir = materialize(best_code, best_ops)
    (out / "architecture.json").write_text(
        json.dumps(ir_to_json_dict(ir), indent=2, sort_keys=True) + "\n"
    )
    (out / "architecture.dot").write_text(ir_to_dot(ir))
    print(f"params: {count_params(ir):,}")
    print(f"flops @ 96^3: {count_flops(ir, (96, 96, 96)):,}")
    print(f"artifacts in {out}")


if __name__ == "__main__":
    main()
