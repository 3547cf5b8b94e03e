import json
import threading

import pytest

from c2f import evolution
from c2f.errors import ChildExited, ConfigError
from c2f.evaluation import (
    EvaluationRequest,
    ExternalSession,
    cached,
    CachedEvaluator,
)
from c2f.runner import (
    CACHE_DIR_ENV,
    EvaluatorConfig,
    RunConfig,
    build_evaluator,
    build_population_model,
    coarse_search,
    fine_search,
    read_journal,
    read_ranked,
)

from test_evaluation import CountingEvaluator, mock_cmd


def small_config(**evolution_kwargs) -> RunConfig:
    config = RunConfig()
    defaults = dict(k=8, init_per_cluster=1, budget=20, seed=1)
    defaults.update(evolution_kwargs)
    config.evolution = evolution.EvolutionConfig(**defaults)
    return config


class TestWorkers:
    def test_two_workers_complete_budget(self, tmp_path):
        config = small_config(budget=24)
        config.workers = 2
        coarse_search(config, tmp_path)
        header, events = read_journal(tmp_path / "journal.jsonl")
        completes = [e for e in events if e["event"] == "complete"]
        assert len(completes) == 24
        codes = [tuple(e["code"]) for e in completes]
        assert len(set(codes)) == 24

    def test_multi_worker_journal_replays(self, tmp_path):
        config = small_config(budget=24, seed=3)
        config.workers = 3
        coarse_search(config, tmp_path)
        header, events = read_journal(tmp_path / "journal.jsonl")
        cfg = RunConfig.from_json_dict(header["config"])
        _, model = build_population_model(cfg)
        state = evolution.replay(model, cfg.evolution, events)
        assert len(state.history) == 24
        assert not state.inflight


class TestCacheWiring:
    def test_env_var_enables_cache(self, tmp_path, monkeypatch):
        cache_dir = tmp_path / "cache"
        monkeypatch.setenv(CACHE_DIR_ENV, str(cache_dir))
        config = small_config()
        coarse_search(config, tmp_path / "run")
        files = list(cache_dir.glob("*.jsonl"))
        assert len(files) == 1
        entries = [json.loads(l) for l in files[0].read_text().splitlines()]
        assert len(entries) == 20

    def test_cached_pipeline_matches_uncached(self, tmp_path, monkeypatch):
        config = small_config(seed=6)
        coarse_search(config, tmp_path / "plain")
        monkeypatch.setenv(CACHE_DIR_ENV, str(tmp_path / "cache"))
        coarse_search(config, tmp_path / "cached1")
        coarse_search(config, tmp_path / "cached2")  # fully cache-served
        plain = (tmp_path / "plain" / "journal.jsonl").read_bytes()
        assert plain == (tmp_path / "cached1" / "journal.jsonl").read_bytes()
        assert plain == (tmp_path / "cached2" / "journal.jsonl").read_bytes()

    def test_cached_function_api(self, tmp_path):
        cache = CachedEvaluator(CountingEvaluator(), tmp_path / "c.jsonl")
        req = EvaluationRequest(id=1, command="evaluate_topology", code=(1, 2, 3, 2, 1, 0))
        a = cached(cache, req)
        b = cached(cache, req)
        assert a.score == b.score
        assert cache.inner.calls == 1


class TestExternalWiring:
    def test_missing_command_is_config_error(self):
        config = RunConfig()
        config.evaluator = EvaluatorConfig(kind="external", command="no-such-binary-xyz")
        with pytest.raises(ConfigError):
            build_evaluator(config, [(1, 0)])

    def test_evaluator_death_aborts_with_resumable_journal(self, tmp_path):
        config = small_config(budget=20)
        config.evaluator = EvaluatorConfig(
            kind="external", command=" ".join(mock_cmd("die-after", 7)), timeout=10
        )
        with pytest.raises(ChildExited):
            coarse_search(config, tmp_path)
        header, events = read_journal(tmp_path / "journal.jsonl")
        completes = [e for e in events if e["event"] == "complete"]
        assert len(completes) == 7  # everything finished before the crash is kept

    def test_concurrent_sessions_keep_results_separate(self):
        sessions = [ExternalSession(mock_cmd("distance"), timeout=10) for _ in range(3)]
        results = {}
        errors = []

        def drive(idx, session, code):
            try:
                out = []
                for i in range(5):
                    r = session.request(
                        EvaluationRequest(id=i, command="evaluate_topology", code=code)
                    )
                    out.append(r.score)
                results[idx] = out
            except Exception as exc:  # pragma: no cover - failure path
                errors.append(exc)

        codes = [(1, 0), (1, 1, 0, 0), (1, 2, 1, 0)]
        threads = [
            threading.Thread(target=drive, args=(i, s, c))
            for i, (s, c) in enumerate(zip(sessions, codes))
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        for s in sessions:
            s.close()
        assert not errors
        assert results[0] == [pytest.approx(1 / 2)] * 5
        assert results[1] == [pytest.approx(1 / 3)] * 5
        assert results[2] == [pytest.approx(1 / 5)] * 5


def test_fine_outputs_round_trip(tmp_path):
    config = RunConfig.from_json_dict(
        {
            "fine": {"num_candidates": 12, "supernet_iterations": 4, "seed": 8},
            "evaluator": {"target_code": [1, 2, 2, 1, 0, 0], "seed": 8},
        }
    )
    best_ops, best_score = fine_search((1, 2, 2, 1, 0, 0), config, tmp_path)
    ranked = read_ranked(tmp_path / "ranked.jsonl")
    assert len(ranked) == 12
    assert tuple(ranked[0]["ops"]) == best_ops
    assert ranked[0]["score"] == best_score
    header, events = read_journal(tmp_path / "journal.jsonl")
    paths = [e for e in events if e["event"] == "supernet_path"]
    assert len(paths) == 4


def test_fine_stride_forwarded_to_evaluator():
    config = RunConfig.from_json_dict(
        {
            "fine": {"num_candidates": 2, "supernet_iterations": 1, "seed": 0,
                     "eval_stride": 24},
            "evaluator": {"target_code": [1, 0]},
        }
    )
    evaluator = build_evaluator(config, [(1, 0)], stride=config.fine.eval_stride)
    assert evaluator.budget.stride == 24
