import numpy as np
import pytest

from toyseg.server import ToyEvaluatorServer
from toyseg.task import ToyTask
from toyseg.trainer import dice_from_masks

SMALL = ToyTask(extent=(16, 16, 16), seed=2)


def make_server(seed=2):
    return ToyEvaluatorServer(SMALL, seed=seed, base_filters=4)


def assert_result_shape(reply):
    assert set(reply) == {"id", "score", "metrics"}
    assert isinstance(reply["id"], int)
    assert 0.0 <= reply["score"] <= 1.0
    assert all(
        isinstance(k, str) and isinstance(v, (int, float))
        for k, v in reply["metrics"].items()
    )


def test_evaluate_topology_reply_range():
    reply = make_server().handle(
        {
            "id": 1,
            "cmd": "evaluate_topology",
            "code": [1, 0],
            "budget": {"iterations": 4, "stride": 48},
        }
    )
    assert_result_shape(reply)


def test_identical_requests_identical_scores():
    request = {
        "id": 7,
        "cmd": "evaluate_topology",
        "code": [1, 0],
        "budget": {"iterations": 6, "stride": 48},
    }
    a = make_server().handle(dict(request))
    b = make_server().handle(dict(request))
    assert a == b


def test_candidate_without_supernet_is_error():
    reply = make_server().handle(
        {"id": 3, "cmd": "evaluate_candidate", "code": [1, 0], "ops": ["3d", "3d"]}
    )
    assert reply["id"] == 3
    assert "error" in reply


def test_unknown_command_is_error_not_crash():
    server = make_server()
    bad = server.handle({"id": 4, "cmd": "destroy", "code": [1, 0]})
    assert "error" in bad and bad["id"] == 4
    good = server.handle(
        {
            "id": 5,
            "cmd": "evaluate_topology",
            "code": [1, 0],
            "budget": {"iterations": 2, "stride": 48},
        }
    )
    assert_result_shape(good)


def test_indivisible_extent_is_error():
    server = make_server()
    reply = server.handle(
        {"id": 6, "cmd": "evaluate_topology", "code": [1, 2, 1, 0]}  # needs 8 | 16 ok
    )
    assert_result_shape(reply)
    reply = server.handle(
        {"id": 7, "cmd": "evaluate_topology", "code": [1, 2, 3, 2, 1, 0]}  # needs 16
    )
    # 16^3 volume cannot host a depth-4 stride chain with a clean round trip
    assert "error" in reply


def test_supernet_then_candidates():
    server = make_server()
    paths = [["3d", "2d"], ["p3d", "3d"], ["2d", "2d"], ["3d", "3d"]] * 3
    trained = server.handle(
        {"id": 8, "cmd": "train_supernet", "code": [1, 0], "paths": paths}
    )
    assert_result_shape(trained)
    candidate = server.handle(
        {"id": 9, "cmd": "evaluate_candidate", "code": [1, 0], "ops": ["p3d", "2d"]}
    )
    assert_result_shape(candidate)


def test_trained_supernet_beats_untrained_baseline():
    task = ToyTask(seed=3)
    server = ToyEvaluatorServer(task, seed=3, base_filters=8)
    untrained = server.handle(
        {
            "id": 1,
            "cmd": "evaluate_topology",
            "code": [1, 2, 2, 1, 0, 0],
            "budget": {"iterations": 0, "stride": 48},
        }
    )
    import random

    rng = random.Random(0)
    paths = [
        [rng.choice(["3d", "p3d", "2d"]) for _ in range(6)] for _ in range(40)
    ]
    server.handle(
        {"id": 2, "cmd": "train_supernet", "code": [1, 2, 2, 1, 0, 0], "paths": paths}
    )
    candidate = server.handle(
        {
            "id": 3,
            "cmd": "evaluate_candidate",
            "code": [1, 2, 2, 1, 0, 0],
            "ops": ["3d"] * 6,
        }
    )
    assert candidate["score"] > untrained["score"]


class TestDiceAgreementWithEngine:
    def test_matches_primary_dice_on_shared_fixtures(self):
        c2f_eval = pytest.importorskip("c2f.evaluation")
        rng = np.random.default_rng(123)
        for _ in range(200):
            a = rng.random((6, 6, 6)) < rng.random()
            b = rng.random((6, 6, 6)) < rng.random()
            assert abs(dice_from_masks(a, b) - c2f_eval.dice_score(a, b)) <= 1e-9
        empty = np.zeros((3, 3, 3), dtype=bool)
        assert dice_from_masks(empty, empty) == c2f_eval.dice_score(empty, empty) == 1.0
