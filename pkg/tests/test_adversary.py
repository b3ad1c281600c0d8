import math

import numpy as np
import pytest

from aaqs.adversary import (AAQSLearner, GlobalGameConfig, ReplayEnvironment, copy_expert,
                            frontier_scan, make_environment, play_global_game, read_transcript)
from aaqs.aggregation import quasi_sum
from aaqs.game import PredictionGame

from conftest import FIXTURES

NATURE_WIN = FIXTURES / "greedy_nature_win.csv"
# c_hat for (log, identity, eta=1) at depth 2, resolution 1000
CORNER = 1.000000000000094


def config(gen="sum", eta=1.0, n=2, T=50, c=CORNER, a=None):
    spec = PredictionGame.build("log", gen, eta, n_experts=n)
    return GlobalGameConfig(spec, T, c, c / eta if a is None else a)


def test_copy_expert_single_round_wins():
    cfg = config(n=1, T=1, c=1.0, a=0.0)
    rep = play_global_game(cfg, make_environment("random"), copy_expert(0), seed=3)
    assert rep.learner_wins and rep.rounds_played == 1
    assert rep.min_slack == pytest.approx(0.0, abs=1e-12)


def test_aggregates_are_quasi_sums():
    cfg = config("square", 0.5, n=3, T=30)
    rep = play_global_game(cfg, make_environment("random"), AAQSLearner(cfg.spec), seed=1,
                           stop_on_violation=False)
    spec = cfg.spec
    learner_losses = [float(spec.loss.matrix(r.decision)[r.outcome]) for r in rep.history]
    assert rep.learner_aggregates[-1] == pytest.approx(quasi_sum(spec.generator, learner_losses), rel=1e-12)
    for i in range(3):
        li = [float(spec.loss.matrix(r.predictions[i])[r.outcome]) for r in rep.history]
        assert rep.expert_aggregates[-1][i] == pytest.approx(quasi_sum(spec.generator, li), rel=1e-12)


@pytest.mark.parametrize("kind", ["random", "greedy"])
def test_games_are_deterministic(kind):
    cfg = config(T=20)
    a = play_global_game(cfg, make_environment(kind), AAQSLearner(cfg.spec), seed=7)
    b = play_global_game(cfg, make_environment(kind), AAQSLearner(cfg.spec), seed=7)
    assert a.to_dict() == b.to_dict()
    assert all(np.array_equal(x.decision, y.decision) and x.outcome == y.outcome
               for x, y in zip(a.history, b.history))


@pytest.mark.parametrize("kind", ["random", "greedy"])
def test_corner_wins_few_seeds(kind):
    cfg = config()
    for seed in range(5):
        rep = play_global_game(cfg, make_environment(kind), AAQSLearner(cfg.spec), seed=seed)
        assert rep.learner_wins, (seed, rep.to_dict())


def test_greedy_beats_reduced_margin():
    cfg = config(c=1.0, a=0.9)
    rep = play_global_game(cfg, make_environment("greedy"), AAQSLearner(cfg.spec), seed=0)
    assert not rep.learner_wins
    assert rep.violation_round == 0
    assert rep.min_slack < -0.05


def test_nature_win_fixture_regenerates(tmp_path):
    cfg = config(c=1.0, a=0.9)
    rep = play_global_game(cfg, make_environment("greedy"), AAQSLearner(cfg.spec), seed=0)
    rep.to_csv(tmp_path / "again.csv")
    assert (tmp_path / "again.csv").read_bytes() == NATURE_WIN.read_bytes()


def test_nature_win_fixture_replays():
    cfg = config(T=1, c=1.0, a=0.9)
    rep = play_global_game(cfg, ReplayEnvironment(NATURE_WIN), AAQSLearner(cfg.spec))
    assert not rep.learner_wins and rep.violation_round == 0
    # the same transcript is harmless once the margin reaches ln n
    ok = play_global_game(cfg.with_constants(CORNER, CORNER), ReplayEnvironment(NATURE_WIN),
                          AAQSLearner(cfg.spec))
    assert ok.learner_wins


def test_read_transcript_shapes():
    preds, outs = read_transcript(NATURE_WIN)
    assert preds.shape == (1, 2, 2)
    assert outs.tolist() == [1]


def test_replay_rejects_short_or_mismatched(tmp_path):
    with pytest.raises(ValueError):
        play_global_game(config(T=5), ReplayEnvironment(NATURE_WIN), AAQSLearner(config().spec))
    with pytest.raises(ValueError):
        play_global_game(config(n=3, T=1), ReplayEnvironment(NATURE_WIN), copy_expert(0))
    bad = tmp_path / "bad.csv"
    bad.write_text("t,outcome,learner_p_0,learner_p_1,learner_aggregate,e0_p_0,e0_p_1,e0_aggregate\n"
                   "0,7,0.5,0.5,1,0.5,0.5,1\n")
    with pytest.raises(ValueError):
        read_transcript(bad)


def test_invalid_decision_forfeits():
    cfg = config(T=5)
    rep = play_global_game(cfg, make_environment("random"), lambda h, p: np.array([0.9, 0.9]))
    assert not rep.learner_wins
    assert rep.forfeit and rep.forfeit.startswith("round 0")
    assert rep.rounds_played == 0


def test_unknown_environment():
    with pytest.raises(KeyError):
        make_environment("oracle")
    with pytest.raises(ValueError):
        make_environment("replay")


def test_frontier_small_scan_monotone():
    cfg = config(T=15)
    scan = frontier_scan(cfg, [1.0, 0.5, CORNER], [0.5, CORNER, 0.0],
                         make_environment("greedy"), lambda: AAQSLearner(cfg.spec), seeds=(0, 1))
    assert scan.c_grid == sorted(scan.c_grid)
    assert scan.monotone
    assert scan.wins[-1, -1]
    assert not scan.wins[0, 0]
    d = scan.to_dict()
    assert d["monotone"] and len(d["wins"]) == 3


def test_config_validation():
    spec = PredictionGame.build("log", "sum", 1.0, n_experts=2)
    with pytest.raises(ValueError):
        GlobalGameConfig(spec, -1, 1.0, 1.0)
    assert config(c=2.0, a=3.0).with_constants(1.0, 1.0).c == 1.0
    assert math.isclose(config().a, CORNER)
