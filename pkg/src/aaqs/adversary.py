"""Global prediction game: an environment against a learner, probing the (c, a) frontier.

The learner wins a game if at every round ``t`` and for every expert ``theta``

    u(A_t(learner)) <= c * u(A_t(theta)) + a * ln(n),

where ``A_t`` is the quasi-sum of the first ``t`` losses.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .aggregation import quasi_sum_fold
from .engine import ExpertState, _u_psi
from .game import DecisionError, PredictionGame, _fmt, validate_decision
from .substitution import SubstitutionRule, default_rule, substitute_many

WIN_TOLERANCE = 1e-9
MAX_GREEDY_CANDIDATES = 20_000


@dataclass(frozen=True)
class GlobalGameConfig:
    spec: PredictionGame
    horizon: int
    c: float
    a: float

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if not (math.isfinite(self.c) and math.isfinite(self.a)):
            raise ValueError("c and a must be finite")

    @property
    def gen(self):
        return self.spec.generator

    @property
    def n(self) -> int:
        return self.spec.n_experts

    def with_constants(self, c: float, a: float) -> "GlobalGameConfig":
        return GlobalGameConfig(self.spec, self.horizon, c, a)


@dataclass
class Round:
    predictions: np.ndarray  # (n, m)
    decision: np.ndarray     # (m,)
    outcome: int


# -- learners ---------------------------------------------------------------

class AAQSLearner:
    """The aggregating algorithm for quasi-sums as a round strategy.

    Calling it with ``(history, predictions)`` returns a decision.  State is
    rebuilt incrementally from ``history``, so a learner can be reused across
    games as long as each game starts from an empty history.
    """

    def __init__(self, spec: PredictionGame, rule: SubstitutionRule | None = None):
        self.spec = spec
        self.rule = rule if rule is not None else default_rule(spec)
        self.rule.validate(spec)
        self._state = ExpertState.uniform(spec.n_experts)
        self._seen = 0

    def _sync(self, history: Sequence[Round]) -> ExpertState:
        if len(history) < self._seen:
            self._state = ExpertState.uniform(self.spec.n_experts)
            self._seen = 0
        for rnd in history[self._seen:]:
            ul = self.spec.u_losses(rnd.predictions)[:, rnd.outcome]
            logw = self._state.log_weights - self.spec.eta * ul
            top = np.max(logw)
            if np.isfinite(top):
                logw = logw - top
            self._state = ExpertState(logw, self._state.prior, self._state.round + 1)
        self._seen = len(history)
        return self._state

    def decide_batch(self, history: Sequence[Round], predictions: np.ndarray) -> np.ndarray:
        """Decisions for a batch of candidate predictions of shape ``(K, n, m)``."""
        state = self._sync(history)
        ul = self.spec.u_losses(np.asarray(predictions, dtype=float))
        up = _u_psi(np.broadcast_to(state.log_weights, ul.shape[:-1]), ul, self.spec.eta)
        return substitute_many(self.rule, up, self.spec)

    def __call__(self, history: Sequence[Round], predictions) -> np.ndarray:
        return self.decide_batch(history, np.asarray(predictions, dtype=float)[None])[0]


def copy_expert(index: int = 0) -> Callable:
    """A learner that always follows one expert."""
    def learner(history, predictions):
        return np.array(predictions[index], dtype=float)
    return learner


def _decide_many(learner, history, batch: np.ndarray) -> np.ndarray:
    if hasattr(learner, "decide_batch"):
        return learner.decide_batch(history, batch)
    return np.stack([np.asarray(learner(history, p), dtype=float) for p in batch])


# -- environments -------------------------------------------------------------

class Environment:
    """Chooses expert predictions, then the outcome after seeing the decision."""

    kind = "abstract"

    def start(self, config: GlobalGameConfig, seed: int) -> None:
        self.config = config
        self.rng = np.random.default_rng(seed)

    def predictions(self, t: int, history, learner) -> np.ndarray:
        raise NotImplementedError

    def outcome(self, t: int, history, predictions, decision) -> int:
        raise NotImplementedError


def coarse_points(spec: PredictionGame, k: int) -> np.ndarray:
    return spec.decisions.points[spec.decisions.subsample(k)]


class RandomEnvironment(Environment):
    kind = "random"

    def __init__(self, points_per_expert: int = 21):
        self.k = points_per_expert

    def start(self, config, seed):
        super().start(config, seed)
        self.points = coarse_points(config.spec, self.k)

    def predictions(self, t, history, learner):
        idx = self.rng.integers(0, len(self.points), size=self.config.n)
        return self.points[idx]

    def outcome(self, t, history, predictions, decision):
        return int(self.rng.integers(0, self.config.spec.m))


class GreedyEnvironment(Environment):
    """Depth-one lookahead: pick the move that minimizes the learner's worst slack.

    Candidate moves are all combinations of ``points_per_expert`` coarse grid
    points per expert (randomly sampled when there are more than
    ``MAX_GREEDY_CANDIDATES``) together with every outcome.  Near-ties are
    broken with the seeded generator.
    """

    kind = "greedy"

    def __init__(self, points_per_expert: int = 21):
        self.k = points_per_expert

    def start(self, config, seed):
        super().start(config, seed)
        spec = config.spec
        pts = coarse_points(spec, self.k)
        total = len(pts) ** config.n
        if total <= MAX_GREEDY_CANDIDATES:
            combos = np.array(list(product(range(len(pts)), repeat=config.n)), dtype=int)
        else:
            combos = self.rng.integers(0, len(pts), size=(MAX_GREEDY_CANDIDATES, config.n))
        self.candidates = pts[combos]                      # (K, n, m)
        self.cand_u = spec.u_losses(self.candidates)       # (K, n, m)
        self.u_learner = 0.0
        self.u_experts = np.zeros(config.n)

    def _worst(self, u_dec: np.ndarray, u_exp: np.ndarray) -> np.ndarray:
        cfg = self.config
        with np.errstate(invalid="ignore"):
            rhs = cfg.c * (self.u_experts + u_exp) + cfg.a * math.log(cfg.n)
            s = rhs - (self.u_learner + u_dec[..., None])
        s = np.where(np.isnan(s), np.inf, s)
        return s.min(axis=-1)

    def _pick(self, scores: np.ndarray) -> int:
        best = scores.min()
        ties = np.flatnonzero(scores <= best + 1e-12 * max(1.0, abs(best)))
        return int(ties[self.rng.integers(0, len(ties))]) if len(ties) > 1 else int(ties[0])

    def _sync(self, history):
        # aggregates in the u-domain, recomputed from the history
        spec = self.config.spec
        if not history:
            self.u_learner, self.u_experts = 0.0, np.zeros(self.config.n)
            return
        last = history[-1]
        self.u_learner += float(spec.u_losses(last.decision)[last.outcome])
        self.u_experts = self.u_experts + spec.u_losses(last.predictions)[:, last.outcome]

    def predictions(self, t, history, learner):
        self._sync(history)
        spec = self.config.spec
        decisions = _decide_many(learner, history, self.candidates)
        u_dec = spec.u_losses(decisions)                   # (K, m)
        worst = self._worst(u_dec, np.swapaxes(self.cand_u, 1, 2))  # (K, m)
        return self.candidates[self._pick(worst.min(axis=1))].copy()

    def outcome(self, t, history, predictions, decision):
        spec = self.config.spec
        u_dec = spec.u_losses(decision)                    # (m,)
        u_exp = spec.u_losses(predictions).T               # (m, n)
        return self._pick(self._worst(u_dec, u_exp))


class ReplayEnvironment(Environment):
    """Replays expert predictions and outcomes from a transcript CSV."""

    kind = "replay"

    def __init__(self, path):
        self.path = Path(path)
        self.preds, self.outcomes = read_transcript(self.path)

    def start(self, config, seed):
        super().start(config, seed)
        if self.preds.shape[1:] != (config.n, config.spec.m):
            raise ValueError("transcript does not match the game dimensions")
        if len(self.outcomes) < config.horizon:
            raise ValueError(f"transcript has {len(self.outcomes)} rounds, need {config.horizon}")

    def predictions(self, t, history, learner):
        return self.preds[t].copy()

    def outcome(self, t, history, predictions, decision):
        return int(self.outcomes[t])


def make_environment(kind: str, path=None, points_per_expert: int = 21) -> Environment:
    if kind == "random":
        return RandomEnvironment(points_per_expert)
    if kind == "greedy":
        return GreedyEnvironment(points_per_expert)
    if kind == "replay":
        if path is None:
            raise ValueError("replay environment needs a transcript path")
        return ReplayEnvironment(path)
    raise KeyError(f"unknown environment {kind!r}")


# -- the game -----------------------------------------------------------------

@dataclass
class GlobalGameReport:
    learner_wins: bool
    rounds_played: int
    violation_round: int | None
    violation_expert: int | None
    min_slack: float
    forfeit: str | None
    config: GlobalGameConfig = field(repr=False)
    history: list[Round] = field(default_factory=list, repr=False)
    learner_aggregates: list[float] = field(default_factory=list, repr=False)
    expert_aggregates: list[np.ndarray] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "learner_wins": self.learner_wins,
            "rounds_played": self.rounds_played,
            "violation_round": self.violation_round,
            "violation_expert": self.violation_expert,
            "min_slack": self.min_slack,
            "forfeit": self.forfeit,
            "c": self.config.c,
            "a": self.config.a,
        }

    def to_csv(self, path) -> None:
        m, n = self.config.spec.m, self.config.n
        labels = self.config.spec.outcomes.labels
        header = ["t", "outcome"] + [f"learner_p_{lab}" for lab in labels] + ["learner_aggregate"]
        for i in range(n):
            header += [f"e{i}_p_{lab}" for lab in labels] + [f"e{i}_aggregate"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for t, rnd in enumerate(self.history):
                row = [str(t), labels[rnd.outcome]] + [_fmt(x) for x in rnd.decision]
                row.append(_fmt(self.learner_aggregates[t]))
                for i in range(n):
                    row += [_fmt(x) for x in rnd.predictions[i]]
                    row.append(_fmt(self.expert_aggregates[t][i]))
                w.writerow(row)


def read_transcript(path) -> tuple[np.ndarray, np.ndarray]:
    """Expert predictions ``(T, n, m)`` and outcome indices from a transcript CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty transcript")
    header = rows[0]
    learner_cols = [h for h in header if h.startswith("learner_p_")]
    labels = [h[len("learner_p_"):] for h in learner_cols]
    n = sum(1 for h in header if h.endswith("_aggregate")) - 1
    col = {h: k for k, h in enumerate(header)}
    preds, outs = [], []
    for line, row in enumerate(rows[1:], start=2):
        try:
            outs.append(labels.index(row[col["outcome"]]))
            preds.append([[float(row[col[f"e{i}_p_{lab}"]]) for lab in labels] for i in range(n)])
        except (ValueError, KeyError, IndexError) as exc:
            raise ValueError(f"{path}:{line}: malformed transcript row ({exc})") from None
    m = len(labels)
    return np.asarray(preds, dtype=float).reshape(-1, n, m), np.asarray(outs, dtype=int)


def play_global_game(config: GlobalGameConfig, env: Environment, learner, seed: int = 0,
                     stop_on_violation: bool = True) -> GlobalGameReport:
    """Play ``config.horizon`` rounds and report the first violation, if any."""
    spec, gen = config.spec, config.gen
    env.start(config, seed)
    history: list[Round] = []
    agg_l = 0.0
    agg_e = np.zeros(config.n)
    l_aggs, e_aggs = [], []
    min_slack = math.inf
    viol_t = viol_e = None
    forfeit = None
    log_n = math.log(config.n)
    for t in range(config.horizon):
        preds = np.asarray(env.predictions(t, history, learner), dtype=float)
        try:
            decision = validate_decision(learner(history, preds), spec.m)
        except (DecisionError, ValueError, TypeError) as exc:
            forfeit = f"round {t}: invalid decision ({exc})"
            viol_t = t
            break
        outcome = env.outcome(t, history, preds, decision)
        history.append(Round(preds, decision, outcome))
        agg_l = quasi_sum_fold(gen, agg_l, float(spec.loss.matrix(decision)[outcome]))
        exp_losses = spec.loss.matrix(preds)[:, outcome]
        agg_e = np.array([quasi_sum_fold(gen, agg_e[i], float(exp_losses[i])) for i in range(config.n)])
        l_aggs.append(agg_l)
        e_aggs.append(agg_e.copy())
        with np.errstate(invalid="ignore"):
            rhs = config.c * gen.u(agg_e) + config.a * log_n
            slack = rhs - gen.u(agg_l)
        slack = np.where(np.isnan(slack), np.inf, slack)
        tol = WIN_TOLERANCE * np.maximum(1.0, np.where(np.isfinite(rhs), np.abs(rhs), 1.0))
        min_slack = min(min_slack, float(slack.min()))
        bad = np.flatnonzero(slack < -tol)
        if bad.size and viol_t is None:
            viol_t, viol_e = t, int(bad[0])
            if stop_on_violation:
                break
    wins = viol_t is None and forfeit is None
    return GlobalGameReport(wins, len(history), viol_t, viol_e, min_slack, forfeit, config,
                            history, l_aggs, e_aggs)


@dataclass
class FrontierScan:
    c_grid: list[float]
    a_grid: list[float]
    wins: np.ndarray  # (len(c_grid), len(a_grid)) booleans

    @property
    def monotone(self) -> bool:
        w = self.wins.astype(int)
        return bool((np.diff(w, axis=0) >= 0).all() and (np.diff(w, axis=1) >= 0).all())

    def to_dict(self) -> dict:
        return {"c_grid": self.c_grid, "a_grid": self.a_grid,
                "wins": self.wins.astype(int).tolist(), "monotone": self.monotone}


def frontier_scan(config_base: GlobalGameConfig, c_grid, a_grid, env: Environment,
                  learner_factory: Callable[[], object], seeds: Sequence[int] = (0,)) -> FrontierScan:
    """Win matrix over ``c_grid x a_grid``; a cell wins only if every seed is won.

    ``learner_factory`` builds a fresh learner per game.  Grids are sorted
    ascending so monotonicity reads along rows and columns.
    """
    cs, as_ = sorted(float(c) for c in c_grid), sorted(float(a) for a in a_grid)
    wins = np.zeros((len(cs), len(as_)), dtype=bool)
    for i, c in enumerate(cs):
        for j, a in enumerate(as_):
            cfg = config_base.with_constants(c, a)
            wins[i, j] = all(play_global_game(cfg, env, learner_factory(), seed=s).learner_wins
                             for s in seeds)
    return FrontierScan(cs, as_, wins)
