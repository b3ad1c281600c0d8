"""Prediction games: outcome spaces, decision grids, losses and round traces."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .aggregation import Generator, WeightingProfile

LOG_FLOOR = 1e-300


class DecisionError(ValueError):
    """A decision vector is not a probability vector over the outcome space."""


@dataclass(frozen=True)
class OutcomeSpace:
    labels: tuple[str, ...]

    def __post_init__(self):
        labels = tuple(str(x) for x in self.labels)
        object.__setattr__(self, "labels", labels)
        if len(labels) < 2:
            raise ValueError("outcome space needs at least two outcomes")
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate outcome labels in {labels}")

    @classmethod
    def binary(cls) -> "OutcomeSpace":
        return cls(("0", "1"))

    @property
    def m(self) -> int:
        return len(self.labels)

    def index(self, label) -> int:
        return self.labels.index(str(label))


def _compositions(total: int, parts: int, minimum: int) -> np.ndarray:
    """All integer vectors of length ``parts`` with entries >= minimum summing to total."""
    free = total - parts * minimum
    if free < 0:
        return np.zeros((0, parts), dtype=int)
    rows = []
    for bars in itertools.combinations(range(free + parts - 1), parts - 1):
        prev = -1
        row = []
        for b in bars:
            row.append(b - prev - 1 + minimum)
            prev = b
        row.append(free + parts - 1 - prev - 1 + minimum)
        rows.append(row)
    return np.asarray(rows, dtype=int)


@dataclass(frozen=True, eq=False)
class DecisionSpace:
    """A finite grid of probability vectors.

    ``counts`` holds the integer numerators when the grid is a regular simplex
    lattice with step ``1/resolution``; it is used to find adjacent decisions.
    """

    points: np.ndarray = field(repr=False)
    resolution: int | None = None
    counts: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("decision grid must be a nonempty (K, m) array")
        if (pts < 0).any() or (pts > 1).any() or np.abs(pts.sum(axis=1) - 1.0).max() > 1e-12:
            raise DecisionError("every grid point must be a probability vector")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def simplex_grid(cls, m: int, resolution: int, interior: bool = True) -> "DecisionSpace":
        counts = _compositions(resolution, m, 1 if interior else 0)
        if m == 2:
            # (p, 1-p) ordered by increasing p
            counts = counts[np.argsort(counts[:, 0], kind="stable")]
        pts = counts / resolution
        return cls(pts, resolution, counts)

    @classmethod
    def binary_grid(cls, resolution: int = 1000) -> "DecisionSpace":
        return cls.simplex_grid(2, resolution, interior=True)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def m(self) -> int:
        return self.points.shape[1]

    @cached_property
    def adjacent_pairs(self) -> np.ndarray:
        """Index pairs (i, j) of grid neighbours."""
        if self.counts is not None:
            lookup = {tuple(c): i for i, c in enumerate(self.counts.tolist())}
            pairs = []
            m = self.m
            for i, c in enumerate(self.counts.tolist()):
                for a in range(m):
                    for b in range(a + 1, m):
                        d = list(c)
                        d[a] += 1
                        d[b] -= 1
                        j = lookup.get(tuple(d))
                        if j is not None:
                            pairs.append((i, j))
            return np.asarray(pairs, dtype=int).reshape(-1, 2)
        # nearest neighbour in L1 for irregular grids
        pts = self.points
        pairs = []
        for i in range(self.size):
            dist = np.abs(pts - pts[i]).sum(axis=1)
            dist[i] = np.inf
            pairs.append((i, int(np.argmin(dist))))
        return np.asarray(pairs, dtype=int).reshape(-1, 2)

    def subsample(self, k: int) -> np.ndarray:
        """Indices of about ``k`` evenly spread grid points plus each outcome's extreme point."""
        if k >= self.size:
            return np.arange(self.size)
        idx = set(np.unique(np.round(np.linspace(0, self.size - 1, k)).astype(int)).tolist())
        idx.update(int(i) for i in np.argmax(self.points, axis=0))
        return np.asarray(sorted(idx), dtype=int)


def validate_decision(decision, m: int, atol: float = 1e-9) -> np.ndarray:
    vec = np.asarray(decision, dtype=float)
    if vec.shape != (m,):
        raise DecisionError(f"decision must have shape ({m},), got {vec.shape}")
    if np.isnan(vec).any() or (vec < -atol).any() or (vec > 1 + atol).any():
        raise DecisionError(f"decision entries must lie in [0, 1]: {vec}")
    if abs(vec.sum() - 1.0) > atol:
        raise DecisionError(f"decision must sum to 1, sums to {vec.sum()!r}")
    return vec


def _log_matrix(gamma: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        out = -np.log(gamma)
    return np.where(gamma < LOG_FLOOR, np.inf, out)


def _brier_matrix(gamma: np.ndarray) -> np.ndarray:
    # fixed summation order so identical inputs give identical bits in any shape
    m = gamma.shape[-1]
    sq = np.zeros(gamma.shape[:-1])
    for j in range(m):
        sq = sq + gamma[..., j] * gamma[..., j]
    return sq[..., None] - 2.0 * gamma + 1.0


def _abs_matrix(gamma: np.ndarray) -> np.ndarray:
    return 1.0 - gamma


@dataclass(frozen=True)
class LossFunction:
    """A loss ``lambda(outcome, decision)`` with codomain ``[0, inf]``.

    ``matrix`` maps decisions of shape ``(..., m)`` to losses of the same shape,
    entry ``[..., w]`` being the loss of that decision when outcome ``w`` occurs.
    """

    name: str
    matrix_fn: Callable[[np.ndarray], np.ndarray] = field(repr=False)

    def matrix(self, decisions) -> np.ndarray:
        return np.maximum(self.matrix_fn(np.asarray(decisions, dtype=float)), 0.0)

    def evaluate(self, outcome: int, decision) -> float:
        vec = validate_decision(decision, np.shape(decision)[-1])
        return float(self.matrix(vec)[outcome])


LOG = LossFunction("log", _log_matrix)
BRIER = LossFunction("brier", _brier_matrix)
ABSOLUTE = LossFunction("abs", _abs_matrix)
LOSSES = {loss.name: loss for loss in (LOG, BRIER, ABSOLUTE)}


def get_loss(key: str) -> LossFunction:
    try:
        return LOSSES[key]
    except KeyError:
        raise KeyError(f"unknown loss {key!r}; choose from {sorted(LOSSES)}") from None


def compose(loss: LossFunction, gen: Generator) -> LossFunction:
    """The distorted loss ``u o lambda``."""
    return LossFunction(f"{gen.name}({loss.name})", lambda d: gen.u(loss.matrix(d)))


def eval_loss(loss: LossFunction, outcome: int, decision) -> float:
    return loss.evaluate(outcome, decision)


@dataclass(frozen=True, eq=False)
class PredictionGame:
    """A game (outcomes, decisions, loss, profile) with ``n_experts`` experts."""

    outcomes: OutcomeSpace
    decisions: DecisionSpace
    loss: LossFunction
    profile: WeightingProfile
    n_experts: int = 1

    def __post_init__(self):
        if self.n_experts < 1:
            raise ValueError("need at least one expert")
        if self.decisions.m != self.outcomes.m:
            raise ValueError("decision vectors and outcome space disagree in size")

    @classmethod
    def build(cls, loss="log", gen="sum", eta: float = 1.0, n_experts: int = 1,
              outcomes: Sequence[str] | int = 2, resolution: int = 1000) -> "PredictionGame":
        from .aggregation import get_generator

        if isinstance(outcomes, int):
            space = OutcomeSpace(tuple(str(i) for i in range(outcomes)))
        else:
            space = OutcomeSpace(tuple(outcomes))
        loss_fn = get_loss(loss) if isinstance(loss, str) else loss
        g = get_generator(gen) if isinstance(gen, str) else gen
        grid = DecisionSpace.simplex_grid(space.m, resolution, interior=True)
        return cls(space, grid, loss_fn, WeightingProfile(g, eta), n_experts)

    @property
    def generator(self) -> Generator:
        return self.profile.generator

    @property
    def eta(self) -> float:
        return self.profile.eta

    @property
    def m(self) -> int:
        return self.outcomes.m

    def u_losses(self, decisions) -> np.ndarray:
        """``u(lambda(w, gamma))`` for every outcome, shape ``(..., m)``."""
        return self.generator.u(self.loss.matrix(decisions))

    @cached_property
    def grid_u_losses(self) -> np.ndarray:
        out = self.u_losses(self.decisions.points)
        out.setflags(write=False)
        return out

    def with_(self, **changes) -> "PredictionGame":
        from dataclasses import replace

        return replace(self, **changes)

    def composite(self) -> "PredictionGame":
        """The same game under the identity generator with loss ``u o lambda``."""
        from .aggregation import SUM

        return PredictionGame(self.outcomes, self.decisions, compose(self.loss, self.generator),
                              WeightingProfile(SUM, self.eta), self.n_experts)


@dataclass
class RegularityReport:
    compact: bool
    continuous: bool
    finite_decision_exists: bool
    every_decision_loses: bool
    finite_witness: int | None
    zero_loss_decisions: list[int]

    @property
    def regular(self) -> bool:
        return self.compact and self.continuous and self.finite_decision_exists and self.every_decision_loses


def check_regular_local_game(spec: PredictionGame) -> RegularityReport:
    """Check conditions (c) and (d) of a regular local game on the decision grid.

    Compactness and continuity hold by construction for a finite grid.
    """
    lam = spec.loss.matrix(spec.decisions.points)
    finite_rows = np.flatnonzero(np.isfinite(lam).all(axis=1))
    zero_rows = np.flatnonzero((lam == 0).all(axis=1))
    return RegularityReport(
        compact=True,
        continuous=True,
        finite_decision_exists=finite_rows.size > 0,
        every_decision_loses=zero_rows.size == 0,
        finite_witness=int(finite_rows[0]) if finite_rows.size else None,
        zero_loss_decisions=zero_rows.tolist(),
    )


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


@dataclass
class GameTrace:
    """Per-round record of a game.

    Arrays: ``expert_predictions (T, n, m)``, ``decisions (T, m)``,
    ``outcomes (T,)`` as outcome indices, ``expert_losses (T, n)``,
    ``learner_losses (T,)``, ``psi (T, m)``.  ``psi_u`` (the u-images of the
    pseudo-predictions) and ``weights`` (normalized weights after each update)
    are kept when the trace comes from the engine and dropped by the CSV format.
    """

    labels: tuple[str, ...]
    expert_predictions: np.ndarray
    decisions: np.ndarray
    outcomes: np.ndarray
    expert_losses: np.ndarray
    learner_losses: np.ndarray
    psi: np.ndarray
    psi_u: np.ndarray | None = None
    weights: np.ndarray | None = None

    @classmethod
    def empty(cls, labels: Sequence[str], n: int) -> "GameTrace":
        m = len(labels)
        return cls(tuple(labels), np.zeros((0, n, m)), np.zeros((0, m)), np.zeros(0, dtype=int),
                   np.zeros((0, n)), np.zeros(0), np.zeros((0, m)), np.zeros((0, m)), np.zeros((0, n)))

    @property
    def T(self) -> int:
        return int(self.outcomes.shape[0])

    @property
    def n(self) -> int:
        return int(self.expert_losses.shape[1])

    @property
    def m(self) -> int:
        return len(self.labels)

    @property
    def psi_at_outcome(self) -> np.ndarray:
        return self.psi[np.arange(self.T), self.outcomes]

    def replay(self, loss: LossFunction) -> bool:
        """True when recomputing every stored loss reproduces it bit for bit."""
        idx = np.arange(self.T)
        lam_e = loss.matrix(self.expert_predictions)[idx, :, self.outcomes]
        lam_l = loss.matrix(self.decisions)[idx, self.outcomes]
        return bool(np.array_equal(lam_e, self.expert_losses) and np.array_equal(lam_l, self.learner_losses))

    def header(self) -> list[str]:
        cols = ["t", "outcome", "learner_loss"]
        cols += [f"psi_{lab}" for lab in self.labels]
        cols += [f"learner_p_{lab}" for lab in self.labels]
        for i in range(self.n):
            cols.append(f"e{i}_loss")
            cols += [f"e{i}_p_{lab}" for lab in self.labels]
        return cols

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header())
            for t in range(self.T):
                row = [str(t), self.labels[self.outcomes[t]], _fmt(self.learner_losses[t])]
                row += [_fmt(v) for v in self.psi[t]]
                row += [_fmt(v) for v in self.decisions[t]]
                for i in range(self.n):
                    row.append(_fmt(self.expert_losses[t, i]))
                    row += [_fmt(v) for v in self.expert_predictions[t, i]]
                w.writerow(row)

    @classmethod
    def from_csv(cls, path) -> "GameTrace":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValueError(f"{path}: empty trace file")
        head = rows[0]
        if head[:3] != ["t", "outcome", "learner_loss"]:
            raise ValueError(f"{path}: not a trace file (header {head[:3]})")
        labels = tuple(c[4:] for c in head if c.startswith("psi_"))
        m = len(labels)
        n = sum(1 for c in head if c.endswith("_loss") and c.startswith("e"))
        if len(head) != 3 + 2 * m + n * (1 + m):
            raise ValueError(f"{path}: inconsistent trace header")
        T = len(rows) - 1
        data = np.zeros((T, len(head) - 2))
        outcomes = np.zeros(T, dtype=int)
        for t, row in enumerate(rows[1:]):
            if len(row) != len(head):
                raise ValueError(f"{path}: line {t + 2} has {len(row)} fields, expected {len(head)}")
            outcomes[t] = labels.index(row[1])
            data[t] = [float(v) for v in row[2:]]
        learner = data[:, 0]
        psi = data[:, 1:1 + m]
        dec = data[:, 1 + m:1 + 2 * m]
        rest = data[:, 1 + 2 * m:].reshape(T, n, 1 + m)
        return cls(labels, rest[:, :, 1:].copy(), dec.copy(), outcomes, rest[:, :, 0].copy(),
                   learner.copy(), psi.copy())

    def transformed(self, gen: Generator) -> "GameTrace":
        """The trace of the same play scored by ``u o lambda``."""
        return GameTrace(self.labels, self.expert_predictions, self.decisions, self.outcomes,
                         gen.u(self.expert_losses), gen.u(self.learner_losses),
                         gen.u(self.psi) if self.psi_u is None else self.psi_u,
                         None, self.weights)


def write_csv_rows(path, rows: Sequence[Sequence]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
