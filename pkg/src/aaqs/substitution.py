"""Substitution functions and the mixability constant.

The minimax rule picks the decision minimising ``max_w u(lambda(w, g)) / u(psi(w))``
over the decision grid and can then refine it off-grid by a shrinking local
search on the simplex.  ``estimate_c`` takes the worst case of that minimax
value over pseudo-predictions generated by finite mixtures of grid decisions,
which gives a lower estimate of ``c(eta)``.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .engine import PseudoPrediction
from .game import DecisionSpace, PredictionGame, _compositions

log = logging.getLogger(__name__)

CHUNK_ELEMENTS = 2_000_000


class SubstitutionError(RuntimeError):
    """No decision dominates the pseudo-prediction with a finite ratio."""

    def __init__(self, message: str, round_index: int | None = None):
        super().__init__(message)
        self.round_index = round_index


@dataclass(frozen=True)
class SubstitutionRule:
    """``kind`` is ``"logloss_exact"`` or ``"minimax_grid"``.

    ``search_space`` defaults to the game's decision grid.  With ``refine`` the
    minimax decision is polished off-grid; refinement never increases the
    minimax ratio.
    """

    kind: str = "minimax_grid"
    search_space: DecisionSpace | None = None
    refine: bool = True

    def __post_init__(self):
        if self.kind not in ("logloss_exact", "minimax_grid"):
            raise ValueError(f"unknown substitution kind {self.kind!r}")

    def validate(self, spec: PredictionGame) -> None:
        if self.kind == "logloss_exact":
            if spec.loss.name != "log" or not spec.generator.is_identity or spec.eta > 1.0:
                raise ValueError("logloss_exact needs log-loss, the identity generator and eta <= 1")


def default_rule(spec: PredictionGame) -> SubstitutionRule:
    if spec.loss.name == "log" and spec.generator.is_identity and spec.eta <= 1.0:
        return SubstitutionRule("logloss_exact")
    return SubstitutionRule("minimax_grid")


def ratios(u_loss: np.ndarray, u_psi: np.ndarray) -> np.ndarray:
    """``u_loss / u_psi`` with 0/0 -> 0, x/0 -> inf and anything/inf -> 0."""
    # the division yields NaN exactly for 0/0 and inf/inf, both of which map to 0
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.asarray(np.divide(u_loss, u_psi))
    if r.ndim == 0:
        return np.where(np.isnan(r), 0.0, r)
    r[np.isnan(r)] = 0.0
    return r


def minimax_on_grid(grid_u_loss: np.ndarray, u_psi: np.ndarray):
    """Grid argmin of the worst-case ratio for each row of ``u_psi``.

    Returns ``(indices, values)``; ties go to the lowest grid index.
    """
    u_psi = np.atleast_2d(u_psi)
    B = u_psi.shape[0]
    K, m = grid_u_loss.shape
    idx = np.empty(B, dtype=int)
    val = np.empty(B)
    step = max(1, CHUNK_ELEMENTS // (K * m))
    cols = [np.ascontiguousarray(grid_u_loss[:, w]) for w in range(m)]
    for s in range(0, B, step):
        blk = u_psi[s:s + step]
        r = ratios(cols[0][None, :], blk[:, 0:1])
        for w in range(1, m):
            np.maximum(r, ratios(cols[w][None, :], blk[:, w:w + 1]), out=r)
        idx[s:s + step] = np.argmin(r, axis=1)
        val[s:s + step] = r[np.arange(r.shape[0]), idx[s:s + step]]
    return idx, val


def _lexmin(scores: np.ndarray) -> np.ndarray:
    """Index of the lexicographically smallest row of ``scores[b]`` (shape (B, M, m))."""
    alive = np.ones(scores.shape[:2], dtype=bool)
    for k in range(scores.shape[2]):
        col = np.where(alive, scores[:, :, k], np.inf)
        best = col.min(axis=1, keepdims=True)
        alive &= col == best
    return np.argmax(alive, axis=1)


def _lex_less(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise ``a < b`` in lexicographic order; rows are sorted descending ratio vectors."""
    neq = a != b
    first = np.argmax(neq, axis=1)
    rows = np.arange(a.shape[0])
    return neq.any(axis=1) & (a[rows, first] < b[rows, first])


def refine(spec: PredictionGame, start: np.ndarray, u_psi: np.ndarray,
           initial_step: float, min_step: float = 1e-15, max_moves: int = 8,
           stop_below: float = -np.inf) -> np.ndarray:
    """Local search on the simplex lowering the sorted ratio vector lexicographically.

    Moves transfer mass ``h`` between two coordinates; ``h`` halves from
    ``initial_step`` down to ``min_step``.  Rows whose worst ratio drops to
    ``stop_below`` or less are left alone from then on.
    """
    cur = np.array(start, dtype=float)
    B, m = cur.shape
    dirs = np.array([np.eye(m)[i] - np.eye(m)[j] for i, j in itertools.permutations(range(m), 2)])

    cur_s = -np.sort(-ratios(spec.u_losses(cur), u_psi), axis=-1)
    active = cur_s[:, 0] > stop_below
    h = initial_step
    while h >= min_step and active.any():
        level = active.copy()
        for _ in range(max_moves):
            rows = np.flatnonzero(level)
            if rows.size == 0:
                break
            cand = cur[rows, None, :] + h * dirs[None, :, :]
            ok = (cand >= 0).all(axis=2)
            cand = np.clip(cand, 0.0, 1.0)
            sub_psi = u_psi[rows]
            r = ratios(spec.u_losses(cand), sub_psi[:, None, :])
            s = -np.sort(-r, axis=-1)
            s = np.where(ok[:, :, None], s, np.inf)
            best = _lexmin(s)
            best_s = s[np.arange(rows.size), best]
            better = _lex_less(best_s, cur_s[rows])
            if not better.any():
                break
            upd = rows[better]
            cur[upd] = cand[better, best[better]]
            cur_s[upd] = best_s[better]
            level[rows] = better
            active[upd] = cur_s[upd, 0] > stop_below
            level &= active
        h *= 0.5
    return cur


def _grid_step(space: DecisionSpace) -> float:
    if space.resolution:
        return 1.0 / space.resolution
    pairs = space.adjacent_pairs
    return float(np.abs(space.points[pairs[:, 0]] - space.points[pairs[:, 1]]).max())


def substitute_many(rule: SubstitutionRule, u_psi: np.ndarray, spec: PredictionGame) -> np.ndarray:
    """Decisions for each row of ``u_psi`` (u-images of pseudo-predictions)."""
    rule.validate(spec)
    u_psi = np.atleast_2d(np.asarray(u_psi, dtype=float))
    if np.isinf(u_psi).all(axis=1).any():
        bad = int(np.argmax(np.isinf(u_psi).all(axis=1)))
        raise SubstitutionError("pseudo-prediction is infinite everywhere", bad)
    if rule.kind == "logloss_exact":
        gamma = np.exp(-u_psi)
        s = gamma.sum(axis=1, keepdims=True)
        off = np.abs(s - 1.0) > 1e-12
        return np.where(off, gamma / s, gamma)
    space = rule.search_space or spec.decisions
    if space.size == 0:
        raise SubstitutionError("empty search grid")
    grid_u = spec.grid_u_losses if space is spec.decisions else spec.u_losses(space.points)
    idx, val = minimax_on_grid(grid_u, u_psi)
    if np.isinf(val).any():
        bad = int(np.argmax(np.isinf(val)))
        raise SubstitutionError("no grid decision has a finite ratio", bad)
    dec = space.points[idx].copy()
    if rule.refine:
        dec = refine(spec, dec, u_psi, _grid_step(space))
    return dec


def substitute(rule: SubstitutionRule, psi: PseudoPrediction, spec: PredictionGame) -> np.ndarray:
    return substitute_many(rule, psi.u_values[None, :], spec)[0]


def minimax_ratio(spec: PredictionGame, decision, u_psi) -> float:
    r = ratios(spec.u_losses(np.asarray(decision, dtype=float)), np.asarray(u_psi, dtype=float))
    return float(np.max(r))


def grid_error(spec: PredictionGame, space: DecisionSpace | None = None) -> float:
    """Largest change of ``u o lambda`` between adjacent grid decisions (finite entries only)."""
    space = space or spec.decisions
    grid_u = spec.grid_u_losses if space is spec.decisions else spec.u_losses(space.points)
    pairs = space.adjacent_pairs
    if pairs.size == 0:
        return 0.0
    a, b = grid_u[pairs[:, 0]], grid_u[pairs[:, 1]]
    fin = np.isfinite(a) & np.isfinite(b)
    diff = np.abs(np.where(fin, a - b, 0.0))
    return float(diff.max())


@dataclass
class MixabilityEstimate:
    c_hat: float
    eta: float
    grid_spec: dict
    tolerance: float
    grid_error: float
    witness: dict = field(default_factory=dict)
    n_candidates: int = 0

    def to_dict(self) -> dict:
        return {
            "c_hat": self.c_hat,
            "eta": self.eta,
            "grid": self.grid_spec,
            "tolerance": self.tolerance,
            "grid_error": self.grid_error,
            "n_candidates": self.n_candidates,
            "witness": self.witness,
        }


def _mixture_candidates(n_comp: int, depth: int, weight_steps: int):
    """Yield (component index tuples (P, d), weights (W, d)) for mixtures of exactly d components."""
    for d in range(1, depth + 1):
        if d > n_comp:
            break
        combos = np.asarray(list(itertools.combinations(range(n_comp), d)), dtype=int)
        weights = _compositions(weight_steps, d, 1) / weight_steps
        yield combos, weights


def estimate_c(spec: PredictionGame, psi_enumeration_depth: int = 2, *, weight_steps: int = 20,
               n_components: int | None = None, refine_inner: bool = True,
               tolerance: float = 1e-6, max_candidates: int = 200_000) -> MixabilityEstimate:
    """Lower estimate of the mixability constant ``c(eta)`` on the game's decision grid.

    Pseudo-predictions are mixtures of up to ``psi_enumeration_depth``
    component decisions with weights on a simplex lattice of step
    ``1/weight_steps``.  Components are a spread-out subset of the grid that
    always contains each outcome's most extreme decision; its size is chosen
    so the candidate count stays under ``max_candidates``.  Each candidate is
    refined off the grid until it is known not to exceed the running estimate
    by more than ``tolerance``.
    """
    if psi_enumeration_depth < 1:
        raise ValueError("enumeration depth must be positive")
    space = spec.decisions
    grid_u = spec.grid_u_losses
    eta = spec.eta

    def count(k):
        total = 0
        for d in range(1, psi_enumeration_depth + 1):
            combos = 1
            for i in range(d):
                combos = combos * (k - i) // (i + 1)
            weights = 1
            for i in range(d - 1):
                weights = weights * (weight_steps - 1 - i) // (i + 1)
            total += combos * weights
        return total

    if n_components is None:
        k = space.size
        while k > 2 and count(k) > max_candidates:
            k = int(k * 0.9)
        n_components = k
    comp_idx = space.subsample(n_components)
    comp_u = grid_u[comp_idx]                             # (C, m)

    all_upsi, all_desc = [], []
    for combos, weights in _mixture_candidates(comp_idx.size, psi_enumeration_depth, weight_steps):
        # (P, W, m): -1/eta * log sum_k w_k exp(-eta u_k)
        cu = comp_u[combos]                               # (P, d, m)
        with np.errstate(divide="ignore"):
            logw = np.log(weights)                        # (W, d)
        z = logw[None, :, :, None] - eta * cu[:, None, :, :]
        top = np.max(z, axis=2, keepdims=True)
        safe = np.where(np.isfinite(top), top, 0.0)
        mixed = np.log(np.exp(z - safe).sum(axis=2)) + safe[:, :, 0, :]
        upsi = np.maximum(-mixed / eta, 0.0).reshape(-1, spec.m)
        all_upsi.append(upsi)
        P, W = combos.shape[0], weights.shape[0]
        all_desc.append((combos, weights, P, W))
    upsi = np.vstack(all_upsi)

    idx, val = minimax_on_grid(grid_u, upsi)
    c_hat = -np.inf
    best = None
    best_dec = None
    if refine_inner:
        order = np.argsort(-val, kind="stable")
        step = 8192
        for s in range(0, order.size, step):
            block = order[s:s + step]
            if val[block[0]] <= c_hat:
                break
            # rows refined below c_hat + tolerance cannot raise the estimate by more
            # than the tolerance, so their search stops there and they are ignored
            floor = c_hat + tolerance
            dec = refine(spec, space.points[idx[block]], upsi[block], _grid_step(space),
                         stop_below=floor)
            rv = ratios(spec.u_losses(dec), upsi[block]).max(axis=1)
            j = int(np.argmax(rv))
            if rv[j] > floor:
                c_hat, best, best_dec = float(rv[j]), int(block[j]), dec[j]
    else:
        best = int(np.argmax(val))
        c_hat, best_dec = float(val[best]), space.points[idx[best]]

    # decode the witness
    offset = best
    for combos, weights, P, W in all_desc:
        if offset < P * W:
            p, w = divmod(offset, W)
            comps = comp_idx[combos[p]]
            witness = {
                "components": space.points[comps].tolist(),
                "weights": weights[w].tolist(),
                "psi": spec.generator.u_inv(upsi[best]).tolist(),
                "u_psi": upsi[best].tolist(),
                "decision": np.asarray(best_dec).tolist(),
            }
            break
        offset -= P * W
    grid_spec = {
        "size": space.size,
        "resolution": space.resolution,
        "depth": psi_enumeration_depth,
        "weight_steps": weight_steps,
        "components": int(comp_idx.size),
        "refined": refine_inner,
    }
    return MixabilityEstimate(c_hat, eta, grid_spec, tolerance, grid_error(spec), witness, int(upsi.shape[0]))


@dataclass
class MixabilityVerdict:
    mixable: bool
    estimate: MixabilityEstimate
    composite_estimate: MixabilityEstimate
    consistent: bool

    def __bool__(self) -> bool:
        return self.mixable


def is_f_mixable(spec: PredictionGame, tolerance: float = 1e-3, **kwargs) -> MixabilityVerdict:
    """``c_hat <= 1 + tolerance``, cross-checked on the composite loss ``u o lambda``."""
    est = estimate_c(spec, **kwargs)
    comp = estimate_c(spec.composite(), **kwargs)
    consistent = abs(est.c_hat - comp.c_hat) <= 2 * max(est.grid_error, comp.grid_error) + 1e-12
    if not consistent:
        log.warning("f-mixability estimate %.6g disagrees with composite-loss estimate %.6g",
                    est.c_hat, comp.c_hat)
    return MixabilityVerdict(est.c_hat <= 1 + tolerance, est, comp, consistent)
