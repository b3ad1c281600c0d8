"""The aggregating pseudo-algorithm for quasi-sums and the full learner loop.

Weights live in the log domain: an expert's log-weight drops by
``eta * u(loss)`` each round and is renormalized so the largest is 0.
Pseudo-predictions are kept in the u-domain,

    u(psi(w)) = (lse(logP) - lse(logP - eta * u(lambda(w, xi)))) / eta,

and mapped back with ``u^{-1}`` only at the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .game import GameTrace, PredictionGame


class StateError(RuntimeError):
    """All experts have zero weight."""


def logsumexp(a: np.ndarray, axis: int = -1) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    top = np.max(a, axis=axis, keepdims=True)
    safe = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - safe), axis=axis, keepdims=True)) + safe
    return np.squeeze(out, axis=axis)


def _normalize_log(logw: np.ndarray) -> np.ndarray:
    top = np.max(logw, axis=-1, keepdims=True)
    if not np.isfinite(top).all():
        raise StateError("every expert has zero weight")
    return logw - top


def _u_psi(logw: np.ndarray, u_loss: np.ndarray, eta: float) -> np.ndarray:
    """u-images of pseudo-predictions.

    ``logw`` has shape ``(..., n)``, ``u_loss`` shape ``(..., n, m)``; returns ``(..., m)``.
    """
    base = logsumexp(logw, axis=-1)
    mixed = logsumexp(logw[..., :, None] - eta * u_loss, axis=-2)
    with np.errstate(invalid="ignore"):
        up = (base[..., None] - mixed) / eta
    return np.maximum(up, 0.0)


@dataclass(frozen=True)
class ExpertState:
    """Log-domain expert weights after ``round`` updates."""

    log_weights: np.ndarray = field(repr=False)
    prior: np.ndarray = field(repr=False)
    round: int = 0

    @classmethod
    def from_prior(cls, prior) -> "ExpertState":
        p = np.asarray(prior, dtype=float)
        if p.ndim != 1 or p.size == 0 or (p < 0).any() or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("prior must be a probability vector")
        with np.errstate(divide="ignore"):
            logw = np.log(p)
        return cls(_normalize_log(logw), p, 0)

    @classmethod
    def uniform(cls, n: int) -> "ExpertState":
        return cls.from_prior(np.full(n, 1.0 / n))

    @property
    def n(self) -> int:
        return self.log_weights.size

    def normalized(self) -> np.ndarray:
        w = np.exp(self.log_weights - logsumexp(self.log_weights))
        return w / w.sum()


@dataclass(frozen=True)
class PseudoPrediction:
    """``values[w] = psi(w)`` and ``u_values[w] = u(psi(w))``."""

    values: np.ndarray
    u_values: np.ndarray


@dataclass(frozen=True)
class PosteriorSlice:
    """``per_outcome[w]`` is the expert distribution p_t(.; w); NaN rows are degenerate."""

    per_outcome: np.ndarray
    degenerate: tuple[int, ...]


def pseudo_predict(state: ExpertState, expert_predictions, spec: PredictionGame) -> PseudoPrediction:
    preds = np.asarray(expert_predictions, dtype=float)
    if not np.isfinite(state.log_weights).any():
        raise StateError("every expert has zero weight")
    up = _u_psi(state.log_weights, spec.u_losses(preds), spec.eta)
    return PseudoPrediction(spec.generator.u_inv(up), up)


def update_weights(state: ExpertState, expert_predictions, outcome: int, spec: PredictionGame) -> ExpertState:
    preds = np.asarray(expert_predictions, dtype=float)
    ul = spec.u_losses(preds)[:, outcome]
    logw = state.log_weights - spec.eta * ul
    top = np.max(logw)
    if np.isfinite(top):
        logw = logw - top
    return replace(state, log_weights=logw, round=state.round + 1)


def posterior_slice(state: ExpertState, expert_predictions, psi: PseudoPrediction,
                    spec: PredictionGame) -> PosteriorSlice:
    preds = np.asarray(expert_predictions, dtype=float)
    ul = spec.u_losses(preds)  # (n, m)
    logp = state.log_weights - logsumexp(state.log_weights)
    out = np.full((spec.m, state.n), np.nan)
    degenerate = []
    for w in range(spec.m):
        if not np.isfinite(psi.u_values[w]):
            degenerate.append(w)
            continue
        z = logp - spec.eta * ul[:, w] + spec.eta * psi.u_values[w]
        p = np.exp(z - logsumexp(z))
        out[w] = p / p.sum()
    return PosteriorSlice(out, tuple(degenerate))


def _weight_path(spec: PredictionGame, ul: np.ndarray, outcomes: np.ndarray, prior):
    """Log-weights before and after every round from the experts' u-losses ``(T, n, m)``."""
    T, n = ul.shape[0], ul.shape[1]
    state0 = ExpertState.from_prior(prior) if prior is not None else ExpertState.uniform(n)
    realized = ul[np.arange(T), :, outcomes]            # (T, n)
    cum = np.cumsum(spec.eta * realized, axis=0)
    logw_after = state0.log_weights[None, :] - cum
    logw_before = np.vstack([state0.log_weights[None, :], logw_after[:-1]])
    top = np.max(logw_before, axis=1, keepdims=True)
    dead = ~np.isfinite(top[:, 0])
    if dead.any():
        raise StateError(f"every expert has zero weight at round {int(np.argmax(dead))}")
    return logw_before - top, logw_after


def _check_streams(spec: PredictionGame, preds: np.ndarray, outcomes: np.ndarray) -> None:
    T = outcomes.shape[0]
    if preds.shape != (T, spec.n_experts, spec.m):
        raise ValueError(f"expert stream must have shape {(T, spec.n_experts, spec.m)}, got {preds.shape}")
    if (outcomes < 0).any() or (outcomes >= spec.m).any():
        raise ValueError("outcome index out of range")


def apa_run(spec: PredictionGame, expert_stream, outcome_stream, prior=None) -> np.ndarray:
    """u-images of the pseudo-predictions ``(T, m)`` without any substitution."""
    preds = np.asarray(expert_stream, dtype=float)
    outcomes = np.asarray(outcome_stream, dtype=int).ravel()
    if outcomes.size == 0:
        return np.zeros((0, spec.m))
    _check_streams(spec, preds, outcomes)
    ul = spec.generator.u(spec.loss.matrix(preds))
    logw_before, _ = _weight_path(spec, ul, outcomes, prior)
    return _u_psi(logw_before, ul, spec.eta)


def run_game(spec: PredictionGame, expert_stream, outcome_stream, substitution=None,
             prior=None) -> GameTrace:
    """Play the aggregating algorithm over fixed streams.

    ``expert_stream`` has shape ``(T, n, m)`` and ``outcome_stream`` holds
    outcome indices.  Because the weights depend only on the experts' losses,
    the whole weight trajectory is computed at once from cumulative sums.
    """
    from .substitution import default_rule, substitute_many

    preds = np.asarray(expert_stream, dtype=float)
    outcomes = np.asarray(outcome_stream, dtype=int).ravel()
    T = outcomes.shape[0]
    n = spec.n_experts
    if T == 0:
        return GameTrace.empty(spec.outcomes.labels, n)
    _check_streams(spec, preds, outcomes)
    rule = substitution if substitution is not None else default_rule(spec)

    lam = spec.loss.matrix(preds)                       # (T, n, m)
    ul = spec.generator.u(lam)
    rows = np.arange(T)
    logw_before, logw_after = _weight_path(spec, ul, outcomes, prior)

    psi_u = _u_psi(logw_before, ul, spec.eta)           # (T, m)
    psi = spec.generator.u_inv(psi_u)
    decisions = substitute_many(rule, psi_u, spec)
    learner = spec.loss.matrix(decisions)[rows, outcomes]

    top_after = np.max(logw_after, axis=1, keepdims=True)
    with np.errstate(invalid="ignore"):
        w_after = np.exp(logw_after - np.where(np.isfinite(top_after), top_after, 0.0))
    w_after = w_after / w_after.sum(axis=1, keepdims=True)

    return GameTrace(spec.outcomes.labels, preds, decisions, outcomes, lam[rows, :, outcomes],
                     learner, psi, psi_u, w_after)


def random_streams(rng: np.random.Generator, T: int, n: int, m: int, floor: float = 1e-3):
    """Random expert probability vectors ``(T, n, m)`` and outcome indices ``(T,)``.

    Vectors are flat-Dirichlet draws mixed with ``floor`` mass on every outcome
    so all losses stay finite.
    """
    p = rng.dirichlet(np.ones(m), size=(T, n)) if T and n else np.zeros((T, n, m))
    p = (1.0 - m * floor) * p + floor
    outcomes = rng.integers(0, m, size=T)
    return p, outcomes
