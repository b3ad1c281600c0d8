"""Regret and aggregation bounds evaluated on a game trace.

Every slack is ``bound RHS - learner LHS`` measured in the u-domain, where the
quasi-sum of a loss sequence is just the plain sum of its u-images.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .aggregation import SUM, Generator
from .game import GameTrace

DEFAULT_TOLERANCE = 1e-9


@dataclass
class BoundReport:
    bound_name: str
    per_expert_slack: np.ndarray
    parameters: dict = field(default_factory=dict)
    tolerance: float = DEFAULT_TOLERANCE

    @property
    def satisfied(self) -> bool:
        if self.per_expert_slack.size == 0:
            return True
        return bool(np.min(self.per_expert_slack) >= -self.tolerance)

    @property
    def min_slack(self) -> float:
        return float(np.min(self.per_expert_slack)) if self.per_expert_slack.size else math.inf

    def to_dict(self) -> dict:
        return {
            "bound": self.bound_name,
            "satisfied": self.satisfied,
            "min_slack": self.min_slack,
            "per_expert_slack": [float(x) for x in self.per_expert_slack],
            "parameters": self.parameters,
            "tolerance": self.tolerance,
        }


def _u_total(gen: Generator, losses: np.ndarray) -> float:
    return math.fsum(np.asarray(gen.u(losses), dtype=float).ravel().tolist())


def _expert_u_totals(gen: Generator, trace: GameTrace) -> np.ndarray:
    ul = np.asarray(gen.u(trace.expert_losses), dtype=float)
    return np.array([math.fsum(ul[:, i].tolist()) for i in range(trace.n)])


def _slack(rhs: np.ndarray, lhs: float, expert_totals: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        s = rhs - lhs
    # an infinite expert aggregate makes its bound vacuous
    return np.where(np.isinf(expert_totals), np.inf, s)


def nonmixable_bound(trace: GameTrace, gen: Generator, eta: float, c_hat: float,
                     tolerance: float = DEFAULT_TOLERANCE, name: str = "nonmixable") -> BoundReport:
    """``u(Q(learner)) <= c * u(Q(theta)) + (c / eta) ln n`` for every expert."""
    n = trace.n
    totals = _expert_u_totals(gen, trace)
    lhs = _u_total(gen, trace.learner_losses)
    rhs = c_hat * totals + (c_hat / eta) * math.log(n)
    params = {"eta": eta, "n": n, "c_hat": c_hat, "generator": gen.name,
              "learner_u_aggregate": lhs}
    return BoundReport(name, _slack(rhs, lhs, totals), params, tolerance)


def quasi_sum_bound(trace: GameTrace, gen: Generator, eta: float,
                    tolerance: float = DEFAULT_TOLERANCE) -> BoundReport:
    """``Q(learner) <= u^{-1}(u(Q(theta)) + ln(n) / eta)``, compared in the u-domain."""
    rep = nonmixable_bound(trace, gen, eta, 1.0, tolerance, name="quasi")
    del rep.parameters["c_hat"]
    return rep


def classic_bound(trace: GameTrace, eta: float, tolerance: float = DEFAULT_TOLERANCE) -> BoundReport:
    """``L(learner) - L(theta) <= ln(n) / eta``."""
    rep = nonmixable_bound(trace, SUM, eta, 1.0, tolerance, name="classic")
    del rep.parameters["c_hat"]
    del rep.parameters["generator"]
    return rep


def apa_margin(gen: Generator, eta: float, n: int) -> float:
    """``g_eta(1/n) = u^{-1}(ln(n) / eta)``."""
    return float(gen.u_inv(math.log(n) / eta))


def apa_identity_residual(trace: GameTrace, gen: Generator, eta: float, prior=None) -> float:
    """u-domain gap between the APA aggregate and ``g(sum_theta f(Q(theta)) P0(theta))``."""
    lhs = _psi_u_total(trace, gen)
    totals = _expert_u_totals(gen, trace)
    p0 = np.full(trace.n, 1.0 / trace.n) if prior is None else np.asarray(prior, dtype=float)
    with np.errstate(divide="ignore"):
        z = np.log(p0) - eta * totals
    top = np.max(z)
    rhs = -(math.log(math.fsum(np.exp(z - top).tolist())) + top) / eta
    if math.isinf(lhs) and math.isinf(rhs):
        return 0.0
    return lhs - rhs


def _psi_u_total(trace: GameTrace, gen: Generator) -> float:
    rows = np.arange(trace.T)
    if trace.psi_u is not None:
        vals = trace.psi_u[rows, trace.outcomes]
    else:
        vals = gen.u(trace.psi_at_outcome)
    return math.fsum(np.asarray(vals, dtype=float).tolist())


def apa_pseudo_bound(trace: GameTrace, gen: Generator, eta: float,
                     tolerance: float = DEFAULT_TOLERANCE) -> BoundReport:
    """APA aggregate against ``A_2(Q(theta), g_eta(1/n))`` under the uniform prior.

    The report is satisfied only if the exact identity also holds within
    ``tolerance``.  ``psi_u`` stored on the trace is used when present; a trace
    read back from CSV falls back to ``u(psi)``, which must have been produced
    with the same generator.
    """
    n = trace.n
    lhs = _psi_u_total(trace, gen)
    totals = _expert_u_totals(gen, trace)
    rhs = totals + math.log(n) / eta
    resid = apa_identity_residual(trace, gen, eta)
    slack = _slack(rhs, lhs, totals)
    if abs(resid) > tolerance:
        slack = np.minimum(slack, -abs(resid))
    params = {"eta": eta, "n": n, "generator": gen.name, "margin": apa_margin(gen, eta, n),
              "apa_u_aggregate": lhs, "identity_residual": resid}
    return BoundReport("apa", slack, params, tolerance)
