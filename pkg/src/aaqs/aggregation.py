"""Quasi-sum generators, weighting profiles and aggregation-axiom checks.

A quasi-sum is ``u^{-1}(sum u(x_i))`` for a continuous, strictly increasing
generator ``u`` with ``u(0) = 0``.  Every generator induces a weighting
profile ``f(x) = exp(-eta * u(x))`` whose inverse ``g`` turns products of
weights back into aggregated losses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

U_CAP = 1e300


class DomainError(ValueError):
    """Raised for NaN or negative losses."""


def _as_array(x):
    arr = np.asarray(x, dtype=float)
    return arr, arr.ndim == 0


def _focal_u(x: np.ndarray) -> np.ndarray:
    return np.square(-np.expm1(-x)) * x


def _focal_u_inv(y: np.ndarray) -> np.ndarray:
    # u(x) <= min(x, x^3) and u(x) >= min(x, x^3) * (1 - 1/e)^2, so the root
    # lies in a bracket whose endpoints differ by a factor of at most ~2.51.
    y = np.asarray(y, dtype=float)
    out = np.where(np.isinf(y), np.inf, 0.0)
    mask = np.isfinite(y) & (y > 0)
    if not mask.any():
        return out
    yy = y[mask]
    lo = np.maximum(yy, np.cbrt(yy))
    hi = np.maximum(2.51 * yy, np.cbrt(2.51 * yy))
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        done = (mid == lo) | (mid == hi)
        if done.all():
            break
        below = _focal_u(mid) < yy
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    # pick whichever endpoint reproduces y more closely
    err_lo = np.abs(_focal_u(lo) - yy)
    err_hi = np.abs(_focal_u(hi) - yy)
    out[mask] = np.where(err_lo <= err_hi, lo, hi)
    return out


@dataclass(frozen=True)
class Generator:
    """Generator ``u`` of a quasi-sum together with its inverse.

    ``power`` is the exponent for the ``x**p`` family and ``None`` otherwise.
    Values of ``u`` above ``cap`` saturate to ``+inf``.
    """

    name: str
    u_raw: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    u_inv_raw: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    domain_hint: float
    power: float | None = None
    cap: float = U_CAP

    @property
    def is_identity(self) -> bool:
        return self.power == 1.0

    def u_flagged(self, x):
        """Return ``(u(x), overflowed)``; overflow means a finite x mapped past the cap."""
        arr, scalar = _as_array(x)
        with np.errstate(over="ignore", invalid="ignore"):
            val = np.asarray(self.u_raw(arr), dtype=float)
        over = (val > self.cap) & np.isfinite(arr)
        val = np.where(val > self.cap, np.inf, val)
        flag = bool(over.any())
        return (float(val) if scalar else val), flag

    def u(self, x):
        return self.u_flagged(x)[0]

    def u_inv(self, y):
        arr, scalar = _as_array(y)
        with np.errstate(over="ignore", invalid="ignore"):
            val = np.asarray(self.u_inv_raw(np.maximum(arr, 0.0)), dtype=float)
        return float(val) if scalar else val


def power(p: float, name: str | None = None) -> Generator:
    """The p-norm generator ``u(x) = x**p``."""
    p = float(p)
    if not p > 0:
        raise ValueError(f"power generator needs p > 0, got {p}")
    if name is None:
        name = f"pow:{p:g}"
    with np.errstate(over="ignore"):
        hint = float(np.power(U_CAP, 1.0 / p)) if p >= 1 else np.finfo(float).max
    if p == 1.0:
        return Generator(name, lambda x: x + 0.0, lambda y: y + 0.0, hint, power=1.0)
    inv = 1.0 / p
    return Generator(name, lambda x: np.power(x, p), lambda y: np.power(y, inv), hint, power=p)


SUM = power(1.0, "sum")
SQRT = power(0.5, "sqrt")
SQUARE = power(2.0, "square")
POW10 = power(10.0, "pow10")
FOCAL = Generator("focal", _focal_u, _focal_u_inv, np.finfo(float).max)

CATALOG: dict[str, Generator] = {
    g.name: g for g in (SUM, SQRT, SQUARE, POW10, FOCAL)
}


def get_generator(key: str) -> Generator:
    """Resolve ``"sum"``, ``"sqrt"``, ``"square"``, ``"pow10"``, ``"focal"`` or ``"pow:<p>"``."""
    if key in CATALOG:
        return CATALOG[key]
    if key.startswith("pow:"):
        try:
            p = float(key[4:])
        except ValueError:
            raise KeyError(f"unknown generator {key!r}") from None
        return power(p)
    raise KeyError(f"unknown generator {key!r}")


def _check_losses(xs: np.ndarray) -> None:
    if np.isnan(xs).any():
        raise DomainError("loss values must not be NaN")
    if (xs < 0).any():
        raise DomainError("loss values must be nonnegative")


def quasi_sum(gen: Generator, losses: Iterable[float], *, with_flag: bool = False):
    """Aggregate ``losses`` as ``u^{-1}(sum u(x_i))``.

    The empty sequence aggregates to 0.  With ``with_flag=True`` the result is
    ``(value, overflowed)``.
    """
    xs = np.asarray(list(losses) if not isinstance(losses, np.ndarray) else losses, dtype=float)
    xs = xs.ravel()
    _check_losses(xs)
    if xs.size == 0:
        return (0.0, False) if with_flag else 0.0
    us, flag = gen.u_flagged(xs)
    total = math.fsum(us.tolist())
    value = float(gen.u_inv(total))
    if xs.size == 1 and np.isfinite(total):
        value = float(xs[0])  # A_1(x) = x exactly
    return (value, flag) if with_flag else value


def quasi_sum_fold(gen: Generator, acc: float, x: float) -> float:
    """Binary aggregation ``A_2(acc, x)``."""
    vals = np.array([acc, x], dtype=float)
    _check_losses(vals)
    if acc == 0.0:
        return float(x)
    if x == 0.0:
        return float(acc)
    return float(gen.u_inv(gen.u(acc) + gen.u(x)))


@dataclass(frozen=True)
class WeightingProfile:
    """``f(x) = exp(-eta u(x))`` and its inverse ``g(y) = u^{-1}(-ln(y) / eta)``."""

    generator: Generator
    eta: float = 1.0

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"learning rate must be positive, got {self.eta}")

    def log_f(self, x):
        return -self.eta * self.generator.u(x)

    def f(self, x):
        arr, scalar = _as_array(x)
        if (arr < 0).any() or np.isnan(arr).any():
            raise DomainError("profile is defined on [0, inf]")
        val = np.exp(-self.eta * self.generator.u(arr))
        return float(val) if scalar else val

    def g(self, y):
        arr, scalar = _as_array(y)
        with np.errstate(divide="ignore"):
            uval = np.maximum(-np.log(arr) / self.eta, 0.0)
        val = self.generator.u_inv(uval)
        return float(val) if scalar else val


def profile_apply(wp: WeightingProfile, loss: float) -> float:
    return wp.f(loss)


@dataclass
class AxiomReport:
    """Outcome of :func:`check_axioms`; failures are entries, not exceptions."""

    generator: str
    continuity: bool
    monotonicity: bool
    associativity: bool
    loss_compatibility: bool
    overflow: bool
    evaluable: list[float]
    excluded: list[float]

    @property
    def passed(self) -> bool:
        return self.continuity and self.monotonicity and self.associativity and self.loss_compatibility

    def to_dict(self) -> dict:
        return {
            "generator": self.generator,
            "continuity": self.continuity,
            "monotonicity": self.monotonicity,
            "associativity": self.associativity,
            "loss_compatibility": self.loss_compatibility,
            "overflow": self.overflow,
            "passed": self.passed,
            "evaluable": self.evaluable,
            "excluded": self.excluded,
        }


def _close(a: float, b: float, rel: float = 1e-9) -> bool:
    return math.isclose(a, b, rel_tol=rel, abs_tol=1e-12)


def check_axioms(gen: Generator, samples: Iterable[float]) -> AxiomReport:
    """Check continuity, monotonicity, associativity and loss compatibility on a grid.

    Grid points whose triple sums in the u-domain exceed the overflow cap are
    reported in ``excluded`` and the checks run on the rest.
    """
    grid = sorted(set(float(s) for s in samples))
    if not grid:
        raise ValueError("sample grid must be nonempty")
    arr = np.asarray(grid)
    _check_losses(arr)
    if not np.isfinite(arr).all():
        raise DomainError("sample grid must be finite")
    us, overflow = gen.u_flagged(arr)
    ok = np.isfinite(us) & (3.0 * us <= gen.cap)
    overflow = overflow or not ok.all()
    good = [x for x, k in zip(grid, ok) if k]
    bad = [x for x, k in zip(grid, ok) if not k]

    def a2(x, y):
        return quasi_sum_fold(gen, x, y)

    continuity = True
    for x in good:
        for y in good:
            base = a2(x, y)
            delta = 1e-9 * max(1.0, x)
            if abs(a2(x + delta, y) - base) > 1e-3 * max(1.0, base):
                continuity = False

    monotonicity = all(b > a for a, b in zip(gen.u(np.asarray(good)), gen.u(np.asarray(good))[1:]))
    for i, x in enumerate(good):
        for xp in good[i + 1:]:
            for y in good:
                lo, hi = a2(x, y), a2(xp, y)
                ux, uxp, uy = gen.u(x), gen.u(xp), gen.u(y)
                representable = (uxp - ux) > 1e-12 * (uxp + uy)
                if hi < lo or (representable and not hi > lo):
                    monotonicity = False

    associativity = all(
        _close(a2(a2(x, y), z), a2(x, a2(y, z)))
        for x in good for y in good for z in good
    )
    loss_compat = gen.u(0.0) == 0.0 and all(quasi_sum(gen, [0.0] * k) == 0.0 for k in (1, 2, 3))
    return AxiomReport(gen.name, continuity, monotonicity, associativity, loss_compat, overflow, good, bad)
