"""Treatment rules from per-cell quantile bounds, and their regret calculus.

Two distinct regret functionals live here and must not be conflated. The
reported maximum regret treats a stochastic rule as a Bernoulli draw A(x)
with success probability delta(x) and takes the expectation over A as well,
which makes the straddle-cell value U*(1-delta) + (-L)*delta. The quantity
the minimax rules optimize is the pointwise worst case with delta held fixed,
max{(1-delta)*max(U,0), delta*max(-L,0)}, whose minimizer is U/(U-L); its
minimized value is the asymptotic leading term, not the attained regret.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .bounds import QoteBounds

__all__ = [
    "BoundField",
    "PolicyField",
    "TruthField",
    "RegretReport",
    "RegretBoundReport",
    "first_best",
    "qbar",
    "mmr_stochastic",
    "mmr_deterministic",
    "maximin_rule",
    "cell_max_regret",
    "max_regret",
    "true_regret",
    "regret_bound_check",
    "derive_policy",
    "policy_to_json",
    "regret_report_to_json",
]


def _as_point(x) -> Tuple[float, ...]:
    if np.isscalar(x):
        return (float(x),)
    return tuple(float(v) for v in np.atleast_1d(np.asarray(x, dtype=float)))


@dataclass(frozen=True)
class BoundField:
    """Per-cell quantile bounds with cell probabilities: ((x, weight, bounds), ...)."""

    cells: Tuple[Tuple[Tuple[float, ...], float, QoteBounds], ...]

    def __post_init__(self):
        cells = tuple(
            (_as_point(x), float(w), b) for (x, w, b) in self.cells
        )
        object.__setattr__(self, "cells", cells)
        if not cells:
            raise ValueError("field needs at least one cell")
        w = np.array([c[1] for c in cells])
        if np.any(w < -1e-12):
            raise ValueError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-8:
            raise ValueError("weights must sum to 1")
        for _, _, b in cells:
            if not (np.isfinite(b.lower) and np.isfinite(b.upper)):
                raise ValueError("bounds must be finite")

    def points(self):
        return tuple(c[0] for c in self.cells)

    def arrays(self):
        w = np.array([c[1] for c in self.cells])
        lo = np.array([c[2].lower for c in self.cells])
        up = np.array([c[2].upper for c in self.cells])
        return w, lo, up


@dataclass(frozen=True)
class PolicyField:
    """Per-cell treatment probabilities delta(x); deterministic means {0,1}."""

    cells: Tuple[Tuple[Tuple[float, ...], float], ...]
    kind: str = "deterministic"

    def __post_init__(self):
        cells = tuple((_as_point(x), float(d)) for (x, d) in self.cells)
        object.__setattr__(self, "cells", cells)
        if self.kind not in ("stochastic", "deterministic"):
            raise ValueError("kind must be stochastic or deterministic")
        d = np.array([c[1] for c in cells])
        if np.any(d < -1e-12) or np.any(d > 1 + 1e-12):
            raise ValueError("delta must lie in [0, 1]")
        if self.kind == "deterministic" and not np.all((d == 0) | (d == 1)):
            raise ValueError("deterministic policy needs delta in {0, 1}")

    def points(self):
        return tuple(c[0] for c in self.cells)

    def deltas(self):
        return np.array([c[1] for c in self.cells])


@dataclass(frozen=True)
class TruthField:
    """Known per-cell quantile treatment effects (simulation settings)."""

    cells: Tuple[Tuple[Tuple[float, ...], float], ...]

    def __post_init__(self):
        cells = tuple((_as_point(x), float(q)) for (x, q) in self.cells)
        object.__setattr__(self, "cells", cells)

    def points(self):
        return tuple(c[0] for c in self.cells)

    def values(self):
        return np.array([c[1] for c in self.cells])


@dataclass(frozen=True)
class RegretReport:
    """Maximum regret (three equivalent expressions) plus the asymptotic terms."""

    max_regret: float
    expressions: Tuple[float, float, float]
    leading_term_stochastic: float
    leading_term_deterministic: float
    true_regret: Optional[float] = None


@dataclass(frozen=True)
class RegretBoundReport:
    """Population check that minimax-rule regret sits under the leading terms."""

    true_regret_stochastic: float
    leading_term_stochastic: float
    true_regret_deterministic: float
    leading_term_deterministic: float

    @property
    def satisfied(self) -> bool:
        slack = 1e-9
        return (
            self.true_regret_stochastic <= self.leading_term_stochastic + slack
            and self.true_regret_deterministic
            <= self.leading_term_deterministic + slack
        )


def _check_same_cells(a, b):
    if a.points() != b.points():
        raise ValueError("cell sets do not match")


def first_best(truth_field: TruthField) -> PolicyField:
    """Oracle rule 1{Q(x) >= 0} (sign(0) = 1)."""
    cells = tuple((x, 1.0 if q >= 0 else 0.0) for x, q in truth_field.cells)
    return PolicyField(cells, kind="deterministic")


def qbar(b: QoteBounds) -> float:
    """U when L >= 0, L when U <= 0, U + L when the bounds straddle zero."""
    if b.lower >= 0:
        return float(b.upper)
    if b.upper <= 0:
        return float(b.lower)
    return float(b.upper + b.lower)


def mmr_stochastic(b: QoteBounds) -> float:
    """Minimax-regret randomization probability: U / (U - L) on straddles."""
    if b.lower >= 0:
        return 1.0
    if b.upper <= 0:
        return 0.0
    return float(b.upper / (b.upper - b.lower))


def mmr_deterministic(b: QoteBounds) -> float:
    """Deterministic minimax-regret rule; |L| = |U| ties treat (sign(0) = 1)."""
    if b.lower >= 0:
        return 1.0
    if b.upper <= 0:
        return 0.0
    return 1.0 if abs(b.lower) <= abs(b.upper) else 0.0


def maximin_rule(b: QoteBounds) -> float:
    """Worst-case-welfare rule: treat iff the lower bound is nonnegative."""
    return 1.0 if b.lower >= 0 else 0.0


def cell_max_regret(b: QoteBounds, delta: float) -> float:
    """Worst case over effects inside the bounds with delta held fixed.

    max{(1 - delta) max(U, 0), delta max(-L, 0)}: the functional whose
    minimizers are the minimax rules. For the value attained when a
    stochastic rule is actually drawn, see max_regret.
    """
    return max((1.0 - delta) * max(b.upper, 0.0), delta * max(-b.lower, 0.0))


def _expression_1(w, lo, up, d):
    # expectation over the Bernoulli draw of max{(1-A)max(U,0), A max(-L,0)}
    return float(np.sum(w * ((1 - d) * np.maximum(up, 0) + d * np.maximum(-lo, 0))))


def _expression_2(w, lo, up, d):
    qb = np.where(lo >= 0, up, np.where(up <= 0, lo, up + lo))
    return float(np.sum(w * (-d * qb)) + np.sum(w * np.maximum(up, 0)))


def _expression_3(w, lo, up, d):
    qb = np.where(lo >= 0, up, np.where(up <= 0, lo, up + lo))
    mismatch = np.where(qb >= 0, 1 - d, d)
    straddle = (lo < 0) & (0 < up)
    return float(
        np.sum(w * np.abs(qb) * mismatch)
        + np.sum(w * np.minimum(up, -lo) * straddle)
    )


def _leading_terms(w, lo, up):
    straddle = (lo < 0) & (0 < up)
    with np.errstate(divide="ignore", invalid="ignore"):
        stoch_cell = np.where(straddle, lo * up / (lo - up), 0.0)
    det_cell = np.minimum(np.maximum(up, 0.0), np.maximum(-lo, 0.0))
    return float(np.sum(w * stoch_cell)), float(np.sum(w * det_cell))


def max_regret(policy: PolicyField, bound_field: BoundField) -> RegretReport:
    """Maximum regret of a rule over all effects inside the per-cell bounds.

    Evaluates the three equivalent closed forms (which must agree to 1e-9)
    with the expectation taken over the rule's Bernoulli draw as well, and
    reports the asymptotic leading terms alongside.
    """
    _check_same_cells(policy, bound_field)
    w, lo, up = bound_field.arrays()
    d = policy.deltas()
    e1 = _expression_1(w, lo, up, d)
    e2 = _expression_2(w, lo, up, d)
    e3 = _expression_3(w, lo, up, d)
    if max(abs(e1 - e2), abs(e1 - e3)) > 1e-9:
        raise AssertionError(
            f"max-regret expressions disagree: {e1!r}, {e2!r}, {e3!r}"
        )
    lt_s, lt_d = _leading_terms(w, lo, up)
    return RegretReport(
        max_regret=e1,
        expressions=(e1, e2, e3),
        leading_term_stochastic=lt_s,
        leading_term_deterministic=lt_d,
    )


def true_regret(policy: PolicyField, truth_field: TruthField, weights=None) -> float:
    """E[|Q(x)| P{A(x) != sign(Q(x))}] in closed form over the Bernoulli draw."""
    _check_same_cells(policy, truth_field)
    q = truth_field.values()
    d = policy.deltas()
    n = q.size
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    if w.size != n:
        raise ValueError("weights length does not match cells")
    mismatch = np.where(q >= 0, 1 - d, d)
    return float(np.sum(w * np.abs(q) * mismatch))


def derive_policy(bound_field: BoundField, rule: str) -> PolicyField:
    """Apply a per-cell rule in {mmr_stochastic, mmr_deterministic, maximin}."""
    fns = {
        "mmr_stochastic": (mmr_stochastic, "stochastic"),
        "mmr_deterministic": (mmr_deterministic, "deterministic"),
        "maximin": (maximin_rule, "deterministic"),
    }
    if rule not in fns:
        raise ValueError(f"unknown rule {rule!r}")
    fn, kind = fns[rule]
    cells = tuple((x, fn(b)) for (x, _, b) in bound_field.cells)
    return PolicyField(cells, kind=kind)


def regret_bound_check(
    bound_field: BoundField, truth_field: TruthField
) -> RegretBoundReport:
    """Verify realized minimax-rule regret is covered by its leading-term cap.

    Requires each cell's truth to lie inside its bounds. The population-level
    slack is 1e-9; the caller treats a violated report as a failure signal.
    """
    _check_same_cells(bound_field, truth_field)
    w, lo, up = bound_field.arrays()
    q = truth_field.values()
    if np.any(q < lo - 1e-9) or np.any(q > up + 1e-9):
        raise ValueError("truth lies outside the bounds")
    lt_s, lt_d = _leading_terms(w, lo, up)
    tr_s = true_regret(derive_policy(bound_field, "mmr_stochastic"), truth_field, w)
    tr_d = true_regret(derive_policy(bound_field, "mmr_deterministic"), truth_field, w)
    return RegretBoundReport(
        true_regret_stochastic=tr_s,
        leading_term_stochastic=lt_s,
        true_regret_deterministic=tr_d,
        leading_term_deterministic=lt_d,
    )


def policy_to_json(policy: PolicyField) -> str:
    """JSON export: list of {"x": [...], "delta": value}."""
    data = {
        "kind": policy.kind,
        "cells": [{"x": list(x), "delta": d} for x, d in policy.cells],
    }
    return json.dumps(data, sort_keys=True, indent=2) + "\n"


def regret_report_to_json(report: RegretReport) -> str:
    """JSON export with all three expression values for auditability."""
    data = {
        "max_regret": report.max_regret,
        "expressions": list(report.expressions),
        "leading_term_stochastic": report.leading_term_stochastic,
        "leading_term_deterministic": report.leading_term_deterministic,
    }
    if report.true_regret is not None:
        data["true_regret"] = report.true_regret
    return json.dumps(data, sort_keys=True, indent=2) + "\n"
