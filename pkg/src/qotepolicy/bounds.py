"""Identified intervals for quantiles of treatment effects.

The treatment-effect distribution P(Y1 - Y0 <= t) is only partially identified
by the two marginal outcome distributions. This module computes sharp lower
and upper envelopes of that CDF over all couplings of the marginals, with
optional shape restrictions on the coupling (stochastic increasingness or
positive quadrant dependence), and inverts the envelopes into quantile bounds.

Engines: the unrestricted problem has a closed-form solution on the quantile
grid; restricted problems are linear programs in the copula-CDF coordinates,
solved by the built-in simplex for small grids and by scipy's HiGHS backend
for larger ones (the two are cross-validated in the test suite).
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog as _linprog
from scipy.stats import binom as _binom

from .lpcore import LinearProgram, solve_lp
from .marginals import QuantileCurve, u_grid

__all__ = [
    "AssumptionSet",
    "Coupling",
    "DeltaCdfBounds",
    "QoteBounds",
    "BernsteinCoefs",
    "Interval",
    "CVaR",
    "DisadvantagedGain",
    "makarov_bounds",
    "coupling_lp_bounds",
    "bernstein_lp_bounds",
    "invert_bounds",
    "rank_invariance_qote",
    "symmetry_median_qote",
    "functional_bounds",
    "qote_coupling_bounds",
    "default_t_grid",
    "delta_bounds_to_csv",
]

DEFAULT_K = 50
DEFAULT_T_POINTS = 201
# largest grid handed to the built-in dense simplex; bigger programs go to HiGHS
SIMPLEX_MAX_K = 8
SIMPLEX_MAX_DEGREE = 8

_VALID_TAGS = ("NoAssumption", "SI", "PQD", "RankInvariance", "Symmetry")
_UNSUPPORTED_TAGS = ("SD", "DC", "RY", "RY2")
_LP_TAGS = ("NoAssumption", "SI", "PQD")


@dataclass(frozen=True)
class AssumptionSet:
    """Identifying assumption on the (Y1, Y0) coupling; exactly one tag."""

    tag: str = "NoAssumption"

    def __post_init__(self):
        if self.tag in _UNSUPPORTED_TAGS:
            raise ValueError(f"assumption {self.tag} not supported")
        if self.tag not in _VALID_TAGS:
            raise ValueError(f"unknown assumption tag {self.tag!r}")


@dataclass(frozen=True)
class Coupling:
    """Discrete coupling of two uniform-atom marginals: k x k mass matrix."""

    k: int
    c: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        object.__setattr__(self, "c", c)
        if c.shape != (self.k, self.k):
            raise ValueError("coupling matrix must be k x k")
        if np.any(c < -1e-10):
            raise ValueError("coupling entries must be nonnegative")
        target = 1.0 / self.k
        if np.max(np.abs(c.sum(axis=1) - target)) > 1e-8:
            raise ValueError("row sums must equal 1/k")
        if np.max(np.abs(c.sum(axis=0) - target)) > 1e-8:
            raise ValueError("column sums must equal 1/k")


@dataclass(frozen=True)
class DeltaCdfBounds:
    """Pointwise envelopes of P(Delta <= t) on a t grid: lower <= upper."""

    t_grid: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t_grid, dtype=float)
        lo = np.asarray(self.lower, dtype=float)
        up = np.asarray(self.upper, dtype=float)
        object.__setattr__(self, "t_grid", t)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)
        if not (t.shape == lo.shape == up.shape) or t.ndim != 1:
            raise ValueError("t_grid, lower, upper must be 1-d of equal length")
        if np.any(np.diff(t) <= 0):
            raise ValueError("t_grid must be strictly increasing")
        for name, v in (("lower", lo), ("upper", up)):
            if np.any(v < -1e-9) or np.any(v > 1 + 1e-9):
                raise ValueError(f"{name} envelope must lie in [0, 1]")
            if np.any(np.diff(v) < -1e-9):
                raise ValueError(f"{name} envelope must be nondecreasing")
        if np.any(lo > up + 1e-9):
            raise ValueError("lower envelope must not exceed upper envelope")


@dataclass(frozen=True)
class QoteBounds:
    """Identified interval [lower, upper] for a treatment-effect quantile."""

    lower: float
    upper: float
    truncated_lower: bool = False
    truncated_upper: bool = False

    def __post_init__(self):
        if not self.lower <= self.upper + 1e-12:
            raise ValueError("lower bound exceeds upper bound")


@dataclass(frozen=True)
class BernsteinCoefs:
    """Copula values on the (v1/m1, v2/m2) grid defining a Bernstein copula."""

    m1: int
    m2: int
    beta: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.beta, dtype=float)
        object.__setattr__(self, "beta", b)
        if b.shape != (self.m1 + 1, self.m2 + 1):
            raise ValueError("beta must be (m1+1) x (m2+1)")
        tol = 1e-8
        if np.max(np.abs(b[0, :])) > tol or np.max(np.abs(b[:, 0])) > tol:
            raise ValueError("boundary condition beta(0,.) = beta(.,0) = 0 violated")
        v2 = np.arange(self.m2 + 1) / self.m2
        v1 = np.arange(self.m1 + 1) / self.m1
        if np.max(np.abs(b[-1, :] - v2)) > tol or np.max(np.abs(b[:, -1] - v1)) > tol:
            raise ValueError("boundary condition beta(1,v) = v violated")
        d2 = b[1:, 1:] - b[1:, :-1] - b[:-1, 1:] + b[:-1, :-1]
        if np.min(d2) < -tol:
            raise ValueError("second-order differences must be nonnegative")


class Interval(NamedTuple):
    """Closed interval of feasible values for a coupling functional."""

    lower: float
    upper: float


@dataclass(frozen=True)
class CVaR:
    """Functional E[Delta | Delta < threshold]."""

    threshold: float


@dataclass(frozen=True)
class DisadvantagedGain:
    """Functional E[Y1 - Y0 | Y0 < threshold]."""

    threshold: float


# ---------------------------------------------------------------------------
# curve plumbing


def _curve_values(q: QuantileCurve, probs: np.ndarray) -> np.ndarray:
    """Evaluate a grid curve at probabilities: smallest grid u >= p, else last."""
    idx = np.searchsorted(q.u_grid, np.asarray(probs, dtype=float) - 1e-12, side="left")
    return q.values[np.clip(idx, 0, q.u_grid.size - 1)]


def _curves_on_common_grid(q1: QuantileCurve, q0: QuantileCurve, k: Optional[int]):
    if k is None:
        if q1.u_grid.size != q0.u_grid.size:
            raise ValueError("curves must share grid resolution (or pass k)")
        k = q1.u_grid.size
    r = u_grid(k)
    return _curve_values(q1, r), _curve_values(q0, r), k


def default_t_grid(v1: np.ndarray, v0: np.ndarray, points: int = DEFAULT_T_POINTS) -> np.ndarray:
    """Equally spaced t values spanning the achievable grid differences."""
    lo = float(np.min(v1) - np.max(v0))
    hi = float(np.max(v1) - np.min(v0))
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    return np.linspace(lo, hi, points)


def _assemble_envelopes(t_grid, lower, upper) -> DeltaCdfBounds:
    """Clip and monotonize LP-produced envelopes (cumulative max in t)."""
    lo = np.maximum.accumulate(np.clip(lower, 0.0, 1.0))
    up = np.maximum.accumulate(np.clip(upper, 0.0, 1.0))
    up = np.maximum(up, lo)
    return DeltaCdfBounds(t_grid, lo, up)


# ---------------------------------------------------------------------------
# the unrestricted problem: closed form on the grid


def _staircase_envelopes(v1, v0, t_grid):
    """Exact lower/upper envelopes of the coupling LP without shape constraints.

    With both marginals uniform on k sorted atoms, min/max of
    sum 1{q1_i - q0_j <= t} c(i,j) over couplings reduce to order statistics
    of the cross differences; this evaluates them in O(k) per t.
    """
    v1 = np.asarray(v1, float)
    v0 = np.asarray(v0, float)
    t = np.asarray(t_grid, float)
    k = v1.size
    i_arr = np.arange(1, k + 1)
    b = np.searchsorted(v0, (v1[:, None] - t[None, :]).ravel(), side="left")
    g = i_arr[:, None] - b.reshape(k, t.size)
    f_lower = np.clip(g.max(axis=0), 0, k) / k
    f_upper = np.clip(k - 1 + g.min(axis=0), 0, k) / k
    return f_lower, f_upper


def _staircase_qote(v1, v0, tau):
    """Exact quantile-scale optimum of the unrestricted coupling program."""
    k = v1.size
    m = int(np.ceil(k * tau - 1e-12))
    m = min(max(m, 1), k)
    lower = float(np.max(v1[:m] - v0[k - m :]))
    upper = float(np.min(v1[m - 1 :] - v0[: k - m + 1]))
    return lower, upper


def makarov_bounds(q1: QuantileCurve, q0: QuantileCurve, tau: float) -> QoteBounds:
    """Sharp grid version of the marginal-only quantile bounds.

    lower = max over grid u in (0, tau] of Q_u(Y1) - Q_{1+u-tau}(Y0) and
    upper = min over grid u in [tau, 1) of Q_u(Y1) - Q_{u-tau}(Y0), with
    partner probabilities evaluated by the generalized-inverse conventions
    under which the grid bounds coincide with the exact optimum of the
    discretized coupling program (see the no-assumption LP equivalence tests).
    """
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    if q1.u_grid.size != q0.u_grid.size:
        raise ValueError("curves share grid resolution")
    v1, v0, k = _curves_on_common_grid(q1, q0, None)
    half = 1.0 / (2 * k)
    if tau < half - 1e-12 or tau > 1 - half + 1e-12:
        raise ValueError("no grid point in range (k too small)")
    lower, upper = _staircase_qote(v1, v0, tau)
    return QoteBounds(lower, upper)


# ---------------------------------------------------------------------------
# shape-constrained coupling LPs in copula-CDF coordinates


class _RowBuilder:
    """Accumulates sparse inequality rows with boundary values folded to the rhs."""

    def __init__(self):
        self.rows = []
        self.cols = []
        self.vals = []
        self.rhs = []
        self._n = 0

    def add_row(self, terms, rhs):
        for col, val in terms:
            self.rows.append(self._n)
            self.cols.append(col)
            self.vals.append(val)
        self.rhs.append(rhs)
        self._n += 1

    def matrix(self, nvar, dense=False):
        m = sp.csr_matrix(
            (self.vals, (self.rows, self.cols)), shape=(self._n, nvar)
        )
        return (m.toarray() if dense else m), np.asarray(self.rhs, float)


class _CopulaProgram:
    """Coupling LP over discrete copulas in cumulative (CDF) coordinates.

    Variables are S(i,j) = sum_{i'<=i, j'<=j} c(i',j') for interior grid
    points i, j in 1..k-1; the boundary values S(i,k) = i/k, S(k,j) = j/k are
    folded into right-hand sides. Mass nonnegativity becomes the family of
    2-increasingness rows; stochastic increasingness is coordinatewise
    concavity of S (equivalent to the partial-sum monotonicity of conditional
    survival functions); positive quadrant dependence is a plain variable
    lower bound S(i,j) >= ij/k^2.
    """

    def __init__(self, k: int, tag: str):
        if tag not in ("SI", "PQD"):
            raise ValueError("shape-constrained program needs SI or PQD")
        self.k = k
        self.tag = tag
        kk = k - 1
        self.nvar = kk * kk

        def var(i, j):
            return (i - 1) * kk + (j - 1)

        def fold(i, j, coef, terms):
            """Return rhs adjustment for S(i,j) entering a row with coef."""
            if i == 0 or j == 0:
                return 0.0
            if i == k or j == k:
                value = min(i, j) / k
                return -coef * value
            terms.append((var(i, j), coef))
            return 0.0

        rb = _RowBuilder()
        for i in range(1, k + 1):
            for j in range(1, k + 1):
                terms: list = []
                rhs = 0.0
                rhs += fold(i, j, -1.0, terms)
                rhs += fold(i - 1, j, 1.0, terms)
                rhs += fold(i, j - 1, 1.0, terms)
                rhs += fold(i - 1, j - 1, -1.0, terms)
                if terms:
                    rb.add_row(terms, rhs)
        if tag == "SI":
            for i in range(1, k):
                for j in range(1, k):
                    terms = []
                    rhs = 0.0
                    rhs += fold(i, j - 1, 1.0, terms)
                    rhs += fold(i, j + 1, 1.0, terms)
                    rhs += fold(i, j, -2.0, terms)
                    rb.add_row(terms, rhs)
                    terms = []
                    rhs = 0.0
                    rhs += fold(i - 1, j, 1.0, terms)
                    rhs += fold(i + 1, j, 1.0, terms)
                    rhs += fold(i, j, -2.0, terms)
                    rb.add_row(terms, rhs)

        self._a_sparse, self.b_le = rb.matrix(self.nvar)
        self._a_dense = None
        ii, jj = np.divmod(np.arange(self.nvar), kk)
        i_idx, j_idx = ii + 1, jj + 1
        self.ub = np.minimum(i_idx, j_idx) / k
        if tag == "PQD":
            self.lb = (i_idx * j_idx) / float(k * k)
        else:
            self.lb = np.zeros(self.nvar)

    def objective(self, v1, v0, t):
        """Linear form (coefs, const) with const + coefs . S = P(Delta <= t)."""
        k, kk = self.k, self.k - 1
        b = np.searchsorted(v0, v1 - t, side="left")
        coefs = np.zeros(self.nvar)
        const = 1.0
        for i in range(1, k + 1):
            bi = int(b[i - 1])
            if bi == 0:
                continue
            if bi == k:
                const -= 1.0 / k
                continue
            if i <= kk:
                coefs[(i - 1) * kk + (bi - 1)] -= 1.0
            else:
                const -= bi / k
            if i >= 2:
                coefs[(i - 2) * kk + (bi - 1)] += 1.0
        return coefs, const

    def mass_bound(self, v1, v0, t, sense, engine="auto"):
        """One side (min or max) of P(Delta <= t) over the couplings."""
        coefs, const = self.objective(v1, v0, t)
        if not np.any(coefs):
            return min(max(const, 0.0), 1.0)
        use_simplex = engine == "simplex" or (engine == "auto" and self.k <= SIMPLEX_MAX_K)
        if use_simplex:
            if self._a_dense is None:
                self._a_dense = self._a_sparse.toarray()
            lp = LinearProgram(
                c=coefs,
                sense="minimize" if sense == "min" else "maximize",
                A_le=self._a_dense,
                b_le=self.b_le,
                lower=self.lb,
                upper=self.ub,
            )
            sol = solve_lp(lp)
            if sol.status != "optimal":
                raise RuntimeError(
                    f"coupling LP unexpectedly {sol.status} at t={t!r} ({self.tag})"
                )
            return const + sol.objective
        c = coefs if sense == "min" else -coefs
        res = _linprog(
            c,
            A_ub=self._a_sparse,
            b_ub=self.b_le,
            bounds=np.column_stack([self.lb, self.ub]),
            method="highs",
        )
        if res.status != 0:
            raise RuntimeError(
                f"coupling LP unexpectedly failed at t={t!r} ({self.tag}): {res.message}"
            )
        val = res.fun if sense == "min" else -res.fun
        return const + val

    def mass_bounds(self, v1, v0, t, engine="auto"):
        """(min, max) of P(Delta <= t) over the constrained couplings."""
        return (
            self.mass_bound(v1, v0, t, "min", engine),
            self.mass_bound(v1, v0, t, "max", engine),
        )


@functools.lru_cache(maxsize=32)
def _copula_program(k: int, tag: str) -> _CopulaProgram:
    return _CopulaProgram(k, tag)


def _marginal_lp_mass(v1, v0, t, sense, engine="auto"):
    """One unrestricted coupling LP in raw c(i,j) coordinates (test escape)."""
    k = v1.size
    indicator = ((v1[:, None] - v0[None, :]) <= t).astype(float).ravel()
    use_simplex = engine == "simplex" or (engine == "auto" and k <= SIMPLEX_MAX_K)
    rows = []
    cols = []
    vals = []
    for i in range(k):
        rows += [i] * k
        cols += list(range(i * k, (i + 1) * k))
        vals += [1.0] * k
    for j in range(k):
        rows += [k + j] * k
        cols += list(range(j, k * k, k))
        vals += [1.0] * k
    b_eq = np.full(2 * k, 1.0 / k)
    if use_simplex:
        a_eq = sp.csr_matrix((vals, (rows, cols)), shape=(2 * k, k * k)).toarray()
        sol = solve_lp(
            LinearProgram(
                c=indicator,
                sense="minimize" if sense == "min" else "maximize",
                A_eq=a_eq,
                b_eq=b_eq,
            )
        )
        if sol.status != "optimal":
            raise RuntimeError(f"marginal LP unexpectedly {sol.status} at t={t!r}")
        return sol.objective, sol.x.reshape(k, k)
    a_eq = sp.csr_matrix((vals, (rows, cols)), shape=(2 * k, k * k))
    c = indicator if sense == "min" else -indicator
    res = _linprog(c, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"marginal LP unexpectedly failed at t={t!r}: {res.message}")
    val = res.fun if sense == "min" else -res.fun
    return val, res.x.reshape(k, k)


def coupling_lp_bounds(
    q1: QuantileCurve,
    q0: QuantileCurve,
    assumptions: AssumptionSet = AssumptionSet(),
    t_grid=None,
    k: Optional[int] = None,
    engine: str = "auto",
) -> DeltaCdfBounds:
    """Envelopes of P(Delta <= t) over discretized couplings of the two curves.

    ``assumptions`` must be NoAssumption, SI, or PQD. The unrestricted case
    uses the exact closed form unless ``engine="lp"`` forces real solves;
    restricted cases solve two LPs per t (``engine`` in {"auto", "simplex",
    "highs"} picks the backend, auto by problem size).
    """
    tag = assumptions.tag
    if tag not in _LP_TAGS:
        raise ValueError(f"assumption {tag} not supported for the coupling LP")
    v1, v0, k = _curves_on_common_grid(q1, q0, k)
    if k < 2:
        raise ValueError("k must be at least 2")
    if t_grid is None:
        t_grid = default_t_grid(v1, v0)
    t_grid = np.asarray(t_grid, dtype=float)

    if tag == "NoAssumption":
        if engine in ("auto", "staircase"):
            f_lower, f_upper = _staircase_envelopes(v1, v0, t_grid)
        else:
            f_lower = np.empty(t_grid.size)
            f_upper = np.empty(t_grid.size)
            for idx, t in enumerate(t_grid):
                f_lower[idx], _ = _marginal_lp_mass(v1, v0, t, "min", engine)
                f_upper[idx], _ = _marginal_lp_mass(v1, v0, t, "max", engine)
    else:
        prog = _copula_program(k, tag)
        f_lower = np.empty(t_grid.size)
        f_upper = np.empty(t_grid.size)
        for idx, t in enumerate(t_grid):
            f_lower[idx], f_upper[idx] = prog.mass_bounds(v1, v0, t, engine)
    return _assemble_envelopes(t_grid, f_lower, f_upper)


def invert_bounds(b: DeltaCdfBounds, tau: float) -> QoteBounds:
    """Quantile bounds from CDF envelopes: invert upper for the lower bound.

    Returns grid values min{t : F(t) >= tau}; when tau falls outside the range
    an envelope spans on the grid, the corresponding endpoint is returned with
    a truncated flag.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    t = b.t_grid

    def invert(env):
        idx = int(np.searchsorted(env, tau, side="left"))
        if idx >= t.size:
            return float(t[-1]), True
        return float(t[idx]), bool(tau < env[0])

    lower, trunc_l = invert(b.upper)
    upper, trunc_u = invert(b.lower)
    return QoteBounds(lower, upper, truncated_lower=trunc_l, truncated_upper=trunc_u)


def invert_envelope_lazily(t_grid, evaluate: Callable[[int], float], tau: float):
    """min{t in grid : F(t_index) >= tau} touching only bisection indices.

    ``evaluate`` must be nondecreasing in the index. Returns (value, truncated)
    exactly as the dense inversion would.
    """
    t = np.asarray(t_grid, dtype=float)
    n = t.size
    last = evaluate(n - 1)
    if last < tau:
        return float(t[-1]), True
    lo, hi = 0, n - 1  # invariant: F(hi) >= tau
    first = evaluate(0)
    if first >= tau:
        return float(t[0]), bool(tau < first)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if evaluate(mid) >= tau:
            hi = mid
        else:
            lo = mid
    return float(t[hi]), False


def qote_coupling_bounds(
    q1: QuantileCurve,
    q0: QuantileCurve,
    tau: float,
    assumptions: AssumptionSet = AssumptionSet(),
    k: Optional[int] = None,
    t_grid=None,
    engine: str = "auto",
) -> QoteBounds:
    """Quantile bounds by inverting the coupling-LP envelopes.

    Identical to ``invert_bounds(coupling_lp_bounds(...), tau)`` but solves
    only the t values a bisection visits, which matters for the shape
    constrained programs.
    """
    tag = assumptions.tag
    if tag not in _LP_TAGS:
        raise ValueError(f"assumption {tag} not supported for the coupling LP")
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    v1, v0, k = _curves_on_common_grid(q1, q0, k)
    if t_grid is None:
        t_grid = default_t_grid(v1, v0)
    t_grid = np.asarray(t_grid, dtype=float)

    if tag == "NoAssumption":
        f_lower, f_upper = _staircase_envelopes(v1, v0, t_grid)
        return invert_bounds(_assemble_envelopes(t_grid, f_lower, f_upper), tau)

    prog = _copula_program(k, tag)
    cache: dict = {}

    def make_eval(sense):
        def evaluate(idx):
            if (sense, idx) not in cache:
                cache[(sense, idx)] = prog.mass_bound(
                    v1, v0, float(t_grid[idx]), sense, engine
                )
            return cache[(sense, idx)]

        return evaluate

    upper, trunc_u = invert_envelope_lazily(t_grid, make_eval("min"), tau)
    lower, trunc_l = invert_envelope_lazily(t_grid, make_eval("max"), tau)
    return QoteBounds(lower, upper, truncated_lower=trunc_l, truncated_upper=trunc_u)


# ---------------------------------------------------------------------------
# Bernstein copula programs


def _bernstein_prime(m: int, nodes: np.ndarray) -> np.ndarray:
    """Derivatives of the degree-m Bernstein basis at the nodes, rows v=0..m."""
    out = np.zeros((m + 1, nodes.size))
    pm1 = np.vstack([_binom.pmf(v, m - 1, nodes) for v in range(m)])
    for v in range(m + 1):
        hi = pm1[v - 1] if v >= 1 else 0.0
        lo = pm1[v] if v <= m - 1 else 0.0
        out[v] = m * (hi - lo)
    return out


class _BernsteinProgram:
    """LP over valid Bernstein copula coefficients with boundary values folded."""

    def __init__(self, m1: int, m2: int, tag: str):
        self.m1, self.m2, self.tag = m1, m2, tag
        n1, n2 = m1 - 1, m2 - 1
        self.nvar = n1 * n2

        def fold(v1, v2, coef, terms):
            if v1 == 0 or v2 == 0:
                return 0.0
            if v1 == m1:
                return -coef * (v2 / m2)
            if v2 == m2:
                return -coef * (v1 / m1)
            terms.append(((v1 - 1) * n2 + (v2 - 1), coef))
            return 0.0

        rb = _RowBuilder()
        # 2-increasingness (mass nonnegativity), written as <= 0 rows
        for a1 in range(1, m1 + 1):
            for a2 in range(1, m2 + 1):
                terms: list = []
                rhs = 0.0
                rhs += fold(a1, a2, -1.0, terms)
                rhs += fold(a1 - 1, a2, 1.0, terms)
                rhs += fold(a1, a2 - 1, 1.0, terms)
                rhs += fold(a1 - 1, a2 - 1, -1.0, terms)
                if terms:
                    rb.add_row(terms, rhs)
        if tag == "SI":
            for v1 in range(1, m1):
                for v2 in range(1, m2):
                    terms = []
                    rhs = 0.0
                    rhs += fold(v1, v2 - 1, 1.0, terms)
                    rhs += fold(v1, v2 + 1, 1.0, terms)
                    rhs += fold(v1, v2, -2.0, terms)
                    rb.add_row(terms, rhs)
                    terms = []
                    rhs = 0.0
                    rhs += fold(v1 - 1, v2, 1.0, terms)
                    rhs += fold(v1 + 1, v2, 1.0, terms)
                    rhs += fold(v1, v2, -2.0, terms)
                    rb.add_row(terms, rhs)
        self._a_sparse, self.b_le = rb.matrix(max(self.nvar, 1))
        self._a_dense = None
        if self.nvar:
            vv1, vv2 = np.divmod(np.arange(self.nvar), n2)
            v1_idx, v2_idx = vv1 + 1, vv2 + 1
            self.ub = np.minimum(v1_idx / m1, v2_idx / m2)
            if tag == "PQD":
                self.lb = (v1_idx / m1) * (v2_idx / m2)
            else:
                self.lb = np.zeros(self.nvar)
        else:
            self.ub = np.zeros(0)
            self.lb = np.zeros(0)

    def solve(self, coefs, const, sense, engine="auto"):
        if self.nvar == 0 or not np.any(coefs):
            return min(max(const, 0.0), 1.0)
        use_simplex = engine == "simplex" or (
            engine == "auto" and max(self.m1, self.m2) <= SIMPLEX_MAX_DEGREE
        )
        if use_simplex:
            if self._a_dense is None:
                self._a_dense = self._a_sparse.toarray()
            sol = solve_lp(
                LinearProgram(
                    c=coefs,
                    sense="minimize" if sense == "min" else "maximize",
                    A_le=self._a_dense,
                    b_le=self.b_le,
                    lower=self.lb,
                    upper=self.ub,
                )
            )
            if sol.status != "optimal":
                raise RuntimeError(f"Bernstein LP unexpectedly {sol.status}")
            return const + sol.objective
        c = coefs if sense == "min" else -coefs
        res = _linprog(
            c,
            A_ub=self._a_sparse,
            b_ub=self.b_le,
            bounds=np.column_stack([self.lb, self.ub]),
            method="highs",
        )
        if res.status != 0:
            raise RuntimeError(f"Bernstein LP unexpectedly failed: {res.message}")
        return const + (res.fun if sense == "min" else -res.fun)

    def full_beta(self, x) -> np.ndarray:
        m1, m2, n2 = self.m1, self.m2, self.m2 - 1
        beta = np.zeros((m1 + 1, m2 + 1))
        beta[m1, :] = np.arange(m2 + 1) / m2
        beta[:, m2] = np.arange(m1 + 1) / m1
        if self.nvar:
            beta[1:m1, 1:m2] = np.asarray(x).reshape(m1 - 1, n2)
        return beta


@functools.lru_cache(maxsize=32)
def _bernstein_program(m1: int, m2: int, tag: str) -> _BernsteinProgram:
    return _BernsteinProgram(m1, m2, tag)


def _bernstein_weight_data(q1, q0, m1, m2, quad_points):
    nodes = (np.arange(quad_points) + 0.5) / quad_points
    q1n = _curve_values(q1, nodes)
    q0n = _curve_values(q0, nodes)
    a1 = _bernstein_prime(m1, nodes) / quad_points
    a0 = _bernstein_prime(m2, nodes) / quad_points
    # suffix sums over nodes, one extra zero column for "no node included"
    r0 = np.hstack([np.cumsum(a0[:, ::-1], axis=1)[:, ::-1], np.zeros((m2 + 1, 1))])
    return nodes, q1n, q0n, a1, r0


def bernstein_lp_bounds(
    q1: QuantileCurve,
    q0: QuantileCurve,
    assumptions: AssumptionSet = AssumptionSet(),
    t_grid=None,
    m1: int = 15,
    m2: int = 15,
    quad_points: int = 200,
    engine: str = "auto",
) -> DeltaCdfBounds:
    """Envelopes of P(Delta <= t) over Bernstein copulas of degrees (m1, m2).

    The integral of the indicator against the Bernstein copula density is
    precomputed on a quad_points^2 tensor midpoint grid; the optimization over
    valid coefficient matrices (optionally shape constrained) is an LP per t.
    """
    tag = assumptions.tag
    if tag not in _LP_TAGS:
        raise ValueError(f"assumption {tag} not supported for the coupling LP")
    if m1 < 1 or m2 < 1:
        raise ValueError("degrees m1, m2 must be at least 1")
    if t_grid is None:
        t_grid = default_t_grid(q1.values, q0.values)
    t_grid = np.asarray(t_grid, dtype=float)
    _, q1n, q0n, a1, r0 = _bernstein_weight_data(q1, q0, m1, m2, quad_points)
    prog = _bernstein_program(m1, m2, tag if tag != "NoAssumption" else "none")

    f_lower = np.empty(t_grid.size)
    f_upper = np.empty(t_grid.size)
    for idx, t in enumerate(t_grid):
        js = np.searchsorted(q0n, q1n - t, side="left")
        w = a1 @ r0[:, js].T  # (m1+1) x (m2+1) indicator integrals
        const = float(np.arange(m2 + 1) / m2 @ w[m1, :])
        const += float(np.arange(m1) / m1 @ w[:m1, m2])
        if prog.nvar:
            coefs = w[1:m1, 1:m2].ravel()
        else:
            coefs = np.zeros(0)
        f_lower[idx] = prog.solve(coefs, const, "min", engine)
        f_upper[idx] = prog.solve(coefs, const, "max", engine)
    return _assemble_envelopes(t_grid, f_lower, f_upper)


def bernstein_optimal_coefs(
    q1: QuantileCurve,
    q0: QuantileCurve,
    assumptions: AssumptionSet,
    t: float,
    m1: int = 15,
    m2: int = 15,
    quad_points: int = 200,
    sense: str = "min",
) -> BernsteinCoefs:
    """Coefficient matrix attaining one envelope value at one t (diagnostics)."""
    tag = assumptions.tag
    if tag not in _LP_TAGS:
        raise ValueError(f"assumption {tag} not supported for the coupling LP")
    _, q1n, q0n, a1, r0 = _bernstein_weight_data(q1, q0, m1, m2, quad_points)
    prog = _bernstein_program(m1, m2, tag if tag != "NoAssumption" else "none")
    js = np.searchsorted(q0n, q1n - t, side="left")
    w = a1 @ r0[:, js].T
    if prog.nvar == 0:
        return BernsteinCoefs(m1, m2, prog.full_beta(np.zeros(0)))
    coefs = w[1:m1, 1:m2].ravel()
    if prog._a_dense is None:
        prog._a_dense = prog._a_sparse.toarray()
    sol = solve_lp(
        LinearProgram(
            c=coefs,
            sense="minimize" if sense == "min" else "maximize",
            A_le=prog._a_dense,
            b_le=prog.b_le,
            lower=prog.lb,
            upper=prog.ub,
        )
    )
    if sol.status != "optimal":
        raise RuntimeError(f"Bernstein LP unexpectedly {sol.status}")
    return BernsteinCoefs(m1, m2, prog.full_beta(sol.x))


# ---------------------------------------------------------------------------
# point-identifying assumptions


def rank_invariance_qote(q1: QuantileCurve, q0: QuantileCurve, tau: float) -> float:
    """Quantile of the comonotone-coupling effect: tau-quantile of {q1(u) - q0(u)}."""
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    if q1.u_grid.size != q0.u_grid.size:
        raise ValueError("curves share grid resolution")
    diffs = np.sort(q1.values - q0.values)
    idx = int(np.ceil(tau * diffs.size)) - 1
    return float(diffs[max(idx, 0)])


def symmetry_median_qote(ate: float) -> float:
    """Median treatment effect under symmetric effects: exactly the mean."""
    return float(ate)


# ---------------------------------------------------------------------------
# linear-fractional coupling functionals


def _cform_constraints(k: int, tag: str):
    """Marginal equalities and shape rows for raw c(i,j) coordinates."""
    n = k * k
    rows, cols, vals = [], [], []
    for i in range(k):
        rows += [i] * k
        cols += list(range(i * k, (i + 1) * k))
        vals += [1.0] * k
    for j in range(k):
        rows += [k + j] * k
        cols += list(range(j, n, k))
        vals += [1.0] * k
    a_eq = sp.csr_matrix((vals, (rows, cols)), shape=(2 * k, n))
    b_eq = np.full(2 * k, 1.0 / k)

    rb = _RowBuilder()
    if tag == "SI":
        for i in range(k - 1):
            for j in range(k - 1):
                terms = []
                for i2 in range(i + 1, k):
                    terms.append((i2 * k + j, 1.0))
                    terms.append((i2 * k + j + 1, -1.0))
                rb.add_row(terms, 0.0)
                terms = []
                for j2 in range(j + 1, k):
                    terms.append((i * k + j2, 1.0))
                    terms.append(((i + 1) * k + j2, -1.0))
                rb.add_row(terms, 0.0)
    elif tag == "PQD":
        for i in range(k - 1):
            for j in range(k - 1):
                terms = [(i2 * k + j2, -1.0) for i2 in range(i + 1) for j2 in range(j + 1)]
                rb.add_row(terms, -((i + 1) * (j + 1)) / float(k * k))
    a_le, b_le = rb.matrix(n)
    return a_eq, b_eq, a_le, b_le


def _solve_generic(c, sense, a_eq, b_eq, a_le, b_le, n, use_simplex):
    if use_simplex:
        sol = solve_lp(
            LinearProgram(
                c=c,
                sense="minimize" if sense == "min" else "maximize",
                A_eq=np.asarray(a_eq.todense()) if sp.issparse(a_eq) else a_eq,
                b_eq=b_eq,
                A_le=(np.asarray(a_le.todense()) if sp.issparse(a_le) else a_le)
                if a_le is not None and a_le.shape[0]
                else None,
                b_le=b_le if a_le is not None and a_le.shape[0] else None,
            )
        )
        if sol.status != "optimal":
            raise RuntimeError(f"functional LP unexpectedly {sol.status}")
        return sol.objective, sol.x
    cc = np.asarray(c, float) if sense == "min" else -np.asarray(c, float)
    res = _linprog(
        cc,
        A_eq=a_eq,
        b_eq=b_eq,
        A_ub=a_le if a_le is not None and a_le.shape[0] else None,
        b_ub=b_le if a_le is not None and a_le.shape[0] else None,
        bounds=(0, None),
        method="highs",
    )
    if res.status != 0:
        raise RuntimeError(f"functional LP unexpectedly failed: {res.message}")
    return (res.fun if sense == "min" else -res.fun), res.x


def functional_bounds(
    q1: QuantileCurve,
    q0: QuantileCurve,
    assumptions: AssumptionSet,
    functional,
    k: Optional[int] = None,
    engine: str = "auto",
) -> Interval:
    """Bounds on a conditional-mean coupling functional via Charnes-Cooper.

    ``functional`` is CVaR(threshold) for E[Delta | Delta < threshold] or
    DisadvantagedGain(threshold) for E[Y1 - Y0 | Y0 < threshold]. Both are
    linear-fractional in the coupling mass; each endpoint is one LP after the
    Charnes-Cooper change of variables. An auxiliary LP first verifies the
    conditioning event has positive mass under every feasible coupling.
    """
    tag = assumptions.tag
    if tag not in _LP_TAGS:
        raise ValueError(f"assumption {tag} not supported for the coupling LP")
    v1, v0, k = _curves_on_common_grid(q1, q0, k)
    n = k * k
    delta = v1[:, None] - v0[None, :]
    if isinstance(functional, CVaR):
        event = (delta < functional.threshold).astype(float)
        if not (delta.min() < functional.threshold <= delta.max() + 1e-12):
            raise ValueError("threshold outside the support spanned by the grids")
    elif isinstance(functional, DisadvantagedGain):
        event = np.broadcast_to((v0 < functional.threshold).astype(float), (k, k)).copy()
        if not (v0.min() < functional.threshold <= v0.max() + 1e-12):
            raise ValueError("threshold outside the support spanned by the grids")
    else:
        raise TypeError("functional must be CVaR or DisadvantagedGain")
    numer = delta * event
    e = event.ravel()
    a = numer.ravel()

    use_simplex = engine == "simplex" or (engine == "auto" and k <= SIMPLEX_MAX_K)
    a_eq, b_eq, a_le, b_le = _cform_constraints(k, tag)

    min_mass, _ = _solve_generic(e, "min", a_eq, b_eq, a_le, b_le, n, use_simplex)
    if min_mass <= 1e-9:
        raise ValueError("conditioning event not uniformly positive")

    # Charnes-Cooper: variables (y, s), y = s*c, e.y = 1, homogenized rows.
    s_col_eq = np.full((2 * k, 1), -1.0 / k)
    cc_a_eq = sp.hstack([a_eq, sp.csr_matrix(s_col_eq)], format="csr")
    cc_a_eq = sp.vstack(
        [cc_a_eq, sp.csr_matrix(np.concatenate([e, [0.0]])[None, :])], format="csr"
    )
    cc_b_eq = np.concatenate([np.zeros(2 * k), [1.0]])
    if a_le.shape[0]:
        s_col_le = -np.asarray(b_le, float).reshape(-1, 1)
        cc_a_le = sp.hstack([a_le, sp.csr_matrix(s_col_le)], format="csr")
        cc_b_le = np.zeros(a_le.shape[0])
    else:
        cc_a_le, cc_b_le = None, None
    cc_c = np.concatenate([a, [0.0]])

    lo, _ = _solve_generic(cc_c, "min", cc_a_eq, cc_b_eq, cc_a_le, cc_b_le, n + 1, use_simplex)
    hi, _ = _solve_generic(cc_c, "max", cc_a_eq, cc_b_eq, cc_a_le, cc_b_le, n + 1, use_simplex)
    return Interval(float(lo), float(hi))


def delta_bounds_to_csv(b: DeltaCdfBounds) -> str:
    """Serialize CDF envelopes as ``t,lower,upper`` CSV text."""
    lines = ["t,lower,upper"]
    for t, lo, up in zip(b.t_grid, b.lower, b.upper):
        lines.append(f"{t:.10g},{lo:.10g},{up:.10g}")
    return "\n".join(lines) + "\n"
