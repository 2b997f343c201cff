import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from oracles import (
    cvar_bounds_by_permutations,
    is_two_increasing,
    lp_vertices,
    normal_ppf,
    permutation_couplings,
    si_partial_sums_ok,
)
from qotepolicy.bounds import (
    AssumptionSet,
    BernsteinCoefs,
    Coupling,
    CVaR,
    DeltaCdfBounds,
    DisadvantagedGain,
    QoteBounds,
    _cform_constraints,
    _copula_program,
    _marginal_lp_mass,
    _staircase_envelopes,
    _staircase_qote,
    bernstein_lp_bounds,
    bernstein_optimal_coefs,
    coupling_lp_bounds,
    default_t_grid,
    delta_bounds_to_csv,
    functional_bounds,
    invert_bounds,
    makarov_bounds,
    qote_coupling_bounds,
    rank_invariance_qote,
    symmetry_median_qote,
)
from qotepolicy.marginals import QuantileCurve, u_grid


def curve(values):
    values = np.asarray(values, dtype=float)
    return QuantileCurve(u_grid(values.size), np.sort(values))


def brute_quantile_bounds(v1, v0, tau):
    """Sharp discrete bounds by enumerating every permutation coupling."""
    k = v1.size
    qs = []
    for c in permutation_couplings(k):
        idx = np.argwhere(c > 0)
        diffs = np.sort(v1[idx[:, 0]] - v0[idx[:, 1]])
        qs.append(diffs[int(np.ceil(tau * k)) - 1])
    return min(qs), max(qs)


# ---------------------------------------------------------------------------
# assumptions and containers


def test_assumption_set_tags():
    assert AssumptionSet().tag == "NoAssumption"
    AssumptionSet("SI")
    AssumptionSet("PQD")
    AssumptionSet("RankInvariance")
    AssumptionSet("Symmetry")
    with pytest.raises(ValueError, match="assumption SD not supported"):
        AssumptionSet("SD")
    with pytest.raises(ValueError, match="unknown assumption tag"):
        AssumptionSet("monotone")


def test_qote_bounds_ordering():
    b = QoteBounds(-1.0, 2.0)
    assert not b.truncated_lower and not b.truncated_upper
    with pytest.raises(ValueError, match="exceeds"):
        QoteBounds(2.0, -1.0)


def test_delta_cdf_bounds_validation():
    DeltaCdfBounds([0.0, 1.0], [0.1, 0.2], [0.3, 0.4])
    with pytest.raises(ValueError, match="increasing"):
        DeltaCdfBounds([1.0, 0.0], [0.1, 0.2], [0.3, 0.4])
    with pytest.raises(ValueError, match="nondecreasing"):
        DeltaCdfBounds([0.0, 1.0], [0.2, 0.1], [0.3, 0.4])
    with pytest.raises(ValueError, match="not exceed"):
        DeltaCdfBounds([0.0, 1.0], [0.5, 0.5], [0.3, 0.6])


def test_coupling_validation():
    Coupling(2, np.full((2, 2), 0.25))
    with pytest.raises(ValueError, match="row sums"):
        Coupling(2, np.array([[0.5, 0.25], [0.0, 0.25]]))
    with pytest.raises(ValueError, match="nonnegative"):
        Coupling(2, np.array([[0.6, -0.1], [-0.1, 0.6]]))


# ---------------------------------------------------------------------------
# unrestricted bounds: closed form against brute force


def test_staircase_hand_case():
    v = np.array([0.0, 1.0, 2.0, 3.0])
    # tau = 0.5 picks m = 2: lower = max(v1[:2] - v0[2:]), upper = min pairs
    assert _staircase_qote(v, v, 0.5) == (-2.0, 1.0)
    assert _staircase_qote(v, v, 0.25) == (-3.0, 0.0)
    assert _staircase_qote(v, v, 0.75) == (-1.0, 2.0)


def test_makarov_bounds_wraps_staircase():
    q1, q0 = curve([0.0, 1.0, 2.0, 3.0]), curve([0.0, 1.0, 2.0, 3.0])
    b = makarov_bounds(q1, q0, 0.5)
    assert (b.lower, b.upper) == (-2.0, 1.0)


def test_makarov_bounds_errors():
    q = curve([0.0, 1.0, 2.0])
    with pytest.raises(ValueError, match="tau"):
        makarov_bounds(q, q, 0.0)
    with pytest.raises(ValueError, match="k too small"):
        makarov_bounds(q, q, 0.1)
    with pytest.raises(ValueError, match="k too small"):
        makarov_bounds(q, q, 0.9)
    q5 = curve(np.arange(5.0))
    with pytest.raises(ValueError, match="share grid resolution"):
        makarov_bounds(q, q5, 0.5)


@given(st.integers(0, 2**32 - 1), st.floats(0.15, 0.85))
@settings(max_examples=25, deadline=None)
def test_staircase_matches_permutation_enumeration(seed, tau):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(2, 6))
    v1 = np.sort(rng.normal(size=k))
    v0 = np.sort(rng.normal(size=k))
    if tau < 1 / (2 * k) or tau > 1 - 1 / (2 * k):
        return
    lo, up = _staircase_qote(v1, v0, tau)
    blo, bup = brute_quantile_bounds(v1, v0, tau)
    assert lo == pytest.approx(blo, abs=1e-12)
    assert up == pytest.approx(bup, abs=1e-12)


def test_makarov_bounds_widen_with_tau_at_the_right_end():
    q1 = curve(normal_ppf(u_grid(200), 1.0, 2.0))
    q0 = curve(normal_ppf(u_grid(200), 0.0, 1.0))
    bs = [makarov_bounds(q1, q0, t) for t in (0.25, 0.5, 0.75)]
    assert np.all(np.diff([b.lower for b in bs]) > 0)
    assert np.all(np.diff([b.upper for b in bs]) > 0)


# ---------------------------------------------------------------------------
# CDF-scale envelopes


def test_staircase_envelopes_match_forced_lp():
    rng = np.random.default_rng(11)
    v1 = np.sort(rng.normal(size=6))
    v0 = np.sort(rng.normal(size=6))
    t_grid = default_t_grid(v1, v0, 9)
    f_lo, f_up = _staircase_envelopes(v1, v0, t_grid)
    for idx, t in enumerate(t_grid):
        lo_s, c_lo = _marginal_lp_mass(v1, v0, t, "min", "simplex")
        up_s, c_up = _marginal_lp_mass(v1, v0, t, "max", "simplex")
        lo_h, _ = _marginal_lp_mass(v1, v0, t, "min", "highs")
        up_h, _ = _marginal_lp_mass(v1, v0, t, "max", "highs")
        assert f_lo[idx] == pytest.approx(lo_s, abs=1e-10)
        assert f_up[idx] == pytest.approx(up_s, abs=1e-10)
        assert lo_s == pytest.approx(lo_h, abs=1e-9)
        assert up_s == pytest.approx(up_h, abs=1e-9)
        # the attaining couplings are feasible and attain the reported mass
        for c, val in ((c_lo, lo_s), (c_up, up_s)):
            Coupling(6, c)
            mass = float(np.sum(c[(v1[:, None] - v0[None, :]) <= t]))
            assert mass == pytest.approx(val, abs=1e-9)


def test_coupling_lp_bounds_unrestricted_envelopes_are_cdf_like():
    q1 = curve(normal_ppf(u_grid(12), 0.5, 1.0))
    q0 = curve(normal_ppf(u_grid(12), 0.0, 1.5))
    env = coupling_lp_bounds(q1, q0)
    assert env.t_grid.size == 201
    assert np.all(env.lower <= env.upper + 1e-12)
    assert np.all(np.diff(env.lower) >= -1e-12)
    assert np.all(np.diff(env.upper) >= -1e-12)
    assert env.lower[0] == pytest.approx(0.0, abs=1e-12)
    assert env.upper[-1] == pytest.approx(1.0, abs=1e-12)


def test_coupling_lp_rejects_point_identifying_tags():
    q = curve(np.arange(4.0))
    for tag in ("RankInvariance", "Symmetry"):
        with pytest.raises(ValueError, match="not supported for the coupling LP"):
            coupling_lp_bounds(q, q, AssumptionSet(tag))
        with pytest.raises(ValueError, match="not supported for the coupling LP"):
            qote_coupling_bounds(q, q, 0.5, AssumptionSet(tag))


def test_k3_coupling_lp_matches_vertex_enumeration():
    rng = np.random.default_rng(2)
    v1 = np.sort(rng.normal(size=3))
    v0 = np.sort(rng.normal(size=3))
    a_eq, b_eq, a_le, b_le = _cform_constraints(3, "NoAssumption")
    assert a_le.shape[0] == 0
    vertices = lp_vertices(a_eq.toarray(), b_eq)
    assert len(vertices) == 6  # permutation couplings
    for t in np.quantile(v1[:, None] - v0[None, :], [0.2, 0.5, 0.8]):
        weights = ((v1[:, None] - v0[None, :]) <= t).ravel().astype(float)
        masses = [float(weights @ v) for v in vertices]
        lo, _ = _marginal_lp_mass(v1, v0, t, "min", "simplex")
        up, _ = _marginal_lp_mass(v1, v0, t, "max", "simplex")
        assert lo == pytest.approx(min(masses), abs=1e-7)
        assert up == pytest.approx(max(masses), abs=1e-7)


# ---------------------------------------------------------------------------
# shape-constrained programs


def test_si_and_pqd_envelopes_nest_inside_unrestricted():
    q1 = curve(normal_ppf(u_grid(6), 1.0, 2.0))
    q0 = curve(normal_ppf(u_grid(6), 0.0, 1.0))
    t_grid = default_t_grid(q1.values, q0.values, 15)
    env_none = coupling_lp_bounds(q1, q0, AssumptionSet(), t_grid=t_grid)
    for tag in ("SI", "PQD"):
        env = coupling_lp_bounds(q1, q0, AssumptionSet(tag), t_grid=t_grid)
        assert np.all(env.lower >= env_none.lower - 1e-9)
        assert np.all(env.upper <= env_none.upper + 1e-9)
        assert np.all(env.lower <= env.upper + 1e-9)


def test_independence_mass_lies_inside_every_envelope():
    rng = np.random.default_rng(4)
    v1 = np.sort(rng.normal(size=6))
    v0 = np.sort(rng.normal(size=6))
    q1, q0 = QuantileCurve(u_grid(6), v1), QuantileCurve(u_grid(6), v0)
    t_grid = default_t_grid(v1, v0, 11)
    indep = np.array(
        [np.mean((v1[:, None] - v0[None, :]) <= t) for t in t_grid]
    )
    for tag in ("NoAssumption", "SI", "PQD"):
        env = coupling_lp_bounds(q1, q0, AssumptionSet(tag), t_grid=t_grid)
        assert np.all(env.lower <= indep + 1e-9)
        assert np.all(env.upper >= indep - 1e-9)


def test_lazy_quantile_inversion_matches_dense_route():
    q1 = curve(normal_ppf(u_grid(6), 0.3, 1.4))
    q0 = curve(normal_ppf(u_grid(6), 0.0, 0.8))
    t_grid = default_t_grid(q1.values, q0.values, 41)
    for tag in ("SI", "PQD"):
        dense = invert_bounds(
            coupling_lp_bounds(q1, q0, AssumptionSet(tag), t_grid=t_grid), 0.3
        )
        lazy = qote_coupling_bounds(
            q1, q0, 0.3, AssumptionSet(tag), t_grid=t_grid
        )
        assert lazy.lower == pytest.approx(dense.lower, abs=1e-12)
        assert lazy.upper == pytest.approx(dense.upper, abs=1e-12)
        assert lazy.truncated_lower == dense.truncated_lower
        assert lazy.truncated_upper == dense.truncated_upper


def test_mass_bounds_engines_agree_on_shape_constrained_case():
    rng = np.random.default_rng(9)
    v1 = np.sort(rng.normal(size=5))
    v0 = np.sort(rng.normal(size=5))
    for tag in ("SI", "PQD"):
        prog = _copula_program(5, tag)
        for t in np.linspace(v1.min() - v0.max(), v1.max() - v0.min(), 7):
            for sense in ("min", "max"):
                simplex = prog.mass_bound(v1, v0, float(t), sense, "simplex")
                highs = prog.mass_bound(v1, v0, float(t), sense, "highs")
                assert simplex == pytest.approx(highs, abs=1e-8)


def test_si_vertices_satisfy_independent_shape_checks():
    a_eq, b_eq, a_le, b_le = _cform_constraints(4, "SI")
    rng = np.random.default_rng(1)
    import scipy.optimize

    for _ in range(20):
        res = scipy.optimize.linprog(
            rng.normal(size=16), A_eq=a_eq, b_eq=b_eq, A_ub=a_le, b_ub=b_le,
            bounds=(0, None), method="highs",
        )
        assert res.status == 0
        c = res.x.reshape(4, 4)
        assert is_two_increasing(c)
        assert si_partial_sums_ok(c)


# ---------------------------------------------------------------------------
# quantile-scale inversion


def test_invert_bounds_hand_case_and_truncation():
    env = DeltaCdfBounds(
        [0.0, 1.0, 2.0, 3.0], [0.0, 0.1, 0.4, 0.9], [0.2, 0.5, 0.8, 1.0]
    )
    b = invert_bounds(env, 0.45)
    assert b.lower == 1.0  # min t with upper >= 0.45
    assert b.upper == 3.0  # min t with lower >= 0.45
    assert not b.truncated_lower and not b.truncated_upper
    b_hi = invert_bounds(env, 0.95)
    assert b_hi.upper == 3.0 and b_hi.truncated_upper
    env_flat = DeltaCdfBounds([0.0, 1.0], [0.3, 0.4], [0.6, 0.7])
    b_lo = invert_bounds(env_flat, 0.05)
    assert b_lo.lower == 0.0 and b_lo.truncated_lower
    with pytest.raises(ValueError, match="tau"):
        invert_bounds(env, 1.0)


# ---------------------------------------------------------------------------
# Bernstein relaxation


def test_bernstein_degree_one_is_independence():
    # with m1 = m2 = 1 every coefficient is a boundary value, so the copula
    # is forced to the independence copula and the envelopes collapse
    q1 = curve(normal_ppf(u_grid(8), 0.5, 1.0))
    q0 = curve(normal_ppf(u_grid(8), 0.0, 1.0))
    t_grid = default_t_grid(q1.values, q0.values, 9)
    env = bernstein_lp_bounds(q1, q0, m1=1, m2=1, t_grid=t_grid)
    assert_allclose(env.lower, env.upper, atol=1e-9)


def test_bernstein_envelopes_nest_and_stay_valid():
    q1 = curve(normal_ppf(u_grid(10), 0.5, 1.3))
    q0 = curve(normal_ppf(u_grid(10), 0.0, 0.9))
    t_grid = default_t_grid(q1.values, q0.values, 9)
    env_none = bernstein_lp_bounds(q1, q0, m1=4, m2=4, t_grid=t_grid)
    env_si = bernstein_lp_bounds(
        q1, q0, AssumptionSet("SI"), m1=4, m2=4, t_grid=t_grid
    )
    assert np.all(env_si.lower >= env_none.lower - 1e-9)
    assert np.all(env_si.upper <= env_none.upper + 1e-9)
    assert np.all(np.diff(env_none.lower) >= -1e-12)
    assert np.all(np.diff(env_none.upper) >= -1e-12)


def test_bernstein_smooths_the_coupling_envelopes():
    # the Bernstein family is a subset of all couplings, so its envelopes
    # must lie inside the unrestricted staircase envelopes
    q1 = curve(normal_ppf(u_grid(10), 0.5, 1.3))
    q0 = curve(normal_ppf(u_grid(10), 0.0, 0.9))
    t_grid = default_t_grid(q1.values, q0.values, 9)
    stair = coupling_lp_bounds(q1, q0, t_grid=t_grid, k=200)
    bern = bernstein_lp_bounds(q1, q0, m1=5, m2=5, t_grid=t_grid)
    assert np.all(bern.lower >= stair.lower - 5e-3)
    assert np.all(bern.upper <= stair.upper + 5e-3)


def test_bernstein_optimal_coefs_are_a_valid_copula():
    q1 = curve(normal_ppf(u_grid(10), 0.5, 1.3))
    q0 = curve(normal_ppf(u_grid(10), 0.0, 0.9))
    coefs = bernstein_optimal_coefs(
        q1, q0, AssumptionSet("SI"), t=0.0, m1=4, m2=4, sense="min"
    )
    assert isinstance(coefs, BernsteinCoefs)
    assert coefs.beta.shape == (5, 5)


def test_bernstein_coefs_validation():
    beta = np.outer(np.arange(3) / 2, np.arange(3) / 2)
    BernsteinCoefs(2, 2, beta)
    bad = beta.copy()
    bad[1, 1] = 0.9
    with pytest.raises(ValueError, match="second-order"):
        BernsteinCoefs(2, 2, bad)
    with pytest.raises(ValueError, match="boundary"):
        BernsteinCoefs(2, 2, np.ones((3, 3)))
    with pytest.raises(ValueError, match="degrees"):
        bernstein_lp_bounds(q1=curve([0.0, 1.0]), q0=curve([0.0, 1.0]), m1=0)


# ---------------------------------------------------------------------------
# point-identifying assumptions


def test_rank_invariance_quantile_of_comonotone_differences():
    q1 = curve([1.0, 2.0, 6.0])
    q0 = curve([0.0, 3.0, 4.0])
    # comonotone differences are (1, -1, 2); sorted (-1, 1, 2)
    assert rank_invariance_qote(q1, q0, 0.3) == -1.0
    assert rank_invariance_qote(q1, q0, 0.5) == 1.0
    assert rank_invariance_qote(q1, q0, 0.9) == 2.0


def test_rank_invariance_point_lies_inside_unrestricted_bounds():
    rng = np.random.default_rng(8)
    for _ in range(10):
        v1 = np.sort(rng.normal(size=7))
        v0 = np.sort(rng.normal(size=7))
        q1, q0 = QuantileCurve(u_grid(7), v1), QuantileCurve(u_grid(7), v0)
        for tau in (0.25, 0.5, 0.75):
            point = rank_invariance_qote(q1, q0, tau)
            b = makarov_bounds(q1, q0, tau)
            assert b.lower - 1e-12 <= point <= b.upper + 1e-12


def test_symmetry_median_equals_mean():
    assert symmetry_median_qote(1.75) == 1.75


# ---------------------------------------------------------------------------
# conditional-mean functionals


def test_cvar_matches_permutation_enumeration():
    rng = np.random.default_rng(14)
    for trial in range(5):
        v1 = np.sort(rng.normal(1.0, 1.5, size=4))
        v0 = np.sort(rng.normal(size=4))
        thr = float(np.median(v1[:, None] - v0[None, :]))
        q1, q0 = QuantileCurve(u_grid(4), v1), QuantileCurve(u_grid(4), v0)
        iv = functional_bounds(q1, q0, AssumptionSet(), CVaR(thr), k=4)
        blo, bup = cvar_bounds_by_permutations(v1, v0, thr)
        assert iv.lower == pytest.approx(blo, abs=1e-9)
        assert iv.upper == pytest.approx(bup, abs=1e-9)


def test_cvar_si_interval_nests_inside_unrestricted():
    v1 = np.sort(np.array([-0.5, 0.4, 1.2, 2.5]))
    v0 = np.sort(np.array([-1.0, 0.0, 0.3, 1.1]))
    q1, q0 = QuantileCurve(u_grid(4), v1), QuantileCurve(u_grid(4), v0)
    thr = 1.0
    iv_none = functional_bounds(q1, q0, AssumptionSet(), CVaR(thr), k=4)
    iv_si = functional_bounds(q1, q0, AssumptionSet("SI"), CVaR(thr), k=4)
    assert iv_none.lower - 1e-9 <= iv_si.lower
    assert iv_si.upper <= iv_none.upper + 1e-9


def test_disadvantaged_gain_conditions_on_the_control_margin():
    # conditioning event Y0 < thr fixes mass 1/2; bounds respect the
    # extreme conditional means computable by hand at k = 2
    q1 = curve([0.0, 2.0])
    q0 = curve([-1.0, 1.0])
    iv = functional_bounds(q1, q0, AssumptionSet(), DisadvantagedGain(0.0), k=2)
    # Y0 = -1 is the event; Y1 is 0 or 2 against it
    assert iv.lower == pytest.approx(1.0)
    assert iv.upper == pytest.approx(3.0)


def test_functional_bounds_errors():
    q1 = curve([0.0, 2.0])
    q0 = curve([-1.0, 1.0])
    with pytest.raises(ValueError, match="threshold outside"):
        functional_bounds(q1, q0, AssumptionSet(), CVaR(-10.0), k=2)
    with pytest.raises(ValueError, match="threshold outside"):
        functional_bounds(q1, q0, AssumptionSet(), DisadvantagedGain(-5.0), k=2)
    with pytest.raises(TypeError, match="functional"):
        functional_bounds(q1, q0, AssumptionSet(), "cvar", k=2)
    with pytest.raises(ValueError, match="not supported for the coupling LP"):
        functional_bounds(q1, q0, AssumptionSet("Symmetry"), CVaR(0.0), k=2)


# ---------------------------------------------------------------------------
# serialization


def test_delta_bounds_to_csv_format():
    env = DeltaCdfBounds([0.0, 0.5], [0.0, 0.25], [0.5, 1.0])
    assert delta_bounds_to_csv(env) == "t,lower,upper\n0,0,0.5\n0.5,0.25,1\n"


def test_default_t_grid_spans_the_cross_differences():
    v1 = np.array([0.0, 4.0])
    v0 = np.array([1.0, 3.0])
    grid = default_t_grid(v1, v0, 5)
    assert grid[0] == -3.0 and grid[-1] == 3.0 and grid.size == 5
