import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmimo.channel import Deployment, PathLossModel, draw_fading_state, scenario_deployment
from dmimo.qos import QoSSpec, load_to_nats
from dmimo.scenario import PowerPolicy, Scenario
from dmimo.single import (
    ENUMERATION_LIMIT,
    alpha_batch,
    envelope_vertices,
    exhaustive_select,
    fixed_cardinality_solve,
    ibs_ts_solve,
    incremental_select,
    minimize_usage_batch,
    ogbs_pt_solve,
    optimal_ts_solve,
    ordered_gain_select,
    probabilistic_capacity,
    probabilistic_mode,
    rate_envelope,
    state_gains,
    best_usage,
    time_sharing_capacity,
    usage_to_alpha,
)
from oracles import enumerate_best, golden_section, greedy_oracle, hull_value_lp, logdet_capacity

MODEL = PathLossModel.calibrated()
POWER = PowerPolicy(4.0, 2.4)
DEP = scenario_deployment("one_user_5bs")
BT = 1000.0


def _state(k, dep=DEP, seed=3):
    return draw_fading_state(dep, MODEL, seed, k)


def _blocks(state):
    return [state.block(0, m) for m in range(state.deployment.n_bs)]


def _scenario(load_kbps=800.0, n=1500, **kw):
    q = QoSSpec(load_to_nats(load_kbps * 1e3, 0.01), 5, 1e-4)
    return Scenario(DEP, MODEL, kw.pop("power", POWER), (q,), n_train=n, n_eval=n, **kw)


# --- subset selection -------------------------------------------------------

def test_incremental_full_and_single():
    s = _state(0)
    assert set(incremental_select(s, 5, POWER).subset) == set(range(5))
    one = incremental_select(s, 1, POWER)
    rates = [logdet_capacity(s.block(0, m), POWER.power(1), BT) for m in range(5)]
    assert one.subset == (int(np.argmax(rates)),)
    assert one.rate == pytest.approx(max(rates), rel=1e-9)


def test_incremental_matches_independent_greedy():
    for k in range(20):
        s = _state(k)
        ours = incremental_select(s, 3, POWER)
        assert list(ours.subset) == greedy_oracle(_blocks(s), 3, POWER.power, BT)


def test_incremental_beats_ordered_gain_mostly():
    wins = 0
    for k in range(1000):
        s = _state(k, seed=17)
        inc = incremental_select(s, 3, POWER)
        og = ordered_gain_select(state_gains(s), 3, s, POWER)
        wins += inc.rate >= og.rate * (1 - 1e-12)
    assert wins >= 950


def test_ordered_gain_examples():
    assert set(ordered_gain_select([0.5, 2.0, 1.0], 2).subset) == {1, 2}
    empty = ordered_gain_select([0.5, 2.0, 1.0], 0)
    assert empty.subset == () and empty.rate == 0.0
    assert ordered_gain_select([1.0, 1.0, 0.0], 1).subset == (0,)


def test_exhaustive_examples():
    dep3 = Deployment(DEP.bs_positions[:3], 2, DEP.user_positions, 2)
    assert set(exhaustive_select(_state(0, dep3), 3, POWER).subset) == {0, 1, 2}
    dep4 = Deployment(DEP.bs_positions[:4], 2, DEP.user_positions, 2)
    s = _state(1, dep4)
    ex = exhaustive_select(s, 2, POWER)
    rate, combo = enumerate_best(_blocks(s), 2, POWER.power(2), BT)
    assert ex.subset == combo
    assert ex.rate == pytest.approx(rate, rel=1e-9)


def test_exhaustive_dominates():
    for k in range(50):
        s = _state(k)
        for L in range(1, 5):
            ex = exhaustive_select(s, L, POWER).rate
            # rates are ~1e4 nats/frame, so the slack scales with them (column order changes rounding)
            slack = 1e-12 * ex
            assert ex >= incremental_select(s, L, POWER).rate - slack
            assert ex >= ordered_gain_select(state_gains(s), L, s, POWER).rate - slack


def test_exhaustive_guard():
    rng = np.random.default_rng(0)
    dep = Deployment(rng.uniform(-50, 50, (30, 2)), 1, [(0.0, 0.0)], 1)
    assert math.comb(30, 15) > ENUMERATION_LIMIT
    with pytest.raises(ValueError, match="enumeration limit"):
        exhaustive_select(_state(0, dep), 15, POWER)


# --- envelope ----------------------------------------------------------------

def test_envelope_example():
    env = rate_envelope([0, 1, 1.5, 2.2])
    assert env.vertices.tolist() == [0, 1, 3]
    assert np.allclose(env.slopes, [1.0, 0.6])
    assert env.value(2) == pytest.approx(1.6)
    assert env.value(2) == pytest.approx(hull_value_lp([0, 1, 1.5, 2.2], 2))


def test_envelope_linear_and_concave():
    c = 1.7
    lin = rate_envelope([0, c, 2 * c, 3 * c])
    assert lin.vertices.tolist() == [0, 3] and lin.slopes == pytest.approx([c])
    conc = rate_envelope([0, 3, 5, 6, 6.5])
    assert conc.vertices.tolist() == [0, 1, 2, 3, 4]


rates_st = st.lists(st.floats(0.0, 10.0), min_size=1, max_size=7).map(lambda x: np.concatenate([[0.0], np.cumsum(x)]))


@settings(max_examples=200, deadline=None)
@given(rates_st)
def test_envelope_invariants(r):
    env = rate_envelope(r)
    assert env.vertices[0] == 0 and env.vertices[-1] == r.size - 1
    assert np.all(np.diff(env.vertices) > 0)
    nu = env.slopes
    assert np.all(np.diff(nu) < 0)
    for u in np.linspace(0, r.size - 1, 4 * r.size - 3):
        assert env.value(u) >= hull_value_lp(r, u) - 1e-9 * max(1.0, r.max())


def test_usage_to_alpha_examples():
    env = rate_envelope([0, 1, 1.5, 2.2])
    a = usage_to_alpha(env, 2.0)
    assert a.tolist() == pytest.approx([0, 0.5, 0, 0.5])
    assert usage_to_alpha(env, 1.0).tolist() == [0, 1, 0, 0]
    assert usage_to_alpha(env, 0.0).tolist() == [1, 0, 0, 0]
    with pytest.raises(ValueError):
        usage_to_alpha(env, 3.5)


@settings(max_examples=200, deadline=None)
@given(rates_st, st.floats(0.0, 1.0))
def test_usage_to_alpha_posts(r, frac):
    env = rate_envelope(r)
    u = frac * (r.size - 1)
    a = usage_to_alpha(env, u)
    assert a.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.dot(a, np.arange(r.size)) == pytest.approx(u, abs=1e-9)
    assert np.dot(a, r) == pytest.approx(env.value(u), abs=1e-9 * max(1.0, r.max()))
    nz = np.flatnonzero(a)
    assert nz.size <= 2 and set(nz) <= set(env.vertices.tolist())
    if nz.size == 2:
        j = np.searchsorted(env.vertices, nz[0])
        assert env.vertices[j + 1] == nz[1]


def test_best_usage_examples():
    env = rate_envelope([0, 1, 1.5, 2.2])
    assert best_usage(env, 1.0, 3.0) == pytest.approx(1.0)
    assert best_usage(env, 1.0, 1e-9) == 0.0
    assert best_usage(env, 1.0, 0.0) == 0.0
    assert best_usage(env, 1.0, 1e9) == 3.0


@settings(max_examples=150, deadline=None)
@given(st.lists(st.floats(0.1, 3.0), min_size=1, max_size=6), st.floats(0.2, 2.0), st.floats(-2, 3))
def test_best_usage_matches_golden_section(incs, theta, log_lam):
    r = np.concatenate([[0.0], np.cumsum(incs)])
    lam = 10 ** log_lam
    env = rate_envelope(r)
    u = best_usage(env, theta, lam)
    ref = golden_section(lambda x: x + lam * math.exp(-theta * env.value(x)), 0.0, r.size - 1)
    assert abs(u - ref) <= 1e-6


def test_batch_minimiser_matches_scalar(rng):
    r = np.concatenate([np.zeros((200, 1)), np.cumsum(rng.exponential(1.0, (200, 5)), axis=1)], axis=1)
    u, rt = minimize_usage_batch(r, 0.7, 4.0)
    for i in range(200):
        env = rate_envelope(r[i])
        assert u[i] == pytest.approx(best_usage(env, 0.7, 4.0), abs=1e-12)
        assert rt[i] == pytest.approx(env.value(u[i]), abs=1e-9)


def test_alpha_batch_validity(rng):
    r = np.concatenate([np.zeros((300, 1)), np.cumsum(rng.exponential(1.0, (300, 5)), axis=1)], axis=1)
    u, rt = minimize_usage_batch(r, 0.5, 6.0)
    a = alpha_batch(r, u)
    assert np.allclose(a.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(a >= 0)
    assert np.allclose(a @ np.arange(6), u, atol=1e-9)
    assert np.allclose(np.sum(a * r, axis=1), rt, atol=1e-9)
    assert np.all(np.count_nonzero(a, axis=1) <= 2)


# --- probabilistic mode --------------------------------------------------------

def test_probabilistic_mode_example():
    r = np.array([0.0, 1.0, 2.0])
    obj = np.arange(3) + np.exp(-r)
    assert obj == pytest.approx([1.0, 1.368, 2.135], abs=1e-3)
    assert probabilistic_mode(r, 1.0, 1.0)[0] == 0
    assert probabilistic_mode(r, 1.0, 0.0)[0] == 0


@settings(max_examples=100, deadline=None)
@given(rates_st, st.floats(0.1, 2.0))
def test_probabilistic_mode_monotone_in_lambda(r, theta):
    modes = [probabilistic_mode(r, theta, lam)[0] for lam in np.geomspace(1e-3, 1e6, 60)]
    assert all(b >= a for a, b in zip(modes, modes[1:]))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 3.0))
def test_time_sharing_beats_probabilistic(seed, theta):
    rng = np.random.default_rng(seed)
    r = np.cumsum(rng.exponential(1.0, (40, 4)), axis=1)
    a = rng.dirichlet(np.ones(4), size=40)
    assert time_sharing_capacity(a, r, theta) >= probabilistic_capacity(a, r, theta) - 1e-12


def test_envelope_vertex_mask_batched(rng):
    r = np.concatenate([np.zeros((50, 1)), np.cumsum(rng.exponential(1.0, (50, 4)), axis=1)], axis=1)
    mask = envelope_vertices(r)
    for i in range(50):
        assert np.flatnonzero(mask[i]).tolist() == rate_envelope(r[i]).vertices.tolist()


# --- scheme solvers --------------------------------------------------------------

def test_infeasible_load_reports_cmax():
    sc = _scenario(load_kbps=50_000.0, n=300)
    for solve in (ibs_ts_solve, ogbs_pt_solve, optimal_ts_solve, fixed_cardinality_solve):
        pol = solve(sc)
        assert not pol.feasible and not pol.converged
        assert pol.c_max < sc.qos[0].arrival


def test_fixed_l_small_load_uses_one_bs():
    sc = _scenario(load_kbps=20.0, n=300)
    pol = fixed_cardinality_solve(sc)
    assert pol.fixed_L == 1 and pol.avg_usage == 1.0


@pytest.fixture(scope="module")
def solved():
    sc = _scenario(n=1500)
    return sc, {name: f(sc) for name, f in
                [("ibs", ibs_ts_solve), ("opt", optimal_ts_solve), ("og", ogbs_pt_solve),
                 ("fix", fixed_cardinality_solve)]}


def test_schemes_converge_on_training(solved):
    _, pols = solved
    for key in ("ibs", "opt", "og"):
        assert pols[key].converged, pols[key].track.summary()
        assert abs(pols[key].track.residual[0]) <= 5e-4


def test_scheme_usage_ordering(solved):
    _, p = solved
    assert p["opt"].avg_usage <= p["ibs"].avg_usage * 1.02
    assert p["ibs"].avg_usage <= p["og"].avg_usage * 1.02
    assert abs(p["ibs"].avg_usage - p["opt"].avg_usage) <= 0.05 * p["opt"].avg_usage


def test_fixed_l_cross_checks(solved):
    _, p = solved
    L = p["fix"].fixed_L
    assert L >= math.ceil(p["ibs"].avg_usage) - 1
    assert L >= p["og"].avg_usage * 0.98


def test_policies_are_valid(solved):
    sc, p = solved
    for key in ("ibs", "opt"):
        a = p[key].alpha
        assert np.allclose(a.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(np.count_nonzero(a, axis=1) <= 2)
        assert np.allclose(a @ np.arange(sc.n_bs + 1), p[key].usage, atol=1e-9)
    og = p["og"].alpha
    assert np.all(np.sort(og, axis=1)[:, -1] == 1.0) and np.allclose(og.sum(axis=1), 1.0)


def test_per_bs_power_conserved(solved):
    sc, p = solved
    P = sc.powers()
    for key in ("ibs", "opt", "og", "fix"):
        pol = p[key]
        expect = pol.alpha @ P
        assert np.allclose(pol.bs_power.sum(axis=1), expect, rtol=1e-6, atol=1e-9)
