import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import crandn
from dmimo.channel import (
    SCENARIOS,
    Deployment,
    PathLossModel,
    aggregate_gain,
    aggregate_gains,
    draw_fading_state,
    draw_frames,
    mean_gain,
    scenario_deployment,
)

MODEL = PathLossModel.calibrated()


def _dep(d=50.0, m=2, n=2):
    return Deployment([(0.0, 0.0)], m, [(d, 0.0)], n)


def test_calibration_constant():
    assert MODEL.gain == pytest.approx(125000.0, rel=1e-12)


def test_mean_gain_examples():
    assert mean_gain(MODEL, 50.0) == pytest.approx(1.0, rel=1e-12)
    assert mean_gain(MODEL, 100.0) / mean_gain(MODEL, 50.0) == pytest.approx(0.125, rel=1e-12)
    assert mean_gain(MODEL, 1.0) == pytest.approx(125000.0, rel=1e-12)


def test_mean_gain_continuous_at_reference():
    assert mean_gain(MODEL, 1.0) == pytest.approx(mean_gain(MODEL, 1.0 + 1e-12), rel=1e-9)
    assert mean_gain(MODEL, 0.5) == pytest.approx(4 * MODEL.gain)


def test_mean_gain_rejects_bad_input():
    with pytest.raises(ValueError):
        mean_gain(MODEL, 0.0)
    with pytest.raises(ValueError):
        PathLossModel(eta=7.0)
    with pytest.raises(ValueError):
        PathLossModel(d_ref=0.0)


def test_deployment_validation():
    with pytest.raises(ValueError):
        Deployment([(0, 0)], 0, [(1, 1)], 2)
    with pytest.raises(ValueError):
        Deployment([(0, np.inf)], 1, [(1, 1)], 2)
    with pytest.raises(ValueError):
        Deployment(np.zeros((0, 2)), 1, [(1, 1)], 2)


def test_same_frame_is_bit_identical():
    dep = scenario_deployment("three_users_6bs")
    a = draw_fading_state(dep, MODEL, 7, 123)
    b = draw_fading_state(dep, MODEL, 7, 123)
    assert a.h.tobytes() == b.h.tobytes()
    assert not np.array_equal(a.h, draw_fading_state(dep, MODEL, 8, 123).h)


def test_frames_independent_of_evaluation_order():
    dep = scenario_deployment("one_user_5bs")
    fwd = draw_frames(dep, MODEL, 3, [5, 6, 7])
    rev = draw_frames(dep, MODEL, 3, [7, 6, 5])
    assert np.array_equal(fwd, rev[::-1])
    assert np.array_equal(fwd[1], draw_fading_state(dep, MODEL, 3, 6).h)


def test_entry_variance_and_frame_independence():
    dep = _dep(m=1, n=1)
    h = draw_frames(dep, MODEL, 11, np.arange(100_001))[:, 0, 0]
    var = np.mean(np.abs(h[:-1]) ** 2)
    assert abs(var - 1.0) <= 0.01
    x, y = h[:-1], h[1:]
    corr = np.abs(np.vdot(x, y)) / np.sqrt(np.vdot(x, x).real * np.vdot(y, y).real)
    assert corr <= 0.01
    # circular symmetry: real and imaginary parts carry equal power
    assert abs(np.mean(h.real ** 2) - np.mean(h.imag ** 2)) <= 0.02


def test_aggregate_gain_examples():
    assert aggregate_gain(np.ones((2, 2)), 2) == pytest.approx(2.0)
    assert aggregate_gain(np.zeros((2, 2)), 2) == 0.0


def test_aggregate_gain_mean():
    dep = _dep(d=40.0, m=2, n=2)
    h = draw_frames(dep, MODEL, 5, np.arange(100_000))
    g = aggregate_gains(h, dep)[:, 0, 0]
    expect = 2 * mean_gain(MODEL, 40.0)
    assert abs(g.mean() / expect - 1) <= 0.02


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_aggregate_gain_invariant_to_receive_rotation(n, m, seed):
    rng = np.random.default_rng(seed)
    blk = crandn(rng, n, m)
    q, _ = np.linalg.qr(crandn(rng, n, n))
    assert aggregate_gain(q @ blk, m) == pytest.approx(aggregate_gain(blk, m), rel=1e-10)


def test_aggregate_gains_matches_blockwise(rng):
    dep = scenario_deployment("three_users_6bs", bs_antennas=[1, 2, 3, 1, 2, 3])
    st_ = draw_fading_state(dep, MODEL, 1, 0)
    g = aggregate_gains(st_.h, dep)
    for n in range(dep.n_users):
        for m in range(dep.n_bs):
            assert g[n, m] == pytest.approx(aggregate_gain(st_.block(n, m), dep.bs_antennas[m]))


def test_builtin_scenarios():
    assert set(SCENARIOS) == {"one_user_5bs", "three_users_6bs"}
    a = scenario_deployment("one_user_5bs")
    b = scenario_deployment("three_users_6bs")
    assert (a.n_bs, a.n_users) == (5, 1)
    assert (b.n_bs, b.n_users) == (6, 3)
    with pytest.raises(KeyError):
        scenario_deployment("nowhere")


def test_user_channel_column_layout():
    dep = scenario_deployment("one_user_5bs")
    s = draw_fading_state(dep, MODEL, 1, 0)
    h = s.user_channel(0, [3, 1])
    assert np.array_equal(h, np.hstack([s.block(0, 3), s.block(0, 1)]))
