import math

import numpy as np
import pytest

from dmimo.tracker import FrameOracle, TrackerConfig, track


def _ln2_oracle():
    return FrameOracle.from_function(lambda lam: np.exp(-lam) - 0.5)


def test_literal_batch_finds_ln2():
    res = track(_ln2_oracle(), TrackerConfig(step=0.5, budget=10_000, tol=1e-9))
    assert res.converged and not res.infeasible
    assert abs(res.lam[0] - math.log(2)) <= 1e-3


def test_adaptive_batch_finds_ln2():
    res = track(_ln2_oracle(), TrackerConfig(adaptive=True, tol=1e-9))
    assert abs(res.lam[0] - math.log(2)) <= 1e-6


def test_fixed_point_is_kept():
    res = track(_ln2_oracle(), TrackerConfig(step=0.5), init=math.log(2))
    assert res.iterations == 1
    assert res.lam[0] == math.log(2)


@pytest.mark.parametrize("adaptive", [False, True])
def test_separable_components(adaptive):
    roots = np.array([0.3, 2.0])
    oracle = FrameOracle.from_function(lambda lam: np.exp(-lam) - np.exp(-roots), 2)
    res = track(oracle, TrackerConfig(step=0.5, budget=10_000, tol=1e-9, adaptive=adaptive))
    assert np.all(np.abs(res.lam - roots) <= 1e-3)


def test_literal_batch_residual_monotone():
    seen = []

    def g(lam):
        r = math.exp(-lam[0]) - 0.5
        seen.append(abs(r))
        return np.array([r])

    track(FrameOracle.from_function(g), TrackerConfig(step=0.5, budget=200, tol=1e-12))
    assert all(b <= a + 1e-15 for a, b in zip(seen, seen[1:]))


def test_projection_keeps_lambda_nonnegative():
    lams = []

    def g(lam):
        lams.append(lam[0])
        return np.array([-1.0])  # always slack: pushes lambda down

    res = track(FrameOracle.from_function(g), TrackerConfig(step=0.7, budget=50, tol=1e-3), init=2.0)
    assert min(lams) >= 0.0
    assert res.lam[0] == 0.0 and res.converged  # complementary slackness


def test_ceiling_flags_infeasible():
    oracle = FrameOracle.from_function(lambda lam: np.array([0.2]))
    res = track(oracle, TrackerConfig(adaptive=True, ceiling=1e6, budget=500))
    assert res.infeasible and not res.converged


def test_budget_exhaustion_reports_not_converged():
    res = track(_ln2_oracle(), TrackerConfig(step=1e-4, budget=10, tol=1e-9))
    assert not res.converged and not res.infeasible
    assert "not converged" in res.summary()


def test_streaming_agrees_with_batch():
    # frame-varying residuals with a known mean root: mean of exp(-lam * a_k) = 0.5
    a = np.random.default_rng(1).uniform(0.5, 1.5, 200)

    def fn(lam, idx):
        return (np.exp(-lam[0] * a[idx]) - 0.5)[:, None]

    oracle = FrameOracle(fn, a.size, 1)
    batch = track(oracle, TrackerConfig(adaptive=True, tol=1e-10))
    stream = track(oracle, TrackerConfig(mode="streaming", step=0.05, budget=60_000, warmup=5_000))
    assert stream.mode == "streaming"
    assert abs(stream.lam[0] / batch.lam[0] - 1) <= 0.05
    lo, hi = stream.band
    assert lo[0] <= stream.lam[0] <= hi[0]


def test_config_validation():
    for kw in [dict(step=0), dict(filter=1.0), dict(mode="online"), dict(budget=0), dict(tol=0)]:
        with pytest.raises(ValueError):
            TrackerConfig(**kw)
    assert TrackerConfig.for_schemes().adaptive
    assert TrackerConfig().with_(step=0.3).step == 0.3


def test_ellipsoid_polish_keeps_converged_answers():
    roots = np.array([0.3, 2.0, 1.1])
    oracle = FrameOracle.from_function(lambda lam: np.exp(-lam) - np.exp(-roots), 3)
    cfg = TrackerConfig(adaptive=True, tol=1e-9, patience=1)
    res = track(oracle, cfg)
    assert res.converged
    assert np.all(np.abs(res.lam - roots) <= 1e-6)

