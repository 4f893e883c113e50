"""Projected dual ascent for the per-user QoS multipliers.

Two modes share one oracle interface:

* ``batch``: every iteration averages the residual over a fixed frame set
  and steps ``lam += step * residual``. With ``adaptive=True`` the step is
  instead a per-component sign step whose size grows while the residual
  keeps its sign and halves when it flips, which reaches the root of the
  piecewise-constant residuals of the probabilistic schemes quickly.
  Sign steps can stall when several multipliers are coupled through a
  shared mode decision. If they stop improving, a central-cut ellipsoid
  search takes over. The mean residual is a supergradient of the concave
  dual function, so each evaluation cuts away half of the remaining
  ellipsoid.
* ``streaming``: one frame per iteration, the residual is smoothed by a
  first-order autoregressive filter before the step, and the reported
  multiplier is the time average after warm-up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

__all__ = ["TrackerConfig", "TrackResult", "DualState", "FrameOracle", "track"]


@dataclass(frozen=True)
class TrackerConfig:
    """Tracker settings.

    ``step`` is the literal step size, ``filter`` the streaming AR factor and
    ``budget`` the iteration (batch) or frame (streaming) limit. ``patience``
    is how many adaptive sign iterations without a new best point are
    allowed before the ellipsoid search takes over; ``polish=False``
    disables that search.
    """

    step: float = 0.01
    filter: float = 0.99
    budget: int = 100_000
    warmup: int = 1000
    mode: str = "batch"
    tol: float = 1e-4
    ceiling: float = 1e9
    init: float = 1.0
    adaptive: bool = False
    patience: int = 100
    polish: bool = True

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError("step must be positive")
        if not 0.0 < self.filter < 1.0:
            raise ValueError("filter factor must lie in (0, 1)")
        if self.mode not in ("batch", "streaming"):
            raise ValueError(f"unknown tracker mode {self.mode!r}")
        if self.budget < 1 or self.warmup < 0 or self.patience < 1:
            raise ValueError("budget and patience must be positive, warm-up non-negative")
        if self.tol <= 0 or self.ceiling <= 0 or self.init < 0:
            raise ValueError("tolerance and ceiling must be positive, init non-negative")

    @classmethod
    def for_schemes(cls, **kw) -> "TrackerConfig":
        """Defaults used by the scheme solvers: adaptive batch steps.

        The tolerance is looser than the generic default because one frame
        switching mode moves the sample-average residual by a discrete jump
        of order ``1 / n_frames``.
        """
        base = dict(mode="batch", adaptive=True, budget=2000, tol=5e-4)
        base.update(kw)
        return cls(**base)

    def with_(self, **kw) -> "TrackerConfig":
        return replace(self, **kw)


@dataclass
class DualState:
    lam: np.ndarray
    filtered: np.ndarray
    iteration: int = 0


@dataclass
class TrackResult:
    lam: np.ndarray
    residual: np.ndarray
    converged: bool
    infeasible: bool
    iterations: int
    band: tuple
    mode: str

    def summary(self) -> str:
        state = "infeasible" if self.infeasible else ("converged" if self.converged else "not converged")
        return (f"{self.mode}: {state} after {self.iterations} iterations, "
                f"max|residual|={np.max(np.abs(self.residual)):.3g}")


class FrameOracle:
    """Residuals of each constraint, frame by frame.

    ``fn(lam, idx)`` must return an array of shape ``(len(idx), n_constraints)``
    for multiplier vector ``lam`` and frame indices ``idx``.
    """

    def __init__(self, fn: Callable, n_frames: int, n_constraints: int):
        self.fn = fn
        self.n_frames = int(n_frames)
        self.n_constraints = int(n_constraints)

    def frame_residuals(self, lam, idx) -> np.ndarray:
        return np.asarray(self.fn(np.asarray(lam, dtype=float), np.asarray(idx)), dtype=float)

    def mean_residual(self, lam) -> np.ndarray:
        r = self.frame_residuals(lam, np.arange(self.n_frames))
        return r.mean(axis=0)

    @classmethod
    def from_function(cls, g: Callable, n_constraints: int = 1) -> "FrameOracle":
        """Wrap a deterministic residual ``g(lam) -> (n_constraints,)`` as a one-frame oracle."""
        return cls(lambda lam, idx: np.tile(np.atleast_1d(g(lam)), (len(idx), 1)), 1, n_constraints)


def _violation(lam, g):
    # a multiplier pinned at zero with slack residual satisfies complementary slackness
    return np.where((lam <= 0) & (g <= 0), 0.0, np.abs(g))


def track(oracle: FrameOracle, config: TrackerConfig | None = None, init=None) -> TrackResult:
    config = config or TrackerConfig()
    if config.mode == "streaming":
        return _track_streaming(oracle, config, init)
    return _track_batch(oracle, config, init)


def _start(oracle, config, init):
    if init is None:
        return np.full(oracle.n_constraints, float(config.init))
    lam = np.array(np.broadcast_to(np.asarray(init, dtype=float), (oracle.n_constraints,)))
    if np.any(lam < 0):
        raise ValueError("initial multipliers must be non-negative")
    return lam


def _track_batch(oracle, config, init):
    lam = _start(oracle, config, init)
    st = _BatchState(lam, config.step * np.maximum(lam, 1.0), config.budget)
    polish = config.adaptive and config.polish
    _batch_steps(oracle, config, st, config.patience if polish else None)
    if polish and st.running():
        st.best, used, (st.lo, st.hi) = _ellipsoid(
            oracle, config, st.best, st.lo, st.hi, config.budget - st.it)
        st.it += used
        if st.best[0] > config.tol:
            # the polish can settle on a flat stretch of the dual; finish with sign steps
            _batch_steps(oracle, config, st, None)
    _, lam_best, g_best = st.best
    if g_best is None:
        g_best = oracle.mean_residual(lam_best)
    converged = bool(_violation(lam_best, g_best).max() <= config.tol) and not st.infeasible
    return TrackResult(lam_best, g_best, converged, st.infeasible, st.it, (st.lo, st.hi), "batch")


class _BatchState:
    def __init__(self, lam, delta, budget):
        self.lam, self.delta, self.budget = lam, delta, budget
        self.prev = np.zeros_like(lam)
        self.best = (np.inf, lam.copy(), None)
        self.lo, self.hi = lam.copy(), lam.copy()
        self.it = 0
        self.infeasible = False
        self.done = False  # converged, or sign steps too small to move any frame

    def running(self):
        return not (self.done or self.infeasible) and self.it < self.budget


def _batch_steps(oracle, config, st, patience):
    """Run batch iterations on ``st`` until done, or ``patience`` iterations without a new best."""
    since_best = 0
    while st.it < st.budget:
        st.it += 1
        lam = st.lam
        g = oracle.mean_residual(lam)
        viol = _violation(lam, g)
        since_best += 1
        if viol.max() < st.best[0]:
            st.best = (viol.max(), lam.copy(), g)
            since_best = 0
        if viol.max() <= config.tol:
            st.done = True
            return
        if np.any((lam >= config.ceiling) & (g > config.tol)):
            st.infeasible = True
            return
        if config.adaptive:
            s = np.sign(g)
            flip = s * st.prev < 0
            st.delta = np.where(s * st.prev > 0, st.delta * 2.0,
                                np.where(flip, st.delta * 0.5, st.delta))
            step = st.delta * s
            # after a flip the next step neither grows nor shrinks
            st.prev = np.where(flip | (lam + step < 0), 0.0, s)
            # steps below this cannot move any frame across a mode boundary
            if np.all((st.delta < 1e-9 * lam) | (viol <= config.tol)):
                st.done = True
                return
        else:
            step = config.step * g
        st.lam = np.minimum(np.maximum(lam + step, 0.0), config.ceiling)
        st.lo, st.hi = np.minimum(st.lo, st.lam), np.maximum(st.hi, st.lam)
        if patience is not None and since_best >= patience:
            return


def _ellipsoid(oracle, config, best, lo, hi, budget):
    """Central-cut ellipsoid search for a multiplier with small residual.

    Starts from the best point so far inside an axis-aligned ellipsoid
    twice as wide as the region the sign steps explored. Returns the
    updated best triple, the evaluations used and the explored band.
    """
    c = best[1].copy()
    n = c.size
    radius = 2.0 * (hi - lo) + 1e-3 * np.maximum(c, 1.0)
    p = np.diag(radius ** 2)
    used = 0
    while used < budget:
        if np.any(c < 0):
            # outside the orthant: keep the side where the most negative component grows
            a = np.zeros(n)
            a[np.argmin(c)] = 1.0
        else:
            g = oracle.mean_residual(c)
            used += 1
            viol = _violation(c, g)
            lo, hi = np.minimum(lo, c), np.maximum(hi, c)
            if viol.max() < best[0]:
                best = (viol.max(), c.copy(), g)
            if viol.max() <= config.tol:
                break
            a = g
        pa = p @ a
        den = math.sqrt(max(float(a @ pa), 0.0))
        if not math.isfinite(den) or den <= 0.0 or np.all(np.sqrt(np.diag(p)) <= 1e-12 * np.maximum(np.abs(c), 1.0)):
            break
        b = pa / den
        c = c + b / (n + 1)
        if n == 1:
            p = p / 4.0  # the one-dimensional ellipsoid is an interval that halves
        else:
            p = n * n / (n * n - 1.0) * (p - 2.0 / (n + 1) * np.outer(b, b))
            p = 0.5 * (p + p.T)
    return best, used, (lo, hi)


def _track_streaming(oracle, config, init):
    lam = _start(oracle, config, init)
    state = DualState(lam=lam, filtered=np.zeros_like(lam))
    acc = np.zeros_like(lam)
    n_acc = 0
    lo = np.full_like(lam, np.inf)
    hi = np.full_like(lam, -np.inf)
    infeasible = False
    a = config.filter
    for it in range(config.budget):
        k = it % oracle.n_frames
        r = oracle.frame_residuals(state.lam, [k])[0]
        state.filtered = a * state.filtered + (1.0 - a) * r
        state.lam = np.minimum(np.maximum(state.lam + config.step * state.filtered, 0.0), config.ceiling)
        state.iteration = it + 1
        if it >= config.warmup:
            acc += state.lam
            n_acc += 1
            lo, hi = np.minimum(lo, state.lam), np.maximum(hi, state.lam)
        if np.any((state.lam >= config.ceiling) & (state.filtered > 0)):
            infeasible = True
            break
    lam_avg = acc / n_acc if n_acc else state.lam
    g = oracle.mean_residual(lam_avg)
    converged = bool(_violation(lam_avg, g).max() <= config.tol) and not infeasible
    return TrackResult(lam_avg, g, converged, infeasible, state.iteration, (lo, hi), "streaming")
