"""Single-user BS selection: subset pickers, the concave rate envelope, and
the time-sharing / probabilistic mode controllers.

BS indices are 0-based throughout.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import FadingState, aggregate_gain
from .linalg import mimo_capacity
from .qos import effective_capacity
from .scenario import PowerPolicy, Scenario
from .tracker import TrackerConfig, TrackResult, FrameOracle, track

__all__ = [
    "SubsetSelection",
    "RateEnvelope",
    "SingleUserPolicy",
    "incremental_select",
    "ordered_gain_select",
    "exhaustive_select",
    "rate_envelope",
    "envelope_vertices",
    "usage_to_alpha",
    "best_usage",
    "minimize_usage_batch",
    "alpha_batch",
    "probabilistic_mode",
    "time_sharing_capacity",
    "probabilistic_capacity",
    "ibs_ts_solve",
    "ogbs_pt_solve",
    "optimal_ts_solve",
    "fixed_cardinality_solve",
    "ENUMERATION_LIMIT",
]

ENUMERATION_LIMIT = 10**6


@dataclass(frozen=True)
class SubsetSelection:
    """A BS subset of size ``L`` and its rate (nats/frame) at the mode's power budget."""

    L: int
    subset: tuple
    rate: float | None = None

    def __post_init__(self):
        s = tuple(int(i) for i in self.subset)
        if len(s) != self.L or len(set(s)) != len(s):
            raise ValueError("subset must hold L distinct BS indices")
        object.__setattr__(self, "subset", s)


def _subset_rate(state: FadingState, subset, power: PowerPolicy, bt: float, user: int = 0) -> float:
    if not subset:
        return 0.0
    h = state.user_channel(user, subset)
    return mimo_capacity(h, power.power(len(subset)), bt)


def incremental_select(state: FadingState, L: int, power: PowerPolicy, bt: float = 1000.0,
                       user: int = 0) -> SubsetSelection:
    """Grow the subset one BS at a time, each time adding the BS whose inclusion
    gives the largest rate at the enlarged subset's power budget."""
    k = state.deployment.n_bs
    if not 0 <= L <= k:
        raise ValueError(f"L must lie in [0, {k}]")
    chosen: list[int] = []
    rate = 0.0
    for _ in range(L):
        best, best_rate = -1, -math.inf
        for m in range(k):
            if m in chosen:
                continue
            r = _subset_rate(state, chosen + [m], power, bt, user)
            if r > best_rate:
                best, best_rate = m, r
        chosen.append(best)
        rate = best_rate
    return SubsetSelection(L, tuple(chosen), rate)


def ordered_gain_select(gains, L: int, state: FadingState | None = None,
                        power: PowerPolicy | None = None, bt: float = 1000.0) -> SubsetSelection:
    """The ``L`` BSs with the largest aggregate gain, ties to the lower index.

    The rate is filled in only when a fading state and power policy are given.
    """
    g = np.asarray(gains, dtype=float)
    if not 0 <= L <= g.size:
        raise ValueError(f"L must lie in [0, {g.size}]")
    subset = tuple(int(i) for i in np.argsort(-g, kind="stable")[:L])
    rate = None
    if L == 0:
        rate = 0.0
    elif state is not None and power is not None:
        rate = _subset_rate(state, list(subset), power, bt)
    return SubsetSelection(L, subset, rate)


def state_gains(state: FadingState, user: int = 0) -> np.ndarray:
    dep = state.deployment
    return np.array([aggregate_gain(state.block(user, m), dep.bs_antennas[m]) for m in range(dep.n_bs)])


def exhaustive_select(state: FadingState, L: int, power: PowerPolicy, bt: float = 1000.0,
                      user: int = 0) -> SubsetSelection:
    """Best subset of size ``L`` by full enumeration (first maximiser in lexicographic order)."""
    k = state.deployment.n_bs
    if not 0 <= L <= k:
        raise ValueError(f"L must lie in [0, {k}]")
    if math.comb(k, L) > ENUMERATION_LIMIT:
        raise ValueError(f"C({k}, {L}) subsets exceed the enumeration limit {ENUMERATION_LIMIT}")
    best, best_rate = (), -math.inf
    for combo in itertools.combinations(range(k), L):
        r = _subset_rate(state, list(combo), power, bt, user)
        if r > best_rate:
            best, best_rate = combo, r
    return SubsetSelection(L, best, best_rate if L else 0.0)


# --- rate envelope ---------------------------------------------------------

@dataclass(frozen=True)
class RateEnvelope:
    """Upper concave hull of ``(L, R_L)``; ``vertices`` are integer usages."""

    vertices: np.ndarray
    values: np.ndarray
    rates: np.ndarray = field(repr=False)

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.values) / np.diff(self.vertices)

    @property
    def n_segments(self) -> int:
        return self.vertices.size - 1

    def value(self, usage):
        return np.interp(usage, self.vertices, self.values)


def envelope_vertices(rates) -> np.ndarray:
    """Hull vertex mask for rate rows ``(..., K+1)``; collinear points are not vertices."""
    r = np.asarray(rates, dtype=float)
    kp1 = r.shape[-1]
    mask = np.ones(r.shape, dtype=bool)
    for mid in range(1, kp1 - 1):
        keep = np.ones(r.shape[:-1], dtype=bool)
        for a in range(mid):
            for b in range(mid + 1, kp1):
                chord = r[..., a] + (r[..., b] - r[..., a]) * (mid - a) / (b - a)
                # tolerance guards against rounding on exactly collinear input
                keep &= r[..., mid] > chord + 1e-12 * np.maximum(1.0, np.abs(chord))
        mask[..., mid] = keep
    return mask


def rate_envelope(rates) -> RateEnvelope:
    r = np.asarray(rates, dtype=float)
    if r.ndim != 1 or r.size < 1:
        raise ValueError("expected a 1-D rate list indexed by L = 0..K")
    if r[0] != 0 or np.any(r < 0):
        raise ValueError("rates must be non-negative with R(0) = 0")
    mask = envelope_vertices(r)
    m = np.flatnonzero(mask)
    return RateEnvelope(vertices=m, values=r[m], rates=r)


def usage_to_alpha(env: RateEnvelope, usage: float) -> np.ndarray:
    """Time-sharing fractions over modes ``0..K`` realising ``usage`` on the envelope."""
    m = env.vertices
    k = int(m[-1])
    if not 0 <= usage <= k:
        raise ValueError(f"usage must lie in [0, {k}]")
    alpha = np.zeros(env.rates.size)
    j = int(np.searchsorted(m, usage, side="left"))
    if m[j] == usage:
        alpha[m[j]] = 1.0
        return alpha
    lo, hi = m[j - 1], m[j]
    alpha[lo] = (hi - usage) / (hi - lo)
    alpha[hi] = (usage - lo) / (hi - lo)
    return alpha


def best_usage(env: RateEnvelope, theta: float, lam: float) -> float:
    """Minimiser over ``u in [0, K]`` of ``u + lam * exp(-theta * Rtilde(u))``."""
    u, _ = minimize_usage_batch(env.rates[None, :], theta, lam)
    return float(u[0])


def _compact_vertices(mask):
    """Vertex positions packed to the left, their count, and a validity mask."""
    kp1 = mask.shape[-1]
    order = np.argsort(~mask, axis=-1, kind="stable")
    count = mask.sum(axis=-1)
    valid = np.arange(kp1)[None, :] < count[:, None]
    return order, count, valid


def minimize_usage_batch(rates, theta: float, lam: float, mask=None):
    """Vectorised envelope minimiser over frames.

    Parameters
    ----------
    rates : (F, K+1) array of rates with ``rates[:, 0] == 0``.
    theta, lam : QoS exponent and multiplier.
    mask : optional precomputed :func:`envelope_vertices` result.

    Returns
    -------
    usage : (F,) optimal real usage
    env_rate : (F,) envelope rate at that usage
    """
    r = np.asarray(rates, dtype=float)
    f, kp1 = r.shape
    if lam <= 0 or f == 0:
        return np.zeros(f), np.zeros(f)
    if mask is None:
        mask = envelope_vertices(r)
    m, count, valid = _compact_vertices(mask)
    rv = np.take_along_axis(r, m, axis=-1)
    dm = np.diff(m, axis=-1).astype(float)
    slope = np.where(valid[:, 1:], np.diff(rv, axis=-1) / np.where(dm > 0, dm, 1.0), -np.inf)
    # nu[:, j] is the slope of the segment ending at vertex j (nu[:, 0] = +inf)
    nu = np.concatenate([np.full((f, 1), np.inf), slope, np.full((f, 1), -np.inf)], axis=-1)
    tl = theta * lam
    decay = np.exp(-theta * rv)
    with np.errstate(invalid="ignore", over="ignore"):
        right = 1.0 - tl * nu[:, 1:] * decay
    right = np.where(valid, right, np.inf)
    j = np.argmax(right >= 0, axis=-1)
    rows = np.arange(f)
    nu_j = nu[rows, j]
    with np.errstate(invalid="ignore", over="ignore"):
        left = 1.0 - tl * nu_j * decay[rows, j]
    at_vertex = (j == 0) | (left <= 0)
    usage = m[rows, j].astype(float)
    env_rate = rv[rows, j]
    interior = ~at_vertex
    if np.any(interior):
        ji = j[interior]
        ri = rows[interior]
        lvl = np.log(tl * nu_j[interior]) / theta
        lo = m[ri, ji - 1]
        usage[interior] = lo + (lvl - rv[ri, ji - 1]) / nu_j[interior]
        env_rate[interior] = lvl
    return usage, env_rate


def alpha_batch(rates, usage, mask=None) -> np.ndarray:
    """Time-sharing vectors (F, K+1) for per-frame usages on each frame's envelope."""
    r = np.asarray(rates, dtype=float)
    f, kp1 = r.shape
    if mask is None:
        mask = envelope_vertices(r)
    m, count, valid = _compact_vertices(mask)
    mv = np.where(valid, m, kp1 + 1)
    rows = np.arange(f)
    j = np.minimum(np.sum(mv < usage[:, None] - 1e-12, axis=-1), kp1 - 1)
    hi = m[rows, j]
    lo = m[rows, np.maximum(j - 1, 0)]
    span = np.where(hi > lo, hi - lo, 1)
    w_hi = np.where(hi > lo, (usage - lo) / span, 1.0)
    alpha = np.zeros((f, kp1))
    np.add.at(alpha, (rows, lo), 1.0 - w_hi)
    np.add.at(alpha, (rows, hi), w_hi)
    return alpha


def probabilistic_mode(rates, theta: float, lam: float) -> np.ndarray:
    """Mode index minimising ``L + lam * exp(-theta * R_L)``; lowest ``L`` on ties."""
    r = np.atleast_2d(np.asarray(rates, dtype=float))
    obj = np.arange(r.shape[-1])[None, :] + lam * np.exp(-theta * r)
    return np.argmin(obj, axis=-1)


def time_sharing_capacity(alpha, rates, theta: float) -> float:
    """Effective capacity when each frame mixes modes within the frame.

    ``alpha`` and ``rates`` have shape (F, K+1); frame ``k`` delivers
    ``sum_L alpha[k, L] * rates[k, L]``.
    """
    served = np.sum(np.asarray(alpha, float) * np.asarray(rates, float), axis=-1)
    return effective_capacity(served, theta)


def probabilistic_capacity(phi, rates, theta: float) -> float:
    """Effective capacity when frame ``k`` uses mode ``L`` with probability ``phi[k, L]``."""
    r = np.asarray(rates, float)
    x = -theta * r
    top = x.max()
    m = np.mean(np.sum(np.asarray(phi, float) * np.exp(x - top), axis=-1))
    return -(top + math.log(m)) / theta


# --- scheme solvers --------------------------------------------------------

@dataclass
class SingleUserPolicy:
    """Outcome of a single-user scheme on the held-out frames.

    ``alpha`` rows are time-sharing fractions over modes ``0..K``; for the
    probabilistic schemes they are one-hot. ``rates`` are the per-frame
    service rates actually delivered.
    """

    scheme: str
    lam: float
    feasible: bool
    alpha: np.ndarray
    rates: np.ndarray
    bs_power: np.ndarray
    usage: np.ndarray
    residual: float
    effective_capacity: float
    c_max: float
    track: TrackResult | None = None
    fixed_L: int | None = None

    @property
    def avg_usage(self) -> float:
        return float(np.mean(self.usage)) if self.usage.size else float("nan")

    @property
    def converged(self) -> bool:
        return bool(self.feasible and (self.track is None or self.track.converged))


def _c_max(sc: Scenario, table) -> float:
    return effective_capacity(table["rates"][:, -1], sc.qos[0].theta)


def _infeasible(scheme, sc, c_max, track=None):
    e = np.zeros((0,))
    return SingleUserPolicy(scheme, math.inf, False, e.reshape(0, sc.n_bs + 1), e,
                            e.reshape(0, sc.n_bs), e, math.nan, math.nan, c_max, track)


def _finish(scheme, sc, lam, alpha, rates_served, bs_power, usage, c_max, tr, fixed=None):
    q = sc.qos[0]
    resid = float(np.mean(np.exp(-q.theta * rates_served)) - q.target)
    return SingleUserPolicy(scheme, lam, True, alpha, rates_served, bs_power, usage, resid,
                            effective_capacity(rates_served, q.theta), c_max, tr, fixed)


def _check_single(sc: Scenario):
    if sc.n_users != 1:
        raise ValueError("single-user scheme needs exactly one user")


def _time_sharing(scheme: str, sc: Scenario, kind: str, config: TrackerConfig):
    _check_single(sc)
    q = sc.qos[0]
    train = sc.table(kind, "train")
    c_max = _c_max(sc, train)
    if c_max < q.arrival:
        return _infeasible(scheme, sc, c_max)
    mask = envelope_vertices(train["rates"])

    def frame_residuals(lam, idx):
        _, rt = minimize_usage_batch(train["rates"][idx], q.theta, float(lam[0]), mask[idx])
        return (np.exp(-q.theta * rt) - q.target)[:, None]

    tr = track(FrameOracle(frame_residuals, train["rates"].shape[0], 1), config)
    if tr.infeasible:
        return _infeasible(scheme, sc, c_max, tr)
    lam = float(tr.lam[0])
    ev = sc.table(kind, "eval")
    usage, rt = minimize_usage_batch(ev["rates"], q.theta, lam)
    alpha = alpha_batch(ev["rates"], usage)
    bs_power = np.einsum("fl,flk->fk", alpha, ev["bs_power"])
    # a time-shared frame delivers the envelope rate
    return _finish(scheme, sc, lam, alpha, rt, bs_power, usage, c_max, tr)


def ibs_ts_solve(sc: Scenario, config: TrackerConfig | None = None) -> SingleUserPolicy:
    """Incremental selection with time sharing over the rate envelope."""
    return _time_sharing("ibs-ts", sc, "greedy", config or TrackerConfig.for_schemes())


def optimal_ts_solve(sc: Scenario, config: TrackerConfig | None = None) -> SingleUserPolicy:
    """Time sharing over exhaustively optimal subsets."""
    return _time_sharing("optimal-ts", sc, "exhaustive", config or TrackerConfig.for_schemes())


def ogbs_pt_solve(sc: Scenario, config: TrackerConfig | None = None) -> SingleUserPolicy:
    """Ordered-gain selection with one mode per frame."""
    config = config or TrackerConfig.for_schemes()
    _check_single(sc)
    q = sc.qos[0]
    train = sc.table("ordered", "train")
    c_max = _c_max(sc, train)
    if c_max < q.arrival:
        return _infeasible("ogbs-pt", sc, c_max)
    decay = np.exp(-q.theta * train["rates"])

    def frame_residuals(lam, idx):
        L = probabilistic_mode(train["rates"][idx], q.theta, float(lam[0]))
        return (decay[idx, L] - q.target)[:, None]

    tr = track(FrameOracle(frame_residuals, decay.shape[0], 1), config)
    if tr.infeasible:
        return _infeasible("ogbs-pt", sc, c_max, tr)
    lam = float(tr.lam[0])
    ev = sc.table("ordered", "eval")
    L = probabilistic_mode(ev["rates"], q.theta, lam)
    rows = np.arange(L.size)
    alpha = np.zeros_like(ev["rates"])
    alpha[rows, L] = 1.0
    return _finish("ogbs-pt", sc, lam, alpha, ev["rates"][rows, L], ev["bs_power"][rows, L],
                   L.astype(float), c_max, tr)


def fixed_cardinality_solve(sc: Scenario, config: TrackerConfig | None = None) -> SingleUserPolicy:
    """Smallest constant ``L`` (ordered-gain subsets) meeting the QoS on the training frames."""
    _check_single(sc)
    q = sc.qos[0]
    train = sc.table("ordered", "train")
    c_max = _c_max(sc, train)
    resid = np.mean(np.exp(-q.theta * train["rates"]), axis=0) - q.target
    ok = np.flatnonzero(resid[1:] <= 0)
    if ok.size == 0:
        return _infeasible("fixed-l", sc, c_max)
    L = int(ok[0]) + 1
    ev = sc.table("ordered", "eval")
    n = ev["rates"].shape[0]
    alpha = np.zeros_like(ev["rates"])
    alpha[:, L] = 1.0
    return _finish("fixed-l", sc, math.nan, alpha, ev["rates"][:, L], ev["bs_power"][:, L],
                   np.full(n, float(L)), c_max, None, fixed=L)
