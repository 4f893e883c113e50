"""Multi-user BS selection with block-diagonalization or TDMA sharing.

Each frame picks one mode ``L`` (number of BSs). Under BD, the users share
the mode's power budget through interference-free null-space precoders;
under TDMA, each user gets a slice of the frame at full power. BS indices
and user indices are 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import null_space, singular_values_sq, water_fill_batch
from .qos import effective_capacity
from .scenario import Scenario, semirandom_order
from .tracker import FrameOracle, TrackerConfig, TrackResult, track

__all__ = [
    "BdDecomposition",
    "PriorityOrder",
    "MultiUserAllocation",
    "bd_precoders",
    "priority_order",
    "priority_select",
    "semi_random_select",
    "bd_power_alloc",
    "solve_power_price",
    "bd_allocate",
    "tdma_time_alloc",
    "tdma_allocate",
    "solve_time_price",
    "mode_choice",
    "pbs_bd_pt_solve",
    "pbs_tdma_pt_solve",
    "semirandom_bd_pt_solve",
    "semirandom_tdma_pt_solve",
]

SOLVER_ITERS = 200


@dataclass(frozen=True)
class BdDecomposition:
    """Null-space precoder of one user; ``precoder is None`` when the user is skipped."""

    precoder: np.ndarray | None
    effective: np.ndarray | None
    gains: np.ndarray

    @property
    def skipped(self) -> bool:
        return self.precoder is None

    @property
    def rank(self) -> int:
        return int(np.count_nonzero(self.gains))


def bd_precoders(channels) -> list[BdDecomposition]:
    """Precoders that null every other user's channel.

    ``channels`` is a list of per-user matrices (receive antennas x selected
    transmit antennas). User ``n``'s precoder is an orthonormal basis of the
    null space of the other users' stacked channels.
    """
    channels = [np.asarray(h, dtype=complex) for h in channels]
    if not channels:
        raise ValueError("need at least one user")
    cols = channels[0].shape[1]
    if cols == 0:
        raise ValueError("subset must be non-empty")
    out = []
    for n, hn in enumerate(channels):
        others = [h for i, h in enumerate(channels) if i != n]
        if others:
            gamma = null_space(np.vstack(others))
        else:
            gamma = np.eye(cols, dtype=complex)
        if gamma.shape[1] == 0:
            out.append(BdDecomposition(None, None, np.zeros(0)))
            continue
        eff = hn @ gamma
        out.append(BdDecomposition(gamma, eff, singular_values_sq(eff)))
    return out


@dataclass(frozen=True)
class PriorityOrder:
    c_max: np.ndarray
    fractions: np.ndarray
    pi: tuple


def priority_order(sc: Scenario) -> PriorityOrder:
    """Users ranked by the share of their best-case effective capacity they demand.

    The best case is each user alone on all BSs at the full-mode power,
    estimated over the training frames.
    """
    full = sc.table("full", "train")["rates"]
    c_max = np.array([effective_capacity(full[:, n], q.theta) for n, q in enumerate(sc.qos)])
    return _order_from(c_max, np.array([q.arrival for q in sc.qos]))


def _order_from(c_max, arrivals) -> PriorityOrder:
    frac = np.asarray(arrivals, float) / np.asarray(c_max, float)
    pi = tuple(int(i) for i in np.argsort(-frac, kind="stable"))
    return PriorityOrder(np.asarray(c_max, float), frac, pi)


def priority_select(gains, pi, L: int) -> tuple:
    """Round robin over ``pi``: each user in turn takes its strongest unselected BS.

    ``gains`` has shape (users, BSs).
    """
    g = np.asarray(gains, dtype=float)
    k = g.shape[1]
    if not 0 <= L <= k:
        raise ValueError(f"L must lie in [0, {k}]")
    free = np.ones(k, dtype=bool)
    chosen = []
    for step in range(L):
        user = pi[step % len(pi)]
        m = int(np.argmax(np.where(free, g[user], -np.inf)))
        chosen.append(m)
        free[m] = False
    return tuple(chosen)


def semi_random_select(n_bs: int, L: int, seed: int, frame: int) -> tuple:
    """Uniformly random ``L``-subset, a pure function of ``(seed, frame)``."""
    if not 0 <= L <= n_bs:
        raise ValueError(f"L must lie in [0, {n_bs}]")
    perm = semirandom_order(seed, [frame], n_bs)[0]
    return tuple(sorted(int(i) for i in perm[:L]))


# --- BD power split ------------------------------------------------------

def bd_power_alloc(eps, theta, lam, zeta, bt: float = 1000.0) -> dict:
    """Per-user power for a given price ``zeta`` on the shared budget.

    Each user minimises ``lam * exp(-theta * R) + zeta * P`` over its own
    water-filling allocation on gains ``eps``. Inputs broadcast over leading
    axes; ``eps`` has shape (..., users, Z) sorted descending with trailing
    zeros, ``theta`` and ``lam`` have shape (users,).

    Returns a dict with ``power``, ``level``, ``active`` (number of used
    subchannels) and ``rate``, each of shape (..., users).
    """
    eps = np.asarray(eps, dtype=float)
    theta = np.asarray(theta, dtype=float)
    lam = np.asarray(lam, dtype=float)
    zeta = np.asarray(zeta, dtype=float)[..., None]
    z = eps.shape[-1]
    present = eps > 0
    live = (lam > 0)[..., None] & present
    logeps = np.log(np.where(present, eps, 1.0))
    i = np.arange(1, z + 1)
    bth = (bt * theta)[..., None]
    with np.errstate(divide="ignore"):
        log_price = np.log(np.where(lam > 0, lam * theta * bt, 1.0))[..., None]
    log_mu = (log_price - np.log(zeta)[..., None] - bth * np.cumsum(logeps, axis=-1)) / (1.0 + i * bth)
    # candidate i is valid when its level lies between 1/eps_i and 1/eps_{i+1}
    above = log_mu >= -logeps
    nxt = np.concatenate([-logeps[..., 1:], np.full(eps.shape[:-1] + (1,), np.inf)], axis=-1)
    nxt = np.where(np.concatenate([present[..., 1:], np.zeros(eps.shape[:-1] + (1,), bool)], axis=-1), nxt, np.inf)
    valid = live & above & (log_mu < nxt)
    # rounding can leave no exactly valid index; fall back to the last index above the floor
    first = np.argmax(valid, axis=-1)
    fallback = np.maximum((live & above).sum(axis=-1) - 1, 0)
    idx = np.where(valid.any(axis=-1), first, fallback)
    n_act = np.where((live & above).any(axis=-1), idx + 1, 0)
    lm = np.take_along_axis(log_mu, idx[..., None], axis=-1)[..., 0]
    level = np.where(n_act > 0, np.exp(lm), 0.0)
    used = i <= n_act[..., None]
    inv = np.where(present, 1.0 / np.where(present, eps, 1.0), 0.0)
    power = np.where(n_act > 0, n_act * level - np.sum(np.where(used, inv, 0.0), axis=-1), 0.0)
    rate = bt * np.sum(np.where(used, lm[..., None] + logeps, 0.0), axis=-1)
    return {"power": np.maximum(power, 0.0), "level": level, "active": n_act, "rate": np.maximum(rate, 0.0)}


def _price_bracket(eps, theta, lam, p_total, bt):
    eps = np.asarray(eps, float)
    live = (lam > 0) & (eps[..., 0] > 0)
    price = lam * theta * bt
    # at zeta = price * eps_1 the user's level sits at 1/eps_1 and it takes no power
    hi = np.max(np.where(live, price * eps[..., 0], 0.0), axis=-1)
    level, _, rate = water_fill_batch(eps, np.asarray(p_total, float)[..., None], bt)
    with np.errstate(divide="ignore", invalid="ignore"):
        z_full = price * np.exp(-theta * rate) / np.where(level > 0, level, 1.0)
    lo = np.min(np.where(live, z_full, np.inf), axis=-1)
    return lo, hi, live.any(axis=-1)


def solve_power_price(eps, theta, lam, p_total, bt: float = 1000.0, iters: int = SOLVER_ITERS):
    """Price at which the users' powers add up to ``p_total``.

    Total power is decreasing and convex in ``x = log zeta``, so Newton steps
    from the lower end of an exact bracket approach the root from one side.
    Steps that leave the bracket fall back to bisection. Returns
    ``(zeta, alloc)``; frames where no user can transmit get ``zeta = nan``
    and a zero allocation.
    """
    eps = np.asarray(eps, float)
    theta = np.asarray(theta, float)
    lam = np.asarray(lam, float)
    p_total = np.broadcast_to(np.asarray(p_total, float), eps.shape[:-2])
    lo, hi, any_live = _price_bracket(eps, theta, lam, p_total, bt)
    ok = any_live & (p_total > 0)
    a = np.log(np.where(ok, np.minimum(lo, hi), 1.0))
    b = np.log(np.where(ok, hi, 1.0))
    x = a.copy()
    bth = bt * theta
    scale = np.where(ok, p_total, 1.0)
    for _ in range(iters):
        alloc = bd_power_alloc(eps, theta, lam, np.exp(x), bt)
        f = np.where(ok, alloc["power"].sum(axis=-1) - p_total, 0.0)
        if np.all(np.abs(f) <= 1e-11 * scale):
            break
        a = np.where(f > 0, x, a)
        b = np.where(f < 0, x, b)
        n = alloc["active"]
        slope = -np.sum(n * alloc["level"] / (1.0 + n * bth), axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_new = x - f / slope
        inside = np.isfinite(x_new) & (x_new >= a) & (x_new <= b)
        x = np.where(inside, x_new, 0.5 * (a + b))
    zeta = np.exp(x)
    alloc = bd_power_alloc(eps, theta, lam, np.where(ok, zeta, np.inf), bt)
    alloc = {k: np.where(ok[..., None], v, 0) for k, v in alloc.items()}
    return np.where(ok, zeta, np.nan), alloc


def bd_allocate(eps, theta, lam, powers, bt: float = 1000.0) -> dict:
    """BD allocations for every mode of every frame.

    ``eps`` has shape (F, K+1, users, Z) and ``powers`` is ``[P_0 .. P_K]``.
    """
    p = np.broadcast_to(np.asarray(powers, float), eps.shape[:2])
    _, alloc = solve_power_price(eps, theta, lam, p, bt)
    return alloc


def mode_choice(rates, theta, lam):
    """Mode minimising ``L + sum_n lam_n exp(-theta_n R_n(L))``, lowest ``L`` on ties.

    ``rates`` has shape (..., K+1, users). Returns the mode index and the
    per-mode objective.
    """
    r = np.asarray(rates, float)
    obj = np.arange(r.shape[-2]) + np.sum(np.asarray(lam) * np.exp(-np.asarray(theta) * r), axis=-1)
    return np.argmin(obj, axis=-1), obj


# --- TDMA time split -----------------------------------------------------

def tdma_time_alloc(rates, theta, lam, delta):
    """Frame shares ``[log(lam theta R / delta) / (theta R)]^+``; users with ``R = 0`` get nothing."""
    r = np.asarray(rates, float)
    theta = np.asarray(theta, float)
    lam = np.asarray(lam, float)
    delta = np.asarray(delta, float)[..., None]
    tr = theta * r
    live = (tr > 0) & (lam > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.log(np.where(live, lam * tr, 1.0) / delta) / np.where(live, tr, 1.0)
    return np.where(live, np.maximum(t, 0.0), 0.0)


def solve_time_price(rates, theta, lam, iters: int = SOLVER_ITERS):
    """Multiplier making the TDMA shares sum to one.

    Vectorised over leading axes of ``rates`` (..., users). Rows without an
    active user get ``nan``.
    """
    r = np.asarray(rates, float)
    theta = np.asarray(theta, float)
    lam = np.asarray(lam, float)
    tr = theta * r
    live = (tr > 0) & (lam > 0)
    ok = live.any(axis=-1)
    w = np.where(live, lam * tr, 0.0)
    hi = np.max(w, axis=-1)
    # each active user alone would need delta = w e^{-theta R} to fill the frame
    lo = np.min(np.where(live, w * np.exp(-tr), np.inf), axis=-1)
    # the share sum is piecewise linear and convex in log(delta): Newton from
    # the left end lands on the root after at most one step per user
    x = np.log(np.where(ok, lo, 1.0))
    inv = np.where(live, 1.0 / np.where(live, tr, 1.0), 0.0)
    for _ in range(iters):
        t = tdma_time_alloc(r, theta, lam, np.exp(x))
        f = np.where(ok, t.sum(axis=-1) - 1.0, 0.0)
        if np.all(np.abs(f) <= 1e-12):
            break
        slope = -np.sum(np.where(t > 0, inv, 0.0), axis=-1)
        step = np.where(slope < 0, -f / np.where(slope < 0, slope, -1.0), 0.0)
        x = np.minimum(x + step, np.log(np.where(ok, hi, 1.0)))
    return np.where(ok, np.exp(x), np.nan)


def tdma_allocate(rates, theta, lam):
    """Shares for every mode of every frame; exact normalisation of residual rounding."""
    delta = solve_time_price(rates, theta, lam)
    ok = np.isfinite(delta)
    t = tdma_time_alloc(rates, theta, lam, np.where(ok, delta, 1.0))
    t = np.where(ok[..., None], t, 0.0)
    s = t.sum(axis=-1, keepdims=True)
    return np.where(s > 0, t / np.where(s > 0, s, 1.0), 0.0)


# --- scheme solvers ------------------------------------------------------

@dataclass
class MultiUserAllocation:
    """Outcome of a multi-user scheme on the held-out frames."""

    scheme: str
    lam: np.ndarray
    feasible: bool
    mode: np.ndarray
    rates: np.ndarray
    shares: np.ndarray
    bs_power: np.ndarray
    residual: np.ndarray
    effective_capacity: np.ndarray
    order: PriorityOrder
    track: TrackResult | None = None

    @property
    def usage(self) -> np.ndarray:
        return self.mode.astype(float)

    @property
    def avg_usage(self) -> float:
        return float(np.mean(self.mode)) if self.mode.size else float("nan")

    @property
    def converged(self) -> bool:
        return bool(self.feasible and self.track is not None and self.track.converged)


def _evaluate(family, table, sc, lam, idx=None):
    """Per-frame mode, delivered rates (F, U) and shares for one multiplier vector."""
    tb = table if idx is None else {k: v[idx] for k, v in table.items()}
    if family == "bd":
        alloc = bd_allocate(tb["eps"], sc.thetas, lam, sc.powers(), sc.bt)
        served = alloc["rate"]
        shares = alloc["power"]
    else:
        shares = tdma_allocate(tb["rates"], sc.thetas, lam)
        served = shares * tb["rates"]
    mode, _ = mode_choice(served, sc.thetas, lam)
    rows = np.arange(mode.size)
    return mode, served[rows, mode], shares[rows, mode], (tb, served, shares)


def _bs_power(family, tb, sc, lam, mode, shares_all):
    rows = np.arange(mode.size)
    if family == "tdma":
        return np.einsum("fu,fuk->fk", shares_all[rows, mode], tb["bs_power"][rows, mode])
    eps = tb["eps"][rows, mode]
    alloc = bd_allocate(tb["eps"][rows, mode][:, None], sc.thetas, lam,
                        sc.powers()[mode][:, None], sc.bt)
    level = alloc["level"][:, 0]
    active = alloc["active"][:, 0]
    z = np.arange(eps.shape[-1])
    inv = np.where(eps > 0, 1.0 / np.where(eps > 0, eps, 1.0), 0.0)
    rho = np.where(z < active[..., None], level[..., None] - inv, 0.0)
    return np.einsum("fuz,fuzk->fk", rho, tb["frac"][rows, mode])


def _multi_solve(scheme, sc: Scenario, family, selection, config):
    config = config or TrackerConfig.for_schemes()
    if sc.n_users < 1:
        raise ValueError("need at least one user")
    order = priority_order(sc)
    u = sc.n_users
    extra = {"selection": selection, "pi": order.pi if selection == "priority" else None}
    # a user that misses its load even alone on every BS can never be served
    if np.any(order.c_max < [q.arrival for q in sc.qos]):
        return _infeasible_multi(scheme, sc, order)
    train = sc.table(family, "train", **extra)
    thetas, targets = sc.thetas, sc.targets

    def frame_residuals(lam, idx):
        _, served, _, _ = _evaluate(family, train, sc, lam, idx)
        return np.exp(-thetas * served) - targets

    n_train = train["masks"].shape[0]
    tr = track(FrameOracle(frame_residuals, n_train, u), config)
    if tr.infeasible:
        return _infeasible_multi(scheme, sc, order, tr)
    lam = tr.lam
    ev = sc.table(family, "eval", **extra)
    mode, served, shares, (tb, _, shares_all) = _evaluate(family, ev, sc, lam)
    bs_power = _bs_power(family, tb, sc, lam, mode, shares_all)
    resid = np.mean(np.exp(-thetas * served), axis=0) - targets
    effcap = np.array([effective_capacity(served[:, n], thetas[n]) for n in range(u)])
    return MultiUserAllocation(scheme, lam, True, mode, served, shares, bs_power, resid, effcap, order, tr)


def _infeasible_multi(scheme, sc, order, tr=None):
    u, k = sc.n_users, sc.n_bs
    nan = np.full(u, np.nan)
    return MultiUserAllocation(scheme, np.full(u, np.inf), False, np.zeros(0, int), np.zeros((0, u)),
                               np.zeros((0, u)), np.zeros((0, k)), nan, nan, order, tr)


def pbs_bd_pt_solve(sc: Scenario, config: TrackerConfig | None = None) -> MultiUserAllocation:
    return _multi_solve("pbs-bd-pt", sc, "bd", "priority", config)


def pbs_tdma_pt_solve(sc: Scenario, config: TrackerConfig | None = None) -> MultiUserAllocation:
    return _multi_solve("pbs-tdma-pt", sc, "tdma", "priority", config)


def semirandom_bd_pt_solve(sc: Scenario, config: TrackerConfig | None = None) -> MultiUserAllocation:
    return _multi_solve("semirandom-bd-pt", sc, "bd", "semirandom", config)


def semirandom_tdma_pt_solve(sc: Scenario, config: TrackerConfig | None = None) -> MultiUserAllocation:
    return _multi_solve("semirandom-tdma-pt", sc, "tdma", "semirandom", config)
