"""Scenario bundle and per-frame rate tables.

Everything that depends only on the fading state (selected subsets, rates at
fixed power, BD subchannel gains) is computed once per frame here and kept
in arrays indexed by frame. Dual tracking then only re-evaluates cheap
closed forms. Frames are processed in fixed-size chunks so results do not
depend on how many worker processes share the work.
"""

from __future__ import annotations

import itertools
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import (
    STREAM_SUBSETS,
    Deployment,
    PathLossModel,
    aggregate_gains,
    draw_frames,
    frame_generator,
)
from .linalg import jacobi_columns
from .qos import QoSSpec

__all__ = [
    "PowerPolicy",
    "Scenario",
    "transmit_power",
    "build_table",
    "prefix_masks",
    "CHUNK",
    "WORKERS_ENV",
]

CHUNK = 250
WORKERS_ENV = "DMIMO_WORKERS"
# BD subchannel gains below this fraction of the user's channel energy are null
NULL_RTOL = 1e-10


@dataclass(frozen=True)
class PowerPolicy:
    """Total transmit power ``p_ref + kappa * (L - 1)`` for ``L >= 1`` selected BSs."""

    p_ref: float
    kappa: float = 0.0

    def __post_init__(self):
        if self.p_ref <= 0:
            raise ValueError("reference power must be positive")
        if self.kappa < 0:
            raise ValueError("power slope must be non-negative")

    def power(self, n_selected: int) -> float:
        return transmit_power(self, n_selected)

    def table(self, n_bs: int) -> np.ndarray:
        """``[P_0, P_1, ..., P_K]`` with ``P_0 = 0``."""
        return np.array([transmit_power(self, ell) for ell in range(n_bs + 1)])


def transmit_power(policy: PowerPolicy, n_selected: int) -> float:
    if n_selected < 0:
        raise ValueError("number of selected BSs must be non-negative")
    if n_selected == 0:
        return 0.0
    return policy.p_ref + policy.kappa * (n_selected - 1)


@dataclass(frozen=True)
class Scenario:
    """A deployment with its channel, power and QoS parameters.

    ``bandwidth`` in Hz and ``frame_s`` in seconds; their product scales
    rates to nats/frame. Training frames are ``0 .. n_train-1`` and the
    held-out evaluation frames follow them.
    """

    deployment: Deployment
    pathloss: PathLossModel
    power: PowerPolicy
    qos: tuple
    bandwidth: float = 1e5
    frame_s: float = 0.01
    seed: int = 1
    n_train: int = 5000
    n_eval: int = 5000
    workers: int | None = None
    _cache: dict = field(default_factory=dict, compare=False, repr=False, hash=False)

    def __post_init__(self):
        qos = tuple(self.qos)
        if len(qos) != self.deployment.n_users:
            raise ValueError("need one QoS spec per user")
        if not all(isinstance(q, QoSSpec) for q in qos):
            raise TypeError("qos entries must be QoSSpec")
        object.__setattr__(self, "qos", qos)

    @property
    def bt(self) -> float:
        return self.bandwidth * self.frame_s

    @property
    def n_bs(self) -> int:
        return self.deployment.n_bs

    @property
    def n_users(self) -> int:
        return self.deployment.n_users

    @property
    def thetas(self) -> np.ndarray:
        return np.array([q.theta for q in self.qos])

    @property
    def targets(self) -> np.ndarray:
        return np.array([q.target for q in self.qos])

    @property
    def train_frames(self) -> np.ndarray:
        return np.arange(self.n_train)

    @property
    def eval_frames(self) -> np.ndarray:
        return np.arange(self.n_train, self.n_train + self.n_eval)

    def powers(self) -> np.ndarray:
        return self.power.table(self.n_bs)

    def with_(self, **changes) -> "Scenario":
        return replace(self, _cache={}, **changes)

    def with_qos(self, qos) -> "Scenario":
        """Copy with new QoS targets that shares this scenario's table cache.

        Per-frame tables depend only on channels and powers, so load, delay
        and violation-probability sweeps can reuse them.
        """
        return replace(self, qos=tuple(qos), _cache=self._cache)

    def table(self, kind: str, frames: str, **extra) -> dict:
        """Cached :func:`build_table` on the training or evaluation frames."""
        key = (kind, frames, tuple(sorted(extra.items())))
        if key not in self._cache:
            idx = self.train_frames if frames == "train" else self.eval_frames
            self._cache[key] = build_table(self, kind, idx, **extra)
        return self._cache[key]


# --- per-chunk kernels -------------------------------------------------------

def _directions(b):
    """Squared singular values (desc) and unit right singular vectors of ``b``.

    ``b`` has shape (F, n, c) with n small; returns ``ev`` (F, n) and
    ``dirs`` (F, c, n) where ``dirs[..., z]`` pairs with ``ev[..., z]``.
    """
    w, _ = jacobi_columns(np.swapaxes(b, -1, -2).conj())
    ev = np.einsum("fij,fij->fj", w.conj(), w).real
    order = np.argsort(-ev, axis=-1, kind="stable")
    ev = np.take_along_axis(ev, order, axis=-1)
    w = np.take_along_axis(w, order[:, None, :], axis=-1)
    scale = np.einsum("fij,fij->f", b.conj(), b).real
    live = ev > 1e-12 * np.maximum(scale, 1e-300)[:, None]
    ev = np.where(live, ev, 0.0)
    norm = np.sqrt(np.where(live, ev, 1.0))
    dirs = np.where(live[:, None, :], w / norm[:, None, :], 0.0)
    return ev, dirs


def _bs_fractions(dirs, dep):
    """Energy of each unit direction on each BS's antennas: (F, Z, K)."""
    e = np.abs(dirs) ** 2
    return np.add.reduceat(e, dep.col_offsets[:-1], axis=1).transpose(0, 2, 1)


def _water(ev, p, bt):
    from .linalg import water_fill_batch

    return water_fill_batch(ev, p, bt)


def _col_mask(masks_bs, dep):
    """BS selection masks (..., K) -> column masks (..., sum M)."""
    return np.repeat(masks_bs, dep.bs_antennas, axis=-1)


def _capacity_masked(h, colmask, p, bt, dep):
    """Rate and per-BS radiated power of ``h`` restricted to selected columns."""
    hm = h * colmask[:, None, :]
    ev, dirs = _directions(hm)
    _, rho, rate = _water(ev, p, bt)
    frac = _bs_fractions(dirs, dep)
    bs_power = np.einsum("fz,fzk->fk", rho, frac)
    return rate, bs_power


def prefix_masks(order, n_bs):
    """Nested selection masks (F, K+1, K) from selection orders (F, K)."""
    f = order.shape[0]
    masks = np.zeros((f, n_bs + 1, n_bs), dtype=bool)
    rows = np.arange(f)
    for ell in range(1, n_bs + 1):
        masks[:, ell] = masks[:, ell - 1]
        masks[rows, ell, order[:, ell - 1]] = True
    return masks


def ordered_gain_order(gains):
    """BS order by descending aggregate gain, ties to the lower index. gains (F, K)."""
    return np.argsort(-gains, axis=-1, kind="stable")


def greedy_order(h, dep, powers, bt):
    """Incremental selection: each step adds the BS maximising the enlarged subset's rate."""
    f = h.shape[0]
    k = dep.n_bs
    sel = np.zeros((f, k), dtype=bool)
    order = np.zeros((f, k), dtype=int)
    rows = np.arange(f)
    for step in range(k):
        cand = np.full((f, k), -np.inf)
        for z in range(k):
            trial = sel.copy()
            trial[:, z] = True
            rate, _ = _capacity_masked(h, _col_mask(trial, dep), powers[step + 1], bt, dep)
            cand[:, z] = np.where(sel[:, z], -np.inf, rate)
        best = np.argmax(cand, axis=-1)
        order[:, step] = best
        sel[rows, best] = True
    return order


def priority_order(gains, pi):
    """Round-robin selection order: user ``pi[j]`` takes its strongest free BS. gains (F, U, K)."""
    f, u, k = gains.shape
    free = np.ones((f, k), dtype=bool)
    order = np.zeros((f, k), dtype=int)
    rows = np.arange(f)
    for step in range(k):
        user = pi[step % len(pi)]
        g = np.where(free, gains[:, user, :], -np.inf)
        best = np.argmax(g, axis=-1)
        order[:, step] = best
        free[rows, best] = False
    return order


def semirandom_order(seed, frames, n_bs):
    """Uniformly random BS permutation per frame; prefixes are uniform subsets."""
    return np.stack([frame_generator(seed, int(k), STREAM_SUBSETS).permutation(n_bs)
                     for k in frames]) if len(frames) else np.zeros((0, n_bs), int)


def _single_table(h, dep, powers, bt, masks):
    f, kp1, k = masks.shape
    rates = np.zeros((f, kp1))
    bs_power = np.zeros((f, kp1, k))
    hu = h[:, dep.rows(0), :]
    for ell in range(1, kp1):
        rates[:, ell], bs_power[:, ell] = _capacity_masked(
            hu, _col_mask(masks[:, ell], dep), powers[ell], bt, dep)
    return {"rates": rates, "masks": masks, "bs_power": bs_power}


def _exhaustive_table(h, dep, powers, bt):
    f = h.shape[0]
    k = dep.n_bs
    hu = h[:, dep.rows(0), :]
    rates = np.zeros((f, k + 1))
    masks = np.zeros((f, k + 1, k), dtype=bool)
    bs_power = np.zeros((f, k + 1, k))
    for ell in range(1, k + 1):
        best = np.full(f, -np.inf)
        for combo in itertools.combinations(range(k), ell):
            m = np.zeros((f, k), dtype=bool)
            m[:, list(combo)] = True
            rate, bp = _capacity_masked(hu, _col_mask(m, dep), powers[ell], bt, dep)
            better = rate > best
            best = np.where(better, rate, best)
            masks[better, ell] = m[better]
            bs_power[better, ell] = bp[better]
        rates[:, ell] = best
    return {"rates": rates, "masks": masks, "bs_power": bs_power}


def _bd_gains(h, dep, colmask):
    """Per-user BD subchannel gains and per-BS direction energy for one mode.

    Returns ``eps`` (F, U, N) and ``frac`` (F, U, N, K).
    """
    f = h.shape[0]
    u = dep.n_users
    nmax = int(dep.user_antennas.max())
    eps = np.zeros((f, u, nmax))
    frac = np.zeros((f, u, nmax, dep.n_bs))
    hm = h * colmask[:, None, :]
    n_cols = colmask.sum(axis=-1)
    for n in range(u):
        hn = hm[:, dep.rows(n), :]
        others = [i for i in range(u) if i != n]
        if others:
            a = np.concatenate([hm[:, dep.rows(i), :] for i in others], axis=1)
            w, _ = jacobi_columns(np.swapaxes(a, -1, -2).conj())
            sig = np.sqrt(np.einsum("fij,fij->fj", w.conj(), w).real)
            smax = sig.max(axis=-1, keepdims=True)
            live = sig > NULL_RTOL * np.maximum(smax, 1e-300)
            basis = np.where(live[:, None, :], w / np.where(live, sig, 1.0)[:, None, :], 0.0)
            rank = live.sum(axis=-1)
            b = hn - (hn @ basis) @ np.swapaxes(basis, -1, -2).conj()
            has_null = n_cols > rank
        else:
            b = hn
            has_null = n_cols > 0
        ev, dirs = _directions(b)
        ev = np.where(has_null[:, None], ev, 0.0)
        z = ev.shape[-1]
        eps[:, n, :z] = ev
        frac[:, n, :z] = _bs_fractions(dirs, dep) * has_null[:, None, None]
    return eps, frac


def _multi_orders(h, dep, seed, frames, selection, pi):
    if selection == "priority":
        return priority_order(aggregate_gains(h, dep), pi)
    if selection == "semirandom":
        return semirandom_order(seed, frames, dep.n_bs)
    raise ValueError(f"unknown multi-user selection {selection!r}")


def _chunk_kernel(args):
    kind, dep, model, powers, bt, seed, frames, extra = args
    h = draw_frames(dep, model, seed, frames)
    if kind in ("greedy", "ordered"):
        if kind == "greedy":
            order = greedy_order(h[:, dep.rows(0), :], dep, powers, bt)
        else:
            order = ordered_gain_order(aggregate_gains(h, dep)[:, 0, :])
        return _single_table(h, dep, powers, bt, prefix_masks(order, dep.n_bs))
    if kind == "exhaustive":
        return _exhaustive_table(h, dep, powers, bt)
    if kind == "full":
        # every user alone on all BSs at the full-mode power
        allcols = np.ones((h.shape[0], h.shape[2]), dtype=bool)
        rates = np.stack([_capacity_masked(h[:, dep.rows(n), :], allcols, powers[-1], bt, dep)[0]
                          for n in range(dep.n_users)], axis=-1)
        return {"rates": rates}
    if kind in ("bd", "tdma"):
        order = _multi_orders(h, dep, seed, frames, extra["selection"], extra.get("pi"))
        masks = prefix_masks(order, dep.n_bs)
        f, k = h.shape[0], dep.n_bs
        u = dep.n_users
        if kind == "bd":
            nmax = int(dep.user_antennas.max())
            eps = np.zeros((f, k + 1, u, nmax))
            frac = np.zeros((f, k + 1, u, nmax, k))
            for ell in range(1, k + 1):
                eps[:, ell], frac[:, ell] = _bd_gains(h, dep, _col_mask(masks[:, ell], dep))
            return {"masks": masks, "eps": eps, "frac": frac}
        rates = np.zeros((f, k + 1, u))
        bs_power = np.zeros((f, k + 1, u, k))
        for ell in range(1, k + 1):
            cm = _col_mask(masks[:, ell], dep)
            for n in range(u):
                rates[:, ell, n], bs_power[:, ell, n] = _capacity_masked(
                    h[:, dep.rows(n), :], cm, powers[ell], bt, dep)
        return {"masks": masks, "rates": rates, "bs_power": bs_power}
    raise ValueError(f"unknown table kind {kind!r}")


def resolve_workers(workers=None) -> int:
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1") or 1)
    return max(1, int(workers))


def build_table(sc: Scenario, kind: str, frames, workers=None, **extra) -> dict:
    """Per-frame tables for one scheme family.

    ``kind`` is one of ``greedy``, ``ordered``, ``exhaustive`` (single user),
    ``full`` (each user alone on all BSs), ``bd`` and ``tdma`` (multi-user,
    with ``selection='priority'|'semirandom'`` and priority order ``pi``).
    """
    frames = np.asarray(frames, dtype=np.int64)
    if "pi" in extra and extra["pi"] is not None:
        extra["pi"] = tuple(int(i) for i in extra["pi"])
    powers = sc.powers()
    chunks = [frames[i:i + CHUNK] for i in range(0, frames.size, CHUNK)]
    jobs = [(kind, sc.deployment, sc.pathloss, powers, sc.bt, sc.seed, c, extra) for c in chunks]
    n_workers = resolve_workers(sc.workers if workers is None else workers)
    if n_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as ex:
            parts = list(ex.map(_chunk_kernel, jobs))
    else:
        parts = [_chunk_kernel(j) for j in jobs]
    if not parts:
        return {}
    return {key: np.concatenate([p[key] for p in parts], axis=0) for key in parts[0]}
