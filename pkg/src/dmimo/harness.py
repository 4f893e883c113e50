"""Experiment orchestration: run a scheme, score it, sweep a parameter, write CSV."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import PathLossModel, _gain_unchecked
from .multi import (
    pbs_bd_pt_solve,
    pbs_tdma_pt_solve,
    semirandom_bd_pt_solve,
    semirandom_tdma_pt_solve,
)
from .qos import simulate_queue
from .scenario import CHUNK, Scenario, build_table, transmit_power
from .single import (
    fixed_cardinality_solve,
    ibs_ts_solve,
    minimize_usage_batch,
    ogbs_pt_solve,
    optimal_ts_solve,
    probabilistic_mode,
)

__all__ = [
    "SCHEMES",
    "RunResult",
    "transmit_power",
    "per_bs_radiated_power",
    "interfering_area",
    "InterferenceGrid",
    "run_scheme",
    "run_experiment",
    "sweep",
    "csv_header",
    "csv_rows",
    "to_csv",
    "service_trace",
    "validate_queue",
]

SCHEMES = {
    "ibs-ts": ibs_ts_solve,
    "ogbs-pt": ogbs_pt_solve,
    "fixed-l": fixed_cardinality_solve,
    "optimal-ts": optimal_ts_solve,
    "pbs-bd-pt": pbs_bd_pt_solve,
    "pbs-tdma-pt": pbs_tdma_pt_solve,
    "semirandom-bd-pt": semirandom_bd_pt_solve,
    "semirandom-tdma-pt": semirandom_tdma_pt_solve,
}
SINGLE_USER = ("ibs-ts", "ogbs-pt", "fixed-l", "optimal-ts")

# table family each single-user scheme draws its subsets from
_SINGLE_TABLE = {"ibs-ts": "greedy", "optimal-ts": "exhaustive", "ogbs-pt": "ordered", "fixed-l": "ordered"}


def per_bs_radiated_power(directions, powers, bs_antennas) -> np.ndarray:
    """Radiated power of each BS for one transmit covariance.

    Parameters
    ----------
    directions : (sum M, Z) unit transmit directions (columns)
    powers : (Z,) power on each direction
    bs_antennas : antenna count per BS, in column order

    The covariance is ``V diag(p) V^H``; each BS radiates the trace of its
    diagonal block.
    """
    v = np.asarray(directions)
    diag = np.sum(np.abs(v) ** 2 * np.asarray(powers, float)[None, :], axis=1)
    off = np.concatenate([[0], np.cumsum(bs_antennas)])
    return np.add.reduceat(diag, off[:-1]) if diag.size else np.zeros(len(bs_antennas))


def _reach(model: PathLossModel, power: float, threshold: float) -> float:
    """Distance at which a single source of ``power`` falls to ``threshold``."""
    if power <= 0:
        return 0.0
    far = model.d_ref * (power * model.gain / threshold) ** (1.0 / model.eta)
    if far >= model.d_ref:
        return far
    # the threshold is only crossed inside the near-field region
    return math.sqrt(power * model.gain / threshold)


@dataclass
class InterferenceGrid:
    """Probe grid covering every point where the received power can exceed the threshold.

    Any such point lies within the single-source reach of the largest total
    power around some BS, so the box spans the BS positions widened by that
    reach on each side.
    """

    bs_positions: np.ndarray
    model: PathLossModel
    threshold: float
    resolution: float
    max_power: float
    gains: np.ndarray = field(init=False, repr=False)
    cell_area: float = field(init=False)
    box_area: float = field(init=False)

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("grid resolution must be positive")
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")
        bs = np.atleast_2d(np.asarray(self.bs_positions, float))
        r = _reach(self.model, self.max_power, self.threshold) + self.resolution
        lo = bs.min(axis=0) - r
        hi = bs.max(axis=0) + r
        xs = np.arange(lo[0] + self.resolution / 2, hi[0], self.resolution)
        ys = np.arange(lo[1] + self.resolution / 2, hi[1], self.resolution)
        px, py = np.meshgrid(xs, ys, indexing="ij")
        pts = np.stack([px.ravel(), py.ravel()], axis=-1)
        d = np.hypot(pts[:, None, 0] - bs[None, :, 0], pts[:, None, 1] - bs[None, :, 1])
        # probe points exactly on a BS get the d_ref^-2 near-field value at tiny distance
        self.gains = _gain_unchecked(self.model, np.maximum(d, 1e-3))
        self.cell_area = self.resolution ** 2
        self.box_area = xs.size * ys.size * self.cell_area

    def areas(self, bs_power, chunk: int = 32) -> np.ndarray:
        """Interfering area (m^2) for each row of per-BS powers ``(F, K)``."""
        p = np.atleast_2d(np.asarray(bs_power, float))
        out = np.empty(p.shape[0])
        for i in range(0, p.shape[0], chunk):
            blk = p[i:i + chunk]
            live = np.any(blk > 0, axis=1)
            cnt = np.zeros(blk.shape[0])
            if live.any():
                rx = self.gains @ blk[live].T
                cnt[live] = np.count_nonzero(rx > self.threshold, axis=0)
            out[i:i + chunk] = cnt * self.cell_area
        return out


def interfering_area(bs_positions, bs_power, model: PathLossModel | None = None,
                     threshold: float = 1.0, resolution: float = 0.5) -> float:
    """Area where the fading-averaged received power exceeds ``threshold``."""
    model = model or PathLossModel()
    p = np.asarray(bs_power, float)
    if p.size == 0 or not np.any(p > 0):
        return 0.0
    grid = InterferenceGrid(bs_positions, model, threshold, resolution, float(p.sum()))
    return float(grid.areas(p[None, :])[0])


@dataclass
class RunResult:
    scheme: str
    feasible: bool
    converged: bool
    avg_usage: float
    avg_area: float
    residual: np.ndarray
    effective_capacity_kbps: np.ndarray
    frames: int
    seed: int
    lam: np.ndarray
    report: str
    usage: np.ndarray = field(default=None, repr=False)
    solution: object = field(default=None, repr=False)


def run_scheme(scheme: str, sc: Scenario, tracker=None):
    try:
        solver = SCHEMES[scheme]
    except KeyError:
        raise ValueError(f"unknown scheme {scheme!r}; known: {sorted(SCHEMES)}") from None
    return solver(sc, tracker)


def run_experiment(sc: Scenario, scheme: str, tracker=None, threshold: float = 1.0,
                   resolution: float = 0.5, keep_frames: bool = False) -> RunResult:
    """Solve ``scheme`` on the training frames and score it on the held-out frames."""
    sol = run_scheme(scheme, sc, tracker)
    u = sc.n_users
    frames = sc.n_train + sc.n_eval
    lam = np.atleast_1d(np.asarray(sol.lam, float))
    report = sol.track.summary() if sol.track is not None else (
        f"fixed L = {sol.fixed_L}" if getattr(sol, "fixed_L", None) else "")
    if not sol.feasible:
        nan = np.full(u, np.nan)
        return RunResult(scheme, False, False, math.nan, math.nan, nan, nan, frames, sc.seed, lam,
                         report or "infeasible", None, sol)
    grid = InterferenceGrid(sc.deployment.bs_positions, sc.pathloss, threshold, resolution,
                            float(sc.powers().max()))
    area = grid.areas(sol.bs_power)
    kbps = np.atleast_1d(sol.effective_capacity) / (math.log(2.0) * sc.frame_s) / 1e3
    return RunResult(
        scheme=scheme,
        feasible=True,
        converged=sol.converged,
        avg_usage=float(np.mean(sol.usage)),
        avg_area=float(np.mean(area)),
        residual=np.atleast_1d(np.asarray(sol.residual, float)),
        effective_capacity_kbps=kbps,
        frames=frames,
        seed=sc.seed,
        lam=lam,
        report=report,
        usage=sol.usage if keep_frames else None,
        solution=sol,
    )


def sweep(make_scenario, scheme: str, axis: str, values, tracker=None, **kw) -> list:
    """One :func:`run_experiment` per value; ``make_scenario(axis, value)`` builds each scenario."""
    out = []
    for v in values:
        res = run_experiment(make_scenario(axis, v), scheme, tracker, **kw)
        out.append((axis, v, res))
    return out


def csv_header(n_users: int) -> list:
    return (["scheme", "axis", "axis_value", "avg_bs_usage", "avg_interfering_area_m2"]
            + [f"residual_user_{i + 1}" for i in range(n_users)]
            + [f"effcap_user_{i + 1}" for i in range(n_users)]
            + ["converged", "frames", "seed"])


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.10g}"
    return str(x)


def csv_rows(rows) -> list:
    """``rows`` is a list of ``(axis, value, RunResult)``."""
    out = []
    for axis, value, r in rows:
        status = "true" if r.converged else ("false" if r.feasible else "infeasible")
        out.append([r.scheme, axis or "", _fmt(value), _fmt(r.avg_usage), _fmt(r.avg_area)]
                   + [_fmt(float(x)) for x in r.residual]
                   + [_fmt(float(x)) for x in r.effective_capacity_kbps]
                   + [status, str(r.frames), str(r.seed)])
    return out


def to_csv(rows, n_users: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(csv_header(n_users))
    w.writerows(csv_rows(rows))
    return buf.getvalue()


# --- queue validation ----------------------------------------------------

def service_trace(sc: Scenario, scheme: str, lam: float, start: int, n_frames: int,
                  fixed_L: int | None = None, block: int = 20 * CHUNK) -> np.ndarray:
    """Per-frame service of a solved single-user policy on frames ``start .. start+n-1``.

    The policy is frozen at multiplier ``lam``; tables are built block by
    block so long traces never hold more than one block in memory.
    """
    if scheme not in SINGLE_USER:
        raise ValueError("queue validation supports the single-user schemes")
    kind = _SINGLE_TABLE[scheme]
    theta = sc.qos[0].theta
    out = np.empty(n_frames)
    for i in range(0, n_frames, block):
        idx = np.arange(start + i, start + min(i + block, n_frames))
        rates = build_table(sc, kind, idx)["rates"]
        if scheme in ("ibs-ts", "optimal-ts"):
            _, r = minimize_usage_batch(rates, theta, lam)
        elif scheme == "ogbs-pt":
            r = rates[np.arange(idx.size), probabilistic_mode(rates, theta, lam)]
        else:
            r = rates[:, fixed_L]
        out[i:i + idx.size] = r
    return out


def validate_queue(sc: Scenario, scheme: str, n_frames: int = 10**6, tracker=None):
    """Solve ``scheme``, then drive a fluid queue with its service on fresh frames.

    Returns ``(solution, QueueResult)``.
    """
    sol = run_scheme(scheme, sc, tracker)
    if not sol.feasible:
        return sol, None
    start = sc.n_train + sc.n_eval
    r = service_trace(sc, scheme, float(sol.lam), start, n_frames, getattr(sol, "fixed_L", None))
    q = sc.qos[0]
    return sol, simulate_queue(q.arrival, r, int(round(q.delay_bound)))

