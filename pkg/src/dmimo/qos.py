"""Statistical delay QoS: exponents, effective capacity and a fluid queue.

Rates are nats/frame and delays are whole frames throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "QoSSpec",
    "QueueResult",
    "qos_exponent",
    "load_to_nats",
    "effective_capacity",
    "constraint_residual",
    "simulate_queue",
    "lindley",
]


def qos_exponent(arrival: float, delay_bound: float, xi: float) -> float:
    """QoS exponent meeting ``Pr{D > delay_bound} <= xi`` at constant arrivals."""
    if not 0.0 < xi < 1.0:
        raise ValueError(f"violation threshold must lie in (0, 1), got {xi}")
    if arrival * delay_bound <= 0:
        raise ValueError("arrival rate times delay bound must be positive")
    return -math.log(xi) / (arrival * delay_bound)


def load_to_nats(load_bps: float, frame_s: float) -> float:
    """Convert a bit/s traffic load to nats/frame."""
    return load_bps * math.log(2.0) * frame_s


@dataclass(frozen=True)
class QoSSpec:
    """Per-user delay requirement. ``arrival`` in nats/frame, ``delay_bound`` in frames."""

    arrival: float
    delay_bound: float
    xi: float

    def __post_init__(self):
        if self.arrival <= 0:
            raise ValueError("arrival rate must be positive")
        if self.delay_bound < 1:
            raise ValueError("delay bound must be at least one frame")
        if not 0.0 < self.xi < 1.0:
            raise ValueError("violation threshold must lie in (0, 1)")

    @property
    def theta(self) -> float:
        return qos_exponent(self.arrival, self.delay_bound, self.xi)

    @property
    def target(self) -> float:
        """``exp(-theta * arrival)``, the right-hand side of the constraint."""
        return math.exp(-self.theta * self.arrival)


def effective_capacity(samples, theta: float) -> float:
    """Sample estimate of ``-(1/theta) log E[exp(-theta R)]``.

    Computed with a log-sum-exp shift so large ``theta * R`` does not underflow.
    """
    r = np.asarray(samples, dtype=float).ravel()
    if r.size == 0:
        raise ValueError("need at least one rate sample")
    if theta <= 0:
        raise ValueError("theta must be positive")
    x = -theta * r
    top = x.max()
    log_mean = top + math.log(np.mean(np.exp(x - top)))
    return -log_mean / theta


def constraint_residual(samples, theta: float, arrival: float) -> float:
    """``mean(exp(-theta R)) - exp(-theta * arrival)``; non-positive iff the QoS holds."""
    if theta <= 0:
        raise ValueError("theta must be positive")
    r = np.asarray(samples, dtype=float)
    return float(np.mean(np.exp(-theta * r)) - math.exp(-theta * arrival))


def lindley(arrival: float, service) -> np.ndarray:
    """Queue backlog after each frame, ``Q[k] = max(Q[k-1] + arrival - R[k], 0)``, from empty."""
    s = np.cumsum(arrival - np.asarray(service, dtype=float))
    return s - np.minimum(np.minimum.accumulate(s), 0.0)


@dataclass(frozen=True)
class QueueResult:
    violation_prob: float
    tail_slope: float
    stable: bool
    mean_service: float
    queue: np.ndarray

    def __repr__(self):
        return (f"QueueResult(violation_prob={self.violation_prob:.3g}, "
                f"tail_slope={self.tail_slope:.4g}, stable={self.stable})")


def _tail_slope(q: np.ndarray, lo: float = 0.90, hi: float = 0.999, points: int = 40) -> float:
    q_lo, q_hi = np.quantile(q, [lo, hi])
    if q_hi <= q_lo:
        return float("nan")
    grid = np.linspace(q_lo, q_hi, points)
    qs = np.sort(q)
    surv = 1.0 - np.searchsorted(qs, grid, side="right") / qs.size
    ok = surv > 0
    if ok.sum() < 3:
        return float("nan")
    slope = np.polyfit(grid[ok], np.log(surv[ok]), 1)[0]
    return float(-slope)


def simulate_queue(arrival: float, service, delay_bound: int, keep_trace: bool = False) -> QueueResult:
    """Fluid FIFO queue fed at a constant rate and drained by ``service``.

    The virtual delay of frame ``k`` is the smallest ``d >= 0`` such that the
    service of frames ``k+1 .. k+d`` clears the backlog ``Q[k]``. Frames whose
    delay can not be resolved before the end of the trace are dropped from
    the estimate. The tail slope is the negated regression slope of
    ``log Pr{Q > q}`` over the 90%..99.9% quantile range of ``Q``.

    An unstable queue (mean service below the arrival rate) is reported via
    ``stable=False`` rather than raised.
    """
    r = np.asarray(service, dtype=float)
    q = lindley(arrival, r)
    cum = np.concatenate([[0.0], np.cumsum(r)])
    k = np.arange(r.size)
    # cum[k + 1] is service through frame k; look for cum[j] >= cum[k+1] + Q[k]
    target = cum[k + 1] + q
    j = np.searchsorted(cum, target - 1e-9 * np.maximum(1.0, target), side="left")
    delay = j - (k + 1)
    resolved = j <= r.size
    n_ok = resolved.sum()
    viol = float(np.count_nonzero(resolved & (delay > delay_bound)) / n_ok) if n_ok else float("nan")
    mean_r = float(r.mean()) if r.size else 0.0
    return QueueResult(
        violation_prob=viol,
        tail_slope=_tail_slope(q) if q.size else float("nan"),
        stable=mean_r > arrival,
        mean_service=mean_r,
        queue=q if keep_trace else np.empty(0),
    )
