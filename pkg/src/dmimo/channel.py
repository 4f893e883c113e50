"""Deployment geometry, path loss, and seeded block-fading channel draws."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Deployment",
    "PathLossModel",
    "FadingState",
    "mean_gain",
    "mean_gain_matrix",
    "draw_fading_state",
    "draw_frames",
    "aggregate_gain",
    "aggregate_gains",
    "frame_generator",
    "SCENARIOS",
    "scenario_deployment",
    "STREAM_FADING",
    "STREAM_SUBSETS",
]

# second key word of the Philox stream; keeps independent uses apart
STREAM_FADING = 0
STREAM_SUBSETS = 1


@dataclass(frozen=True)
class Deployment:
    """Positions (meters) and antenna counts of base stations and users."""

    bs_positions: np.ndarray
    bs_antennas: np.ndarray
    user_positions: np.ndarray
    user_antennas: np.ndarray

    def __post_init__(self):
        bs = np.atleast_2d(np.asarray(self.bs_positions, dtype=float))
        us = np.atleast_2d(np.asarray(self.user_positions, dtype=float))
        m = np.broadcast_to(np.asarray(self.bs_antennas, dtype=int), (bs.shape[0],)).copy()
        n = np.broadcast_to(np.asarray(self.user_antennas, dtype=int), (us.shape[0],)).copy()
        if bs.shape[0] < 1 or us.shape[0] < 1:
            raise ValueError("deployment needs at least one base station and one user")
        if bs.shape[1] != 2 or us.shape[1] != 2:
            raise ValueError("positions must be 2-D coordinates")
        if not (np.all(np.isfinite(bs)) and np.all(np.isfinite(us))):
            raise ValueError("coordinates must be finite")
        if np.any(m < 1) or np.any(n < 1):
            raise ValueError("antenna counts must be at least 1")
        object.__setattr__(self, "bs_positions", bs)
        object.__setattr__(self, "user_positions", us)
        object.__setattr__(self, "bs_antennas", m)
        object.__setattr__(self, "user_antennas", n)

    @property
    def n_bs(self) -> int:
        return self.bs_positions.shape[0]

    @property
    def n_users(self) -> int:
        return self.user_positions.shape[0]

    @property
    def col_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.bs_antennas)])

    @property
    def row_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.user_antennas)])

    def columns(self, subset) -> np.ndarray:
        """Column indices of the stacked channel for the given BS indices."""
        off = self.col_offsets
        if len(subset) == 0:
            return np.zeros(0, dtype=int)
        return np.concatenate([np.arange(off[m], off[m + 1]) for m in subset])

    def rows(self, user: int) -> slice:
        off = self.row_offsets
        return slice(off[user], off[user + 1])

    def distances(self) -> np.ndarray:
        """User-to-BS distance matrix of shape (n_users, n_bs)."""
        diff = self.user_positions[:, None, :] - self.bs_positions[None, :, :]
        return np.hypot(diff[..., 0], diff[..., 1])

    def with_bs_antennas(self, m) -> "Deployment":
        return Deployment(self.bs_positions, m, self.user_positions, self.user_antennas)


@dataclass(frozen=True)
class PathLossModel:
    """Free-space decay up to ``d_ref``, then exponent ``eta`` beyond it."""

    d_ref: float = 1.0
    eta: float = 3.0
    gain: float = 125000.0

    def __post_init__(self):
        if self.d_ref <= 0:
            raise ValueError("reference distance must be positive")
        if not 2.0 <= self.eta <= 6.0:
            raise ValueError("path-loss exponent must lie in [2, 6]")
        if self.gain <= 0:
            raise ValueError("aggregate gain must be positive")

    @classmethod
    def calibrated(cls, d_ref=1.0, eta=3.0, calib_distance=50.0, calib_gain=1.0):
        """Choose the aggregate gain so the mean gain equals ``calib_gain`` at ``calib_distance``."""
        unit = cls(d_ref=d_ref, eta=eta, gain=1.0)
        return cls(d_ref=d_ref, eta=eta, gain=calib_gain / float(mean_gain(unit, calib_distance)))


def _gain_unchecked(model: PathLossModel, d):
    d = np.asarray(d, dtype=float)
    with np.errstate(divide="ignore"):
        near = model.gain * d ** -2.0
        far = model.gain * (model.d_ref / d) ** model.eta
    return np.where(d <= model.d_ref, near, far)


def mean_gain(model: PathLossModel, d):
    """Mean power gain (linear) at distance ``d`` meters."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    out = _gain_unchecked(model, d)
    return float(out) if out.ndim == 0 else out


def mean_gain_matrix(dep: Deployment, model: PathLossModel) -> np.ndarray:
    """Per (user, BS) mean gains."""
    return mean_gain(model, dep.distances())


@dataclass(frozen=True)
class FadingState:
    """One frame's channel: rows stacked per user, columns per BS."""

    k: int
    h: np.ndarray
    deployment: Deployment = field(repr=False)

    def block(self, n: int, m: int) -> np.ndarray:
        dep = self.deployment
        c = dep.col_offsets
        return self.h[dep.rows(n), c[m]:c[m + 1]]

    def user_channel(self, n: int, subset=None) -> np.ndarray:
        """Concatenated channel of user ``n`` over the BSs in ``subset`` (all by default)."""
        dep = self.deployment
        if subset is None:
            subset = range(dep.n_bs)
        return self.h[dep.rows(n)][:, dep.columns(list(subset))]


def frame_generator(seed: int, k: int, stream: int = STREAM_FADING) -> np.random.Generator:
    """Counter-based generator for frame ``k``; independent of any other frame."""
    if k < 0:
        raise ValueError("frame index must be non-negative")
    bitgen = np.random.Philox(key=np.array([seed, stream], dtype=np.uint64),
                              counter=np.array([0, k, 0, 0], dtype=np.uint64))
    return np.random.Generator(bitgen)


def _draw_h(dep: Deployment, std: np.ndarray, seed: int, k: int) -> np.ndarray:
    z = frame_generator(seed, k).standard_normal((2,) + std.shape)
    return std * (z[0] + 1j * z[1])


def _entry_std(dep: Deployment, model: PathLossModel) -> np.ndarray:
    hbar = mean_gain_matrix(dep, model)
    per_row = np.repeat(hbar, dep.user_antennas, axis=0)
    full = np.repeat(per_row, dep.bs_antennas, axis=1)
    # real and imaginary parts each carry half the variance
    return np.sqrt(full / 2.0)


def draw_fading_state(dep: Deployment, model: PathLossModel, seed: int, k: int) -> FadingState:
    """Channel realisation of frame ``k``; a pure function of ``(seed, k)``."""
    return FadingState(k=k, h=_draw_h(dep, _entry_std(dep, model), seed, k), deployment=dep)


def draw_frames(dep: Deployment, model: PathLossModel, seed: int, frames) -> np.ndarray:
    """Stack of channels for the given frame indices, shape (F, sum N, sum M)."""
    std = _entry_std(dep, model)
    frames = np.asarray(frames, dtype=np.int64)
    out = np.empty((frames.size,) + std.shape, dtype=complex)
    for i, k in enumerate(frames):
        out[i] = _draw_h(dep, std, seed, int(k))
    return out


def aggregate_gain(h_block, m_antennas: int | None = None) -> float:
    """Antenna-averaged squared magnitude of one user-BS channel block."""
    h_block = np.asarray(h_block)
    if m_antennas is None:
        m_antennas = h_block.shape[1]
    return float(np.sum(np.abs(h_block) ** 2) / m_antennas)


def aggregate_gains(h: np.ndarray, dep: Deployment) -> np.ndarray:
    """Aggregate gains for stacked channels ``(..., sum N, sum M)`` -> ``(..., n_users, n_bs)``."""
    p = np.abs(h) ** 2
    r = dep.row_offsets
    c = dep.col_offsets
    rows = np.add.reduceat(p, r[:-1], axis=-2)
    blocks = np.add.reduceat(rows, c[:-1], axis=-1)
    return blocks / dep.bs_antennas


SCENARIOS = {
    "one_user_5bs": {
        "bs_positions": [(37.96, -21.56), (-7.83, 13.33), (25.50, -22.49),
                         (17.98, 25.00), (-26.34, 11.62)],
        "user_positions": [(4.0, -11.0)],
        "bs_antennas": 2,
        "user_antennas": 2,
        "description": "single user, 5 base stations",
    },
    "three_users_6bs": {
        "bs_positions": [(35.77, 22.69), (13.06, -37.45), (27.15, -26.33),
                         (-40.28, -0.14), (-32.86, -28.65), (-5.10, 29.98)],
        "user_positions": [(-11.0, 0.0), (3.0, 5.0), (2.0, -12.0)],
        "bs_antennas": 6,
        "user_antennas": 2,
        "description": "three users, 6 base stations",
    },
}


def scenario_deployment(name: str, bs_antennas=None, user_antennas=None) -> Deployment:
    try:
        sc = SCENARIOS[name]
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; known: {sorted(SCENARIOS)}") from None
    return Deployment(
        bs_positions=np.array(sc["bs_positions"]),
        bs_antennas=sc["bs_antennas"] if bs_antennas is None else bs_antennas,
        user_positions=np.array(sc["user_positions"]),
        user_antennas=sc["user_antennas"] if user_antennas is None else user_antennas,
    )
