"""Complex linear algebra and MIMO rate computations.

The singular value decomposition used everywhere in the package is a
one-sided (Hestenes) Jacobi iteration. It is written to run on stacks of
matrices at once, so a whole Monte Carlo frame set can be processed with a
single sweep loop. Matrix sizes in this problem never exceed a few dozen
columns, so accuracy and simplicity matter more than asymptotics.

All rates are in nats; ``bt`` is the bandwidth-time product that converts
nats/s/Hz into nats/frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SvdResult",
    "WaterFillResult",
    "jacobi_columns",
    "svd",
    "singular_values_sq",
    "null_space",
    "water_fill",
    "water_fill_batch",
    "mimo_capacity",
    "capacity_batch",
    "rate_derivative",
]

#: column pairs with relative correlation below this are treated as orthogonal
JACOBI_TOL = 1e-15
JACOBI_MAX_SWEEPS = 60
#: squared singular values below ``ZERO_GAIN_RTOL * max`` are treated as zero
ZERO_GAIN_RTOL = 1e-12


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``A = U @ diag(s) @ V^H`` with ``s`` sorted descending."""

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.s) @ self.v.conj().T


@dataclass(frozen=True)
class WaterFillResult:
    level: float
    powers: np.ndarray
    rate: float

    @property
    def active(self) -> int:
        return int(np.count_nonzero(self.powers > 0))


def _check_finite(a: np.ndarray) -> None:
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix contains non-finite entries")


def jacobi_columns(a, tol=JACOBI_TOL, max_sweeps=JACOBI_MAX_SWEEPS):
    """Orthogonalise the columns of a stack of matrices by plane rotations.

    Parameters
    ----------
    a : array_like, shape (..., m, n)
        Complex (or real) matrices. Leading axes are treated as a batch.

    Returns
    -------
    w : np.ndarray, shape (..., m, n)
        ``a @ v``; its columns are mutually orthogonal.
    v : np.ndarray, shape (..., n, n)
        Unitary accumulation of the rotations.

    Notes
    -----
    The column norms of ``w`` are the singular values of ``a`` (in no
    particular order); nonzero columns normalised give the left singular
    vectors and ``v`` holds the right singular vectors, including a basis of
    the right null space in the columns whose norms vanish.
    """
    w = np.array(a, dtype=complex, copy=True)
    n = w.shape[-1]
    v = np.broadcast_to(np.eye(n, dtype=complex), w.shape[:-2] + (n, n)).copy()
    if n < 2:
        return w, v
    pairs = [(p, q) for p in range(n - 1) for q in range(p + 1, n)]
    # columns this small relative to the whole matrix are numerically null
    floor = 1e-30 * np.einsum("...ij,...ij->...", w.conj(), w).real
    for _ in range(max_sweeps):
        rotated = False
        for p, q in pairs:
            ap = w[..., :, p].copy()
            aq = w[..., :, q].copy()
            alpha = np.einsum("...i,...i->...", ap.conj(), ap).real
            beta = np.einsum("...i,...i->...", aq.conj(), aq).real
            gamma = np.einsum("...i,...i->...", ap.conj(), aq)
            g = np.abs(gamma)
            mask = (g > tol * np.sqrt(alpha * beta)) & (alpha > floor) & (beta > floor)
            if not mask.any():
                continue
            rotated = True
            g_safe = np.where(mask, g, 1.0)
            phase = np.where(mask, gamma / g_safe, 1.0)
            zeta = np.where(mask, (beta - alpha) / (2.0 * g_safe), 0.0)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            c = np.where(mask, c, 1.0)[..., None]
            s = np.where(mask, s, 0.0)[..., None]
            ph = phase.conj()[..., None]

            aq_t = aq * ph
            w[..., :, p] = c * ap - s * aq_t
            w[..., :, q] = s * ap + c * aq_t

            vp = v[..., :, p].copy()
            vq_t = v[..., :, q] * ph
            v[..., :, p] = c * vp - s * vq_t
            v[..., :, q] = s * vp + c * vq_t
        if not rotated:
            break
    return w, v


def _complete_basis(q: np.ndarray, k: int) -> np.ndarray:
    """Replace columns ``k:`` of ``q`` with an orthonormal completion."""
    m = q.shape[0]
    out = q.copy()
    basis = list(out[:, :k].T)
    col = k
    for i in range(m):
        if col >= out.shape[1]:
            break
        e = np.zeros(m, dtype=complex)
        e[i] = 1.0
        for b in basis:
            e = e - (b.conj() @ e) * b
        nrm = np.linalg.norm(e)
        if nrm > 1e-8:
            e = e / nrm
            basis.append(e)
            out[:, col] = e
            col += 1
    return out


def svd(a) -> SvdResult:
    """Thin singular value decomposition of a single complex matrix.

    ``k = min(m, n)`` singular values are returned in descending order.
    Left and right singular vectors are orthonormal even when ``a`` is rank
    deficient (the zero-value columns are completed arbitrarily).
    """
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.size == 0:
        raise ValueError("svd expects a non-empty 2-D matrix")
    _check_finite(a)
    m, n = a.shape
    flip = m < n
    b = a.conj().T if flip else a
    w, v = jacobi_columns(b)
    s = np.linalg.norm(w, axis=0)
    order = np.argsort(-s, kind="stable")
    s = s[order]
    w = w[:, order]
    v = v[:, order]
    smax = s[0] if s.size else 0.0
    rank = int(np.count_nonzero(s > max(smax, 1e-300) * 1e-13)) if smax > 0 else 0
    u = np.zeros_like(w)
    u[:, :rank] = w[:, :rank] / s[:rank]
    if rank < u.shape[1]:
        u = _complete_basis(u, rank)
        s = s.copy()
        s[rank:] = 0.0
    if flip:
        return SvdResult(u=v, s=s, v=u)
    return SvdResult(u=u, s=s, v=v)


def singular_values_sq(h) -> np.ndarray:
    """Squared singular values of a stack of matrices, sorted descending.

    Parameters
    ----------
    h : array_like, shape (..., m, n)

    Returns
    -------
    np.ndarray, shape (..., min(m, n))
        Values below ``ZERO_GAIN_RTOL`` times the largest are set to zero.
    """
    h = np.asarray(h, dtype=complex)
    m, n = h.shape[-2:]
    b = np.swapaxes(h, -1, -2).conj() if m < n else h
    w, _ = jacobi_columns(b)
    ev = np.einsum("...ij,...ij->...j", w.conj(), w).real
    ev = -np.sort(-ev, axis=-1)
    top = ev[..., :1]
    ev = np.where(ev > ZERO_GAIN_RTOL * top, ev, 0.0)
    return ev


def null_space(a, rtol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis of the right null space of a single matrix."""
    a = np.asarray(a, dtype=complex)
    _check_finite(a)
    n = a.shape[1]
    if a.shape[0] == 0:
        return np.eye(n, dtype=complex)
    w, v = jacobi_columns(a)
    s = np.linalg.norm(w, axis=0)
    smax = s.max() if s.size else 0.0
    keep = s <= rtol * smax if smax > 0 else np.ones(n, dtype=bool)
    # the number of null directions can not exceed n - rank(a) <= n - 0
    return v[:, keep]


def _validate_gains(gains: np.ndarray) -> None:
    if np.any(gains <= 0) or not np.all(np.isfinite(gains)):
        raise ValueError("subchannel gains must be finite and positive")
    if np.any(np.diff(gains) > 0):
        raise ValueError("subchannel gains must be sorted in descending order")


def water_fill_batch(gains, power, bt=1.0):
    """Vectorised water-filling over the last axis.

    Parameters
    ----------
    gains : array_like, shape (..., z)
        Subchannel gains sorted descending per row; zeros mark absent
        subchannels and must trail the positive entries.
    power : array_like
        Total power budget, broadcastable to ``gains.shape[:-1]``.
    bt : float
        Scale converting nats/s/Hz to the rate unit.

    Returns
    -------
    level, powers, rate : np.ndarray
        Water level (zero where no subchannel exists), per-subchannel powers,
        and the rate ``bt * sum(log(level * gain))`` over active subchannels.
    """
    gains = np.asarray(gains, dtype=float)
    power = np.broadcast_to(np.asarray(power, dtype=float), gains.shape[:-1])
    present = gains > 0
    with np.errstate(divide="ignore"):
        inv = np.where(present, 1.0 / np.where(present, gains, 1.0), np.inf)
    csum = np.cumsum(inv, axis=-1)
    count = np.arange(1, gains.shape[-1] + 1)
    level_i = (power[..., None] + csum) / count
    ok = present & (level_i > inv)
    n_active = ok.sum(axis=-1)
    idx = np.maximum(n_active - 1, 0)
    level = np.take_along_axis(level_i, idx[..., None], axis=-1)[..., 0]
    any_present = present[..., 0] if gains.shape[-1] else np.zeros(gains.shape[:-1], bool)
    first_inv = inv[..., 0] if gains.shape[-1] else np.zeros(gains.shape[:-1])
    level = np.where(n_active > 0, level, np.where(any_present, first_inv, 0.0))
    powers = np.where(present, np.maximum(level[..., None] - inv, 0.0), 0.0)
    active = count <= n_active[..., None]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(active, np.log(np.where(active, level[..., None] * gains, 1.0)), 0.0)
    rate = bt * terms.sum(axis=-1)
    return level, powers, rate


def water_fill(gains, power: float, bt: float = 1.0) -> WaterFillResult:
    """Water-filling power allocation over parallel Gaussian subchannels.

    An empty gain list is a valid input (a user with no usable subchannel)
    and returns zero rate with the water level reported as zero.

    Examples
    --------
    >>> r = water_fill([2.0, 1.0], 1.0)
    >>> round(r.level, 6), r.powers.round(6).tolist()
    (1.25, [0.75, 0.25])
    """
    gains = np.atleast_1d(np.asarray(gains, dtype=float))
    if power < 0:
        raise ValueError(f"power budget must be non-negative, got {power}")
    if gains.size == 0:
        return WaterFillResult(level=0.0, powers=np.zeros(0), rate=0.0)
    _validate_gains(gains)
    level, powers, rate = water_fill_batch(gains, power, bt)
    return WaterFillResult(level=float(level), powers=powers, rate=float(rate))


def capacity_batch(h, power, bt=1.0):
    """Water-filling capacity of a stack of channel matrices.

    Returns ``(rate, level)`` arrays of shape ``h.shape[:-2]``.
    """
    ev = singular_values_sq(h)
    level, _, rate = water_fill_batch(ev, power, bt)
    return rate, level


def mimo_capacity(h, power: float, bt: float = 1.0) -> float:
    """Maximum of ``bt * log det(I + H Q H^H)`` over covariances with trace ``power``.

    An empty channel (no selected transmitters) or zero power gives rate 0.
    """
    if power < 0:
        raise ValueError(f"power budget must be non-negative, got {power}")
    h = np.asarray(h, dtype=complex)
    if h.size == 0 or power == 0:
        return 0.0
    _check_finite(h)
    ev = singular_values_sq(h)
    ev = ev[ev > 0]
    if ev.size == 0:
        return 0.0
    return water_fill(ev, power, bt).rate


def rate_derivative(h, power: float, bt: float = 1.0) -> float:
    """Derivative of :func:`mimo_capacity` with respect to the power budget.

    Equals ``bt / level`` where ``level`` is the water level at ``power``.
    """
    if power <= 0:
        raise ValueError("rate derivative requires a strictly positive power")
    h = np.asarray(h, dtype=complex)
    _check_finite(h)
    ev = singular_values_sq(h)
    ev = ev[ev > 0]
    if ev.size == 0:
        return 0.0
    return bt / water_fill(ev, power, bt).level
