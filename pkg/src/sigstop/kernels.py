"""Signature-kernel machinery: Goursat PDE solves, Nystrom landmarks, Gram blocks.

The signature kernel k_{s,t}(x, y) = <sig(x)|[0,s], sig(y)|[0,t]> solves the
Goursat problem d^2 u / ds dt = <x'(s), y'(t)> u with u(0,.) = u(.,0) = 1 and
is evaluated here by an explicit second-order finite-difference sweep over
anti-diagonals, vectorized across many path pairs at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._util import chunked, jittered_cholesky
from .errors import ConfigError, GridError, NumericalError
from .models import PathBatch
from .signatures import AugmentedPath, qv_channel

__all__ = [
    "KernelGrid",
    "KernelLift",
    "GramBlock",
    "goursat_kernel",
    "goursat_surfaces",
    "goursat_diagonals",
    "kernel_lift",
    "nystrom_sample_primal",
    "nystrom_sample_dual",
    "gram_blocks",
    "kernel_martingales",
    "refine_linear",
]

_CHUNK = 2048  # path pairs per PDE sweep; bounds memory at ~100 MB for 60x60 grids


def refine_linear(values: np.ndarray, factor: int) -> np.ndarray:
    """Insert factor-1 linearly interpolated points per step (exact for pw-linear paths)."""
    if factor <= 1:
        return values
    v = np.asarray(values, dtype=float)
    steps = v.shape[-2] - 1
    lam = np.arange(factor) / factor  # weights within a step
    left = v[..., :-1, :][..., :, None, :]
    right = v[..., 1:, :][..., :, None, :]
    fine = left + (right - left) * lam[None, :, None]
    fine = fine.reshape(*v.shape[:-2], steps * factor, v.shape[-1])
    return np.concatenate([fine, v[..., -1:, :]], axis=-2)


def goursat_surfaces(dx: np.ndarray, dy: np.ndarray, *, order: int = 2) -> np.ndarray:
    """Solve the Goursat PDE for a batch of path pairs.

    Parameters
    ----------
    dx, dy : (B, P, d) and (B, Q, d) increment arrays.
    order : 1 for the plain explicit scheme, 2 (default) for the
        second-order variant.

    Returns
    -------
    (B, P+1, Q+1) solution surfaces with u[.,0,:] = u[.,:,0] = 1.
    """
    if dx.ndim != 3 or dy.ndim != 3 or dx.shape[2] != dy.shape[2]:
        raise GridError("increment arrays must be (B, steps, d) with equal d")
    inc = np.einsum("bpk,bqk->bpq", dx, dy)
    B, P, Q = inc.shape
    u = np.ones((B, P + 1, Q + 1))
    if order == 2:
        f = 1.0 + 0.5 * inc + inc * inc / 12.0
        g = 1.0 - inc * inc / 12.0
        for s in range(2, P + Q + 1):
            p = np.arange(max(1, s - Q), min(P, s - 1) + 1)
            q = s - p
            u[:, p, q] = (u[:, p, q - 1] + u[:, p - 1, q]) * f[:, p - 1, q - 1] \
                - u[:, p - 1, q - 1] * g[:, p - 1, q - 1]
    elif order == 1:
        for s in range(2, P + Q + 1):
            p = np.arange(max(1, s - Q), min(P, s - 1) + 1)
            q = s - p
            u[:, p, q] = u[:, p, q - 1] + u[:, p - 1, q] \
                + u[:, p - 1, q - 1] * (inc[:, p - 1, q - 1] - 1.0)
    else:
        raise ConfigError(f"unknown scheme order {order}")
    if not np.all(np.isfinite(u[:, -1, -1])):
        raise NumericalError(
            "Goursat solution overflowed; rescale the paths (see kernel_lift) "
            "before evaluating the signature kernel"
        )
    return u


@dataclass(frozen=True)
class KernelGrid:
    """Solution surface of one Goursat solve, u[p, q] ~ k_{u_p, u_q}(x, y)."""

    x: AugmentedPath
    y: AugmentedPath
    u: np.ndarray
    order: int = 2

    @property
    def value(self) -> float:
        """k_{S,T}(x, y) at the full horizons."""
        return float(self.u[-1, -1])

    def diagonal(self) -> np.ndarray:
        if self.u.shape[0] != self.u.shape[1]:
            raise GridError("diagonal needs both paths on the same grid")
        return np.einsum("pp->p", self.u)


def goursat_kernel(x: AugmentedPath, y: AugmentedPath, *, order: int = 2,
                   refine: int = 1) -> KernelGrid:
    """Signature kernel of two sampled paths (single pair)."""
    xv = refine_linear(x.values, refine)
    yv = refine_linear(y.values, refine)
    dx = np.diff(xv, axis=0)[None]
    dy = np.diff(yv, axis=0)[None]
    u = goursat_surfaces(dx, dy, order=order)[0]
    return KernelGrid(x, y, u, order)


def goursat_diagonals(xs: np.ndarray, ys: np.ndarray, *, order: int = 2,
                      chunk: int = _CHUNK) -> np.ndarray:
    """k_{s,s}(x_b, y_b) for every pair along the common grid, chunked.

    xs, ys : (B, P+1, d) path arrays on the same grid.
    Returns (B, P+1) kernel diagonals.
    """
    if xs.shape != ys.shape:
        raise GridError("paired path arrays must share a shape")
    B, n_plus_1, _ = xs.shape
    out = np.empty((B, n_plus_1))
    for lo, hi in chunked(B, chunk):
        u = goursat_surfaces(np.diff(xs[lo:hi], axis=1), np.diff(ys[lo:hi], axis=1),
                             order=order)
        out[lo:hi] = np.einsum("bpp->bp", u)
    return out


# ---------------------------------------------------------------------------
# lifts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KernelLift:
    """Batch of (QV, W, X) paths on the kernel grid, rescaled per channel.

    Scales are fitted once (on the training batch) and must be reused for any
    path that will be compared against these: kernels only make sense on a
    common scaling.
    """

    times: np.ndarray       # (P+1,) kernel grid
    paths: np.ndarray       # (M, P+1, 3) scaled channels
    scales: np.ndarray      # (3,) divisors applied per channel
    fine_stride: int        # kernel grid = fine grid subsampled by this stride
    exercise_kidx: np.ndarray  # exercise dates as kernel-grid indices


def _lift_channels(batch: PathBatch, stride: int) -> np.ndarray:
    qv = qv_channel(batch.v**2, batch.times)  # <X>_t on the fine grid
    keep = np.arange(0, batch.n_fine + 1, stride)
    return np.stack([qv[:, keep], batch.W[:, keep], batch.X[:, keep]], axis=-1)


def kernel_lift(batch: PathBatch, n_kernel: int, *, scales: np.ndarray | None = None,
                tv_quantile: float = 1.0) -> KernelLift:
    """Build the kernel input paths (QV(X), W, X) on an n_kernel-point grid.

    Each channel is divided by the batch maximum (by default) of per-path
    total variation, so the Goursat increments stay O(1) even for the
    heavy-tailed QV channel of very rough models; pass ``scales`` to reuse the
    training normalization on a test batch.
    """
    if batch.n_fine % n_kernel != 0:
        raise GridError(f"kernel grid {n_kernel} must divide the fine grid {batch.n_fine}")
    stride = batch.n_fine // n_kernel
    n_ex = len(batch.exercise_idx) - 1
    if n_kernel % n_ex != 0:
        raise GridError(f"kernel grid {n_kernel} must contain the {n_ex} exercise dates")
    raw = _lift_channels(batch, stride)
    if scales is None:
        tv = np.abs(np.diff(raw, axis=1)).sum(axis=1)  # (M, 3)
        scales = np.quantile(tv, tv_quantile, axis=0)
        scales = np.where(scales > 0, scales, 1.0)
    paths = raw / scales[None, None, :]
    kidx = batch.exercise_idx // stride
    return KernelLift(batch.times[::stride], paths, np.asarray(scales, dtype=float),
                      stride, kidx)


# ---------------------------------------------------------------------------
# Nystrom landmark sampling
# ---------------------------------------------------------------------------

def self_diagonals(lift: KernelLift, *, order: int = 2, chunk: int = _CHUNK) -> np.ndarray:
    """k_{s,s}(x_i, x_i) along the grid for every path in the lift: (M, P+1)."""
    return goursat_diagonals(lift.paths, lift.paths, order=order, chunk=chunk)


def _weighted_sample(weights: np.ndarray, n_draw: int, rng: np.random.Generator) -> np.ndarray:
    m = weights.shape[0]
    if n_draw > m:
        raise ConfigError(f"cannot draw {n_draw} landmarks from {m} paths")
    if n_draw == m:
        return np.arange(m)
    p = weights / weights.sum()
    return rng.choice(m, size=n_draw, replace=False, p=p)


def nystrom_sample_primal(self_diag: np.ndarray, exercise_kidx: np.ndarray,
                          date: int, n_landmarks: int, seed: int) -> np.ndarray:
    """Sample landmark indices at one exercise date, p_i ~ k_{t_n,t_n}(x_i, x_i)."""
    weights = self_diag[:, exercise_kidx[date]]
    rng = np.random.default_rng((seed, date))
    return np.sort(_weighted_sample(weights, n_landmarks, rng))


def nystrom_sample_dual(self_diag: np.ndarray, times: np.ndarray,
                        n_landmarks: int, seed: int) -> np.ndarray:
    """Sample landmarks once, p_i ~ int_0^T k_{s,s}(x_i, x_i)^2 ds (left sums)."""
    dt = np.diff(times)
    weights = (self_diag[:, :-1] ** 2 * dt[None, :]).sum(axis=1)
    rng = np.random.default_rng((seed, 7919))
    return np.sort(_weighted_sample(weights, n_landmarks, rng))


# ---------------------------------------------------------------------------
# Gram blocks and kernel martingales
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GramBlock:
    """Kernel evaluations at one exercise date against L landmarks."""

    date: int
    K: np.ndarray           # (M, L) k_{t_n,t_n}(X_i, x_l)
    R: np.ndarray           # (L, L) landmark block, projected PSD
    landmark_idx: np.ndarray


def _psd_project(R: np.ndarray, *, what: str) -> np.ndarray:
    """Symmetrize and clip tiny negative eigenvalues of an approximate Gram.

    The finite-difference kernel carries O(h^2) error, so landmark blocks can
    be indefinite at the ~1e-6 level; anything worse signals a real problem.
    """
    sym = 0.5 * (R + R.T)
    vals, vecs = np.linalg.eigh(sym)
    floor = -1e-3 * max(np.trace(sym) / len(sym), 1e-30)
    if vals.min() < floor:
        raise NumericalError(
            f"{what} is far from PSD (min eigenvalue {vals.min():.3e}); "
            "check the path scaling"
        )
    return (vecs * np.maximum(vals, 0.0)) @ vecs.T


def cross_diagonals(rows: np.ndarray, cols: np.ndarray, *, order: int = 2,
                    chunk: int = _CHUNK) -> np.ndarray:
    """k_{s,s}(row_i, col_l) diagonals for all (i, l) pairs: (M, L, P+1)."""
    m, n_plus_1, d = rows.shape
    L = cols.shape[0]
    out = np.empty((m, L, n_plus_1))
    pair_rows = np.repeat(np.arange(m), L)
    pair_cols = np.tile(np.arange(L), m)
    total = m * L
    for lo, hi in chunked(total, chunk):
        xs = rows[pair_rows[lo:hi]]
        ys = cols[pair_cols[lo:hi]]
        diag = goursat_diagonals(xs, ys, order=order, chunk=chunk)
        out.reshape(total, n_plus_1)[lo:hi] = diag
    return out


def gram_blocks(lift: KernelLift, landmarks: np.ndarray | list[np.ndarray],
                *, order: int = 2, chunk: int = _CHUNK,
                jitter_cap: float = 1e-8) -> list[GramBlock]:
    """Per-exercise-date Gram blocks from one full-horizon solve per path pair.

    ``landmarks`` is either a single index set (shared across dates) or one
    set per exercise date 1..N; per-date sets are serviced through the union
    of all requested landmarks, still one PDE solve per (path, landmark) pair.
    """
    n_dates = len(lift.exercise_kidx) - 1
    if isinstance(landmarks, np.ndarray) and landmarks.ndim == 1:
        per_date = [np.asarray(landmarks, dtype=int)] * n_dates
    else:
        per_date = [np.asarray(ix, dtype=int) for ix in landmarks]
        if len(per_date) != n_dates:
            raise ConfigError(
                f"need landmark sets for {n_dates} exercise dates, got {len(per_date)}"
            )
    union = np.unique(np.concatenate(per_date))
    if union.size and (union.min() < 0 or union.max() >= lift.paths.shape[0]):
        raise ConfigError("landmark index out of range")
    col_of = {int(j): c for c, j in enumerate(union)}

    land_paths = lift.paths[union]
    diag_all = cross_diagonals(lift.paths, land_paths, order=order, chunk=chunk)
    diag_land = cross_diagonals(land_paths, land_paths, order=order, chunk=chunk)

    blocks = []
    for n in range(1, n_dates + 1):
        idx = per_date[n - 1]
        cols = np.array([col_of[int(j)] for j in idx])
        kg = lift.exercise_kidx[n]
        K = diag_all[:, cols, kg]
        R = _psd_project(diag_land[np.ix_(cols, cols)][:, :, kg],
                         what=f"landmark Gram at date {n}")
        blocks.append(GramBlock(n, K, R, idx))
    return blocks


def kernel_martingales(batch: PathBatch, lift: KernelLift, landmark_idx: np.ndarray,
                       *, driver: str = "price", order: int = 2,
                       chunk: int = _CHUNK,
                       integrands: np.ndarray | None = None) -> np.ndarray:
    """Euler stochastic integrals M_{t_n}^{(i,l)} = sum_{u<t_n} k_{u,u}(x_l, X_i) dW_u^(i).

    Integration runs on the kernel grid (left-point integrand) against the
    requested Brownian driver; returns (M, L, N+1) with zeros at t_0.
    Pass precomputed ``integrands`` (M, L, P+1) to reuse PDE solves.
    """
    stride = lift.fine_stride
    keep = np.arange(0, batch.n_fine + 1, stride)
    if driver == "price":
        dz = batch.price_driver_increments()
    elif driver == "vol":
        dz = np.diff(batch.W, axis=1)
    else:
        raise ConfigError(f"unknown martingale driver {driver!r}")
    if (batch.n_fine // stride) + 1 != lift.paths.shape[1]:
        raise GridError("Brownian fine grid does not match the kernel grid")
    dz_k = np.add.reduceat(dz, keep[:-1], axis=1)  # increments on the kernel grid

    if integrands is None:
        integrands = cross_diagonals(lift.paths, lift.paths[np.asarray(landmark_idx, dtype=int)],
                                     order=order, chunk=chunk)
    m, L, _ = integrands.shape
    incr = integrands[:, :, :-1] * dz_k[:, None, :]
    cum = np.concatenate([np.zeros((m, L, 1)), np.cumsum(incr, axis=2)], axis=2)
    return cum[:, :, lift.exercise_kidx]
