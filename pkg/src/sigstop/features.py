"""Backend-specific regression features and dual martingale bases.

Primal features at exercise date n only ever read path data up to t_n: every
builder works from prefix signatures (one left-to-right Chen sweep with
checkpoints), so adaptedness is structural, not a convention.

Lifts follow the reference experiments: the linear backend pairs the
signature of (t, X_t) with Laguerre polynomials of the state, the deep
backend applies the network to {X_t} plus the signature of the
QV-augmented volatility (<X>_t, v_t) (time-augmented (t, v_t) on the dual
side), and the kernel backend consumes Gram rows of (<X>_t, W_t, X_t).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import laguerre as np_laguerre

from ._util import chunked
from .errors import ConfigError
from .models import CashflowMatrix, PathBatch
from .signatures import all_words, qv_channel, sig_dim, signature_stream

_CHUNK = 2048

__all__ = [
    "FeatureSpec",
    "PrimalFeatures",
    "build_primal_features",
    "build_dual_basis",
    "build_dual_mlp_features",
    "sig_word_names",
]


@dataclass(frozen=True)
class FeatureSpec:
    """Configuration of one regression backend."""

    backend: str = "deep"        # linear | deep | kernel | state
    level: int = 4               # signature truncation K
    laguerre: int = 3            # Laguerre degrees 1..laguerre (linear backend)
    poly_degree: int = 2         # state backend polynomial degree
    n_kernel: int = 60           # Goursat grid size (kernel backend)
    n_landmarks: int = 32
    ridge: float = 1e-3
    resample_per_date: bool = True
    driver: str = "price"        # Brownian driver for dual martingales
    itm_only: bool = False

    def __post_init__(self):
        if self.backend not in ("linear", "deep", "kernel", "state"):
            raise ConfigError(f"unknown backend {self.backend!r}")


def sig_word_names(dim: int, level: int, skip_empty: bool = False) -> list[str]:
    words = all_words(dim, level)
    names = ["e" if not w else "".join(map(str, w)) for w in words]
    return names[1:] if skip_empty else names


def _laguerre_columns(x: np.ndarray, degree: int, tag: str) -> tuple[np.ndarray, list[str]]:
    """L_1..L_degree evaluated on x (shape (...,)), stacked on the last axis."""
    cols, names = [], []
    for k in range(1, degree + 1):
        c = np.zeros(k + 1)
        c[k] = 1.0
        cols.append(np_laguerre.lagval(x, c))
        names.append(f"lag{k}({tag})")
    return np.stack(cols, axis=-1), names


@dataclass
class PrimalFeatures:
    """Feature tensor for regression dates 1..N-1 with a structural date cutoff."""

    tensor: np.ndarray          # (M, N-1, F)
    names: list[str]
    n_dates: int                # N (number of exercise rights after t_0)

    def at(self, n: int) -> np.ndarray:
        if not 1 <= n <= self.n_dates - 1:
            raise ConfigError(f"regression date {n} outside 1..{self.n_dates - 1}")
        return self.tensor[:, n - 1]


def _stream_at(batch: PathBatch, channels: np.ndarray, level: int,
               keep: np.ndarray, chunk: int = _CHUNK) -> np.ndarray:
    """Chunked prefix-signature stream of (M, P+1, d) channels at kept indices."""
    m = channels.shape[0]
    out = np.empty((m, keep.size, sig_dim(channels.shape[2], level)))
    for lo, hi in chunked(m, chunk):
        out[lo:hi] = signature_stream(channels[lo:hi], level, keep=keep)
    return out


def build_primal_features(batch: PathBatch, Z: CashflowMatrix,
                          spec: FeatureSpec) -> PrimalFeatures:
    """Features at every interior exercise date for the matrix backends."""
    n_dates = len(batch.exercise_idx) - 1
    dates = batch.exercise_idx[1:n_dates]  # fine indices of t_1..t_{N-1}
    t_ex = batch.times[dates]
    if spec.backend == "linear":
        lift = np.stack(
            [np.broadcast_to(batch.times, batch.X.shape), batch.X], axis=-1
        )
        sig = _stream_at(batch, lift, spec.level, dates)
        s_over_k = batch.S[:, dates] / Z.strike
        lag_s, names_s = _laguerre_columns(s_over_k, spec.laguerre, "S/K")
        lag_v, names_v = _laguerre_columns(batch.v[:, dates], spec.laguerre, "v")
        tensor = np.concatenate([sig, lag_s, lag_v], axis=-1)
        names = sig_word_names(2, spec.level) + names_s + names_v
    elif spec.backend == "deep":
        qv = qv_channel(batch.v**2, batch.times)
        lift = np.stack([qv, batch.v], axis=-1)
        sig = _stream_at(batch, lift, spec.level, dates)[:, :, 1:]  # drop level 0
        tensor = np.concatenate([batch.X[:, dates, None], sig], axis=-1)
        names = ["X"] + sig_word_names(2, spec.level, skip_empty=True)
    elif spec.backend == "state":
        cols = [np.ones_like(batch.S[:, dates])]
        names = ["e"]
        for k in range(1, spec.poly_degree + 1):
            cols.append(batch.S[:, dates] ** k)
            names.append(f"S^{k}")
        cols.append(batch.v[:, dates])
        names.append("v")
        tensor = np.stack(cols, axis=-1)
    else:
        raise ConfigError("kernel features are Gram rows; use the kernel pipeline")
    del t_ex
    return PrimalFeatures(tensor, names, n_dates)


# ---------------------------------------------------------------------------
# dual bases
# ---------------------------------------------------------------------------

def _driver_increments(batch: PathBatch, driver: str) -> np.ndarray:
    if driver == "price":
        return batch.price_driver_increments()
    if driver == "vol":
        return np.diff(batch.W, axis=1)
    raise ConfigError(f"unknown martingale driver {driver!r}")


def build_dual_basis(batch: PathBatch, Z: CashflowMatrix, spec: FeatureSpec,
                     chunk: int = _CHUNK) -> tuple[np.ndarray, list[str]]:
    """Basis martingales for the linear dual backend: (M, B, N+1).

    Integrands are prefix signatures of (t, X, phi(S)) plus Laguerre state
    polynomials, evaluated at the left node of every fine step and integrated
    against the chosen Brownian driver.
    """
    m, p1 = batch.X.shape
    p = p1 - 1
    dz = _driver_increments(batch, spec.driver)
    left = np.arange(p)
    payoff = np.maximum(Z.strike - batch.S, 0.0)
    d_sig = sig_dim(3, spec.level)
    names = (sig_word_names(3, spec.level)
             + [f"lag{k}(S/K)" for k in range(1, spec.laguerre + 1)]
             + [f"lag{k}(v)" for k in range(1, spec.laguerre + 1)])
    n_basis = d_sig + 2 * spec.laguerre
    out = np.empty((m, n_basis, len(batch.exercise_idx)))
    for lo, hi in chunked(m, chunk):
        lift = np.stack(
            [np.broadcast_to(batch.times, batch.X[lo:hi].shape),
             batch.X[lo:hi], payoff[lo:hi]], axis=-1)
        sig = signature_stream(lift, spec.level, keep=left)  # (c, P, D)
        lag_s, _ = _laguerre_columns(batch.S[lo:hi, :-1] / Z.strike, spec.laguerre, "S/K")
        lag_v, _ = _laguerre_columns(batch.v[lo:hi, :-1], spec.laguerre, "v")
        psi = np.concatenate([sig, lag_s, lag_v], axis=-1)  # (c, P, B)
        incr = psi * dz[lo:hi, :, None]
        cum = np.concatenate(
            [np.zeros((hi - lo, 1, n_basis)), np.cumsum(incr, axis=1)], axis=1)
        out[lo:hi] = cum[:, batch.exercise_idx, :].transpose(0, 2, 1)
    return out, names


def build_dual_mlp_features(batch: PathBatch, spec: FeatureSpec,
                            chunk: int = _CHUNK) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Per-fine-step integrand features for the deep dual: (M, P, F) plus dz.

    Features at step u are {X_u} and the signature of the time-augmented
    volatility (t, v_t) on [0, u], levels 1..K.
    """
    m, p1 = batch.X.shape
    p = p1 - 1
    left = np.arange(p)
    n_sig = sig_dim(2, spec.level) - 1
    out = np.empty((m, p, 1 + n_sig))
    for lo, hi in chunked(m, chunk):
        lift = np.stack(
            [np.broadcast_to(batch.times, batch.v[lo:hi].shape), batch.v[lo:hi]],
            axis=-1)
        sig = signature_stream(lift, spec.level, keep=left)[:, :, 1:]
        out[lo:hi, :, 0] = batch.X[lo:hi, :-1]
        out[lo:hi, :, 1:] = sig
    dz = _driver_increments(batch, spec.driver)
    names = ["X"] + sig_word_names(2, spec.level, skip_empty=True)
    return out, dz, names
