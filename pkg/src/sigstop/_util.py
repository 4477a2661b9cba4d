"""Shared numerical utilities: counter-based RNG streams and PSD factorizations."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, NumericalError

_MASK64 = (1 << 64) - 1


def path_generator(seed: int, path_index: int) -> np.random.Generator:
    """Independent Philox stream keyed by (seed, path index).

    Draws for path i never depend on the batch size or on the order in
    which paths are generated.
    """
    key = np.array([seed & _MASK64, path_index & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def path_normals(seed: int, m: int, n: int, *, antithetic: bool = False) -> np.ndarray:
    """(m, n) standard normals, row i drawn from the (seed, i) stream.

    With ``antithetic`` the second half of the rows mirrors the first
    (m must be even); marginal laws are unchanged.
    """
    if antithetic and m % 2 != 0:
        raise ConfigError("antithetic sampling requires an even path count")
    rows = m // 2 if antithetic else m
    out = np.empty((m, n))
    for i in range(rows):
        out[i] = path_generator(seed, i).standard_normal(n)
    if antithetic:
        out[rows:] = -out[:rows]
    return out


def jittered_cholesky(
    mat: np.ndarray,
    *,
    start: float = 1e-12,
    cap: float = 1e-8,
    what: str = "covariance",
) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor with escalating diagonal jitter.

    Jitter starts at ``start * trace/dim`` and escalates tenfold up to
    ``cap * trace/dim``; beyond that the matrix is treated as genuinely
    non-PSD and a NumericalError reports the last jitter tried.
    """
    mat = np.asarray(mat, dtype=float)
    dim = mat.shape[0]
    try:
        return np.linalg.cholesky(mat), 0.0
    except np.linalg.LinAlgError:
        pass
    unit = np.trace(mat) / dim
    if unit <= 0:
        unit = 1.0
    eps = start
    while eps <= cap * (1 + 1e-15):
        try:
            return np.linalg.cholesky(mat + eps * unit * np.eye(dim)), eps * unit
        except np.linalg.LinAlgError:
            eps *= 10.0
    raise NumericalError(
        f"{what} matrix not PSD even after jitter {cap * unit:.3e} "
        f"(relative cap {cap:.0e})"
    )


def chunked(n: int, size: int):
    """Yield (start, stop) index pairs covering range(n) in blocks."""
    for lo in range(0, n, size):
        yield lo, min(lo + size, n)
