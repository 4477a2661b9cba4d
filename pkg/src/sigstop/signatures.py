"""Truncated tensor algebra over path increments.

Signatures are stored as flat graded arrays: levels 0..K concatenated, each
level-n block holding the d^n tensor coefficients in lexicographic word
order (letters 1..d).  All products are exact on piecewise-linear paths:
each step contributes a truncated tensor exponential of its increment and
steps are combined with Chen's relation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import DimensionError, DomainError, GridError, TruncationError

__all__ = [
    "sig_dim",
    "level_offsets",
    "word_index",
    "all_words",
    "lyndon_words",
    "TruncatedSignature",
    "LogSignature",
    "LinearFunctional",
    "AugmentedPath",
    "augment_path",
    "qv_channel",
    "tensor_exp_increment",
    "chen_product",
    "log_signature",
    "exp_signature",
    "shuffle_product",
    "apply_functional",
    "segment_signature",
    "path_signature",
    "signature_stream",
]


def sig_dim(dim: int, level: int) -> int:
    """Number of stored coefficients: (d^(K+1)-1)/(d-1), or K+1 for d=1."""
    if dim < 1 or level < 0:
        raise DimensionError(f"need dim >= 1 and level >= 0, got {dim}, {level}")
    if dim == 1:
        return level + 1
    return (dim ** (level + 1) - 1) // (dim - 1)


@lru_cache(maxsize=None)
def level_offsets(dim: int, level: int) -> tuple[int, ...]:
    """Start offset of each level block; has level+2 entries (last = total)."""
    off = [0]
    for n in range(level + 1):
        off.append(off[-1] + dim**n)
    return tuple(off)


def word_index(word: tuple[int, ...], dim: int) -> int:
    """Flat index of a word's coefficient inside the graded layout."""
    idx = 0
    for letter in word:
        if not 1 <= letter <= dim:
            raise DimensionError(f"letter {letter} outside alphabet 1..{dim}")
        idx = idx * dim + (letter - 1)
    return level_offsets(dim, len(word))[len(word)] + idx


def all_words(dim: int, level: int) -> list[tuple[int, ...]]:
    """Words of length 0..level in layout order."""
    words: list[tuple[int, ...]] = [()]
    current: list[tuple[int, ...]] = [()]
    for _ in range(level):
        current = [w + (a,) for w in current for a in range(1, dim + 1)]
        words.extend(current)
    return words


def lyndon_words(dim: int, level: int) -> list[tuple[int, ...]]:
    """Lyndon words of length 1..level (Duval's algorithm)."""
    out: list[tuple[int, ...]] = []
    w = [0]
    while w:
        w[-1] += 1
        if len(w) <= level:
            out.append(tuple(w))
        m = len(w)
        while len(w) < level:
            w.append(w[len(w) - m])
        while w and w[-1] == dim:
            w.pop()
    return sorted(out, key=lambda u: (len(u), u))


# ---------------------------------------------------------------------------
# batched flat-array kernels (m signatures at once)
# ---------------------------------------------------------------------------

def _mul_flat(a: np.ndarray, b: np.ndarray, dim: int, level: int) -> np.ndarray:
    """Truncated tensor product of (m, D) coefficient arrays."""
    off = level_offsets(dim, level)
    m = a.shape[0]
    out = np.empty_like(a)
    for n in range(level + 1):
        acc = None
        for i in range(n + 1):
            ai = a[:, off[i]:off[i + 1]]
            bj = b[:, off[n - i]:off[n - i + 1]]
            term = np.einsum("mi,mj->mij", ai, bj).reshape(m, -1)
            acc = term if acc is None else acc + term
        out[:, off[n]:off[n + 1]] = acc
    return out


def _exp_flat(inc: np.ndarray, level: int) -> np.ndarray:
    """exp-tensor of level-1 increments: block n = inc^(x)n / n!."""
    m, dim = inc.shape
    off = level_offsets(dim, level)
    out = np.zeros((m, off[-1]))
    out[:, 0] = 1.0
    prev = out[:, 0:1]
    for n in range(1, level + 1):
        prev = (np.einsum("mi,mj->mij", prev, inc) / n).reshape(m, -1)
        out[:, off[n]:off[n + 1]] = prev
    return out


def _unit_flat(m: int, dim: int, level: int) -> np.ndarray:
    out = np.zeros((m, sig_dim(dim, level)))
    out[:, 0] = 1.0
    return out


def signature_stream(
    paths: np.ndarray,
    level: int,
    keep: np.ndarray | None = None,
) -> np.ndarray:
    """Prefix signatures sig[0, u_k] for a batch of paths in one Chen sweep.

    Parameters
    ----------
    paths : (m, n+1, d) array of sampled path values.
    level : truncation level K.
    keep : grid indices at which to store checkpoints (default: all n+1).

    Returns
    -------
    (m, len(keep), D) array of flat signature coefficients.
    """
    paths = np.asarray(paths, dtype=float)
    if paths.ndim != 3:
        raise DimensionError("paths must be (m, n+1, d)")
    m, n_plus_1, dim = paths.shape
    if keep is None:
        keep = np.arange(n_plus_1)
    keep = np.asarray(keep, dtype=int)
    if keep.size and (keep.min() < 0 or keep.max() >= n_plus_1):
        raise GridError("checkpoint index outside the path grid")
    want = {int(k): j for j, k in enumerate(keep)}
    out = np.empty((m, keep.size, sig_dim(dim, level)))
    sig = _unit_flat(m, dim, level)
    if 0 in want:
        out[:, want[0]] = sig
    for step in range(n_plus_1 - 1):
        inc = paths[:, step + 1] - paths[:, step]
        sig = _mul_flat(sig, _exp_flat(inc, level), dim, level)
        if step + 1 in want:
            out[:, want[step + 1]] = sig
    return out


# ---------------------------------------------------------------------------
# single-signature objects
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TruncatedSignature:
    """Graded coefficients of a truncated signature (group-like, level-0 = 1)."""

    dim: int
    level: int
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        object.__setattr__(self, "coeffs", c)
        if c.shape != (sig_dim(self.dim, self.level),):
            raise DimensionError(
                f"expected {sig_dim(self.dim, self.level)} coefficients, got {c.shape}"
            )
        if c[0] != 1.0:
            raise DomainError("level-0 coefficient of a signature must be exactly 1")

    def block(self, n: int) -> np.ndarray:
        off = level_offsets(self.dim, self.level)
        return self.coeffs[off[n]:off[n + 1]]

    @staticmethod
    def unit(dim: int, level: int) -> "TruncatedSignature":
        return TruncatedSignature(dim, level, _unit_flat(1, dim, level)[0])


@dataclass(frozen=True)
class LogSignature:
    """Graded log-tensor (level-0 = 0), same layout as TruncatedSignature."""

    dim: int
    level: int
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        object.__setattr__(self, "coeffs", c)
        if c.shape != (sig_dim(self.dim, self.level),):
            raise DimensionError("log-signature coefficient length mismatch")
        if c[0] != 0.0:
            raise DomainError("level-0 coefficient of a log-signature must be 0")

    def block(self, n: int) -> np.ndarray:
        off = level_offsets(self.dim, self.level)
        return self.coeffs[off[n]:off[n + 1]]

    def lyndon_view(self) -> tuple[list[tuple[int, ...]], np.ndarray]:
        """Coefficients read at Lyndon-word slots (faithful for Lie elements)."""
        words = lyndon_words(self.dim, self.level)
        vals = np.array([self.coeffs[word_index(w, self.dim)] for w in words])
        return words, vals


def tensor_exp_increment(increment: np.ndarray, level: int) -> TruncatedSignature:
    """Signature of one linear segment with the given increment."""
    inc = np.atleast_1d(np.asarray(increment, dtype=float))
    return TruncatedSignature(inc.size, level, _exp_flat(inc[None, :], level)[0])


def chen_product(a: TruncatedSignature, b: TruncatedSignature) -> TruncatedSignature:
    """Concatenation product: sig of path1 * sig of path2 = sig of path1·path2."""
    if a.dim != b.dim or a.level != b.level:
        raise DimensionError("chen_product requires matching dim and level")
    c = _mul_flat(a.coeffs[None, :], b.coeffs[None, :], a.dim, a.level)[0]
    return TruncatedSignature(a.dim, a.level, c)


def log_signature(sig: TruncatedSignature) -> LogSignature:
    """log-tensor of a group-like element; series terminates at level K."""
    dim, level = sig.dim, sig.level
    x = sig.coeffs[None, :].copy()
    x[:, 0] -= 1.0  # x = S - 1, nilpotent
    res = x.copy()
    power = x
    for k in range(2, level + 1):
        power = _mul_flat(power, x, dim, level)
        res += ((-1.0) ** (k + 1) / k) * power
    res[0, 0] = 0.0
    return LogSignature(dim, level, res[0])


def exp_signature(logsig: LogSignature) -> TruncatedSignature:
    """Inverse of :func:`log_signature`."""
    dim, level = logsig.dim, logsig.level
    x = logsig.coeffs[None, :]
    res = _unit_flat(1, dim, level) + x
    power = x
    fact = 1.0
    for k in range(2, level + 1):
        power = _mul_flat(power, x, dim, level)
        fact *= k
        res += power / fact
    res[0, 0] = 1.0
    return TruncatedSignature(dim, level, res[0])


# ---------------------------------------------------------------------------
# words and linear functionals
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _shuffle_words(u: tuple[int, ...], v: tuple[int, ...]) -> tuple[tuple[tuple[int, ...], int], ...]:
    """Multiset of shuffles of two words, as ((word, multiplicity), ...)."""
    if not u:
        return ((v, 1),)
    if not v:
        return ((u, 1),)
    acc: dict[tuple[int, ...], int] = {}
    for w, c in _shuffle_words(u[:-1], v):
        key = w + (u[-1],)
        acc[key] = acc.get(key, 0) + c
    for w, c in _shuffle_words(u, v[:-1]):
        key = w + (v[-1],)
        acc[key] = acc.get(key, 0) + c
    return tuple(sorted(acc.items()))


class LinearFunctional:
    """Sparse linear functional on the tensor algebra: word -> coefficient."""

    def __init__(self, dim: int, terms: dict[tuple[int, ...], float] | None = None):
        self.dim = int(dim)
        self.terms: dict[tuple[int, ...], float] = {}
        for word, coeff in (terms or {}).items():
            word = tuple(int(a) for a in word)
            for letter in word:
                if not 1 <= letter <= self.dim:
                    raise DimensionError(
                        f"letter {letter} outside alphabet 1..{self.dim}"
                    )
            if word in self.terms:
                raise DimensionError(f"duplicate word {word} in functional")
            self.terms[word] = float(coeff)

    @property
    def max_len(self) -> int:
        return max((len(w) for w in self.terms), default=0)

    def __repr__(self):
        body = " + ".join(f"{c:g}*{''.join(map(str, w)) or 'e'}" for w, c in self.terms.items())
        return f"LinearFunctional(d={self.dim}: {body or '0'})"


def shuffle_product(l1: LinearFunctional, l2: LinearFunctional) -> LinearFunctional:
    """Functional l3 with <l1,S><l2,S> = <l3,S> on all group-like S."""
    if l1.dim != l2.dim:
        raise DimensionError("functionals live on different alphabets")
    acc: dict[tuple[int, ...], float] = {}
    for w1, c1 in l1.terms.items():
        for w2, c2 in l2.terms.items():
            for w, mult in _shuffle_words(w1, w2):
                acc[w] = acc.get(w, 0.0) + c1 * c2 * mult
    return LinearFunctional(l1.dim, acc)


def apply_functional(ell: LinearFunctional, sig: TruncatedSignature) -> float:
    """Pairing <ell, sig>; rejects words beyond the truncation level."""
    if ell.dim != sig.dim:
        raise DimensionError("alphabet does not match signature dimension")
    if ell.max_len > sig.level:
        raise TruncationError(
            f"functional has words up to length {ell.max_len}, signature truncated at {sig.level}"
        )
    return float(sum(c * sig.coeffs[word_index(w, sig.dim)] for w, c in ell.terms.items()))


# ---------------------------------------------------------------------------
# paths and augmentations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AugmentedPath:
    """A sampled path with an optional monotone lead channel."""

    times: np.ndarray
    values: np.ndarray  # (n+1, d)
    augmentation: str = "none"  # time | qv | none

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)
        if t.ndim != 1 or v.shape[0] != t.shape[0]:
            raise GridError("times and values disagree on the number of samples")
        if np.any(np.diff(t) <= 0):
            raise GridError("time grid must be strictly increasing")
        if self.augmentation != "none" and np.any(np.diff(v[:, 0]) < -1e-14):
            raise DomainError("augmented lead channel must be non-decreasing")

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def qv_channel(aux: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Cumulative left-Riemann sum of a non-negative series (e.g. v^2)."""
    aux = np.asarray(aux, dtype=float)
    dt = np.diff(np.asarray(times, dtype=float))
    if np.any(dt <= 0):
        raise GridError("time grid must be strictly increasing")
    steps = aux[..., :-1] * dt
    if np.any(steps < 0):
        raise DomainError("quadratic-variation increments must be non-negative")
    out = np.zeros(aux.shape)
    out[..., 1:] = np.cumsum(steps, axis=-1)
    return out


def augment_path(
    values: np.ndarray,
    times: np.ndarray,
    mode: str,
    aux: np.ndarray | None = None,
) -> AugmentedPath:
    """Prepend a monotone channel: mode 'time' uses the grid, 'qv' integrates aux."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) <= 0):
        raise GridError("time grid must be strictly increasing")
    if mode == "time":
        lead = times
    elif mode == "qv":
        if aux is None:
            raise DomainError("mode='qv' needs the auxiliary series (e.g. v^2)")
        lead = qv_channel(np.asarray(aux, dtype=float), times)
    else:
        raise DomainError(f"unknown augmentation mode {mode!r}")
    stacked = np.column_stack([lead, values])
    return AugmentedPath(times, stacked, augmentation=mode)


def segment_signature(
    path: AugmentedPath | np.ndarray,
    s_idx: int,
    t_idx: int,
    level: int,
) -> TruncatedSignature:
    """Exact truncated signature of the piecewise-linear path on [u_s, u_t]."""
    values = path.values if isinstance(path, AugmentedPath) else np.asarray(path, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if s_idx > t_idx:
        raise GridError(f"segment indices out of order: {s_idx} > {t_idx}")
    dim = values.shape[1]
    if s_idx == t_idx:
        return TruncatedSignature.unit(dim, level)
    seg = values[s_idx:t_idx + 1]
    sig = signature_stream(seg[None, :, :], level, keep=np.array([seg.shape[0] - 1]))
    return TruncatedSignature(dim, level, sig[0, 0])


def path_signature(values: np.ndarray, level: int) -> TruncatedSignature:
    """Signature of a whole sampled path."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    return segment_signature(values, 0, values.shape[0] - 1, level)
