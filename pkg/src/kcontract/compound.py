"""Multiplicative and additive compound matrices.

Rows and columns of a k-compound of an n x m matrix are indexed by the
strictly increasing k-tuples of ``[1, n]`` (resp. ``[1, m]``) in
lexicographic order.  ``multi_index_enumerate`` produces that ordering and
``rank_of``/``unrank`` convert between tuples and positions using the
combinatorial number system.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64.
"""

from __future__ import annotations

import itertools
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import DimensionCapError

__all__ = [
    "MultiIndex",
    "as_matrix",
    "binom_checked",
    "max_compound_dim",
    "multi_index_enumerate",
    "rank_of",
    "unrank",
    "mult_compound",
    "add_compound",
    "parallelotope_volume",
]

DEFAULT_MAX_DIM = 10**6
# Dense outputs beyond this many entries (~400 MB of float64) are refused.
DEFAULT_MAX_ENTRIES = 5 * 10**7
_INT64_MAX = 2**63 - 1


def max_compound_dim():
    """Cap on binom(n, k); ``KCONTRACT_MAX_COMPOUND_DIM`` overrides the default."""
    raw = os.environ.get("KCONTRACT_MAX_COMPOUND_DIM")
    if raw is None or raw.strip() == "":
        return DEFAULT_MAX_DIM
    value = int(raw)
    if value < 1:
        raise ValueError("KCONTRACT_MAX_COMPOUND_DIM must be a positive integer")
    return value


def _max_entries():
    raw = os.environ.get("KCONTRACT_MAX_COMPOUND_ENTRIES")
    if raw is None or raw.strip() == "":
        return DEFAULT_MAX_ENTRIES
    return int(raw)


def as_matrix(A, name="A"):
    """Validate and convert ``A`` to a finite 2-D float64 array."""
    M = np.asarray(A, dtype=float)
    if M.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix, got shape {M.shape}")
    if M.shape[0] < 1 or M.shape[1] < 1:
        raise ValueError(f"{name} must have at least one row and one column")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} has non-finite entries")
    return M


def binom_checked(n, k, max_dim=None):
    """Return binom(n, k), raising DimensionCapError above the cap or int64 range."""
    if max_dim is None:
        max_dim = max_compound_dim()
    value = math.comb(n, k)
    if value > _INT64_MAX:
        raise DimensionCapError(f"binom({n},{k}) overflows 64-bit integers")
    if value > max_dim:
        raise DimensionCapError(
            f"binom({n},{k}) = {value} exceeds the compound dimension cap {max_dim}"
        )
    return value


def _check_order(n, k):
    if not isinstance(k, (int, np.integer)) or isinstance(k, bool):
        raise TypeError(f"k must be an integer, got {k!r}")
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")


@dataclass(frozen=True)
class MultiIndex:
    """A strictly increasing k-tuple from ``[1, n]`` with its lexicographic rank."""

    entries: tuple
    n: int
    rank: int

    def __post_init__(self):
        e = self.entries
        if len(e) == 0:
            raise ValueError("a multi-index needs at least one entry")
        if any(b <= a for a, b in zip(e, e[1:])):
            raise ValueError(f"entries must be strictly increasing: {e}")
        if e[0] < 1 or e[-1] > self.n:
            raise ValueError(f"entries must lie in [1, {self.n}]: {e}")
        if rank_of(e, self.n) != self.rank:
            raise ValueError(f"rank {self.rank} does not match entries {e}")

    @classmethod
    def from_entries(cls, entries, n):
        entries = tuple(int(i) for i in entries)
        return cls(entries, n, rank_of(entries, n))

    @property
    def k(self):
        return len(self.entries)

    @property
    def zero_based(self):
        return tuple(i - 1 for i in self.entries)


def rank_of(entries, n):
    """Lexicographic rank (0-based) of a 1-based increasing tuple in Q_{k,n}."""
    k = len(entries)
    total = math.comb(n, k)
    tail = 0
    for pos, c in enumerate(entries):
        tail += math.comb(n - c, k - pos)
    return total - 1 - tail


def unrank(rank, n, k):
    """Inverse of :func:`rank_of`: the 1-based tuple at position ``rank``."""
    total = math.comb(n, k)
    if not 0 <= rank < total:
        raise ValueError(f"rank must lie in [0, {total - 1}], got {rank}")
    # Walk the complement rank down the combinatorial number system.
    remaining = total - 1 - rank
    entries = []
    lower = 1
    for pos in range(k):
        slots = k - pos
        c = lower
        while math.comb(n - c, slots) > remaining:
            c += 1
        remaining -= math.comb(n - c, slots)
        entries.append(c)
        lower = c + 1
    return tuple(entries)


def multi_index_enumerate(n, k, max_dim=None):
    """All k-subsets of ``[1, n]`` as MultiIndex objects in lexicographic order."""
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    _check_order(n, k)
    binom_checked(n, k, max_dim)
    return [
        MultiIndex(tuple(i + 1 for i in combo), n, r)
        for r, combo in enumerate(itertools.combinations(range(n), k))
    ]


def _check_entries(rows, cols):
    limit = _max_entries()
    if rows * cols > limit:
        raise DimensionCapError(
            f"compound of size {rows} x {cols} exceeds the dense entry limit {limit}"
        )


def _batched_det(sub):
    # sub has shape (..., k, k)
    k = sub.shape[-1]
    if k == 1:
        return sub[..., 0, 0]
    if k == 2:
        return sub[..., 0, 0] * sub[..., 1, 1] - sub[..., 0, 1] * sub[..., 1, 0]
    if k == 3:
        a = sub
        return (
            a[..., 0, 0] * (a[..., 1, 1] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 1])
            - a[..., 0, 1] * (a[..., 1, 0] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 0])
            + a[..., 0, 2] * (a[..., 1, 0] * a[..., 2, 1] - a[..., 1, 1] * a[..., 2, 0])
        )
    # LAPACK getrf: LU with partial pivoting
    return np.linalg.det(sub)


def mult_compound(A, k, max_dim=None):
    """k-multiplicative compound: all order-k minors of ``A``, lexicographically.

    For an n x m input the result is binom(n, k) x binom(m, k); entry
    ``(rank(a), rank(b))`` is the minor with row set ``a`` and column set ``b``.
    """
    A = as_matrix(A)
    n, m = A.shape
    _check_order(min(n, m), k)
    R = binom_checked(n, k, max_dim)
    C = binom_checked(m, k, max_dim)
    _check_entries(R, C)
    if k == 1:
        return A.copy()

    rows = np.array(list(itertools.combinations(range(n), k)), dtype=np.intp)
    cols = np.array(list(itertools.combinations(range(m), k)), dtype=np.intp)
    out = np.empty((R, C))
    # Bound the temporary (chunk, C, k, k) gather to a few million floats.
    chunk = max(1, 4_000_000 // (C * k * k))
    for start in range(0, R, chunk):
        r = rows[start:start + chunk]
        sub = A[r[:, None, :, None], cols[None, :, None, :]]
        out[start:start + chunk] = _batched_det(sub)
    return out


def add_compound(A, k, max_dim=None):
    """k-additive compound of a square matrix.

    Uses the closed form: the diagonal entry for index set ``a`` is the sum of
    ``A[i, i]`` over ``i`` in ``a``; if ``a`` and ``b`` differ in exactly one
    position (``a`` holds ``i`` at position ``s``, ``b`` holds ``j`` at
    position ``t``) the entry is ``(-1)**(s + t) * A[i, j]``; all other
    entries vanish.
    """
    A = as_matrix(A)
    n, m = A.shape
    if n != m:
        raise ValueError(f"additive compound needs a square matrix, got {A.shape}")
    _check_order(n, k)
    r = binom_checked(n, k, max_dim)
    _check_entries(r, r)
    if k == 1:
        return A.copy()

    combos = list(itertools.combinations(range(n), k))
    position = {c: i for i, c in enumerate(combos)}
    diag = np.diag(A)
    out = np.zeros((r, r))
    for row, alpha in enumerate(combos):
        out[row, row] = diag[list(alpha)].sum()
        members = set(alpha)
        for s, i in enumerate(alpha):
            rest = alpha[:s] + alpha[s + 1:]
            for j in range(n):
                if j in members:
                    continue
                t = sum(1 for x in rest if x < j)
                beta = rest[:t] + (j,) + rest[t:]
                sign = -1.0 if (s + t) % 2 else 1.0
                out[row, position[beta]] = sign * A[i, j]
    return out


def parallelotope_volume(vectors):
    """Volume of the parallelotope spanned by ``k`` vectors in R^n.

    ``vectors`` is either a sequence of k vectors or an n x k array whose
    columns are the vectors.  The volume is ``|X^(k)|_2``.
    """
    if isinstance(vectors, np.ndarray) and vectors.ndim == 2:
        X = vectors
    else:
        X = np.column_stack([np.asarray(v, dtype=float).ravel() for v in vectors])
    X = as_matrix(X, "vectors")
    n, k = X.shape
    if k > n:
        raise ValueError(f"cannot span a {k}-dimensional parallelotope in R^{n}")
    return float(np.linalg.norm(mult_compound(X, k)))
