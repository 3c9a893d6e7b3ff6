"""Truncated signatures of piecewise-linear paths.

Coefficients are stored level-major, lexicographic within a level, over
the alphabet ``1..d``. For dimension ``d`` the word ``(i1, ..., ik)`` lives
at position::

    offset(k) + sum_j (i_j - 1) * d**(k - 1 - j)      offset(k) = d + ... + d**(k-1)

so the level-``k`` block is the C-order flattening of a ``d x ... x d``
tensor. The constant level-0 term (always 1) is implicit.

The lead-lag convention puts lead coordinates first; with that ordering the
antisymmetric part ``S(lead, lag) - S(lag, lead)`` of a one-dimensional
stream is its quadratic variation ``sum (x_{i+1} - x_i)**2`` (positive).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

__all__ = [
    "Path",
    "Signature",
    "augment_with_indicator",
    "batch_signature",
    "chen_product",
    "feature_count",
    "lead_lag",
    "segment_signature",
    "signature",
    "word_index",
    "words",
]


def feature_count(dim: int, depth: int) -> int:
    """Number of stored coefficients, ``d + d**2 + ... + d**L``."""
    if dim < 1 or depth < 1:
        raise ValueError(f"dim and depth must be positive, got dim={dim}, depth={depth}")
    return sum(dim**i for i in range(1, depth + 1))


def word_index(word: Sequence[int], dim: int) -> int:
    """Position of ``word`` (letters in ``1..dim``) in the coefficient vector."""
    k = len(word)
    if k == 0:
        raise ValueError("the empty word is implicit and has no stored position")
    offset = feature_count(dim, k - 1) if k > 1 else 0
    pos = 0
    for letter in word:
        if not 1 <= letter <= dim:
            raise ValueError(f"letter {letter} outside alphabet 1..{dim}")
        pos = pos * dim + (letter - 1)
    return offset + pos


def words(dim: int, depth: int) -> Iterator[tuple[int, ...]]:
    """All words up to ``depth`` in storage order."""
    for k in range(1, depth + 1):
        for flat in range(dim**k):
            letters = []
            for _ in range(k):
                flat, r = divmod(flat, dim)
                letters.append(r + 1)
            yield tuple(reversed(letters))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Path:
    """Ordered points of a piecewise-linear path in ``R^dim``."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2:
            raise ValueError(f"points must be a 2-D array (n, dim), got shape {pts.shape}")
        if pts.shape[0] < 1:
            raise ValueError("a path needs at least one point")
        if pts.shape[1] < 1:
            raise ValueError("path dimension must be positive")
        if not np.all(np.isfinite(pts)):
            raise ValueError("path points must be finite")
        object.__setattr__(self, "points", _frozen(pts))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True, eq=False)
class Signature:
    """Truncated signature coefficients (levels ``1..depth``)."""

    dim: int
    depth: int
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64)
        expected = feature_count(self.dim, self.depth)
        if c.shape != (expected,):
            raise ValueError(f"expected {expected} coefficients for dim={self.dim}, depth={self.depth}, got shape {c.shape}")
        object.__setattr__(self, "coeffs", _frozen(c))

    @classmethod
    def identity(cls, dim: int, depth: int) -> "Signature":
        """Signature of a constant path: every stored coefficient is zero."""
        return cls(dim, depth, np.zeros(feature_count(dim, depth)))

    def level(self, k: int) -> np.ndarray:
        """Flattened level-``k`` block."""
        if not 1 <= k <= self.depth:
            raise ValueError(f"level {k} outside 1..{self.depth}")
        start = feature_count(self.dim, k - 1) if k > 1 else 0
        return self.coeffs[start:start + self.dim**k]

    def __getitem__(self, word: Sequence[int]) -> float:
        return float(self.coeffs[word_index(word, self.dim)])

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "depth": self.depth,
            "words": [
                {"word": list(w), "value": float(v)}
                for w, v in zip(words(self.dim, self.depth), self.coeffs)
            ],
        }

    def _levels(self) -> list[np.ndarray]:
        return [self.level(k) for k in range(1, self.depth + 1)]


# Level-list kernels. Arrays carry arbitrary leading batch axes; the last
# axis is the flattened tensor of the level. The same code serves single
# paths and batches, so both are bitwise identical.

def _segment_levels(delta: np.ndarray, depth: int) -> list[np.ndarray]:
    levels = [delta]
    for k in range(2, depth + 1):
        prev = levels[-1]
        nxt = prev[..., :, None] * delta[..., None, :] / k
        levels.append(nxt.reshape(*delta.shape[:-1], -1))
    return levels


def _chen_levels(a: list[np.ndarray], b: list[np.ndarray]) -> list[np.ndarray]:
    out = []
    batch = a[0].shape[:-1]
    for k in range(1, len(a) + 1):
        # split position i = len(u): ascending from 0 (u empty) to k (v empty)
        acc = b[k - 1]
        for i in range(1, k):
            outer = a[i - 1][..., :, None] * b[k - i - 1][..., None, :]
            acc = acc + outer.reshape(*batch, -1)
        out.append(acc + a[k - 1])
    return out


def _check_depth(depth: int) -> None:
    if depth < 1:
        raise ValueError(f"depth must be positive, got {depth}")


def segment_signature(delta: Sequence[float], depth: int) -> Signature:
    """Signature of a straight segment: the truncated tensor exponential of ``delta``."""
    _check_depth(depth)
    d = np.asarray(delta, dtype=np.float64)
    if d.ndim != 1 or d.size < 1:
        raise ValueError("delta must be a non-empty 1-D vector")
    return Signature(d.size, depth, np.concatenate(_segment_levels(d, depth)))


def chen_product(a: Signature, b: Signature) -> Signature:
    """Signature of the concatenation of a path with signature ``a`` then ``b``."""
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if a.depth != b.depth:
        raise ValueError(f"depth mismatch: {a.depth} vs {b.depth}")
    return Signature(a.dim, a.depth, np.concatenate(_chen_levels(a._levels(), b._levels())))


def _path_levels(points: np.ndarray, depth: int) -> list[np.ndarray]:
    # points: (..., n, d)
    n, d = points.shape[-2:]
    if n == 1:
        return [np.zeros(points.shape[:-2] + (d**k,)) for k in range(1, depth + 1)]
    increments = np.diff(points, axis=-2)
    levels = _segment_levels(increments[..., 0, :], depth)
    for j in range(1, n - 1):
        levels = _chen_levels(levels, _segment_levels(increments[..., j, :], depth))
    return levels


def signature(path: Path | np.ndarray, depth: int) -> Signature:
    """Exact truncated signature of a piecewise-linear path.

    Computed as the left-to-right Chen product of the segment signatures of
    consecutive increments. A single-point path has the trivial signature.
    """
    _check_depth(depth)
    if not isinstance(path, Path):
        path = Path(path)
    return Signature(path.dim, depth, np.concatenate(_path_levels(path.points, depth)))


def batch_signature(paths: np.ndarray, depth: int) -> np.ndarray:
    """Signatures of ``B`` paths of equal length, shape ``(B, n, d) -> (B, m)``."""
    _check_depth(depth)
    paths = np.asarray(paths, dtype=np.float64)
    if paths.ndim != 3 or paths.shape[1] < 1 or paths.shape[2] < 1:
        raise ValueError(f"paths must have shape (B, n, d) with n, d >= 1, got {paths.shape}")
    if not np.all(np.isfinite(paths)):
        raise ValueError("path points must be finite")
    return np.concatenate(_path_levels(paths, depth), axis=-1)


def _lead_lag_points(stream: np.ndarray) -> np.ndarray:
    # stream: (..., n, d) -> (..., 2n-1, 2d)
    n = stream.shape[-2]
    j = np.arange(2 * n - 1)
    lead = stream[..., (j + 1) // 2, :]
    lag = stream[..., j // 2, :]
    return np.concatenate([lead, lag], axis=-1)


def lead_lag(stream: Sequence) -> Path:
    """Lead-lag embedding of a stream of ``n >= 2`` observations.

    Emits ``2n - 1`` points ``(x1, x1), (x2, x1), (x2, x2), ..., (xn, xn)``:
    the lead copy moves first, then the lag copy catches up. Lead coordinates
    occupy the first ``d`` dimensions.
    """
    x = np.asarray(stream, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError("stream must be 1-D or 2-D (n, d)")
    if x.shape[0] < 2:
        raise ValueError(f"lead-lag needs at least 2 observations, got {x.shape[0]}")
    return Path(_lead_lag_points(x))


def batch_lead_lag(streams: np.ndarray) -> np.ndarray:
    """Lead-lag points for a batch of streams, ``(B, n, d) -> (B, 2n-1, 2d)``."""
    streams = np.asarray(streams, dtype=np.float64)
    if streams.ndim != 3 or streams.shape[1] < 2:
        raise ValueError(f"streams must have shape (B, n, d) with n >= 2, got {streams.shape}")
    return _lead_lag_points(streams)


def _as_missing_array(values) -> np.ndarray:
    if isinstance(values, np.ndarray):
        return values.astype(np.float64)
    return np.array([math.nan if v is None else v for v in values], dtype=np.float64)


def _fill_and_flag(x: np.ndarray) -> np.ndarray:
    # x: (..., n) with NaN for missing -> (..., n, 2)
    missing = np.isnan(x)
    n = x.shape[-1]
    idx = np.where(missing, 0, np.arange(n))
    np.maximum.accumulate(idx, axis=-1, out=idx)
    filled = np.take_along_axis(x, idx, axis=-1)
    # leading gap: the accumulated index still points at a missing slot
    first = np.argmax(~missing, axis=-1)
    first_val = np.take_along_axis(x, first[..., None], axis=-1)
    filled = np.where(np.isnan(filled), first_val, filled)
    return np.stack([filled, missing.astype(np.float64)], axis=-1)


def augment_with_indicator(values) -> np.ndarray:
    """Pair each value with a missing-response indicator.

    Parameters
    ----------
    values : sequence of float or None
        Weekly scores; ``None`` or NaN marks a missing response.

    Returns
    -------
    np.ndarray, shape (n, 2)
        Column 0 is the value, last observation carried forward (a leading
        gap takes the first observed value). Column 1 is 1.0 where the
        response is missing and 0.0 where present.
    """
    x = _as_missing_array(values)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("values must be a non-empty 1-D sequence")
    if np.all(np.isnan(x)):
        raise ValueError("cannot augment an all-missing sequence")
    return _fill_and_flag(x)


def batch_augment_with_indicator(values: np.ndarray) -> np.ndarray:
    """Row-wise :func:`augment_with_indicator`, ``(B, n) -> (B, n, 2)``."""
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("values must have shape (B, n)")
    if np.any(np.all(np.isnan(x), axis=1)):
        raise ValueError("cannot augment an all-missing sequence")
    return _fill_and_flag(x)
