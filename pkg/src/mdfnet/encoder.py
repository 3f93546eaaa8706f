"""Motif Difference Field (MDF) encoding of univariate time series.

Coordinates exposed by the public helpers are 1-based ``(d, s)`` pairs
(displacement, motif start).  Arrays are stored 0-based: row ``d - 1``,
column ``s - 1``.  An encoded image has shape ``(n - 1, d_max, T - n + 1)``.
"""
import numpy as np


class EncodingError(ValueError):
    """Invalid arguments for an encoding request."""


def _as_series(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise EncodingError(f"expected a 1-D series, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise EncodingError("series contains NaN or Inf")
    return x


def max_displacement(T, n):
    """Largest displacement that still leaves one motif: floor((T-1)/(n-1))."""
    if n < 2:
        raise EncodingError(f"motif length must be >= 2, got {n}")
    if T < n:
        raise EncodingError(f"series length {T} shorter than motif length {n}")
    return (T - 1) // (n - 1)


def n_valid(T, n, d):
    """Number of motif starts at displacement ``d``: T - (n-1) d."""
    return T - (n - 1) * d


def motif_difference(x, n, d, s):
    """Consecutive differences inside the motif starting at ``s`` (1-based)."""
    x = _as_series(x)
    T = len(x)
    d_max = max_displacement(T, n)
    if not 1 <= d <= d_max:
        raise EncodingError(f"displacement {d} outside [1, {d_max}]")
    if not 1 <= s <= n_valid(T, n, d):
        raise EncodingError(f"start {s} outside [1, {n_valid(T, n, d)}] at d={d}")
    idx = (s - 1) + d * np.arange(n)
    return np.diff(x[idx])


def build_masker(T, n):
    """Binary matrix that is 1 on the zero-padded region of each row."""
    d_max = max_displacement(T, n)
    width = T - n + 1
    d = np.arange(1, d_max + 1)[:, None]
    s = np.arange(1, width + 1)[None, :]
    return (s > T - (n - 1) * d).astype(np.int8)


def rotation_partner(d, s, d_max, width):
    """180-degree rotation partner of the 1-based position ``(d, s)``."""
    return d_max + 1 - d, width + 1 - s


def difference_field(x, n):
    """Unfilled difference arrays, zero on the padded region."""
    x = _as_series(x)
    T = len(x)
    d_max = max_displacement(T, n)
    G = np.zeros((n - 1, d_max, T - n + 1))
    for d in range(1, d_max + 1):
        m = n_valid(T, n, d)
        for i in range(1, n):
            G[i - 1, d - 1, :m] = x[i * d:i * d + m] - x[(i - 1) * d:(i - 1) * d + m]
    return G


def encode(x, n):
    """Encode ``x`` as an (n-1)-channel MDF image.

    Padded positions are filled from the unfilled field rotated by 180
    degrees, so the result is ``G + K * rot180(G)`` per channel.
    """
    x = _as_series(x)
    G = difference_field(x, n)
    K = build_masker(len(x), n)
    return G + K * G[:, ::-1, ::-1]


def encode_batch(X, n):
    """Encode each row of a 2-D array; returns ``(N, n-1, d_max, T-n+1)``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise EncodingError(f"expected (N, T) array, got shape {X.shape}")
    return np.stack([encode(row, n) for row in X])


def minmax_normalize(x, train_min, train_max):
    """Affine map of ``x`` using training-split bounds; no clipping."""
    if not train_max > train_min:
        raise EncodingError(
            f"degenerate normalization range [{train_min}, {train_max}]")
    return (np.asarray(x, dtype=np.float64) - train_min) / (train_max - train_min)
