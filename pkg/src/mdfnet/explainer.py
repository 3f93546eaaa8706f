"""Grad-CAM over the last conv block and ordinal-pattern significance."""
from dataclasses import dataclass

import numpy as np

from . import encoder, nn, patterns


def tied(a, b, tol=0.0):
    """Ties are ``|a - b| <= tol * max(1, |a|, |b|)``; ``tol=0`` is exact equality."""
    if tol == 0:
        return a == b
    scale = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return np.abs(a - b) <= tol * scale


def dense_ranks(values, tol=0.0):
    """Dense ranks along the last axis of ``values`` (shape ``(..., n)``)."""
    v = np.asarray(values, dtype=np.float64)
    if np.isnan(v).any():
        raise ValueError("motif values contain NaN")
    n = v.shape[-1]
    first = np.ones(v.shape, dtype=bool)
    for j in range(n):
        for k in range(j):
            first[..., j] &= ~tied(v[..., k], v[..., j], tol)
    ranks = np.ones(v.shape, dtype=np.int64)
    for i in range(n):
        for j in range(n):
            below = (v[..., j] < v[..., i]) & ~tied(v[..., j], v[..., i], tol)
            ranks[..., i] += below & first[..., j]
    return ranks


def ordinal_pattern(motif, tol=0.0):
    """Pattern code of a single motif, e.g. ``(2, 2, 7) -> '112'``."""
    return patterns.code_for_rank(dense_ranks(np.asarray(motif), tol))


def pattern_index_map(x, n, tol=0.0):
    """Pattern index for every valid ``(d, s)``; -1 on the padded region.

    Returned array is ``(d_max, T - n + 1)``; indices refer to
    ``patterns.codes(n)``.
    """
    x = encoder._as_series(x)
    T = len(x)
    d_max = encoder.max_displacement(T, n)
    out = np.full((d_max, T - n + 1), -1, dtype=np.int64)
    lut = patterns._rank_index(n)
    weights = (n + 1) ** np.arange(n - 1, -1, -1)
    for d in range(1, d_max + 1):
        m = encoder.n_valid(T, n, d)
        motifs = np.stack([x[i * d:i * d + m] for i in range(n)], axis=-1)
        out[d - 1, :m] = lut[dense_ranks(motifs, tol) @ weights]
    return out


def collect_indices(x, n, j, tol=0.0):
    """1-based ``(d, s)`` positions whose motif has pattern index ``j``."""
    if not 0 <= j < len(patterns.codes(n)):
        raise ValueError(f"pattern index {j} invalid for n={n}")
    return np.argwhere(pattern_index_map(x, n, tol) == j) + 1


@dataclass
class PatternSignificance:
    codes: tuple
    counts: np.ndarray      # Z_j
    scores: np.ndarray      # E_j, 0 where Z_j == 0
    ranking: np.ndarray     # pattern indices, nonempty only, best first

    def top(self, k):
        return [self.codes[j] for j in self.ranking[:k]]

    def rank_of(self, j):
        hits = np.flatnonzero(self.ranking == j)
        return int(hits[0]) + 1 if hits.size else None


def significance(sym_map, index_map, n):
    """Mean symmetrized heat per pattern, ranked descending (ties by index)."""
    sym_map = np.asarray(sym_map, dtype=np.float64)
    if sym_map.shape != index_map.shape:
        raise ValueError(f"map shape {sym_map.shape} != index map {index_map.shape}")
    m = len(patterns.codes(n))
    valid = index_map >= 0
    counts = np.bincount(index_map[valid], minlength=m)
    sums = np.bincount(index_map[valid], weights=sym_map[valid], minlength=m)
    scores = np.divide(sums, counts, out=np.zeros(m), where=counts > 0)
    nonempty = np.flatnonzero(counts)
    ranking = nonempty[np.lexsort((nonempty, -scores[nonempty]))]
    return PatternSignificance(patterns.codes(n), counts, scores, ranking)


# -- Grad-CAM ---------------------------------------------------------------------

def class_score_gradient(model, a3, c, score="logit"):
    """Gradient of the class-``c`` score with respect to the last feature map."""
    if not 0 <= c < model.n_classes:
        raise ValueError(f"class {c} outside [0, {model.n_classes - 1}]")
    logits = model.head_logits(a3)
    dlogits = np.zeros_like(logits)
    if score == "logit":
        dlogits[:, c] = 1
    elif score == "softmax":
        p = nn.softmax(logits)
        dlogits[:] = -p[:, [c]] * p
        dlogits[:, c] += p[:, c]
    else:
        raise ValueError(f"unknown score {score!r}")
    return model.gap.backward(model.head.backward(dlogits))


def grad_cam(model, image, c, score="logit"):
    """Coarse Grad-CAM of one MDF image ``(C, H, W)`` for 0-based class ``c``."""
    x = np.asarray(image)[None]
    a3 = model.features(x, training=False)
    grads = class_score_gradient(model, a3, c, score)
    alpha = grads.mean(axis=(2, 3))
    cam = np.einsum("k,khw->hw", alpha[0], a3[0])
    return np.maximum(cam, 0).astype(np.float64)


def upsample(cam, shape):
    """Corner-aligned bilinear resize to ``shape``."""
    cam = np.asarray(cam, dtype=np.float64)
    if cam.size == 0:
        raise ValueError("empty map")
    H, W = shape

    def axis_weights(n_in, n_out):
        pos = np.linspace(0, n_in - 1, n_out) if n_in > 1 else np.zeros(n_out)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    r0, r1, fr = axis_weights(cam.shape[0], H)
    c0, c1, fc = axis_weights(cam.shape[1], W)
    rows = cam[r0] * (1 - fr)[:, None] + cam[r1] * fr[:, None]
    out = rows[:, c0] * (1 - fc) + rows[:, c1] * fc
    return np.maximum(out, 0)


def symmetrize(cam):
    """Average each entry with its 180-degree rotation partner."""
    cam = np.asarray(cam, dtype=np.float64)
    return (cam + cam[::-1, ::-1]) / 2


@dataclass
class Explanation:
    coarse: np.ndarray
    upsampled: np.ndarray
    symmetrized: np.ndarray
    significance: PatternSignificance
    score: str


def explain(model, series, n, c, score="logit", tol=0.0):
    """Grad-CAM heat maps and pattern ranking for one normalized series."""
    img = encoder.encode(series, n)
    coarse = grad_cam(model, img, c, score)
    up = upsample(coarse, img.shape[1:])
    sym = symmetrize(up)
    sig = significance(sym, pattern_index_map(series, n, tol), n)
    return Explanation(coarse, up, sym, sig, score)
