"""Central finite-difference checks for every backward pass in ``nn``."""
from dataclasses import dataclass

import numpy as np

from . import nn

STEP = 1e-5
TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    seed: int
    shape: tuple
    rel_error: float

    @property
    def passed(self):
        return self.rel_error < TOLERANCE


def numeric_gradient(f, x, h=STEP):
    """Central differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        grad[i] = (fp - fm) / (2 * h)
    return grad


def rel_error(a, b):
    """Norm-wise relative error ``|a - b| / max(|a|, |b|)``."""
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if denom == 0 else float(np.linalg.norm(a - b) / denom)


def _away_from_zero(rng, shape, margin=0.05):
    # keeps ReLU inputs clear of the kink so the FD step never crosses it
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x)


def check_conv(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.choice([3, 5, 8]))
    stride = int(rng.choice([1, 2, 3, 4, 5, 8]))
    N, C, F = int(rng.integers(2, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
    H, W = int(rng.integers(3, 10)), int(rng.integers(3, 10))
    x = rng.standard_normal((N, C, H, W))
    w = rng.standard_normal((F, C, k, k))
    b = rng.standard_normal(F)
    out, cache = nn.conv2d_forward(x, w, b, stride)
    R = rng.standard_normal(out.shape)
    dx, dw, db = nn.conv2d_backward(R, cache)

    def f():
        return np.sum(nn.conv2d_forward(x, w, b, stride)[0] * R)

    err = max(rel_error(dx, numeric_gradient(f, x)),
              rel_error(dw, numeric_gradient(f, w)),
              rel_error(db, numeric_gradient(f, b)))
    return CheckResult(f"conv2d k={k} u={stride}", seed, x.shape, err)


def check_batchnorm(seed, training=True):
    rng = np.random.default_rng(seed)
    N, C, H, W = int(rng.integers(2, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 5)), int(rng.integers(1, 5))
    x = 3 * rng.standard_normal((N, C, H, W)) + 1
    gamma = rng.standard_normal(C)
    beta = rng.standard_normal(C)
    rm, rv = rng.standard_normal(C), rng.random(C) + 0.5

    def fwd():
        return nn.batchnorm_forward(x, gamma, beta, rm.copy(), rv.copy(), training)

    out, cache = fwd()
    R = rng.standard_normal(out.shape)
    dx, dg, dbeta = nn.batchnorm_backward(R, cache)

    def f():
        return np.sum(fwd()[0] * R)

    err = max(rel_error(dx, numeric_gradient(f, x)),
              rel_error(dg, numeric_gradient(f, gamma)),
              rel_error(dbeta, numeric_gradient(f, beta)))
    mode = "train" if training else "infer"
    return CheckResult(f"batchnorm {mode}", seed, x.shape, err)


def check_relu(seed):
    rng = np.random.default_rng(seed)
    shape = tuple(int(v) for v in rng.integers(1, 5, size=4))
    x = _away_from_zero(rng, shape)
    out, mask = nn.relu_forward(x)
    R = rng.standard_normal(out.shape)
    dx = nn.relu_backward(R, mask)
    num = numeric_gradient(lambda: np.sum(nn.relu_forward(x)[0] * R), x)
    return CheckResult("relu", seed, shape, rel_error(dx, num))


def check_gap(seed):
    rng = np.random.default_rng(seed)
    shape = tuple(int(v) for v in rng.integers(1, 6, size=4))
    x = rng.standard_normal(shape)
    out, s = nn.gap_forward(x)
    R = rng.standard_normal(out.shape)
    dx = nn.gap_backward(R, s)
    num = numeric_gradient(lambda: np.sum(nn.gap_forward(x)[0] * R), x)
    return CheckResult("gap", seed, shape, rel_error(dx, num))


def check_dense(seed):
    rng = np.random.default_rng(seed)
    N, D, C = int(rng.integers(1, 5)), int(rng.integers(1, 8)), int(rng.integers(2, 6))
    h = rng.standard_normal((N, D))
    w = rng.standard_normal((C, D))
    b = rng.standard_normal(C)
    out, _ = nn.dense_forward(h, w, b)
    R = rng.standard_normal(out.shape)
    dh, dw, db = nn.dense_backward(R, h, w)

    def f():
        return np.sum(nn.dense_forward(h, w, b)[0] * R)

    err = max(rel_error(dh, numeric_gradient(f, h)),
              rel_error(dw, numeric_gradient(f, w)),
              rel_error(db, numeric_gradient(f, b)))
    return CheckResult("dense", seed, (N, D, C), err)


def check_softmax_ce(seed):
    rng = np.random.default_rng(seed)
    N, C = int(rng.integers(1, 5)), int(rng.integers(2, 7))
    logits = 2 * rng.standard_normal((N, C))
    targets = rng.integers(0, C, size=N)
    _, _, grad = nn.softmax_cross_entropy(logits, targets)
    num = numeric_gradient(lambda: nn.softmax_cross_entropy(logits, targets)[0], logits)
    return CheckResult("softmax_ce", seed, (N, C), rel_error(grad, num))


CHECKS = (check_conv, check_batchnorm,
          lambda seed: check_batchnorm(seed, training=False),
          check_relu, check_gap, check_dense, check_softmax_ce)


def run(seeds=range(20)):
    """Run every layer check for each seed; returns a list of ``CheckResult``."""
    return [check(seed) for seed in seeds for check in CHECKS]
