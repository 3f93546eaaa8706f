"""Small convolutional layer kit with hand-written backward passes.

Tensors are ``(batch, channel, row, column)`` numpy arrays.  Each layer
keeps what its backward pass needs from the most recent forward call.
"""
import json

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
ADAM_EPS = 1e-8
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


class DegenerateBatchError(ValueError):
    pass


def same_padding(size, kernel, stride):
    """Output size and (before, after) padding for 'same' convolution."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return out, (total // 2, total - total // 2)


# -- convolution --------------------------------------------------------------

def conv2d_forward(x, w, b, stride=1):
    """Strided cross-correlation with 'same' zero padding.

    Output spatial dims are ``ceil(in / stride)``.
    """
    N, C, H, W = x.shape
    F, Cw, kh, kw = w.shape
    if C != Cw:
        raise ShapeError(f"input has {C} channels, kernel expects {Cw}")
    Ho, (pt, pb) = same_padding(H, kh, stride)
    Wo, (pl, pr) = same_padding(W, kw, stride)
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(N * Ho * Wo, C * kh * kw)
    out = cols @ w.reshape(F, -1).T + b
    out = out.reshape(N, Ho, Wo, F).transpose(0, 3, 1, 2)
    cache = (x.shape, xp.shape, cols, w, stride, (pt, pl), (Ho, Wo))
    return np.ascontiguousarray(out), cache


def conv2d_backward(dout, cache, input_grad=True):
    """Returns ``(dx, dw, db)`` for upstream gradient ``dout``.

    ``dx`` is None when ``input_grad`` is false.
    """
    x_shape, xp_shape, cols, w, stride, (pt, pl), (Ho, Wo) = cache
    N, C, H, W = x_shape
    F, _, kh, kw = w.shape
    if dout.shape != (N, F, Ho, Wo):
        raise ShapeError(f"upstream gradient {dout.shape} != {(N, F, Ho, Wo)}")
    dflat = dout.transpose(0, 2, 3, 1).reshape(-1, F)
    dw = (dflat.T @ cols).reshape(w.shape)
    db = dflat.sum(axis=0)
    if not input_grad:
        return None, dw, db
    # rows of dcols are (C, kh, kw), columns (N, Ho, Wo)
    dcols = (w.reshape(F, -1).T @ dflat.T).reshape(C, kh, kw, N, Ho, Wo)
    # accumulate per stride phase so every add hits a contiguous block
    s = stride
    ph, pw = Ho + (kh - 1) // s, Wo + (kw - 1) // s
    phases = np.zeros((s, s, C, N, ph, pw), dtype=dout.dtype)
    for i in range(kh):
        for j in range(kw):
            phases[i % s, j % s, :, :, i // s:i // s + Ho, j // s:j // s + Wo] += dcols[:, i, j]
    dxp = np.zeros((C, N) + xp_shape[2:], dtype=dout.dtype)
    for a in range(s):
        for c in range(s):
            block = dxp[:, :, a::s, c::s]
            r, q = min(block.shape[2], ph), min(block.shape[3], pw)
            block[:, :, :r, :q] += phases[a, c, :, :, :r, :q]
    dxp = dxp.transpose(1, 0, 2, 3)
    return dxp[:, :, pt:pt + H, pl:pl + W], dw, db


# -- batch normalization --------------------------------------------------------

def batchnorm_forward(x, gamma, beta, running_mean, running_var, training,
                      eps=BN_EPS, momentum=BN_MOMENTUM):
    """Per-channel normalization over (batch, row, column).

    In training mode the running statistics arrays are updated in place.
    """
    if training:
        if x.shape[0] < 2:
            raise DegenerateBatchError(
                f"batch norm needs batch size >= 2 in training mode, got {x.shape[0]}")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        running_mean *= momentum
        running_mean += (1 - momentum) * mean
        running_var *= momentum
        running_var += (1 - momentum) * var
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return out, (xhat, inv_std, gamma, training)


def batchnorm_backward(dout, cache):
    """Returns ``(dx, dgamma, dbeta)``."""
    xhat, inv_std, gamma, training = cache
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    dbeta = dout.sum(axis=(0, 2, 3))
    g = (gamma * inv_std)[None, :, None, None]
    if not training:
        return dout * g, dgamma, dbeta
    m = dout.shape[0] * dout.shape[2] * dout.shape[3]
    dx = g / m * (m * dout - dbeta[None, :, None, None]
                  - xhat * dgamma[None, :, None, None])
    return dx, dgamma, dbeta


# -- elementwise, pooling, dense -------------------------------------------------

def relu_forward(x):
    return np.maximum(x, 0), x > 0


def relu_backward(dout, mask):
    return dout * mask


def gap_forward(x):
    return x.mean(axis=(2, 3)), x.shape


def gap_backward(dout, shape):
    N, C, H, W = shape
    return np.broadcast_to(dout[:, :, None, None] / (H * W), shape).copy()


def dense_forward(h, w, b):
    if h.shape[1] != w.shape[1]:
        raise ShapeError(f"dense input has {h.shape[1]} features, weights expect {w.shape[1]}")
    return h @ w.T + b, h


def dense_backward(dout, h, w):
    return dout @ w, dout.T @ h, dout.sum(axis=0)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, targets):
    """Mean categorical cross entropy over a batch.

    ``targets`` are 0-based class indices.  Returns ``(loss, probs, dlogits)``
    where ``dlogits`` is the gradient of the mean loss.
    """
    logits = np.atleast_2d(logits)
    targets = np.atleast_1d(np.asarray(targets))
    N, C = logits.shape
    if targets.shape != (N,):
        raise ShapeError(f"{targets.shape[0]} targets for {N} logit rows")
    if targets.min() < 0 or targets.max() >= C:
        raise ValueError(f"target class outside [0, {C - 1}]")
    z = logits - logits.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    probs = np.exp(log_probs)
    rows = np.arange(N)
    loss = -log_probs[rows, targets].mean()
    grad = probs.copy()
    grad[rows, targets] -= 1
    return loss, probs, grad / N


# -- layers ---------------------------------------------------------------------

class Conv2D:
    def __init__(self, in_channels, out_channels, kernel, stride=1, rng=None,
                 dtype=np.float64):
        if kernel < 1 or stride < 1:
            raise ValueError("kernel and stride must be >= 1")
        rng = np.random.default_rng() if rng is None else rng
        fan_in = in_channels * kernel * kernel
        self.stride = stride
        self.input_grad = True
        self.params = {
            "W": (rng.standard_normal((out_channels, in_channels, kernel, kernel))
                  * np.sqrt(2.0 / fan_in)).astype(dtype),
            "b": np.zeros(out_channels, dtype=dtype),
        }
        self.grads = {}

    def forward(self, x, training=False):
        out, self._cache = conv2d_forward(x, self.params["W"], self.params["b"], self.stride)
        return out

    def backward(self, dout):
        dx, self.grads["W"], self.grads["b"] = conv2d_backward(
            dout, self._cache, self.input_grad)
        return dx


class BatchNorm2D:
    def __init__(self, channels, dtype=np.float64):
        self.params = {"gamma": np.ones(channels, dtype=dtype),
                       "beta": np.zeros(channels, dtype=dtype)}
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.grads = {}

    def forward(self, x, training=False):
        out, self._cache = batchnorm_forward(
            x, self.params["gamma"], self.params["beta"],
            self.running_mean, self.running_var, training)
        return out

    def backward(self, dout):
        dx, self.grads["gamma"], self.grads["beta"] = batchnorm_backward(dout, self._cache)
        return dx


class ReLU:
    params = {}
    grads = {}

    def forward(self, x, training=False):
        out, self._mask = relu_forward(x)
        return out

    def backward(self, dout):
        return relu_backward(dout, self._mask)


class GlobalAvgPool:
    params = {}
    grads = {}

    def forward(self, x, training=False):
        out, self._shape = gap_forward(x)
        return out

    def backward(self, dout):
        return gap_backward(dout, self._shape)


class Dense:
    def __init__(self, in_features, out_features, rng=None, dtype=np.float64):
        rng = np.random.default_rng() if rng is None else rng
        self.params = {
            "W": (rng.standard_normal((out_features, in_features))
                  * np.sqrt(2.0 / in_features)).astype(dtype),
            "b": np.zeros(out_features, dtype=dtype),
        }
        self.grads = {}

    def forward(self, h, training=False):
        out, self._h = dense_forward(h, self.params["W"], self.params["b"])
        return out

    def backward(self, dout):
        dh, self.grads["W"], self.grads["b"] = dense_backward(dout, self._h, self.params["W"])
        return dh


# -- optimizer ------------------------------------------------------------------

class Adam:
    """Adam with bias-corrected moments; updates parameter arrays in place."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=ADAM_EPS):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for key, p in params.items():
            g = grads[key]
            if g.shape != p.shape:
                raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape} for {key}")
            if key not in self.m:
                self.m[key] = np.zeros_like(p)
                self.v[key] = np.zeros_like(p)
            m, v = self.m[key], self.v[key]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            p -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.dtype)


# -- checkpoint -----------------------------------------------------------------

def save_checkpoint(path, arrays, config):
    """Write named arrays plus a JSON config into one ``.npz`` container."""
    payload = {k: np.asarray(v) for k, v in arrays.items()}
    payload["__config__"] = np.array(json.dumps(config, sort_keys=True))
    payload["__version__"] = np.array(CHECKPOINT_VERSION)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as data:
        version = int(data["__version__"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        config = json.loads(str(data["__config__"]))
        arrays = {k: data[k].copy() for k in data.files if not k.startswith("__")}
    return arrays, config
