"""Fully convolutional classifier over MDF images, its training loop,
stride cross-validation and evaluation."""
import copy
import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn

log = logging.getLogger(__name__)

KERNELS = (8, 5, 3)
FULL_FILTERS = (128, 256, 128)
DESK_FILTERS = (16, 32, 16)
STRIDE_CANDIDATES = ((8, 5, 3), (4, 2, 2), (2, 2, 2), (3, 2, 1))


class StrideCollapseError(ValueError):
    pass


@dataclass
class TrainConfig:
    n: int = 3
    filters: tuple = DESK_FILTERS
    strides: tuple = None
    stride_candidates: tuple = STRIDE_CANDIDATES
    epochs: int = 200
    cv_epochs: int = None
    batch_size: int = 16
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0
    dtype: str = "float32"

    def to_dict(self):
        d = asdict(self)
        d["filters"] = list(self.filters)
        d["strides"] = None if self.strides is None else list(self.strides)
        d["stride_candidates"] = [list(c) for c in self.stride_candidates]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("filters", "strides"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        if "stride_candidates" in d:
            d["stride_candidates"] = tuple(tuple(c) for c in d["stride_candidates"])
        return cls(**d)


def feature_shapes(image_shape, strides):
    """Spatial dims after each conv block under 'same' padding."""
    h, w = image_shape
    shapes = []
    for u in strides:
        if u < 1:
            raise StrideCollapseError(f"stride {u} < 1")
        h, w = -(-h // u), -(-w // u)
        shapes.append((h, w))
    if any(min(s) < 1 for s in shapes):
        raise StrideCollapseError(f"strides {strides} collapse image {image_shape}")
    return shapes


class FCN:
    """Three conv -> BN -> ReLU blocks, global average pooling, dense head."""

    def __init__(self, in_channels, n_classes, filters=DESK_FILTERS,
                 strides=STRIDE_CANDIDATES[0], seed=0, dtype="float64"):
        rng = np.random.default_rng(seed)
        dtype = np.dtype(dtype)
        self.in_channels = in_channels
        self.n_classes = n_classes
        self.filters = tuple(filters)
        self.strides = tuple(strides)
        self.dtype = dtype
        self.blocks = []
        c = in_channels
        for f, k, u in zip(self.filters, KERNELS, self.strides):
            self.blocks.append((nn.Conv2D(c, f, k, u, rng, dtype), nn.BatchNorm2D(f, dtype), nn.ReLU()))
            c = f
        # nothing upstream of the first conv needs its input gradient
        self.blocks[0][0].input_grad = False
        self.gap = nn.GlobalAvgPool()
        self.head = nn.Dense(c, n_classes, rng, dtype)

    def layers(self):
        for block in self.blocks:
            yield from block
        yield self.gap
        yield self.head

    def named_layers(self):
        for z, (conv, bn, _) in enumerate(self.blocks, start=1):
            yield f"conv{z}", conv
            yield f"bn{z}", bn
        yield "dense", self.head

    def parameters(self):
        return {f"{name}.{k}": v for name, layer in self.named_layers()
                for k, v in layer.params.items()}

    def gradients(self):
        return {f"{name}.{k}": v for name, layer in self.named_layers()
                for k, v in layer.grads.items()}

    def features(self, x, training=False):
        """Feature map of the last conv block (post ReLU)."""
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise nn.ShapeError(f"expected (N, {self.in_channels}, H, W) input, got {x.shape}")
        feature_shapes(x.shape[2:], self.strides)
        a = x.astype(self.dtype, copy=False)
        for block in self.blocks:
            for layer in block:
                a = layer.forward(a, training)
        return a

    def head_logits(self, a3):
        return self.head.forward(self.gap.forward(a3))

    def forward(self, x, training=False):
        """Pre-softmax class scores."""
        return self.head_logits(self.features(x, training))

    def backward(self, dlogits):
        g = dlogits
        for layer in reversed(list(self.layers())):
            g = layer.backward(g)
        return g

    def predict_proba(self, x, batch_size=256):
        out = [nn.softmax(self.forward(x[i:i + batch_size]).astype(np.float64))
               for i in range(0, len(x), batch_size)]
        return np.concatenate(out)

    def state(self):
        arrays = {k: v.copy() for k, v in self.parameters().items()}
        for name, layer in self.named_layers():
            if isinstance(layer, nn.BatchNorm2D):
                arrays[f"{name}.running_mean"] = layer.running_mean.copy()
                arrays[f"{name}.running_var"] = layer.running_var.copy()
        return arrays

    def load_state(self, arrays):
        for name, layer in self.named_layers():
            for k in layer.params:
                layer.params[k][...] = arrays[f"{name}.{k}"]
            if isinstance(layer, nn.BatchNorm2D):
                layer.running_mean[...] = arrays[f"{name}.running_mean"]
                layer.running_var[...] = arrays[f"{name}.running_var"]

    def spec(self):
        return {"in_channels": self.in_channels, "n_classes": self.n_classes,
                "filters": list(self.filters), "strides": list(self.strides),
                "dtype": self.dtype.name}

    @classmethod
    def from_spec(cls, spec, arrays=None):
        model = cls(spec["in_channels"], spec["n_classes"], spec["filters"],
                    spec["strides"], dtype=spec["dtype"])
        if arrays is not None:
            model.load_state(arrays)
        return model


@dataclass
class TrainedArtifact:
    model: FCN
    strides: tuple
    loss_history: list
    best_epoch: int
    norm_bounds: tuple = None
    config: TrainConfig = field(default_factory=TrainConfig)
    label_table: list = None
    cv_errors: dict = None
    series_length: int = None

    def save(self, path):
        meta = {
            "model": self.model.spec(),
            "strides": list(self.strides),
            "loss_history": [float(v) for v in self.loss_history],
            "best_epoch": self.best_epoch,
            "norm_bounds": None if self.norm_bounds is None else [float(v) for v in self.norm_bounds],
            "train_config": self.config.to_dict(),
            "label_table": self.label_table,
            "cv_errors": self.cv_errors,
            "series_length": self.series_length,
        }
        nn.save_checkpoint(path, self.model.state(), meta)
        return meta

    @classmethod
    def load(cls, path):
        arrays, meta = nn.load_checkpoint(path)
        model = FCN.from_spec(meta["model"], arrays)
        bounds = meta["norm_bounds"]
        return cls(model=model, strides=tuple(meta["strides"]),
                   loss_history=meta["loss_history"], best_epoch=meta["best_epoch"],
                   norm_bounds=None if bounds is None else tuple(bounds),
                   config=TrainConfig.from_dict(meta["train_config"]),
                   label_table=meta["label_table"], cv_errors=meta["cv_errors"],
                   series_length=meta.get("series_length"))


def _batches(n_items, batch_size, rng):
    order = rng.permutation(n_items)
    batch_size = min(batch_size, n_items)
    chunks = [order[i:i + batch_size] for i in range(0, n_items, batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        # a singleton batch has no batch-norm statistics
        chunks[-2] = np.concatenate([chunks[-2], chunks.pop()])
    return chunks


def train(images, labels, cfg, strides=None, epochs=None, n_classes=None):
    """Train an FCN with Adam on ``images`` (N, C, H, W) and 0-based ``labels``.

    Returns the end-of-epoch snapshot with the lowest mean training loss.
    """
    images = np.asarray(images)
    labels = np.asarray(labels)
    strides = tuple(strides or cfg.strides or cfg.stride_candidates[0])
    epochs = cfg.epochs if epochs is None else epochs
    n_classes = int(labels.max()) + 1 if n_classes is None else n_classes
    if len(np.unique(labels)) < 2:
        raise ValueError("training needs at least 2 classes")
    if min(cfg.batch_size, len(images)) < 2:
        raise nn.DegenerateBatchError("batch size must be >= 2 for batch norm")
    feature_shapes(images.shape[2:], strides)

    model = FCN(images.shape[1], n_classes, cfg.filters, strides, cfg.seed, cfg.dtype)
    x = images.astype(model.dtype)
    opt = nn.Adam(cfg.lr, cfg.beta1, cfg.beta2)
    rng = np.random.default_rng(cfg.seed + 1)
    history = []
    best_loss, best_epoch, best_state = np.inf, 0, model.state()
    for epoch in range(1, epochs + 1):
        losses, sizes = [], []
        for idx in _batches(len(x), cfg.batch_size, rng):
            logits = model.forward(x[idx], training=True)
            loss, _, dlogits = nn.softmax_cross_entropy(logits, labels[idx])
            model.backward(dlogits)
            opt.step(model.parameters(), model.gradients())
            losses.append(loss)
            sizes.append(len(idx))
        epoch_loss = float(np.average(losses, weights=sizes))
        history.append(epoch_loss)
        if epoch_loss < best_loss:
            best_loss, best_epoch, best_state = epoch_loss, epoch, model.state()
    model.load_state(best_state)
    log.debug("strides %s: best loss %.4g at epoch %d", strides, best_loss, best_epoch)
    return TrainedArtifact(model=model, strides=strides, loss_history=history,
                           best_epoch=best_epoch, config=copy.deepcopy(cfg))


def predict(model, images):
    return model.predict_proba(np.asarray(images)).argmax(axis=1)


def error_rate(model, images, labels):
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("empty test set")
    return float(np.mean(predict(model, images) != labels))


def stratified_folds(labels, k=4, seed=0):
    """Fold id per instance; classes dealt round-robin after a seeded shuffle."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    fold = np.empty(len(labels), dtype=int)
    offset = 0
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        fold[idx] = (np.arange(len(idx)) + offset) % k
        offset += len(idx)
    return fold


def _stride_order(strides):
    return (-int(np.prod(strides)), tuple(-u for u in strides))


def cross_validate_strides(images, labels, cfg, k=4):
    """Pick the stride triple with the lowest mean k-fold validation error.

    Ties go to the triple with the larger stride product.  Returns
    ``(strides, {strides: mean_error})``.
    """
    images = np.asarray(images)
    labels = np.asarray(labels)
    valid = []
    for cand in cfg.stride_candidates:
        try:
            feature_shapes(images.shape[2:], cand)
            valid.append(tuple(cand))
        except StrideCollapseError as exc:
            warnings.warn(f"skipping stride candidate {cand}: {exc}")
    if not valid:
        raise StrideCollapseError("no stride candidate fits the image shape")
    if len(valid) == 1:
        return valid[0], {}
    if len(images) < k:
        raise ValueError(f"cross-validation needs at least {k} instances")
    folds = stratified_folds(labels, k, cfg.seed)
    n_classes = int(labels.max()) + 1
    epochs = cfg.cv_epochs if cfg.cv_epochs is not None else cfg.epochs
    scores = {}
    for cand in valid:
        errs = []
        for f in range(k):
            tr, va = folds != f, folds == f
            art = train(images[tr], labels[tr], cfg, strides=cand, epochs=epochs,
                        n_classes=n_classes)
            errs.append(error_rate(art.model, images[va], labels[va]))
        scores[cand] = float(np.mean(errs))
        log.info("stride %s: cv error %.4f", cand, scores[cand])
    best = min(valid, key=lambda c: (scores[c], _stride_order(c)))
    return best, scores


def fit(images, labels, cfg, cv=False):
    """Full protocol: optional stride CV, then training on all instances."""
    scores = None
    strides = cfg.strides
    if cv or strides is None:
        strides, scores = cross_validate_strides(images, labels, cfg)
    art = train(images, labels, cfg, strides=strides)
    art.cv_errors = None if scores is None else {",".join(map(str, s)): v for s, v in scores.items()}
    return art
