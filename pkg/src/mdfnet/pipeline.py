"""Dataset-level glue: normalize with training bounds, encode, fit, score."""
import numpy as np

from . import encoder, explainer, fcn


def training_bounds(split):
    return float(split.values.min()), float(split.values.max())


def encode_split(split, n, bounds):
    """``encode(normalize(x))`` for every series; the only route into the model."""
    x = encoder.minmax_normalize(split.values, *bounds)
    return encoder.encode_batch(x, n)


def fit_split(split, cfg, cv=False):
    bounds = training_bounds(split)
    images = encode_split(split, cfg.n, bounds)
    art = fcn.fit(images, split.labels - 1, cfg, cv=cv)
    art.norm_bounds = bounds
    art.label_table = list(split.label_table)
    art.series_length = split.length
    return art


def evaluate(artifact, split):
    """Test error rate; ``split`` labels must use the artifact's label table."""
    images = encode_split(split, artifact.config.n, artifact.norm_bounds)
    return fcn.error_rate(artifact.model, images, split.labels - 1)


def predictions(artifact, split):
    images = encode_split(split, artifact.config.n, artifact.norm_bounds)
    return fcn.predict(artifact.model, images) + 1


def explain_series(artifact, values, class_label, score="logit", tol=0.0):
    """Explanation for one raw series and 1-based class label."""
    x = encoder.minmax_normalize(np.asarray(values), *artifact.norm_bounds)
    return explainer.explain(artifact.model, x, artifact.config.n, class_label - 1, score, tol)
