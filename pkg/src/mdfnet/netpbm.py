"""Binary PGM/PPM writers for heat maps.

Grayscale maps are P5 with maxval 65535 (two bytes per pixel, most
significant byte first).  Colour maps are P6 with maxval 255.  Values are
mapped linearly from ``[vmin, vmax]`` to ``[0, maxval]``; a flat map is
written as all zeros.  Image row ``r`` holds matrix row ``r``.
"""
import json

import numpy as np


def _scale(a, maxval, vmin=None, vmax=None):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D map, got shape {a.shape}")
    vmin = float(a.min()) if vmin is None else vmin
    vmax = float(a.max()) if vmax is None else vmax
    if vmax > vmin:
        q = np.rint((np.clip(a, vmin, vmax) - vmin) / (vmax - vmin) * maxval)
    else:
        q = np.zeros_like(a)
    return q, vmin, vmax


def _colormap(t):
    # black -> red -> yellow -> white
    r = np.clip(3 * t, 0, 1)
    g = np.clip(3 * t - 1, 0, 1)
    b = np.clip(3 * t - 2, 0, 1)
    return np.stack([r, g, b], axis=-1)


def write_pgm(path, a, vmin=None, vmax=None):
    q, vmin, vmax = _scale(a, 65535, vmin, vmax)
    h, w = q.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(q.astype(">u2").tobytes())
    return {"format": "P5", "maxval": 65535, "vmin": vmin, "vmax": vmax}


def write_ppm(path, a, vmin=None, vmax=None):
    q, vmin, vmax = _scale(a, 65535, vmin, vmax)
    rgb = np.rint(_colormap(q / 65535) * 255).astype(np.uint8)
    h, w = q.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())
    return {"format": "P6", "maxval": 255, "vmin": vmin, "vmax": vmax,
            "colormap": "black-red-yellow-white"}


def read_pnm(path):
    """Read a P5/P6 file written by this module; returns the raw integer array."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos].decode("ascii"))
    pos += 1
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    dtype = ">u2" if maxval > 255 else "u1"
    channels = 3 if magic == "P6" else 1
    arr = np.frombuffer(data, dtype=dtype, offset=pos, count=w * h * channels)
    return arr.reshape(h, w, channels) if channels == 3 else arr.reshape(h, w)


def write_sidecar(path, entries):
    with open(path, "w") as fh:
        json.dump(entries, fh, indent=2, sort_keys=True)
