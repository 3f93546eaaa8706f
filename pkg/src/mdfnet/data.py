"""UCR flat files, the synthetic plateau dataset, and MDF record files."""
import hashlib
import re
import struct
from dataclasses import dataclass

import numpy as np


class DataFormatError(ValueError):
    pass


@dataclass
class Split:
    values: np.ndarray          # (N, T)
    labels: np.ndarray          # 1..C
    label_table: list           # original label text, index = label - 1

    def __len__(self):
        return len(self.labels)

    @property
    def length(self):
        return self.values.shape[1]


@dataclass
class UcrDataset:
    name: str
    train: Split
    test: Split = None


def _label_key(text):
    try:
        return (0, float(text), text)
    except ValueError:
        return (1, 0.0, text)


def parse_ucr(text, label_table=None, source="<string>"):
    """Parse UCR rows: a label then T values, tab/comma/space separated.

    Labels are remapped to 1..C following the sorted original labels, or
    following ``label_table`` when given (e.g. a test split mapped with the
    training table).
    """
    raw_labels, rows = [], []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        fields = [f for f in re.split(r"[,\t ]+", line) if f]
        if len(fields) < 2:
            raise DataFormatError(f"{source}:{lineno}: expected a label and values")
        try:
            row = [float(f) for f in fields[1:]]
        except ValueError as exc:
            raise DataFormatError(f"{source}:{lineno}: {exc}") from None
        if rows and len(row) != len(rows[0]):
            raise DataFormatError(
                f"{source}:{lineno}: ragged row of length {len(row)}, expected {len(rows[0])}")
        label = fields[0]
        if re.fullmatch(r"[+-]?\d+(\.0*)?", label):
            label = str(int(float(label)))
        raw_labels.append(label)
        rows.append(row)
    if not rows:
        raise DataFormatError(f"{source}: no data rows")
    values = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise DataFormatError(f"{source}: non-finite values (missing data is not supported)")
    if label_table is None:
        label_table = sorted(set(raw_labels), key=_label_key)
    lookup = {lab: i + 1 for i, lab in enumerate(label_table)}
    unknown = sorted(set(raw_labels) - set(lookup))
    if unknown:
        raise DataFormatError(f"{source}: labels {unknown} not in the training label set")
    labels = np.array([lookup[lab] for lab in raw_labels], dtype=np.int64)
    return Split(values, labels, list(label_table))


def load_ucr_file(path, label_table=None):
    with open(path) as fh:
        return parse_ucr(fh.read(), label_table, source=str(path))


def format_ucr(split):
    lines = []
    for lab, row in zip(split.labels, split.values):
        lines.append("\t".join([split.label_table[lab - 1]] + [f"{v:.17g}" for v in row]))
    return "\n".join(lines) + "\n"


def write_ucr_file(path, split):
    with open(path, "w") as fh:
        fh.write(format_ucr(split))


def fingerprint(*paths):
    h = hashlib.sha256()
    for p in paths:
        with open(p, "rb") as fh:
            h.update(fh.read())
    return h.hexdigest()


# -- synthetic TwoPatterns analog ----------------------------------------------------

# event shapes: up = low plateau then high plateau, down = the reverse
_EVENT_LEVELS = {"up": (-1.0, 1.0), "down": (1.0, -1.0)}
_CLASS_EVENTS = {
    2: [("up", "down"), ("down", "up")],
    4: [("up", "up"), ("up", "down"), ("down", "up"), ("down", "down")],
}


def plateau_series(events, positions, widths, T, background=None):
    """Background (zeros by default) with one two-plateau block per event.

    Plateau values are exact constants; only the background carries noise.
    """
    x = np.zeros(T) if background is None else np.array(background, dtype=np.float64)
    for kind, start, w in zip(events, positions, widths):
        lo, hi = _EVENT_LEVELS[kind]
        half = w // 2
        x[start:start + half] = lo
        x[start + half:start + w] = hi
    return x


def _draw_layout(T, rng):
    # two events, each made of two plateaus of width >= 3, separated from
    # each other and the series ends by >= 2 baseline points
    w_lo, w_hi = max(6, T // 8), max(6, T // 4)
    w1, w2 = (2 * (rng.integers(w_lo, w_hi + 1) // 2) for _ in range(2))
    half = T // 2
    p1 = int(rng.integers(2, max(3, half - w1 - 1)))
    p2_lo = max(half, p1 + w1 + 2)
    p2 = int(rng.integers(p2_lo, max(p2_lo + 1, T - w2 - 1)))
    return (p1, p2), (int(w1), int(w2))


def synthesize_split(classes, count, T, sigma, rng):
    if classes not in _CLASS_EVENTS:
        raise ValueError(f"classes must be 2 or 4, got {classes}")
    if T < 32:
        raise ValueError(f"series length must be >= 32, got {T}")
    if count < 1 or sigma < 0:
        raise ValueError("count must be >= 1 and sigma >= 0")
    values, labels = [], []
    for c, events in enumerate(_CLASS_EVENTS[classes], start=1):
        for _ in range(count):
            pos, widths = _draw_layout(T, rng)
            values.append(plateau_series(events, pos, widths, T, sigma * rng.standard_normal(T)))
            labels.append(c)
    order = rng.permutation(len(labels))
    return Split(np.array(values)[order], np.array(labels)[order],
                 [str(c) for c in range(1, classes + 1)])


def synthesize_twopatterns(classes=4, count=50, T=64, sigma=0.05, seed=0):
    """Plateau-event analog of TwoPatterns with ``count`` series per class per split.

    Class identity is the ordered pair of event directions.  This is a
    synthetic stand-in, not the UCR data.
    """
    rng = np.random.default_rng(seed)
    train = synthesize_split(classes, count, T, sigma, rng)
    test = synthesize_split(classes, count, T, sigma, rng)
    return UcrDataset(f"synthetic-twopatterns-{classes}c-s{seed}", train, test)


# -- MDF record files ------------------------------------------------------------------

MDF_MAGIC = b"MDF1"
_HEADER = struct.Struct("<4s6I")     # magic, count, n, channels, rows, cols, T


def write_mdf_records(path, images, labels, n, T):
    """Header then per record: int32 label, float64 pixels, little-endian, row-major."""
    images = np.asarray(images, dtype="<f8")
    count, channels, rows, cols = images.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MDF_MAGIC, count, n, channels, rows, cols, T))
        for lab, img in zip(labels, images):
            fh.write(struct.pack("<i", int(lab)))
            fh.write(np.ascontiguousarray(img).tobytes())


def read_mdf_records(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, count, n, channels, rows, cols, T = _HEADER.unpack_from(buf)
    if magic != MDF_MAGIC:
        raise DataFormatError(f"{path}: not an MDF record file")
    rec = np.dtype([("label", "<i4"), ("img", "<f8", (channels, rows, cols))])
    data = np.frombuffer(buf, dtype=rec, count=count, offset=_HEADER.size)
    return data["img"].astype(np.float64), data["label"].astype(np.int64), n, T
