"""Dataset ingestion: MNIST IDX files, synthetic blobs, CSV persistence."""

from __future__ import annotations

import csv
import gzip
import hashlib
import struct
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DimensionError, IdxFormatError, ParameterError
from .tensor import RngStream

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049

BUILTIN = {
    # 5,000-image MNIST sample (500 per class), pixels as in the original files
    "mnist5k": ("mnist5k-images-idx3-ubyte.gz", "mnist5k-labels-idx1-ubyte.gz"),
}


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    name: str
    num_classes: int

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2:
            raise DimensionError("inputs must be a 2-D (n, d) array")
        if self.labels.shape != (self.inputs.shape[0],):
            raise DimensionError("need exactly one label per input row")
        if self.num_classes < 1:
            raise ParameterError("num_classes must be positive")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ParameterError("label out of range")

    @property
    def n(self):
        return self.inputs.shape[0]

    @property
    def d(self):
        return self.inputs.shape[1]

    def take(self, idx, name=None):
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.inputs[idx], self.labels[idx], name or self.name, self.num_classes)

    def checksum(self):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.inputs, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.labels, dtype="<i8").tobytes())
        return h.hexdigest()


# ---- IDX ---------------------------------------------------------------


def _read_bytes(path):
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix == ".gz":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as e:
            raise IdxFormatError(f"{path}: corrupt gzip stream ({e})") from None
    return raw


def parse_idx(raw, expected_magic, what="file"):
    """Parse an unsigned-byte IDX buffer into a uint8 array."""
    if len(raw) < 8:
        raise IdxFormatError(f"{what}: truncated header")
    (magic,) = struct.unpack(">i", raw[:4])
    if magic != expected_magic:
        raise IdxFormatError(f"{what}: bad magic number {magic} (expected {expected_magic})")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError(f"{what}: truncated header")
    dims = struct.unpack(">" + "i" * ndim, raw[4:header])
    if any(d < 0 for d in dims):
        raise IdxFormatError(f"{what}: negative dimension in header")
    count = int(np.prod(dims, dtype=np.int64))
    if len(raw) - header < count:
        raise IdxFormatError(f"{what}: truncated data ({len(raw) - header} of {count} bytes)")
    if len(raw) - header > count:
        raise IdxFormatError(f"{what}: {len(raw) - header - count} trailing bytes")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def load_idx(images_path, labels_path, name=None, num_classes=10):
    images = parse_idx(_read_bytes(images_path), IMAGE_MAGIC, str(images_path))
    labels = parse_idx(_read_bytes(labels_path), LABEL_MAGIC, str(labels_path))
    if images.ndim != 3:
        raise IdxFormatError(f"{images_path}: expected a 3-D image tensor")
    if labels.ndim != 1:
        raise IdxFormatError(f"{labels_path}: expected a 1-D label vector")
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels")
    if labels.size and labels.max() >= num_classes:
        raise IdxFormatError(f"label {labels.max()} outside [0, {num_classes})")
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(x, labels.astype(np.int64), name or Path(images_path).name, num_classes)


def encode_idx(array, magic):
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ParameterError("IDX writer only supports unsigned bytes")
    header = struct.pack(">i", magic) + struct.pack(">" + "i" * array.ndim, *array.shape)
    return header + np.ascontiguousarray(array).tobytes()


def save_idx(ds, images_path, labels_path, side=28):
    """Write ``ds`` back to IDX (pixels re-quantized to bytes)."""
    pix = np.rint(np.clip(ds.inputs, 0.0, 1.0) * 255.0).astype(np.uint8)
    if ds.d == side * side:
        pix = pix.reshape(ds.n, side, side)
    else:
        pix = pix.reshape(ds.n, 1, ds.d)
    for path, blob in ((images_path, encode_idx(pix, IMAGE_MAGIC)),
                       (labels_path, encode_idx(ds.labels.astype(np.uint8), LABEL_MAGIC))):
        path = Path(path)
        if path.suffix == ".gz":
            blob = gzip.compress(blob, mtime=0)
        path.write_bytes(blob)


def builtin_paths(name):
    if name not in BUILTIN:
        raise ParameterError(f"unknown builtin dataset {name!r}; have {sorted(BUILTIN)}")
    root = resources.files("nalcert") / "data"
    return tuple(Path(str(root / f)) for f in BUILTIN[name])


def load_builtin(name):
    images, labels = builtin_paths(name)
    return load_idx(images, labels, name=name)


# ---- sampling -----------------------------------------------------------


def _rng(rng):
    return rng.generator() if isinstance(rng, RngStream) else np.random.default_rng(rng)


def stratified_indices(labels, n, num_classes, rng):
    """Class-stratified sample of ``n`` indices without replacement, shuffled."""
    labels = np.asarray(labels)
    if n > labels.size:
        raise ParameterError(f"cannot draw {n} items from {labels.size}")
    gen = _rng(rng)
    pools = [gen.permutation(np.flatnonzero(labels == c)) for c in range(num_classes)]
    quota = np.full(num_classes, n // num_classes)
    for c in gen.permutation(num_classes)[: n - quota.sum()]:
        quota[c] += 1
    # classes too small for their quota hand the rest to the others
    short = 0
    for c in range(num_classes):
        if quota[c] > pools[c].size:
            short += quota[c] - pools[c].size
            quota[c] = pools[c].size
    while short:
        for c in np.argsort(quota, kind="stable"):
            if short and quota[c] < pools[c].size:
                quota[c] += 1
                short -= 1
    picked = np.concatenate([p[:q] for p, q in zip(pools, quota)]).astype(np.int64)
    return gen.permutation(picked)


def subset(ds, n, rng):
    return ds.take(stratified_indices(ds.labels, n, ds.num_classes, rng), name=f"{ds.name}[{n}]")


def train_test_split(ds, train_n, test_n, rng):
    """Disjoint stratified train/test subsets of one pool."""
    if train_n + test_n > ds.n:
        raise ParameterError(f"train+test = {train_n + test_n} exceeds {ds.n} available rows")
    rng = rng if isinstance(rng, RngStream) else RngStream(int(rng))
    test_idx = stratified_indices(ds.labels, test_n, ds.num_classes, rng.child("test"))
    rest = np.setdiff1d(np.arange(ds.n), test_idx)
    train_idx = rest[stratified_indices(ds.labels[rest], train_n, ds.num_classes, rng.child("train"))]
    return ds.take(train_idx, f"{ds.name}-train"), ds.take(test_idx, f"{ds.name}-test")


def blob_centroids(d, num_classes, separation):
    """Centroids around (0.5, ...) with adjacent centroids ``separation`` apart."""
    if d == 1:
        offs = separation * (np.arange(num_classes) - (num_classes - 1) / 2.0)
        return 0.5 + offs[:, None]
    if num_classes == 1:
        return np.full((1, 2), 0.5)
    radius = separation / (2.0 * np.sin(np.pi / num_classes))
    ang = 2.0 * np.pi * np.arange(num_classes) / num_classes
    return 0.5 + radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def make_blobs(n, d, num_classes, separation, rng, spread=0.1):
    if d not in (1, 2):
        raise ParameterError(f"blobs support d in {{1, 2}}, got {d}")
    if separation <= 0 or spread <= 0:
        raise ParameterError("separation and spread must be positive")
    gen = _rng(rng)
    centers = blob_centroids(d, num_classes, separation)
    counts = np.full(num_classes, n // num_classes)
    counts[: n % num_classes] += 1
    labels = np.repeat(np.arange(num_classes), counts)
    x = centers[labels] + spread * gen.standard_normal((n, d))
    order = gen.permutation(n)
    return Dataset(np.clip(x[order], 0.0, 1.0), labels[order], f"blobs-d{d}-c{num_classes}", num_classes)


# ---- CSV ------------------------------------------------------------------


def save_csv(ds, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(ds.d)] + ["label"])
        for row, y in zip(ds.inputs, ds.labels):
            w.writerow([repr(float(v)) for v in row] + [int(y)])


def load_csv(path, num_classes=None, name=None):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise ParameterError(f"{path}: empty CSV")
    header = rows[0]
    d = len(header) - 1
    if header != [f"x{i}" for i in range(d)] + ["label"]:
        raise ParameterError(f"{path}: header must be x0,...,x{{d-1}},label")
    body = rows[1:]
    if any(len(r) != d + 1 for r in body):
        raise ParameterError(f"{path}: ragged row")
    x = np.array([[float(v) for v in r[:d]] for r in body]).reshape(len(body), d)
    y = np.array([int(r[d]) for r in body], dtype=np.int64)
    if num_classes is None:
        num_classes = int(y.max()) + 1 if y.size else 1
    return Dataset(x, y, name or Path(path).stem, num_classes)
