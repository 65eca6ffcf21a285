"""
Datasets: IDX (MNIST distribution format) loading, class-pair selection,
synthetic point clouds, pad-and-crop augmentation and a CSV interchange format.
"""

import logging
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from errors import ConfigurationError, DataConsistencyError, DataFormatError

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass
class Dataset:
    """Flattened inputs (n, d) with integer labels.

    Binary datasets use labels 1 (sensitive) and 2. `normalized` marks image data
    whose pixels must lie in [0, 1]; synthetic point clouds are centred at 0.
    """

    inputs: np.ndarray
    labels: np.ndarray
    split: str = "train"
    provenance: str = ""
    image_shape: Optional[Tuple[int, int]] = None
    normalized: bool = False

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.inputs.ndim != 2:
            raise ConfigurationError(f"inputs must be (n, d), got shape {self.inputs.shape}")
        if len(self.inputs) != len(self.labels):
            raise ConfigurationError(
                f"{len(self.inputs)} inputs but {len(self.labels)} labels")
        if not np.all(np.isfinite(self.inputs)):
            raise ConfigurationError("dataset contains non-finite values")
        if self.normalized and self.inputs.size and (self.inputs.min() < 0 or self.inputs.max() > 1):
            raise ConfigurationError("normalized dataset has values outside [0, 1]")
        if self.image_shape is not None:
            self.image_shape = tuple(int(s) for s in self.image_shape)
            if self.image_shape[0] * self.image_shape[1] != self.inputs.shape[1]:
                raise ConfigurationError(
                    f"image shape {self.image_shape} does not match {self.inputs.shape[1]} features")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def class_counts(self) -> Dict[int, int]:
        values, counts = np.unique(self.labels, return_counts=True)
        return {int(v): int(c) for v, c in zip(values, counts)}

    def require_binary(self) -> None:
        counts = self.class_counts()
        if counts.get(1, 0) == 0 or counts.get(2, 0) == 0 or set(counts) - {1, 2}:
            raise ConfigurationError(f"need both classes 1 and 2 (and nothing else), got counts {counts}")

    def subset(self, indices: Sequence[int], split: Optional[str] = None) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return replace(self, inputs=self.inputs[indices], labels=self.labels[indices],
                       split=split or self.split)

    def class_inputs(self, label: int) -> np.ndarray:
        return self.inputs[self.labels == label]


# ---------------------------------------------------------------------------
# IDX
# ---------------------------------------------------------------------------

def _read_idx(path: Union[str, Path], expected_magic: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise DataFormatError(f"{path}: truncated header", offset=len(raw))
    (magic,) = struct.unpack_from(">I", raw, 0)
    if magic != expected_magic:
        raise DataFormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}", offset=0)
    ndim = magic & 0xFF
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise DataFormatError(f"{path}: truncated dimension sizes", offset=len(raw))
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    count = int(np.prod(dims, dtype=np.int64))
    if len(raw) < header_end + count:
        raise DataFormatError(f"{path}: truncated data ({count} bytes declared)", offset=len(raw))
    if len(raw) > header_end + count:
        raise DataFormatError(f"{path}: trailing bytes after data", offset=header_end + count)
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header_end).reshape(dims)


def load_idx(images_path: Union[str, Path], labels_path: Union[str, Path], split: str = "train") -> Dataset:
    """Images scaled from [0, 255] to [0, 1]; labels kept as raw class ids."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise DataConsistencyError(
            f"{images.shape[0]} images but {labels.shape[0]} labels in {images_path} / {labels_path}")
    n, h, w = images.shape
    inputs = images.reshape(n, h * w).astype(np.float32) / np.float32(255.0)
    logger.info("Loaded %d %dx%d images from %s", n, h, w, images_path)
    return Dataset(inputs, labels.astype(np.int64), split=split,
                   provenance=f"idx:{Path(images_path).name}", image_shape=(h, w), normalized=True)


def load_mnist_pair(mnist_dir: Union[str, Path], class_a: int, class_b: int, split: str = "train") -> Dataset:
    if split not in MNIST_FILES:
        raise ConfigurationError(f"split must be one of {sorted(MNIST_FILES)}, got {split!r}")
    images_name, labels_name = MNIST_FILES[split]
    directory = Path(mnist_dir)
    raw = load_idx(directory / images_name, directory / labels_name, split=split)
    return select_pair(raw, class_a, class_b)


def select_pair(dataset: Dataset, class_a: int, class_b: int) -> Dataset:
    """Keep two classes; class_a becomes the sensitive class 1, class_b becomes 2."""
    if class_a == class_b:
        raise ConfigurationError("class_a and class_b must differ")
    counts = dataset.class_counts()
    missing = [c for c in (class_a, class_b) if counts.get(c, 0) == 0]
    if missing:
        raise ConfigurationError(f"classes {missing} are absent from the dataset")
    mask = (dataset.labels == class_a) | (dataset.labels == class_b)
    labels = np.where(dataset.labels[mask] == class_a, 1, 2)
    return replace(dataset, inputs=dataset.inputs[mask], labels=labels,
                   provenance=f"{dataset.provenance} pair({class_a},{class_b})")


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

def make_ring(n_inner: int, n_outer: int, r_inner: float = 0.4, r_ring: float = 1.0,
              noise: float = 0.0, seed: int = 0, sensitive: str = "inner") -> Dataset:
    """A disk of points at the origin surrounded by a ring; `sensitive` picks which one is class 1."""
    if not 0 < r_inner < r_ring:
        raise ConfigurationError(f"need 0 < r_inner < r_ring, got {r_inner}, {r_ring}")
    if sensitive not in ("inner", "outer"):
        raise ConfigurationError(f"sensitive must be 'inner' or 'outer', got {sensitive!r}")
    rng = np.random.default_rng(seed)

    inner_radius = r_inner * np.sqrt(rng.uniform(0.0, 1.0, n_inner))
    inner_angle = rng.uniform(0.0, 2 * np.pi, n_inner)
    outer_angle = rng.uniform(0.0, 2 * np.pi, n_outer)
    outer_radius = r_ring + noise * rng.standard_normal(n_outer)

    inner = np.stack([inner_radius * np.cos(inner_angle), inner_radius * np.sin(inner_angle)], axis=1)
    outer = np.stack([outer_radius * np.cos(outer_angle), outer_radius * np.sin(outer_angle)], axis=1)
    inner_label, outer_label = (1, 2) if sensitive == "inner" else (2, 1)
    labels = np.concatenate([np.full(n_inner, inner_label), np.full(n_outer, outer_label)])
    return Dataset(np.concatenate([inner, outer]), labels,
                   provenance=f"ring(seed={seed}, sensitive={sensitive})")


def make_linear_toy(n_per_class: int, seed: int = 0, noise: float = 0.1) -> Dataset:
    """1-D points around +1 (class 1) and -1 (class 2)."""
    rng = np.random.default_rng(seed)
    positives = 1.0 + noise * rng.standard_normal(n_per_class)
    negatives = -1.0 + noise * rng.standard_normal(n_per_class)
    inputs = np.concatenate([positives, negatives])[:, None]
    labels = np.concatenate([np.full(n_per_class, 1), np.full(n_per_class, 2)])
    return Dataset(inputs, labels, provenance=f"linear_toy(seed={seed})")


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------

def augment_pad_crop(image: np.ndarray, pad: int, rng: Optional[np.random.Generator] = None,
                     offset: Optional[Tuple[int, int]] = None) -> np.ndarray:
    """Zero-pad by `pad` pixels, then crop an h x w window at a random (or given) offset."""
    if pad < 0:
        raise ConfigurationError(f"pad must be >= 0, got {pad}")
    image = np.asarray(image)
    if pad == 0:
        return image.copy()
    h, w = image.shape
    padded = np.pad(image, pad, mode="constant")
    if offset is None:
        if rng is None:
            raise ConfigurationError("augment_pad_crop needs an rng or an explicit offset")
        offset = (int(rng.integers(0, 2 * pad + 1)), int(rng.integers(0, 2 * pad + 1)))
    top, left = offset
    return padded[top:top + h, left:left + w]


def augment_batch(inputs: np.ndarray, image_shape: Tuple[int, int], pad: int,
                  rng: np.random.Generator) -> np.ndarray:
    h, w = image_shape
    images = inputs.reshape(-1, h, w)
    return np.stack([augment_pad_crop(img, pad, rng) for img in images]).reshape(len(inputs), h * w)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def save_dataset_csv(dataset: Dataset, path: Union[str, Path]) -> None:
    frame = pd.DataFrame(dataset.inputs, columns=[f"x{i}" for i in range(dataset.dim)])
    frame.insert(0, "label", dataset.labels)
    frame.to_csv(path, index=False)


def load_dataset_csv(path: Union[str, Path], split: str = "train", normalized: bool = False) -> Dataset:
    try:
        frame = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataFormatError(f"{path}: unreadable CSV ({exc})") from exc
    if frame.columns.empty or frame.columns[0] != "label" or frame.shape[1] < 2:
        raise DataFormatError(f"{path}: expected a 'label' column followed by feature columns")
    try:
        inputs = frame.iloc[:, 1:].to_numpy(dtype=np.float32)
        labels = frame["label"].to_numpy(dtype=np.int64)
    except ValueError as exc:
        raise DataFormatError(f"{path}: non-numeric values ({exc})") from exc
    return Dataset(inputs, labels, split=split, provenance=f"csv:{Path(path).name}", normalized=normalized)
