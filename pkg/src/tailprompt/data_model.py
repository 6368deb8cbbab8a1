"""Core dataset and label representations.

Images exist only as frozen unit-norm embeddings (the image encoder is applied
at generation time and never trained), each paired with a binary label vector
and one pooled unit-norm caption embedding.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError

NORM_TOL = 1e-9

GROUPS = ("head", "medium", "tail")

HEAD_MIN_DEFAULT = 100
TAIL_MAX_DEFAULT = 20


def _as_unit_vector(vec, name: str) -> np.ndarray:
    arr = np.asarray(vec, dtype=np.float64)
    if arr.ndim != 1:
        raise ConfigError(f"{name} must be a 1-d vector, got shape {arr.shape}")
    norm = np.linalg.norm(arr)
    if abs(norm - 1.0) > NORM_TOL:
        raise ConfigError(f"{name} must have unit L2 norm, got {norm!r}")
    return arr


def _as_binary_labels(labels) -> np.ndarray:
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise ConfigError(f"labels must be a 1-d vector, got shape {arr.shape}")
    if not np.isin(arr, (0, 1)).all():
        raise ConfigError("invalid label: entries must be 0 or 1")
    return arr.astype(np.int64)


@dataclass(frozen=True)
class Sample:
    """One training instance: unit image embedding, {0,1} labels, unit caption embedding."""

    image_embedding: np.ndarray
    labels: np.ndarray
    caption_embedding: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "image_embedding", _as_unit_vector(self.image_embedding, "image_embedding")
        )
        object.__setattr__(
            self, "caption_embedding", _as_unit_vector(self.caption_embedding, "caption_embedding")
        )
        object.__setattr__(self, "labels", _as_binary_labels(self.labels))
        if self.caption_embedding.shape != self.image_embedding.shape:
            raise ConfigError("image and caption embeddings must share dimension d")
        if self.labels.sum() < 1:
            raise ConfigError("invalid label: every sample must have at least one positive class")
        for arr in (self.image_embedding, self.labels, self.caption_embedding):
            arr.flags.writeable = False


@dataclass(frozen=True)
class Batch:
    """A slice of a dataset, stacked for vectorized loss evaluation.

    Unlike MultiLabelDataset, a Batch does not require every class to appear;
    it is how mini-batches travel through the losses.
    """

    images: np.ndarray  # (B, d)
    labels: np.ndarray  # (B, C)
    captions: np.ndarray  # (B, d)

    def __post_init__(self):
        if not (self.images.ndim == self.labels.ndim == self.captions.ndim == 2):
            raise ConfigError("batch arrays must be 2-d")
        if not (self.images.shape[0] == self.labels.shape[0] == self.captions.shape[0] > 0):
            raise ConfigError("batch arrays must share a nonzero sample count")
        if self.images.shape[1] != self.captions.shape[1]:
            raise ConfigError("image and caption embeddings must share dimension d")

    @property
    def num_samples(self) -> int:
        return self.images.shape[0]

    @property
    def num_classes(self) -> int:
        return self.labels.shape[1]

    @staticmethod
    def from_samples(samples) -> "Batch":
        samples = list(samples)
        if not samples:
            raise ConfigError("empty dataset: cannot build a batch from zero samples")
        return Batch(
            images=np.stack([s.image_embedding for s in samples]),
            labels=np.stack([s.labels for s in samples]),
            captions=np.stack([s.caption_embedding for s in samples]),
        )


@dataclass(frozen=True)
class MultiLabelDataset:
    """A full training split. Immutable after construction.

    Invariants checked here: all rows unit-norm, labels binary with >= 1
    positive per sample, and every class positive in >= 1 sample.
    """

    images: np.ndarray  # (N, d) float64, unit rows
    labels: np.ndarray  # (N, C) int64 in {0,1}
    captions: np.ndarray  # (N, d) float64, unit rows
    class_names: tuple[str, ...]

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float64)
        captions = np.asarray(self.captions, dtype=np.float64)
        labels = np.asarray(self.labels)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "captions", captions)
        object.__setattr__(self, "class_names", tuple(str(n) for n in self.class_names))

        if images.ndim != 2 or images.shape[0] == 0:
            raise ConfigError("empty dataset: need at least one sample")
        if labels.shape != (images.shape[0], len(self.class_names)):
            raise ConfigError(
                f"labels shape {labels.shape} does not match "
                f"{images.shape[0]} samples x {len(self.class_names)} classes"
            )
        if captions.shape != images.shape:
            raise ConfigError("caption embeddings must match image embeddings in shape")
        if not np.isin(labels, (0, 1)).all():
            raise ConfigError("invalid label: entries must be 0 or 1")
        object.__setattr__(self, "labels", labels.astype(np.int64))

        norms = np.linalg.norm(images, axis=1)
        if np.abs(norms - 1.0).max() > NORM_TOL:
            raise ConfigError("image embeddings must have unit L2 norm")
        norms = np.linalg.norm(captions, axis=1)
        if np.abs(norms - 1.0).max() > NORM_TOL:
            raise ConfigError("caption embeddings must have unit L2 norm")
        if (self.labels.sum(axis=1) < 1).any():
            raise ConfigError("invalid label: every sample must have at least one positive class")
        if (self.labels.sum(axis=0) < 1).any():
            missing = int(np.argmin(self.labels.sum(axis=0)))
            raise ConfigError(f"every class needs n_i >= 1 positives; class {missing} has none")

        for arr in (self.images, self.labels, self.captions):
            arr.flags.writeable = False

    @property
    def num_samples(self) -> int:
        return self.images.shape[0]

    @property
    def num_classes(self) -> int:
        return self.labels.shape[1]

    @property
    def dim(self) -> int:
        return self.images.shape[1]

    @property
    def samples(self) -> list[Sample]:
        return [self.sample(k) for k in range(self.num_samples)]

    def sample(self, k: int) -> Sample:
        return Sample(self.images[k], self.labels[k], self.captions[k])

    def batch(self, indices) -> Batch:
        idx = np.asarray(indices, dtype=np.int64)
        return Batch(self.images[idx], self.labels[idx], self.captions[idx])

    def full_batch(self) -> Batch:
        return Batch(self.images, self.labels, self.captions)

    @staticmethod
    def from_samples(samples, class_names) -> "MultiLabelDataset":
        batch = Batch.from_samples(samples)
        return MultiLabelDataset(batch.images, batch.labels, batch.captions, tuple(class_names))


def signed_labels(y) -> np.ndarray:
    """Map {0,1} labels to {-1,+1}: out[i] = 2*y[i] - 1."""
    arr = np.asarray(y)
    if not np.isin(arr, (0, 1)).all():
        raise ConfigError("invalid label: entries must be 0 or 1")
    return 2 * arr.astype(np.int64) - 1


def class_counts(dataset: MultiLabelDataset) -> np.ndarray:
    """n_i = number of samples whose label vector includes class i."""
    if dataset.num_samples == 0:
        raise ConfigError("empty dataset")
    return dataset.labels.sum(axis=0)


def group_classes(counts, head_min: int = HEAD_MIN_DEFAULT, tail_max: int = TAIL_MAX_DEFAULT):
    """Tag each class head/medium/tail by its positive count.

    count > head_min -> head; count < tail_max -> tail; the boundary values
    head_min and tail_max themselves are medium.
    """
    counts = np.asarray(counts)
    if (counts < 1).any():
        raise ConfigError("invalid count: every class needs n_i >= 1")
    if tail_max > head_min:
        raise ConfigError(f"tail_max ({tail_max}) must not exceed head_min ({head_min})")
    tags = []
    for n in counts:
        if n > head_min:
            tags.append("head")
        elif n < tail_max:
            tags.append("tail")
        else:
            tags.append("medium")
    return tuple(tags)


@dataclass(frozen=True)
class ClassStats:
    """Per-class positive counts and frequency-group tags for one split.

    num_samples records the size of the split the counts came from; the
    classifier bias term needs it alongside the counts.
    """

    counts: np.ndarray
    group: tuple[str, ...]
    num_samples: int

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)
        if len(self.group) != counts.shape[0]:
            raise ConfigError("group tags must match counts length")

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @staticmethod
    def from_dataset(
        dataset: MultiLabelDataset,
        head_min: int = HEAD_MIN_DEFAULT,
        tail_max: int = TAIL_MAX_DEFAULT,
    ) -> "ClassStats":
        counts = class_counts(dataset)
        return ClassStats(counts, group_classes(counts, head_min, tail_max), dataset.num_samples)


def dataset_to_dict(dataset: MultiLabelDataset) -> dict:
    return {
        "dim": dataset.dim,
        "num_classes": dataset.num_classes,
        "class_names": list(dataset.class_names),
        "samples": [
            {
                "image_embedding": dataset.images[k].tolist(),
                "labels": dataset.labels[k].tolist(),
                "caption_embedding": dataset.captions[k].tolist(),
            }
            for k in range(dataset.num_samples)
        ],
    }


def dataset_from_dict(doc: dict) -> MultiLabelDataset:
    try:
        names = doc["class_names"]
        rows = doc["samples"]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"dataset snapshot missing field: {exc}") from exc
    samples = [
        Sample(row["image_embedding"], row["labels"], row["caption_embedding"]) for row in rows
    ]
    dataset = MultiLabelDataset.from_samples(samples, names)
    if dataset.dim != doc.get("dim") or dataset.num_classes != doc.get("num_classes"):
        raise ConfigError("dataset snapshot header disagrees with its samples")
    return dataset


def save_dataset(dataset: MultiLabelDataset, path) -> None:
    """Write the JSON snapshot. Floats are serialized with repr, which
    round-trips every double exactly."""
    text = json.dumps(dataset_to_dict(dataset), separators=(",", ":"))
    Path(path).write_text(text + "\n")


def load_dataset(path) -> MultiLabelDataset:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"dataset snapshot is not valid JSON: {exc}") from exc
    return dataset_from_dict(doc)
