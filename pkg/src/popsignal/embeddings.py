"""Feature vectors keyed by image id, standing in for a CNN backbone."""
from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import MissingDataError, ValidationError, fmt


class MissingEmbedding(MissingDataError):
    def __init__(self, image_id: str):
        super().__init__(f"no embedding for image {image_id!r}")
        self.image_id = image_id


class EmbeddingStore:
    """Immutable mapping ``image_id -> float64 vector`` of one fixed dimension."""

    def __init__(self, ids: Sequence[str], matrix: np.ndarray):
        matrix = np.array(matrix, dtype=np.float64, copy=True)
        if matrix.ndim != 2 or matrix.shape[1] == 0:
            raise ValidationError("embedding matrix must be 2-D with dim > 0")
        if len(ids) != matrix.shape[0]:
            raise ValidationError("one id per embedding row required")
        if not np.all(np.isfinite(matrix)):
            raise ValidationError("embeddings must be finite")
        index = {}
        for row, iid in enumerate(ids):
            if iid in index:
                raise ValidationError(f"duplicate image id {iid!r}")
            index[str(iid)] = row
        matrix.setflags(write=False)
        self._ids = tuple(str(i) for i in ids)
        self._index = index
        self._matrix = matrix

    @property
    def dim(self) -> int:
        return self._matrix.shape[1]

    @property
    def ids(self) -> tuple:
        return self._ids

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, image_id) -> bool:
        return image_id in self._index

    def __eq__(self, other) -> bool:
        return (isinstance(other, EmbeddingStore) and self._ids == other._ids
                and np.array_equal(self._matrix, other._matrix))

    def lookup(self, image_id: str) -> np.ndarray:
        try:
            return self._matrix[self._index[image_id]]
        except KeyError:
            raise MissingEmbedding(image_id) from None

    def lookup_many(self, image_ids: Iterable[str]) -> np.ndarray:
        rows = []
        for iid in image_ids:
            if iid not in self._index:
                raise MissingEmbedding(iid)
            rows.append(self._index[iid])
        return self._matrix[rows] if rows else np.empty((0, self.dim))

    @classmethod
    def from_mapping(cls, vectors: Mapping[str, Sequence[float]]) -> "EmbeddingStore":
        ids = list(vectors)
        return cls(ids, np.array([np.asarray(vectors[i], dtype=np.float64) for i in ids]))

    def merged(self, other: "EmbeddingStore") -> "EmbeddingStore":
        if other.dim != self.dim:
            raise ValidationError(f"dimension mismatch {self.dim} vs {other.dim}")
        return EmbeddingStore(self._ids + other._ids, np.vstack([self._matrix, other._matrix]))


def lookup(store: EmbeddingStore, image_id: str) -> np.ndarray:
    return store.lookup(image_id)


def dumps(store: EmbeddingStore) -> str:
    buf = io.StringIO()
    buf.write(",".join(["image_id"] + [f"f{j}" for j in range(store.dim)]) + "\n")
    for iid, row in zip(store.ids, store.matrix):
        buf.write(iid + "," + ",".join(fmt(v) for v in row) + "\n")
    return buf.getvalue()


def loads(text: str) -> EmbeddingStore:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if not header or header[0] != "image_id" or len(header) < 2:
        raise ValidationError("embedding CSV needs header 'image_id,f0,...'")
    dim = len(header) - 1
    ids, rows = [], []
    seen = set()
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) - 1 != dim:
            raise ValidationError(f"row {lineno}: expected {dim} values, got {len(row) - 1}")
        if row[0] in seen:
            raise ValidationError(f"row {lineno}: duplicate image id {row[0]!r}")
        seen.add(row[0])
        ids.append(row[0])
        try:
            rows.append([float(v) for v in row[1:]])
        except ValueError as exc:
            raise ValidationError(f"row {lineno}: {exc}") from None
    if not rows:
        raise ValidationError("embedding CSV has no rows")
    return EmbeddingStore(ids, np.array(rows))


def save(store: EmbeddingStore, path: str | Path) -> None:
    Path(path).write_text(dumps(store))


def load(path: str | Path) -> EmbeddingStore:
    p = Path(path)
    if not p.exists():
        raise MissingDataError(f"embedding file not found: {p}")
    text = p.read_text()
    if not text.strip():
        raise ValidationError(f"{p}: empty embedding file, no dimension to infer")
    return loads(text)


def synth_embeddings(ids: Sequence[str], labels: Sequence[int], seed: int, dim: int,
                     centroid_sep: float, noise_sigma: float) -> EmbeddingStore:
    """Isotropic Gaussian blobs, one per class label.

    Class centroids sit at ``+-centroid_sep/2`` along a seeded random unit
    direction, so the centroid distance is ``centroid_sep``.
    """
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(dim)
    direction /= np.linalg.norm(direction)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    offsets = {int(c): (i - (len(classes) - 1) / 2) * centroid_sep
               for i, c in enumerate(classes)}
    base = np.array([offsets[int(c)] for c in labels])[:, None] * direction
    return EmbeddingStore(list(ids), base + noise_sigma * rng.standard_normal((len(ids), dim)))


def parse_synth_flag(value: str) -> tuple[int, int, float, float]:
    """Parse ``seed,d,centroid-sep,noise-sigma``."""
    parts = value.split(",")
    if len(parts) != 4:
        raise ValidationError("--synth-embeddings expects seed,d,centroid-sep,noise-sigma")
    seed, dim = int(parts[0]), int(parts[1])
    sep, sigma = float(parts[2]), float(parts[3])
    if dim < 1 or sigma < 0:
        raise ValidationError("--synth-embeddings needs d >= 1 and noise-sigma >= 0")
    return seed, dim, sep, sigma
