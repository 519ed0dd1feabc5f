"""Embedding dataset container, the UQEB binary format, and the 64/16/20 split.

UQEB layout (little-endian): magic ``UQEB``, format version u32 (currently 1),
row count u64, embedding dimension u32, labels-present byte, source note as
(u32 length, UTF-8 bytes), embeddings as row-major f32, labels as one byte
each when present. Embeddings are stored in 32 bits and widened to 64 on
read; everything downstream computes in float64.

A JSON-lines alternative (``{"embedding": [...], "label": 0}`` per line) is
accepted on ingestion and converted to the same in-memory form.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .numerics import NumericalError, RngStream

UQEB_MAGIC = b"UQEB"
UQEB_VERSION = 1

STREAM_SPLIT = 6


class FormatError(ValueError):
    """A data file violates its declared layout."""


class VersionError(FormatError):
    """The file declares a format version this reader does not support."""


@dataclass
class EmbeddingDataset:
    """Rows of fixed-dimension embedding vectors with optional binary labels."""

    embeddings: np.ndarray           # (n, dim) float64
    labels: np.ndarray | None = None  # (n,) uint8 of 0/1
    source_note: str = ""

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if self.embeddings.ndim != 2:
            raise ValueError(f"embeddings must be 2-d, got shape {self.embeddings.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.uint8)
            if self.labels.shape != (self.n,):
                raise ValueError(
                    f"labels length {self.labels.shape} != row count {self.n}"
                )
            if not np.all((self.labels == 0) | (self.labels == 1)):
                raise ValueError("labels must be 0 or 1")

    @property
    def n(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def require_labels(self):
        if self.labels is None:
            raise ValueError("dataset has no labels")

    def require_finite(self):
        if not np.all(np.isfinite(self.embeddings)):
            rows = np.unique(np.nonzero(~np.isfinite(self.embeddings))[0])
            raise NumericalError(
                f"embeddings contain non-finite values in row(s) {rows[:5].tolist()}"
            )


@dataclass
class SplitIndices:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def write_embedding_file(path, dataset: EmbeddingDataset) -> None:
    note = dataset.source_note.encode("utf-8")
    has_labels = dataset.labels is not None
    header = b"".join([
        UQEB_MAGIC,
        struct.pack("<I", UQEB_VERSION),
        struct.pack("<Q", dataset.n),
        struct.pack("<I", dataset.dim),
        struct.pack("<B", int(has_labels)),
        struct.pack("<I", len(note)),
        note,
    ])
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(dataset.embeddings.astype("<f4").tobytes())
            if has_labels:
                fh.write(dataset.labels.astype(np.uint8).tobytes())
    except OSError as exc:
        raise OSError(f"failed writing embedding file {path}: {exc}") from exc


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, count: int, what: str) -> bytes:
        if self.pos + count > len(self.data):
            raise FormatError(
                f"{self.path}: truncated {what}: expected {count} bytes at "
                f"offset {self.pos}, only {len(self.data) - self.pos} available"
            )
        out = self.data[self.pos:self.pos + count]
        self.pos += count
        return out


def read_embedding_file(path) -> EmbeddingDataset:
    """Inverse of :func:`write_embedding_file`; widens storage to float64.

    Non-finite embedding values pass through the reader; validation happens
    where the numbers are consumed (see ``EmbeddingDataset.require_finite``).
    """
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), path)
    if r.take(4, "magic") != UQEB_MAGIC:
        raise FormatError(f"{path}: bad magic, not an embedding file")
    (version,) = struct.unpack("<I", r.take(4, "version"))
    if version != UQEB_VERSION:
        raise VersionError(f"{path}: unsupported format version {version}")
    (n,) = struct.unpack("<Q", r.take(8, "row count"))
    (dim,) = struct.unpack("<I", r.take(4, "dimension"))
    (has_labels,) = struct.unpack("<B", r.take(1, "labels flag"))
    (note_len,) = struct.unpack("<I", r.take(4, "note length"))
    note = r.take(note_len, "source note").decode("utf-8")
    raw = r.take(4 * n * dim, "embedding payload")
    embeddings = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(n, dim)
    labels = None
    if has_labels:
        labels = np.frombuffer(r.take(n, "labels"), dtype=np.uint8).copy()
        if n and not np.all((labels == 0) | (labels == 1)):
            raise FormatError(f"{path}: labels must be 0 or 1")
    if r.pos != len(r.data):
        raise FormatError(
            f"{path}: {len(r.data) - r.pos} trailing bytes after payload"
        )
    return EmbeddingDataset(embeddings, labels, note)


def read_jsonl_file(path) -> EmbeddingDataset:
    """Ingest ``{"embedding": [...], "label": 0}`` JSON lines."""
    rows, labels = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if "embedding" not in obj:
                raise FormatError(f"{path}:{lineno}: missing 'embedding' key")
            rows.append(obj["embedding"])
            if "label" in obj and obj["label"] is not None:
                if obj["label"] not in (0, 1):
                    raise FormatError(
                        f"{path}:{lineno}: label must be 0 or 1, got {obj['label']!r}"
                    )
                labels.append(obj["label"])
            elif labels:
                raise FormatError(f"{path}:{lineno}: labels present on some rows only")
    if not rows:
        return EmbeddingDataset(np.zeros((0, 0)), None, "")
    if labels and len(labels) != len(rows):
        raise FormatError(f"{path}: labels present on some rows only")
    widths = {len(row) for row in rows}
    if len(widths) != 1:
        raise FormatError(f"{path}: inconsistent embedding dimensions {sorted(widths)}")
    return EmbeddingDataset(
        np.asarray(rows, dtype=np.float64),
        np.asarray(labels, dtype=np.uint8) if labels else None,
        "",
    )


def load_dataset(path) -> EmbeddingDataset:
    """Read either format, sniffing the binary magic first."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == UQEB_MAGIC:
        return read_embedding_file(path)
    return read_jsonl_file(path)


def split_dataset(n: int, seed: int) -> SplitIndices:
    """Deterministic test/val/train split: 20% test, then 20% of the rest val.

    Sizes are floored and every remainder row lands in train. The shuffle is
    a seeded permutation, so equal (n, seed) pairs always produce identical
    index lists.
    """
    if n < 5:
        raise ValueError(f"need at least 5 rows to populate all splits, got {n}")
    perm = RngStream(seed).substream(STREAM_SPLIT).permutation(n)
    n_test = n // 5
    rest = perm[n_test:]
    n_val = len(rest) // 5
    return SplitIndices(
        train=np.sort(rest[n_val:]),
        val=np.sort(rest[:n_val]),
        test=np.sort(perm[:n_test]),
    )
