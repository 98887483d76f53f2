"""Batched encoding into a normalized N x D embedding matrix, plus its disk cache.

Pooling and normalization accumulate in 64-bit floats; the cache stores
32-bit floats, so row norms are unit within 1e-4 after storage rounding.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import QuestionRecord
from .encoder import EncoderBackend, EncoderOutput, TokenizerSpec, tokenize_batch
from .errors import (
    BadMagic,
    EmbedBatchError,
    EmptyInput,
    EmptyRow,
    TruncatedFile,
    VersionUnsupported,
)

CACHE_MAGIC = b"MQSB"
CACHE_VERSION = 1
DEFAULT_BATCH_SIZE = 500
NORM_EPSILON = 1e-12


@dataclass
class EmbeddingMatrix:
    ids: list[str]
    data: np.ndarray  # N x D, float32
    dim: int
    normalized: bool

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.shape != (len(self.ids), self.dim):
            raise ValueError(f"data shape {self.data.shape} inconsistent with "
                             f"{len(self.ids)} ids and dim {self.dim}")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("duplicate record ids in embedding matrix")

    @property
    def n(self) -> int:
        return len(self.ids)


def mean_pool(output: EncoderOutput) -> np.ndarray:
    """Average hidden states over unmasked positions, row by row.

    Accumulates position-by-position in float64 so the result is bit-equal
    to a sequential per-row loop; padded positions contribute nothing.
    """
    hidden = output.hidden_states.astype(np.float64, copy=False)
    mask = output.attention_mask.astype(np.float64)
    counts = mask.sum(axis=1)
    for i, c in enumerate(counts):
        if c == 0:
            raise EmptyRow(i)

    b, l, d = hidden.shape
    acc = np.zeros((b, d), dtype=np.float64)
    for t in range(l):
        acc += mask[:, t, None] * hidden[:, t, :]
    return acc / counts[:, None]


def l2_normalize(vectors: np.ndarray, epsilon: float = NORM_EPSILON) -> np.ndarray:
    """Scale each row to unit Euclidean norm; all-zero rows stay zero."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    vectors = vectors.astype(np.float64, copy=False)
    norms = np.sqrt((vectors * vectors).sum(axis=1, keepdims=True))
    return vectors / np.maximum(norms, epsilon)


def embed_corpus(records: list[QuestionRecord], backend: EncoderBackend,
                 spec: TokenizerSpec, batch_size: int = DEFAULT_BATCH_SIZE) -> EmbeddingMatrix:
    """Encode records in batches, pool, normalize, and stack in input order.

    Padding is per batch; tokenizer and backend errors are re-raised with
    the offending batch index attached.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if not records:
        raise EmptyInput("no records to embed")

    blocks: list[np.ndarray] = []
    for batch_index, start in enumerate(range(0, len(records), batch_size)):
        chunk = records[start : start + batch_size]
        try:
            batch = tokenize_batch([r.question_text for r in chunk], spec)
            pooled = mean_pool(backend.evaluate(batch))
        except Exception as e:
            raise EmbedBatchError(batch_index, e) from e
        blocks.append(l2_normalize(pooled))

    data = np.vstack(blocks).astype(np.float32)
    return EmbeddingMatrix(ids=[r.id for r in records], data=data,
                           dim=backend.dim, normalized=True)


# --- binary cache ------------------------------------------------------------
# Layout (little-endian): magic "MQSB" | version u32 | N u64 | D u32 |
# normalized u8 | N x (u16 length + UTF-8 id bytes) | N*D float32 row-major.

def write_cache(matrix: EmbeddingMatrix, path: str | Path) -> None:
    with open(path, "wb") as f:
        f.write(CACHE_MAGIC)
        f.write(struct.pack("<IQIB", CACHE_VERSION, matrix.n, matrix.dim,
                            1 if matrix.normalized else 0))
        for rec_id in matrix.ids:
            raw = rec_id.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise ValueError(f"record id too long to cache: {rec_id[:40]}...")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
        f.write(np.ascontiguousarray(matrix.data, dtype="<f4").tobytes())


def read_cache(path: str | Path) -> EmbeddingMatrix:
    blob = Path(path).read_bytes()
    if len(blob) < 4 or blob[:4] != CACHE_MAGIC:
        raise BadMagic(f"{path}: not an embedding cache file")
    header_size = 4 + struct.calcsize("<IQIB")
    if len(blob) < header_size:
        raise TruncatedFile(f"{path}: header cut short")
    version, n, dim, normalized = struct.unpack_from("<IQIB", blob, 4)
    if version != CACHE_VERSION:
        raise VersionUnsupported(f"{path}: cache version {version}, expected {CACHE_VERSION}")

    offset = header_size
    ids: list[str] = []
    for _ in range(n):
        if offset + 2 > len(blob):
            raise TruncatedFile(f"{path}: id section cut short")
        (length,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        if offset + length > len(blob):
            raise TruncatedFile(f"{path}: id section cut short")
        ids.append(blob[offset : offset + length].decode("utf-8"))
        offset += length

    expected = n * dim * 4
    if len(blob) - offset != expected:
        raise TruncatedFile(f"{path}: data section holds {len(blob) - offset} bytes, "
                            f"expected {expected}")
    data = np.frombuffer(blob, dtype="<f4", count=n * dim, offset=offset)
    data = data.reshape(n, dim).copy()
    return EmbeddingMatrix(ids=ids, data=data, dim=dim, normalized=bool(normalized))
