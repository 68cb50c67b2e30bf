"""Exact top-k cosine search over embedded alias records."""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Union

import numpy as np

from .cache import EmbeddingCache, open_cache
from .embedding import EmbeddingProvider, normalize
from .exceptions import BackendError, ContractError, DataError, EmbeddingError
from .kb import AliasRecord, KnowledgeBase, enumerate_alias_records

logger = logging.getLogger(__name__)

SNAPSHOT_MAGIC = b"BLNKIDX1"
DEFAULT_K = 20


class RetrievalHit(NamedTuple):
    alias: str
    concept_id: str
    score: float
    rank: int
    ordinal: int


@dataclass(frozen=True)
class AliasIndex:
    matrix: np.ndarray
    records: tuple

    def __post_init__(self):
        m = self.matrix
        if m.ndim != 2 or m.shape[1] < 1:
            raise ContractError(f"index matrix must be 2-D with dim >= 1, got {m.shape}")
        if m.shape[0] != len(self.records):
            raise ContractError(f"{m.shape[0]} rows for {len(self.records)} records")
        if len(m) and not np.allclose(np.linalg.norm(m, axis=1), 1.0, rtol=0, atol=1e-6):
            raise ContractError("index rows must be unit-normalized")

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])

    def __len__(self) -> int:
        return len(self.records)


def build_index(
    kb: KnowledgeBase,
    embedder: EmbeddingProvider,
    cache: Optional[Union[str, Path, EmbeddingCache]] = None,
    batch_size: int = 256,
) -> AliasIndex:
    """Embed every alias record of ``kb`` (through ``cache`` when given) into an index."""
    records = enumerate_alias_records(kb)
    if not records:
        raise ContractError("knowledge base is empty")
    if cache is not None and not isinstance(cache, EmbeddingCache):
        cache = open_cache(cache)
    aliases = [r.alias for r in records]
    blocks = []
    for start in range(0, len(aliases), batch_size):
        chunk = aliases[start:start + batch_size]
        try:
            blocks.append(cache.embed(chunk, embedder) if cache is not None else embedder.embed_batch(chunk))
        except EmbeddingError:
            raise
        except BackendError as exc:
            raise EmbeddingError(str(exc), offset=start) from exc
    matrix = np.vstack(blocks)
    logger.info("built alias index: %d rows, dim %d", *matrix.shape)
    return AliasIndex(matrix, tuple(records))


def search(index: AliasIndex, query, k: int = DEFAULT_K) -> List[RetrievalHit]:
    """Exact top-``k`` hits by cosine similarity; ties go to the lower record ordinal."""
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise ContractError(f"k must be a positive integer, got {k!r}")
    q = normalize(query)
    if q.shape[0] != index.dim:
        raise ContractError(f"query dim {q.shape[0]} != index dim {index.dim}")
    scores = index.matrix @ q
    n = len(scores)
    k = min(int(k), n)
    if k < n:
        # every index scoring at least the k-th best, then an exact stable sort
        kth = np.partition(scores, n - k)[n - k]
        candidates = np.flatnonzero(scores >= kth)
    else:
        candidates = np.arange(n)
    order = candidates[np.lexsort((candidates, -scores[candidates]))][:k]
    return [
        RetrievalHit(index.records[i].alias, index.records[i].concept_id, float(scores[i]), rank, int(i))
        for rank, i in enumerate(order, start=1)
    ]


_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


def _put_str(buf: bytearray, s: str) -> None:
    b = s.encode("utf-8")
    buf += _U32.pack(len(b))
    buf += b


def save_index(index: AliasIndex, path: Union[str, Path]) -> None:
    """Write a snapshot: magic, dim u32, rows u64, float32 rows, then (alias, concept id) strings."""
    buf = bytearray(SNAPSHOT_MAGIC)
    buf += _U32.pack(index.dim)
    buf += _U64.pack(len(index))
    buf += np.ascontiguousarray(index.matrix, dtype="<f4").tobytes()
    for rec in index.records:
        _put_str(buf, rec.alias)
        _put_str(buf, rec.concept_id)
    Path(path).write_bytes(bytes(buf))


def load_index(path: Union[str, Path]) -> AliasIndex:
    path = Path(path)
    data = path.read_bytes()
    if data[:8] != SNAPSHOT_MAGIC:
        raise DataError("not an index snapshot (bad magic)", path=str(path))
    try:
        (dim,) = _U32.unpack_from(data, 8)
        (rows,) = _U64.unpack_from(data, 12)
        pos = 20
        end = pos + rows * dim * 4
        if end > len(data):
            raise DataError("truncated matrix", path=str(path))
        matrix = np.frombuffer(data[pos:end], dtype="<f4").reshape(rows, dim).astype(np.float64)
        pos = end
        records = []
        for _ in range(rows):
            fields = []
            for _ in range(2):
                (ln,) = _U32.unpack_from(data, pos)
                fields.append(data[pos + 4:pos + 4 + ln].decode("utf-8"))
                pos += 4 + ln
            records.append(AliasRecord(*fields))
    except (struct.error, UnicodeDecodeError) as exc:
        raise DataError(f"corrupt index snapshot: {exc}", path=str(path)) from None
    matrix = np.vstack([normalize(r) for r in matrix]) if rows else matrix
    return AliasIndex(matrix, tuple(records))

