"""Append-only on-disk embedding cache.

Record layout, repeated until EOF::

    key_len: u32 LE | key: utf-8 bytes | dim: u32 LE | dim x f32 LE

with ``key = model_name + "\\x00" + text``. Vectors are stored as float32, so
both the cold and the warm path return the float32-rounded vector
(re-normalized in float64); the two are bit-identical.
"""

import logging
import os
import struct
import threading
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from .embedding import EmbeddingProvider, normalize

logger = logging.getLogger(__name__)

_U32 = struct.Struct("<I")


def cache_key(model_name: str, text: str) -> str:
    return f"{model_name}\x00{text}"


def encode_record(key: str, vec: np.ndarray) -> bytes:
    kb = key.encode("utf-8")
    v = np.asarray(vec, dtype="<f4")
    return _U32.pack(len(kb)) + kb + _U32.pack(len(v)) + v.tobytes()


def read_records(data: bytes) -> Tuple[Dict[str, np.ndarray], int, int]:
    """Parse ``data``; return ``(entries, valid_bytes, discarded_records)``.

    Parsing stops at a truncated tail. Records with undecodable keys or
    non-finite values are skipped and counted as discarded.
    """
    entries: Dict[str, np.ndarray] = {}
    pos = 0
    discarded = 0
    n = len(data)
    while pos < n:
        if pos + 4 > n:
            discarded += 1
            break
        (klen,) = _U32.unpack_from(data, pos)
        if pos + 4 + klen + 4 > n:
            discarded += 1
            break
        kbytes = data[pos + 4:pos + 4 + klen]
        (dim,) = _U32.unpack_from(data, pos + 4 + klen)
        start = pos + 8 + klen
        end = start + 4 * dim
        if end > n:
            discarded += 1
            break
        pos = end
        vec = np.frombuffer(data[start:end], dtype="<f4")
        try:
            key = kbytes.decode("utf-8")
        except UnicodeDecodeError:
            discarded += 1
            continue
        if dim == 0 or not np.all(np.isfinite(vec)) or not np.any(vec):
            discarded += 1
            continue
        entries[key] = vec.copy()
    return entries, pos, discarded


class EmbeddingCache:
    """File-backed ``key -> float32 vector`` map with serialized appends."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self._lock = threading.RLock()
        self._entries: Dict[str, np.ndarray] = {}
        self._load()

    def _load(self) -> None:
        if not self.path.exists():
            return
        data = self.path.read_bytes()
        entries, valid, discarded = read_records(data)
        self._entries = entries
        if discarded or valid != len(data):
            logger.warning("discarded %d corrupt record(s) in embedding cache %s; they will be recomputed",
                           discarded, self.path)
            self._rewrite()

    def _rewrite(self) -> None:
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        with tmp.open("wb") as fh:
            for key, vec in self._entries.items():
                fh.write(encode_record(key, vec))
        os.replace(tmp, self.path)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def get(self, key: str):
        return self._entries.get(key)

    def put_many(self, items: Sequence[Tuple[str, np.ndarray]]) -> None:
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("ab") as fh:
                for key, vec in items:
                    v32 = np.asarray(vec, dtype="<f4")
                    fh.write(encode_record(key, v32))
                    self._entries[key] = v32.copy()

    def embed(self, texts: Sequence[str], provider: EmbeddingProvider) -> np.ndarray:
        """Return unit rows for ``texts``; only cache misses reach ``provider``."""
        texts = list(texts)
        model = getattr(provider, "model_name", "unknown")
        with self._lock:
            missing: List[str] = []
            seen = set()
            for t in texts:
                key = cache_key(model, t)
                if key not in self._entries and t not in seen:
                    missing.append(t)
                    seen.add(t)
            if missing:
                vectors = provider.embed_batch(missing)
                self.put_many([(cache_key(model, t), v) for t, v in zip(missing, vectors)])
            rows = [self._entries[cache_key(model, t)] for t in texts]
        if not rows:
            return np.zeros((0, 0))
        return np.vstack([normalize(r.astype(np.float64)) for r in rows])


_OPEN_CACHES: Dict[str, EmbeddingCache] = {}
_OPEN_LOCK = threading.Lock()


def open_cache(path: Union[str, Path]) -> EmbeddingCache:
    """Process-wide cache instance per resolved path (reloaded if the file vanished)."""
    resolved = str(Path(path).resolve())
    with _OPEN_LOCK:
        cache = _OPEN_CACHES.get(resolved)
        if cache is None or (len(cache) and not cache.path.exists()):
            cache = EmbeddingCache(resolved)
            _OPEN_CACHES[resolved] = cache
        return cache


def cached_embed(texts: Sequence[str], cache_path: Union[str, Path], provider: EmbeddingProvider) -> np.ndarray:
    """Embed ``texts`` through the persistent cache at ``cache_path``."""
    return open_cache(cache_path).embed(texts, provider)
