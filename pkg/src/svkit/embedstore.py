"""Fixed-dimension embedding stores and vector transforms.

Two on-disk formats:

BINARY
    ``b"EMB1"``, u32 dim, u64 count, then per record a u16 key length, the
    UTF-8 key and ``dim`` little-endian float32 values.
TEXT
    ``key dim v1 ... vdim``, one record per line.

Stores hold float32 vectors (the binary precision); the vector operations in
this module compute in float64.
"""
from __future__ import annotations

import struct
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"EMB1"
_HEADER = struct.Struct("<4sIQ")
_KEYLEN = struct.Struct("<H")


class EmbeddingError(ValueError):
    pass


class MagicError(EmbeddingError):
    pass


class DimMismatchError(EmbeddingError):
    pass


class TruncatedRecordError(EmbeddingError):
    pass


class NonFiniteError(EmbeddingError):
    pass


class DuplicateKeyError(EmbeddingError):
    pass


@dataclass
class EmbeddingStore:
    dim: int
    entries: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError("dim must be positive")
        checked = {}
        for key, vec in self.entries.items():
            checked[key] = self._check(key, vec)
        self.entries = checked

    def _check(self, key: str, vec) -> np.ndarray:
        if not key or any(c.isspace() for c in key):
            raise ValueError(f"invalid key {key!r}")
        arr = np.array(vec, dtype=np.float32).reshape(-1)
        if arr.shape[0] != self.dim:
            raise DimMismatchError(f"{key}: dim {arr.shape[0]} != store dim {self.dim}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"{key}: non-finite value")
        arr.setflags(write=False)
        return arr

    def add(self, key: str, vec) -> None:
        if key in self.entries:
            raise DuplicateKeyError(f"duplicate key {key!r}")
        self.entries[key] = self._check(key, vec)

    def __getitem__(self, key: str) -> np.ndarray:
        return self.entries[key]

    def __contains__(self, key: object) -> bool:
        return key in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def keys(self):
        return self.entries.keys()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmbeddingStore):
            return NotImplemented
        return (self.dim == other.dim
                and list(self.entries) == list(other.entries)
                and all(np.array_equal(v, other.entries[k]) for k, v in self.entries.items()))


def _detect_format(path) -> str:
    with open(path, "rb") as fh:
        return "binary" if fh.read(4) == MAGIC else "text"


def read_store(path, format: str | None = None) -> EmbeddingStore:
    """Load a store; ``format`` is ``"binary"``, ``"text"`` or None to sniff."""
    format = (format or _detect_format(path)).lower()
    if format == "binary":
        with open(path, "rb") as fh:
            return _read_binary(fh.read())
    if format == "text":
        with open(path, encoding="utf-8") as fh:
            return _read_text(fh)
    raise ValueError(f"unknown store format {format!r}")


def _read_binary(buf: bytes) -> EmbeddingStore:
    if len(buf) < _HEADER.size:
        if buf[:4] != MAGIC[:len(buf)]:
            raise MagicError("bad magic")
        raise TruncatedRecordError("truncated header")
    magic, dim, count = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise MagicError(f"bad magic {magic!r}")
    if dim == 0:
        raise DimMismatchError("store dim is zero")
    store = EmbeddingStore(dim)
    pos = _HEADER.size
    nbytes = 4 * dim
    for i in range(count):
        if pos + _KEYLEN.size > len(buf):
            raise TruncatedRecordError(f"record {i}: truncated key length")
        (klen,) = _KEYLEN.unpack_from(buf, pos)
        pos += _KEYLEN.size
        if pos + klen + nbytes > len(buf):
            raise TruncatedRecordError(f"record {i}: truncated")
        key = buf[pos:pos + klen].decode("utf-8")
        pos += klen
        vec = np.frombuffer(buf, dtype="<f4", count=dim, offset=pos)
        pos += nbytes
        store.add(key, vec)
    if pos != len(buf):
        raise EmbeddingError(f"{len(buf) - pos} trailing bytes after {count} records")
    return store


def _read_text(lines: Iterable[str]) -> EmbeddingStore:
    store = None
    for lineno, line in enumerate(lines, start=1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if len(parts) < 2:
            raise TruncatedRecordError(f"line {lineno}: missing dim")
        try:
            dim = int(parts[1])
            values = [float(x) for x in parts[2:]]
        except ValueError as exc:
            raise EmbeddingError(f"line {lineno}: {exc}") from None
        if len(values) != dim:
            raise TruncatedRecordError(f"line {lineno}: declared dim {dim}, got {len(values)} values")
        if store is None:
            store = EmbeddingStore(dim)
        elif dim != store.dim:
            raise DimMismatchError(f"line {lineno}: dim {dim} != store dim {store.dim}")
        try:
            store.add(parts[0], values)
        except EmbeddingError as exc:
            raise type(exc)(f"line {lineno}: {exc}") from None
    if store is None:
        raise EmbeddingError("empty text store: dim unknown")
    return store


def write_store(store: EmbeddingStore, path, format: str = "binary") -> None:
    format = format.lower()
    if format == "binary":
        chunks = [_HEADER.pack(MAGIC, store.dim, len(store))]
        for key, vec in store.entries.items():
            kb = key.encode("utf-8")
            chunks.append(_KEYLEN.pack(len(kb)))
            chunks.append(kb)
            chunks.append(np.asarray(vec, dtype="<f4").tobytes())
        with open(path, "wb") as fh:
            fh.write(b"".join(chunks))
    elif format == "text":
        with open(path, "w", encoding="utf-8") as fh:
            for key, vec in store.entries.items():
                # %.9g round-trips float32 exactly
                vals = " ".join("%.9g" % x for x in vec.tolist())
                fh.write(f"{key} {store.dim} {vals}\n")
    else:
        raise ValueError(f"unknown store format {format!r}")


def l2_normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if not norm > 0:
        raise ValueError("cannot normalize a zero vector")
    return v / norm


def average(vs) -> np.ndarray:
    vs = [np.asarray(v, dtype=np.float64) for v in vs]
    if not vs:
        raise ValueError("cannot average an empty list")
    dim = vs[0].shape
    if any(v.shape != dim for v in vs):
        raise DimMismatchError("embeddings differ in dimension")
    return np.mean(np.stack(vs), axis=0)


def concat(a, b, normalize_halves: bool = True) -> np.ndarray:
    """Join two modality vectors; with ``normalize_halves`` each half is unit
    length, so the fused cosine is the mean of the per-modality cosines."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("cannot concatenate empty embeddings")
    if normalize_halves:
        a, b = l2_normalize(a), l2_normalize(b)
    return np.concatenate([a, b])


def store_from_mapping(entries: Mapping[str, np.ndarray]) -> EmbeddingStore:
    items = list(entries.items())
    if not items:
        raise ValueError("cannot infer dim of an empty mapping")
    return EmbeddingStore(len(items[0][1]), dict(items))
