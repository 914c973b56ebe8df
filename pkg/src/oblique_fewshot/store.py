"""OMFS feature-store files: binary I/O, validation, synthetic generation.

Layout (all integers little-endian):

    magic   4 bytes  "OMFS"
    version u32      1
    flags   u32      bit0: 1 = pre-pooled n x p matrices, 0 = raw n x h x w maps
                     bit1: 1 = each class's records split into a support pool
                           (first ceil(m/2) records) and a query pool (rest)
    n       u32      channel / feature dimension
    h, w    u32      spatial dims of raw maps; both 0 when pre-pooled
    p       u32      region count of pre-pooled matrices; 0 for raw maps
    classes u32      class count
    per class:
      name_len u16, UTF-8 name, record_count u32,
      records as contiguous float32: raw maps in channel-major C order
      (channel, then row, then column); pre-pooled matrices column by column
      (column index outermost, i.e. the transposed matrix in C order).

The split-pool bit (bit1) exists so synthetic stores can model a support vs
query distribution gap; samplers treat unsplit stores as one shared pool.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import OutOfRange, StoreFormatError

MAGIC = b"OMFS"
VERSION = 1
FLAG_POOLED = 1
FLAG_SPLIT = 2
_KNOWN_FLAGS = FLAG_POOLED | FLAG_SPLIT


@dataclass
class FeatureStore:
    """In-memory store; records are float32 arrays exactly as (de)serialized."""

    n: int
    h: int
    w: int
    p: int
    pooled: bool
    split: bool
    classes: list[str]
    records: list[list[np.ndarray]]

    def record_shape(self) -> tuple[int, ...]:
        return (self.n, self.p) if self.pooled else (self.n, self.h, self.w)

    def support_pool_size(self, class_index: int) -> int:
        m = len(self.records[class_index])
        return m - m // 2 if self.split else m


def _flags_of(store: FeatureStore) -> int:
    return (FLAG_POOLED if store.pooled else 0) | (FLAG_SPLIT if store.split else 0)


def write_store(store: FeatureStore, path: str) -> None:
    """Serialize to the binary layout documented above."""
    shape = store.record_shape()
    parts = [
        MAGIC,
        struct.pack(
            "<7I", VERSION, _flags_of(store), store.n, store.h, store.w, store.p,
            len(store.classes),
        ),
    ]
    for name, recs in zip(store.classes, store.records):
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise StoreFormatError(f"class name too long: {name[:32]}...")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", len(recs)))
        for rec in recs:
            arr = np.asarray(rec, dtype="<f4")
            if arr.shape != shape:
                raise StoreFormatError(
                    f"record shape {arr.shape} does not match header {shape}"
                )
            if store.pooled:
                arr = arr.T  # column index outermost
            parts.append(np.ascontiguousarray(arr).tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Cursor:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.buf):
            raise StoreFormatError("unexpected end of file")
        out = self.buf[self.pos : self.pos + count]
        self.pos += count
        return out

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def done(self) -> bool:
        return self.pos == len(self.buf)


def read_store(path: str) -> FeatureStore:
    """Parse a store file; raises StoreFormatError on any layout violation."""
    try:
        with open(path, "rb") as fh:
            cur = _Cursor(fh.read())
    except OSError as err:
        raise StoreFormatError(f"cannot read store: {err}") from err
    if cur.take(4) != MAGIC:
        raise StoreFormatError("bad magic")
    version = cur.u32()
    if version != VERSION:
        raise StoreFormatError(f"unsupported version {version}")
    flags = cur.u32()
    if flags & ~_KNOWN_FLAGS:
        raise StoreFormatError(f"unknown flag bits 0x{flags:x}")
    pooled = bool(flags & FLAG_POOLED)
    split = bool(flags & FLAG_SPLIT)
    n, h, w, p, class_count = (cur.u32() for _ in range(5))
    if n < 1:
        raise StoreFormatError("channel count must be >= 1")
    if pooled and (h != 0 or w != 0 or p < 1):
        raise StoreFormatError("pre-pooled store requires h = w = 0 and p >= 1")
    if not pooled and (h < 1 or w < 1 or p != 0):
        raise StoreFormatError("raw store requires h, w >= 1 and p = 0")
    if class_count < 1:
        raise StoreFormatError("store has no classes")
    per_record = n * p if pooled else n * h * w
    classes: list[str] = []
    records: list[list[np.ndarray]] = []
    for _ in range(class_count):
        name_len = cur.u16()
        try:
            name = cur.take(name_len).decode("utf-8")
        except UnicodeDecodeError as err:
            raise StoreFormatError(f"class name is not valid UTF-8: {err}") from err
        if name in classes:
            raise StoreFormatError(f"duplicate class name {name!r}")
        count = cur.u32()
        if count < 1:
            raise StoreFormatError(f"class {name!r} has no records")
        recs = []
        for _ in range(count):
            flat = np.frombuffer(cur.take(per_record * 4), dtype="<f4")
            if pooled:
                recs.append(np.ascontiguousarray(flat.reshape(p, n).T))
            else:
                recs.append(flat.reshape(n, h, w).copy())
        classes.append(name)
        records.append(recs)
    if not cur.done():
        raise StoreFormatError("trailing bytes after last record")
    return FeatureStore(n, h, w, p, pooled, split, classes, records)


def validate_store(path: str) -> dict:
    """Full structural parse plus a finiteness check on a sampled subset.

    Returns a header summary; raises StoreFormatError on the first violation.
    """
    store = read_store(path)
    checked = 0
    for recs in store.records:
        stride = max(1, len(recs) // 8)
        for rec in recs[::stride]:
            if not np.all(np.isfinite(rec)):
                raise StoreFormatError("record contains non-finite values")
            checked += 1
    return {
        "n": store.n,
        "h": store.h,
        "w": store.w,
        "p": store.p,
        "pooled": store.pooled,
        "split": store.split,
        "classes": len(store.classes),
        "records": sum(len(r) for r in store.records),
        "sampled_records_checked": checked,
    }


def synth_store(
    classes: int,
    per_class: int,
    n: int,
    p: int,
    separation: float,
    shift: float,
    seed: int,
) -> FeatureStore:
    """Gaussian class clusters as pre-pooled non-negative feature matrices.

    Per class: a random center, support draws around it, and query draws
    around the center offset by `shift` along a random unit direction.
    Noise spread is 1/separation. Taking absolute values keeps all columns
    in the non-negative orthant, so no antipodal pairs can arise downstream.
    The support pool is written first (split-pool layout, flag bit1).
    """
    if classes < 1 or per_class < 1 or n < 1 or p < 1:
        raise OutOfRange("classes, per_class, n, p must all be >= 1")
    if not separation > 0 or shift < 0:
        raise OutOfRange("separation must be > 0 and shift >= 0")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    width = max(2, len(str(classes - 1)))
    names = [f"class{idx:0{width}d}" for idx in range(classes)]
    support_count = per_class - per_class // 2
    query_count = per_class // 2
    noise = 1.0 / separation
    records: list[list[np.ndarray]] = []
    for _ in range(classes):
        center = rng.standard_normal((n, p))
        direction = rng.standard_normal((n, p))
        direction /= max(float(np.linalg.norm(direction)), 1e-12)
        sup = center + noise * rng.standard_normal((support_count, n, p))
        qry = (center + shift * direction) + noise * rng.standard_normal(
            (query_count, n, p)
        )
        both = np.abs(np.concatenate([sup, qry])).astype("<f4")
        records.append(list(both))
    return FeatureStore(
        n=n, h=0, w=0, p=p, pooled=True, split=True, classes=names, records=records
    )
