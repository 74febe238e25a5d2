"""Binary feature cache.

Layout (all integers little-endian):

    header   b"SERB" | u16 version | u8 set code | u8 kind | u32 target_frames | u32 n_utts
    entry    u16 id length | utf-8 id | 32-byte sha256 of the source audio
             | u32 rows | u32 cols | rows*cols f32 row-major | u32 crc32 of the entry
    trailer  u32 crc32 of every preceding byte

LLD caches keep each utterance unpadded; target_frames records the length
the model input is padded to.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import hashlib
import json
import logging
import os
from pathlib import Path
import struct
import tempfile
from typing import Iterable, NamedTuple
import zlib

import numpy as np

from . import SongSpeechEmotionError
from .dsp_core import FrameMatrix
from .hsf import FEATURE_SETS, FEATURE_TYPES, FEATURE_WIDTHS, to_model_input, utterance_hsf
from .ravdess import UtteranceRecord

logger = logging.getLogger(__name__)

MAGIC = b"SERB"
VERSION = 1
SET_CODES = {set_id: code for code, set_id in enumerate(FEATURE_SETS, start=1)}
KIND_CODES = {kind: code for code, kind in enumerate(FEATURE_TYPES)}

_HEADER = struct.Struct("<4sHBBII")
_SHAPE = struct.Struct("<II")
_CRC = struct.Struct("<I")
_HASH_BYTES = 32


class CacheError(SongSpeechEmotionError, OSError):
    """Raised for a missing, truncated or corrupt cache file."""


class CacheEntry(NamedTuple):
    utterance_id: str
    content_hash: bytes
    values: np.ndarray


@dataclass
class FeatureCache:
    """In-memory form of one cache file, entries in insertion order."""

    set_id: str
    kind: str
    target_frames: int
    entries: dict[str, CacheEntry] = field(default_factory=dict)

    def __post_init__(self):
        if self.set_id not in SET_CODES:
            raise ValueError(f"unknown feature set {self.set_id!r}")
        if self.kind not in KIND_CODES:
            raise ValueError(f"unknown feature kind {self.kind!r}")

    def add(self, utterance_id: str, content_hash: bytes, values: np.ndarray) -> None:
        values = np.atleast_2d(np.asarray(values, dtype="<f4"))
        width = FEATURE_WIDTHS[self.set_id] * (2 if self.kind == "HSF" else 1)
        if values.shape[1] != width:
            raise ValueError(f"{self.set_id} {self.kind} entries need {width} columns, got {values.shape[1]}")
        self.entries[utterance_id] = CacheEntry(utterance_id, bytes(content_hash), values)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, utterance_id: str) -> bool:
        return utterance_id in self.entries


def cache_path(cache_dir: str | Path, task: str, set_id: str, kind: str) -> Path:
    return Path(cache_dir) / f"{task}_{set_id}_{kind}.serb"


def manifest_path(path: str | Path) -> Path:
    return Path(path).with_suffix(".columns.json")


def file_digest(path: str | Path) -> bytes:
    """sha256 of a file's bytes."""
    digest = hashlib.sha256()
    with open(path, "rb") as file:
        for block in iter(lambda: file.read(1 << 20), b""):
            digest.update(block)
    return digest.digest()


def _encode_entry(entry: CacheEntry) -> bytes:
    ident = entry.utterance_id.encode("utf-8")
    if len(entry.content_hash) != _HASH_BYTES:
        raise ValueError(f"{entry.utterance_id}: content hash must be {_HASH_BYTES} bytes")
    body = b"".join((
        struct.pack("<H", len(ident)),
        ident,
        entry.content_hash,
        _SHAPE.pack(*entry.values.shape),
        np.ascontiguousarray(entry.values, dtype="<f4").tobytes(),
    ))
    return body + _CRC.pack(zlib.crc32(body))


def write_cache(path: str | Path, cache: FeatureCache) -> Path:
    """Write atomically: the file only appears once every byte is on disk."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = bytearray(_HEADER.pack(MAGIC, VERSION, SET_CODES[cache.set_id], KIND_CODES[cache.kind],
                                  cache.target_frames, len(cache.entries)))
    for entry in cache.entries.values():
        blob += _encode_entry(entry)
    blob += _CRC.pack(zlib.crc32(blob))

    handle, temp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(handle, "wb") as file:
            file.write(blob)
            file.flush()
            os.fsync(file.fileno())
        os.replace(temp_name, path)
    except BaseException:
        Path(temp_name).unlink(missing_ok=True)
        raise
    return path


def load_cache(path: str | Path) -> FeatureCache:
    """Read and verify a cache file.

    Raises:
        CacheError: If the file is missing, truncated, or an entry or the
            trailing checksum does not match; the message names the entry.
    """
    path = Path(path)
    if not path.exists():
        raise CacheError(f"no feature cache at {path}; run `extract` first")
    data = path.read_bytes()
    if len(data) < _HEADER.size + _CRC.size:
        raise CacheError(f"{path}: truncated header")

    magic, version, set_code, kind_code, target_frames, n_utts = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CacheError(f"{path}: not a feature cache")
    if version != VERSION:
        raise CacheError(f"{path}: unsupported cache version {version}")
    sets = {code: set_id for set_id, code in SET_CODES.items()}
    kinds = {code: kind for kind, code in KIND_CODES.items()}
    if set_code not in sets or kind_code not in kinds:
        raise CacheError(f"{path}: unknown set/kind codes {set_code}/{kind_code}")

    cache = FeatureCache(sets[set_code], kinds[kind_code], target_frames)
    offset = _HEADER.size
    for index in range(n_utts):
        start = offset
        label = f"entry {index}"
        try:
            (id_len,) = struct.unpack_from("<H", data, offset)
            offset += 2
            label = data[offset:offset + id_len].decode("utf-8", errors="replace")
            offset += id_len
            content_hash = data[offset:offset + _HASH_BYTES]
            offset += _HASH_BYTES
            rows, cols = _SHAPE.unpack_from(data, offset)
            offset += _SHAPE.size
            n_bytes = 4 * rows * cols
            if offset + n_bytes + _CRC.size > len(data):
                raise struct.error("payload runs past end of file")
            values = np.frombuffer(data, dtype="<f4", count=rows * cols, offset=offset).reshape(rows, cols)
            offset += n_bytes
            (stored_crc,) = _CRC.unpack_from(data, offset)
        except (struct.error, ValueError) as error:
            raise CacheError(f"{path}: truncated at {label} ({error})") from error
        if zlib.crc32(data[start:offset]) != stored_crc:
            raise CacheError(f"{path}: checksum mismatch in entry {label!r}")
        offset += _CRC.size
        cache.entries[label] = CacheEntry(label, content_hash, values.copy())

    if len(data) != offset + _CRC.size:
        raise CacheError(f"{path}: {len(data) - offset - _CRC.size} unexpected trailing bytes")
    if zlib.crc32(data[:offset]) != _CRC.unpack_from(data, offset)[0]:
        raise CacheError(f"{path}: file checksum mismatch")
    return cache


def derive_hsf(lld: FeatureCache, before_padding: bool = True,
               frame_hop_s: float = 0.010, frame_len_s: float = 0.025) -> FeatureCache:
    """Mean+Std cache computed from an LLD cache."""
    if lld.kind != "LLD":
        raise ValueError(f"HSF is derived from an LLD cache, got {lld.kind}")
    hsf = FeatureCache(lld.set_id, "HSF", lld.target_frames)
    for entry in lld.entries.values():
        matrix = FrameMatrix(entry.values.astype(np.float64), frame_hop_s, frame_len_s, set_id=lld.set_id)
        vector = utterance_hsf(matrix, lld.target_frames, before_padding)
        hsf.add(entry.utterance_id, entry.content_hash, vector.values)
    return hsf


def write_manifest(path: str | Path, column_names: Iterable[str], settings: dict) -> Path:
    """Write the column names and extraction settings next to a cache file."""
    target = manifest_path(path)
    target.write_text(json.dumps({"columns": list(column_names), **settings}, indent=2, sort_keys=True))
    return target


def read_manifest(path: str | Path) -> dict:
    """The manifest written next to `path`, or {} when it is missing or unreadable."""
    try:
        return json.loads(manifest_path(path).read_text())
    except (OSError, ValueError):
        return {}


def settings_fingerprint(settings: dict) -> str:
    """Stable sha256 over a JSON-serializable settings mapping."""
    text = json.dumps(settings, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class Dataset(NamedTuple):
    X: np.ndarray
    y: np.ndarray
    lengths: np.ndarray
    actors: np.ndarray
    ids: tuple[str, ...]


def load_dataset(cache: FeatureCache, records: Iterable[UtteranceRecord]) -> Dataset:
    """Model tensors for `records`, in record order.

    Raises:
        CacheError: If an utterance has no cache entry.
    """
    records = list(records)
    missing = [r.utterance_id for r in records if r.utterance_id not in cache]
    if missing:
        raise CacheError(
            f"{cache.set_id} {cache.kind} cache lacks {len(missing)} utterances (first: {missing[0]}); "
            "run `extract` again"
        )
    arrays = [cache.entries[r.utterance_id].values.astype(np.float64) for r in records]
    X, lengths = to_model_input(arrays, cache.kind, cache.target_frames)
    return Dataset(
        X,
        np.array([r.emotion_label for r in records], dtype=int),
        lengths,
        np.array([r.actor_id for r in records], dtype=int),
        tuple(r.utterance_id for r in records),
    )
