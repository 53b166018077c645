"""
Binary checkpoint container.

Layout (little-endian)::

    b"JNRS"  u32 version  32-byte config hash
    u32 length + JSON metadata (counters, tau_d, delta, ...)
    u32 store count
    per store:
        u32 length + JSON descriptor {name, params: [[param, shape], ...]}
        per param: value, Adam m, Adam v (float32 each), Adam step (float32)

Metadata and descriptors are written with sorted keys, so equal states give
byte-identical files.
"""

import json
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import numpy as np

logger = logging.getLogger(__name__)

MAGIC = b"JNRS"
VERSION = 1
_HEADER = struct.Struct("<4sI32s")
_U32 = struct.Struct("<I")
_FIELDS = ("value", "m", "v")

StoreState = Dict[str, Dict[str, np.ndarray]]


class CheckpointError(Exception):
    """Raised for unreadable, truncated or incompatible checkpoints."""
    pass


@dataclass
class Checkpoint:
    config_hash: str
    metadata: Dict[str, Any] = field(default_factory=dict)
    stores: Dict[str, StoreState] = field(default_factory=dict)


def _json_bytes(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    config_hash = bytes.fromhex(checkpoint.config_hash)
    if len(config_hash) != 32:
        raise CheckpointError("config hash must be a SHA-256 hex digest")
    parts = [_HEADER.pack(MAGIC, VERSION, config_hash)]
    meta = _json_bytes(checkpoint.metadata)
    parts += [_U32.pack(len(meta)), meta, _U32.pack(len(checkpoint.stores))]
    for store_name in sorted(checkpoint.stores):
        params = checkpoint.stores[store_name]
        names = sorted(params)
        descriptor = _json_bytes({
            "name": store_name,
            "params": [[name, list(np.asarray(params[name]["value"]).shape)] for name in names],
        })
        parts += [_U32.pack(len(descriptor)), descriptor]
        for name in names:
            entry = params[name]
            for key in _FIELDS:
                parts.append(np.ascontiguousarray(entry[key], dtype="<f4").tobytes())
            parts.append(np.asarray(entry["step"], dtype="<f4").reshape(1).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data = data
        self.pos = 0
        self.source = source

    def take(self, size: int) -> bytes:
        if self.pos + size > len(self.data):
            raise CheckpointError(f"{self.source}: truncated checkpoint at byte {self.pos}")
        chunk = self.data[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(_U32.size))[0]

    def json(self) -> Any:
        raw = self.take(self.u32())
        try:
            return json.loads(raw.decode("utf-8"))
        except ValueError as e:
            raise CheckpointError(f"{self.source}: corrupt JSON section: {e}")

    def floats(self, shape) -> np.ndarray:
        count = int(np.prod(shape)) if len(shape) else 1
        return np.frombuffer(self.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)


def decode_checkpoint(data: bytes, source: str = "<bytes>") -> Checkpoint:
    reader = _Reader(data, source)
    magic, version, config_hash = _HEADER.unpack(reader.take(_HEADER.size))
    if magic != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint (magic {magic!r})")
    if version != VERSION:
        raise CheckpointError(f"{source}: unsupported checkpoint version {version} (expected {VERSION})")
    metadata = reader.json()
    stores: Dict[str, StoreState] = {}
    for _ in range(reader.u32()):
        descriptor = reader.json()
        params: StoreState = {}
        for name, shape in descriptor["params"]:
            shape = tuple(shape)
            entry = {key: reader.floats(shape) for key in _FIELDS}
            entry["step"] = reader.floats((1,))
            params[name] = entry
        stores[descriptor["name"]] = params
    if reader.pos != len(data):
        raise CheckpointError(f"{source}: {len(data) - reader.pos} trailing bytes")
    return Checkpoint(config_hash=config_hash.hex(), metadata=metadata, stores=stores)


def save_checkpoint(checkpoint: Checkpoint, path: Union[str, Path]) -> Path:
    """Write atomically (temporary file, then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = encode_checkpoint(checkpoint)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
    logger.info(f"Checkpoint saved: {path} ({len(data)} bytes)")
    return path


def load_checkpoint(path: Union[str, Path], expected_hash: Optional[str] = None, force: bool = False) -> Checkpoint:
    """
    Read a checkpoint; nothing is returned unless the whole file parses.

    Raises:
        CheckpointError: missing, truncated or wrong-version file, or a config
            hash mismatch without ``force``
    """
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    checkpoint = decode_checkpoint(path.read_bytes(), str(path))
    if expected_hash is not None and checkpoint.config_hash != expected_hash:
        message = (f"{path}: written with config {checkpoint.config_hash[:12]}, "
                   f"current config is {expected_hash[:12]}")
        if not force:
            raise CheckpointError(message + " (use --force to load anyway)")
        logger.warning(message)
    logger.info(f"Checkpoint loaded: {path} (epoch {checkpoint.metadata.get('state', {}).get('epoch')})")
    return checkpoint


def stores_state(stores: Mapping[str, Any]) -> Dict[str, StoreState]:
    """Export every ParameterStore by name."""
    return {name: store.export_state() for name, store in stores.items()}
