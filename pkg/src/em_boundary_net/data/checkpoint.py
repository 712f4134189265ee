"""
Checkpoint files for EM Boundary Net.

Binary layout, little-endian:

    8 bytes   magic  b"ZNNCKPT1"
    u32       spec text length, then the UTF-8 spec text
    u32       number of arrays, then per array in spec order:
                u16 tag length, tag (`node.weight`, `node.bias`,
                `node.weight_momentum`, `node.bias_momentum`),
                u8 ndim, u32 per dim, f32 values (x fastest)
    u64       update counter
    f64       smoothed training loss (NaN when none was recorded)
    u32       rng state length, then the JSON-encoded generator state
"""

import io
import json
import logging
import math
import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np

from ..core.netgraph import param_shapes
from ..core.spec_parser import parse_spec
from ..models.checkpoint import (
    CHECKPOINT_MAGIC,
    CHECKPOINT_MAGIC_PREFIX,
    CHECKPOINT_VERSION,
    Checkpoint,
)
from ..models.errors import CheckpointError, EngineError
from ..models.network import NetworkSpec, ParamState

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
FIELDS = (("weight", "weights"), ("bias", "biases"),
          ("weight_momentum", "weight_momentum"), ("bias_momentum", "bias_momentum"))


def _tagged_arrays(spec: NetworkSpec, params: ParamState, include_momentum: bool):
    for node in spec.conv_nodes:
        for suffix, attr in FIELDS:
            if not include_momentum and "momentum" in suffix:
                continue
            store = getattr(params, attr)
            if node.name in store:
                yield f"{node.name}.{suffix}", store[node.name]


def save_checkpoint(path: PathLike, spec: NetworkSpec, params: ParamState, update: int = 0,
                    rng_state: Optional[dict] = None, include_momentum: bool = True,
                    smoothed_loss: Optional[float] = None) -> int:
    """
    Write a checkpoint.

    Args:
        path: Output file
        spec: Network spec (embedded as text)
        params: Parameters
        update: Number of completed updates
        rng_state: Sampler generator state
        include_momentum: Store momentum buffers (needed for an exact resume)
        smoothed_loss: Moving-average training loss to carry across a resume

    Returns:
        Number of bytes written
    """
    buffer = io.BytesIO()
    spec_bytes = spec.source_text.encode("utf-8")
    buffer.write(CHECKPOINT_MAGIC)
    buffer.write(struct.pack("<I", len(spec_bytes)))
    buffer.write(spec_bytes)

    arrays = list(_tagged_arrays(spec, params, include_momentum))
    buffer.write(struct.pack("<I", len(arrays)))
    for tag, array in arrays:
        tag_bytes = tag.encode("utf-8")
        buffer.write(struct.pack("<H", len(tag_bytes)))
        buffer.write(tag_bytes)
        buffer.write(struct.pack("<B", array.ndim))
        buffer.write(struct.pack(f"<{array.ndim}I", *array.shape))
        buffer.write(np.asarray(array, dtype="<f4").ravel(order="F").tobytes())

    rng_bytes = json.dumps(rng_state).encode("utf-8") if rng_state is not None else b""
    buffer.write(struct.pack("<Q", update))
    buffer.write(struct.pack("<d", math.nan if smoothed_loss is None else smoothed_loss))
    buffer.write(struct.pack("<I", len(rng_bytes)))
    buffer.write(rng_bytes)

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    partial = path.with_name(path.name + ".partial")
    partial.write_bytes(buffer.getvalue())
    partial.replace(path)
    logger.info(f"Saved checkpoint at update {update} to {path} ({buffer.tell()} bytes)")
    return buffer.tell()


class _Reader:
    """Bounds-checked reads over a checkpoint payload."""

    def __init__(self, payload: bytes, path: str):
        self.payload = payload
        self.position = 0
        self.path = path

    def take(self, count: int) -> bytes:
        if self.position + count > len(self.payload):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        chunk = self.payload[self.position:self.position + count]
        self.position += count
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: PathLike) -> Checkpoint:
    """
    Read and validate a checkpoint.

    Args:
        path: Checkpoint file

    Returns:
        Checkpoint whose arrays match the shapes re-derived from its spec

    Raises:
        CheckpointError: On bad magic, an unknown version, truncation, or
            arrays that do not match the embedded spec
    """
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"{path}: no such checkpoint")
    reader = _Reader(path.read_bytes(), str(path))

    magic = reader.take(len(CHECKPOINT_MAGIC))
    if not magic.startswith(CHECKPOINT_MAGIC_PREFIX):
        raise CheckpointError(f"{path}: not a checkpoint (bad magic bytes {magic!r})")
    tail = magic[len(CHECKPOINT_MAGIC_PREFIX):]
    version = int(tail) if tail.isdigit() else None
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {tail!r}, "
                              f"expected {CHECKPOINT_VERSION}")

    (spec_length,) = reader.unpack("<I")
    spec_text = reader.take(spec_length).decode("utf-8")
    try:
        spec = parse_spec(spec_text)
    except EngineError as e:
        raise CheckpointError(f"{path}: embedded spec is invalid: {e}")
    shapes = param_shapes(spec)

    params = ParamState()
    (count,) = reader.unpack("<I")
    for _ in range(count):
        (tag_length,) = reader.unpack("<H")
        tag = reader.take(tag_length).decode("utf-8")
        (ndim,) = reader.unpack("<B")
        dims = reader.unpack(f"<{ndim}I")
        node, _, suffix = tag.rpartition(".")
        attr = dict(FIELDS).get(suffix)
        if node not in shapes or attr is None:
            raise CheckpointError(f"{path}: array {tag!r} does not belong to the embedded spec")
        expected = shapes[node][0] if suffix.startswith("weight") else shapes[node][1]
        if tuple(dims) != tuple(expected):
            raise CheckpointError(f"{path}: array {tag!r} has shape {tuple(dims)}, "
                                  f"spec requires {tuple(expected)}")
        size = int(np.prod(dims))
        values = np.frombuffer(reader.take(4 * size), dtype="<f4")
        getattr(params, attr)[node] = values.reshape(dims, order="F").astype(np.float32)

    missing = [name for name in shapes if name not in params.weights or name not in params.biases]
    if missing:
        raise CheckpointError(f"{path}: no parameters for conv node(s) {', '.join(missing)}")

    (update,) = reader.unpack("<Q")
    (smoothed_loss,) = reader.unpack("<d")
    (rng_length,) = reader.unpack("<I")
    rng_state = json.loads(reader.take(rng_length).decode("utf-8")) if rng_length else None
    if reader.position != len(reader.payload):
        raise CheckpointError(f"{path}: {len(reader.payload) - reader.position} trailing bytes")

    logger.info(f"Loaded checkpoint {path} at update {update}")
    return Checkpoint(spec_text=spec_text, params=params, update=update, rng_state=rng_state,
                      smoothed_loss=None if math.isnan(smoothed_loss) else smoothed_loss,
                      version=version)


def checkpoint_spec(checkpoint: Checkpoint) -> NetworkSpec:
    """Parse the spec embedded in a checkpoint."""
    return parse_spec(checkpoint.spec_text)

