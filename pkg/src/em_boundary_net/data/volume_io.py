"""
Raw volume I/O for EM Boundary Net.

A volume `name` is stored as two files:

    name.meta   text sidecar, one `key = value` per line
    name.raw    little-endian payload, x fastest

Sidecar keys: `dims = nx ny nz`, `dtype = u8|f32|u32`,
`voxel_size_nm = sx sy sz`, `role = image|labels|boundary_map`.
"""

import logging
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np
from pydantic import ValidationError

from ..models.errors import DataFormatError
from ..models.volume import NUMPY_DTYPE, StackMeta, Volume

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def volume_paths(path: PathLike) -> tuple:
    """(sidecar, payload) paths for a volume given by base name or either file."""
    path = Path(path)
    if path.suffix in (".meta", ".raw"):
        path = path.with_suffix("")
    return path.with_name(path.name + ".meta"), path.with_name(path.name + ".raw")


def _parse_sidecar(path: Path) -> StackMeta:
    if not path.exists():
        raise DataFormatError("missing sidecar metadata file", str(path))
    fields: Dict[str, object] = {}
    for line_number, line in enumerate(path.read_text().splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise DataFormatError(f"line {line_number}: expected `key = value`", str(path))
        key, value = (part.strip() for part in text.split("=", 1))
        if key in ("dims", "voxel_size_nm"):
            fields[key] = tuple(value.split())
        else:
            fields[key] = value
    if "dims" not in fields or "dtype" not in fields:
        raise DataFormatError("sidecar must define dims and dtype", str(path))
    if fields["dtype"] not in NUMPY_DTYPE:
        raise DataFormatError(f"unknown dtype {fields['dtype']!r}", str(path))
    try:
        return StackMeta(**fields)
    except ValidationError as e:
        message = "; ".join(err["msg"] for err in e.errors())
        raise DataFormatError(f"invalid sidecar: {message}", str(path))


def read_raw(path: PathLike) -> tuple:
    """
    Read a payload in its stored dtype.

    Returns:
        Tuple of (array indexed [x, y, z], StackMeta)

    Raises:
        DataFormatError: On a missing sidecar, unknown dtype or size mismatch
    """
    meta_path, raw_path = volume_paths(path)
    meta = _parse_sidecar(meta_path)
    if not raw_path.exists():
        raise DataFormatError("missing payload file", str(raw_path))
    payload = raw_path.read_bytes()
    if len(payload) != meta.payload_bytes:
        raise DataFormatError("payload size does not match sidecar dims", str(raw_path),
                              meta.payload_bytes, len(payload))
    data = np.frombuffer(payload, dtype=NUMPY_DTYPE[meta.dtype]).reshape(meta.dims, order="F")
    return data.astype(data.dtype.newbyteorder("="), copy=True), meta


def read_volume(path: PathLike) -> Volume:
    """
    Read a volume, normalizing u8 intensities to [0, 1].

    Args:
        path: Base name, or the .meta/.raw file

    Returns:
        Volume; u8 payloads become float32 (value / 255), others keep their dtype
    """
    data, meta = read_raw(path)
    if meta.dtype == "u8":
        data = data.astype(np.float32) / np.float32(255.0)
    logger.debug(f"Read {meta.role} volume {meta.dims} ({meta.dtype}) from {path}")
    return Volume(data=data, meta=meta)


def write_volume(path: PathLike, volume: Union[Volume, np.ndarray],
                 meta: Optional[StackMeta] = None) -> None:
    """
    Write a volume and its sidecar.

    Args:
        path: Base name, or the .meta/.raw file
        volume: Volume or array indexed [x, y, z]
        meta: Metadata (taken from the Volume, or derived from the array)

    Float data written as u8 is taken to be in [0, 1] and scaled by 255.
    """
    if isinstance(volume, Volume):
        data, meta = volume.data, meta or volume.meta
    else:
        data = np.asarray(volume)
        meta = meta or Volume(data=data).meta
    if tuple(data.shape) != tuple(meta.dims):
        raise DataFormatError(f"array shape {data.shape} does not match meta dims {meta.dims}",
                              str(path))

    if meta.dtype == "u8" and np.issubdtype(data.dtype, np.floating):
        data = np.rint(np.clip(data, 0.0, 1.0) * 255.0)
    payload = np.asarray(data).astype(NUMPY_DTYPE[meta.dtype]).ravel(order="F").tobytes()

    meta_path, raw_path = volume_paths(path)
    meta_path.parent.mkdir(parents=True, exist_ok=True)
    raw_path.write_bytes(payload)
    meta_path.write_text(
        f"dims = {' '.join(str(n) for n in meta.dims)}\n"
        f"dtype = {meta.dtype}\n"
        f"voxel_size_nm = {' '.join(f'{s:g}' for s in meta.voxel_size_nm)}\n"
        f"role = {meta.role}\n"
    )
    logger.debug(f"Wrote {meta.role} volume {meta.dims} to {raw_path}")
