"""
Volume Models for EM Boundary Net.

This module defines the Pydantic models that describe dense 3D grids:
1. Windows used to cut patches out of stacks
2. Sidecar metadata stored next to every raw payload
3. Volumes pairing a payload array with its metadata

Arrays are indexed [x, y, z]; the x-fastest storage order is applied when
payloads are written or read.
"""

from typing import Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


Dims = Tuple[int, int, int]

DTYPE_WIDTH = {"u8": 1, "f32": 4, "u32": 4}
NUMPY_DTYPE = {"u8": np.dtype("<u1"), "f32": np.dtype("<f4"), "u32": np.dtype("<u4")}


class Window(BaseModel):
    """
    Axis-aligned box inside a volume.

    Offsets are non-negative voxel coordinates of the first corner; the box
    spans `shape` voxels along each axis.
    """

    offset: Dims = Field(
        default=(0, 0, 0),
        description="First voxel of the window (ox, oy, oz)"
    )
    shape: Dims = Field(
        description="Window extent (wx, wy, wz)"
    )

    @field_validator('offset')
    @classmethod
    def validate_offset(cls, v):
        """Validate offsets are non-negative."""
        if any(o < 0 for o in v):
            raise ValueError('offset components must be non-negative')
        return v

    @field_validator('shape')
    @classmethod
    def validate_shape(cls, v):
        """Validate the window is not empty."""
        if any(n < 1 for n in v):
            raise ValueError('shape components must be positive')
        return v

    def fits(self, dims: Dims) -> bool:
        """Check whether the window lies inside a volume of the given dims."""
        return all(o + n <= d for o, n, d in zip(self.offset, self.shape, dims))

    def compose(self, inner: "Window") -> "Window":
        """
        Express a window taken inside this one in the enclosing coordinates.

        Args:
            inner: Window relative to this window's first voxel

        Returns:
            Window relative to the enclosing volume
        """
        offset = tuple(a + b for a, b in zip(self.offset, inner.offset))
        return Window(offset=offset, shape=inner.shape)

    def slices(self) -> Tuple[slice, slice, slice]:
        """Get numpy slices selecting this window."""
        return tuple(slice(o, o + n) for o, n in zip(self.offset, self.shape))


class StackMeta(BaseModel):
    """
    Sidecar metadata of a raw volume payload.
    """

    dims: Dims = Field(
        description="Volume extent (nx, ny, nz)"
    )
    dtype: Literal["u8", "f32", "u32"] = Field(
        default="f32",
        description="Payload element type"
    )
    voxel_size_nm: Tuple[float, float, float] = Field(
        default=(1.0, 1.0, 1.0),
        description="Physical voxel size in nanometres (sx, sy, sz)"
    )
    role: Literal["image", "labels", "boundary_map"] = Field(
        default="image",
        description="What the payload represents"
    )

    @field_validator('dims')
    @classmethod
    def validate_dims(cls, v):
        """Validate every axis has at least one voxel."""
        if any(n < 1 for n in v):
            raise ValueError('dims must be positive')
        return v

    @field_validator('voxel_size_nm')
    @classmethod
    def validate_voxel_size(cls, v):
        """Validate voxel sizes are positive."""
        if any(s <= 0 for s in v):
            raise ValueError('voxel sizes must be positive')
        return v

    @property
    def payload_bytes(self) -> int:
        """Expected payload size in bytes."""
        nx, ny, nz = self.dims
        return nx * ny * nz * DTYPE_WIDTH[self.dtype]


class Volume(BaseModel):
    """
    Dense 3D grid with its metadata.

    `data` is a numpy array of shape dims; images and boundary maps are
    float32 and segmentations are uint32 with 0 meaning boundary/background.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    data: np.ndarray = Field(
        description="Array indexed [x, y, z]"
    )
    meta: Optional[StackMeta] = Field(
        default=None,
        description="Sidecar metadata; derived from data when missing"
    )

    @field_validator('data')
    @classmethod
    def validate_data(cls, v):
        """Validate the payload is a non-empty 3D array."""
        if not isinstance(v, np.ndarray) or v.ndim != 3:
            raise ValueError('volume data must be a 3D array')
        if min(v.shape) < 1:
            raise ValueError('volume dims must be positive')
        return v

    @model_validator(mode='after')
    def fill_meta(self):
        """Derive metadata from the payload when none was given."""
        if self.meta is None:
            if np.issubdtype(self.data.dtype, np.integer):
                dtype, role = "u32", "labels"
            else:
                dtype, role = "f32", "image"
            self.meta = StackMeta(dims=self.data.shape, dtype=dtype, role=role)
        elif tuple(self.meta.dims) != self.data.shape:
            raise ValueError(f'meta dims {self.meta.dims} do not match data shape {self.data.shape}')
        return self

    @property
    def dims(self) -> Dims:
        """Volume extent (nx, ny, nz)."""
        return tuple(int(n) for n in self.data.shape)
