"""
Geometric transforms on dense volumes.

Arrays are indexed [..., x, y, z]; any leading axes (feature-map channels)
are carried along untouched. Every function here is pure.
"""

import numpy as np

from ..models.errors import BoundsError, ShapeError
from ..models.volume import Window


def crop(v: np.ndarray, w: Window) -> np.ndarray:
    """
    Copy a window out of a volume.

    Args:
        v: Array whose last three axes are x, y, z
        w: Window in voxel coordinates of v

    Returns:
        New array of shape w.shape (leading axes preserved)

    Raises:
        BoundsError: If the window does not fit inside v
    """
    dims = v.shape[-3:]
    if len(dims) != 3 or not w.fits(dims):
        raise BoundsError(w.offset, w.shape, dims)
    return np.ascontiguousarray(v[(Ellipsis,) + w.slices()])


def dihedral_xy(v: np.ndarray, t: int) -> np.ndarray:
    """
    Apply one of the eight in-plane rotations/flips to every z slice.

    t = r + 4*f: the x axis is mirrored first when f == 1, then the plane is
    rotated by r quarter turns (out[i, j] = in[j, ny - 1 - i] for one turn).
    Quarter turns swap the x and y extents of the result.

    Args:
        v: Array whose last three axes are x, y, z
        t: Transform index in 0..7

    Returns:
        Transformed copy

    Raises:
        ValueError: If t is outside 0..7
    """
    if not isinstance(t, (int, np.integer)) or not 0 <= t <= 7:
        raise ValueError(f"dihedral index must be in 0..7, got {t!r}")
    if v.ndim < 3:
        raise ShapeError("dihedral_xy needs at least three axes", actual=v.shape)
    x_axis, y_axis = v.ndim - 3, v.ndim - 2
    out = v
    if t >= 4:
        out = np.flip(out, axis=x_axis)
    out = np.rot90(out, k=int(t) % 4, axes=(x_axis, y_axis))
    return np.ascontiguousarray(out)


def inverse_dihedral(t: int) -> int:
    """Index of the transform undoing dihedral_xy(., t)."""
    if not 0 <= t <= 7:
        raise ValueError(f"dihedral index must be in 0..7, got {t!r}")
    if t >= 4:
        return t
    return (4 - t) % 4
