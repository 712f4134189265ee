"""
Max-filtering: the dense variant of max-pooling.

A max-filter takes the sliding maximum over a (possibly sparse) window without
subsampling, so every feature map keeps the resolution of the input. The
forward pass records, for each output voxel, the x-fastest linear index of the
winning input voxel; ties go to the lowest index.
"""

from typing import Sequence, Tuple

import numpy as np

from ..models.errors import ShapeError
from .base_method import Dims, tap_offsets, tap_slices, valid_output_shape, work_dtype


def linear_index(dims: Sequence[int]) -> np.ndarray:
    """Array of x-fastest linear indices for a volume of the given dims."""
    total = int(np.prod(dims))
    return np.arange(total, dtype=np.int64).reshape(tuple(dims), order="F")


def max_filter_forward(x: np.ndarray, window: Sequence[int],
                       sparsity: Dims) -> Tuple[np.ndarray, np.ndarray]:
    """
    Sliding maximum over every map.

    Window offsets are visited in increasing linear-index order and a
    candidate replaces the running maximum only when strictly greater, which
    keeps the lowest index among equal values.

    Args:
        x: Input maps (channels, nx, ny, nz)
        window: Window extent (wx, wy, wz)
        sparsity: Spacing between window taps

    Returns:
        Tuple of (output maps, argmax) where argmax holds per-channel linear
        indices into the input spatial grid

    Raises:
        ShapeError: If the window footprint exceeds the input
    """
    out_shape = valid_output_shape(x.shape[1:], window, sparsity)
    index = linear_index(x.shape[1:])
    out = np.full((x.shape[0],) + out_shape, -np.inf, dtype=work_dtype(x))
    argmax = np.zeros((x.shape[0],) + out_shape, dtype=np.int64)
    for tap in tap_offsets(window):
        sl = tap_slices(tap, sparsity, out_shape)
        candidate = x[(slice(None),) + sl]
        better = candidate > out
        np.copyto(out, candidate, where=better)
        np.copyto(argmax, np.broadcast_to(index[sl], argmax.shape), where=better)
    return out, argmax


def max_filter_backward(argmax: np.ndarray, grad_out: np.ndarray,
                        input_dims: Sequence[int]) -> np.ndarray:
    """
    Route output gradients back to the recorded winners.

    Args:
        argmax: Winner indices from the matching forward call
        grad_out: Gradient with respect to the output maps (same shape as argmax)
        input_dims: Spatial extent of the forward input

    Returns:
        Gradient with respect to the input maps; collisions are summed

    Raises:
        ShapeError: If shapes disagree or an index lies outside input_dims
    """
    if argmax.shape != grad_out.shape:
        raise ShapeError("argmax and grad_out shapes differ", argmax.shape, grad_out.shape)
    channels = argmax.shape[0]
    total = int(np.prod(input_dims))
    if argmax.size and (argmax.min() < 0 or argmax.max() >= total):
        raise ShapeError("argmax index outside the input volume", (total,), (int(argmax.max()),))
    flat = argmax.reshape(channels, -1) + (np.arange(channels, dtype=np.int64) * total)[:, None]
    summed = np.bincount(flat.ravel(), weights=grad_out.reshape(channels, -1).ravel().astype(np.float64),
                         minlength=channels * total)
    grad_in = np.empty((channels,) + tuple(input_dims), dtype=work_dtype(grad_out))
    for c in range(channels):
        grad_in[c] = summed[c * total:(c + 1) * total].reshape(tuple(input_dims), order="F")
    return grad_in
