"""
Base Convolution Method Interface for EM Boundary Net

This module defines the abstract base class every convolution method implements,
together with the shape arithmetic and the adjoint (backward) computation they
share. Convolution here is sparse valid cross-correlation:

    out[o, p] = sum_i sum_q w[o, i, q] * x[i, p + q * s]

over feature maps shaped (channels, x, y, z) and weights shaped
(out_maps, in_maps, kx, ky, kz).
"""

from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from itertools import product
from typing import Callable, List, Sequence, Tuple

import numpy as np

from ..models.errors import ShapeError


Dims = Tuple[int, int, int]


def footprint(extent: Sequence[int], sparsity: Sequence[int]) -> Dims:
    """Input extent covered by one output voxel: (k - 1) * s + 1 per axis."""
    return tuple((k - 1) * s + 1 for k, s in zip(extent, sparsity))


def valid_output_shape(dims: Sequence[int], extent: Sequence[int],
                       sparsity: Sequence[int]) -> Dims:
    """
    Compute the valid-only output extent of a sparse filter.

    Args:
        dims: Input spatial extent
        extent: Filter or window extent
        sparsity: Tap spacing

    Returns:
        Output spatial extent n - (k - 1) * s per axis

    Raises:
        ShapeError: If the input is smaller than the sparse footprint
    """
    if any(s < 1 for s in sparsity):
        raise ShapeError("sparsity components must be >= 1", actual=tuple(sparsity))
    reach = footprint(extent, sparsity)
    if any(n < f for n, f in zip(dims, reach)):
        raise ShapeError("input smaller than the sparse filter footprint",
                         expected=reach, actual=tuple(dims))
    return tuple(n - f + 1 for n, f in zip(dims, reach))


def work_dtype(*arrays: np.ndarray) -> type:
    """float64 when any operand is float64, else float32."""
    return np.float64 if any(np.asarray(a).dtype == np.float64 for a in arrays) else np.float32


def tap_offsets(extent: Sequence[int]) -> List[Dims]:
    """Filter tap coordinates in z-major, x-fastest order."""
    return [(a, b, c) for c, b, a in product(range(extent[2]), range(extent[1]), range(extent[0]))]


def tap_slices(tap: Sequence[int], sparsity: Sequence[int], out_shape: Sequence[int]):
    """Input slices read by one tap for every output voxel."""
    return tuple(slice(q * s, q * s + n) for q, s, n in zip(tap, sparsity, out_shape))


def output_slabs(out_shape: Sequence[int], workers: int) -> List[Tuple[int, int, int]]:
    """
    Split the output into disjoint slabs for parallel evaluation.

    Slabs run along z, or along y when there are fewer z slices than workers.

    Returns:
        List of (axis, start, stop) in spatial axis numbering
    """
    axis = 2 if out_shape[2] >= workers or out_shape[2] >= out_shape[1] else 1
    n = out_shape[axis]
    count = max(1, min(workers, n))
    bounds = np.linspace(0, n, count + 1).astype(int)
    return [(axis, int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]


class BaseConvolutionMethod(ABC):
    """
    Abstract base class for convolution methods.

    All methods compute the same valid sparse cross-correlation; they differ
    only in how. The backward pass is shared and always exact.
    """

    name: str = "base"

    def __init__(self, workers: int = 1, deterministic: bool = False):
        """
        Initialize the method.

        Args:
            workers: Maximum worker threads
            deterministic: Fix accumulation order for bit-identical reruns
        """
        self.workers = max(1, int(workers))
        self.deterministic = deterministic

    @abstractmethod
    def forward(self, x: np.ndarray, w: np.ndarray, sparsity: Dims) -> np.ndarray:
        """
        Convolve every output map with every input map and sum.

        Args:
            x: Input maps (in_maps, nx, ny, nz)
            w: Weights (out_maps, in_maps, kx, ky, kz)
            sparsity: Tap spacing (sx, sy, sz)

        Returns:
            Output maps (out_maps, ox, oy, oz) without bias
        """
        pass

    def backward(self, x: np.ndarray, w: np.ndarray, sparsity: Dims,
                 grad_out: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Exact adjoints of forward.

        Args:
            x: Input maps of the forward call
            w: Weights of the forward call
            sparsity: Tap spacing of the forward call
            grad_out: Gradient with respect to the output maps

        Returns:
            Tuple of (grad_x, grad_w)

        Raises:
            ShapeError: If grad_out does not have the forward output shape
        """
        self._check_operands(x, w)
        out_shape = valid_output_shape(x.shape[1:], w.shape[2:], sparsity)
        expected = (w.shape[0],) + out_shape
        if grad_out.shape != expected:
            raise ShapeError("grad_out does not match the forward output", expected, grad_out.shape)

        dtype = work_dtype(x, w, grad_out)
        grad_x = np.zeros(x.shape, dtype=dtype)
        grad_w = np.zeros(w.shape, dtype=dtype)
        for tap in tap_offsets(w.shape[2:]):
            window = (slice(None),) + tap_slices(tap, sparsity, out_shape)
            taps = w[(slice(None), slice(None)) + tap]
            grad_w[(slice(None), slice(None)) + tap] = np.tensordot(
                grad_out, x[window], axes=([1, 2, 3], [1, 2, 3]))
            grad_x[window] += np.tensordot(taps, grad_out, axes=(0, 0))
        return grad_x, grad_w

    def _check_operands(self, x: np.ndarray, w: np.ndarray) -> None:
        """Validate operand ranks and the channel match."""
        if x.ndim != 4 or w.ndim != 5:
            raise ShapeError("expected maps (c, x, y, z) and weights (o, i, kx, ky, kz)",
                             actual=(x.ndim, w.ndim))
        if x.shape[0] != w.shape[1]:
            raise ShapeError("input maps do not match weight in_maps", (w.shape[1],), (x.shape[0],))

    def _run_slabs(self, out_shape: Dims, extent: Sequence[int], sparsity: Dims,
                   x: np.ndarray, out: np.ndarray,
                   compute: Callable[[np.ndarray, np.ndarray], None]) -> np.ndarray:
        """
        Evaluate `compute(x_slab, out_slab)` over disjoint output slabs in parallel.

        Every output voxel is written by exactly one slab, so the result does
        not depend on the number of workers.
        """
        slabs = output_slabs(out_shape, self.workers)
        reach = footprint(extent, sparsity)

        def run(slab):
            axis, lo, hi = slab
            out_index = [slice(None)] * 4
            in_index = [slice(None)] * 4
            out_index[axis + 1] = slice(lo, hi)
            in_index[axis + 1] = slice(lo, hi + reach[axis] - 1)
            compute(x[tuple(in_index)], out[tuple(out_index)])

        if len(slabs) == 1:
            run(slabs[0])
        else:
            with ThreadPoolExecutor(max_workers=len(slabs)) as pool:
                list(pool.map(run, slabs))
        return out
