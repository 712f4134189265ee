"""
Direct Convolution Method for EM Boundary Net

Accumulates the output tap by tap over shifted views of the input. In
deterministic mode every output voxel is computed by the same fixed sequence of
elementwise multiply-adds (taps in z-major order, then input maps in order), so
the result for a voxel does not depend on the size of the volume around it.
"""

import logging

import numpy as np

from .base_method import (
    BaseConvolutionMethod, Dims, tap_offsets, tap_slices, valid_output_shape, work_dtype,
)

logger = logging.getLogger(__name__)


class DirectConvolution(BaseConvolutionMethod):
    """
    Direct (spatial-domain) sparse convolution.

    Outside deterministic mode the per-tap channel contraction is handed to
    BLAS through np.tensordot.
    """

    name = "direct"

    def forward(self, x: np.ndarray, w: np.ndarray, sparsity: Dims) -> np.ndarray:
        """
        Convolve input maps with weights.

        Args:
            x: Input maps (in_maps, nx, ny, nz)
            w: Weights (out_maps, in_maps, kx, ky, kz)
            sparsity: Tap spacing

        Returns:
            Output maps (out_maps, ox, oy, oz)
        """
        self._check_operands(x, w)
        extent = w.shape[2:]
        out_shape = valid_output_shape(x.shape[1:], extent, sparsity)
        out = np.zeros((w.shape[0],) + out_shape, dtype=work_dtype(x, w))
        taps = tap_offsets(extent)

        def compute(x_slab: np.ndarray, out_slab: np.ndarray) -> None:
            slab_shape = out_slab.shape[1:]
            for tap in taps:
                view = x_slab[(slice(None),) + tap_slices(tap, sparsity, slab_shape)]
                weights = w[(slice(None), slice(None)) + tap]
                if self.deterministic:
                    for i in range(view.shape[0]):
                        out_slab += weights[:, i, None, None, None] * view[i]
                else:
                    out_slab += np.tensordot(weights, view, axes=(1, 0))

        return self._run_slabs(out_shape, extent, sparsity, x, out, compute)
