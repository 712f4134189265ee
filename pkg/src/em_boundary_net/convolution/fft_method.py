"""
FFT Convolution Method for EM Boundary Net

Sparse taps are zero-upsampled into a dense ((k - 1) * s + 1)-sized kernel and
flipped, turning cross-correlation into convolution. Transforms use the next
fast length at or above the input extent; the valid part of a circular
convolution of that length is free of wrap-around, so it is cropped out
directly.
"""

import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy import fft as sp_fft

from .base_method import BaseConvolutionMethod, Dims, footprint, valid_output_shape, work_dtype

logger = logging.getLogger(__name__)


class FFTConvolution(BaseConvolutionMethod):
    """
    Frequency-domain sparse convolution.

    Input maps are transformed once; each output map's kernels are transformed,
    multiplied and summed over input maps, and inverted. Output maps are
    processed in parallel.
    """

    name = "fft"

    def forward(self, x: np.ndarray, w: np.ndarray, sparsity: Dims) -> np.ndarray:
        """
        Convolve input maps with weights via FFT.

        Args:
            x: Input maps (in_maps, nx, ny, nz)
            w: Weights (out_maps, in_maps, kx, ky, kz)
            sparsity: Tap spacing

        Returns:
            Output maps (out_maps, ox, oy, oz)
        """
        self._check_operands(x, w)
        dims = x.shape[1:]
        out_shape = valid_output_shape(dims, w.shape[2:], sparsity)
        reach = footprint(w.shape[2:], sparsity)
        fshape = tuple(sp_fft.next_fast_len(int(n), real=True) for n in dims)
        axes = (1, 2, 3)
        dtype = work_dtype(x, w)

        x_hat = sp_fft.rfftn(x.astype(dtype, copy=False), s=fshape, axes=axes,
                             workers=self.workers)

        # upsample taps onto the sparse grid, then flip for convolution
        dense = np.zeros(w.shape[:2] + reach, dtype=dtype)
        dense[:, :, ::sparsity[0], ::sparsity[1], ::sparsity[2]] = w
        flipped = dense[:, :, ::-1, ::-1, ::-1]

        crop = (slice(reach[0] - 1, dims[0]), slice(reach[1] - 1, dims[1]),
                slice(reach[2] - 1, dims[2]))
        out = np.empty((w.shape[0],) + out_shape, dtype=dtype)

        def compute(o: int) -> None:
            k_hat = sp_fft.rfftn(flipped[o], s=fshape, axes=axes)
            y_hat = (k_hat * x_hat).sum(axis=0)
            out[o] = sp_fft.irfftn(y_hat, s=fshape, axes=(0, 1, 2))[crop]

        if self.workers == 1 or w.shape[0] == 1:
            for o in range(w.shape[0]):
                compute(o)
        else:
            with ThreadPoolExecutor(max_workers=min(self.workers, w.shape[0])) as pool:
                list(pool.map(compute, range(w.shape[0])))
        return out
