"""
Single-volume kernel API.

Thin wrappers presenting the multi-map methods as operations on one volume
and one kernel, the form used by tuning trials, tests and the bench command.
"""

from typing import Optional, Sequence, Tuple

import numpy as np

from ..config.settings import get_settings
from .base_method import Dims
from .direct_method import DirectConvolution
from .fft_method import FFTConvolution
from .max_filter import max_filter_backward as _max_filter_backward
from .max_filter import max_filter_forward
from .method_factory import ConvolutionEngine


def _maps(v: np.ndarray) -> np.ndarray:
    return np.asarray(v, dtype=np.float32)[None]


def _weights(k: np.ndarray) -> np.ndarray:
    return np.asarray(k, dtype=np.float32)[None, None]


def _workers(workers: Optional[int]) -> int:
    return workers or get_settings().worker_count()


def conv_direct(volume: np.ndarray, kernel: np.ndarray, sparsity: Dims = (1, 1, 1),
                deterministic: bool = False, workers: Optional[int] = None) -> np.ndarray:
    """Valid sparse cross-correlation of one volume with one kernel (direct)."""
    method = DirectConvolution(workers=_workers(workers), deterministic=deterministic)
    return method.forward(_maps(volume), _weights(kernel), tuple(sparsity))[0]


def conv_fft(volume: np.ndarray, kernel: np.ndarray, sparsity: Dims = (1, 1, 1),
             workers: Optional[int] = None) -> np.ndarray:
    """Valid sparse cross-correlation of one volume with one kernel (FFT)."""
    method = FFTConvolution(workers=_workers(workers))
    return method.forward(_maps(volume), _weights(kernel), tuple(sparsity))[0]


def conv_backward(volume: np.ndarray, kernel: np.ndarray, sparsity: Dims,
                  grad_out: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Gradients (grad_input, grad_kernel) of conv_direct."""
    method = DirectConvolution(workers=1)
    grad_x, grad_w = method.backward(_maps(volume), _weights(kernel), tuple(sparsity),
                                     np.asarray(grad_out, dtype=np.float32)[None])
    return grad_x[0], grad_w[0, 0]


def max_filter(volume: np.ndarray, window: Sequence[int],
               sparsity: Dims = (1, 1, 1)) -> Tuple[np.ndarray, np.ndarray]:
    """Dense max-filter of one volume; returns (output, argmax)."""
    out, argmax = max_filter_forward(_maps(volume), tuple(window), tuple(sparsity))
    return out[0], argmax[0]


def max_filter_backward(argmax: np.ndarray, grad_out: np.ndarray,
                        input_dims: Sequence[int]) -> np.ndarray:
    """Route grad_out to the argmax positions of a single-volume max_filter."""
    return _max_filter_backward(np.asarray(argmax)[None],
                                np.asarray(grad_out, dtype=np.float32)[None], input_dims)[0]


def tune_layer(input_shape: Sequence[int], kernel_shape: Sequence[int], sparsity: Dims,
               trials: int, engine: Optional[ConvolutionEngine] = None) -> str:
    """
    Pick the faster method for a layer shape.

    Returns:
        "direct" or "fft"; "direct" without timing when trials == 0
    """
    engine = engine or ConvolutionEngine()
    return engine.time_layer(input_shape, kernel_shape, tuple(sparsity), trials).choice
