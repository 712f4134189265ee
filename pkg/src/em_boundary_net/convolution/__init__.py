"""
Convolution kernels for EM Boundary Net.

This package provides the sparse convolution methods (direct and FFT), dense
max-filtering, and the engine that self-tunes the method per layer.
"""

from .base_method import BaseConvolutionMethod, valid_output_shape
from .direct_method import DirectConvolution
from .fft_method import FFTConvolution
from .kernels import (
    conv_backward,
    conv_direct,
    conv_fft,
    max_filter,
    max_filter_backward,
    tune_layer,
)
from .method_factory import ConvolutionEngine

__all__ = [
    "BaseConvolutionMethod",
    "DirectConvolution",
    "FFTConvolution",
    "ConvolutionEngine",
    "valid_output_shape",
    "conv_direct",
    "conv_fft",
    "conv_backward",
    "max_filter",
    "max_filter_backward",
    "tune_layer",
]
