"""
Convolution Method Factory for EM Boundary Net

This module owns the convolution methods a run uses and decides, per conv
node, whether the direct or the FFT method evaluates it. Choices come from
self-tuning (timing both methods on trial data) and stay fixed for the run.
"""

import logging
import statistics
import time
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Type

import numpy as np

from ..config.settings import Settings, get_settings
from ..models.tuning import LayerTiming
from .base_method import BaseConvolutionMethod, Dims
from .direct_method import DirectConvolution
from .fft_method import FFTConvolution
from .max_filter import max_filter_backward, max_filter_forward

logger = logging.getLogger(__name__)

AGREEMENT_TOLERANCE = 1e-4


def relative_difference(a: np.ndarray, b: np.ndarray) -> float:
    """Largest absolute difference scaled by the output magnitude (at least 1)."""
    scale = max(1.0, float(np.max(np.abs(a))) if a.size else 1.0)
    return float(np.max(np.abs(a.astype(np.float64) - b))) / scale if a.size else 0.0


class ConvolutionEngine:
    """
    Per-run registry of convolution methods and per-node method choices.

    Deterministic mode always evaluates with the direct method, whose
    accumulation order is fixed.
    """

    # Priority order: the first entry is the fallback for untuned layers
    METHOD_PRIORITY: List[Tuple[str, Type[BaseConvolutionMethod]]] = [
        ("direct", DirectConvolution),
        ("fft", FFTConvolution),
    ]

    def __init__(self, settings: Optional[Settings] = None, workers: Optional[int] = None,
                 deterministic: Optional[bool] = None):
        """
        Initialize the engine.

        Args:
            settings: Application settings (auto-loaded if not provided)
            workers: Worker thread cap (settings value if not provided)
            deterministic: Deterministic mode (settings value if not provided)
        """
        self.settings = settings or get_settings()
        self.workers = workers or self.settings.worker_count()
        self.deterministic = self.settings.deterministic if deterministic is None else deterministic
        self._methods: Dict[str, BaseConvolutionMethod] = {}
        self._choices: Dict[str, str] = {}
        self.reports: Dict[str, LayerTiming] = {}

    def get_method(self, method_name: str) -> BaseConvolutionMethod:
        """
        Get a method instance, creating it if necessary.

        Raises:
            ValueError: If the method name is not supported
        """
        if method_name not in self._methods:
            method_map = dict(self.METHOD_PRIORITY)
            if method_name not in method_map:
                raise ValueError(f"Unsupported convolution method: {method_name}")
            self._methods[method_name] = method_map[method_name](
                workers=self.workers, deterministic=self.deterministic)
        return self._methods[method_name]

    def method_for(self, node: str) -> BaseConvolutionMethod:
        """Method evaluating a node (direct unless tuning chose otherwise)."""
        if self.deterministic:
            return self.get_method("direct")
        return self.get_method(self._choices.get(node, self.METHOD_PRIORITY[0][0]))

    def set_choice(self, node: str, method_name: str) -> None:
        """Pin the method used for a node."""
        self.get_method(method_name)
        self._choices[node] = method_name

    @property
    def choices(self) -> Dict[str, str]:
        """Recorded method choice per node."""
        return dict(self._choices)

    # ------------------------------------------------------------------
    # kernels
    # ------------------------------------------------------------------

    def conv_forward(self, node: str, x: np.ndarray, w: np.ndarray, sparsity: Dims) -> np.ndarray:
        """Convolve with the method chosen for `node`."""
        return self.method_for(node).forward(x, w, sparsity)

    def conv_backward(self, node: str, x: np.ndarray, w: np.ndarray, sparsity: Dims,
                      grad_out: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Adjoint of conv_forward."""
        return self.method_for(node).backward(x, w, sparsity, grad_out)

    def max_filter_forward(self, x: np.ndarray, window: Sequence[int], sparsity: Dims):
        """Dense max-filter with argmax tracking."""
        return max_filter_forward(x, window, sparsity)

    def max_filter_backward(self, argmax: np.ndarray, grad_out: np.ndarray,
                            input_dims: Sequence[int]) -> np.ndarray:
        """Adjoint of max_filter_forward."""
        return max_filter_backward(argmax, grad_out, input_dims)

    # ------------------------------------------------------------------
    # self-tuning
    # ------------------------------------------------------------------

    def time_layer(self, input_shape: Sequence[int], kernel_shape: Sequence[int],
                   sparsity: Dims, trials: int, node: str = "",
                   seed: int = 0) -> LayerTiming:
        """
        Time both methods on random trial data of the given shapes.

        Args:
            input_shape: (nx, ny, nz) or (in_maps, nx, ny, nz)
            kernel_shape: (kx, ky, kz) or (out_maps, in_maps, kx, ky, kz)
            sparsity: Tap spacing
            trials: Repetitions per method; 0 skips timing
            node: Node name for the report
            seed: Trial data seed

        Returns:
            LayerTiming with both medians, their agreement and the choice
        """
        input_shape = tuple(int(n) for n in input_shape)
        kernel_shape = tuple(int(n) for n in kernel_shape)
        if len(input_shape) == 3:
            input_shape = (1,) + input_shape
        if len(kernel_shape) == 3:
            kernel_shape = (1, input_shape[0]) + kernel_shape
        report = LayerTiming(node=node, input_shape=input_shape, kernel_shape=kernel_shape,
                             sparsity=tuple(sparsity))
        if trials <= 0:
            report.note = "tuning disabled"
            return report

        try:
            rng = np.random.default_rng(seed)
            x = rng.uniform(-1.0, 1.0, input_shape).astype(np.float32)
            w = rng.uniform(-1.0, 1.0, kernel_shape).astype(np.float32)
            medians: Dict[str, float] = {}
            outputs: Dict[str, np.ndarray] = {}
            for method_name, _ in self.METHOD_PRIORITY:
                method = self.get_method(method_name)
                samples = []
                for _ in range(trials):
                    start = time.perf_counter()
                    outputs[method_name] = method.forward(x, w, sparsity)
                    samples.append((time.perf_counter() - start) * 1000.0)
                medians[method_name] = statistics.median(samples)
            report.direct_ms = medians["direct"]
            report.fft_ms = medians["fft"]
            report.max_relative_difference = relative_difference(outputs["direct"], outputs["fft"])
        except Exception as e:
            logger.warning(f"Tuning failed for {node or 'trial'}: {e}; using direct")
            report.note = f"timing failed: {e}"
            return report

        if report.max_relative_difference > AGREEMENT_TOLERANCE:
            logger.warning(f"FFT disagrees with direct on {node or 'trial'} "
                           f"({report.max_relative_difference:.2e}); using direct")
            report.note = "fft disagreement"
        elif report.fft_ms < report.direct_ms:
            report.choice = "fft"
        return report

    def tune(self, layers: Iterable[Tuple[str, Sequence[int], Sequence[int], Dims]],
             trials: Optional[int] = None) -> List[LayerTiming]:
        """
        Tune every listed layer and record the choices.

        Args:
            layers: (node, input_shape, kernel_shape, sparsity) per conv layer
            trials: Repetitions per method (settings value if not provided)

        Returns:
            One LayerTiming per layer
        """
        trials = self.settings.tune_trials if trials is None else trials
        reports = []
        for node, input_shape, kernel_shape, sparsity in layers:
            report = self.time_layer(input_shape, kernel_shape, sparsity, trials, node=node)
            self._choices[node] = report.choice
            self.reports[node] = report
            logger.info(f"Layer {node}: direct={report.direct_ms} ms fft={report.fft_ms} ms "
                        f"-> {report.choice}")
            reports.append(report)
        return reports
