"""
Connected-components segmentation for EM Boundary Net

Thresholds the boundary map and labels the 4-connected components of the
remaining pixels in every slice.
"""

import logging
from typing import Dict, List

import numpy as np
from skimage.measure import label

from ..models.errors import ConfigurationError
from .base_segmenter import BaseSegmenter

logger = logging.getLogger(__name__)


class ConnectedComponentsSegmenter(BaseSegmenter):
    """Threshold at t, then 2D connected components of {map < t}."""

    name = "cc"

    def validate_params(self, params: Dict[str, float]) -> None:
        if set(params) != {"t"}:
            raise ConfigurationError(f"connected components take exactly `t`, got {sorted(params)}")

    def segment_slice(self, plane: np.ndarray, params: Dict[str, float]) -> np.ndarray:
        return label(plane < params["t"], connectivity=1)

    def default_grid(self) -> List[Dict[str, float]]:
        steps = int(round(1.0 / self.settings.threshold_step))
        return [{"t": k / steps} for k in range(steps + 1)]


def connected_components_2d(boundary_map: np.ndarray, t: float) -> np.ndarray:
    """
    Per-slice connected components of the pixels below threshold.

    Args:
        boundary_map: Boundary probabilities indexed [x, y, z]
        t: Pixels with map >= t are boundary (label 0)

    Returns:
        uint32 labels, unique across the volume
    """
    return ConnectedComponentsSegmenter().segment(boundary_map, t=t)
