"""
Base Segmenter Interface for EM Boundary Net

This module defines the abstract base class every 2D segmentation back-end
implements. A segmenter turns a boundary-probability map into a label volume,
slice by slice, with labels unique across the whole volume.
"""

from abc import ABC, abstractmethod
from typing import Dict, List, Optional

import numpy as np
from skimage.segmentation import relabel_sequential

from ..config.settings import Settings, get_settings


class BaseSegmenter(ABC):
    """
    Abstract base class for segmentation back-ends.

    Subclasses segment one z slice at a time; the base class handles the
    slice loop and makes labels unique across slices.
    """

    name: str = ""

    def __init__(self, settings: Optional[Settings] = None):
        """
        Initialize the segmenter.

        Args:
            settings: Application settings supplying default parameter grids
        """
        self.settings = settings or get_settings()

    @abstractmethod
    def validate_params(self, params: Dict[str, float]) -> None:
        """
        Validate a parameter setting.

        Raises:
            ConfigurationError: If the setting is invalid
        """
        pass

    @abstractmethod
    def segment_slice(self, plane: np.ndarray, params: Dict[str, float]) -> np.ndarray:
        """
        Segment one 2D map.

        Args:
            plane: Boundary probabilities of one slice, indexed [x, y]
            params: Parameter setting

        Returns:
            Integer labels, 0 for boundary
        """
        pass

    @abstractmethod
    def default_grid(self) -> List[Dict[str, float]]:
        """
        Parameter settings line-searched by default.

        Returns:
            List of parameter dicts
        """
        pass

    def segment(self, boundary_map: np.ndarray, **params: float) -> np.ndarray:
        """
        Segment every z slice independently.

        Args:
            boundary_map: Boundary probabilities indexed [x, y, z]
            **params: Parameter setting

        Returns:
            uint32 label volume; labels never repeat across slices
        """
        self.validate_params(params)
        boundary_map = np.asarray(boundary_map)
        labels = np.zeros(boundary_map.shape, dtype=np.uint32)
        offset = 0
        for z in range(boundary_map.shape[2]):
            plane, _, _ = relabel_sequential(self.segment_slice(boundary_map[:, :, z], params))
            nonzero = plane > 0
            labels[:, :, z][nonzero] = plane[nonzero] + offset
            offset += int(plane.max()) if plane.size else 0
        return labels
