"""
2D segmentation back-ends for EM Boundary Net.

This package turns boundary maps into label volumes: thresholded connected
components and a seeded watershed, selectable by name through a factory.
"""

from .base_segmenter import BaseSegmenter
from .connected_components import ConnectedComponentsSegmenter, connected_components_2d
from .segmenter_factory import SegmenterFactory, get_segmenter
from .watershed import WatershedSegmenter, merge_small_basins, watershed_2d

__all__ = [
    "BaseSegmenter",
    "ConnectedComponentsSegmenter",
    "WatershedSegmenter",
    "SegmenterFactory",
    "get_segmenter",
    "connected_components_2d",
    "watershed_2d",
    "merge_small_basins",
]
