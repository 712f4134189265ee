"""
Segmenter Factory for EM Boundary Net

This module maps back-end names (as given on the command line) to segmenter
instances.
"""

import logging
from typing import Dict, List, Optional, Tuple, Type

from ..config.settings import Settings, get_settings
from ..models.errors import ConfigurationError
from .base_segmenter import BaseSegmenter
from .connected_components import ConnectedComponentsSegmenter
from .watershed import WatershedSegmenter

logger = logging.getLogger(__name__)


class SegmenterFactory:
    """
    Factory for creating segmentation back-ends by name.
    """

    # Listing order is the order reports are produced in
    SEGMENTERS: List[Tuple[str, Type[BaseSegmenter]]] = [
        ("cc", ConnectedComponentsSegmenter),
        ("ws", WatershedSegmenter),
    ]

    def __init__(self, settings: Optional[Settings] = None):
        """
        Initialize the factory.

        Args:
            settings: Application settings passed to every segmenter
        """
        self.settings = settings or get_settings()
        self._segmenters: Dict[str, BaseSegmenter] = {}

    def get_segmenter(self, name: str) -> BaseSegmenter:
        """
        Get a segmenter by name, creating it on first use.

        Raises:
            ConfigurationError: If the name is not a known back-end
        """
        if name not in self._segmenters:
            segmenter_map = dict(self.SEGMENTERS)
            if name not in segmenter_map:
                raise ConfigurationError(
                    f"Unsupported segmentation algorithm {name!r}; choose from {self.names()}")
            self._segmenters[name] = segmenter_map[name](self.settings)
            logger.debug(f"Created {name} segmenter")
        return self._segmenters[name]

    def names(self) -> List[str]:
        """Known back-end names."""
        return [name for name, _ in self.SEGMENTERS]


def get_segmenter(name: str, settings: Optional[Settings] = None) -> BaseSegmenter:
    """Convenience wrapper around SegmenterFactory.get_segmenter."""
    return SegmenterFactory(settings).get_segmenter(name)
