"""
Watershed segmentation for EM Boundary Net

Seeds are the 4-connected components of {map < t_low}. Basins are flooded
over the boundary map in order of increasing value, never entering pixels
with map >= t_high, which stay boundary. Basins smaller than min_size are then
merged into the neighbouring basin with the lowest shared boundary value.
"""

import itertools
import logging
from typing import Dict, List

import numpy as np
from skimage.measure import label
from skimage.segmentation import watershed

from ..models.errors import ConfigurationError
from .base_segmenter import BaseSegmenter

logger = logging.getLogger(__name__)


def _neighbour_edges(labels: np.ndarray, plane: np.ndarray):
    """4-neighbour pixel pairs between labelled pixels, with the max map value."""
    firsts, seconds, values = [], [], []
    for axis in (0, 1):
        lo = [slice(None)] * 2
        hi = [slice(None)] * 2
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        a, b = labels[tuple(lo)], labels[tuple(hi)]
        keep = (a > 0) & (b > 0) & (a != b)
        firsts.append(a[keep])
        seconds.append(b[keep])
        values.append(np.maximum(plane[tuple(lo)], plane[tuple(hi)])[keep])
    return np.concatenate(firsts), np.concatenate(seconds), np.concatenate(values)


def merge_small_basins(labels: np.ndarray, plane: np.ndarray, min_size: int) -> np.ndarray:
    """
    Merge basins below min_size pixels into a neighbour.

    The smallest basin (lowest label on ties) is merged first into the
    adjacent basin with the lowest shared boundary value (lowest label on
    ties), or set to 0 when it touches no other basin. Repeats until every
    basin has at least min_size pixels.

    Args:
        labels: 2D basin labels, 0 for boundary
        plane: 2D boundary map
        min_size: Minimum basin size; 0 disables merging

    Returns:
        Merged labels (new array)
    """
    if min_size <= 0:
        return labels
    first, second, value = _neighbour_edges(labels, plane)
    # owner[l] is the basin label l currently belongs to
    owner = np.arange(int(labels.max()) + 1)
    sizes = np.bincount(labels.ravel(), minlength=owner.size).astype(np.int64)
    sizes[0] = 0
    alive = set(int(l) for l in np.flatnonzero(sizes))

    while True:
        small = [l for l in alive if sizes[l] < min_size]
        if not small:
            break
        target = min(small, key=lambda l: (sizes[l], l))
        a, b = owner[first], owner[second]
        touching = ((a == target) & (b != target)) | ((b == target) & (a != target))
        alive.discard(target)
        if not touching.any():
            owner[owner == target] = 0
            sizes[target] = 0
            continue
        other = np.where(a[touching] == target, b[touching], a[touching])
        shared = value[touching]
        lowest = shared.min()
        into = int(other[shared == lowest].min())
        owner[owner == target] = into
        sizes[into] += sizes[target]
        sizes[target] = 0
        logger.debug(f"Merged basin {target} into {into} at boundary value {lowest:.3f}")

    return owner[labels]


class WatershedSegmenter(BaseSegmenter):
    """Seeded watershed with a flooding ceiling and size-based merging."""

    name = "ws"

    def validate_params(self, params: Dict[str, float]) -> None:
        if set(params) != {"t_low", "t_high", "min_size"}:
            raise ConfigurationError(
                f"watershed takes `t_low`, `t_high` and `min_size`, got {sorted(params)}")
        if not 0.0 <= params["t_low"] <= params["t_high"] <= 1.0:
            raise ConfigurationError("watershed thresholds need 0 <= t_low <= t_high <= 1")
        if params["min_size"] < 0:
            raise ConfigurationError("min_size must be non-negative")

    def segment_slice(self, plane: np.ndarray, params: Dict[str, float]) -> np.ndarray:
        plane = np.asarray(plane, dtype=np.float64)
        markers = label(plane < params["t_low"], connectivity=1)
        basins = watershed(plane, markers=markers, connectivity=1,
                           mask=plane < params["t_high"])
        return merge_small_basins(basins, plane, int(params["min_size"]))

    def default_grid(self) -> List[Dict[str, float]]:
        grid = []
        for t_low, t_high, min_size in itertools.product(self.settings.watershed_t_low_grid,
                                                         self.settings.watershed_t_high_grid,
                                                         self.settings.watershed_min_size_grid):
            if t_low <= t_high:
                grid.append({"t_low": t_low, "t_high": t_high, "min_size": float(min_size)})
        return grid


def watershed_2d(boundary_map: np.ndarray, t_low: float, t_high: float,
                 min_size: int = 0) -> np.ndarray:
    """
    Per-slice seeded watershed over the boundary map.

    Args:
        boundary_map: Boundary probabilities indexed [x, y, z]
        t_low: Seeds are components of map < t_low
        t_high: Pixels with map >= t_high stay boundary (label 0)
        min_size: Basins smaller than this are merged; 0 disables merging

    Returns:
        uint32 labels, unique across the volume
    """
    return WatershedSegmenter().segment(boundary_map, t_low=t_low, t_high=t_high,
                                        min_size=min_size)
