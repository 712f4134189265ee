"""
Synthetic anisotropic EM-like stacks for EM Boundary Net.

Cells are the Voronoi regions of random seeds under a distance that shrinks
z offsets, so cells run as columns through many slices. The image draws dark
membranes along label transitions over per-cell gray levels, smooths in-plane,
degrades each slice (intensity jitter and a sub-pixel misalignment) and adds
Gaussian noise.
"""

import logging
from typing import Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from ..core.training import derive_boundary_labels
from ..models.errors import ConfigurationError
from ..models.volume import StackMeta, Volume

logger = logging.getLogger(__name__)

Z_ELONGATION = 4.0
VOXEL_SIZE_NM = (7.0, 7.0, 40.0)
MEMBRANE_LEVEL = 0.1
CELL_LEVELS = (0.55, 0.9)
SMOOTHING_SIGMA = (1.0, 1.0, 0.0)
JITTER_AMPLITUDE = 0.05


def voronoi_cells(rng: np.random.Generator, dims: Sequence[int], n_cells: int) -> np.ndarray:
    """
    Label every voxel with its nearest seed (1-based), z distances shrunk.

    Returns:
        uint32 labels; cells that own no voxel are absent
    """
    nx, ny, nz = dims
    seeds = rng.uniform((0, 0, 0), (nx, ny, nz), size=(n_cells, 3))
    scale = np.array([1.0, 1.0, 1.0 / Z_ELONGATION])
    grid = np.stack(np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij"),
                    axis=-1).reshape(-1, 3)
    _, nearest = cKDTree(seeds * scale).query(grid * scale)
    return (nearest.reshape(nx, ny, nz) + 1).astype(np.uint32)


def slice_shift(rng: np.random.Generator, z_blur: float) -> np.ndarray:
    """In-plane (dx, dy) misalignment of one slice, with length at most z_blur."""
    radius = rng.uniform(0.0, z_blur)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    return radius * np.array([np.cos(angle), np.sin(angle)])


def render_image(rng: np.random.Generator, truth: np.ndarray, z_blur: float,
                 noise_sd: float) -> np.ndarray:
    """
    Draw an EM-like image of a segmentation.

    Args:
        rng: Random generator
        truth: Cell labels
        z_blur: Per-slice misalignment bound in pixels (also scales intensity jitter)
        noise_sd: Standard deviation of the additive noise

    Returns:
        float32 image in [0, 1]
    """
    gray = rng.uniform(*CELL_LEVELS, size=int(truth.max()) + 1)
    image = gray[truth]
    image[derive_boundary_labels(truth) > 0] = MEMBRANE_LEVEL
    image = ndimage.gaussian_filter(image, sigma=SMOOTHING_SIGMA)

    if z_blur > 0:
        for z in range(image.shape[2]):
            shift = slice_shift(rng, z_blur)
            image[:, :, z] = ndimage.shift(image[:, :, z], shift, order=1, mode="nearest")
            image[:, :, z] += rng.uniform(-1.0, 1.0) * JITTER_AMPLITUDE * min(z_blur, 1.0)
    if noise_sd > 0:
        image = image + rng.normal(0.0, noise_sd, size=image.shape)
    return np.clip(image, 0.0, 1.0).astype(np.float32)


def synth_generate(seed: int, dims: Sequence[int] = (96, 96, 16), n_cells: int = 30,
                   z_blur: float = 0.5, noise_sd: float = 0.05) -> Tuple[Volume, Volume]:
    """
    Generate an aligned (image, truth) pair.

    Args:
        seed: Random seed; equal seeds give identical pairs
        dims: Stack extent (nx, ny, nz), nx and ny at least 32
        n_cells: Number of Voronoi seeds, at least 2
        z_blur: Per-slice misalignment bound in pixels
        noise_sd: Additive noise standard deviation

    Returns:
        Tuple of (image Volume, truth Volume)

    Raises:
        ConfigurationError: On degenerate parameters
    """
    dims = tuple(int(n) for n in dims)
    if len(dims) != 3 or dims[0] < 32 or dims[1] < 32 or dims[2] < 1:
        raise ConfigurationError(f"synthetic stacks need x, y >= 32 and z >= 1, got {dims}")
    if n_cells < 2:
        raise ConfigurationError(f"n_cells must be at least 2, got {n_cells}")
    if z_blur < 0 or noise_sd < 0:
        raise ConfigurationError("z_blur and noise_sd must be non-negative")

    rng = np.random.default_rng(seed)
    truth = voronoi_cells(rng, dims, n_cells)
    present = len(np.unique(truth))
    if present < n_cells:
        logger.warning(f"Only {present} of {n_cells} cells own voxels in {dims}")
    image = render_image(rng, truth, z_blur, noise_sd)

    image_meta = StackMeta(dims=dims, dtype="f32", voxel_size_nm=VOXEL_SIZE_NM, role="image")
    truth_meta = StackMeta(dims=dims, dtype="u32", voxel_size_nm=VOXEL_SIZE_NM, role="labels")
    return Volume(data=image, meta=image_meta), Volume(data=truth, meta=truth_meta)
