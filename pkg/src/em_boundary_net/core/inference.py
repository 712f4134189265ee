"""
Whole-stack inference for EM Boundary Net.

The valid output region of a stack is tiled into output patches; each tile's
input window (patch grown by the field of view) is evaluated on its own and
the boundary probabilities are stitched back. Tiles are disjoint, so they run
in parallel without coordination.
"""

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..convolution.method_factory import ConvolutionEngine
from ..models.errors import ShapeError
from ..models.network import NetworkSpec, ParamState
from ..models.volume import Window
from .netgraph import forward, infer_plan
from .tensor import crop

logger = logging.getLogger(__name__)

Dims = Tuple[int, int, int]

UNKNOWN_PROBABILITY = 0.5


def _tiles(out_dims: Dims, out_patch: Dims) -> List[Window]:
    """Output tiles covering out_dims; the last tile per axis may be smaller."""
    starts = [range(0, n, p) for n, p in zip(out_dims, out_patch)]
    tiles = []
    for offset in itertools.product(*starts):
        shape = tuple(min(p, n - o) for o, p, n in zip(offset, out_patch, out_dims))
        tiles.append(Window(offset=offset, shape=shape))
    return tiles


def infer(spec: NetworkSpec, params: ParamState, images: Mapping[str, np.ndarray],
          out_patch: Sequence[int], engine: Optional[ConvolutionEngine] = None) -> np.ndarray:
    """
    Boundary probability map of a stack.

    Args:
        spec: Network spec
        params: Trained parameters
        images: Full-stack volume per input node name, all of equal dims
        out_patch: Output tile shape
        engine: Convolution engine (a default one if not provided)

    Returns:
        float32 map of dims (stack dims - field of view + 1)

    Raises:
        ShapeError: If the stack is smaller than the field of view
    """
    engine = engine or ConvolutionEngine()
    plan = infer_plan(spec)
    fov = plan.field_of_view()
    volumes = {name: np.asarray(images[name], dtype=np.float32) for name in spec.input_names
               if name in images}
    if len(volumes) != len(spec.input_names):
        raise ShapeError(f"missing inputs; network expects {spec.input_names}")
    dims = next(iter(volumes.values())).shape[-3:]
    out_dims = tuple(n - f + 1 for n, f in zip(dims, fov))
    if min(out_dims) < 1:
        raise ShapeError("stack smaller than the field of view", fov, dims)
    patch = tuple(max(1, min(int(p), n)) for p, n in zip(out_patch, out_dims))

    tiles = _tiles(out_dims, patch)
    result = np.empty(out_dims, dtype=np.float32)
    logger.info(f"Inference over {dims} with field of view {fov}: {len(tiles)} tile(s) of {patch}")

    # Tiles run in parallel on single-threaded engines sharing the tuned choices
    if engine.workers > 1 and len(tiles) > 1:
        tile_engine = ConvolutionEngine(engine.settings, workers=1,
                                        deterministic=engine.deterministic)
        for node, choice in engine.choices.items():
            tile_engine.set_choice(node, choice)
        workers = engine.workers
    else:
        tile_engine, workers = engine, 1

    def run(tile: Window) -> None:
        window = Window(offset=tile.offset,
                        shape=tuple(s + f - 1 for s, f in zip(tile.shape, fov)))
        inputs = {name: crop(v, window) for name, v in volumes.items()}
        boundary = forward(spec, params, inputs, engine=tile_engine, plan=plan).boundary
        result[tile.slices()] = boundary

    if workers == 1:
        for tile in tiles:
            run(tile)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, tiles))
    return result


def pad_to_stack(boundary_map: np.ndarray, fov: Sequence[int], dims: Sequence[int]) -> np.ndarray:
    """
    Place a valid-region map into a full-stack volume.

    The map sits at offset (fov - 1) // 2 per axis; voxels without a
    prediction are filled with 0.5.

    Args:
        boundary_map: Output of infer
        fov: Field of view of the producing network
        dims: Stack dims

    Returns:
        float32 volume of the stack dims
    """
    expected = tuple(n - f + 1 for n, f in zip(dims, fov))
    if boundary_map.shape != expected:
        raise ShapeError("map does not match stack dims minus field of view", expected,
                         boundary_map.shape)
    full = np.full(tuple(dims), UNKNOWN_PROBABILITY, dtype=np.float32)
    offset = tuple((f - 1) // 2 for f in fov)
    full[Window(offset=offset, shape=expected).slices()] = boundary_map
    return full


def crop_to_map(volume: np.ndarray, fov: Sequence[int]) -> np.ndarray:
    """Crop a full-stack volume to the voxels a network with this fov predicts."""
    dims = volume.shape[-3:]
    offset = tuple((f - 1) // 2 for f in fov)
    shape = tuple(n - f + 1 for n, f in zip(dims, fov))
    return crop(volume, Window(offset=offset, shape=shape))
