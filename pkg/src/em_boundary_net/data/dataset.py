"""
Dataset directories for EM Boundary Net.

A dataset directory holds one volume pair per stack:

    <stack>_image.{meta,raw}     image intensities
    <stack>_labels.{meta,raw}    ground-truth segmentation
"""

import logging
from pathlib import Path
from typing import List, Sequence, Union

from ..core.training import make_stack_pair
from ..models.errors import DataFormatError
from ..models.training import StackPair
from ..models.volume import Volume
from .synth import synth_generate
from .volume_io import read_volume, write_volume

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

IMAGE_SUFFIX = "_image"
LABELS_SUFFIX = "_labels"


def write_stack(directory: PathLike, name: str, image: Volume, truth: Volume) -> None:
    """Write one image/labels pair into a dataset directory."""
    directory = Path(directory)
    write_volume(directory / f"{name}{IMAGE_SUFFIX}", image)
    write_volume(directory / f"{name}{LABELS_SUFFIX}", truth)


def read_dataset(directory: PathLike) -> List[StackPair]:
    """
    Load every stack of a dataset directory, sorted by name.

    Raises:
        DataFormatError: If the directory holds no stacks or an image lacks labels
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise DataFormatError("dataset directory not found", str(directory))
    pairs = []
    for meta in sorted(directory.glob(f"*{IMAGE_SUFFIX}.meta")):
        name = meta.name[: -len(f"{IMAGE_SUFFIX}.meta")]
        labels = directory / f"{name}{LABELS_SUFFIX}"
        if not labels.with_name(labels.name + ".meta").exists():
            raise DataFormatError(f"stack {name!r} has an image but no labels", str(directory))
        image = read_volume(directory / f"{name}{IMAGE_SUFFIX}")
        truth = read_volume(labels)
        if image.dims != truth.dims:
            raise DataFormatError(f"stack {name!r}: image dims {image.dims} differ from "
                                  f"label dims {truth.dims}", str(directory))
        pairs.append(make_stack_pair(image.data, truth.data, name=name))
    if not pairs:
        raise DataFormatError("no `<stack>_image.meta` files found", str(directory))
    logger.info(f"Loaded {len(pairs)} stack(s) from {directory}")
    return pairs


def synth_dataset(directory: PathLike, seed: int, stacks: int, dims: Sequence[int],
                  n_cells: int, z_blur: float, noise_sd: float) -> List[str]:
    """
    Generate `stacks` synthetic stacks (seeds seed, seed+1, ...) into a directory.

    Returns:
        Names of the written stacks
    """
    names = []
    for k in range(stacks):
        image, truth = synth_generate(seed + k, dims, n_cells, z_blur, noise_sd)
        name = f"stack{k + 1}"
        write_stack(directory, name, image, truth)
        names.append(name)
    logger.info(f"Wrote {stacks} synthetic stack(s) of {tuple(dims)} to {directory}")
    return names
