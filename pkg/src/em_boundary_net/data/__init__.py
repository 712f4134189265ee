"""
Data I/O for EM Boundary Net.

This package reads and writes raw volumes with text sidecars, dataset
directories and checkpoints, and generates synthetic training stacks.
"""

from .checkpoint import checkpoint_spec, load_checkpoint, save_checkpoint
from .dataset import read_dataset, synth_dataset, write_stack
from .synth import synth_generate
from .volume_io import read_raw, read_volume, write_volume

__all__ = [
    "read_volume",
    "read_raw",
    "write_volume",
    "save_checkpoint",
    "load_checkpoint",
    "checkpoint_spec",
    "read_dataset",
    "write_stack",
    "synth_dataset",
    "synth_generate",
]
