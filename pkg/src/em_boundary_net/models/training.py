"""
Training Models for EM Boundary Net.

This module defines the Pydantic models used by the training loop:
1. TrainConfig - hyperparameters of one training run
2. StackPair - an image stack aligned with its ground truth
3. PatchSample - one randomly drawn training patch
4. TrainLogRecord - one line of the training log
5. PipelineResult - everything the two-stage recursive protocol produces
"""

from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .network import ParamState


Dims = Tuple[int, int, int]


# Output patch and update counts of the published training runs
PUBLISHED_PRESETS: Dict[str, Dict[str, object]] = {
    "n4": {"patch": (200, 200, 1), "updates": 90_000},
    "vd2d": {"patch": (150, 150, 1), "updates": 60_000},
    "vd2d-continued": {"patch": (150, 150, 1), "updates": 30_000},
    "vd2d3d": {"patch": (100, 100, 1), "updates": 90_000},
}


class TrainConfig(BaseModel):
    """
    Hyperparameters of one training run.

    Defaults follow the published procedure: fixed learning rate 0.01 with
    momentum 0.9, loss rebalancing and in-plane augmentation on.
    """

    learning_rate: float = Field(
        default=0.01,
        description="Fixed SGD learning rate"
    )
    momentum: float = Field(
        default=0.9,
        description="Momentum coefficient"
    )
    updates: int = Field(
        default=1000,
        description="Number of gradient updates"
    )
    patch: Dims = Field(
        default=(32, 32, 1),
        description="Output patch shape (px, py, pz)"
    )
    seed: int = Field(
        default=0,
        description="Seed for initialization and patch sampling"
    )
    rebalance: bool = Field(
        default=True,
        description="Weight the per-pixel loss to balance boundary and non-boundary"
    )
    augment: bool = Field(
        default=True,
        description="Apply a random in-plane rotation/flip to every patch"
    )
    log_every: int = Field(
        default=100,
        description="Updates between training log records"
    )

    @field_validator('learning_rate')
    @classmethod
    def validate_learning_rate(cls, v):
        """Validate learning rate is positive."""
        if v <= 0:
            raise ValueError('learning_rate must be positive')
        return v

    @field_validator('momentum')
    @classmethod
    def validate_momentum(cls, v):
        """Validate momentum is in [0, 1)."""
        if not 0.0 <= v < 1.0:
            raise ValueError('momentum must be in [0, 1)')
        return v

    @field_validator('updates')
    @classmethod
    def validate_updates(cls, v):
        """Validate update count."""
        if v < 0:
            raise ValueError('updates must be non-negative')
        return v

    @field_validator('patch')
    @classmethod
    def validate_patch(cls, v):
        """Validate output patch shape."""
        if any(n < 1 for n in v):
            raise ValueError('patch components must be positive')
        return v

    @field_validator('log_every')
    @classmethod
    def validate_log_every(cls, v):
        """Validate log interval."""
        if v < 1:
            raise ValueError('log_every must be at least 1')
        return v

    @classmethod
    def preset(cls, name: str, **overrides) -> "TrainConfig":
        """
        Build a config from the published per-model settings.

        Args:
            name: One of PUBLISHED_PRESETS
            **overrides: Fields replacing preset values

        Returns:
            TrainConfig instance
        """
        if name not in PUBLISHED_PRESETS:
            raise ValueError(f"unknown preset {name!r}; choose from {sorted(PUBLISHED_PRESETS)}")
        values = dict(PUBLISHED_PRESETS[name])
        values.update(overrides)
        return cls(**values)


class StackPair(BaseModel):
    """
    An image stack with its ground truth.

    `boundary_labels` is derived from `truth`; `recursive_map` holds the
    fixed first-stage boundary map once the recursive stage starts.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    name: str = Field(
        default="stack",
        description="Stack identifier used in logs"
    )
    image: np.ndarray = Field(
        description="Image intensities in [0, 1], indexed [x, y, z]"
    )
    truth: np.ndarray = Field(
        description="Ground-truth segmentation, 0 = boundary/background"
    )
    boundary_labels: np.ndarray = Field(
        description="Binary boundary labels derived from truth"
    )
    recursive_map: Optional[np.ndarray] = Field(
        default=None,
        description="Fixed boundary map from the first stage, full stack dims"
    )

    @model_validator(mode='after')
    def validate_alignment(self):
        """Validate every volume has the image dims."""
        dims = self.image.shape
        if self.image.ndim != 3:
            raise ValueError('image must be a 3D array')
        for field_name in ('truth', 'boundary_labels', 'recursive_map'):
            value = getattr(self, field_name)
            if value is not None and value.shape != dims:
                raise ValueError(f'{field_name} dims {value.shape} differ from image dims {dims}')
        return self

    @property
    def dims(self) -> Dims:
        """Stack extent."""
        return tuple(int(n) for n in self.image.shape)


class PatchSample(BaseModel):
    """One training patch: network inputs, labels and loss weights."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    inputs: Dict[str, np.ndarray] = Field(
        description="Input windows by input node name"
    )
    labels: np.ndarray = Field(
        description="Boundary labels of the output patch"
    )
    weights: np.ndarray = Field(
        description="Per-voxel loss weights of the output patch"
    )
    stack_index: int = Field(
        description="Index of the stack the patch came from"
    )
    offset: Dims = Field(
        description="Input window offset in the stack"
    )
    transform: int = Field(
        default=0,
        description="Dihedral transform applied (0 = none)"
    )


class TrainLogRecord(BaseModel):
    """One training log line."""

    update: int = Field(description="Number of completed updates")
    loss: float = Field(description="Patch loss at this update")
    smoothed_loss: float = Field(description="Exponential moving average of the loss")
    pixel_error: float = Field(description="Pixel error on the patch at threshold 0.5")
    wallclock_s: float = Field(description="Seconds since training started")

    def to_line(self) -> str:
        """Render as `update loss pixel_error wallclock_s`."""
        return f"{self.update} {self.smoothed_loss:.6f} {self.pixel_error:.6f} {self.wallclock_s:.3f}"


class PipelineResult(BaseModel):
    """Everything the two-stage recursive protocol produces."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    params1: ParamState = Field(description="Final first-stage parameters")
    params2: ParamState = Field(description="Final second-stage parameters")
    preliminary_maps: List[np.ndarray] = Field(
        description="Fixed first-stage maps used to train the second stage, one per stack"
    )
    final_maps: List[np.ndarray] = Field(
        description="First-stage maps after continued training, for second-stage evaluation"
    )
    log1: List[TrainLogRecord] = Field(default_factory=list, description="First-stage log")
    log2: List[TrainLogRecord] = Field(default_factory=list, description="Second-stage log")
    warm_started: List[str] = Field(
        default_factory=list,
        description="Second-stage layers initialized from first-stage weights"
    )
