"""
Checkpoint Model for EM Boundary Net.
"""

from typing import Any, Dict, Optional

from pydantic import BaseModel, ConfigDict, Field

from .network import ParamState

CHECKPOINT_VERSION = 1
CHECKPOINT_MAGIC_PREFIX = b"ZNNCKPT"
CHECKPOINT_MAGIC = CHECKPOINT_MAGIC_PREFIX + str(CHECKPOINT_VERSION).encode("ascii")


class Checkpoint(BaseModel):
    """
    A self-describing snapshot of a network and its training state.

    The spec text is embedded so parameter shapes can be re-derived and
    checked on load.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    spec_text: str = Field(
        description="Network spec the parameters belong to"
    )
    params: ParamState = Field(
        description="Parameters, with momentum buffers when present"
    )
    update: int = Field(
        default=0,
        description="Number of completed updates"
    )
    rng_state: Optional[Dict[str, Any]] = Field(
        default=None,
        description="Sampler generator state (numpy bit-generator dict)"
    )
    smoothed_loss: Optional[float] = Field(
        default=None,
        description="Moving-average training loss at the time of the save"
    )
    version: int = Field(
        default=CHECKPOINT_VERSION,
        description="Format version"
    )

    @property
    def has_momentum(self) -> bool:
        """Whether momentum buffers were stored."""
        return bool(self.params.weight_momentum)
