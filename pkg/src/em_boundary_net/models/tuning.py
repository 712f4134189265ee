"""
Tuning Models for EM Boundary Net.

Records produced when the engine times direct against FFT convolution for a
layer and picks the faster one.
"""

from typing import Literal, Optional, Tuple

from pydantic import BaseModel, Field


class LayerTiming(BaseModel):
    """
    Timing report for one conv layer.
    """

    node: str = Field(
        default="",
        description="Conv node name (empty for ad-hoc trials)"
    )
    input_shape: Tuple[int, int, int, int] = Field(
        description="Trial input maps (in_maps, nx, ny, nz)"
    )
    kernel_shape: Tuple[int, int, int, int, int] = Field(
        description="Trial weights (out_maps, in_maps, kx, ky, kz)"
    )
    sparsity: Tuple[int, int, int] = Field(
        description="Tap spacing of the layer"
    )
    direct_ms: Optional[float] = Field(
        default=None,
        description="Median direct wall time in milliseconds"
    )
    fft_ms: Optional[float] = Field(
        default=None,
        description="Median FFT wall time in milliseconds"
    )
    max_relative_difference: Optional[float] = Field(
        default=None,
        description="Largest |direct - fft| relative to the output magnitude on the trial data"
    )
    choice: Literal["direct", "fft"] = Field(
        default="direct",
        description="Method used for this layer for the rest of the run"
    )
    note: str = Field(
        default="",
        description="Why the choice fell back to direct, if it did"
    )

    def to_row(self) -> Tuple[str, ...]:
        """Render as a table row: shapes, timings, choice."""
        def fmt(v: Optional[float]) -> str:
            return "-" if v is None else f"{v:.2f}"
        return (
            self.node,
            "x".join(str(n) for n in self.input_shape),
            "x".join(str(n) for n in self.kernel_shape),
            ",".join(str(n) for n in self.sparsity),
            fmt(self.direct_ms),
            fmt(self.fft_ms),
            "-" if self.max_relative_difference is None else f"{self.max_relative_difference:.1e}",
            self.choice,
            self.note,
        )
