"""
Evaluation Models for EM Boundary Net.

This module defines the Pydantic models for segmentation scoring:
1. RandScores - merge/split Rand scores and their F-score
2. CurvePoint - one parameter setting of a precision-recall sweep
3. CurveReport - a full sweep, sorted by split score
4. MapSummary - best scores of one boundary map
"""

import math
from typing import Dict, List, Optional

from pydantic import BaseModel, Field, field_validator, model_validator


class RandScores(BaseModel):
    """
    Rand merge and split scores.

    Merge plays precision and split plays recall; f is their harmonic mean.
    """

    merge: float = Field(description="Rand merge score in [0, 1]")
    split: float = Field(description="Rand split score in [0, 1]")
    f: float = Field(description="Harmonic mean of merge and split")

    @field_validator('merge', 'split', 'f')
    @classmethod
    def validate_unit_range(cls, v):
        """Validate scores lie in [0, 1]."""
        if not 0.0 <= v <= 1.0:
            raise ValueError('scores must be in [0, 1]')
        return v

    @model_validator(mode='after')
    def validate_harmonic_mean(self):
        """Validate f is the harmonic mean of merge and split."""
        expected = harmonic_mean(self.merge, self.split)
        if not math.isclose(self.f, expected, rel_tol=1e-12, abs_tol=1e-15):
            raise ValueError(f'f {self.f} is not the harmonic mean {expected}')
        return self

    @classmethod
    def from_scores(cls, merge: float, split: float) -> "RandScores":
        """Build from merge and split, deriving f."""
        return cls(merge=merge, split=split, f=harmonic_mean(merge, split))


def harmonic_mean(merge: float, split: float) -> float:
    """2 m s / (m + s), 0 when both are 0."""
    if merge + split == 0:
        return 0.0
    return 2.0 * merge * split / (merge + split)


class CurvePoint(BaseModel):
    """One segmentation parameter setting and its scores."""

    params: Dict[str, float] = Field(
        description="Segmentation parameters, e.g. {'t': 0.5}"
    )
    scores: Optional[RandScores] = Field(
        default=None,
        description="Scores, None when undefined for this setting"
    )
    note: str = Field(
        default="",
        description="Why the point has no scores"
    )

    def to_row(self) -> List[str]:
        """`param..., split, merge, f` as strings."""
        values = [f"{v:g}" for v in self.params.values()]
        if self.scores is None:
            return values + ["nan", "nan", "nan"]
        return values + [f"{self.scores.split:.6f}", f"{self.scores.merge:.6f}",
                         f"{self.scores.f:.6f}"]


class CurveReport(BaseModel):
    """A precision-recall sweep of one segmentation back-end."""

    algo: str = Field(description="Segmentation back-end name")
    points: List[CurvePoint] = Field(
        default_factory=list,
        description="Scored points, sorted by split score"
    )
    skipped: List[CurvePoint] = Field(
        default_factory=list,
        description="Points whose scores are undefined"
    )

    ordered: List[CurvePoint] = Field(
        default_factory=list,
        description="Scored points in grid order"
    )

    def best(self) -> Optional[CurvePoint]:
        """Point of highest f; first found in grid order on ties."""
        best = None
        for point in self.ordered:
            if best is None or point.scores.f > best.scores.f:
                best = point
        return best

    def to_csv(self) -> str:
        """Header plus one `param..., split, merge, f` line per point."""
        if not self.points and not self.skipped:
            return ""
        sample = (self.points or self.skipped)[0]
        lines = [",".join(list(sample.params) + ["split", "merge", "f"])]
        for point in self.points + self.skipped:
            lines.append(",".join(point.to_row()))
        return "\n".join(lines) + "\n"


class MapSummary(BaseModel):
    """Best scores of one boundary map against one truth."""

    name: str = Field(description="Map identifier")
    threshold: float = Field(description="Best pixel-error threshold")
    pixel_error: float = Field(description="Pixel error at that threshold")
    best_rand: Dict[str, CurvePoint] = Field(
        default_factory=dict,
        description="Best curve point per segmentation back-end"
    )
