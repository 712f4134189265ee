"""
Data models for EM Boundary Net.

This package contains the domain models and the error hierarchy used
throughout the engine.
"""

from .checkpoint import Checkpoint
from .errors import (
    BoundsError,
    CheckpointError,
    ConfigurationError,
    DataFormatError,
    EngineError,
    NumericalError,
    PlanError,
    ShapeError,
    SpecError,
    UndefinedScoreError,
)
from .evaluation import CurvePoint, CurveReport, MapSummary, RandScores
from .network import (
    ForwardResult,
    NetworkSpec,
    NodeSpec,
    ParamGradients,
    ParamState,
    SparsityPlan,
)
from .training import PatchSample, PipelineResult, StackPair, TrainConfig, TrainLogRecord
from .tuning import LayerTiming
from .volume import StackMeta, Volume, Window

__all__ = [
    "Checkpoint",
    "EngineError",
    "ShapeError",
    "BoundsError",
    "SpecError",
    "PlanError",
    "ConfigurationError",
    "DataFormatError",
    "CheckpointError",
    "UndefinedScoreError",
    "NumericalError",
    "RandScores",
    "CurvePoint",
    "CurveReport",
    "MapSummary",
    "NodeSpec",
    "NetworkSpec",
    "SparsityPlan",
    "ParamState",
    "ParamGradients",
    "ForwardResult",
    "TrainConfig",
    "StackPair",
    "PatchSample",
    "TrainLogRecord",
    "PipelineResult",
    "LayerTiming",
    "Window",
    "StackMeta",
    "Volume",
]
