"""
Configuration settings for EM Boundary Net.

This module provides centralized configuration management using Pydantic settings
with environment variable support.
"""

import os
from typing import List, Optional, Tuple
from pydantic import Field, field_validator
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """
    Application settings with environment variable support.

    All settings can be configured via environment variables or .env file.
    Command-line flags override whatever is loaded here.
    """

    # =============================================================================
    # Engine Configuration
    # =============================================================================

    threads: Optional[int] = Field(
        default=None,
        description="Maximum engine worker threads. If None, uses all available cores",
        alias="EMB_THREADS"
    )
    deterministic: bool = Field(
        default=False,
        description="Fix accumulation order in every kernel so repeated runs are bit-identical",
        alias="EMB_DETERMINISTIC"
    )
    tune_trials: int = Field(
        default=3,
        description="Timing repetitions per method when self-tuning a layer (0 disables tuning)",
        alias="EMB_TUNE_TRIALS"
    )

    # =============================================================================
    # Training Configuration
    # =============================================================================

    smoothing: float = Field(
        default=0.99,
        description="Exponential moving average factor for the logged loss",
        alias="EMB_SMOOTHING"
    )
    checkpoint_every: int = Field(
        default=0,
        description="Write a checkpoint every N updates (0 = only at the end of training)",
        alias="EMB_CHECKPOINT_EVERY"
    )

    # =============================================================================
    # Inference Configuration
    # =============================================================================

    infer_patch: Tuple[int, int, int] = Field(
        default=(64, 64, 1),
        description="Output tile shape used when computing boundary maps",
        alias="EMB_INFER_PATCH"
    )

    # =============================================================================
    # Evaluation Configuration
    # =============================================================================

    threshold_step: float = Field(
        default=0.01,
        description="Resolution of every threshold line search",
        alias="EMB_THRESHOLD_STEP"
    )
    watershed_t_low_grid: List[float] = Field(
        default=[0.05, 0.1, 0.2, 0.3, 0.4, 0.5],
        description="Seed thresholds searched for the watershed back-end",
        alias="EMB_WATERSHED_T_LOW_GRID"
    )
    watershed_t_high_grid: List[float] = Field(
        default=[0.6, 0.8, 0.95],
        description="Flooding ceilings searched for the watershed back-end",
        alias="EMB_WATERSHED_T_HIGH_GRID"
    )
    watershed_min_size_grid: List[int] = Field(
        default=[0, 25, 100],
        description="Minimum basin sizes searched for the watershed back-end",
        alias="EMB_WATERSHED_MIN_SIZE_GRID"
    )

    # =============================================================================
    # Development Configuration
    # =============================================================================

    log_level: str = Field(
        default="INFO",
        description="Logging level: DEBUG, INFO, WARNING, ERROR",
        alias="EMB_LOG_LEVEL"
    )

    # =============================================================================
    # Validation and Configuration
    # =============================================================================

    @field_validator('threads')
    @classmethod
    def validate_threads(cls, v):
        """Validate worker cap."""
        if v is not None and v < 1:
            raise ValueError('threads must be at least 1')
        return v

    @field_validator('tune_trials', 'checkpoint_every')
    @classmethod
    def validate_non_negative(cls, v):
        """Validate counters that may be zero."""
        if v < 0:
            raise ValueError('value must be non-negative')
        return v

    @field_validator('smoothing')
    @classmethod
    def validate_smoothing(cls, v):
        """Validate the EMA factor."""
        if not 0.0 <= v < 1.0:
            raise ValueError('smoothing must be in [0, 1)')
        return v

    @field_validator('threshold_step')
    @classmethod
    def validate_threshold_step(cls, v):
        """Validate line-search resolution."""
        if not 0.0 < v <= 0.5:
            raise ValueError('threshold_step must be in (0, 0.5]')
        return v

    @field_validator('infer_patch')
    @classmethod
    def validate_infer_patch(cls, v):
        """Validate inference tile shape."""
        if any(n < 1 for n in v):
            raise ValueError('infer_patch components must be positive')
        return v

    @field_validator('watershed_t_low_grid', 'watershed_t_high_grid')
    @classmethod
    def validate_threshold_grid(cls, v):
        """Validate watershed threshold grids."""
        if not v:
            raise ValueError('threshold grids cannot be empty')
        if any(not 0.0 <= t <= 1.0 for t in v):
            raise ValueError('grid thresholds must lie in [0, 1]')
        return v

    @field_validator('watershed_min_size_grid')
    @classmethod
    def validate_min_size_grid(cls, v):
        """Validate watershed size grid."""
        if not v or any(n < 0 for n in v):
            raise ValueError('min_size grid must be nonempty and non-negative')
        return v

    @field_validator('log_level')
    @classmethod
    def validate_log_level(cls, v):
        """Validate logging level name."""
        allowed_levels = ['DEBUG', 'INFO', 'WARNING', 'ERROR']
        if v.upper() not in allowed_levels:
            raise ValueError(f'log_level must be one of {allowed_levels}')
        return v.upper()

    def worker_count(self) -> int:
        """
        Get the effective number of engine workers.

        Returns:
            Configured thread cap, or the number of available cores
        """
        if self.threads:
            return self.threads
        return os.cpu_count() or 1

    model_config = {
        "env_file": ".env",
        "env_file_encoding": "utf-8",
        "case_sensitive": False,
        "populate_by_name": True,
        "extra": "ignore"  # Ignore extra fields from environment
    }


# Global settings instance
settings = Settings()


def get_settings() -> Settings:
    """
    Get the global settings instance.

    Returns:
        Settings instance with current configuration
    """
    return settings


def reload_settings(**overrides) -> Settings:
    """
    Reload settings from environment variables.

    Args:
        **overrides: Field values that take precedence over the environment

    Returns:
        Updated settings instance
    """
    global settings
    settings = Settings(**overrides)
    return settings
