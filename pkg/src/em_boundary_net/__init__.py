"""
EM Boundary Net - dense-output 3D ConvNets for neuronal boundary detection.

A CPU engine for networks with sparse (dilated) filters and dense max
filtering, trained on output patches of anisotropic EM stacks, with a
two-stage recursive protocol and Rand-score evaluation.
"""

__version__ = "0.1.0"
__author__ = "EM Boundary Net Team"
__description__ = "Dense boundary detection for anisotropic electron-microscopy stacks"

# Main imports
from .config.settings import get_settings, Settings
from .core.spec_parser import load_spec, parse_spec
from .models.errors import EngineError

__all__ = [
    "__version__",
    "__author__",
    "__description__",
    "get_settings",
    "Settings",
    "load_spec",
    "parse_spec",
    "EngineError",
]
