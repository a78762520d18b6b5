"""
Exception hierarchy for WavePlanes.

Every error raised on purpose by the package derives from WavePlanesError so the
command-line front-end can map it to exit code 2.
"""

from typing import Any, Dict, Optional


class WavePlanesError(Exception):
    """Base class for all package errors"""


class DimensionError(WavePlanesError, ValueError):
    """Grid shape is not a power of two or does not match the expected shape"""


class LevelError(WavePlanesError, ValueError):
    """Wavelet level or reconstruction scale out of range"""


class ConfigError(WavePlanesError, ValueError):
    """Run configuration could not be read or failed validation"""


class DivergenceError(WavePlanesError, RuntimeError):
    """Training produced a non-finite loss"""

    def __init__(self, message: str, snapshot: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.snapshot = snapshot or {}


class CodecError(WavePlanesError, RuntimeError):
    """Compression backend or container IO failed"""


class CorruptModelError(CodecError):
    """Serialized model is truncated, has a bad header or out-of-range entries"""


class DatasetError(WavePlanesError, ValueError):
    """Dataset directory, JSON or image could not be ingested"""


class MetricError(WavePlanesError, ValueError):
    """Metric inputs are incompatible"""
