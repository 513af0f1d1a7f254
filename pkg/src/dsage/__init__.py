"""Surrogate-assisted quality-diversity generation of maze environments."""

from .archive import Elite, GridArchive, MeasureSpec
from .loop import DsageConfig, RunResult, run

__version__ = "0.1.0"

__all__ = ["Elite", "GridArchive", "MeasureSpec", "DsageConfig", "RunResult",
           "run", "__version__"]
