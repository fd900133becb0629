"""Container liquid-level detection from masked adjacent-frame differencing."""

from liqd.classifier import LevelState

__version__ = "0.1.0"

__all__ = ["LevelState", "__version__"]
