"""Figure rendering for monoflow CSV exports: fit overlays, streamline
panels, uncertainty-sweep bands, and confidence-interval comparisons."""

from .render import render
from .schemas import FigureSpec, SchemaError, build_spec

__version__ = "0.1.0"

__all__ = ["FigureSpec", "SchemaError", "build_spec", "render"]
