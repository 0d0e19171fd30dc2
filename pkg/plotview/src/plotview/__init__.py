"""Panel renderer for boundary-field record CSVs."""

from .render import FigureSpec, SchemaError, load_record, render_panels

__all__ = ["FigureSpec", "SchemaError", "load_record", "render_panels"]
__version__ = "0.1.0"
