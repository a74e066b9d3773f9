"""Figure rendering for the solver benchmark CSV artifacts."""

from rbsgdplots.figures import FigureSpec, SchemaError, load_spec, render

__version__ = "0.1.0"
