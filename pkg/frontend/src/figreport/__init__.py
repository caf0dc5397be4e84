"""Paper-style figure rendering for ckksfault campaign artifacts."""

__version__ = "0.1.0"

from .render import FIGURE_KINDS, FigureSpec, render  # noqa: F401
