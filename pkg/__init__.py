"""Top-level package for routepredict."""

__all__ = ["__version__"]

__version__ = "0.3"
