"""Longitudinal connectional brain template integration and forecasting.

Baseline multigraph populations are integrated into a template and its
evolution is forecast with a recurrent graph-convolutional model trained by a
built-in reverse-mode gradient engine.
"""

from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
