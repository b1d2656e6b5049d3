"""Pulse-level quantum regression models.

Submodules: ``linop`` (small dense linear algebra), ``model`` (model
description and file format), ``sim`` (propagation and Dyson series),
``lie`` (dynamical Lie algebra and variance), ``express`` (expressivity
check), ``train`` (datasets and fitting) and ``cli``.
"""

__version__ = "0.1.0"

from .model import ModelSpec, PulseSchedule, paper_model  # noqa: F401
