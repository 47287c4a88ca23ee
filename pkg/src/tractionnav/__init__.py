"""Traversability-aware navigation: traction estimation, self-supervised labels, MPPI control."""
from .kinodynamics import ControlInput, State2D, TractionParams
from .kernels import BACKEND

__all__ = ["BACKEND", "ControlInput", "State2D", "TractionParams"]
__version__ = "0.1.0"
