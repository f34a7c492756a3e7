"""Flexible block-coordinate proximal gradient for wavelet-domain deblurring."""

from .blockspace import BlockLayout, BlockVector, Problem, Regularizer, SmoothTerm, objective
from .schedule import Schedule, make_schedule, validate_essentially_cyclic
from .solver import SolverConfig, SolverTrace, StepPolicy, run

__version__ = "0.1.0"
