"""Geographic contingency Monte Carlo for transmission grids.

Pipeline: parse a case with coordinates, sample spatially graded line
failures, cascade them through repeated AC solves until divergence or
exhaustion, and aggregate many such scenarios into per-county statistics.
"""

from .cascade import CascadeOptions, CascadeTrace, run_cascade
from .damage import DamageParams, FailureSet, sample_failures
from .matpower import load_case, parse_case
from .model import GridCase, ValidationError
from .powerflow import NonConvergence, PowerFlowOptions, PowerFlowSolution, solve
from .sensitivity import generation_surplus, lodf, ptdf, si_count

__version__ = "0.1.0"

__all__ = [
    "CascadeOptions",
    "CascadeTrace",
    "DamageParams",
    "FailureSet",
    "GridCase",
    "NonConvergence",
    "PowerFlowOptions",
    "PowerFlowSolution",
    "ValidationError",
    "__version__",
    "generation_surplus",
    "load_case",
    "lodf",
    "parse_case",
    "ptdf",
    "run_cascade",
    "sample_failures",
    "si_count",
    "solve",
]
