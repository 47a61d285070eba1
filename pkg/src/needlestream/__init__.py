"""Streaming needle detection, low-entropy approximate summation and exact
information-cost tools for multi-pass streaming algorithms."""

from .apr import ApproxSum, AprConfig, apr_run
from .kpass import KPassAlgorithm, run_k_pass
from .needle import ABORT, CollisionDetector, NeedleDetectorM1, NeedleDetectorM2
from .streams import NeedleParams, gen_needle, gen_uniform

__version__ = "0.1.0"

__all__ = ["ABORT", "ApproxSum", "AprConfig", "CollisionDetector", "KPassAlgorithm", "NeedleDetectorM1",
           "NeedleDetectorM2", "NeedleParams", "apr_run", "gen_needle", "gen_uniform", "run_k_pass"]
