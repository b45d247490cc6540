"""Branching random walk in the boundary case: martingales, spines, and
the conditioned-walk machinery used to test the non-triviality dichotomy of
the derivative martingale limit."""

__version__ = "0.1.0"

from brw import laws, streams, walk, forest, conditioned, spine, criterion
from brw import cli

__all__ = ["laws", "streams", "walk", "forest", "conditioned", "spine",
           "criterion", "cli"]
