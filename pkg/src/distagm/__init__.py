"""Distributed accelerated gradient flow simulator.

Library and CLI for a second-order distributed gradient flow with an
energy-conservation diagnostic, its rate-matching symplectic-Euler
discretization with an adaptive step-size controller, and reference
distributed optimizers for comparison.
"""

from . import agm, baselines, data_io, flow, graphs, harness, objectives
from .trace import RunTrace

__all__ = ["agm", "baselines", "data_io", "flow", "graphs", "harness",
           "objectives", "RunTrace"]

__version__ = "0.1.0"
