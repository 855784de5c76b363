"""Closed two-layer queueing networks in heavy traffic.

Simulation of the pre-limit network, its fluid and diffusion scalings,
the reflection-based regulator, and the limiting regulated Brownian
motion, plus a harness comparing them.
"""

__version__ = "0.1.0"

from .netmodel import NetworkParams, build_network, check_heavy_traffic, random_network  # noqa: E402
from .simulator import initial_state, simulate_path, step  # noqa: E402
from .scaling import GridPath, free_processes, scale_path  # noqa: E402
from .regulator import RegulatorInput, reflect_1d, regulate, solve_y  # noqa: E402
from .limitproc import build_covariance, sample_bm, simulate_limit  # noqa: E402

__all__ = [
    "NetworkParams", "build_network", "check_heavy_traffic", "random_network",
    "initial_state", "simulate_path", "step",
    "GridPath", "free_processes", "scale_path",
    "RegulatorInput", "reflect_1d", "regulate", "solve_y",
    "build_covariance", "sample_bm", "simulate_limit",
]
