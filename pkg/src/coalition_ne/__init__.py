"""Distributed Nash equilibrium seeking for coalition games of uncertain
Euler-Lagrange agents under local and coupling constraints."""

from .game import (CoalitionGame, KktCertificate, QuadraticCost, SmoothCost, kkt_certificate,
                   project_nonneg, solve_ne_oracle)
from .graph import (
    CommTopology,
    build_selectors,
    build_u_basis,
    check_connectivity,
    grounded_min_real_part,
    laplacian,
)
from .seeker import GainConfig, SeekerLayout, SeekerState, StackedSeeker, seeker_rhs
from .sim import Scenario, SimConfig, TrajectoryLog, run, write_log

__version__ = "0.1.0"

__all__ = [
    "CoalitionGame", "KktCertificate", "QuadraticCost", "SmoothCost", "kkt_certificate",
    "project_nonneg", "solve_ne_oracle", "CommTopology", "build_selectors", "build_u_basis",
    "check_connectivity", "grounded_min_real_part", "laplacian", "GainConfig", "SeekerLayout", "SeekerState",
    "StackedSeeker", "seeker_rhs", "Scenario", "SimConfig", "TrajectoryLog", "run", "write_log",
]
