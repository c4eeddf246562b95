"""Disturbance-observer-based boundary stabilization of an anti-stable stochastic heat equation."""
from .certify import CertificationError, GainCertificate, PlantSpec, certify_gains
from .experiments import check_bound, fit_decay, run_ensemble, scenario_preset
from .kernel import Kernel, TransformPair, build_transform, solve_kernel
from .scenario import Scenario, ScenarioError
from .spde import SimulationAbort, simulate_closed_loop, simulate_open_loop, simulate_target

__all__ = [
    "CertificationError", "GainCertificate", "PlantSpec", "certify_gains",
    "check_bound", "fit_decay", "run_ensemble", "scenario_preset",
    "Kernel", "TransformPair", "build_transform", "solve_kernel",
    "Scenario", "ScenarioError",
    "SimulationAbort", "simulate_closed_loop", "simulate_open_loop", "simulate_target",
]
