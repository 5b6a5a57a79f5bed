"""Stabilizing controllers for switched linear systems from graph-indexed LMIs."""
from .controllers import AutomatonController, MemoryController, PwlController, cut, rem
from .graphs import LabeledGraph, build_debruijn, build_ftg, is_complete, is_deterministic, successor
from .lmi import (
    Certificate,
    SolverOptions,
    SynthesisMode,
    assemble,
    recover_gains,
    solve_feasibility,
    verify_certificate,
)
from .model import (
    PerturbationModel,
    SwitchedSystem,
    SwitchingSignal,
    load_fixture,
    load_system,
    restrict_signal,
    scale_system,
)
from .sim import adversarial_signal, empirical_rate, levelset_2d, lyapunov_pwl, simulate
from .synthesis import bisect_rate, embed_solution, feasible_at_rate

__version__ = "0.1.0"

__all__ = [
    "AutomatonController",
    "Certificate",
    "LabeledGraph",
    "MemoryController",
    "PerturbationModel",
    "PwlController",
    "SolverOptions",
    "SwitchedSystem",
    "SwitchingSignal",
    "SynthesisMode",
    "adversarial_signal",
    "assemble",
    "bisect_rate",
    "build_debruijn",
    "build_ftg",
    "cut",
    "embed_solution",
    "empirical_rate",
    "feasible_at_rate",
    "is_complete",
    "is_deterministic",
    "levelset_2d",
    "load_fixture",
    "load_system",
    "lyapunov_pwl",
    "recover_gains",
    "rem",
    "restrict_signal",
    "scale_system",
    "simulate",
    "solve_feasibility",
    "successor",
    "verify_certificate",
]
