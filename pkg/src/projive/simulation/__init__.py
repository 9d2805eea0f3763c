"""Simulated multi-block data and replicated recovery studies."""

from projive.simulation.calibration import ScaleConstants, r2_ratios, solve_scale_constants
from projive.simulation.feng import generate_feng
from projive.simulation.scenarios import (
    LoadingDist,
    ScoreDist,
    SimScenario,
    SimTruth,
    factorial_grid,
    generate,
    replicate_seed,
)
from projive.simulation.storage import discover_truth_dirs, load_truth, save_truth
from projive.simulation.study import StudyOptions, run_study

__all__ = [
    # Scenarios
    "LoadingDist",
    "ScoreDist",
    "SimScenario",
    "SimTruth",
    "factorial_grid",
    "generate",
    "generate_feng",
    "replicate_seed",
    # Calibration
    "ScaleConstants",
    "r2_ratios",
    "solve_scale_constants",
    # Storage
    "discover_truth_dirs",
    "load_truth",
    "save_truth",
    # Studies
    "StudyOptions",
    "run_study",
]
