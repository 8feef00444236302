"""Critical clearing time and its parameter sensitivity for DAE systems whose
fault-on trajectory exits through the post-fault singular surface."""
from .cct import CctResult, SensitivityBundle, cct_sensitivity, find_cct_bisection, find_cct_event, sweep
from .model import DaeModel, ParameterSet, SmibModel, Stage, StagedScenario, smib_model, smib_scenario, smib_singular_locus
from .simulator import SolverSettings, integrate_fault_with_shadow, integrate_stage, post_fault_stable

__all__ = [
    "CctResult", "DaeModel", "ParameterSet", "SensitivityBundle", "SmibModel", "SolverSettings", "Stage",
    "StagedScenario", "cct_sensitivity", "find_cct_bisection", "find_cct_event", "integrate_fault_with_shadow",
    "integrate_stage", "post_fault_stable", "smib_model", "smib_scenario", "smib_singular_locus", "sweep",
]
