"""Multi-agent jury simulation for e-commerce dispute verdicts."""

from .cases import DisputeCase, Verdict, decode_case, encode_case, validate_case
from .estimator import JuryVerdictClassifier
from .gateway import Gateway, MockProvider, ScriptedProvider
from .jury import SimulationConfig, SimulationResult, run_simulation

__version__ = "0.1.0"

__all__ = [
    "DisputeCase",
    "Gateway",
    "JuryVerdictClassifier",
    "MockProvider",
    "ScriptedProvider",
    "SimulationConfig",
    "SimulationResult",
    "Verdict",
    "decode_case",
    "encode_case",
    "run_simulation",
    "validate_case",
]
