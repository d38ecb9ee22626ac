"""Sparse integer least squares: exact solver, l1-augmented SDP relaxation,
dual certificates, l1 baselines and experiment harness."""
from .instance import GroundTruth, SilsInstance, SparseSignVector, metrics, objective
from .generators import ModelSpec, generate
from .sdp import SolverParams, extract_rank_one, lift, recover, solve_sdp
from .exact import solve_exact, solve_sils0

__all__ = [
    "GroundTruth", "SilsInstance", "SparseSignVector", "metrics", "objective",
    "ModelSpec", "generate", "SolverParams", "extract_rank_one", "lift", "recover",
    "solve_sdp", "solve_exact", "solve_sils0",
]
__version__ = "0.1.0"
