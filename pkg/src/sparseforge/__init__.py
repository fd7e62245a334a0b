"""sparseforge: iso-FLOP sparse layer planning, training, and verification."""

from .errors import (
    ConfigError, ForgeError, FormatError, InfeasiblePlanError, TrainingError,
    ValidationError,
)
from .planner import (
    IsoFlopAudit, LayerSpec, NetworkPlan, PlannedLayer, TransformPlan,
    cardinality, cardinality_unrounded, flop_count, plan_dense,
    plan_low_rank_dense, plan_network, plan_sparse_doped,
    plan_sparse_factorized, plan_sparse_parallel, plan_sparse_wide,
    plan_transform, redistribute_sparsity, verify_isoflop,
)

__all__ = [
    "ConfigError", "ForgeError", "FormatError", "InfeasiblePlanError",
    "TrainingError", "ValidationError",
    "IsoFlopAudit", "LayerSpec", "NetworkPlan", "PlannedLayer",
    "TransformPlan", "cardinality", "cardinality_unrounded", "flop_count",
    "plan_dense", "plan_low_rank_dense", "plan_network", "plan_sparse_doped",
    "plan_sparse_factorized", "plan_sparse_parallel", "plan_sparse_wide",
    "plan_transform", "redistribute_sparsity", "verify_isoflop",
]
