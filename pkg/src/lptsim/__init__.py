"""Layer-penetrative tiling simulator for hidden-network CIM accelerators."""

from .alsim import AccessCounters, SimResult, count_layer_accesses, count_plan_accesses, simulate
from .energy import EnergyTable, access_energy, compare_baseline, compare_dataflows, default_table
from .estimator import HiddenNetworkTransformer
from .hnn import Supermask, WeightGenConfig, generate_weight, materialize, random_supermask
from .lpt import SchedulePlan, count_fused_accesses, max_activation, plan_lpt, validate_plan
from .netspec import CoreGeometry, LayerSpec, NetworkSpec, QTensor, Quant, builtin_network
from .refconv import conv_blocked, conv_standard, run_reference, tile_concat

__version__ = "0.1.0"

__all__ = [
    "AccessCounters",
    "CoreGeometry",
    "EnergyTable",
    "HiddenNetworkTransformer",
    "LayerSpec",
    "NetworkSpec",
    "QTensor",
    "Quant",
    "SchedulePlan",
    "SimResult",
    "Supermask",
    "WeightGenConfig",
    "access_energy",
    "builtin_network",
    "compare_baseline",
    "compare_dataflows",
    "conv_blocked",
    "conv_standard",
    "count_fused_accesses",
    "count_layer_accesses",
    "count_plan_accesses",
    "default_table",
    "generate_weight",
    "materialize",
    "max_activation",
    "plan_lpt",
    "random_supermask",
    "run_reference",
    "simulate",
    "tile_concat",
    "validate_plan",
]
