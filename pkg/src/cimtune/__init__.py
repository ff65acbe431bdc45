"""Cost model, compiler and design-space explorer for SRAM compute-in-memory accelerators."""

__version__ = "0.1.0"

from .hwmodel import (  # noqa: E402
    AcceleratorConfig,
    CostCoefficients,
    MacroSpec,
    area_of,
    compute_cycles,
    derive_icw,
    update_cycles,
)
from .mapper import MappingStrategy, enumerate_strategies, plan_for  # noqa: E402
from .workload import GemmOp, Workload, merge_operators  # noqa: E402

__all__ = [
    "AcceleratorConfig",
    "CostCoefficients",
    "GemmOp",
    "MacroSpec",
    "MappingStrategy",
    "Workload",
    "area_of",
    "compute_cycles",
    "derive_icw",
    "enumerate_strategies",
    "merge_operators",
    "plan_for",
    "update_cycles",
]
