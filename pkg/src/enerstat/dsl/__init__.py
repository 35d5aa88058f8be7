"""The causal-power language: parse, price, niche-check and run structure programs."""

from .ast import NODE_KINDS, Node, PropRef, Span, node_count, walk
from .costs import CostTable, UnknownNodeKind, static_costs
from .evaluator import EffectSet, EnergyShortfall, Program, RefOutsideNiche, compile_program, execute
from .niche import Niche, NicheViolation, niche_check
from .parser import DepthLimitExceeded, DslError, DslSyntaxError, parse, to_source

__all__ = [
    "NODE_KINDS", "Node", "PropRef", "Span", "node_count", "walk",
    "CostTable", "UnknownNodeKind", "static_costs",
    "EffectSet", "EnergyShortfall", "Program", "RefOutsideNiche", "compile_program", "execute",
    "Niche", "NicheViolation", "niche_check",
    "DepthLimitExceeded", "DslError", "DslSyntaxError", "parse", "to_source",
]
