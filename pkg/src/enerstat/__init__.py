"""Energy-accounted artificial life: structures, enerstatic loops and an evolving catalog."""

from .energy import ConservationViolation, InsufficientBalance, Ledger, PerturbationModel, Property
from .kinds import Catalog, PropSpec, StructureKind, niche_of
from .learning import Action, ActionPolicy, credit_update, select_action
from .world import (
    EnergyChannel, EnerstaticLoop, Event, StructureInstance, World, classify_window, step_minimal_loop,
    step_world,
)

__all__ = [
    "ConservationViolation", "InsufficientBalance", "Ledger", "PerturbationModel", "Property",
    "Catalog", "PropSpec", "StructureKind", "niche_of",
    "Action", "ActionPolicy", "credit_update", "select_action",
    "EnergyChannel", "EnerstaticLoop", "Event", "StructureInstance", "World", "classify_window",
    "step_minimal_loop", "step_world",
]
