"""Simulation harness: topologies, rule generation, implants, and experiments."""

from .implants import (
    DEFAULT_ATTACK_MIX,
    DEFAULT_SCOPE_MIX,
    AttackImplant,
    AttackKind,
    Delay,
    Drop,
    Generate,
    ImplantConflict,
    Misroute,
    Replay,
    Scope,
)
from .rules import DisconnectedTopology, generate_rules
from .simulator import CongestionModel, Simulator, implant
from .topologies import bundled_topology, figure1, figure2, line, random_topology, star

__all__ = [
    "DEFAULT_ATTACK_MIX", "DEFAULT_SCOPE_MIX", "AttackImplant", "AttackKind", "CongestionModel",
    "Delay", "DisconnectedTopology", "Drop", "Generate", "ImplantConflict", "Misroute", "Replay",
    "Scope", "Simulator", "bundled_topology", "figure1", "figure2", "generate_rules", "implant",
    "line", "random_topology", "star",
]
