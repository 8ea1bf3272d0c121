"""Runtime deviations from the installed flow tables."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

import numpy as np

from ..netmodel import CONTROLLER_PORT, DeviceId, NetworkSnapshot, PortId
from ..patterns import HeaderPattern, Rewrite


class Scope(str, Enum):
    ALL = "all"                   # every packet on every port
    INGRESS_SUBSET = "ingress-subset"  # a header subset arriving on one port
    PORT = "port"                 # packets arriving on or leaving through one port
    PORT_SUBSET = "port-subset"   # a header subset arriving on or leaving through one port
    CONTROLLER = "controller"     # packets the device sends to the controller


# Default mix over scopes, in percent.
DEFAULT_SCOPE_MIX = {
    Scope.ALL: 30,
    Scope.INGRESS_SUBSET: 19,
    Scope.PORT: 25,
    Scope.PORT_SUBSET: 15,
    Scope.CONTROLLER: 11,
}


class AttackKind(str, Enum):
    REPLAY = "replay"
    DROP = "drop"
    MISROUTE = "misroute"
    GENERATION = "generation"
    DELAY = "delay"


DEFAULT_ATTACK_MIX = {
    AttackKind.REPLAY: 0.40,
    AttackKind.DROP: 0.30,
    AttackKind.MISROUTE: 0.05,
    AttackKind.GENERATION: 0.10,
    AttackKind.DELAY: 0.15,
}


@dataclass(frozen=True)
class Replay:
    to: DeviceId


@dataclass(frozen=True)
class Drop:
    selectivity: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.selectivity <= 1.0:
            raise ValueError("drop selectivity must be in (0, 1]")


@dataclass(frozen=True)
class Misroute:
    port: PortId


@dataclass(frozen=True)
class Generate:
    rewrite: Rewrite
    fabricate: bool = False


@dataclass(frozen=True)
class Delay:
    amount_ns: int

    def __post_init__(self):
        if self.amount_ns <= 0:
            raise ValueError("delay amount must be positive")


ImplantAction = Union[Replay, Drop, Misroute, Generate, Delay]

_KIND = {Replay: AttackKind.REPLAY, Drop: AttackKind.DROP, Misroute: AttackKind.MISROUTE,
         Generate: AttackKind.GENERATION, Delay: AttackKind.DELAY}


class ImplantConflict(ValueError):
    pass


@dataclass(frozen=True)
class AttackImplant:
    device: DeviceId
    action: ImplantAction
    scope: Scope = Scope.ALL
    port: Optional[PortId] = None
    subset: Optional[HeaderPattern] = None
    probability: float = 1.0

    def __post_init__(self):
        if self.scope in (Scope.INGRESS_SUBSET, Scope.PORT, Scope.PORT_SUBSET) and self.port is None:
            raise ValueError(f"scope {self.scope.value} needs a port")
        if self.scope in (Scope.INGRESS_SUBSET, Scope.PORT_SUBSET) and self.subset is None:
            raise ValueError(f"scope {self.scope.value} needs a header subset")
        if not 0.0 < self.probability <= 1.0:
            raise ValueError("activation probability must be in (0, 1]")

    @property
    def kind(self) -> AttackKind:
        return _KIND[type(self.action)]

    def in_scope(self, header: int, in_port: PortId, outs: list[PortId]) -> bool:
        s = self.scope
        if s is Scope.ALL:
            return True
        if s is Scope.CONTROLLER:
            return CONTROLLER_PORT in outs
        if s is Scope.INGRESS_SUBSET:
            return in_port == self.port and self.subset.matches(header)
        touches = in_port == self.port or self.port in outs
        if s is Scope.PORT:
            return touches
        return touches and self.subset.matches(header)

    def describe(self) -> dict:
        a = self.action
        params = {k: (str(v) if isinstance(v, (Rewrite, HeaderPattern)) else v) for k, v in a.__dict__.items()}
        return {
            "device": self.device,
            "kind": self.kind.value,
            "params": params,
            "scope": self.scope.value,
            "port": self.port,
            "subset": str(self.subset) if self.subset else None,
            "probability": self.probability,
        }


def check_conflicts(implants: list[AttackImplant]) -> None:
    seen = {}
    for imp in implants:
        key = (imp.device, imp.scope, imp.port, imp.subset)
        if key in seen:
            raise ImplantConflict(f"two implants on {imp.device} for scope {imp.scope.value}")
        seen[key] = imp


def validate(snap: NetworkSnapshot, imp: AttackImplant) -> None:
    if imp.device not in snap.devices:
        raise KeyError(f"unknown device {imp.device!r}")
    ports = snap.devices[imp.device].ports
    if imp.port is not None and imp.port not in ports:
        raise KeyError(f"device {imp.device!r} has no port {imp.port}")
    a = imp.action
    if isinstance(a, Replay) and snap.port_towards(imp.device, a.to) is None:
        raise KeyError(f"{a.to!r} is not a neighbor of {imp.device!r}")
    if isinstance(a, Misroute) and a.port not in ports:
        raise KeyError(f"device {imp.device!r} has no port {a.port}")


@dataclass
class FireRecord:
    count: int = 0
    first_ns: Optional[int] = None
    probes: int = 0
