"""Network topology, parameters, breaker states and admittance construction.

Buses and branches are plain immutable dataclasses; every mutation helper
returns a new value. Quantities are per-unit on ``base_mva`` except loads
and generation, which are carried in MW/Mvar.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable

import numpy as np

__all__ = [
    "BusKind",
    "BreakerState",
    "Bus",
    "Branch",
    "NetworkModel",
    "TopologyMatrix",
    "IsolatedBusWarning",
    "build_ieee14",
    "build_topology",
    "apply_topology_corruption",
    "admittance",
    "model_to_json",
    "model_from_json",
]


class BusKind(str, Enum):
    SLACK = "Slack"
    GENERATOR = "Generator"
    LOAD = "Load"


class BreakerState(str, Enum):
    CLOSED = "Closed"
    OPEN = "Open"


class IsolatedBusWarning(UserWarning):
    """A topology left at least one bus with no in-service branch."""


@dataclass(frozen=True)
class Bus:
    """One network bus. ``p_load``/``q_load`` are consumption in MW/Mvar,
    ``p_gen`` the scheduled active generation (slack output is free)."""

    id: int
    kind: BusKind = BusKind.LOAD
    v_setpoint: float = 1.0
    p_load: float = 0.0
    q_load: float = 0.0
    p_gen: float = 0.0
    q_min: float = -math.inf
    q_max: float = math.inf
    b_shunt: float = 0.0  # fixed shunt susceptance, p.u.

    def __post_init__(self) -> None:
        if self.id < 1:
            raise ValueError(f"bus ids are 1-based, got {self.id}")
        # q_load may be negative (capacitive load, e.g. bus 4 of the 14-bus case)
        if self.kind is BusKind.LOAD and self.p_load < 0:
            raise ValueError(f"bus {self.id}: active load must be non-negative")
        if self.q_min > self.q_max:
            raise ValueError(f"bus {self.id}: q_min > q_max")


@dataclass(frozen=True)
class Branch:
    """Series branch with optional charging susceptance, off-nominal tap on
    the from side, and one breaker per terminal."""

    from_bus: int
    to_bus: int
    r: float
    x: float
    b_shunt: float = 0.0
    tap: float = 1.0
    breaker_from: BreakerState = BreakerState.CLOSED
    breaker_to: BreakerState = BreakerState.CLOSED

    def __post_init__(self) -> None:
        if self.from_bus == self.to_bus:
            raise ValueError(f"branch {self.from_bus}-{self.to_bus}: self-loop")
        if self.x == 0.0:
            raise ValueError(f"branch {self.from_bus}-{self.to_bus}: x must be nonzero")
        if self.tap <= 0.0:
            raise ValueError(f"branch {self.from_bus}-{self.to_bus}: tap must be > 0")

    @property
    def closed(self) -> bool:
        """A branch is in service only if both terminal breakers are closed."""
        return (
            self.breaker_from is BreakerState.CLOSED
            and self.breaker_to is BreakerState.CLOSED
        )

    @property
    def pair(self) -> tuple[int, int]:
        return (self.from_bus, self.to_bus)


@dataclass(frozen=True)
class NetworkModel:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    base_mva: float = 100.0

    def __post_init__(self) -> None:
        ids = [b.id for b in self.buses]
        if ids != list(range(1, len(ids) + 1)):
            raise ValueError("bus ids must be contiguous and 1-based")
        slacks = [b.id for b in self.buses if b.kind is BusKind.SLACK]
        if len(slacks) != 1:
            raise ValueError(f"expected exactly one slack bus, got {slacks}")
        known = set(ids)
        for br in self.branches:
            if br.from_bus not in known or br.to_bus not in known:
                raise ValueError(f"branch {br.pair} references unknown bus")

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def slack_index(self) -> int:
        """0-based index of the slack bus."""
        for i, b in enumerate(self.buses):
            if b.kind is BusKind.SLACK:
                return i
        raise AssertionError("validated model lost its slack")

    def bus(self, bus_id: int) -> Bus:
        return self.buses[bus_id - 1]

    def branch_index(self, from_bus: int, to_bus: int) -> int:
        """Index of the branch between two buses, either orientation."""
        for i, br in enumerate(self.branches):
            if br.pair in ((from_bus, to_bus), (to_bus, from_bus)):
                return i
        raise KeyError(f"no branch between buses {from_bus} and {to_bus}")

    def with_branch(self, index: int, branch: Branch) -> "NetworkModel":
        items = list(self.branches)
        items[index] = branch
        return replace(self, branches=tuple(items))

    def with_bus(self, bus_id: int, bus: Bus) -> "NetworkModel":
        items = list(self.buses)
        items[bus_id - 1] = bus
        return replace(self, buses=tuple(items))


@dataclass(frozen=True)
class TopologyMatrix:
    """In-service record per branch; ``t`` renders the symmetric bus-pair
    0/1 matrix (1 iff the corresponding branch is in service)."""

    n_bus: int
    pairs: tuple[tuple[int, int], ...]
    in_service: tuple[bool, ...]

    def __post_init__(self) -> None:
        if len(self.pairs) != len(self.in_service):
            raise ValueError("pairs and in_service length mismatch")

    @property
    def t(self) -> np.ndarray:
        m = np.zeros((self.n_bus, self.n_bus), dtype=np.uint8)
        for (f, to), live in zip(self.pairs, self.in_service):
            if live:
                m[f - 1, to - 1] = 1
                m[to - 1, f - 1] = 1
        return m

    def status(self, from_bus: int, to_bus: int) -> bool:
        for pair, live in zip(self.pairs, self.in_service):
            if pair in ((from_bus, to_bus), (to_bus, from_bus)):
                return live
        raise KeyError(f"no branch between buses {from_bus} and {to_bus}")


def build_topology(model: NetworkModel) -> TopologyMatrix:
    """Topology implied by the model's breaker pairs."""
    return TopologyMatrix(
        n_bus=model.n_bus,
        pairs=tuple(br.pair for br in model.branches),
        in_service=tuple(br.closed for br in model.branches),
    )


def _normalize_flips(
    topology: TopologyMatrix, flips: Iterable[int | tuple[int, int]]
) -> list[int]:
    out = []
    for f in flips:
        if isinstance(f, tuple):
            hits = [
                i
                for i, p in enumerate(topology.pairs)
                if p in (f, (f[1], f[0]))
            ]
            if not hits:
                raise KeyError(f"no branch between buses {f[0]} and {f[1]}")
            out.extend(hits)
        else:
            if not 0 <= f < len(topology.pairs):
                raise KeyError(f"branch index {f} out of range")
            out.append(f)
    return out


def apply_topology_corruption(
    topology: TopologyMatrix, flips: Iterable[int | tuple[int, int]]
) -> TopologyMatrix:
    """XOR the in-service status of the listed branches (indices or bus
    pairs). Applying the same flip set twice restores the original."""
    status = list(topology.in_service)
    for i in _normalize_flips(topology, flips):
        status[i] = not status[i]
    return replace(topology, in_service=tuple(status))


def branch_admittances(branch: Branch) -> tuple[complex, complex, complex, complex]:
    """Two-port (yff, yft, ytf, ytt) including tap and charging."""
    ys = 1.0 / complex(branch.r, branch.x)
    bc = 0.5j * branch.b_shunt
    t = branch.tap
    yff = (ys + bc) / (t * t)
    yft = -ys / t
    ytf = -ys / t
    ytt = ys + bc
    return yff, yft, ytf, ytt


def admittance(model: NetworkModel, topology: TopologyMatrix | None = None) -> np.ndarray:
    """Complex bus-admittance matrix. Branches out of service in
    ``topology`` contribute nothing. Warns if any bus ends up isolated."""
    if topology is None:
        topology = build_topology(model)
    n = model.n_bus
    y = np.zeros((n, n), dtype=complex)
    for br, live in zip(model.branches, topology.in_service):
        if not live:
            continue
        i, j = br.from_bus - 1, br.to_bus - 1
        yff, yft, ytf, ytt = branch_admittances(br)
        y[i, i] += yff
        y[i, j] += yft
        y[j, i] += ytf
        y[j, j] += ytt
    for k, bus in enumerate(model.buses):
        y[k, k] += 1j * bus.b_shunt
    degree = np.count_nonzero(topology.t, axis=1)
    isolated = [k + 1 for k in range(n) if degree[k] == 0]
    if isolated and n > 1:
        warnings.warn(
            f"topology isolates buses {isolated}; admittance rows are shunt-only",
            IsolatedBusWarning,
            stacklevel=2,
        )
    return y


# Canonical IEEE 14-bus data (per-unit on 100 MVA): bus loads/limits and
# branch impedances from the standard published case. Generators sit at
# buses 1 (slack), 2, 3, 6 and 8; bus 9 carries a fixed shunt capacitor.
_IEEE14_BUSES = [
    # (id, kind, v_set, p_load, q_load, p_gen, q_min, q_max, b_shunt)
    (1, BusKind.SLACK, 1.060, 0.0, 0.0, 0.0, -math.inf, math.inf, 0.0),
    (2, BusKind.GENERATOR, 1.045, 21.7, 12.7, 40.0, -40.0, 50.0, 0.0),
    (3, BusKind.GENERATOR, 1.010, 94.2, 19.0, 0.0, 0.0, 40.0, 0.0),
    (4, BusKind.LOAD, 1.0, 47.8, -3.9, 0.0, 0.0, 0.0, 0.0),
    (5, BusKind.LOAD, 1.0, 7.6, 1.6, 0.0, 0.0, 0.0, 0.0),
    (6, BusKind.GENERATOR, 1.070, 11.2, 7.5, 0.0, -6.0, 24.0, 0.0),
    (7, BusKind.LOAD, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0),
    (8, BusKind.GENERATOR, 1.090, 0.0, 0.0, 0.0, -6.0, 24.0, 0.0),
    (9, BusKind.LOAD, 1.0, 29.5, 16.6, 0.0, 0.0, 0.0, 0.19),
    (10, BusKind.LOAD, 1.0, 9.0, 5.8, 0.0, 0.0, 0.0, 0.0),
    (11, BusKind.LOAD, 1.0, 3.5, 1.8, 0.0, 0.0, 0.0, 0.0),
    (12, BusKind.LOAD, 1.0, 6.1, 1.6, 0.0, 0.0, 0.0, 0.0),
    (13, BusKind.LOAD, 1.0, 13.5, 5.8, 0.0, 0.0, 0.0, 0.0),
    (14, BusKind.LOAD, 1.0, 14.9, 5.0, 0.0, 0.0, 0.0, 0.0),
]

_IEEE14_BRANCHES = [
    # (from, to, r, x, b, tap)
    (1, 2, 0.01938, 0.05917, 0.0528, 1.0),
    (1, 5, 0.05403, 0.22304, 0.0492, 1.0),
    (2, 3, 0.04699, 0.19797, 0.0438, 1.0),
    (2, 4, 0.05811, 0.17632, 0.0340, 1.0),
    (2, 5, 0.05695, 0.17388, 0.0346, 1.0),
    (3, 4, 0.06701, 0.17103, 0.0128, 1.0),
    (4, 5, 0.01335, 0.04211, 0.0, 1.0),
    (4, 7, 0.0, 0.20912, 0.0, 0.978),
    (4, 9, 0.0, 0.55618, 0.0, 0.969),
    (5, 6, 0.0, 0.25202, 0.0, 0.932),
    (6, 11, 0.09498, 0.19890, 0.0, 1.0),
    (6, 12, 0.12291, 0.25581, 0.0, 1.0),
    (6, 13, 0.06615, 0.13027, 0.0, 1.0),
    (7, 8, 0.0, 0.17615, 0.0, 1.0),
    (7, 9, 0.0, 0.11001, 0.0, 1.0),
    (9, 10, 0.03181, 0.08450, 0.0, 1.0),
    (9, 14, 0.12711, 0.27038, 0.0, 1.0),
    (10, 11, 0.08205, 0.19207, 0.0, 1.0),
    (12, 13, 0.22092, 0.19988, 0.0, 1.0),
    (13, 14, 0.17093, 0.34802, 0.0, 1.0),
]


def build_ieee14() -> NetworkModel:
    """The standard IEEE 14-bus case with every breaker closed."""
    buses = tuple(
        Bus(
            id=i,
            kind=kind,
            v_setpoint=v,
            p_load=pl,
            q_load=ql,
            p_gen=pg,
            q_min=qmin,
            q_max=qmax,
            b_shunt=bs,
        )
        for i, kind, v, pl, ql, pg, qmin, qmax, bs in _IEEE14_BUSES
    )
    branches = tuple(
        Branch(from_bus=f, to_bus=t, r=r, x=x, b_shunt=b, tap=tap)
        for f, t, r, x, b, tap in _IEEE14_BRANCHES
    )
    return NetworkModel(buses=buses, branches=branches)


def model_to_json(model: NetworkModel) -> str:
    """Serialize a model to the documented JSON case schema."""
    doc = {
        "base_mva": model.base_mva,
        "buses": [
            {
                "id": b.id,
                "kind": b.kind.value,
                "v_setpoint": b.v_setpoint,
                "p_load": b.p_load,
                "q_load": b.q_load,
                "p_gen": b.p_gen,
                "q_min": None if b.q_min == -math.inf else b.q_min,
                "q_max": None if b.q_max == math.inf else b.q_max,
                "b_shunt": b.b_shunt,
            }
            for b in model.buses
        ],
        "branches": [
            {
                "from": br.from_bus,
                "to": br.to_bus,
                "r": br.r,
                "x": br.x,
                "b_shunt": br.b_shunt,
                "tap": br.tap,
                "breaker_from": br.breaker_from.value,
                "breaker_to": br.breaker_to.value,
            }
            for br in model.branches
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def model_from_json(text: str) -> NetworkModel:
    doc = json.loads(text)
    buses = tuple(
        Bus(
            id=int(b["id"]),
            kind=BusKind(b["kind"]),
            v_setpoint=float(b.get("v_setpoint", 1.0)),
            p_load=float(b.get("p_load", 0.0)),
            q_load=float(b.get("q_load", 0.0)),
            p_gen=float(b.get("p_gen", 0.0)),
            q_min=-math.inf if b.get("q_min") is None else float(b["q_min"]),
            q_max=math.inf if b.get("q_max") is None else float(b["q_max"]),
            b_shunt=float(b.get("b_shunt", 0.0)),
        )
        for b in doc["buses"]
    )
    branches = tuple(
        Branch(
            from_bus=int(br["from"]),
            to_bus=int(br["to"]),
            r=float(br["r"]),
            x=float(br["x"]),
            b_shunt=float(br.get("b_shunt", 0.0)),
            tap=float(br.get("tap", 1.0)),
            breaker_from=BreakerState(br.get("breaker_from", "Closed")),
            breaker_to=BreakerState(br.get("breaker_to", "Closed")),
        )
        for br in doc["branches"]
    )
    return NetworkModel(buses=buses, branches=branches, base_mva=float(doc.get("base_mva", 100.0)))
