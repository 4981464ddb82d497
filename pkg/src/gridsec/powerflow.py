"""AC power flow: Newton-Raphson solution, per-line flows and islanding.

All angles are radians internally; exported records use degrees. Injection
sign convention: positive = into the network (generation minus load).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .network import (
    BusKind,
    NetworkModel,
    TopologyMatrix,
    admittance,
    branch_admittances,
    build_topology,
)

__all__ = [
    "Island",
    "IslandReport",
    "BranchFlow",
    "PowerFlowSolution",
    "PowerFlowError",
    "solve",
    "line_flows",
    "decompose_islands",
    "solution_to_csv",
]


class PowerFlowError(RuntimeError):
    pass


@dataclass(frozen=True)
class Island:
    buses: frozenset[int]
    has_slack: bool


@dataclass
class IslandReport:
    island: Island
    solved: bool
    slack_bus: int | None
    balance_mw: float  # generation - load - losses within the island
    note: str = ""


@dataclass
class BranchFlow:
    from_bus: int
    to_bus: int
    p_from: float  # MW entering the branch at the from end
    q_from: float
    p_to: float
    q_to: float
    in_service: bool

    @property
    def loss_mw(self) -> float:
        return self.p_from + self.p_to


@dataclass
class PowerFlowSolution:
    v: np.ndarray  # p.u. magnitude per bus
    theta: np.ndarray  # radians per bus, slack at 0
    p_inj: np.ndarray  # MW net injection per bus
    q_inj: np.ndarray  # Mvar net injection per bus
    flows: list[BranchFlow]
    losses_mw: float
    converged: bool
    iterations: int
    islands: list[IslandReport] = field(default_factory=list)

    @property
    def theta_deg(self) -> np.ndarray:
        return np.degrees(self.theta)


def _adjacency(model: NetworkModel, topology: TopologyMatrix) -> dict[int, list[int]]:
    adj: dict[int, list[int]] = {b.id: [] for b in model.buses}
    for br, live in zip(model.branches, topology.in_service):
        if live:
            adj[br.from_bus].append(br.to_bus)
            adj[br.to_bus].append(br.from_bus)
    return adj


def decompose_islands(
    model: NetworkModel, topology: TopologyMatrix | None = None
) -> list[Island]:
    """Connected components over in-service branches, ordered by their
    smallest bus id."""
    if topology is None:
        topology = build_topology(model)
    adj = _adjacency(model, topology)
    seen: set[int] = set()
    islands: list[Island] = []
    for bus in sorted(adj):
        if bus in seen:
            continue
        comp = {bus}
        stack = [bus]
        while stack:
            u = stack.pop()
            for nb in adj[u]:
                if nb not in comp:
                    comp.add(nb)
                    stack.append(nb)
        seen |= comp
        has_slack = any(model.bus(b).kind is BusKind.SLACK for b in comp)
        islands.append(Island(buses=frozenset(comp), has_slack=has_slack))
    return islands


def bus_power(ybus: np.ndarray, v: np.ndarray, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Net complex injection split into (P, Q) in p.u. for the full network."""
    vc = v * np.exp(1j * theta)
    s = vc * np.conj(ybus @ vc)
    return s.real, s.imag


def _nr_island(
    model: NetworkModel,
    ybus: np.ndarray,
    idx: list[int],
    slack: int,
    pv: list[int],
    p_sched: np.ndarray,
    q_sched: np.ndarray,
    v: np.ndarray,
    theta: np.ndarray,
    tol: float,
    max_iter: int,
) -> tuple[bool, int]:
    """Newton-Raphson on one island, updating v/theta in place.

    idx: 0-based bus indices of the island; slack/pv are 0-based indices.
    Scheduled powers are p.u. net injections.
    """
    g = ybus.real
    b = ybus.imag
    pq = [i for i in idx if i != slack and i not in pv]
    ang_vars = [i for i in idx if i != slack]
    n_ang = len(ang_vars)
    pos_ang = {bus: k for k, bus in enumerate(ang_vars)}
    pos_v = {bus: n_ang + k for k, bus in enumerate(pq)}

    for it in range(1, max_iter + 1):
        p, q = bus_power(ybus, v, theta)
        dp = np.array([p_sched[i] - p[i] for i in ang_vars])
        dq = np.array([q_sched[i] - q[i] for i in pq])
        mismatch = np.concatenate([dp, dq])
        if mismatch.size == 0 or np.max(np.abs(mismatch)) < tol:
            return True, it - 1

        dth = theta[:, None] - theta[None, :]
        cos_t = np.cos(dth)
        sin_t = np.sin(dth)
        # dS/dtheta and dS/dV building blocks (standard polar Jacobian)
        vv = np.outer(v, v)
        h_pt = vv * (g * sin_t - b * cos_t)  # dP_i/dtheta_j, off-diagonal
        h_pv = v[:, None] * (g * cos_t + b * sin_t)  # dP_i/dV_j off-diag
        h_qt = -vv * (g * cos_t + b * sin_t)
        h_qv = v[:, None] * (g * sin_t - b * cos_t)

        size = n_ang + len(pq)
        jac = np.zeros((size, size))
        for r, i in enumerate(ang_vars):
            for cbus in ang_vars:
                c = pos_ang[cbus]
                if cbus == i:
                    jac[r, c] = -q[i] - b[i, i] * v[i] ** 2
                else:
                    jac[r, c] = h_pt[i, cbus]
            for cbus in pq:
                c = pos_v[cbus]
                if cbus == i:
                    jac[r, c] = p[i] / v[i] + g[i, i] * v[i]
                else:
                    jac[r, c] = h_pv[i, cbus]
        for k, i in enumerate(pq):
            r = n_ang + k
            for cbus in ang_vars:
                c = pos_ang[cbus]
                if cbus == i:
                    jac[r, c] = p[i] - g[i, i] * v[i] ** 2
                else:
                    jac[r, c] = h_qt[i, cbus]
            for cbus in pq:
                c = pos_v[cbus]
                if cbus == i:
                    jac[r, c] = q[i] / v[i] - b[i, i] * v[i]
                else:
                    jac[r, c] = h_qv[i, cbus]

        try:
            dx = np.linalg.solve(jac, mismatch)
        except np.linalg.LinAlgError as exc:
            raise PowerFlowError(f"singular power-flow Jacobian: {exc}") from exc
        # Step cap keeps stressed cases (clamped Q limits, weak ties) from
        # overshooting; full Newton steps are far below the cap otherwise.
        biggest = np.max(np.abs(dx))
        if biggest > 0.25:
            dx = dx * (0.25 / biggest)
        for bus, k in pos_ang.items():
            theta[bus] += dx[k]
        for bus, k in pos_v.items():
            v[bus] += dx[k]
    return False, max_iter


def solve(
    model: NetworkModel,
    topology: TopologyMatrix | None = None,
    tol: float = 1e-8,
    max_iter: int = 30,
    enforce_q_limits: bool = True,
    flat_start: bool = True,
) -> PowerFlowSolution:
    """Newton-Raphson AC power flow per island.

    Islands without a slack bus are solved with their largest generator
    promoted to island slack; islands with neither are flagged unsolved.
    """
    if topology is None:
        topology = build_topology(model)
    ybus = _suppress_isolated_warning(model, topology)
    n = model.n_bus
    base = model.base_mva

    v = np.array([b.v_setpoint for b in model.buses], dtype=float)
    theta = np.zeros(n)
    if flat_start:
        for i, b in enumerate(model.buses):
            if b.kind is BusKind.LOAD:
                v[i] = 1.0

    p_sched = np.array([(b.p_gen - b.p_load) / base for b in model.buses])
    q_sched = np.array([-b.q_load / base for b in model.buses])

    islands = decompose_islands(model, topology)
    reports: list[IslandReport] = []
    converged_all = True
    total_iter = 0

    for isl in islands:
        members = sorted(isl.buses)
        idx = [b - 1 for b in members]
        slack_bus: int | None = None
        if isl.has_slack:
            slack_bus = next(b for b in members if model.bus(b).kind is BusKind.SLACK)
        else:
            gens = [b for b in members if model.bus(b).kind is BusKind.GENERATOR]
            if gens:
                slack_bus = max(gens, key=lambda b: (model.bus(b).p_gen, -b))
        if slack_bus is None:
            converged_all = False
            for i in idx:
                v[i] = math.nan
                theta[i] = math.nan
            reports.append(
                IslandReport(isl, solved=False, slack_bus=None, balance_mw=math.nan,
                             note="island has no slack and no generator")
            )
            continue

        slack_i = slack_bus - 1
        theta[slack_i] = 0.0
        pv = [
            b - 1
            for b in members
            if model.bus(b).kind is BusKind.GENERATOR and b != slack_bus
        ]
        pq_limited: dict[int, float] = {}
        ok = False
        it = 0
        for _round in range(6):
            eff_q = q_sched.copy()
            eff_pv = [i for i in pv if i not in pq_limited]
            for i, qg in pq_limited.items():
                eff_q[i] = (qg - model.buses[i].q_load) / base
            ok, it = _nr_island(
                model, ybus, idx, slack_i, eff_pv, p_sched, eff_q, v, theta, tol, max_iter
            )
            total_iter += it
            if not ok or not enforce_q_limits:
                break
            p_all, q_all = bus_power(ybus, v, theta)
            moved = False
            for i in eff_pv:
                bus = model.buses[i]
                qg = q_all[i] * base + bus.q_load
                if qg > bus.q_max + 1e-9:
                    pq_limited[i] = bus.q_max
                    moved = True
                elif qg < bus.q_min - 1e-9:
                    pq_limited[i] = bus.q_min
                    moved = True
            if not moved:
                break
        if not ok:
            converged_all = False
        reports.append(
            IslandReport(isl, solved=ok, slack_bus=slack_bus, balance_mw=math.nan,
                         note="" if ok else "did not converge")
        )

    p_pu, q_pu = bus_power(ybus, v, theta)
    solved_mask = ~np.isnan(v)
    p_inj = np.where(solved_mask, p_pu * base, math.nan)
    q_inj = np.where(solved_mask, q_pu * base, math.nan)
    flows = line_flows_values(model, topology, v, theta)
    losses = sum(f.loss_mw for f in flows if f.in_service and not math.isnan(f.p_from))
    # Conservation audit per island: injection sum (one path) minus branch
    # losses (independent path) should vanish in every solved island.
    for rep in reports:
        if not rep.solved:
            continue
        inj = sum(p_inj[b - 1] for b in rep.island.buses)
        loss = sum(
            f.loss_mw
            for f in flows
            if f.in_service and f.from_bus in rep.island.buses
        )
        rep.balance_mw = inj - loss
    return PowerFlowSolution(
        v=v,
        theta=theta,
        p_inj=p_inj,
        q_inj=q_inj,
        flows=flows,
        losses_mw=losses,
        converged=converged_all,
        iterations=total_iter,
        islands=reports,
    )


def _suppress_isolated_warning(model: NetworkModel, topology: TopologyMatrix) -> np.ndarray:
    import warnings as _w

    with _w.catch_warnings():
        _w.simplefilter("ignore")
        return admittance(model, topology)


def line_flows_values(
    model: NetworkModel,
    topology: TopologyMatrix,
    v: np.ndarray,
    theta: np.ndarray,
) -> list[BranchFlow]:
    """Per-branch-end MW/Mvar flows from a bus voltage state.

    Any branch with either breaker open carries exactly zero flow. For
    plain lines (tap 1, no charging) this reduces to the series R/X
    formulation of the active/reactive flow equations.
    """
    base = model.base_mva
    out: list[BranchFlow] = []
    for br, live in zip(model.branches, topology.in_service):
        if not live:
            out.append(BranchFlow(br.from_bus, br.to_bus, 0.0, 0.0, 0.0, 0.0, False))
            continue
        i, j = br.from_bus - 1, br.to_bus - 1
        if math.isnan(v[i]) or math.isnan(v[j]):
            out.append(
                BranchFlow(br.from_bus, br.to_bus, math.nan, math.nan, math.nan, math.nan, True)
            )
            continue
        yff, yft, ytf, ytt = branch_admittances(br)
        vf = v[i] * np.exp(1j * theta[i])
        vt = v[j] * np.exp(1j * theta[j])
        sf = vf * np.conj(yff * vf + yft * vt)
        st = vt * np.conj(ytf * vf + ytt * vt)
        out.append(
            BranchFlow(
                br.from_bus,
                br.to_bus,
                sf.real * base,
                sf.imag * base,
                st.real * base,
                st.imag * base,
                True,
            )
        )
    return out


def line_flows(
    solution: PowerFlowSolution,
    model: NetworkModel,
    topology: TopologyMatrix | None = None,
) -> list[BranchFlow]:
    if topology is None:
        topology = build_topology(model)
    return line_flows_values(model, topology, solution.v, solution.theta)


def island_balances(
    model: NetworkModel,
    topology: TopologyMatrix,
    solution: PowerFlowSolution,
) -> list[tuple[Island, float]]:
    """Per-island (generation - load - losses) in MW."""
    islands = decompose_islands(model, topology)
    loss_by_branch = {
        (f.from_bus, f.to_bus): f.loss_mw for f in solution.flows if f.in_service
    }
    out = []
    for isl in islands:
        inj = sum(
            solution.p_inj[b - 1]
            for b in isl.buses
            if not math.isnan(solution.p_inj[b - 1])
        )
        loss = sum(
            l
            for (fb, tb), l in loss_by_branch.items()
            if fb in isl.buses and not math.isnan(l)
        )
        out.append((isl, inj - loss))
    return out


def solution_to_csv(
    solution: PowerFlowSolution, model: NetworkModel, topology: TopologyMatrix | None = None
) -> str:
    """Render the bus and branch tables in the record CSV layout."""
    from .records import GridRecord

    return GridRecord.from_solution(model, solution, topology=topology).to_csv()
