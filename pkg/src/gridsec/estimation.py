"""WLS state estimation (iterative AC and linear DC), residual analysis,
chi-square bad-data detection and largest-normalized-residual removal.

AC state ordering: [theta at non-slack buses, V at all buses], n = 2k - 1.
Measurement values are p.u.; power channels are net injections.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .network import NetworkModel, TopologyMatrix, admittance, build_topology
from .powerflow import bus_power
from .stats import PAPER_CHI2_THRESHOLD, chi_square_threshold

__all__ = [
    "MeasKind",
    "Measurement",
    "MeasurementSet",
    "StateVector",
    "EstimationResult",
    "BddVerdict",
    "EstimationError",
    "ObservabilityError",
    "standard_layout",
    "measurements_from_state",
    "full_telemetry_from_state",
    "wls_estimate_ac",
    "build_dc_jacobian",
    "wls_estimate_dc",
    "chi_square_statistic",
    "chi_square_threshold",
    "bdd_classify",
    "iterative_bad_data_removal",
    "measurements_to_csv",
    "measurements_from_csv",
    "PAPER_CHI2_THRESHOLD",
]


class EstimationError(RuntimeError):
    pass


class ObservabilityError(EstimationError):
    pass


class MeasKind(str, Enum):
    VM = "Vm"
    PINJ = "Pinj"
    QINJ = "Qinj"
    PFLOW = "Pflow"
    QFLOW = "Qflow"


@dataclass(frozen=True)
class Measurement:
    kind: MeasKind
    value: float
    sigma: float
    bus: int = 0  # Vm / Pinj / Qinj location
    branch: tuple[int, int] | None = None  # directed (from, to) for flows

    def __post_init__(self) -> None:
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.kind in (MeasKind.PFLOW, MeasKind.QFLOW) and self.branch is None:
            raise ValueError("flow measurement needs a branch")


@dataclass
class MeasurementSet:
    entries: list[Measurement]
    timestamp: str | None = None

    def __post_init__(self) -> None:
        if not self.entries:
            raise ValueError("empty measurement set")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def z(self) -> np.ndarray:
        return np.array([m.value for m in self.entries])

    @property
    def sigmas(self) -> np.ndarray:
        return np.array([m.sigma for m in self.entries])

    def replaced(self, index: int, value: float) -> "MeasurementSet":
        entries = list(self.entries)
        entries[index] = replace(entries[index], value=value)
        return MeasurementSet(entries, self.timestamp)

    def without(self, indices: Iterable[int]) -> "MeasurementSet":
        drop = set(indices)
        return MeasurementSet(
            [m for i, m in enumerate(self.entries) if i not in drop], self.timestamp
        )

    def index_of(self, kind: MeasKind, bus: int) -> int:
        for i, m in enumerate(self.entries):
            if m.kind is kind and m.bus == bus:
                return i
        raise KeyError(f"no {kind.value} measurement at bus {bus}")


@dataclass
class StateVector:
    v: np.ndarray  # p.u. per bus
    theta: np.ndarray  # radians per bus, slack entry 0

    def as_array(self, slack_index: int) -> np.ndarray:
        ang = np.delete(self.theta, slack_index)
        return np.concatenate([ang, self.v])


@dataclass
class EstimationResult:
    x_hat: StateVector
    residuals: np.ndarray
    j_value: float
    iterations: int
    converged: bool
    jacobian: np.ndarray  # at the solution
    sigmas: np.ndarray
    measurements: MeasurementSet


@dataclass
class BddVerdict:
    flagged: bool
    threshold: float
    j_value: float
    suspect: int | None = None  # measurement index of the largest normalized residual


# Default channel noise (p.u. std-dev); diagonal R throughout.
DEFAULT_SIGMA_VM = 0.01
DEFAULT_SIGMA_POWER = 0.02


def standard_layout(
    model: NetworkModel,
    sigma_vm: float = DEFAULT_SIGMA_VM,
    sigma_power: float = DEFAULT_SIGMA_POWER,
) -> list[Measurement]:
    """Vm at every bus plus P and Q injection at every bus (42 channels on
    the 14-bus case), in that fixed order."""
    out = [
        Measurement(MeasKind.VM, 0.0, sigma_vm, bus=b.id) for b in model.buses
    ]
    out += [Measurement(MeasKind.PINJ, 0.0, sigma_power, bus=b.id) for b in model.buses]
    out += [Measurement(MeasKind.QINJ, 0.0, sigma_power, bus=b.id) for b in model.buses]
    return out


def measurements_from_state(
    model: NetworkModel,
    v: np.ndarray,
    theta: np.ndarray,
    topology: TopologyMatrix | None = None,
    sigma_vm: float = DEFAULT_SIGMA_VM,
    sigma_power: float = DEFAULT_SIGMA_POWER,
    noise_rng: np.random.Generator | None = None,
) -> MeasurementSet:
    """Noiseless (or Gaussian-noised) standard-layout measurements
    evaluated at a given bus voltage state."""
    ybus = _quiet_admittance(model, topology)
    p, q = bus_power(ybus, v, theta)
    entries = standard_layout(model, sigma_vm, sigma_power)
    values = np.concatenate([v, p, q])
    if noise_rng is not None:
        values = values + noise_rng.normal(0.0, [m.sigma for m in entries])
    return MeasurementSet(
        [replace(m, value=float(val)) for m, val in zip(entries, values)]
    )


def full_telemetry_from_state(
    model: NetworkModel,
    v: np.ndarray,
    theta: np.ndarray,
    topology: TopologyMatrix | None = None,
    sigma_vm: float = DEFAULT_SIGMA_VM,
    sigma_power: float = DEFAULT_SIGMA_POWER,
    noise_rng: np.random.Generator | None = None,
) -> MeasurementSet:
    """Standard layout plus P/Q flow channels at both ends of every
    in-service branch: the redundancy level at which single gross errors
    are reliably identifiable."""
    from .powerflow import line_flows_values

    if topology is None:
        topology = build_topology(model)
    base = measurements_from_state(model, v, theta, topology, sigma_vm, sigma_power)
    entries = list(base.entries)
    for flow, live in zip(line_flows_values(model, topology, v, theta), topology.in_service):
        if not live:
            continue
        scale = 1.0 / model.base_mva
        for pair, p_val, q_val in (
            ((flow.from_bus, flow.to_bus), flow.p_from, flow.q_from),
            ((flow.to_bus, flow.from_bus), flow.p_to, flow.q_to),
        ):
            entries.append(
                Measurement(MeasKind.PFLOW, p_val * scale, sigma_power, branch=pair)
            )
            entries.append(
                Measurement(MeasKind.QFLOW, q_val * scale, sigma_power, branch=pair)
            )
    values = np.array([e.value for e in entries])
    if noise_rng is not None:
        values = values + noise_rng.normal(0.0, [e.sigma for e in entries])
    return MeasurementSet(
        [replace(e, value=float(val)) for e, val in zip(entries, values)]
    )


def _quiet_admittance(model: NetworkModel, topology: TopologyMatrix | None) -> np.ndarray:
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return admittance(model, topology or build_topology(model))


def _measurement_functions(
    model: NetworkModel,
    ybus: np.ndarray,
    entries: Sequence[Measurement],
    v: np.ndarray,
    theta: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """h(x) and its Jacobian for the AC model at state (v, theta).

    Columns: [theta at non-slack buses, V at all buses].
    """
    n = model.n_bus
    slack = model.slack_index
    g = ybus.real
    b = ybus.imag
    dth = theta[:, None] - theta[None, :]
    cos_t = np.cos(dth)
    sin_t = np.sin(dth)
    vv = np.outer(v, v)
    p, q = bus_power(ybus, v, theta)

    # Full injection Jacobian blocks over all buses.
    dp_dth = vv * (g * sin_t - b * cos_t)
    np.fill_diagonal(dp_dth, -q - b.diagonal() * v**2)
    dp_dv = v[:, None] * (g * cos_t + b * sin_t)
    np.fill_diagonal(dp_dv, p / v + g.diagonal() * v)
    dq_dth = -vv * (g * cos_t + b * sin_t)
    np.fill_diagonal(dq_dth, p - g.diagonal() * v**2)
    dq_dv = v[:, None] * (g * sin_t - b * cos_t)
    np.fill_diagonal(dq_dv, q / v - b.diagonal() * v)

    ang_cols = [i for i in range(n) if i != slack]
    m = len(entries)
    h = np.zeros(m)
    jac = np.zeros((m, 2 * n - 1))
    branch_cache: dict[tuple[int, int], tuple] = {}

    for row, meas in enumerate(entries):
        if meas.kind is MeasKind.VM:
            i = meas.bus - 1
            h[row] = v[i]
            jac[row, len(ang_cols) + i] = 1.0
        elif meas.kind is MeasKind.PINJ:
            i = meas.bus - 1
            h[row] = p[i]
            jac[row, : len(ang_cols)] = dp_dth[i, ang_cols]
            jac[row, len(ang_cols):] = dp_dv[i, :]
        elif meas.kind is MeasKind.QINJ:
            i = meas.bus - 1
            h[row] = q[i]
            jac[row, : len(ang_cols)] = dq_dth[i, ang_cols]
            jac[row, len(ang_cols):] = dq_dv[i, :]
        else:
            f_bus, t_bus = meas.branch  # type: ignore[misc]
            key = (f_bus, t_bus)
            if key not in branch_cache:
                branch_cache[key] = _flow_terms(model, f_bus, t_bus, v, theta)
            pf, qf, dparts = branch_cache[key]
            value = pf if meas.kind is MeasKind.PFLOW else qf
            h[row] = value
            dth_f, dth_t, dv_f, dv_t = dparts[meas.kind]
            i, j = f_bus - 1, t_bus - 1
            if i != slack:
                jac[row, ang_cols.index(i)] = dth_f
            if j != slack:
                jac[row, ang_cols.index(j)] = dth_t
            jac[row, len(ang_cols) + i] = dv_f
            jac[row, len(ang_cols) + j] = dv_t
    return h, jac


def _flow_terms(
    model: NetworkModel, f_bus: int, t_bus: int, v: np.ndarray, theta: np.ndarray
):
    """Branch-end flow at the measured (from) side plus its partials."""
    from .network import branch_admittances

    idx = model.branch_index(f_bus, t_bus)
    br = model.branches[idx]
    yff, yft, ytf, ytt = branch_admittances(br)
    if (br.from_bus, br.to_bus) != (f_bus, t_bus):
        yff, yft = ytt, ytf
    i, j = f_bus - 1, t_bus - 1
    gff, bff = yff.real, yff.imag
    gft, bft = yft.real, yft.imag
    dthij = theta[i] - theta[j]
    c, s = math.cos(dthij), math.sin(dthij)
    vi, vj = v[i], v[j]
    pf = vi * vi * gff + vi * vj * (gft * c + bft * s)
    qf = -vi * vi * bff + vi * vj * (gft * s - bft * c)
    dp_dth_i = vi * vj * (-gft * s + bft * c)
    dp_dth_j = -dp_dth_i
    dp_dv_i = 2 * vi * gff + vj * (gft * c + bft * s)
    dp_dv_j = vi * (gft * c + bft * s)
    dq_dth_i = vi * vj * (gft * c + bft * s)
    dq_dth_j = -dq_dth_i
    dq_dv_i = -2 * vi * bff + vj * (gft * s - bft * c)
    dq_dv_j = vi * (gft * s - bft * c)
    dparts = {
        MeasKind.PFLOW: (dp_dth_i, dp_dth_j, dp_dv_i, dp_dv_j),
        MeasKind.QFLOW: (dq_dth_i, dq_dth_j, dq_dv_i, dq_dv_j),
    }
    return pf, qf, dparts


def wls_estimate_ac(
    model: NetworkModel,
    measurements: MeasurementSet,
    delta: float = 1e-6,
    topology: TopologyMatrix | None = None,
    max_iter: int = 50,
    x0: StateVector | None = None,
) -> EstimationResult:
    """Gauss-Newton WLS over the AC measurement model.

    Raises ObservabilityError when the gain matrix is singular (or when
    m < n up front).
    """
    n = model.n_bus
    n_state = 2 * n - 1
    if len(measurements) < n_state:
        raise ObservabilityError(
            f"{len(measurements)} measurements cannot observe {n_state} states"
        )
    if delta <= 0:
        raise ValueError("delta must be positive")
    ybus = _quiet_admittance(model, topology)
    slack = model.slack_index

    if x0 is None:
        v = np.ones(n)
        theta = np.zeros(n)
    else:
        v = x0.v.astype(float).copy()
        theta = x0.theta.astype(float).copy()
    z = measurements.z
    sig = measurements.sigmas
    w = 1.0 / sig**2

    converged = False
    it = 0
    h_val = np.zeros(len(z))
    jac = np.zeros((len(z), n_state))
    for it in range(1, max_iter + 1):
        h_val, jac = _measurement_functions(model, ybus, measurements.entries, v, theta)
        gain = (jac * w[:, None]).T @ jac
        rhs = (jac * w[:, None]).T @ (z - h_val)
        try:
            dx = np.linalg.solve(gain, rhs)
        except np.linalg.LinAlgError as exc:
            raise ObservabilityError(f"singular gain matrix: {exc}") from exc
        theta_step = dx[: n - 1]
        v_step = dx[n - 1:]
        k = 0
        for i in range(n):
            if i == slack:
                continue
            theta[i] += theta_step[k]
            k += 1
        v += v_step
        if np.linalg.norm(dx) < delta:
            converged = True
            break
    if not converged:
        raise EstimationError(f"WLS did not converge in {max_iter} iterations")

    h_val, jac = _measurement_functions(model, ybus, measurements.entries, v, theta)
    residuals = z - h_val
    j_value = float(np.sum((residuals / sig) ** 2))
    return EstimationResult(
        x_hat=StateVector(v=v, theta=theta),
        residuals=residuals,
        j_value=j_value,
        iterations=it,
        converged=converged,
        jacobian=jac,
        sigmas=sig,
        measurements=measurements,
    )


def build_dc_jacobian(
    model: NetworkModel,
    topology: TopologyMatrix | None = None,
    include_flows: bool = True,
) -> tuple[np.ndarray, list[str]]:
    """Linear DC measurement matrix over non-slack angles.

    Rows: P injection at every bus, then (optionally) the from-end flow of
    every in-service branch. Returns (H, row labels).
    """
    if topology is None:
        topology = build_topology(model)
    n = model.n_bus
    slack = model.slack_index
    cols = [i for i in range(n) if i != slack]
    col_pos = {bus: k for k, bus in enumerate(cols)}

    b_mat = np.zeros((n, n))
    for br, live in zip(model.branches, topology.in_service):
        if not live:
            continue
        i, j = br.from_bus - 1, br.to_bus - 1
        b = 1.0 / (br.x * br.tap)
        b_mat[i, i] += b
        b_mat[j, j] += b
        b_mat[i, j] -= b
        b_mat[j, i] -= b

    rows = []
    labels = []
    for i in range(n):
        row = np.zeros(len(cols))
        for j in range(n):
            if j in col_pos:
                row[col_pos[j]] = b_mat[i, j]
        rows.append(row)
        labels.append(f"P{i + 1}")
    if include_flows:
        for br, live in zip(model.branches, topology.in_service):
            if not live:
                continue
            i, j = br.from_bus - 1, br.to_bus - 1
            row = np.zeros(len(cols))
            b = 1.0 / (br.x * br.tap)
            if i in col_pos:
                row[col_pos[i]] = b
            if j in col_pos:
                row[col_pos[j]] = -b
            rows.append(row)
            labels.append(f"F{br.from_bus}_{br.to_bus}")
    return np.asarray(rows), labels


@dataclass
class DcEstimate:
    x_hat: np.ndarray  # non-slack angles, radians
    residuals: np.ndarray
    j_value: float


def wls_estimate_dc(
    h_matrix: np.ndarray, z: np.ndarray, sigmas: np.ndarray | float = 1.0
) -> DcEstimate:
    """Closed-form linear WLS: x = (H' R^-1 H)^-1 H' R^-1 z."""
    z = np.asarray(z, dtype=float)
    if np.isscalar(sigmas):
        sig = np.full(z.shape, float(sigmas))
    else:
        sig = np.asarray(sigmas, dtype=float)
    w = 1.0 / sig**2
    gain = (h_matrix * w[:, None]).T @ h_matrix
    if np.linalg.matrix_rank(gain) < h_matrix.shape[1]:
        raise ObservabilityError("DC measurement matrix is rank deficient")
    x = np.linalg.solve(gain, (h_matrix * w[:, None]).T @ z)
    # One refinement step drives the normal-equation gradient to rounding
    # level even when the gain matrix is ill-conditioned.
    r = z - h_matrix @ x
    x = x + np.linalg.solve(gain, (h_matrix * w[:, None]).T @ r)
    r = z - h_matrix @ x
    j = float(np.sum((r / sig) ** 2))
    return DcEstimate(x_hat=x, residuals=r, j_value=j)


def chi_square_statistic(residuals: np.ndarray, sigmas: np.ndarray) -> float:
    """J = r' R^-1 r with diagonal R."""
    r = np.asarray(residuals, dtype=float)
    s = np.asarray(sigmas, dtype=float)
    return float(np.sum((r / s) ** 2))


def normalized_residuals(result: EstimationResult) -> np.ndarray:
    """Residuals scaled by the residual-covariance diagonal
    Omega = R - H (H' R^-1 H)^-1 H'."""
    h = result.jacobian
    sig = result.sigmas
    w = 1.0 / sig**2
    gain = (h * w[:, None]).T @ h
    try:
        cov = h @ np.linalg.solve(gain, h.T)
    except np.linalg.LinAlgError:
        cov = np.zeros((len(sig), len(sig)))
    omega = sig**2 - np.diag(cov)
    omega = np.clip(omega, 1e-12, None)
    return result.residuals / np.sqrt(omega)


def bdd_classify(result: EstimationResult, threshold: float) -> BddVerdict:
    """Flag when J exceeds the threshold (strictly); on a flag, point at
    the measurement with the largest normalized residual."""
    flagged = result.j_value > threshold
    suspect = None
    if flagged:
        suspect = int(np.argmax(np.abs(normalized_residuals(result))))
    return BddVerdict(
        flagged=flagged, threshold=threshold, j_value=result.j_value, suspect=suspect
    )


def measurements_to_csv(measurements: MeasurementSet) -> str:
    """CSV with columns (kind, location, value, sigma); flow locations are
    written as from-to."""
    import csv
    import io

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kind", "location", "value", "sigma"])
    for m in measurements.entries:
        loc = f"{m.branch[0]}-{m.branch[1]}" if m.branch else str(m.bus)
        w.writerow([m.kind.value, loc, "%.12g" % m.value, "%.12g" % m.sigma])
    return buf.getvalue()


def measurements_from_csv(text: str) -> MeasurementSet:
    import csv

    rows = list(csv.reader(text.splitlines()))
    if not rows or rows[0] != ["kind", "location", "value", "sigma"]:
        raise ValueError("expected header kind,location,value,sigma")
    entries = []
    for row in rows[1:]:
        if not row:
            continue
        kind = MeasKind(row[0])
        if "-" in row[1]:
            f, t = row[1].split("-")
            entries.append(
                Measurement(kind, float(row[2]), float(row[3]), branch=(int(f), int(t)))
            )
        else:
            entries.append(Measurement(kind, float(row[2]), float(row[3]), bus=int(row[1])))
    return MeasurementSet(entries)


def iterative_bad_data_removal(
    model: NetworkModel,
    measurements: MeasurementSet,
    threshold: float,
    delta: float = 1e-6,
    topology: TopologyMatrix | None = None,
    x0: StateVector | None = None,
) -> tuple[EstimationResult, list[int]]:
    """Estimate, drop the worst-normalized-residual channel while J exceeds
    the threshold, re-estimate. Returned indices refer to the original set.

    Raises ObservabilityError if removal would fall below observability.
    """
    live = list(range(len(measurements)))
    current = measurements
    removed: list[int] = []
    n_state = 2 * model.n_bus - 1
    while True:
        result = wls_estimate_ac(model, current, delta=delta, topology=topology, x0=x0)
        verdict = bdd_classify(result, threshold)
        if not verdict.flagged:
            return result, removed
        if len(current) - 1 < n_state:
            raise ObservabilityError(
                "cannot remove further measurements without losing observability"
            )
        worst = verdict.suspect
        assert worst is not None
        removed.append(live.pop(worst))
        current = current.without([worst])
